#!/usr/bin/env python3
"""Full-scale checks against Llama 3.1 8B and the Llama Scope residual SAEs.

Needs a CUDA GPU, torch, transformers, safetensors and huggingface_hub, plus
access to meta-llama/Llama-3.1-8B. Not run in CI.

    python scripts/gpu_reproduce.py --out gpu_results.json

Prints one PASS/FAIL line per check and exits non-zero if any fail.
"""

import argparse
import json
import re
import sys
from pathlib import Path

import torch
from huggingface_hub import hf_hub_download
from safetensors.torch import load_file
from transformers import AutoModelForCausalLM, AutoTokenizer

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "data" / "fixtures"

SPECIFICITY_MAX = [0.0, 3.16, 3.5, 7.59]
SPECIFICITY_MEAN = [0.0, 1.26, 2.08, 2.78]
CONFUSION_PEAK = ("18/17350", "18/17350", 4.18)
BAND = 0.10


def parse_suite(path):
    cats, current = [], None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = re.fullmatch(r"\[(.+)\]", line)
        if m:
            current = (m.group(1), [])
            cats.append(current)
        elif current is None:
            raise ValueError(f"{path}: item before any category")
        else:
            current[1].append(line)
    return cats


class Sae:
    def __init__(self, repo, layer, pattern, device):
        sub = pattern.format(layer=layer)
        weights = load_file(hf_hub_download(repo, f"{sub}/checkpoints/final.safetensors"), device=device)
        try:
            hyper = json.loads(Path(hf_hub_download(repo, f"{sub}/hyperparams.json")).read_text())
        except Exception:
            hyper = {}
        self.w_enc = weights["encoder.weight"].float()  # [n, d]
        self.b_enc = weights["encoder.bias"].float()
        self.w_dec = weights["decoder.weight"].float()  # [d, n]
        self.b_dec = weights["decoder.bias"].float()
        self.threshold = float(hyper.get("jump_relu_threshold", 0.0))
        norm = hyper.get("dataset_average_activation_norm", {}).get("in")
        d = self.w_enc.shape[1]
        self.in_scale = (d ** 0.5) / norm if norm else 1.0

    def encode(self, h):
        pre = (h.float() * self.in_scale) @ self.w_enc.T + self.b_enc
        return torch.where(pre > self.threshold, pre, torch.zeros_like(pre))

    def direction(self, index):
        return self.w_dec[:, index] / self.in_scale


class Model:
    def __init__(self, name, device):
        self.tok = AutoTokenizer.from_pretrained(name)
        self.lm = AutoModelForCausalLM.from_pretrained(name, torch_dtype=torch.bfloat16).to(device)
        self.lm.eval()
        self.device = device

    @torch.no_grad()
    def residuals(self, text, layer):
        ids = self.tok(text, return_tensors="pt").input_ids.to(self.device)
        out = self.lm(ids, output_hidden_states=True)
        # hidden_states[0] is the embedding; index layer+1 is after block `layer`.
        return out.hidden_states[layer + 1][0]

    @torch.no_grad()
    def generate(self, prompt, layer, delta=None, max_new_tokens=70, temperature=0.5, seed=16):
        handle = None
        if delta is not None:
            def hook(_module, _inputs, output):
                hs = output[0] if isinstance(output, tuple) else output
                hs = hs + delta.to(hs.dtype)
                return (hs,) + tuple(output[1:]) if isinstance(output, tuple) else hs
            handle = self.lm.model.layers[layer].register_forward_hook(hook)
        try:
            torch.manual_seed(seed)
            ids = self.tok(prompt, return_tensors="pt").input_ids.to(self.device)
            # transformers has no frequency penalty; sampling is otherwise as in the CLI defaults.
            out = self.lm.generate(ids, do_sample=temperature > 0, temperature=temperature, max_new_tokens=max_new_tokens)
            return self.tok.decode(out[0, ids.shape[1]:], skip_special_tokens=True)
        finally:
            if handle:
                handle.remove()


def within(actual, expected):
    if expected == 0.0:
        return abs(actual) <= 1e-6
    return abs(actual - expected) <= BAND * abs(expected)


def specificity(model, sae, layer, index, suite):
    rows = []
    for name, items in suite:
        acts = []
        for s in items:
            a = sae.encode(model.residuals(s, layer))[1:, index]  # drop begin-of-text
            acts.extend(a.tolist())
        nz = [a for a in acts if a > 0]
        rows.append({"category": name, "max": max(acts), "mean_nonzero": sum(nz) / len(nz) if nz else 0.0})
    return rows


def confusion(model, sae, layer, suite):
    features = [int(n.split("/")[1]) for n, _ in suite]
    terms = [(c, t) for c, (_, items) in enumerate(suite) for t in items]
    raw = torch.zeros(len(features), len(terms))
    for j, (_, term) in enumerate(terms):
        acts = sae.encode(model.residuals(term, layer))[1:]
        for i, f in enumerate(features):
            raw[i, j] = acts[:, f].max()
    fmax = raw.max(dim=1, keepdim=True).values
    a1 = torch.where(fmax > 0, raw / fmax.clamp_min(1e-30), torch.zeros_like(raw))
    values = torch.zeros(len(features), len(suite))
    for c in range(len(suite)):
        cols = [j for j, (tc, _) in enumerate(terms) if tc == c]
        cmax = a1[:, cols].max()
        if cmax > 0:
            values[:, c] = (a1[:, cols] / cmax).sum(dim=1)
    names = [n for n, _ in suite]
    return names, values


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="meta-llama/Llama-3.1-8B")
    ap.add_argument("--sae-repo", default="OpenMOSS-Team/Llama3_1-8B-Base-LXR-8x")
    ap.add_argument("--sae-pattern", default="Llama3_1-8B-Base-L{layer}R-8x")
    ap.add_argument("--device", default="cuda")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    model = Model(args.model, args.device)
    layer = 18
    sae = Sae(args.sae_repo, layer, args.sae_pattern, args.device)
    results, failed = {}, 0

    def report(name, ok, detail):
        nonlocal failed
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", flush=True)
        results[name] = {"pass": ok, "detail": detail}

    spec = specificity(model, sae, layer, 9463, parse_suite(FIXTURES / "specificity_18_9463.suite"))
    ok = all(within(r["max"], e) for r, e in zip(spec, SPECIFICITY_MAX)) and all(
        within(r["mean_nonzero"], e) for r, e in zip(spec, SPECIFICITY_MEAN))
    report("specificity 18/9463", ok, json.dumps(spec))

    names, values = confusion(model, sae, layer, parse_suite(FIXTURES / "coffee_terms_layer18.suite"))
    peak = values.max().item()
    i, c = divmod(int(values.argmax()), values.shape[1])
    want_f, want_c, want_v = CONFUSION_PEAK
    ok = names[i] == want_f and names[c] == want_c and within(peak, want_v)
    report("confusion peak", ok, f"max {peak:.3f} at ({names[i]}, {names[c]})")

    reference_max = max(r["max"] for r in spec)
    delta = 2.0 * reference_max * sae.direction(9463)
    text = model.generate("My favorite drink is", layer, delta=delta)
    report("steering 18/9463 c=2", "coffee" in text.lower(), repr(text[:120]))

    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2) + "\n")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
