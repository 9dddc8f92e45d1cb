#pragma once

#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "saelab/model/synthetic.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"

// A small coffee-themed planted world: a 32-layer synthetic model whose
// vocabulary loads a handful of named concepts, plus a planted SAE at layer
// 18 whose first features read those concepts back. Used by the CLI, the
// service and end-to-end tests.

namespace saelab::demo {

enum Concept : int {
  kText = 0,
  kCoffee,
  kTea,
  kAlcohol,
  kPoison,
  kContainer,
  kTemperature,
  kOf,
  kArt,
  kScience,
  kMorning,
  kPerson,
  kDrinking,
  kPunctuation,
  kGerman,
  kJapanese,
  kBos,
  kFood,
  kPlace,
  kSpace,
  kConceptCount
};

inline const std::vector<std::string>& concept_names() {
  static const std::vector<std::string> names = {
      "generic text",       "coffee",         "tea",         "alcoholic drinks", "poison",
      "drinking vessels",   "temperature",    "the word of", "art and museums",  "science",
      "mornings and habit", "people",         "drinking",    "punctuation",      "German text",
      "Japanese text",      "begin-of-text",  "food",        "places",           "word-initial space"};
  return names;
}

inline constexpr int kLayer = 18;
inline constexpr int kLayers = 32;
inline constexpr int kDModel = 32;
inline constexpr int kSaeFeatures = 64;
inline constexpr int kBosFeature = 20;
inline constexpr int kFirstDeadFeature = 21;
inline constexpr int kDeadFeatures = 3;
inline constexpr const char* kModelId = "synthetic-coffee-world";

// Orthonormal rows via Gram-Schmidt on seeded Gaussian vectors.
inline Matrix orthonormal_rows(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (auto& x : row) x = normal(rng);
    for (std::size_t q = 0; q < r; ++q) axpy(-dot(row, m.row(q)), m.row(q), row);
    const double n = norm(row);
    for (auto& x : row) x /= n;
  }
  return m;
}

using Loadings = std::vector<std::pair<int, double>>;

inline std::vector<VocabEntry> vocabulary() {
  std::map<std::string, Loadings> words;
  auto word = [&](const std::string& w, Loadings l, bool spaced_variant = true) {
    words[w] = l;
    if (spaced_variant) {
      l.emplace_back(kSpace, 0.3);
      words[" " + w] = l;
    }
  };
  for (auto w : {"coffee", "Coffee", "espresso", "Espresso", "latte", "Latte", "brew", "beans", "roast", "Arabica",
                 "barista", "caffeine", "Caffeine", "cappuccinos", "ristretto", "crema"})
    word(w, {{kCoffee, 1.0}});
  word("café", {{kCoffee, 0.6}, {kPlace, 0.6}});
  word("Café", {{kCoffee, 0.6}, {kPlace, 0.6}});
  word("Kaffee", {{kCoffee, 1.0}, {kGerman, 0.8}});
  word("app", {{kCoffee, 0.7}}, false);
  word("ucc", {{kCoffee, 0.2}}, false);
  word("ino", {}, false);
  word("コーヒー", {{kCoffee, 1.0}, {kJapanese, 0.8}}, false);
  word("カフェ", {{kCoffee, 0.6}, {kPlace, 0.5}, {kJapanese, 0.8}}, false);
  word("エスプレッソ", {{kCoffee, 0.9}, {kJapanese, 0.8}}, false);
  word("カプチーノ", {{kCoffee, 0.9}, {kJapanese, 0.8}}, false);
  word("ラテ", {{kCoffee, 0.8}, {kJapanese, 0.8}}, false);
  for (auto w : {"tea", "Tea", "matcha"}) word(w, {{kTea, 1.0}});
  for (auto w : {"wine", "Wine", "Merlot", "Cabernet", "beer", "whiskey", "cocktail"}) word(w, {{kAlcohol, 1.0}});
  for (auto w : {"poison", "Poison", "venom"}) word(w, {{kPoison, 1.0}});
  for (auto w : {"cup", "Cup", "mug", "mugs", "glass"}) word(w, {{kContainer, 1.0}});
  for (auto w : {"hot", "cold", "warm", "steaming"}) word(w, {{kTemperature, 1.0}});
  word("of", {{kOf, 1.0}});
  for (auto w : {"museum", "art", "painting", "gallery"}) word(w, {{kArt, 1.0}});
  for (auto w : {"quantum", "physics", "energy", "satellite", "ice", "beetle"}) word(w, {{kScience, 1.0}});
  for (auto w : {"morning", "Morning", "routine", "routines", "ritual"}) word(w, {{kMorning, 1.0}});
  for (auto w : {"I", "We", "She", "He", "My", "my", "they", "patrons", "friends"}) word(w, {{kPerson, 1.0}});
  for (auto w : {"drink", "drank", "sip", "love", "favorite", "beverage"}) word(w, {{kDrinking, 1.0}});
  for (auto w : {"cake", "bread", "pastries", "breakfast"}) word(w, {{kFood, 1.0}});
  for (auto w : {"shop", "street", "city", "place"}) word(w, {{kPlace, 1.0}});
  for (auto w : {"Kaffeehaus", "Getränk", "Morgen"}) word(w, {{kGerman, 1.0}});
  for (auto w : {"is", "the", "The", "a", "and", "This", "best", "have", "ever", "about", "in", "with", "to", "for",
                 "was", "it", "not", "just", "but", "from", "that", "makes", "before", "while", "their"})
    word(w, {});
  for (auto p : {".", ",", "!", "?", ":", ";"}) words[p] = {{kPunctuation, 1.0}};
  // Every printable ASCII character is a token, so ASCII text never needs
  // the unknown token.
  for (char c = 0x20; c < 0x7f; ++c) words.try_emplace(std::string(1, c), Loadings{});
  words.try_emplace("\n", Loadings{{kPunctuation, 0.5}});

  std::vector<VocabEntry> out;
  for (auto& [text, l] : words) {
    l.emplace_back(kText, 0.5);
    out.push_back(VocabEntry{text, l});
  }
  return out;
}

inline SyntheticModelSpec model_spec() {
  SyntheticModelSpec spec;
  spec.model_id = kModelId;
  spec.dictionary = orthonormal_rows(kConceptCount, kDModel, 20240918);
  spec.vocabulary = vocabulary();
  spec.bos_loadings = {{kBos, 1.0}};
  spec.n_layers = kLayers;
  spec.sparsity = 3.0;
  spec.seed = 7;
  spec.mix.assign(kLayers, 0.0);
  spec.mix[10] = 0.3;
  spec.readout_gain = 4.0;
  return spec;
}

// Planted SAE at kLayer:
//   0..19   one feature per concept (encoder = decoder = concept direction)
//   20      begin-of-text detector with a large encoder gain
//   21..23  dead (large negative bias)
//   24..63  random directions with a high threshold
inline SparseAutoencoder planted_sae(const SyntheticModelSpec& spec) {
  const auto n = static_cast<std::size_t>(kSaeFeatures);
  const auto d = static_cast<std::size_t>(kDModel);
  Matrix w_enc(n, d), w_dec(n, d);
  Vector b_enc(n, -0.05);
  for (std::size_t i = 0; i < static_cast<std::size_t>(kConceptCount); ++i) {
    auto u = spec.dictionary.row(i);
    std::copy(u.begin(), u.end(), w_enc.row(i).begin());
    std::copy(u.begin(), u.end(), w_dec.row(i).begin());
  }
  auto bos = spec.dictionary.row(kBos);
  for (std::size_t k = 0; k < d; ++k) {
    w_enc(kBosFeature, k) = 50.0 * bos[k];
    w_dec(kBosFeature, k) = bos[k];
  }
  b_enc[kBosFeature] = -5.0;
  const Matrix random = orthonormal_rows(static_cast<int>(d), static_cast<int>(d), 99);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = kFirstDeadFeature; i < n; ++i) {
    auto enc = w_enc.row(i);
    for (auto& x : enc) x = normal(rng);
    const double nrm = norm(enc);
    for (auto& x : enc) x /= nrm;
    auto dir = random.row(i % d);
    std::copy(dir.begin(), dir.end(), w_dec.row(i).begin());
    b_enc[i] = i < static_cast<std::size_t>(kFirstDeadFeature + kDeadFeatures) ? -100.0 : -0.6;
  }
  return SparseAutoencoder(kLayer, std::move(w_enc), std::move(b_enc), std::move(w_dec), Vector(d, 0.0));
}

inline std::vector<std::pair<FeatureId, std::string>> descriptions() {
  std::vector<std::pair<FeatureId, std::string>> out;
  const auto& names = concept_names();
  for (int i = 0; i < kConceptCount; ++i) {
    std::string text = "references to " + names[static_cast<std::size_t>(i)];
    if (i == kCoffee) text = "references to coffee";
    out.emplace_back(FeatureId{kLayer, i}, text);
  }
  out.emplace_back(FeatureId{kLayer, kBosFeature}, "the begin-of-text token");
  return out;
}

// Lexicons for concept-shift scoring, keyed by concept.
inline std::vector<std::string> lexicon(Concept c) {
  std::vector<std::string> out;
  for (const auto& v : vocabulary()) {
    bool loads = false;
    for (auto [j, s] : v.loadings) loads = loads || (j == c && s >= 0.5);
    if (!loads) continue;
    std::string w = v.text;
    if (!w.empty() && w.front() == ' ') w.erase(0, 1);
    out.push_back(w);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Ten short documents for scans and caching demos.
inline std::vector<std::string> corpus_texts() {
  return {
      "I drink coffee every morning before work.",
      "The barista pulled a ristretto with thick crema.",
      "We drank tea and ate cake in the gallery café.",
      "She loves a glass of Merlot with bread.",
      "The museum has a painting of a steaming mug.",
      "Quantum physics is not just about energy.",
      "My morning routine: espresso, then a latte.",
      "They sip cold beer on the street.",
      "Kaffee am Morgen ist mein Getränk.",
      "朝のコーヒーとカフェラテ。",
  };
}

struct World {
  std::shared_ptr<const SyntheticModel> model;
  std::map<int, std::shared_ptr<const SparseAutoencoder>> saes;
};

inline World make_world() {
  auto spec = model_spec();
  World w;
  auto sae = std::make_shared<const SparseAutoencoder>(planted_sae(spec));
  w.model = std::make_shared<const SyntheticModel>(std::move(spec));
  w.saes[kLayer] = std::move(sae);
  return w;
}

}  // namespace saelab::demo
