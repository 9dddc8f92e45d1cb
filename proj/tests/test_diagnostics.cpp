#include <gtest/gtest.h>

#include <numeric>

#include "saelab/diagnostics/diagnostics.hpp"
#include "saelab/model/demo_world.hpp"
#include "support.hpp"

using namespace saelab;
using namespace saelab::fixtures;

namespace {

// Orthonormal concepts, one word per concept, no mixing: every planted
// feature reads exactly its own words.
struct DisjointWorld {
  SyntheticModelSpec spec;
  std::unique_ptr<SyntheticModel> model;
  std::unique_ptr<SparseAutoencoder> sae;
  std::vector<std::vector<std::string>> words;

  explicit DisjointWorld(int concepts = 4) {
    spec.model_id = "disjoint";
    spec.dictionary = demo::orthonormal_rows(concepts + 1, 8, 77);
    spec.n_layers = 2;
    spec.mix = {0.0, 0.0};
    spec.positional_scale = 0.0;
    spec.bos_loadings = {{concepts, 1.0}};
    for (int c = 0; c < concepts; ++c) {
      words.push_back({});
      for (int k = 0; k < 3; ++k) {
        const std::string w = "w" + std::to_string(c) + "_" + std::to_string(k);
        spec.vocabulary.push_back({w, {{c, 0.5 + 0.25 * k}}});
        words.back().push_back(w);
      }
    }
    spec.vocabulary.push_back({" ", {}});
    model = std::make_unique<SyntheticModel>(spec);
    Matrix enc(static_cast<std::size_t>(concepts + 6), 8), dec(static_cast<std::size_t>(concepts + 6), 8);
    Vector bias(static_cast<std::size_t>(concepts + 6), -100.0);
    for (int c = 0; c < concepts; ++c) {
      auto u = spec.dictionary.row(static_cast<std::size_t>(c));
      std::copy(u.begin(), u.end(), enc.row(static_cast<std::size_t>(c)).begin());
      std::copy(u.begin(), u.end(), dec.row(static_cast<std::size_t>(c)).begin());
      bias[static_cast<std::size_t>(c)] = -0.05;
    }
    for (std::size_t r = static_cast<std::size_t>(concepts); r < enc.rows(); ++r) dec(r, r % 8) = 1.0;
    sae = std::make_unique<SparseAutoencoder>(1, enc, bias, dec, Vector(8, 0.0));
  }

  std::vector<FeatureTerms> term_sets() const {
    std::vector<FeatureTerms> out;
    for (std::size_t c = 0; c < words.size(); ++c)
      out.push_back({FeatureId{1, static_cast<int>(c)}, "cat" + std::to_string(c), words[c]});
    return out;
  }
};

// Per-token loop over freshly run sessions, written without the scan code.
std::vector<FeatureStats> brute_force_scan(const LanguageModel& model, const SparseAutoencoder& sae,
                                           const std::vector<std::string>& docs) {
  std::vector<FeatureStats> stats(static_cast<std::size_t>(sae.n_features()));
  std::size_t text_tokens = 0;
  for (const auto& doc : docs) {
    const auto ids = token_ids(model.tokenize(doc));
    auto session = model.start_session({});
    for (auto id : ids) session->append(id, 0, true);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const auto& h = session->residual(sae.layer(), p);
      if (p > 0) ++text_tokens;
      for (int i = 0; i < sae.n_features(); ++i) {
        double pre = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) pre += sae.w_enc()(static_cast<std::size_t>(i), k) * h[k];
        pre += sae.b_enc()[static_cast<std::size_t>(i)];
        const double a = pre > 0.0 ? pre : 0.0;
        auto& s = stats[static_cast<std::size_t>(i)];
        if (p == 0) {
          s.bos_activation = std::max(s.bos_activation, a);
        } else {
          s.max_in_text_activation = std::max(s.max_in_text_activation, a);
          if (a > 0.0) ++s.active_tokens;
        }
      }
    }
  }
  for (auto& s : stats) {
    s.total_tokens = text_tokens;
    s.density = static_cast<double>(s.active_tokens) / static_cast<double>(text_tokens);
  }
  return stats;
}

bool has_flag(const std::vector<FeatureFlag>& flags, FeatureFlag f) {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

}  // namespace

TEST(Scan, EqualsBruteForceOnDemoCorpus) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  std::vector<std::pair<std::string, std::string>> docs;
  for (const auto& t : demo::corpus_texts()) docs.emplace_back("", t);
  const auto corpus = make_corpus(docs);
  ASSERT_EQ(corpus.size(), 10u);
  const auto report = density_scan(*w.model, sae, corpus);
  const auto oracle = brute_force_scan(*w.model, sae, demo::corpus_texts());
  ASSERT_EQ(report.rows.size(), oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const auto& s = report.rows[i].stats;
    EXPECT_EQ(s.active_tokens, oracle[i].active_tokens) << i;
    EXPECT_EQ(s.total_tokens, oracle[i].total_tokens);
    EXPECT_EQ(s.density, oracle[i].density) << i;
    EXPECT_EQ(s.bos_activation, oracle[i].bos_activation) << i;
    EXPECT_EQ(s.max_in_text_activation, oracle[i].max_in_text_activation) << i;
  }
}

TEST(Scan, EqualsBruteForceOnRandomModels) {
  Gen g(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto spec = tiny_spec(static_cast<std::uint64_t>(trial + 40), 8, 12, 3, 0.3, 0.2);
    SyntheticModel m(spec);
    const auto sae = planted_tiny_sae(spec, 2, 20, -0.2);
    std::vector<std::string> texts;
    std::vector<std::pair<std::string, std::string>> docs;
    for (int d = 0; d < 10; ++d) {
      texts.push_back(g.prompt(1, 8));
      docs.emplace_back("doc" + std::to_string(d), texts.back());
    }
    const auto report = density_scan(m, sae, make_corpus(docs));
    const auto oracle = brute_force_scan(m, sae, texts);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_EQ(report.rows[i].stats.active_tokens, oracle[i].active_tokens);
      EXPECT_EQ(report.rows[i].stats.bos_activation, oracle[i].bos_activation);
      EXPECT_EQ(report.rows[i].stats.max_in_text_activation, oracle[i].max_in_text_activation);
    }
  }
}

TEST(Scan, BosAnomalyThreshold) {
  // Feature 0 reads the first coordinate; BOS residuals carry `bos`, text
  // residuals at most `text`.
  Matrix enc(3, 2), dec(3, 2);
  enc(0, 0) = 1.0;
  enc(1, 1) = 1.0;
  enc(2, 1) = -1.0;
  dec(0, 0) = dec(1, 1) = dec(2, 1) = 1.0;
  const SparseAutoencoder sae(0, enc, Vector{0.0, 0.0, 0.0}, dec, Vector{0.0, 0.0});
  auto scan_with = [&](double bos, double text) {
    ResidualSource src = [&](std::size_t doc) {
      std::vector<Vector> r = {{bos, 0.0}};
      for (int p = 1; p <= 4; ++p) r.push_back({text * p / 4.0, doc % 2 ? 0.5 : 0.0});
      return r;
    };
    const auto rep = scan_features(sae, "fixture", 6, src);
    return rep.flags(rep.rows[0]);
  };
  EXPECT_TRUE(has_flag(scan_with(20.0, 2.0), FeatureFlag::bos_anomalous));     // ratio 10
  EXPECT_TRUE(has_flag(scan_with(245.0, 3.0), FeatureFlag::bos_anomalous));    // ratio ~82
  EXPECT_FALSE(has_flag(scan_with(19.99, 2.0), FeatureFlag::bos_anomalous));
  EXPECT_FALSE(has_flag(scan_with(2.0, 1.0), FeatureFlag::bos_anomalous));     // near uniform
  EXPECT_FALSE(has_flag(scan_with(1.5, 1.0), FeatureFlag::bos_anomalous));
  EXPECT_FALSE(has_flag(scan_with(0.0, 1.0), FeatureFlag::bos_anomalous));
}

TEST(Scan, FlagsOnTheDemoWorld) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  std::vector<std::pair<std::string, std::string>> docs;
  for (const auto& t : demo::corpus_texts()) docs.emplace_back("", t);
  const auto report = density_scan(*w.model, sae, make_corpus(docs));
  const auto flags = [&](int i) { return report.flags(report.rows[static_cast<std::size_t>(i)]); };
  EXPECT_TRUE(has_flag(flags(demo::kText), FeatureFlag::hyperactive));
  EXPECT_TRUE(has_flag(flags(demo::kBosFeature), FeatureFlag::bos_anomalous));
  for (int i = demo::kFirstDeadFeature; i < demo::kFirstDeadFeature + demo::kDeadFeatures; ++i)
    EXPECT_TRUE(has_flag(flags(i), FeatureFlag::dead));
  EXPECT_TRUE(flags(demo::kCoffee).empty());
}

TEST(Scan, RejectsEmptyInputsAndRoundTrips) {
  Gen g(9);
  const auto sae = random_sae(g, 0, 2, 4);
  EXPECT_THROW(scan_features(sae, "x", 0, [](std::size_t) { return std::vector<Vector>{}; }), Error);
  EXPECT_THROW(scan_features(sae, "x", 1, [](std::size_t) { return std::vector<Vector>{{0.0, 0.0}}; }), Error);
  EXPECT_THROW(scan_features(sae, "x", 1, [](std::size_t) { return std::vector<Vector>{{0, 0}, {1, 1}}; }, {7}), Error);
  const auto rep = scan_features(sae, "x", 1, [](std::size_t) { return std::vector<Vector>{{0, 0}, {1, 1}, {2, -1}}; });
  const auto back = scan_from_json(to_json(rep));
  ASSERT_EQ(back.rows.size(), rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].stats.density, rep.rows[i].stats.density);
    EXPECT_EQ(back.flags(back.rows[i]), rep.flags(rep.rows[i]));
  }
}

TEST(Confusion, NormalizationAgainstHandComputedTable) {
  // raw [feature][term]; terms 0,1 in category 0, term 2 in category 1.
  const auto m = confusion_from_raw({{0, 0}, {0, 1}}, {"a", "b"}, {"t0", "t1", "t2"}, {0, 0, 1},
                                    {{4.0, 2.0, 1.0}, {0.0, 1.0, 3.0}});
  // A1 = [[1, .5, .25], [0, 1/3, 1]]; category max: c0 = 1, c1 = 1.
  EXPECT_DOUBLE_EQ(m.values[0][0], 1.5);
  EXPECT_DOUBLE_EQ(m.values[0][1], 0.25);
  EXPECT_DOUBLE_EQ(m.values[1][0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.values[1][1], 1.0);
  EXPECT_EQ(m.feature_max, (std::vector<double>{4.0, 3.0}));
  const auto zero = confusion_from_raw({{0, 0}}, {"a"}, {"t"}, {0}, {{0.0}});
  EXPECT_EQ(zero.values[0][0], 0.0);
  EXPECT_FALSE(zero.warnings.empty());
}

TEST(Confusion, DisjointPlantedFeaturesGiveExactDiagonal) {
  DisjointWorld w;
  const auto m = similarity_confusion(*w.model, *w.sae, w.term_sets());
  for (std::size_t f = 0; f < m.values.size(); ++f)
    for (std::size_t c = 0; c < m.values[f].size(); ++c) {
      if (f != c) {
        EXPECT_EQ(m.values[f][c], 0.0) << f << "," << c;
      } else {
        // Activations 0.45, 0.70, 0.95 normalised by 0.95.
        EXPECT_NEAR(m.values[f][c], (0.45 + 0.70 + 0.95) / 0.95, 1e-12);
      }
    }
}

TEST(Confusion, InvariantToTermPermutation) {
  DisjointWorld w;
  const auto sets = w.term_sets();
  const auto base = similarity_confusion(*w.model, *w.sae, sets);
  Gen g(10);
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = sets;
    for (auto& s : shuffled) std::shuffle(s.terms.begin(), s.terms.end(), g.rng);
    const auto m = similarity_confusion(*w.model, *w.sae, shuffled);
    for (std::size_t f = 0; f < m.values.size(); ++f)
      for (std::size_t c = 0; c < m.values[f].size(); ++c) EXPECT_NEAR(m.values[f][c], base.values[f][c], 1e-12);
  }
}

TEST(Confusion, InvariantToTermPermutationOnOverlappingFeatures) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  const auto suite = load_suite(fixture("coffee_terms_layer18.suite"));
  std::vector<FeatureTerms> sets = {
      {{demo::kLayer, demo::kCoffee}, "coffee", {"coffee", "espresso", "café", "Kaffee", "latte"}},
      {{demo::kLayer, demo::kTea}, "tea", {"tea", "matcha", "Tea"}},
      {{demo::kLayer, demo::kAlcohol}, "alcohol", {"wine", "beer", "whiskey"}},
      {{demo::kLayer, demo::kPlace}, "place", {"café", "shop", "street"}}};
  const auto base = similarity_confusion(*w.model, sae, sets);
  EXPECT_GT(base.values[3][0], 0.0);  // café is shared
  Gen g(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = sets;
    for (auto& s : shuffled) std::shuffle(s.terms.begin(), s.terms.end(), g.rng);
    const auto m = similarity_confusion(*w.model, sae, shuffled);
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(m.values[f][c], base.values[f][c], 1e-12);
  }
  EXPECT_FALSE(suite.categories.empty());
}

TEST(Confusion, EncoderRowScalingLeavesItsRowUnchanged) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  std::vector<FeatureTerms> sets = {
      {{demo::kLayer, demo::kCoffee}, "coffee", {"coffee", "espresso", "café"}},
      {{demo::kLayer, demo::kPlace}, "place", {"café", "shop", "street"}},
      {{demo::kLayer, demo::kMorning}, "morning", {"morning", "routine"}}};
  const auto base = similarity_confusion(*w.model, sae, sets);
  for (double k : {0.25, 3.0, 17.0}) {
    SparseAutoencoder scaled = sae;
    for (auto& x : scaled.mutable_w_enc().row(demo::kCoffee)) x *= k;
    scaled.mutable_b_enc()[demo::kCoffee] *= k;
    const auto m = similarity_confusion(*w.model, scaled, sets);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(m.values[0][c], base.values[0][c], 1e-12) << k;
  }
}

TEST(Confusion, SuiteTermSetsAndErrors) {
  const auto suite = parse_suite("[18/1]\ncoffee\n[18/2]\ntea\n");
  const auto sets = term_sets_from_suite(suite);
  ASSERT_EQ(sets.size(), 2u);
  EXPECT_EQ(sets[1].feature, (FeatureId{18, 2}));
  EXPECT_THROW(term_sets_from_suite(parse_suite("[coffee]\nx\n")), Error);
  const auto w = demo::make_world();
  EXPECT_THROW(similarity_confusion(*w.model, *w.saes.at(18), {{{18, 1}, "c", {}}}), Error);
  const auto m = similarity_confusion(*w.model, *w.saes.at(18), sets, TermAggregation::mean);
  const auto back = confusion_from_json(to_json(m));
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.raw, m.raw);
}

TEST(Specificity, IncreasingConceptDensityIsStrictlyMonotone) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  Gen g(12);
  // Levels load the coffee concept at 0, 0.2, 0.7 and 1.0 per token.
  const std::vector<std::vector<std::string>> level_words = {
      {"museum", "quantum", "street", "painting"}, {"ucc"}, {"app"}, {"coffee", "espresso", "latte", "crema"}};
  const std::vector<std::string> filler = {"the", "is", "and", "with", "about", "in"};
  for (int trial = 0; trial < 5; ++trial) {
    ProbeSuite suite;
    for (int level = 0; level < 4; ++level) {
      ProbeCategory cat{std::to_string(level), {}};
      for (int s = 0; s < 4; ++s) {
        std::string sentence;
        const int n = g.integer(3, 8);
        for (int k = 0; k < n; ++k) {
          const auto& pool = g.coin() ? level_words[static_cast<std::size_t>(level)] : filler;
          sentence += (k ? " " : "") + pool[static_cast<std::size_t>(g.integer(0, static_cast<int>(pool.size()) - 1))];
        }
        sentence += " " + level_words[static_cast<std::size_t>(level)][0];
        cat.items.push_back(sentence);
      }
      suite.categories.push_back(cat);
    }
    const auto r = specificity_score(*w.model, sae, {demo::kLayer, demo::kCoffee}, suite);
    for (std::size_t c = 1; c < 4; ++c) {
      EXPECT_GT(r.categories[c].max, r.categories[c - 1].max) << format_suite(suite);
      EXPECT_GT(r.categories[c].mean_nonzero, r.categories[c - 1].mean_nonzero) << format_suite(suite);
    }
  }
}

TEST(Specificity, FixtureSuiteShapeAndErrors) {
  const auto suite = load_suite(fixture("specificity_18_9463.suite"));
  ASSERT_EQ(suite.categories.size(), 4u);
  for (const auto& c : suite.categories) EXPECT_FALSE(c.items.empty());
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  const auto r = specificity_score(*w.model, sae, {demo::kLayer, demo::kCoffee}, suite);
  EXPECT_EQ(r.categories[0].max, 0.0);
  EXPECT_GT(r.categories[3].max, r.categories[1].max);
  EXPECT_THROW(specificity_score(*w.model, sae, {demo::kLayer, 1}, parse_suite("[0]\na\n[1]\nb\n")), Error);
  EXPECT_THROW(specificity_score(*w.model, sae, {demo::kLayer, 1}, parse_suite("[0]\na\n[1]\nb\n[2]\nc\n[4]\nd\n")), Error);
  EXPECT_THROW(parse_suite("orphan\n[0]\n"), Error);
  EXPECT_THROW(parse_suite("[0]\n[0]\n"), Error);
  EXPECT_THROW(parse_suite("[0\n"), Error);
  EXPECT_EQ(parse_suite(format_suite(suite)).all_items(), suite.all_items());
}

TEST(Highlight, OpacityIsActivationOverTextMaximum) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  const auto h = activation_highlight(*w.model, sae, "I love coffee and tea", {demo::kLayer, demo::kCoffee});
  ASSERT_TRUE(h.rows.front().is_bos);
  EXPECT_EQ(h.rows.front().opacity, 0.0);
  double best = 0.0;
  std::string joined;
  for (const auto& r : h.rows) {
    if (r.is_bos) continue;
    best = std::max(best, r.activation);
    joined += r.token;
    EXPECT_GE(r.opacity, 0.0);
    EXPECT_LE(r.opacity, 1.0);
  }
  EXPECT_EQ(joined, h.text);
  EXPECT_EQ(best, h.max_activation);
  for (const auto& r : h.rows) {
    if (!r.is_bos) {
      EXPECT_DOUBLE_EQ(r.opacity, r.activation / best);
    }
  }
  EXPECT_THROW(activation_highlight(*w.model, sae, "", {demo::kLayer, 1}), Error);
  const auto back = highlight_from_json(to_json(h));
  EXPECT_EQ(back.rows.size(), h.rows.size());
}

TEST(Highlight, JapaneseTokensConcatenateToTheSource) {
  const auto w = demo::make_world();
  const auto text = read_text(fixture("coffee_paragraph_ja.txt"));
  const auto h = activation_highlight(*w.model, *w.saes.at(18), text, {18, demo::kCoffee});
  std::string joined;
  for (const auto& r : h.rows) joined += r.token;
  EXPECT_EQ(joined.substr(std::string("<|begin_of_text|>").size()), text);
  EXPECT_GT(h.max_activation, 0.0);
}

TEST(Context, RowsFollowInputOrder) {
  const auto w = demo::make_world();
  const auto t = context_probe(*w.model, *w.saes.at(18), {18, demo::kCoffee}, {"coffee", "tea", "a cup of coffee"});
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[2].probe, "a cup of coffee");
  EXPECT_EQ(t.rows[2].tokens.size(), t.rows[2].activations.size());
  EXPECT_THROW(context_probe(*w.model, *w.saes.at(18), {18, 1}, {}), Error);
}

TEST(SweepQuality, RepetitionAndLexiconOracles) {
  const std::vector<TokenId> seq = {1, 2, 3, 1, 2, 3};
  EXPECT_DOUBLE_EQ(repetition_score(seq), 0.25);
  EXPECT_EQ(repetition_score(std::vector<TokenId>{1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(repetition_score(std::vector<TokenId>(10, 4)), 1.0 - 1.0 / 8.0);
  EXPECT_DOUBLE_EQ(distinct_token_ratio(seq), 0.5);
  EXPECT_EQ(lexicon_hits("Coffee, coffee! coffeehouse", {"coffee"}), 2u);
  EXPECT_EQ(lexicon_hits("COFFEE coffee", {"coffee", "Coffee"}), 2u);
  EXPECT_EQ(lexicon_hits("コーヒーとコーヒー", {"コーヒー"}), 2u);
  EXPECT_EQ(lexicon_hits("", {"x"}), 0u);
}

TEST(SweepQuality, SelfPerplexityMatchesGenerationLogits) {
  const auto w = demo::make_world();
  GenerationConfig c;
  c.max_new_tokens = 25;
  const auto g = generate(*w.model, "My favorite drink is", c);
  double nll = 0;
  for (std::size_t k = 0; k < g.generated.size(); ++k) nll -= log_probability(g.step_logits[k], g.generated[k]);
  const double expect = std::exp(nll / static_cast<double>(g.generated.size()));
  EXPECT_NEAR(self_perplexity(*w.model, "My favorite drink is", g.generated), expect, 1e-9 * expect);
}

TEST(SweepQuality, ReportsShiftAndBreakdown) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  SteeringSpec s;
  s.feature = {demo::kLayer, demo::kCoffee};
  s.scale_mode = ScaleMode::unit;
  const std::vector<double> coeffs = {0.0, 6.0, 1e308};
  GenerationConfig c;
  c.strength_multiplier = 1.0;
  const auto sw = sweep(*w.model, sae, "I went to the museum and saw", s, coeffs, c);
  const auto q = sweep_quality(*w.model, sw, demo::lexicon(demo::kCoffee));
  ASSERT_EQ(q.entries.size(), 3u);
  EXPECT_EQ(q.entries[0].concept_shift, 0);
  EXPECT_FALSE(q.entries[0].breakdown);
  EXPECT_GT(q.entries[1].concept_shift, 0);
  EXPECT_EQ(q.entries[2].numeric_breakdown, sw.entries[2].breakdown.has_value());
  const auto back = sweep_from_json(to_json(q));
  EXPECT_EQ(back.entries.size(), 3u);
  EXPECT_EQ(back.entries[1].concept_hits, q.entries[1].concept_hits);
  EXPECT_THROW(sweep_quality(*w.model, std::span<const SteeredGeneration>{}, {}), Error);
}

TEST(Representation, PlantedCoffeeFeaturePassesBothTests) {
  const auto w = demo::make_world();
  const auto& sae = *w.saes.at(demo::kLayer);
  const auto suite = parse_suite("[positive]\nI love coffee\nan espresso please\n[negative]\nquantum physics\nthe museum\n");
  SteeringSpec s;
  s.feature = {demo::kLayer, demo::kCoffee};
  s.scale_mode = ScaleMode::max_activation;
  s.reference_max = 1.0;
  s.coefficient = 6.0;
  const auto v = representation_test(*w.model, sae, s.feature, suite, s, demo::lexicon(demo::kCoffee),
                                     "I went to the museum and saw");
  EXPECT_TRUE(v.coactivation);
  EXPECT_TRUE(v.manipulation);
  EXPECT_THROW(representation_test(*w.model, sae, s.feature, parse_suite("[positive]\nx\n"), s, {"x"}, "p"), Error);
}

TEST(AttributionAblation, PerfectCorrelationOnLinearModel) {
  const auto spec = tiny_spec(55, 8, 12, 3, 0.0, 0.3);
  SyntheticModel m(spec);
  const auto sae = planted_tiny_sae(spec, 1, 24, 0.0);
  const auto r = attribution_vs_ablation(m, sae, "alpha beta gamma delta", {1, 0}, SyntheticModel::kFirstOrdinary + 3);
  for (std::size_t p = 0; p < r.attribution.size(); ++p) EXPECT_NEAR(r.attribution[p], r.ablation_effect[p], 1e-9);
  ASSERT_TRUE(r.correlation.has_value());
  EXPECT_NEAR(*r.correlation, 1.0, 1e-9);
}
