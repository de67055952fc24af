#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "reasonlens/errors.hpp"
#include "reasonlens/experiments.hpp"
#include "test_support.hpp"

using namespace reasonlens;
using reasonlens::testing::small_model;

namespace {

std::vector<PromptPair> sample_pairs() {
  return load_prompt_pairs(std::filesystem::path(REASONLENS_SAMPLES_DIR) / "hand_examples.jsonl");
}

PosLexicon noun_lexicon() {
  PosLexicon lex;
  lex.set(PartOfSpeech::kNouns, {"time", "year", "people", "way", "day", "man", "thing"});
  return lex;
}

}  // namespace

TEST(PercentDifference, Examples) {
  EXPECT_NEAR(percent_difference(0.84, 3.37), 301.19047619, 1e-6);
  EXPECT_EQ(percent_difference(0.3, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(percent_difference(0.5, 0.25), -50.0);
  EXPECT_THROW(percent_difference(0.0, 0.1), InvalidArgument);
}

TEST(PercentDifference, SignMatchesDirection) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng);
    const double d = percent_difference(a, b);
    EXPECT_EQ(d > 0, b > a);
    EXPECT_EQ(d < 0, b < a);
  }
}

TEST(Surprisal, Values) {
  EXPECT_EQ(surprisal(1.0), 0.0);
  EXPECT_NEAR(surprisal(0.5), std::log(2.0), 1e-15);
  EXPECT_NEAR(surprisal(0.25, LogBase::kTwo), 2.0, 1e-12);
  EXPECT_THROW(surprisal(0.0), InvalidArgument);
  EXPECT_THROW(surprisal(1.5), InvalidArgument);
}

TEST(RobustMean, Examples) {
  const std::vector<double> one{5};
  EXPECT_EQ(robust_mean(one).mean, 5.0);
  EXPECT_EQ(robust_mean(one).n_excluded, 0u);
  const std::vector<double> flat{2, 2, 2};
  EXPECT_EQ(robust_mean(flat).mean, 2.0);
  std::vector<double> outlier(9, 1.0);
  outlier.push_back(101.0);
  const RobustMean rm = robust_mean(outlier);
  EXPECT_EQ(rm.mean, 1.0);
  EXPECT_EQ(rm.n_excluded, 1u);
  EXPECT_THROW(robust_mean(std::vector<double>{}), InvalidArgument);
}

TEST(RobustMean, PlainMeanWhenNothingExcluded) {
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(robust_mean(v).mean, 2.5);
  EXPECT_EQ(robust_mean(v).n_excluded, 0u);
}

TEST(RobustMean, PermutationInvariant) {
  std::mt19937 rng(4);
  std::normal_distribution<double> n(0, 10);
  std::vector<double> v(50);
  for (double& x : v) x = n(rng);
  v[7] = 400;
  const RobustMean a = robust_mean(v);
  std::shuffle(v.begin(), v.end(), rng);
  const RobustMean b = robust_mean(v);
  EXPECT_NEAR(a.mean, b.mean, 1e-12);
  EXPECT_EQ(a.n_excluded, b.n_excluded);
  EXPECT_GE(a.n_excluded, 1u);
}

TEST(Flops, UnembedSingleToken) {
  const FlopReport r = flops_for_encoding(EncodingStyle::kUnembed, 1, ModelConfig::gpt2_small());
  EXPECT_EQ(r.total_flops, 768.0);
  EXPECT_EQ(flops_for_encoding(EncodingStyle::kEmbed, 1, ModelConfig::gpt2_small()).total_flops, 768.0);
  EXPECT_THROW(flops_for_encoding(EncodingStyle::kEmbed, 0, ModelConfig::gpt2_small()), InvalidArgument);
}

TEST(Flops, LayerWiseGpt2Small) {
  const FlopReport r = flops_for_encoding(EncodingStyle::kLayerWise, 2.96, ModelConfig::gpt2_small());
  EXPECT_EQ(r.n_params, 84934656.0);
  EXPECT_DOUBLE_EQ(r.embed_flop, 2.96 * 4 * 768);
  EXPECT_DOUBLE_EQ(r.ff_flop, 2 * 84934656.0 + 2 * 12 * 2.96 * 768);
  EXPECT_EQ(r.total_flops, r.embed_flop + r.ff_flop);
  // Integral n_ctx gives an integral total.
  const FlopReport i = flops_for_encoding(EncodingStyle::kLayerWise, 3, ModelConfig::gpt2_small());
  EXPECT_EQ(i.total_flops, 3.0 * 4 * 768 + 2 * 84934656.0 + 2 * 12 * 3 * 768);
}

TEST(Scoring, AnswerTokenUsesLeadingSpace) {
  const Model& m = small_model();
  EXPECT_EQ(answer_token(m, "Australia"), m.tokenizer().encode(" Australia").front());
  EXPECT_EQ(answer_token(m, " Australia"), m.tokenizer().encode(" Australia").front());
  ScoringOptions bare;
  bare.answer_leading_space = false;
  EXPECT_EQ(answer_token(m, "Australia", bare), m.tokenizer().encode("Australia").front());
  EXPECT_THROW(answer_token(m, ""), InvalidArgument);
}

TEST(Scoring, PromptTokensOptionalBos) {
  const Model& m = small_model();
  const auto plain = prompt_tokens(m, "The father of Hermes is");
  EXPECT_EQ(plain, m.tokenizer().encode("The father of Hermes is"));
  ScoringOptions bos;
  bos.prepend_bos = true;
  const auto with = prompt_tokens(m, "The father of Hermes is", bos);
  ASSERT_EQ(with.size(), plain.size() + 1);
  EXPECT_EQ(with.front(), 50256);
}

TEST(Scoring, AnswerProbabilityMatchesDistribution) {
  const Model& m = small_model();
  const auto ids = m.tokenizer().encode("The father of Hermes is");
  const Tensor dist = next_token_distribution(forward(m, ids).logits);
  EXPECT_EQ(answer_probability(m, "The father of Hermes is", "Zeus"),
            dist[m.tokenizer().encode(" Zeus").front()]);
}

TEST(DatasetStats, MatchesPerPromptOracle) {
  const Model& m = small_model();
  const auto pairs = sample_pairs();
  const DatasetStats st = dataset_stats(m, pairs, {}, 2);
  double ps = 0, ss = 0, lm = 0;
  for (const auto& p : pairs) {
    const double prob = answer_probability(m, p.single_hop, p.answer);
    ps += prob;
    ss += -std::log(prob);
    lm += static_cast<double>(m.tokenizer().encode(p.multi_hop).size());
  }
  const double n = static_cast<double>(pairs.size());
  EXPECT_EQ(st.n_pairs, pairs.size());
  EXPECT_NEAR(st.single_prob, ps / n, 1e-12);
  EXPECT_NEAR(st.single_surprisal, ss / n, 1e-9);
  EXPECT_DOUBLE_EQ(st.multi_tokens, lm / n);

  ScoringOptions bos;
  bos.prepend_bos = true;
  EXPECT_DOUBLE_EQ(dataset_stats(m, pairs, bos).multi_tokens, st.multi_tokens);
}

TEST(Sweep, TauZeroGivesZeroDifference) {
  const Model& m = small_model();
  SweepConfig cfg;
  cfg.layers = {0, 2};
  cfg.taus = {0.0};
  const SweepGrid g = run_injection_sweep(m, sample_pairs(), cfg);
  ASSERT_EQ(g.cells.size(), 2u);
  for (const auto& c : g.cells) {
    for (const auto& r : c.results) EXPECT_NEAR(r.percent_diff, 0.0, 1e-6 * 100 / r.p_pre);
  }
}

TEST(Sweep, GridShapeAndRecomputableCells) {
  const Model& m = small_model();
  const auto pairs = sample_pairs();
  SweepConfig cfg;
  cfg.layers = {1, 2};
  cfg.taus = {1.0, 4.0};
  const SweepGrid g = run_injection_sweep(m, pairs, cfg);
  ASSERT_EQ(g.cells.size(), 4u);
  EXPECT_EQ(g.cells[1].layer, 1);
  EXPECT_EQ(g.cells[1].tau, 4.0);
  for (const auto& c : g.cells) {
    ASSERT_EQ(c.results.size(), pairs.size());
    std::vector<double> diffs;
    for (const auto& r : c.results) {
      diffs.push_back(r.percent_diff);
      EXPECT_EQ(r.memory, " " + pairs[r.prompt].memory);
      EXPECT_DOUBLE_EQ(r.percent_diff, percent_difference(r.p_pre, r.p_post));
    }
    EXPECT_EQ(c.robust_mean, robust_mean(diffs).mean);
  }
  // Single-prompt oracle through the public inject() path.
  const auto& r = g.cells[3].results[2];
  InjectionSpec spec{2, 4.0f, encode_unembed(m, r.memory).vector};
  const Tensor dist = next_token_distribution(inject(m, m.tokenizer().encode(pairs[2].multi_hop), spec).logits);
  EXPECT_EQ(r.p_post, dist[answer_token(m, pairs[2].answer)]);

  const std::string csv = sweep_csv(g);
  EXPECT_EQ(csv.rfind("layer,tau,robust_mean_pct,n_prompts,n_excluded\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Sweep, SameSeedIdenticalCsv) {
  const Model& m = small_model();
  const PosLexicon lex = noun_lexicon();
  SweepConfig cfg;
  cfg.layers = {1};
  cfg.taus = {2.0, 5.0};
  cfg.source = MemorySource::kRandomPos;
  cfg.pos = PartOfSpeech::kNouns;
  cfg.seed = 123;
  const auto pairs = sample_pairs();
  const std::string a = sweep_csv(run_injection_sweep(m, pairs, cfg, &lex));
  const std::string b = sweep_csv(run_injection_sweep(m, pairs, cfg, &lex));
  EXPECT_EQ(a, b);
  cfg.seed = 124;
  EXPECT_NE(a, sweep_csv(run_injection_sweep(m, pairs, cfg, &lex)));
}

TEST(Sweep, ParallelAgreesWithSerial) {
  const Model& m = small_model(ProcessingMode::kProcessed);
  const PosLexicon lex = noun_lexicon();
  SweepConfig cfg;
  cfg.layers = {0, 1, 2};
  cfg.taus = {3.0};
  cfg.source = MemorySource::kRandomPos;
  cfg.seed = 5;
  cfg.injection.style = EncodingStyle::kLayerWise;
  const auto pairs = sample_pairs();
  const SweepGrid serial = run_injection_sweep(m, pairs, cfg, &lex);
  cfg.workers = 4;
  const SweepGrid par = run_injection_sweep(m, pairs, cfg, &lex);
  for (std::size_t c = 0; c < serial.cells.size(); ++c) {
    EXPECT_NEAR(serial.cells[c].robust_mean, par.cells[c].robust_mean, 1e-6);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      EXPECT_EQ(serial.cells[c].results[p].memory, par.cells[c].results[p].memory);
    }
  }
}

TEST(Sweep, Errors) {
  const Model& m = small_model();
  SweepConfig cfg;
  cfg.layers = {3};
  cfg.taus = {1.0};
  EXPECT_THROW(run_injection_sweep(m, sample_pairs(), cfg), InvalidArgument);
  cfg.layers = {0};
  cfg.taus = {-1.0};
  EXPECT_THROW(run_injection_sweep(m, sample_pairs(), cfg), InvalidArgument);
  cfg.taus = {1.0};
  cfg.source = MemorySource::kRandomPos;
  EXPECT_THROW(run_injection_sweep(m, sample_pairs(), cfg), InvalidArgument);
  cfg.source = MemorySource::kFixedWord;
  EXPECT_THROW(run_injection_sweep(m, sample_pairs(), cfg), InvalidArgument);
}

TEST(RandomInjection, TopWordsPerPart) {
  const Model& m = small_model();
  PosLexicon lex = noun_lexicon();
  lex.set(PartOfSpeech::kConjunctions, {"and", "but", "or"});
  RandomInjectionConfig cfg;
  cfg.layer = 1;
  cfg.tau = 3.0;
  cfg.parts = {PartOfSpeech::kNouns, PartOfSpeech::kConjunctions};
  cfg.words_per_pos = 2;
  const auto pairs = sample_pairs();
  const auto results = run_random_injection(m, pairs, cfg, lex);
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(results[1].words, (std::vector<std::string>{"and", "but"}));
  EXPECT_EQ(results[0].percent_diffs.size(), 2 * pairs.size());
  EXPECT_EQ(results[0].robust.mean, robust_mean(results[0].percent_diffs).mean);
}

TEST(SweepJson, EmbedsConfigAndCells) {
  const Model& m = small_model();
  SweepConfig cfg;
  cfg.layers = {0};
  cfg.taus = {1.0};
  const auto pairs = sample_pairs();
  const SweepGrid g = run_injection_sweep(m, pairs, cfg);
  const std::string json = sweep_json(g, pairs, R"({"seed": 7})");
  EXPECT_NE(json.find("\"seed\": 7"), std::string::npos);
  EXPECT_NE(json.find("\"percent_diff\""), std::string::npos);
  EXPECT_THROW(sweep_json(g, pairs, "{broken"), InvalidArgument);

  reasonlens::testing::TempDir dir;
  write_sweep(dir / "grid.csv", g, pairs, "{}");
  EXPECT_TRUE(std::filesystem::exists(dir / "grid.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "grid.json"));
}
