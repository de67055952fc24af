#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "reasonlens/errors.hpp"
#include "reasonlens/lens.hpp"
#include "test_support.hpp"

using namespace reasonlens;
using reasonlens::testing::small_model;

namespace {

// Independent double-precision KL oracle on a double copy of the matrix.
double oracle_kl(const std::vector<double>& m, std::size_t d, std::size_t v,
                 const std::vector<double>& x, const std::vector<double>& q, KlDirection dir) {
  std::vector<double> z(v, 0.0);
  for (std::size_t c = 0; c < v; ++c)
    for (std::size_t i = 0; i < d; ++i) z[c] += x[i] * m[i * v + c];
  double mx = z[0];
  for (double zi : z) mx = std::max(mx, zi);
  double s = 0;
  for (double zi : z) s += std::exp(zi - mx);
  double loss = 0;
  for (std::size_t c = 0; c < v; ++c) {
    const double logp = z[c] - mx - std::log(s);
    if (dir == KlDirection::kLensModel) {
      loss += std::exp(logp) * (logp - std::log(q[c]));
    } else {
      loss += q[c] * (std::log(q[c]) - logp);
    }
  }
  return loss;
}

struct Instance {
  Lens lens;
  Tensor x;
  Tensor q;
};

Instance random_instance(std::mt19937& rng, std::size_t d, std::size_t v) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Instance in;
  in.lens.matrix = Tensor({d, v});
  for (float& w : in.lens.matrix.data()) w = n(rng);
  in.x = Tensor({d});
  for (float& w : in.x.data()) w = n(rng);
  Tensor logits({1, v});
  for (float& w : logits.data()) w = n(rng);
  in.q = row_softmax(logits).reshaped({v});
  return in;
}

}  // namespace

TEST(LensGradient, MatchesFiniteDifferences) {
  std::mt19937 rng(2024);
  const std::size_t d = 4, v = 6;
  for (KlDirection dir : {KlDirection::kLensModel, KlDirection::kModelLens}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Instance in = random_instance(rng, d, v);
      const LossAndGrad lg = lens_loss_and_grad(in.lens, in.x, in.q, dir);
      std::vector<double> m(in.lens.matrix.data().begin(), in.lens.matrix.data().end());
      const std::vector<double> x(in.x.data().begin(), in.x.data().end());
      const std::vector<double> q(in.q.data().begin(), in.q.data().end());
      EXPECT_NEAR(lg.loss, oracle_kl(m, d, v, x, q, dir), 1e-6);

      double num = 0, den = 0;
      for (std::size_t k = 0; k < m.size(); ++k) {
        const double h = 1e-5, saved = m[k];
        m[k] = saved + h;
        const double up = oracle_kl(m, d, v, x, q, dir);
        m[k] = saved - h;
        const double down = oracle_kl(m, d, v, x, q, dir);
        m[k] = saved;
        const double fd = (up - down) / (2 * h);
        num += (lg.grad[k] - fd) * (lg.grad[k] - fd);
        den += fd * fd;
      }
      EXPECT_LT(std::sqrt(num / den), 1e-4) << to_string(dir) << " trial " << trial;
    }
  }
}

TEST(LensLoss, NonNegativeAndZeroAtModel) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng, 4, 6);
    EXPECT_GE(lens_loss(in.lens, in.x, in.q), 0.0);
    EXPECT_GE(lens_loss(in.lens, in.x, in.q, KlDirection::kModelLens), 0.0);
  }
  // Identity matrix with x = log q reproduces q exactly.
  Instance in = random_instance(rng, 6, 6);
  in.lens.matrix = Tensor({6, 6});
  for (std::size_t i = 0; i < 6; ++i) {
    in.lens.matrix.at(i, i) = 1.0f;
    in.x[i] = std::log(in.q[i]);
  }
  EXPECT_NEAR(lens_loss(in.lens, in.x, in.q), 0.0, 1e-7);
  EXPECT_NEAR(lens_loss(in.lens, in.x, in.q, KlDirection::kModelLens), 0.0, 1e-7);
}

TEST(LensLoss, RejectsUnnormalizedDistribution) {
  std::mt19937 rng(6);
  Instance in = random_instance(rng, 4, 6);
  in.q[0] += 0.01f;
  EXPECT_THROW(lens_loss(in.lens, in.x, in.q), InvalidArgument);
  EXPECT_THROW(lens_loss(in.lens, in.x, Tensor({5})), DimensionError);
}

TEST(TopK, OrderAndTies) {
  const Tensor d = Tensor::vector({0.1f, 0.3f, 0.3f, 0.2f, 0.1f});
  const auto top = top_k(d, 4);
  ASSERT_EQ(top.size(), 4u);
  EXPECT_EQ(top[0].id, 1);
  EXPECT_EQ(top[1].id, 2);
  EXPECT_EQ(top[2].id, 3);
  EXPECT_EQ(top[3].id, 0);
  EXPECT_TRUE(top_k(d, 0).empty());
  EXPECT_THROW(top_k(d, 6), InvalidArgument);
}

TEST(VocabProjection, ZeroInputIsUniform) {
  const Tensor& wu = small_model(ProcessingMode::kRaw).weights().wu;
  const std::vector<float> zero(wu.rows(), 0.0f);
  const Tensor p = vocab_projection(zero, wu);
  for (float v : p.data()) ASSERT_FLOAT_EQ(v, 1.0f / wu.cols());
}

TEST(ProjectHead, UnembeddingLensMatchesFixedProjection) {
  const Model& m = small_model(ProcessingMode::kProcessed);
  const auto ids = m.tokenizer().encode("The Eiffel Tower is located in the city of");
  ForwardOptions opts;
  opts.captures.push_back(HookPoint::head_output(2, 1));
  const ForwardResult r = forward(m, ids, opts);
  const HeadProjection hp = project_head(m, r.cache, 2, 1, 5);
  const Lens lens = init_lens(m, 2, 1);
  const Tensor h = r.cache.get(HookPoint::head_output(2, 1)).row_copy(ids.size() - 1);
  EXPECT_EQ(lens_apply(lens, h), hp.distribution);
  ASSERT_EQ(hp.top.size(), 5u);
  EXPECT_FALSE(hp.top[0].token.empty());
  EXPECT_GE(hp.top[0].probability, hp.top[4].probability);
  EXPECT_THROW(init_lens(m, 3, 0), InvalidArgument);
}

TEST(KlDirection, Parse) {
  EXPECT_EQ(parse_kl_direction("model||lens"), KlDirection::kModelLens);
  EXPECT_EQ(to_string(KlDirection::kLensModel), "lens||model");
  EXPECT_THROW(parse_kl_direction("forward"), InvalidArgument);
}

namespace {

std::vector<std::string> small_corpus() {
  return {"The quick brown fox jumps over the lazy dog.",
          "Paris is the capital of France.",
          "Rain is expected later this week across the region.",
          "She opened the door and walked into the garden.",
          "Numbers like 42 and 1024 show up everywhere.",
          "The museum reopened after a long renovation."};
}

LensTrainingConfig small_training(std::size_t steps, float lr) {
  LensTrainingConfig cfg;
  cfg.heads = {{1, 2}, {2, 0}};
  cfg.steps = steps;
  cfg.learning_rate = lr;
  cfg.batch_size = 3;
  cfg.seed = 9;
  cfg.corpus_id = "unit";
  return cfg;
}

}  // namespace

TEST(TrainLenses, ZeroLearningRateLeavesLensUnchanged) {
  const Model& m = small_model(ProcessingMode::kRaw);
  const auto result = train_lenses(m, small_corpus(), small_training(3, 0.0f));
  ASSERT_EQ(result.lenses.size(), 2u);
  EXPECT_EQ(result.lenses[0].matrix, m.weights().wu);
  EXPECT_EQ(result.lenses[1].matrix, m.weights().wu);
  EXPECT_EQ(result.batch_loss[0].size(), 3u);
}

TEST(TrainLenses, DeterministicAndDecreasing) {
  const Model& m = small_model(ProcessingMode::kRaw);
  const auto corpus = small_corpus();
  auto cfg = small_training(30, 0.5f);
  const auto a = train_lenses(m, corpus, cfg);
  cfg.workers = 3;
  const auto b = train_lenses(m, corpus, cfg);
  EXPECT_EQ(a.lenses[0].matrix, b.lenses[0].matrix);
  EXPECT_EQ(a.batch_loss, b.batch_loss);

  std::vector<LensExample> examples;
  for (const auto& text : corpus) examples.push_back(collect_example(m, text, cfg.heads, 32));
  for (std::size_t h = 0; h < 2; ++h) {
    const double before = mean_kl(init_lens(m, cfg.heads[h].first, cfg.heads[h].second), examples, h);
    const double after = mean_kl(a.lenses[h], examples, h);
    EXPECT_LT(after, before) << "head " << h;
  }
  EXPECT_EQ(a.lenses[1].layer, 2);
  EXPECT_EQ(a.lenses[1].steps, 30u);
}

TEST(TrainLenses, Errors) {
  const Model& m = small_model(ProcessingMode::kRaw);
  EXPECT_THROW(train_lenses(m, {}, small_training(1, 0.1f)), InvalidArgument);
  EXPECT_THROW(collect_example(m, "", {{0, 0}}, 32), InvalidArgument);
}

TEST(Lens, SaveLoadRoundTrip) {
  const Model& m = small_model(ProcessingMode::kRaw);
  Lens lens = init_lens(m, 1, 3);
  lens.steps = 200;
  lens.corpus_id = "c4-sample";
  lens.seed = 77;
  lens.matrix[5] = 0.25f;
  reasonlens::testing::TempDir dir;
  save_lens(lens, dir / "lens.safetensors");
  const Lens back = load_lens(dir / "lens.safetensors");
  EXPECT_EQ(back.matrix, lens.matrix);
  EXPECT_EQ(back.layer, 1);
  EXPECT_EQ(back.head, 3);
  EXPECT_EQ(back.steps, 200u);
  EXPECT_EQ(back.corpus_id, "c4-sample");
  EXPECT_EQ(back.seed, 77u);
}
