#include <gtest/gtest.h>

#include <cmath>

#include "reasonlens/errors.hpp"
#include "reasonlens/interventions.hpp"
#include "test_support.hpp"

using namespace reasonlens;
using reasonlens::testing::small_model;

namespace {

const Model& raw() { return small_model(ProcessingMode::kRaw); }
const Model& processed() { return small_model(ProcessingMode::kProcessed); }

double l2(const Tensor& t) {
  double s = 0;
  for (float v : t.data()) s += double(v) * v;
  return std::sqrt(s);
}

TokenSequence prompt() {
  return raw().tokenizer().encode("The largest coral reef system in the world is located off the coast of");
}

}  // namespace

TEST(EncodeUnembed, SingleTokenIsColumn) {
  const TokenId t = raw().tokenizer().encode(" Thor").at(0);
  const Tensor b = encode_unembed(raw(), " Thor").vector;
  ASSERT_EQ(raw().tokenizer().encode(" Thor").size(), 1u);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i], raw().weights().wu.at(i, t));
}

TEST(EncodeUnembed, ColumnSumOracle) {
  const auto ids = raw().tokenizer().encode("The Great Barrier Reef");
  Tensor want({raw().config().d_model});
  for (TokenId t : ids)
    for (std::size_t i = 0; i < want.size(); ++i) want[i] += raw().weights().wu.at(i, t);
  const Tensor got = encode_unembed(raw(), "The Great Barrier Reef").vector;
  EXPECT_NEAR(l2(got), l2(want), 1e-6);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
}

TEST(EncodeUnembed, DuplicateTokensDouble) {
  const TokenId t = raw().tokenizer().encode(" Thor").at(0);
  const TokenSequence two{t, t};
  const Tensor one = unembed_bag(raw(), TokenSequence{t});
  const Tensor b = unembed_bag(raw(), two);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i], 2.0f * one[i]);
  const Tensor clamped = unembed_bag(raw(), two, true);
  EXPECT_EQ(clamped, one);
}

TEST(EncodeUnembed, LinearInTokenConcatenation) {
  const auto a = raw().tokenizer().encode(" Great Barrier");
  const auto b = raw().tokenizer().encode(" Reef Australia");
  TokenSequence ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  for (const Model* m : {&raw(), &processed()}) {
    const Tensor sum = add(unembed_bag(*m, a), unembed_bag(*m, b));
    const Tensor joint = unembed_bag(*m, ab);
    for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR(joint[i], sum[i], 1e-6);
    const Tensor esum = add(embed_bag(*m, a), embed_bag(*m, b));
    const Tensor ejoint = embed_bag(*m, ab);
    for (std::size_t i = 0; i < esum.size(); ++i) EXPECT_NEAR(ejoint[i], esum[i], 1e-6);
  }
}

TEST(EncodeMemory, EmptyMemoryRejected) {
  EXPECT_THROW(encode_unembed(raw(), ""), InvalidArgument);
  EXPECT_THROW(encode_embed(raw(), ""), InvalidArgument);
  EXPECT_THROW(encode_layerwise(raw(), "", 1), InvalidArgument);
}

TEST(EncodeEmbed, SingleTokenIsRow) {
  const TokenId t = raw().tokenizer().encode(" Thor").at(0);
  const Tensor b = encode_embed(raw(), " Thor").vector;
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i], raw().weights().wte.at(t, i));
}

TEST(EncodeEmbed, EqualsUnembedForTiedRawWeights) {
  const Tensor u = encode_unembed(raw(), " The Great Barrier Reef").vector;
  const Tensor e = encode_embed(raw(), " The Great Barrier Reef").vector;
  EXPECT_EQ(u, e);
}

TEST(EncodeEmbed, DiffersFromUnembedAfterProcessing) {
  const Tensor u = encode_unembed(processed(), " The Great Barrier Reef").vector;
  const Tensor e = encode_embed(processed(), " The Great Barrier Reef").vector;
  EXPECT_GT(std::abs(l2(u) - l2(e)), 1e-4);
}

TEST(EncodeLayerwise, LayerZeroIsEmbeddingOfLastToken) {
  const auto ids = raw().tokenizer().encode(" The Great Barrier Reef");
  const Tensor b = encode_layerwise(raw(), " The Great Barrier Reef", 0).vector;
  const auto& w = raw().weights();
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(b[i], w.wte.at(ids.back(), i) + w.wpe.at(ids.size() - 1, i));
  }
}

TEST(EncodeLayerwise, MatchesCachedResidual) {
  const std::string mem = " The Great Barrier Reef";
  const auto ids = raw().tokenizer().encode(mem);
  ForwardOptions opts;
  opts.captures.push_back(HookPoint::resid_post(1));
  const ForwardResult r = forward(raw(), ids, opts);
  const Tensor want = r.cache.get(HookPoint::resid_post(1)).row_copy(ids.size() - 1);
  const EncodedMemory got = encode_layerwise(raw(), mem, 2);
  EXPECT_EQ(got.vector, want);
  EXPECT_EQ(got.layer, 2);
  EXPECT_EQ(got.style, EncodingStyle::kLayerWise);
}

TEST(EncodeLayerwise, DependsOnLayer) {
  const Tensor a = encode_layerwise(raw(), " Thor Odin", 1).vector;
  const Tensor b = encode_layerwise(raw(), " Thor Odin", 2).vector;
  EXPECT_NE(a, b);
  EXPECT_THROW(encode_layerwise(raw(), " Thor", 3), InvalidArgument);
  EXPECT_THROW(encode_layerwise(raw(), " Thor", -1), InvalidArgument);
}

TEST(EncodeLayerwise, MeanPooling) {
  const auto ids = raw().tokenizer().encode(" Thor Odin");
  const Tensor r = forward(raw(), ids, ForwardOptions{{}, {}, LogitScope::kAll, 1}).residual;
  const Tensor b = layerwise_vector(raw(), ids, 1, Pooling::kMean);
  for (std::size_t c = 0; c < b.size(); ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < r.rows(); ++i) mean += r.at(i, c);
    EXPECT_NEAR(b[c], mean / r.rows(), 1e-6);
  }
}

TEST(Inject, TauZeroIsNoOp) {
  const auto tokens = prompt();
  const Tensor plain = next_token_distribution(forward(raw(), tokens).logits);
  InjectionSpec spec{1, 0.0f, encode_unembed(raw(), " The Great Barrier Reef").vector};
  const Tensor injected = next_token_distribution(inject(raw(), tokens, spec).logits);
  for (std::size_t i = 0; i < plain.size(); ++i) ASSERT_NEAR(plain[i], injected[i], 1e-6);
}

TEST(Inject, ChangesOutputAndIsBroadcast) {
  const auto tokens = prompt();
  InjectionSpec spec{1, 4.0f, encode_unembed(raw(), " The Great Barrier Reef").vector};
  ForwardOptions opts;
  opts.captures.push_back(HookPoint::attn_sum(1));
  const ForwardResult plain = forward(raw(), tokens, opts);
  const ForwardResult inj = inject(raw(), tokens, spec, opts);
  const Tensor& a0 = plain.cache.get(HookPoint::attn_sum(1));
  const Tensor& a1 = inj.cache.get(HookPoint::attn_sum(1));
  for (std::size_t i = 0; i < a0.rows(); ++i)
    for (std::size_t c = 0; c < a0.cols(); ++c)
      EXPECT_NEAR(a1.at(i, c) - a0.at(i, c), 4.0f * spec.memory[c], 1e-5);
  EXPECT_NE(plain.logits, inj.logits);
}

TEST(Inject, LastPositionOnly) {
  const auto tokens = prompt();
  InjectionSpec spec{0, 3.0f, encode_embed(raw(), " Reef").vector, Broadcast::kLast};
  ForwardOptions opts;
  opts.captures.push_back(HookPoint::attn_sum(0));
  const ForwardResult plain = forward(raw(), tokens, opts);
  const ForwardResult inj = inject(raw(), tokens, spec, opts);
  const Tensor& a0 = plain.cache.get(HookPoint::attn_sum(0));
  const Tensor& a1 = inj.cache.get(HookPoint::attn_sum(0));
  const std::size_t n = tokens.size();
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t c = 0; c < a0.cols(); ++c) EXPECT_EQ(a1.at(i, c), a0.at(i, c));
  // Earlier positions' logits are untouched because attention is causal.
  for (std::size_t v = 0; v < 100; ++v) EXPECT_EQ(inj.logits.at(0, v), plain.logits.at(0, v));
}

TEST(Inject, PerHead) {
  const auto tokens = prompt();
  InjectionSpec spec{1, 2.0f, encode_unembed(raw(), " Reef").vector};
  spec.head = 3;
  ForwardOptions opts;
  opts.captures = {HookPoint::head_output(1, 3), HookPoint::head_output(1, 2)};
  const ForwardResult plain = forward(raw(), tokens, opts);
  const ForwardResult inj = inject(raw(), tokens, spec, opts);
  EXPECT_EQ(plain.cache.get(HookPoint::head_output(1, 2)), inj.cache.get(HookPoint::head_output(1, 2)));
  const Tensor& h0 = plain.cache.get(HookPoint::head_output(1, 3));
  const Tensor& h1 = inj.cache.get(HookPoint::head_output(1, 3));
  for (std::size_t c = 0; c < h0.cols(); ++c) EXPECT_NEAR(h1.at(2, c) - h0.at(2, c), 2.0f * spec.memory[c], 1e-5);
}

TEST(Inject, LocalityBelowInjectionLayer) {
  const auto tokens = prompt();
  InjectionSpec spec{2, 5.0f, encode_unembed(raw(), " Reef").vector};
  ForwardOptions opts;
  opts.captures = {HookPoint::resid_post(0), HookPoint::resid_post(1), HookPoint::attn_sum(0),
                   HookPoint::mlp_out(1)};
  const ForwardResult plain = forward(raw(), tokens, opts);
  const ForwardResult inj = inject(raw(), tokens, spec, opts);
  for (const auto& p : opts.captures) EXPECT_EQ(plain.cache.get(p), inj.cache.get(p)) << p.to_string();
}

TEST(Inject, TauContinuity) {
  const auto tokens = prompt();
  const Tensor plain = next_token_distribution(forward(raw(), tokens).logits);
  const Tensor mem = encode_unembed(raw(), " The Great Barrier Reef").vector;
  double previous = 1e9;
  for (float tau : {1e-3f, 1e-4f, 1e-5f}) {
    const Tensor p = next_token_distribution(inject(raw(), tokens, {1, tau, mem}).logits);
    double worst = 0;
    for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, double(std::abs(p[i] - plain[i])));
    EXPECT_LE(worst, previous);
    previous = worst;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(Inject, StylesAgreeForTiedRawWeights) {
  const auto tokens = prompt();
  const InjectionSpec u{1, 4.0f, encode_unembed(raw(), " Reef").vector};
  const InjectionSpec e{1, 4.0f, encode_embed(raw(), " Reef").vector};
  EXPECT_EQ(inject(raw(), tokens, u).logits, inject(raw(), tokens, e).logits);
}

TEST(Inject, InvalidSpecs) {
  const auto tokens = prompt();
  const Tensor mem = encode_unembed(raw(), " Reef").vector;
  EXPECT_THROW(inject(raw(), tokens, {3, 1.0f, mem}), InvalidArgument);
  EXPECT_THROW(inject(raw(), tokens, {-1, 1.0f, mem}), InvalidArgument);
  EXPECT_THROW(inject(raw(), tokens, {0, -1.0f, mem}), InvalidArgument);
  EXPECT_THROW(inject(raw(), tokens, {0, 1.0f, Tensor({5})}), InvalidArgument);
  InjectionSpec bad_head{0, 1.0f, mem};
  bad_head.head = 4;
  EXPECT_THROW(inject(raw(), tokens, bad_head), InvalidArgument);
}

TEST(EncodingStyle, Parse) {
  EXPECT_EQ(parse_encoding_style("layerwise"), EncodingStyle::kLayerWise);
  EXPECT_EQ(to_string(EncodingStyle::kEmbed), "embed");
  EXPECT_THROW(parse_encoding_style("rotary"), InvalidArgument);
  EXPECT_EQ(parse_broadcast("last"), Broadcast::kLast);
  EXPECT_THROW(parse_broadcast("some"), InvalidArgument);
}
