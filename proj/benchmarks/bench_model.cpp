#include <benchmark/benchmark.h>

#include <memory>

#include "reasonlens/experiments.hpp"
#include "reasonlens/interventions.hpp"
#include "reasonlens/lens.hpp"
#include "reasonlens/tokenizer.hpp"

using namespace reasonlens;

namespace {

// Random weights in the GPT-2 Small shape; timings do not depend on values.
const Model& gpt2_small() {
  static const Model m = [] {
    const ModelConfig cfg = ModelConfig::gpt2_small();
    ModelWeights w = random_weights(cfg, 7);
    process_weights(w);
    return Model(cfg, std::move(w), ProcessingMode::kProcessed,
                 std::make_shared<const Tokenizer>(Tokenizer::load(REASONLENS_TOKENIZER_DIR)));
  }();
  return m;
}

TokenSequence tokens(std::size_t n) {
  TokenSequence t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<TokenId>((i * 7919) % 50000);
  return t;
}

void BM_Forward(benchmark::State& state) {
  const Model& m = gpt2_small();
  const auto t = tokens(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, t).logits);
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ForwardAllHeads(benchmark::State& state) {
  const Model& m = gpt2_small();
  const auto t = tokens(32);
  ForwardOptions opts;
  for (int l = 0; l < 12; ++l) {
    for (auto p : all_heads(m.config(), l)) opts.captures.push_back(p);
  }
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, t, opts).logits);
}
BENCHMARK(BM_ForwardAllHeads)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  const Model& m = gpt2_small();
  const auto style = static_cast<EncodingStyle>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_memory(m, " The Great Barrier Reef", style, 9).vector);
  }
  state.SetLabel(to_string(style));
}
BENCHMARK(BM_Encode)
    ->Arg(static_cast<int>(EncodingStyle::kUnembed))
    ->Arg(static_cast<int>(EncodingStyle::kEmbed))
    ->Arg(static_cast<int>(EncodingStyle::kLayerWise))
    ->Unit(benchmark::kMicrosecond);

void BM_Inject(benchmark::State& state) {
  const Model& m = gpt2_small();
  const auto t = prompt_tokens(m, "The largest coral reef system in the world is located off the coast of");
  InjectionSpec spec{9, 4.0f, encode_unembed(m, " The Great Barrier Reef").vector};
  for (auto _ : state) benchmark::DoNotOptimize(inject(m, t, spec).logits);
}
BENCHMARK(BM_Inject)->Unit(benchmark::kMillisecond);

void BM_LensLossAndGrad(benchmark::State& state) {
  const Model& m = gpt2_small();
  const Lens lens = init_lens(m, 9, 8);
  Tensor x = Tensor::filled({m.config().d_model}, 0.01f);
  Tensor q = Tensor::filled({m.config().vocab_size}, 1.0f / float(m.config().vocab_size));
  for (auto _ : state) benchmark::DoNotOptimize(lens_loss_and_grad(lens, x, q).loss);
}
BENCHMARK(BM_LensLossAndGrad)->Unit(benchmark::kMillisecond);

}  // namespace
