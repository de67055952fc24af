#include "reasonlens/experiments.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>

#include "json.hpp"
#include "reasonlens/errors.hpp"
#include "reasonlens/io.hpp"
#include "reasonlens/parallel.hpp"

namespace reasonlens {
namespace {

using ordered_json = nlohmann::ordered_json;

struct PreparedPrompt {
  TokenSequence tokens;
  TokenId answer = 0;
};

std::vector<PreparedPrompt> prepare(const Model& model, const std::vector<PromptPair>& pairs,
                                    const ScoringOptions& scoring) {
  std::vector<PreparedPrompt> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      out.push_back({prompt_tokens(model, pairs[i].multi_hop, scoring),
                     answer_token(model, pairs[i].answer, scoring)});
    } catch (const Error& e) {
      throw InvalidArgument("prompt " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

double token_probability(const Model& model, const TokenSequence& tokens, TokenId answer,
                         const ForwardOptions& base = {}) {
  ForwardOptions opts = base;
  opts.logits = LogitScope::kLast;
  const Tensor dist = next_token_distribution(forward(model, tokens, opts).logits);
  return dist[static_cast<std::size_t>(answer)];
}

class ProgressCounter {
 public:
  ProgressCounter(const ProgressFn& fn, std::size_t total) : fn_(fn), total_(total) {}
  void tick() {
    const std::size_t done = ++done_;
    if (!fn_) return;
    std::lock_guard<std::mutex> lock(mu_);
    fn_(done, total_);
  }

 private:
  const ProgressFn& fn_;
  std::size_t total_;
  std::atomic<std::size_t> done_{0};
  std::mutex mu_;
};

struct InjectionItem {
  std::size_t prompt;
  int layer;
  double tau;
  std::string memory;
};

// p_post for each item. Memories are encoded once per distinct
// (text, layer-if-layer-wise) before the injections are dispatched.
std::vector<double> evaluate_injections(const Model& model,
                                        const std::vector<PreparedPrompt>& prompts,
                                        const std::vector<InjectionItem>& items,
                                        const InjectionSettings& settings, std::size_t workers,
                                        const ProgressFn& progress) {
  const bool per_layer = settings.style == EncodingStyle::kLayerWise;
  std::map<std::pair<std::string, int>, std::size_t> key_index;
  std::vector<std::pair<std::string, int>> keys;
  std::vector<std::size_t> item_key(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto key = std::make_pair(items[i].memory, per_layer ? items[i].layer : -1);
    auto [it, inserted] = key_index.emplace(key, keys.size());
    if (inserted) keys.push_back(key);
    item_key[i] = it->second;
  }
  std::vector<Tensor> encoded(keys.size());
  parallel_for(keys.size(), workers, [&](std::size_t k) {
    try {
      encoded[k] = encode_memory(model, keys[k].first, settings.style, std::max(keys[k].second, 0),
                                 settings.encode)
                       .vector;
    } catch (const Error& e) {
      throw InvalidArgument("memory '" + keys[k].first + "': " + e.what());
    }
  });

  std::vector<double> p_post(items.size());
  ProgressCounter counter(progress, items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    const InjectionItem& item = items[i];
    try {
      InjectionSpec spec;
      spec.layer = item.layer;
      spec.tau = static_cast<float>(item.tau);
      spec.memory = encoded[item_key[i]];
      spec.broadcast = settings.broadcast;
      spec.head = settings.head;
      ForwardOptions opts;
      opts.interventions.push_back(injection_hook(model, spec));
      const PreparedPrompt& p = prompts[item.prompt];
      p_post[i] = token_probability(model, p.tokens, p.answer, opts);
    } catch (const Error& e) {
      char where[96];
      std::snprintf(where, sizeof where, "prompt %zu (layer %d, tau %g): ", item.prompt,
                    item.layer, item.tau);
      throw InvalidArgument(where + std::string(e.what()));
    }
    counter.tick();
  });
  return p_post;
}

std::vector<double> baseline_probabilities(const Model& model,
                                           const std::vector<PreparedPrompt>& prompts,
                                           std::size_t workers) {
  std::vector<double> p(prompts.size());
  parallel_for(prompts.size(), workers, [&](std::size_t i) {
    p[i] = token_probability(model, prompts[i].tokens, prompts[i].answer);
  });
  return p;
}

std::string memory_text(const std::string& raw, const InjectionSettings& settings) {
  return settings.memory_leading_space ? with_leading_space(raw) : raw;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

ordered_json parse_config(const std::string& config_json) {
  if (config_json.empty()) return ordered_json::object();
  try {
    return ordered_json::parse(config_json);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("run configuration is not valid JSON: ") + e.what());
  }
}

}  // namespace

std::string with_leading_space(const std::string& s) {
  return (!s.empty() && s.front() == ' ') ? s : " " + s;
}

TokenSequence prompt_tokens(const Model& model, const std::string& prompt,
                            const ScoringOptions& options) {
  TokenSequence ids;
  if (options.prepend_bos) {
    auto bos = model.tokenizer().find("<|endoftext|>");
    if (!bos) throw InvalidArgument("vocabulary has no <|endoftext|> token for BOS");
    ids.push_back(*bos);
  }
  const TokenSequence body = model.tokenizer().encode(prompt);
  ids.insert(ids.end(), body.begin(), body.end());
  if (ids.empty()) throw InvalidArgument("prompt tokenizes to nothing");
  return ids;
}

TokenId answer_token(const Model& model, const std::string& answer,
                     const ScoringOptions& options) {
  if (answer.empty()) throw InvalidArgument("answer is empty");
  const TokenSequence ids = model.tokenizer().encode(
      options.answer_leading_space ? with_leading_space(answer) : answer);
  return ids.front();
}

double answer_probability(const Model& model, const std::string& prompt,
                          const std::string& answer, const ScoringOptions& options) {
  return token_probability(model, prompt_tokens(model, prompt, options),
                           answer_token(model, answer, options));
}

double surprisal(double p, LogBase base) {
  if (!(p > 0.0) || p > 1.0) {
    throw InvalidArgument("surprisal needs 0 < p <= 1, got " + fmt("%g", p));
  }
  const double nats = -std::log(p);
  return base == LogBase::kNatural ? nats : nats / std::log(2.0);
}

double percent_difference(double p_pre, double p_post) {
  if (!(p_pre > 0.0)) {
    throw InvalidArgument("percent difference needs p_pre > 0, got " + fmt("%g", p_pre));
  }
  return 100.0 * (p_post - p_pre) / p_pre;
}

RobustMean robust_mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("robust_mean of an empty list");
  const double n = static_cast<double>(values.size());
  double mu = 0.0;
  for (double v : values) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / n);
  const double lo = mu - 2.0 * sigma, hi = mu + 2.0 * sigma;
  RobustMean out;
  double kept_sum = 0.0;
  std::size_t kept = 0;
  for (double v : values) {
    if (v < lo || v > hi) {
      ++out.n_excluded;
    } else {
      kept_sum += v;
      ++kept;
    }
  }
  out.mean = kept_sum / static_cast<double>(kept);
  return out;
}

DatasetStats dataset_stats(const Model& model, const std::vector<PromptPair>& pairs,
                           const ScoringOptions& options, std::size_t workers, LogBase base) {
  DatasetStats st;
  st.n_pairs = pairs.size();
  if (pairs.empty()) return st;
  struct Row {
    double ps, pm;
    std::size_t ls, lm;
  };
  std::vector<Row> rows(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    const PromptPair& p = pairs[i];
    const TokenId ans = answer_token(model, p.answer, options);
    rows[i].ps = token_probability(model, prompt_tokens(model, p.single_hop, options), ans);
    rows[i].pm = token_probability(model, prompt_tokens(model, p.multi_hop, options), ans);
    rows[i].ls = model.tokenizer().encode(p.single_hop).size();
    rows[i].lm = model.tokenizer().encode(p.multi_hop).size();
  });
  for (const Row& r : rows) {
    st.single_prob += r.ps;
    st.multi_prob += r.pm;
    st.single_surprisal += surprisal(r.ps, base);
    st.multi_surprisal += surprisal(r.pm, base);
    st.single_tokens += static_cast<double>(r.ls);
    st.multi_tokens += static_cast<double>(r.lm);
  }
  const double n = static_cast<double>(pairs.size());
  st.single_prob /= n;
  st.multi_prob /= n;
  st.single_surprisal /= n;
  st.multi_surprisal /= n;
  st.single_tokens /= n;
  st.multi_tokens /= n;
  return st;
}

MemorySource parse_memory_source(const std::string& name) {
  if (name == "curated") return MemorySource::kCurated;
  if (name == "fixed") return MemorySource::kFixedWord;
  if (name == "random") return MemorySource::kRandomPos;
  throw InvalidArgument("memory source must be curated, fixed or random, got '" + name + "'");
}

std::string to_string(MemorySource source) {
  switch (source) {
    case MemorySource::kCurated:
      return "curated";
    case MemorySource::kFixedWord:
      return "fixed";
    case MemorySource::kRandomPos:
      return "random";
  }
  return "unknown";
}

SweepGrid run_injection_sweep(const Model& model, const std::vector<PromptPair>& pairs,
                              const SweepConfig& config, const PosLexicon* lexicon,
                              const ProgressFn& progress) {
  const ModelConfig& cfg = model.config();
  if (config.layers.empty() || config.taus.empty()) {
    throw InvalidArgument("sweep needs at least one layer and one tau");
  }
  for (int l : config.layers) {
    if (l < 0 || static_cast<std::size_t>(l) >= cfg.n_layer) {
      throw InvalidArgument("sweep layer " + std::to_string(l) + " outside [0, " +
                            std::to_string(cfg.n_layer) + ")");
    }
  }
  for (double t : config.taus) {
    if (!(t >= 0.0)) throw InvalidArgument("sweep tau must be >= 0, got " + fmt("%g", t));
  }
  if (config.source == MemorySource::kFixedWord && config.fixed_word.empty()) {
    throw InvalidArgument("fixed-word sweep needs a memory word");
  }
  if (config.source == MemorySource::kRandomPos && !lexicon) {
    throw InvalidArgument("random-word sweep needs a part-of-speech lexicon");
  }

  const auto prompts = prepare(model, pairs, config.injection.scoring);
  SweepGrid grid;
  grid.p_pre = baseline_probabilities(model, prompts, config.workers);

  std::optional<WordSampler> sampler;
  if (config.source == MemorySource::kRandomPos) sampler.emplace(*lexicon, config.pos, config.seed);

  std::vector<InjectionItem> items;
  items.reserve(config.layers.size() * config.taus.size() * pairs.size());
  for (int l : config.layers) {
    for (double t : config.taus) {
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        std::string raw;
        switch (config.source) {
          case MemorySource::kCurated:
            raw = pairs[p].memory;
            break;
          case MemorySource::kFixedWord:
            raw = config.fixed_word;
            break;
          case MemorySource::kRandomPos:
            raw = sampler->next();
            break;
        }
        items.push_back({p, l, t, memory_text(raw, config.injection)});
      }
    }
  }

  const auto p_post =
      evaluate_injections(model, prompts, items, config.injection, config.workers, progress);

  std::size_t k = 0;
  for (int l : config.layers) {
    for (double t : config.taus) {
      SweepCell cell;
      cell.layer = l;
      cell.tau = t;
      std::vector<double> diffs;
      for (std::size_t p = 0; p < pairs.size(); ++p, ++k) {
        PromptResult r;
        r.prompt = p;
        r.memory = items[k].memory;
        r.p_pre = grid.p_pre[p];
        r.p_post = p_post[k];
        try {
          r.percent_diff = percent_difference(r.p_pre, r.p_post);
        } catch (const Error& e) {
          throw InvalidArgument("prompt " + std::to_string(p) + ": " + e.what());
        }
        diffs.push_back(r.percent_diff);
        cell.results.push_back(std::move(r));
      }
      if (!diffs.empty()) {
        const RobustMean rm = robust_mean(diffs);
        cell.robust_mean = rm.mean;
        cell.n_excluded = rm.n_excluded;
      }
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

SweepGrid run_pos_sweep(const Model& model, const std::vector<PromptPair>& pairs,
                        std::vector<int> layers, std::vector<double> taus, PartOfSpeech pos,
                        std::uint64_t seed, const PosLexicon& lexicon,
                        const InjectionSettings& injection, std::size_t workers,
                        const ProgressFn& progress) {
  SweepConfig config;
  config.layers = std::move(layers);
  config.taus = std::move(taus);
  config.injection = injection;
  config.source = MemorySource::kRandomPos;
  config.pos = pos;
  config.seed = seed;
  config.workers = workers;
  return run_injection_sweep(model, pairs, config, &lexicon, progress);
}

std::vector<PosInjectionResult> run_random_injection(const Model& model,
                                                     const std::vector<PromptPair>& pairs,
                                                     const RandomInjectionConfig& config,
                                                     const PosLexicon& lexicon,
                                                     const ProgressFn& progress) {
  if (pairs.empty()) throw InvalidArgument("random injection needs at least one prompt pair");
  const auto prompts = prepare(model, pairs, config.injection.scoring);
  const auto p_pre = baseline_probabilities(model, prompts, config.workers);

  std::vector<PosInjectionResult> results;
  std::vector<InjectionItem> items;
  for (PartOfSpeech pos : config.parts) {
    PosInjectionResult r;
    r.pos = pos;
    r.words = sample_pos_words(lexicon, pos, config.words_per_pos, SampleMode::kTopN);
    for (const auto& w : r.words) {
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        items.push_back({p, config.layer, config.tau, memory_text(w, config.injection)});
      }
    }
    results.push_back(std::move(r));
  }
  const auto p_post =
      evaluate_injections(model, prompts, items, config.injection, config.workers, progress);

  std::size_t k = 0;
  for (auto& r : results) {
    for (std::size_t w = 0; w < r.words.size(); ++w) {
      for (std::size_t p = 0; p < pairs.size(); ++p, ++k) {
        r.percent_diffs.push_back(percent_difference(p_pre[p], p_post[k]));
      }
    }
    if (!r.percent_diffs.empty()) r.robust = robust_mean(r.percent_diffs);
  }
  return results;
}

FlopReport flops_for_encoding(EncodingStyle style, double n_ctx, const ModelConfig& config) {
  if (!(n_ctx > 0.0)) throw InvalidArgument("n_ctx must be > 0");
  FlopReport r;
  r.style = style;
  r.n_ctx = n_ctx;
  r.d_model = config.d_model;
  r.n_layer = config.n_layer;
  r.d_attn = config.d_model;
  r.d_ff = 4 * config.d_model;
  const double d = static_cast<double>(r.d_model);
  const double layers = static_cast<double>(r.n_layer);
  if (style == EncodingStyle::kLayerWise) {
    r.embed_flop = n_ctx * 4.0 * d;
    r.n_params = 2.0 * d * layers * (2.0 * static_cast<double>(r.d_attn) +
                                     static_cast<double>(r.d_ff));
    r.ff_flop = 2.0 * r.n_params + 2.0 * layers * n_ctx * static_cast<double>(r.d_attn);
    r.total_flops = r.embed_flop + r.ff_flop;
  } else {
    r.embed_flop = n_ctx * d;
    r.total_flops = r.embed_flop;
  }
  return r;
}

std::string sweep_csv(const SweepGrid& grid) {
  std::string out = "layer,tau,robust_mean_pct,n_prompts,n_excluded\n";
  for (const auto& c : grid.cells) {
    out += std::to_string(c.layer) + "," + fmt("%.17g", c.tau) + "," +
           fmt("%.17g", c.robust_mean) + "," + std::to_string(c.results.size()) + "," +
           std::to_string(c.n_excluded) + "\n";
  }
  return out;
}

std::string sweep_json(const SweepGrid& grid, const std::vector<PromptPair>& pairs,
                       const std::string& config_json) {
  ordered_json j;
  j["config"] = parse_config(config_json);
  ordered_json prompts = ordered_json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    prompts.push_back({{"multi_hop", pairs[i].multi_hop},
                       {"answer", pairs[i].answer},
                       {"p_pre", i < grid.p_pre.size() ? grid.p_pre[i] : 0.0}});
  }
  j["prompts"] = std::move(prompts);
  ordered_json cells = ordered_json::array();
  for (const auto& c : grid.cells) {
    ordered_json cell;
    cell["layer"] = c.layer;
    cell["tau"] = c.tau;
    cell["robust_mean_pct"] = c.robust_mean;
    cell["n_excluded"] = c.n_excluded;
    ordered_json rows = ordered_json::array();
    for (const auto& r : c.results) {
      rows.push_back({{"prompt", r.prompt},
                      {"memory", r.memory},
                      {"p_post", r.p_post},
                      {"percent_diff", r.percent_diff}});
    }
    cell["results"] = std::move(rows);
    cells.push_back(std::move(cell));
  }
  j["cells"] = std::move(cells);
  return j.dump(1) + "\n";
}

void write_sweep(const std::filesystem::path& csv_path, const SweepGrid& grid,
                 const std::vector<PromptPair>& pairs, const std::string& config_json) {
  auto sidecar = csv_path;
  sidecar.replace_extension(".json");
  if (sidecar == csv_path) sidecar += ".json";
  write_text_atomic(sidecar, sweep_json(grid, pairs, config_json));
  write_text_atomic(csv_path, sweep_csv(grid));
}

std::string flop_report_json(const FlopReport& r, const std::string& config_json) {
  ordered_json j;
  j["config"] = parse_config(config_json);
  j["style"] = to_string(r.style);
  j["n_ctx"] = r.n_ctx;
  j["d_model"] = r.d_model;
  j["n_layer"] = r.n_layer;
  j["d_attn"] = r.d_attn;
  j["d_ff"] = r.d_ff;
  ordered_json terms;
  terms["embed_flop"] = r.embed_flop;
  if (r.style == EncodingStyle::kLayerWise) {
    terms["N"] = r.n_params;
    terms["ff_flop"] = r.ff_flop;
  }
  j["breakdown"] = std::move(terms);
  j["total_flops"] = r.total_flops;
  return j.dump(1) + "\n";
}

}  // namespace reasonlens
