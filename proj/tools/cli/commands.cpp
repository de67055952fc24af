#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "json.hpp"

#include "reasonlens/errors.hpp"
#include "reasonlens/experiments.hpp"
#include "reasonlens/io.hpp"
#include "reasonlens/lens.hpp"

#ifndef REASONLENS_DEFAULT_TOKENIZER_DIR
#define REASONLENS_DEFAULT_TOKENIZER_DIR ""
#endif

namespace reasonlens::cli {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const std::vector<CommandInfo> kCommands = {
    {"inspect-head", "top-k tokens of one head's output projected to the vocabulary"},
    {"inject", "one memory injection: answer probability before and after"},
    {"sweep", "injection grid over layers and taus (CSV + JSON)"},
    {"random-sweep", "random part-of-speech words injected at one layer and tau"},
    {"pos-sweep", "injection grid with a fresh random word of one part of speech"},
    {"gen-2wmh", "knowledge triples to prompt pairs"},
    {"stats", "dataset summary: answer probability, surprisal, prompt length"},
    {"train-lens", "train per-head vocabulary lenses"},
    {"flops", "encoding cost of a memory"},
};

// Re-throws library argument errors as configuration errors on `key`.
template <typename F>
auto for_field(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(key, e.what());
  }
}

std::string resolved_json(const RunConfig& config, const std::string& command) {
  ordered_json j;
  j["command"] = command;
  const nlohmann::json flat = nlohmann::json::parse(config.to_json());
  for (const auto& [k, v] : flat.items()) j[k] = v;
  return j.dump();
}

class Progress {
 public:
  Progress(std::ostream& err, std::string label) : err_(err), label_(std::move(label)) {}
  ProgressFn fn() {
    return [this](std::size_t done, std::size_t total) {
      const std::size_t pct = total ? done * 100 / total : 100;
      if (pct == last_ && done != total) return;
      last_ = pct;
      err_ << "\r" << label_ << " " << done << "/" << total << " (" << pct << "%)";
      if (done == total) err_ << "\n";
      err_.flush();
    };
  }

 private:
  std::ostream& err_;
  std::string label_;
  std::size_t last_ = 101;
};

fs::path tokenizer_dir(const RunConfig& config, const fs::path& model_path) {
  if (config.has("tokenizer")) return config.existing_path("tokenizer");
  if (fs::exists(model_path.parent_path() / "vocab.json")) return model_path.parent_path();
  if (const char* cache = std::getenv("REASONLENS_CACHE"); cache && *cache) {
    const fs::path p = fs::path(cache) / "gpt2-tokenizer";
    if (fs::exists(p / "vocab.json")) return p;
  }
  const fs::path builtin = REASONLENS_DEFAULT_TOKENIZER_DIR;
  if (!builtin.empty() && fs::exists(builtin / "vocab.json")) return builtin;
  throw ConfigError("tokenizer", "not set and no tokenizer found next to the model or in the cache");
}

Model load(const RunConfig& config, std::ostream& err) {
  const fs::path path = for_field("model", [&] { return resolve_model_path(config.str("model")); });
  const ProcessingMode mode =
      for_field("processing", [&] { return parse_processing_mode(config.str("processing")); });
  const fs::path tok = tokenizer_dir(config, path);
  err << "loading " << path.string() << " (" << to_string(mode) << ")\n";
  return load_model(path, tok, mode);
}

int checked_layer(const RunConfig& config, const Model& m, const std::string& key = "layer") {
  const long long l = config.integer(key);
  if (l < 0 || l >= static_cast<long long>(m.config().n_layer)) {
    throw ConfigError(key, "layer " + std::to_string(l) + " outside 0.." + std::to_string(m.config().n_layer - 1));
  }
  return static_cast<int>(l);
}

std::vector<int> checked_layers(const RunConfig& config, const Model& m) {
  const auto layers = config.int_range("layer-range");
  for (int l : layers) {
    if (l < 0 || l >= static_cast<int>(m.config().n_layer)) {
      throw ConfigError("layer-range", "layer " + std::to_string(l) + " outside 0.." +
                                           std::to_string(m.config().n_layer - 1));
    }
  }
  return layers;
}

std::optional<int> checked_head(const RunConfig& config, const Model& m) {
  if (!config.has("head")) return std::nullopt;
  const long long h = config.integer("head");
  if (h < 0 || h >= static_cast<long long>(m.config().n_head)) {
    throw ConfigError("head", "head " + std::to_string(h) + " outside 0.." + std::to_string(m.config().n_head - 1));
  }
  return static_cast<int>(h);
}

std::size_t positive(const RunConfig& config, const std::string& key) {
  const long long v = config.integer(key);
  if (v < 1) throw ConfigError(key, "must be at least 1");
  return static_cast<std::size_t>(v);
}

ScoringOptions scoring(const RunConfig& config) {
  ScoringOptions s;
  s.prepend_bos = config.flag("prepend-bos");
  s.answer_leading_space = config.flag("answer-leading-space");
  return s;
}

InjectionSettings injection_settings(const RunConfig& config, const Model& m) {
  InjectionSettings s;
  s.style = for_field("style", [&] { return parse_encoding_style(config.str("style")); });
  s.broadcast = for_field("broadcast", [&] { return parse_broadcast(config.str("broadcast")); });
  s.head = checked_head(config, m);
  s.encode.binary_bag = config.flag("binary-bag");
  const std::string& pooling = config.str("pooling");
  if (pooling == "last") {
    s.encode.pooling = Pooling::kLast;
  } else if (pooling == "mean") {
    s.encode.pooling = Pooling::kMean;
  } else {
    throw ConfigError("pooling", "expected last or mean, got '" + pooling + "'");
  }
  s.memory_leading_space = config.flag("memory-leading-space");
  s.scoring = scoring(config);
  return s;
}

std::vector<PromptPair> dataset(const RunConfig& config) {
  const fs::path p = config.existing_path("dataset");
  auto pairs = load_prompt_pairs(p);
  if (pairs.empty()) throw ConfigError("dataset", p.string() + " holds no prompt pairs");
  return pairs;
}

PartOfSpeech pos_of(const std::string& key, const std::string& name) {
  return for_field(key, [&] { return parse_part_of_speech(name); });
}

PosLexicon lexicon(const RunConfig& config, const std::vector<PartOfSpeech>& needed) {
  const fs::path dir = config.existing_path("lexicon");
  PosLexicon lex = PosLexicon::load(dir, false);
  for (PartOfSpeech p : needed) {
    if (!lex.has(p)) throw ConfigError("lexicon", "no " + to_string(p) + ".txt in " + dir.string());
  }
  return lex;
}

fs::path output_path(const RunConfig& config) {
  const fs::path out = config.str("out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  return out;
}

void write_config_sidecar(const fs::path& artifact, const std::string& config_json) {
  fs::path sidecar = artifact;
  sidecar += ".config.json";
  write_text_atomic(sidecar, ordered_json::parse(config_json).dump(1) + "\n");
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_inspect_head(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const Model m = load(config, err);
  const int layer = checked_layer(config, m);
  const auto head = checked_head(config, m);
  if (!head) throw ConfigError("head", "required but not set");
  const std::size_t k = positive(config, "k");
  const TokenSequence tokens = prompt_tokens(m, config.str("prompt"), scoring(config));

  ForwardOptions opts;
  opts.captures.push_back(HookPoint::head_output(layer, *head));
  const ForwardResult r = forward(m, tokens, opts);

  std::vector<TokenProb> top;
  std::string source = "unembedding";
  if (config.has("lens.path")) {
    const Lens lens = load_lens(config.existing_path("lens.path"));
    if (lens.layer != layer || lens.head != *head) {
      throw ConfigError("lens.path", "lens was trained for head " + std::to_string(lens.layer) + "." +
                                         std::to_string(lens.head));
    }
    const auto last = head_output(r.cache, layer, *head).row(tokens.size() - 1);
    const Tensor dist = lens_apply(lens, Tensor::vector({last.begin(), last.end()}));
    top = for_field("k", [&] { return top_k(dist, k, &m.tokenizer()); });
    source = "lens " + config.str("lens.path");
  } else {
    top = for_field("k", [&] { return project_head(m, r.cache, layer, *head, k).top; });
  }

  ordered_json j;
  j["config"] = ordered_json::parse(resolved_json(config, "inspect-head"));
  j["layer"] = layer;
  j["head"] = *head;
  j["projection"] = source;
  ordered_json rows = ordered_json::array();
  out << "head " << layer << "." << *head << " via " << source << "\n";
  for (std::size_t i = 0; i < top.size(); ++i) {
    out << i + 1 << "\t" << fmt("%.6f", top[i].probability) << "\t" << top[i].id << "\t"
        << ordered_json(top[i].token).dump() << "\n";
    rows.push_back({{"id", top[i].id}, {"token", top[i].token}, {"probability", top[i].probability}});
  }
  j["top"] = std::move(rows);
  if (config.has("out")) write_text_atomic(output_path(config), j.dump(1) + "\n");
  return 0;
}

int cmd_inject(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const Model m = load(config, err);
  const int layer = checked_layer(config, m);
  const double tau = config.real("tau");
  const InjectionSettings s = injection_settings(config, m);
  const std::string& memory = config.str("memory");
  const std::string& prompt = config.str("prompt");
  const std::string& answer = config.str("answer");

  const std::string text = s.memory_leading_space ? with_leading_space(memory) : memory;
  InjectionSpec spec;
  spec.layer = layer;
  spec.tau = static_cast<float>(tau);
  spec.memory = for_field("memory", [&] { return encode_memory(m, text, s.style, layer, s.encode).vector; });
  spec.broadcast = s.broadcast;
  spec.head = s.head;

  const TokenSequence tokens = prompt_tokens(m, prompt, s.scoring);
  const auto target = static_cast<std::size_t>(for_field("answer", [&] { return answer_token(m, answer, s.scoring); }));
  const double pre = next_token_distribution(forward(m, tokens).logits)[target];
  const double post = next_token_distribution(inject(m, tokens, spec).logits)[target];
  const double diff = percent_difference(pre, post);

  ordered_json j;
  j["config"] = ordered_json::parse(resolved_json(config, "inject"));
  j["p_pre"] = pre;
  j["p_post"] = post;
  j["percent_diff"] = diff;
  out << "p_pre\t" << fmt("%.6g", pre) << "\np_post\t" << fmt("%.6g", post) << "\npercent_diff\t"
      << fmt("%.1f", diff) << "\n";
  if (config.has("out")) write_text_atomic(output_path(config), j.dump(1) + "\n");
  return 0;
}

void print_grid(const SweepGrid& grid, std::ostream& out) {
  out << "layer\ttau\trobust_mean_pct\tn_excluded\n";
  for (const auto& c : grid.cells) {
    out << c.layer << "\t" << fmt("%g", c.tau) << "\t" << fmt("%.2f", c.robust_mean) << "\t" << c.n_excluded << "\n";
  }
}

int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const fs::path out_path = output_path(config);
  const auto pairs = dataset(config);
  const Model m = load(config, err);
  SweepConfig sc;
  sc.layers = checked_layers(config, m);
  sc.taus = config.real_range("tau-range", "tau-step");
  sc.injection = injection_settings(config, m);
  sc.seed = config.seed();
  sc.workers = config.workers();

  const std::string memory = config.maybe("memory").value_or("curated");
  std::optional<PosLexicon> lex;
  if (memory.rfind("fixed:", 0) == 0) {
    sc.source = MemorySource::kFixedWord;
    sc.fixed_word = memory.substr(6);
    if (sc.fixed_word.empty()) throw ConfigError("memory", "fixed: needs a word");
  } else {
    sc.source = for_field("memory", [&] { return parse_memory_source(memory); });
    if (sc.source == MemorySource::kFixedWord) throw ConfigError("memory", "use fixed:<word>");
  }
  if (sc.source == MemorySource::kRandomPos) {
    sc.pos = pos_of("pos", config.str("pos"));
    lex = lexicon(config, {sc.pos});
  }

  Progress progress(err, "sweep");
  const SweepGrid grid = run_injection_sweep(m, pairs, sc, lex ? &*lex : nullptr, progress.fn());
  write_sweep(out_path, grid, pairs, resolved_json(config, "sweep"));
  print_grid(grid, out);
  return 0;
}

int cmd_pos_sweep(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const fs::path out_path = output_path(config);
  const auto pairs = dataset(config);
  const PartOfSpeech pos = pos_of("pos", config.str("pos"));
  const PosLexicon lex = lexicon(config, {pos});
  const Model m = load(config, err);
  const auto layers = checked_layers(config, m);
  const auto taus = config.real_range("tau-range", "tau-step");
  Progress progress(err, "pos-sweep");
  const SweepGrid grid = run_pos_sweep(m, pairs, layers, taus, pos, config.seed(), lex,
                                       injection_settings(config, m), config.workers(), progress.fn());
  write_sweep(out_path, grid, pairs, resolved_json(config, "pos-sweep"));
  print_grid(grid, out);
  return 0;
}

int cmd_random_sweep(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const fs::path out_path = output_path(config);
  const auto pairs = dataset(config);
  RandomInjectionConfig rc;
  if (auto list = config.maybe("pos")) {
    rc.parts.clear();
    std::stringstream ss(*list);
    for (std::string item; std::getline(ss, item, ',');) rc.parts.push_back(pos_of("pos", item));
  }
  const PosLexicon lex = lexicon(config, rc.parts);
  const Model m = load(config, err);
  rc.layer = checked_layer(config, m);
  rc.tau = config.real("tau");
  rc.words_per_pos = positive(config, "words-per-pos");
  rc.injection = injection_settings(config, m);
  rc.workers = config.workers();
  for (PartOfSpeech p : rc.parts) {
    if (lex.words(p).size() < rc.words_per_pos) {
      throw ConfigError("words-per-pos", to_string(p) + " list has only " + std::to_string(lex.words(p).size()) + " words");
    }
  }

  Progress progress(err, "random-sweep");
  const auto results = run_random_injection(m, pairs, rc, lex, progress.fn());

  std::string csv = "pos,word,prompt,percent_diff\n";
  ordered_json summary = ordered_json::array();
  out << "pos\trobust_mean_pct\tn_excluded\n";
  for (const auto& r : results) {
    for (std::size_t w = 0; w < r.words.size(); ++w) {
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        csv += to_string(r.pos) + "," + ordered_json(r.words[w]).dump() + "," + std::to_string(p) + "," +
               fmt("%.17g", r.percent_diffs[w * pairs.size() + p]) + "\n";
      }
    }
    summary.push_back({{"pos", to_string(r.pos)},
                       {"words", r.words},
                       {"robust_mean_pct", r.robust.mean},
                       {"n_excluded", r.robust.n_excluded}});
    out << to_string(r.pos) << "\t" << fmt("%.2f", r.robust.mean) << "\t" << r.robust.n_excluded << "\n";
  }
  ordered_json j;
  j["config"] = ordered_json::parse(resolved_json(config, "random-sweep"));
  j["results"] = std::move(summary);
  fs::path sidecar = out_path;
  sidecar.replace_extension(".json");
  if (sidecar == out_path) sidecar += ".json";
  write_text_atomic(sidecar, j.dump(1) + "\n");
  write_text_atomic(out_path, csv);
  return 0;
}

int cmd_gen_2wmh(const RunConfig& config, std::ostream& out, std::ostream&) {
  const fs::path out_path = output_path(config);
  const auto triples = load_triples(config.existing_path("dataset"));
  std::vector<PromptPair> pairs;
  pairs.reserve(triples.size());
  for (const auto& t : triples) pairs.push_back(generate_2wmh_pair(t));
  write_config_sidecar(out_path, resolved_json(config, "gen-2wmh"));
  write_prompt_pairs(out_path, pairs);
  out << pairs.size() << " prompt pairs written to " << out_path.string() << "\n";
  return 0;
}

int cmd_stats(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto pairs = dataset(config);
  const Model m = load(config, err);
  const DatasetStats st = dataset_stats(m, pairs, scoring(config), config.workers());
  ordered_json j;
  j["config"] = ordered_json::parse(resolved_json(config, "stats"));
  j["n_pairs"] = st.n_pairs;
  j["single_hop"] = {{"probability", st.single_prob}, {"surprisal", st.single_surprisal}, {"tokens", st.single_tokens}};
  j["multi_hop"] = {{"probability", st.multi_prob}, {"surprisal", st.multi_surprisal}, {"tokens", st.multi_tokens}};
  out << "pairs\tsingle_p\tsingle_s\tsingle_len\tmulti_p\tmulti_s\tmulti_len\n"
      << st.n_pairs << "\t" << fmt("%.3f", st.single_prob) << "\t" << fmt("%.2f", st.single_surprisal) << "\t"
      << fmt("%.2f", st.single_tokens) << "\t" << fmt("%.3f", st.multi_prob) << "\t"
      << fmt("%.2f", st.multi_surprisal) << "\t" << fmt("%.2f", st.multi_tokens) << "\n";
  if (config.has("out")) write_text_atomic(output_path(config), j.dump(1) + "\n");
  return 0;
}

std::vector<HeadId> parse_heads(const RunConfig& config, const Model& m) {
  std::vector<HeadId> heads;
  std::stringstream ss(config.str("lens.heads"));
  const int n_layer = static_cast<int>(m.config().n_layer), n_head = static_cast<int>(m.config().n_head);
  for (std::string item; std::getline(ss, item, ',');) {
    int l = -1, h = -1;
    char extra = 0;
    const int got = std::sscanf(item.c_str(), "%d.%d%c", &l, &h, &extra);
    if (got == 1 && item.find('.') == std::string::npos) {
      if (l < 0 || l >= n_layer) throw ConfigError("lens.heads", "layer outside model: '" + item + "'");
      for (int j = 0; j < n_head; ++j) heads.emplace_back(l, j);
    } else if (got == 2) {
      if (l < 0 || l >= n_layer || h < 0 || h >= n_head) {
        throw ConfigError("lens.heads", "head outside model: '" + item + "'");
      }
      heads.emplace_back(l, h);
    } else {
      throw ConfigError("lens.heads", "expected L.H or L, got '" + item + "'");
    }
  }
  if (heads.empty()) throw ConfigError("lens.heads", "no heads given");
  return heads;
}

int cmd_train_lens(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const fs::path dir = config.str("out");
  const fs::path corpus_path = config.existing_path("lens.corpus");
  const auto corpus = load_text_lines(corpus_path);
  if (corpus.empty()) throw ConfigError("lens.corpus", "corpus is empty");
  const Model m = load(config, err);

  LensTrainingConfig tc;
  tc.heads = parse_heads(config, m);
  tc.steps = positive(config, "lens.steps");
  tc.learning_rate = static_cast<float>(config.real("lens.lr"));
  if (!(tc.learning_rate >= 0)) throw ConfigError("lens.lr", "must be non-negative");
  tc.batch_size = positive(config, "lens.batch");
  tc.seed = config.seed();
  tc.direction = for_field("lens.kl", [&] { return parse_kl_direction(config.str("lens.kl")); });
  tc.max_tokens = positive(config, "lens.max-tokens");
  tc.corpus_id = corpus_path.filename().string();
  tc.workers = config.workers();

  Progress progress(err, "train-lens");
  const LensTrainingResult result = train_lenses(m, corpus, tc, progress.fn());

  fs::create_directories(dir);
  ordered_json log;
  log["config"] = ordered_json::parse(resolved_json(config, "train-lens"));
  ordered_json heads = ordered_json::array();
  out << "head\tfirst_batch_kl\tlast_batch_kl\tfile\n";
  for (std::size_t i = 0; i < result.lenses.size(); ++i) {
    const Lens& lens = result.lenses[i];
    const std::string name = "lens_L" + std::to_string(lens.layer) + "_H" + std::to_string(lens.head) + ".safetensors";
    save_lens(lens, dir / name);
    const auto& losses = result.batch_loss[i];
    heads.push_back({{"layer", lens.layer}, {"head", lens.head}, {"file", name}, {"batch_loss", losses}});
    out << lens.layer << "." << lens.head << "\t" << fmt("%.6g", losses.front()) << "\t"
        << fmt("%.6g", losses.back()) << "\t" << name << "\n";
  }
  log["heads"] = std::move(heads);
  write_text_atomic(dir / "training.json", log.dump(1) + "\n");
  return 0;
}

int cmd_flops(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const EncodingStyle style = for_field("style", [&] { return parse_encoding_style(config.str("style")); });
  const double n_ctx = config.real("n-ctx");
  ModelConfig mc;
  if (auto preset = config.maybe("model-config")) {
    if (*preset == "gpt2-small") {
      mc = ModelConfig::gpt2_small();
    } else if (*preset == "gpt2-large") {
      mc = ModelConfig::gpt2_large();
    } else {
      throw ConfigError("model-config", "expected gpt2-small or gpt2-large, got '" + *preset + "'");
    }
  } else {
    const fs::path path = for_field("model", [&] { return resolve_model_path(config.str("model")); });
    err << "reading " << path.string() << "\n";
    mc = load_model(TensorArchive::read(path), nullptr, ProcessingMode::kRaw).config();
  }
  const FlopReport r = for_field("n-ctx", [&] { return flops_for_encoding(style, n_ctx, mc); });
  const std::string text = flop_report_json(r, resolved_json(config, "flops"));
  if (config.has("out")) {
    write_text_atomic(output_path(config), text);
  } else {
    out << text;
  }
  return 0;
}

using Handler = std::function<int(const RunConfig&, std::ostream&, std::ostream&)>;

Handler handler_for(const std::string& command) {
  if (command == "inspect-head") return cmd_inspect_head;
  if (command == "inject") return cmd_inject;
  if (command == "sweep") return cmd_sweep;
  if (command == "random-sweep") return cmd_random_sweep;
  if (command == "pos-sweep") return cmd_pos_sweep;
  if (command == "gen-2wmh") return cmd_gen_2wmh;
  if (command == "stats") return cmd_stats;
  if (command == "train-lens") return cmd_train_lens;
  if (command == "flops") return cmd_flops;
  return nullptr;
}

}  // namespace

const std::vector<CommandInfo>& commands() { return kCommands; }

fs::path resolve_model_path(const std::string& model) {
  if (fs::exists(model)) return model;
  if (const char* cache = std::getenv("REASONLENS_CACHE"); cache && *cache) {
    for (const fs::path& p : {fs::path(cache) / (model + ".safetensors"), fs::path(cache) / model / "model.safetensors"}) {
      if (fs::exists(p)) return p;
    }
    throw InvalidArgument("no archive '" + model + "' (also looked in REASONLENS_CACHE=" + cache + ")");
  }
  throw InvalidArgument("no archive '" + model + "' (REASONLENS_CACHE is not set)");
}

int run(const std::string& command, const RunConfig& config, std::ostream& out, std::ostream& err) {
  const Handler h = handler_for(command);
  if (!h) {
    err << "reasonlens: unknown command '" << command << "'\n";
    return 2;
  }
  try {
    return h(config, out, err);
  } catch (const ConfigError& e) {
    err << "reasonlens " << command << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "reasonlens " << command << ": error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace reasonlens::cli
