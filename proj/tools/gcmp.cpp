// Copyright 2026 The gcmp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "gcmp/container.hpp"
#include "gcmp/data.hpp"
#include "gcmp/distiller.hpp"
#include "gcmp/error.hpp"
#include "gcmp/graph.hpp"
#include "gcmp/kernels.hpp"
#include "gcmp/metrics.hpp"
#include "gcmp/model.hpp"
#include "gcmp/pipeline.hpp"
#include "gcmp/pruner.hpp"
#include "gcmp/rng.hpp"
#include "gcmp/synthetic.hpp"
#include "gcmp/tokenizer.hpp"
#include "gcmp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gcmp;
namespace syn = gcmp::synthetic;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json config_of(const Globals& g) {
  if (g.config.empty()) return json::object();
  auto j = read_json(g.config);
  if (!j.is_object()) throw ValidationError("--config must hold a JSON object");
  return j;
}

std::uint64_t seed_of(const Globals& g, const json& cfg) {
  if (g.seed) return *g.seed;
  return cfg.value("seed", std::uint64_t{0});
}

fs::path out_dir(const Globals& g) {
  fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
  fs::create_directories(dir);
  return dir;
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

// Plain text: one non-empty line per entry. JSONL: the examples' texts.
std::vector<std::string> read_corpus(const std::vector<std::string>& paths) {
  std::vector<std::string> lines;
  for (const auto& p : paths) {
    if (fs::path(p).extension() == ".jsonl") {
      auto t = syn::texts(load_jsonl(p));
      lines.insert(lines.end(), t.begin(), t.end());
      continue;
    }
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p);
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw ValidationError("corpus is empty");
  return lines;
}

void check_tokenizer(const Checkpoint& ck, const BpeTokenizer& tok) {
  if (!ck.tokenizer_hash.empty() && ck.tokenizer_hash != tok.fingerprint()) {
    throw ValidationError("checkpoint was trained with a different tokenizer");
  }
  if (ck.config.vocab_size != static_cast<int>(tok.vocab_size())) {
    throw ValidationError("checkpoint vocabulary size does not match the tokenizer");
  }
}

std::vector<EncodedExample> load_encoded(const fs::path& path, const BpeTokenizer& tok, const TaskSpec& spec) {
  const auto ex = load_jsonl(path);
  validate_examples(ex, spec);
  return encode_examples(tok, ex, spec);
}

// Replaces a head of the wrong kind with a fresh one.
Checkpoint for_task(Checkpoint ck, const TaskSpec& spec, std::uint64_t seed) {
  if (spec.max_len > ck.config.max_positions) {
    throw ValidationError("task max_len " + std::to_string(spec.max_len) + " exceeds the model's " +
                          std::to_string(ck.config.max_positions) + " positions");
  }
  if (ck.config.head == spec.head) return ck;
  return with_task_head(ck, spec.head, seed);
}

std::string container_kind(const fs::path& path) {
  return read_container(path).header.value("kind", "");
}

json evaluation_json(const Evaluation& e, const TaskSpec& spec) {
  return {{"loss", e.loss},
          {"metrics", e.metrics.to_json()},
          {"headline_metric", headline_metric_name(spec.head)},
          {"headline", headline_metric(e.metrics, spec.head)}};
}

// --- subcommands ---

struct TokenizerArgs {
  std::vector<std::string> corpus;
  int vocab_size = 0;
};

int cmd_train_tokenizer(const Globals& g, const TokenizerArgs& a) {
  const auto cfg = config_of(g);
  const int size = a.vocab_size > 0 ? a.vocab_size : cfg.value("vocab_size", 0);
  if (size <= 0) throw ValidationError("--vocab-size is required");
  const auto lines = read_corpus(a.corpus);
  const auto tok = BpeTokenizer::train(lines, static_cast<std::size_t>(size));
  const auto path = out_dir(g) / "tokenizer.json";
  tok.save(path);
  emit({{"tokenizer", path.string()}, {"vocab_size", tok.vocab_size()}, {"fingerprint", tok.fingerprint()}});
  return 0;
}

struct PretrainArgs {
  std::string tokenizer, init, size = "tiny";
  std::vector<std::string> corpus, val_corpus;
  int layers = 0, hidden = 0, heads = 0, max_len = 64, hidden_divisor = 8;
};

int cmd_pretrain(const Globals& g, const PretrainArgs& a) {
  const auto cfg = config_of(g);
  const auto seed = seed_of(g, cfg);
  auto tc = TrainConfig::from_json(cfg.value("train", json::object()));
  tc.seed = seed;
  tc.validate();
  const auto tok = BpeTokenizer::load(a.tokenizer);
  auto lines = read_corpus(a.corpus);
  std::vector<std::string> val;
  if (!a.val_corpus.empty()) {
    val = read_corpus(a.val_corpus);
  } else {
    if (lines.size() < 10) throw ValidationError("corpus too small to hold out validation lines");
    const auto cut = lines.size() - lines.size() / 10;
    val.assign(lines.begin() + static_cast<std::ptrdiff_t>(cut), lines.end());
    lines.resize(cut);
  }
  Checkpoint init;
  if (!a.init.empty()) {
    init = Checkpoint::load(a.init);
    check_tokenizer(init, tok);
    init = for_task(std::move(init), TaskSpec{HeadKind::mlm(), {}, a.max_len}, seed);
  } else {
    const int vocab = static_cast<int>(tok.vocab_size());
    ModelConfig mc = a.layers > 0 ? ModelConfig::uniform(a.layers, a.hidden, a.heads, vocab, a.max_len, HeadKind::mlm())
                                  : family_config(parse_model_size(a.size), vocab, a.max_len, HeadKind::mlm(),
                                                  a.hidden_divisor);
    if (cfg.contains("model")) mc = ModelConfig::from_json(cfg.at("model"));
    mc.validate();
    init = init_model(mc, seed, tok.fingerprint());
  }
  const auto r = pretrain_mlm(init, tok, lines, val, tc);
  const auto dir = out_dir(g);
  r.ckpt.save(dir / "pretrained.gcmp");
  json summary = {{"checkpoint", (dir / "pretrained.gcmp").string()},
                  {"params", r.ckpt.parameter_count()},
                  {"initial_val_loss", r.initial_val_loss},
                  {"val_loss", r.val_loss},
                  {"mlm_accuracy", r.mlm_accuracy},
                  {"steps", r.steps},
                  {"train", tc.to_json()}};
  write_json(dir / "pretrain.json", summary);
  emit(summary);
  return 0;
}

struct TaskArgs {
  std::string tokenizer, task, train, validation;
};

int cmd_finetune(const Globals& g, const TaskArgs& t, const std::string& model) {
  const auto cfg = config_of(g);
  const auto seed = seed_of(g, cfg);
  auto tc = TrainConfig::from_json(cfg.value("train", json::object()));
  tc.seed = seed;
  tc.validate();
  const auto tok = BpeTokenizer::load(t.tokenizer);
  const auto spec = TaskSpec::from_json(read_json(t.task));
  auto ck = Checkpoint::load(model);
  check_tokenizer(ck, tok);
  ck = for_task(std::move(ck), spec, seed);
  const auto train = load_encoded(t.train, tok, spec);
  const auto val = load_encoded(t.validation, tok, spec);
  const auto dir = out_dir(g);
  json summary;
  Checkpoint best;
  if (cfg.contains("grid")) {
    const auto axes = grid_axes_from_json(cfg.at("grid"));
    auto r = finetune_grid(ck, train, val, spec, tc, axes);
    summary["grid"] = r.table_json();
    summary["best_index"] = r.best_index;
    best = std::move(r.best);
  } else {
    auto r = finetune(ck, train, val, spec, tc);
    summary["best_epoch"] = r.best_epoch;
    summary["epochs_run"] = r.epochs_run;
    best = std::move(r.ckpt);
  }
  summary["validation"] = evaluation_json(evaluate(best, val, spec), spec);
  summary["checkpoint"] = (dir / "finetuned.gcmp").string();
  best.save(dir / "finetuned.gcmp");
  write_json(dir / "finetune.json", summary);
  emit(summary);
  return 0;
}

int cmd_distill(const Globals& g, const TaskArgs& t, const std::string& teacher_path,
                const std::string& student_path) {
  const auto cfg = config_of(g);
  const auto seed = seed_of(g, cfg);
  auto dc = DistillConfig::from_json(cfg.value("distill", json::object()));
  dc.train.seed = seed;
  dc.validate();
  const auto tok = BpeTokenizer::load(t.tokenizer);
  const auto spec = TaskSpec::from_json(read_json(t.task));
  const auto teacher = Checkpoint::load(teacher_path);
  auto student = Checkpoint::load(student_path);
  check_tokenizer(teacher, tok);
  check_tokenizer(student, tok);
  if (!(teacher.config.head == spec.head)) throw ValidationError("teacher head does not match the task");
  student = for_task(std::move(student), spec, seed);
  const auto train = load_encoded(t.train, tok, spec);
  const auto val = load_encoded(t.validation, tok, spec);
  const auto axes = cfg.contains("grid") ? grid_axes_from_json(cfg.at("grid")) : std::vector<GridAxis>{};
  auto r = distill_grid(teacher, student, train, val, spec, dc, axes);
  const auto dir = out_dir(g);
  r.best.save(dir / "distilled.gcmp");
  json summary = {{"checkpoint", (dir / "distilled.gcmp").string()},
                  {"grid", r.table_json()},
                  {"best_index", r.best_index},
                  {"validation", evaluation_json(evaluate(r.best, val, spec), spec)}};
  write_json(dir / "distill.json", summary);
  emit(summary);
  return 0;
}

int cmd_prune_vocab(const Globals& g, const std::string& model, const std::string& tokenizer,
                    const std::vector<std::string>& corpus) {
  const auto tok = BpeTokenizer::load(tokenizer);
  const auto ck = Checkpoint::load(model);
  check_tokenizer(ck, tok);
  const auto lines = read_corpus(corpus);
  const auto prune = prune_vocabulary(tok, lines);
  auto pruned = reshape_embeddings(ck, prune);
  pruned.tokenizer_hash = prune.pruned_tokenizer.fingerprint();
  const auto dir = out_dir(g);
  pruned.save(dir / "vocab_pruned.gcmp");
  prune.pruned_tokenizer.save(dir / "vocab_pruned_tokenizer.json");
  const auto removed = static_cast<std::int64_t>(prune.removed_count());
  json summary = {{"checkpoint", (dir / "vocab_pruned.gcmp").string()},
                  {"tokenizer", (dir / "vocab_pruned_tokenizer.json").string()},
                  {"original_vocab", prune.original_size()},
                  {"kept_vocab", prune.kept_old_ids.size()},
                  {"removed_tokens", removed},
                  {"removed_fraction", prune.removed_fraction},
                  {"removed_embedding_params", removed * ck.config.hidden},
                  {"params_before", ck.parameter_count()},
                  {"params_after", pruned.parameter_count()}};
  write_json(dir / "prune_vocab.json", summary);
  emit(summary);
  return 0;
}

struct CalibArgs {
  std::string tokenizer, task, data;
  int limit = 256;
};

std::vector<EncodedExample> calibration(const CalibArgs& c, const Checkpoint& ck, TaskSpec* spec_out) {
  if (c.tokenizer.empty() || c.task.empty() || c.data.empty()) {
    throw ValidationError("--tokenizer, --task and --data are required for calibration");
  }
  const auto tok = BpeTokenizer::load(c.tokenizer);
  check_tokenizer(ck, tok);
  *spec_out = TaskSpec::from_json(read_json(c.task));
  auto ex = load_encoded(c.data, tok, *spec_out);
  if (c.limit > 0 && static_cast<int>(ex.size()) > c.limit) ex.resize(static_cast<std::size_t>(c.limit));
  return ex;
}

int cmd_prune_depth(const Globals& g, const std::string& model, int keep, const std::string& strategy,
                    const std::string& metric, const std::string& anchor, const CalibArgs& c) {
  const auto cfg = config_of(g);
  DepthPruneStrategy s;
  if (cfg.contains("depth")) s = DepthPruneStrategy::from_json(cfg.at("depth"));
  if (!strategy.empty()) s.kind = parse_depth_strategy(strategy);
  if (!metric.empty()) s.metric = metric == "cosine" ? DistanceMetric::Cosine : DistanceMetric::MAE;
  if (!anchor.empty()) s.anchor = anchor == "mean" ? Anchor::MeanToken : Anchor::FirstToken;
  if (metric != "" && metric != "mae" && metric != "cosine") throw ValidationError("unknown metric " + metric);
  if (anchor != "" && anchor != "first" && anchor != "mean") throw ValidationError("unknown anchor " + anchor);
  s.seed = seed_of(g, cfg);
  const auto ck = Checkpoint::load(model);
  std::vector<EncodedExample> calib;
  TaskSpec spec;
  const bool needs_data = s.kind == DepthStrategy::MinPairwiseDistance;
  if (needs_data) calib = calibration(c, ck, &spec);
  const auto kept = select_layers(ck, keep, s, calib, needs_data ? &spec : nullptr);
  const auto student = extract_layers(ck, kept);
  const auto dir = out_dir(g);
  student.save(dir / "depth_pruned.gcmp");
  json summary = {{"checkpoint", (dir / "depth_pruned.gcmp").string()},
                  {"kept_layers", kept},
                  {"strategy", s.to_json()},
                  {"params_before", ck.parameter_count()},
                  {"params_after", student.parameter_count()}};
  write_json(dir / "prune_depth.json", summary);
  emit(summary);
  return 0;
}

int cmd_prune_width(const Globals& g, const std::string& model, int heads, int ffn, const CalibArgs& c) {
  const auto cfg = config_of(g);
  WidthPruneConfig w;
  if (cfg.contains("width")) {
    auto merged = w.to_json();
    merged.update(cfg.at("width"));
    w = WidthPruneConfig::from_json(merged);
  }
  if (heads > 0) w.target_total_heads = heads;
  if (ffn > 0) w.target_ffn_neurons = ffn;
  const auto ck = Checkpoint::load(model);
  w.validate(ck.config);
  TaskSpec spec;
  const auto calib = calibration(c, ck, &spec);
  if (!(ck.config.head == spec.head)) throw ValidationError("model head does not match the task");
  const auto r = prune_width(ck, w, calib, spec);
  const auto dir = out_dir(g);
  r.ckpt.save(dir / "width_pruned.gcmp");
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"heads_removed", s.heads_removed},
                     {"neurons_removed", s.neurons_removed},
                     {"params_after", s.params_after}});
  json summary = {{"checkpoint", (dir / "width_pruned.gcmp").string()},
                  {"heads", r.ckpt.config.heads},
                  {"ffn_dims", r.ckpt.config.ffn_dims},
                  {"params_before", ck.parameter_count()},
                  {"params_after", r.ckpt.parameter_count()},
                  {"steps", steps}};
  write_json(dir / "prune_width.json", summary);
  emit(summary);
  return 0;
}

json histogram_json(const GraphProgram& g) {
  json h = json::object();
  for (const auto& [op, n] : g.op_histogram()) h[to_string(op)] = n;
  return h;
}

int cmd_optimize_graph(const Globals& g, const std::string& model) {
  const auto in = load_artifact(model);
  const auto r = optimize_graph(in.graph);
  const auto dir = out_dir(g);
  r.graph.save(dir / "graph.gcmp");
  json summary = {{"graph", (dir / "graph.gcmp").string()},
                  {"nodes_before", in.graph.node_count()},
                  {"nodes_after", r.graph.node_count()},
                  {"rounds", r.rounds},
                  {"ops", histogram_json(r.graph)}};
  write_json(dir / "optimize.json", summary);
  emit(summary);
  return 0;
}

int cmd_quantize(const Globals& g, const std::string& graph) {
  const auto in = load_artifact(graph);
  const auto q = quantize_dynamic(in.graph);
  const auto dir = out_dir(g);
  q.save(dir / "graph_int8.gcmp");
  json summary = {{"graph", (dir / "graph_int8.gcmp").string()},
                  {"size_before", in.size_bytes},
                  {"size_after", static_cast<std::int64_t>(fs::file_size(dir / "graph_int8.gcmp"))},
                  {"linear_weight_payload_ratio", linear_weight_payload_ratio(q)}};
  write_json(dir / "quantize.json", summary);
  emit(summary);
  return 0;
}

int cmd_compress(const Globals& g, const std::string& plan_path) {
  const std::string path = !plan_path.empty() ? plan_path : g.config;
  if (path.empty()) throw ValidationError("compress needs a plan file (--config or --plan)");
  auto plan = CompressionPlan::load(path);
  if (g.seed) plan.seed = *g.seed;
  if (!g.out.empty()) plan.output_dir = g.out;
  if (plan.output_dir.empty()) throw ValidationError("plan has no output_dir and --out is not set");
  const auto report = gradual_compress(plan);
  std::cout << report.table();
  return 0;
}

struct EvalArgs {
  std::string model, tokenizer, task, data, predictions, gold;
  int batch_size = 64;
};

int cmd_evaluate(const Globals& g, const EvalArgs& a) {
  if (a.task.empty()) throw ValidationError("--task is required");
  const auto spec = TaskSpec::from_json(read_json(a.task));
  json summary;
  if (!a.predictions.empty() || !a.gold.empty()) {
    if (a.predictions.empty() || a.gold.empty()) throw ValidationError("--predictions and --gold go together");
    const auto pred = load_jsonl(a.predictions);
    const auto gold = load_jsonl(a.gold);
    if (pred.size() != gold.size()) throw ValidationError("prediction and gold files differ in length");
    validate_examples(pred, spec);
    validate_examples(gold, spec);
    std::vector<Target> p, t;
    for (const auto& e : pred) p.push_back(e.target);
    for (const auto& e : gold) t.push_back(e.target);
    const auto m = compute_metrics(p, t, spec.head);
    summary = {{"metrics", m.to_json()},
               {"headline_metric", headline_metric_name(spec.head)},
               {"headline", headline_metric(m, spec.head)},
               {"examples", pred.size()}};
  } else {
    if (a.model.empty() || a.tokenizer.empty() || a.data.empty()) {
      throw ValidationError("--model, --tokenizer and --data are required");
    }
    const auto tok = BpeTokenizer::load(a.tokenizer);
    const auto data = load_encoded(a.data, tok, spec);
    Evaluation e;
    if (container_kind(a.model) == "checkpoint") {
      const auto ck = Checkpoint::load(a.model);
      check_tokenizer(ck, tok);
      if (!(ck.config.head == spec.head)) throw ValidationError("model head does not match the task");
      e = evaluate(ck, data, spec, a.batch_size);
    } else {
      const auto gp = GraphProgram::load(a.model);
      const auto mc = ModelConfig::from_json(gp.meta.at("config"));
      if (mc.vocab_size != static_cast<int>(tok.vocab_size()))
        throw ValidationError("graph vocabulary size does not match the tokenizer");
      if (!(mc.head == spec.head)) throw ValidationError("graph head does not match the task");
      e = evaluate_graph(gp, data, spec, a.batch_size);
    }
    summary = evaluation_json(e, spec);
    summary["examples"] = data.size();
  }
  if (!g.out.empty()) write_json(out_dir(g) / "metrics.json", summary);
  emit(summary);
  return 0;
}

struct BenchArgs {
  std::string artifact, teacher, tokenizer, artifact_tokenizer, task, data;
  int batch = 32, seq_len = 64, warmup = 5, runs = 30;
};

Batch random_batch(int vocab, int batch, int seq_len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<TokenId>> seqs(static_cast<std::size_t>(batch));
  for (auto& s : seqs) {
    s.push_back(SpecialIds::kCls);
    for (int i = 2; i < seq_len; ++i)
      s.push_back(SpecialIds::kCount + static_cast<TokenId>(rng.below(vocab - SpecialIds::kCount)));
    s.push_back(SpecialIds::kSep);
  }
  return Batch::from_sequences(seqs);
}

double graph_headline(const fs::path& artifact, const BpeTokenizer& tok, const std::vector<Example>& ex,
                      const TaskSpec& spec) {
  const auto a = load_artifact(artifact);
  return headline_metric(evaluate_graph(a.graph, encode_examples(tok, ex, spec), spec).metrics, spec.head);
}

int cmd_bench(const Globals& g, const BenchArgs& a) {
  const auto cfg = config_of(g);
  if (a.batch <= 0 || a.seq_len < 2) throw ValidationError("batch and sequence length must be positive");
  Batch sample;
  std::optional<TaskSpec> spec;
  std::vector<Example> examples;
  if (!a.data.empty()) {
    if (a.tokenizer.empty() || a.task.empty()) throw ValidationError("--data needs --tokenizer and --task");
    spec = TaskSpec::from_json(read_json(a.task));
    examples = load_jsonl(a.data);
    validate_examples(examples, *spec);
    const auto tok = BpeTokenizer::load(a.tokenizer);
    std::vector<Example> head(examples.begin(),
                              examples.begin() + std::min<std::ptrdiff_t>(a.batch, std::ssize(examples)));
    std::vector<std::vector<TokenId>> seqs;
    for (const auto& e : encode_examples(tok, head, *spec)) seqs.push_back(e.ids);
    sample = Batch::from_sequences(seqs);
  } else {
    const auto t = load_artifact(a.teacher);
    const int vocab = ModelConfig::from_json(t.graph.meta.at("config")).vocab_size;
    sample = random_batch(vocab, a.batch, a.seq_len, seed_of(g, cfg));
  }
  auto r = efficiency_stats(a.artifact, a.teacher, sample, a.warmup, a.runs);
  if (spec) {
    const auto tt = BpeTokenizer::load(a.tokenizer);
    const auto at = BpeTokenizer::load(a.artifact_tokenizer.empty() ? a.tokenizer : a.artifact_tokenizer);
    const double mt = graph_headline(a.teacher, tt, examples, *spec);
    const double ma = graph_headline(a.artifact, at, examples, *spec);
    r.performance_delta_pp = (ma - mt) * 100.0;
  }
  auto j = r.to_json();
  j["threads"] = 1;
  j["runs"] = a.runs;
  j["warmup"] = a.warmup;
  j["batch_size"] = sample.size;
  j["seq_len"] = sample.seq_len;
  if (!g.out.empty()) write_json(out_dir(g) / "bench.json", j);
  emit(j);
  return 0;
}

int cmd_report(const Globals& g, const std::string& dir_arg, bool as_json) {
  const fs::path dir = !dir_arg.empty() ? fs::path(dir_arg) : fs::path(g.out.empty() ? "." : g.out);
  const auto report = read_json(dir / "report.json");
  const fs::path timings_path = dir / "timings.json";
  const auto timings = fs::exists(timings_path) ? read_json(timings_path) : json();
  if (as_json) {
    emit({{"report", report}, {"timings", timings}});
    return 0;
  }
  std::ifstream txt(dir / "report.txt");
  if (!txt) throw IoError("cannot open " + (dir / "report.txt").string());
  std::cout << txt.rdbuf();
  if (timings.is_object() && !timings.empty()) {
    std::cout << "\nlatency (single thread)\n";
    for (const auto& [id, t] : timings.items()) {
      std::cout << "  " << std::left << std::setw(8) << id << std::right << std::fixed << std::setprecision(4)
                << t.value("mean_seconds", 0.0) << " s mean, " << t.value("p50_seconds", 0.0) << " s p50, "
                << std::setprecision(2) << t.value("acceleration", 0.0) << "x\n";
    }
  }
  return 0;
}

struct SynthArgs {
  int classes = 5, train = 5000, validation = 500, test = 500;
  int topic_words = 12, filler_words = 200, corpus_lines = 4000;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const auto cfg = config_of(g);
  const auto seed = seed_of(g, cfg);
  const auto lex = syn::Lexicon::make(a.classes, a.topic_words, a.filler_words, seed);
  syn::ClassTaskOptions o;
  o.num_classes = a.classes;
  const auto ds = syn::single_label_task(lex, a.train, a.validation, a.test, o, seed + 1);
  const auto dir = out_dir(g);
  save_jsonl(dir / "train.jsonl", ds.train);
  save_jsonl(dir / "validation.jsonl", ds.validation);
  save_jsonl(dir / "test.jsonl", ds.test);
  TaskSpec spec;
  spec.head = HeadKind::single_label(a.classes);
  write_json(dir / "task.json", spec.to_json());
  std::ofstream c(dir / "corpus.txt");
  for (const auto& line : syn::corpus(lex, a.corpus_lines, seed + 2)) c << line << "\n";
  emit({{"dir", dir.string()}, {"train", ds.train.size()}, {"validation", ds.validation.size()},
        {"test", ds.test.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradual compression of encoder models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "JSON config (plan file for compress)");
  app.add_option("--out", g.out, "Output directory");

  TokenizerArgs tk;
  auto* train_tok = app.add_subcommand("train-tokenizer", "Train a BPE tokenizer");
  train_tok->add_option("--corpus", tk.corpus, "Text or JSONL files")->required();
  train_tok->add_option("--vocab-size", tk.vocab_size, "Target vocabulary size");

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "Masked-language-model pre-training");
  pretrain->add_option("--tokenizer", pa.tokenizer)->required();
  pretrain->add_option("--corpus", pa.corpus)->required();
  pretrain->add_option("--val-corpus", pa.val_corpus);
  pretrain->add_option("--init", pa.init, "Continue from a checkpoint");
  pretrain->add_option("--size", pa.size, "large, base, small or tiny");
  pretrain->add_option("--hidden-divisor", pa.hidden_divisor);
  pretrain->add_option("--layers", pa.layers);
  pretrain->add_option("--hidden", pa.hidden);
  pretrain->add_option("--heads", pa.heads);
  pretrain->add_option("--max-len", pa.max_len);

  TaskArgs ta;
  std::string model, teacher, student;
  auto add_task = [&](CLI::App* sub) {
    sub->add_option("--tokenizer", ta.tokenizer)->required();
    sub->add_option("--task", ta.task, "Task spec JSON")->required();
    sub->add_option("--train", ta.train, "Training JSONL")->required();
    sub->add_option("--validation", ta.validation, "Validation JSONL")->required();
  };
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune a checkpoint on a task");
  finetune_cmd->add_option("--model", model)->required();
  add_task(finetune_cmd);

  auto* distill_cmd = app.add_subcommand("distill", "Distil a teacher into a student");
  distill_cmd->add_option("--teacher", teacher)->required();
  distill_cmd->add_option("--student", student)->required();
  add_task(distill_cmd);

  std::string tokenizer;
  std::vector<std::string> corpus_files;
  auto* prune_vocab_cmd = app.add_subcommand("prune-vocab", "Drop tokens unused by a corpus");
  prune_vocab_cmd->add_option("--model", model)->required();
  prune_vocab_cmd->add_option("--tokenizer", tokenizer)->required();
  prune_vocab_cmd->add_option("--corpus", corpus_files)->required();

  CalibArgs ca;
  auto add_calib = [&](CLI::App* sub) {
    sub->add_option("--tokenizer", ca.tokenizer);
    sub->add_option("--task", ca.task);
    sub->add_option("--data", ca.data, "Calibration JSONL");
    sub->add_option("--calibration-examples", ca.limit);
  };
  int keep = 0;
  std::string strategy, metric, anchor;
  auto* prune_depth_cmd = app.add_subcommand("prune-depth", "Keep a subset of layers");
  prune_depth_cmd->add_option("--model", model)->required();
  prune_depth_cmd->add_option("--keep", keep)->required();
  prune_depth_cmd->add_option("--strategy", strategy, "random, keep_first_k, keep_last_k, every_second, min_pairwise_distance");
  prune_depth_cmd->add_option("--metric", metric, "mae or cosine");
  prune_depth_cmd->add_option("--anchor", anchor, "first or mean");
  add_calib(prune_depth_cmd);

  int heads = 0, ffn = 0;
  auto* prune_width_cmd = app.add_subcommand("prune-width", "Remove attention heads and FFN neurons");
  prune_width_cmd->add_option("--model", model)->required();
  prune_width_cmd->add_option("--heads", heads, "Total heads to keep");
  prune_width_cmd->add_option("--ffn", ffn, "FFN neurons to keep per layer");
  add_calib(prune_width_cmd);

  auto* optimize_cmd = app.add_subcommand("optimize-graph", "Export and optimise an inference graph");
  optimize_cmd->add_option("--model", model, "Checkpoint or graph")->required();

  std::string graph;
  auto* quantize_cmd = app.add_subcommand("quantize", "Dynamic int8 quantization of linear weights");
  quantize_cmd->add_option("--graph", graph, "Graph or checkpoint")->required();

  std::string plan;
  auto* compress_cmd = app.add_subcommand("compress", "Run the full compression pipeline from a plan");
  compress_cmd->add_option("--plan", plan, "Plan file (alternative to --config)");

  EvalArgs ea;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Task metrics of a model or of a prediction file");
  evaluate_cmd->add_option("--model", ea.model, "Checkpoint or graph");
  evaluate_cmd->add_option("--tokenizer", ea.tokenizer);
  evaluate_cmd->add_option("--task", ea.task)->required();
  evaluate_cmd->add_option("--data", ea.data);
  evaluate_cmd->add_option("--predictions", ea.predictions, "JSONL whose targets are predictions");
  evaluate_cmd->add_option("--gold", ea.gold);
  evaluate_cmd->add_option("--batch-size", ea.batch_size);

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Size, latency and rates against a teacher");
  bench_cmd->add_option("--artifact", ba.artifact)->required();
  bench_cmd->add_option("--teacher", ba.teacher)->required();
  bench_cmd->add_option("--tokenizer", ba.tokenizer, "Teacher tokenizer");
  bench_cmd->add_option("--artifact-tokenizer", ba.artifact_tokenizer);
  bench_cmd->add_option("--task", ba.task);
  bench_cmd->add_option("--data", ba.data, "JSONL; without it a random batch is timed");
  bench_cmd->add_option("--batch", ba.batch);
  bench_cmd->add_option("--seq-len", ba.seq_len);
  bench_cmd->add_option("--warmup", ba.warmup);
  bench_cmd->add_option("--runs", ba.runs);

  std::string report_dir;
  bool report_json = false;
  auto* report_cmd = app.add_subcommand("report", "Print a compression report");
  report_cmd->add_option("--dir", report_dir, "Output directory of compress");
  report_cmd->add_flag("--json", report_json);

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic classification task");
  synth_cmd->add_option("--classes", sa.classes);
  synth_cmd->add_option("--train", sa.train);
  synth_cmd->add_option("--validation", sa.validation);
  synth_cmd->add_option("--test", sa.test);
  synth_cmd->add_option("--corpus-lines", sa.corpus_lines);
  synth_cmd->add_option("--topic-words", sa.topic_words, "Topic words per class");
  synth_cmd->add_option("--filler-words", sa.filler_words);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*train_tok) return cmd_train_tokenizer(g, tk);
    if (*pretrain) return cmd_pretrain(g, pa);
    if (*finetune_cmd) return cmd_finetune(g, ta, model);
    if (*distill_cmd) return cmd_distill(g, ta, teacher, student);
    if (*prune_vocab_cmd) return cmd_prune_vocab(g, model, tokenizer, corpus_files);
    if (*prune_depth_cmd) return cmd_prune_depth(g, model, keep, strategy, metric, anchor, ca);
    if (*prune_width_cmd) return cmd_prune_width(g, model, heads, ffn, ca);
    if (*optimize_cmd) return cmd_optimize_graph(g, model);
    if (*quantize_cmd) return cmd_quantize(g, graph);
    if (*compress_cmd) return cmd_compress(g, plan);
    if (*evaluate_cmd) return cmd_evaluate(g, ea);
    if (*bench_cmd) return cmd_bench(g, ba);
    if (*report_cmd) return cmd_report(g, report_dir, report_json);
    if (*synth_cmd) return cmd_synth(g, sa);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << app.help();
  return 1;
}
