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

#include "gcmp/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gcmp/error.hpp"
#include "gcmp/kernels.hpp"

namespace gcmp {

namespace fs = std::filesystem;

// --- shapes ---

ReferenceShape ReferenceShape::of(const ModelConfig& cfg) {
  ReferenceShape s;
  s.layers = cfg.num_layers;
  s.total_heads = cfg.total_heads();
  s.ffn = cfg.ffn_dims.empty() ? 0 : *std::max_element(cfg.ffn_dims.begin(), cfg.ffn_dims.end());
  return s;
}

std::vector<int> ReferenceShape::heads_per_layer() const {
  std::vector<int> h(static_cast<std::size_t>(layers), total_heads / std::max(1, layers));
  for (int i = 0; i < total_heads % std::max(1, layers); ++i) ++h[static_cast<std::size_t>(i)];
  return h;
}

void ReferenceShape::validate() const {
  if (layers < 1) throw ValidationError("reference shape needs at least one layer");
  if (total_heads < layers) throw ValidationError("reference shape needs at least one head per layer");
  if (ffn < 1) throw ValidationError("reference shape needs a positive FFN width");
}

nlohmann::json ReferenceShape::to_json() const {
  return {{"layers", layers}, {"total_heads", total_heads}, {"ffn", ffn}};
}

ReferenceShape ReferenceShape::from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "small") return small();
    if (name == "tiny") return tiny();
    throw ValidationError("unknown reference shape '" + name + "'");
  }
  ReferenceShape s;
  try {
    s.layers = j.at("layers").get<int>();
    s.total_heads = j.at("total_heads").get<int>();
    s.ffn = j.at("ffn").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed reference shape: ") + e.what());
  }
  s.validate();
  return s;
}

ModelConfig shaped_config(const ModelConfig& base, const ReferenceShape& shape) {
  shape.validate();
  ModelConfig c = base;
  c.num_layers = shape.layers;
  c.heads = shape.heads_per_layer();
  c.ffn_dims.assign(static_cast<std::size_t>(shape.layers), shape.ffn);
  c.validate();
  return c;
}

Checkpoint truncate_to_shape(const Checkpoint& ck, const ReferenceShape& shape) {
  const auto& cfg = ck.config;
  if (shape.layers > cfg.num_layers) throw ValidationError("cannot truncate to more layers than the model has");
  std::vector<int> first(static_cast<std::size_t>(shape.layers));
  std::iota(first.begin(), first.end(), 0);
  Checkpoint out = extract_layers(ck, first);
  const auto heads = shape.heads_per_layer();
  std::vector<std::vector<int>> drop_heads(first.size()), drop_neurons(first.size());
  for (std::size_t l = 0; l < first.size(); ++l) {
    if (heads[l] > out.config.heads[l] || shape.ffn > out.config.ffn_dims[l]) {
      throw ValidationError("reference shape is wider than layer " + std::to_string(l));
    }
    for (int h = heads[l]; h < out.config.heads[l]; ++h) drop_heads[l].push_back(h);
    for (int n = shape.ffn; n < out.config.ffn_dims[l]; ++n) drop_neurons[l].push_back(n);
  }
  return remove_ffn_neurons(remove_heads(out, drop_heads), drop_neurons);
}

// --- plan ---

nlohmann::json grid_axes_to_json(std::span<const GridAxis> axes) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [name, values] : axes) j.push_back({{"name", name}, {"values", values}});
  return j;
}

std::vector<GridAxis> grid_axes_from_json(const nlohmann::json& j) {
  std::vector<GridAxis> axes;
  try {
    for (const auto& a : j) axes.emplace_back(a.at("name").get<std::string>(), a.at("values").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed grid: ") + e.what());
  }
  for (const auto& [name, values] : axes)
    if (values.empty()) throw ValidationError("grid axis '" + name + "' has no values");
  return axes;
}

std::vector<GridAxis> default_distill_grid() {
  return {{"lr", kDistillLrGrid}, {"temperature", kTemperatureGrid}, {"task_weight", kTaskWeightGrid}};
}

std::vector<GridAxis> default_finetune_grid() { return {{"lr", kFinetuneLrGrid}}; }

void CompressionPlan::validate() const {
  task.validate();
  target.validate();
  if (assistant) assistant->validate();
  if (assistant_ratio <= 1.0) throw ValidationError("assistant ratio must exceed 1");
  if (calibration_examples < 1) throw ValidationError("calibration_examples must be positive");
  if (recovery.max_epochs < 1 || recovery.max_epochs > 3) throw ValidationError("recovery fine-tuning runs 1 to 3 epochs");
  if (recovery_threshold_pp < 0.0) throw ValidationError("recovery threshold must be non-negative");
  if (latency_batch < 1) throw ValidationError("latency batch must be positive");
  if (width.heads_per_iteration < 1 || width.neurons_per_iteration < 0) {
    throw ValidationError("width pruning steps must be positive");
  }
  for (const auto* g : {&assistant_grid, &depth_grid, &width_grid, &finetune_grid, &kd_grid})
    if (g->empty()) throw ValidationError("grids must have at least one axis");
  distill.validate();
  recovery.validate();
}

nlohmann::json CompressionPlan::to_json() const {
  nlohmann::json j = {
      {"teacher", teacher.string()},
      {"tokenizer", tokenizer.string()},
      {"train", train_data.string()},
      {"validation", validation_data.string()},
      {"test", test_data.string()},
      {"reference_pretrained", reference_pretrained.string()},
      {"output_dir", output_dir.string()},
      {"task", task.to_json()},
      {"target", target.to_json()},
      {"assistant_ratio", assistant_ratio},
      {"depth_strategy", depth.to_json()},
      {"width",
       {{"heads_per_iteration", width.heads_per_iteration},
        {"neurons_per_iteration", width.neurons_per_iteration},
        {"calibration_batch_size", width.sensitivity.batch_size},
        {"calibration_batches", width.sensitivity.max_batches}}},
      {"calibration_examples", calibration_examples},
      {"distill", distill.to_json()},
      {"grids",
       {{"assistant", grid_axes_to_json(assistant_grid)},
        {"depth", grid_axes_to_json(depth_grid)},
        {"width", grid_axes_to_json(width_grid)},
        {"finetune", grid_axes_to_json(finetune_grid)},
        {"kd", grid_axes_to_json(kd_grid)}}},
      {"recovery", recovery.to_json()},
      {"recovery_threshold_pp", recovery_threshold_pp},
      {"seed", seed},
      {"measure_latency", measure_latency},
      {"latency_batch", latency_batch},
  };
  if (assistant) j["assistant"] = assistant->to_json();
  return j;
}

CompressionPlan CompressionPlan::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  CompressionPlan p;
  auto path = [&](const char* key) -> fs::path {
    const auto s = j.value(key, std::string());
    if (s.empty()) return {};
    fs::path v(s);
    return v.is_relative() && !base_dir.empty() ? base_dir / v : v;
  };
  try {
    p.teacher = path("teacher");
    p.tokenizer = path("tokenizer");
    p.train_data = path("train");
    p.validation_data = path("validation");
    p.test_data = path("test");
    p.reference_pretrained = path("reference_pretrained");
    p.output_dir = path("output_dir");
    p.task = TaskSpec::from_json(j.at("task"));
    p.target = ReferenceShape::from_json(j.at("target"));
    if (j.contains("assistant") && !j.at("assistant").is_null()) p.assistant = ReferenceShape::from_json(j.at("assistant"));
    p.assistant_ratio = j.value("assistant_ratio", p.assistant_ratio);
    if (j.contains("depth_strategy")) p.depth = DepthPruneStrategy::from_json(j.at("depth_strategy"));
    if (j.contains("width")) {
      const auto& w = j.at("width");
      p.width.heads_per_iteration = w.value("heads_per_iteration", p.width.heads_per_iteration);
      p.width.neurons_per_iteration = w.value("neurons_per_iteration", p.width.neurons_per_iteration);
      p.width.sensitivity.batch_size = w.value("calibration_batch_size", p.width.sensitivity.batch_size);
      p.width.sensitivity.max_batches = w.value("calibration_batches", p.width.sensitivity.max_batches);
    }
    p.calibration_examples = j.value("calibration_examples", p.calibration_examples);
    if (j.contains("distill")) p.distill = DistillConfig::from_json(j.at("distill"));
    const auto grids = j.value("grids", nlohmann::json::object());
    auto grid = [&](const char* key, std::vector<GridAxis> fallback) {
      return grids.contains(key) ? grid_axes_from_json(grids.at(key)) : fallback;
    };
    p.assistant_grid = grid("assistant", default_distill_grid());
    p.depth_grid = grid("depth", default_distill_grid());
    p.width_grid = grid("width", default_distill_grid());
    p.finetune_grid = grid("finetune", default_finetune_grid());
    p.kd_grid = grid("kd", default_distill_grid());
    if (j.contains("recovery")) p.recovery = TrainConfig::from_json(j.at("recovery"), p.recovery);
    p.recovery_threshold_pp = j.value("recovery_threshold_pp", p.recovery_threshold_pp);
    p.seed = j.value("seed", p.seed);
    p.measure_latency = j.value("measure_latency", p.measure_latency);
    p.latency_batch = j.value("latency_batch", p.latency_batch);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed compression plan: ") + e.what());
  }
  p.validate();
  return p;
}

CompressionPlan CompressionPlan::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plan " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("plan " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

CompressionPlan CompressionPlan::seeded() const {
  CompressionPlan p = *this;
  p.distill.train.seed = seed;
  p.recovery.seed = seed;
  p.depth.seed = seed;
  return p;
}

// --- report ---

nlohmann::json StepRecord::to_json() const {
  return {{"step", id},           {"label", label},       {"executed", executed},
          {"artifact", artifact}, {"params", params},     {"size_bytes", size_bytes},
          {"vocab_size", vocab_size}, {"metrics", metrics.to_json()}, {"headline", headline},
          {"details", details}};
}

nlohmann::json CompressionReport::to_json() const {
  nlohmann::json steps_j = nlohmann::json::array(), base_j = nlohmann::json::array();
  for (const auto& s : steps) steps_j.push_back(s.to_json());
  for (const auto& b : baselines) base_j.push_back(b.to_json());
  const auto& last = final_step();
  nlohmann::json final_j = {
      {"performance_delta_pp", 100.0 * (last.headline - teacher.headline)},
      {"compression_rate", static_cast<double>(teacher.size_bytes) / static_cast<double>(last.size_bytes)},
      {"param_reduction", static_cast<double>(teacher.params) / static_cast<double>(last.params)},
  };
  nlohmann::json vs = nlohmann::json::object();
  for (const auto& b : baselines) {
    vs[b.id] = {{"performance_delta_pp", 100.0 * (last.headline - b.headline)},
                {"size_ratio", static_cast<double>(b.size_bytes) / static_cast<double>(last.size_bytes)}};
  }
  final_j["vs_baselines"] = vs;
  return {{"headline_metric", headline_metric},
          {"eval_split", eval_split},
          {"delta_formula", "100 * (artifact headline - reference headline), percentage points"},
          {"teacher", teacher.to_json()},
          {"steps", steps_j},
          {"baselines", base_j},
          {"final", final_j}};
}

nlohmann::json CompressionReport::timings_json() const {
  nlohmann::json j = nlohmann::json::object();
  double teacher_latency = 0.0;
  for (const auto& t : timings)
    if (t.id == "teacher") teacher_latency = t.latency.mean_seconds;
  for (const auto& t : timings) {
    j[t.id] = {{"mean_seconds", t.latency.mean_seconds},
               {"p50_seconds", t.latency.p50_seconds},
               {"runs", t.latency.runs},
               {"threads", t.latency.threads},
               {"acceleration", teacher_latency > 0.0 && t.latency.mean_seconds > 0.0
                                    ? teacher_latency / t.latency.mean_seconds
                                    : 0.0}};
  }
  return j;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w, bool right = false) {
  if (s.size() >= w) return s;
  return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string CompressionReport::table() const {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Model", "Params", "Size (bytes)", headline_metric + " (%)", "Delta (p.p.)", "Compression"});
  auto row = [&](const StepRecord& r) {
    rows.push_back({r.label, std::to_string(r.params), std::to_string(r.size_bytes), fixed(100.0 * r.headline, 2),
                    fixed(100.0 * (r.headline - teacher.headline), 2),
                    fixed(static_cast<double>(teacher.size_bytes) / static_cast<double>(r.size_bytes), 2) + "x"});
  };
  row(teacher);
  for (const auto& s : steps) {
    if (s.id == "S0" && !s.executed) continue;
    if (s.id == "S4.1") continue;  // the table reports step 4 after quantization
    row(s);
  }
  for (const auto& b : baselines) row(b);
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) out << (c ? "  " : "") << pad(rows[i][c], width[c], c > 0);
    out << "\n";
    if (i == 0) {
      std::size_t total = 2 * (width.size() - 1);
      for (auto w : width) total += w;
      out << std::string(total, '-') << "\n";
    }
  }
  return out.str();
}

// --- data ---

namespace {

std::vector<std::string> corpus_texts(std::span<const Example> examples) {
  std::vector<std::string> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    if (e.tokens.empty()) {
      out.push_back(e.text);
      continue;
    }
    std::string s;
    for (std::size_t i = 0; i < e.tokens.size(); ++i) s += (i ? " " : "") + e.tokens[i];
    out.push_back(std::move(s));
  }
  return out;
}

std::int64_t container_bytes(const Container& c) { return static_cast<std::int64_t>(encode_container(c).size()); }

struct Encoded {
  std::vector<EncodedExample> train, validation, eval;
};

Encoded encode_all(const BpeTokenizer& tok, const CompressionData& d, const TaskSpec& spec) {
  Encoded e;
  e.train = encode_examples(tok, d.train, spec);
  e.validation = encode_examples(tok, d.validation, spec);
  e.eval = encode_examples(tok, d.test.empty() ? d.validation : d.test, spec);
  return e;
}

Batch latency_batch(std::span<const EncodedExample> data, const TaskSpec& spec, int n) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(data.size(), static_cast<std::size_t>(n)); ++i) idx.push_back(i);
  return make_batch(data, idx, spec).batch;
}

LatencyStats single_thread_latency(const GraphProgram& g, const Batch& b) {
  const int threads = kernels::num_threads();
  kernels::set_num_threads(1);
  try {
    auto s = measure_latency(g, b);
    kernels::set_num_threads(threads);
    return s;
  } catch (...) {
    kernels::set_num_threads(threads);
    throw;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace

CompressionData load_compression_data(const CompressionPlan& plan) {
  CompressionData d{BpeTokenizer::load(plan.tokenizer), load_jsonl(plan.train_data), load_jsonl(plan.validation_data), {}};
  if (!plan.test_data.empty()) d.test = load_jsonl(plan.test_data);
  validate_examples(d.train, plan.task);
  validate_examples(d.validation, plan.task);
  validate_examples(d.test, plan.task);
  if (d.train.empty() || d.validation.empty()) throw ValidationError("compression needs train and validation data");
  return d;
}

Evaluation evaluate_graph(const GraphProgram& g, std::span<const EncodedExample> data, const TaskSpec& spec,
                          int batch_size) {
  Evaluation ev;
  std::vector<Target> gold;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      idx.push_back(i);
      gold.push_back(data[i].target);
    }
    TaskBatch tb = make_batch(data, idx, spec);
    Tensor logits = run_graph(g, tb.batch);
    loss_sum += task_loss(spec, logits, tb).item() * static_cast<double>(idx.size());
    auto preds = decode_predictions(spec, logits, data, idx);
    ev.predictions.insert(ev.predictions.end(), preds.begin(), preds.end());
  }
  ev.loss = data.empty() ? 0.0 : loss_sum / static_cast<double>(data.size());
  ev.metrics = compute_metrics(ev.predictions, gold, spec.head);
  return ev;
}

// --- stages ---

VocabStepResult vocab_step(const Checkpoint& model, const BpeTokenizer& tok, const CompressionData& data,
                           const CompressionPlan& plan) {
  if (model.tokenizer_hash != tok.fingerprint()) throw ValidationError("model was not trained with this tokenizer");
  const auto& spec = plan.task;
  const auto corpus = corpus_texts(data.train);
  VocabStepResult r{{Checkpoint{}, tok}, prune_vocabulary(tok, corpus), 0.0, 0.0, 0};
  const auto val_before = encode_examples(tok, data.validation, spec);
  r.metric_before = headline_metric(evaluate(model, val_before, spec).metrics, spec.head);

  r.model.tokenizer = r.prune.pruned_tokenizer;
  r.model.ckpt = reshape_embeddings(model, r.prune);
  const auto enc = encode_all(r.model.tokenizer, data, spec);
  r.metric_after_prune = headline_metric(evaluate(r.model.ckpt, enc.validation, spec).metrics, spec.head);
  if (100.0 * (r.metric_before - r.metric_after_prune) > plan.recovery_threshold_pp) {
    auto ft = finetune(r.model.ckpt, enc.train, enc.validation, spec, plan.recovery);
    r.model.ckpt = std::move(ft.ckpt);
    r.recovery_epochs = ft.epochs_run;
  }
  return r;
}

GridResult depth_step(const Checkpoint& teacher, std::span<const EncodedExample> train,
                      std::span<const EncodedExample> val, const CompressionPlan& plan, std::vector<int>* kept) {
  const int k = std::min(plan.target.layers, teacher.config.num_layers);
  const auto calib = train.first(std::min(train.size(), static_cast<std::size_t>(plan.calibration_examples)));
  auto layers = select_layers(teacher, k, plan.depth, calib, &plan.task);
  if (kept) *kept = layers;
  const Checkpoint student = extract_layers(teacher, layers);
  return distill_grid(teacher, student, train, val, plan.task, plan.distill, plan.depth_grid);
}

GridResult width_step(const Checkpoint& teacher, const Checkpoint& student, std::span<const EncodedExample> train,
                      std::span<const EncodedExample> val, const CompressionPlan& plan, WidthPruneResult* pruned) {
  WidthPruneConfig cfg = plan.width;
  cfg.target_total_heads = std::min(plan.target.total_heads, student.config.total_heads());
  cfg.target_ffn_neurons = std::min(plan.target.ffn, *std::min_element(student.config.ffn_dims.begin(),
                                                                       student.config.ffn_dims.end()));
  const auto calib = train.first(std::min(train.size(), static_cast<std::size_t>(plan.calibration_examples)));
  auto wp = prune_width(student, cfg, calib, plan.task);
  auto grid = distill_grid(teacher, wp.ckpt, train, val, plan.task, plan.distill, plan.width_grid);
  if (pruned) *pruned = std::move(wp);
  return grid;
}

Baselines build_baselines(const Checkpoint& teacher, const Checkpoint& reference, const CompressionData& data,
                          const CompressionPlan& plan) {
  if (reference.tokenizer_hash != teacher.tokenizer_hash) {
    throw ValidationError("reference model and teacher use different tokenizers");
  }
  const auto p = plan.seeded();
  const auto& spec = p.task;
  Baselines b{Checkpoint{}, Checkpoint{}, data.tokenizer};
  const auto full = encode_all(data.tokenizer, data, spec);
  const Checkpoint ref_head = with_task_head(reference, spec.head, p.seed);
  b.ft = finetune_grid(ref_head, full.train, full.validation, spec, p.distill.train, p.finetune_grid).best;

  const auto vp = prune_vocabulary(data.tokenizer, corpus_texts(data.train));
  b.kd_tokenizer = vp.pruned_tokenizer;
  const auto enc = encode_all(b.kd_tokenizer, data, spec);
  const Checkpoint teacher_vp = reshape_embeddings(teacher, vp);
  const Checkpoint student = reshape_embeddings(ref_head, vp);
  b.kd = distill_grid(teacher_vp, student, enc.train, enc.validation, spec, p.distill, p.kd_grid).best;
  return b;
}

namespace {

class Run {
 public:
  Run(const CompressionPlan& plan, const CompressionData& data) : plan_(plan), data_(data) {
    if (!plan_.output_dir.empty()) fs::create_directories(plan_.output_dir);
    report_.headline_metric = headline_metric_name(plan_.task.head);
    report_.eval_split = data_.test.empty() ? "validation" : "test";
  }

  CompressionReport& report() { return report_; }
  const CompressionPlan& plan() const { return plan_; }

  void save(const Checkpoint& ck, const std::string& name) {
    if (!plan_.output_dir.empty()) ck.save(plan_.output_dir / name);
  }
  void save(const GraphProgram& g, const std::string& name) {
    if (!plan_.output_dir.empty()) g.save(plan_.output_dir / name);
  }
  void save(const BpeTokenizer& tok, const std::string& name) {
    if (!plan_.output_dir.empty()) tok.save(plan_.output_dir / name);
  }

  StepRecord record(const std::string& id, const std::string& label, const Checkpoint& ck,
                    std::span<const EncodedExample> eval, const std::string& artifact) {
    StepRecord r;
    r.id = id;
    r.label = label;
    r.artifact = artifact;
    r.params = ck.parameter_count();
    r.size_bytes = container_bytes(ck.to_container());
    r.vocab_size = ck.config.vocab_size;
    r.metrics = evaluate(ck, eval, plan_.task).metrics;
    r.headline = headline_metric(r.metrics, plan_.task.head);
    time(id, export_graph(ck), eval);
    return r;
  }

  StepRecord record(const std::string& id, const std::string& label, const GraphProgram& g, std::int64_t params,
                    std::span<const EncodedExample> eval, const std::string& artifact) {
    StepRecord r;
    r.id = id;
    r.label = label;
    r.artifact = artifact;
    r.params = params;
    r.size_bytes = container_bytes(g.to_container());
    r.vocab_size = ModelConfig::from_json(g.meta.at("config")).vocab_size;
    r.metrics = evaluate_graph(g, eval, plan_.task).metrics;
    r.headline = headline_metric(r.metrics, plan_.task.head);
    time(id, g, eval);
    return r;
  }

  void fail(const std::string& stage, const std::exception& e) {
    if (plan_.output_dir.empty()) return;
    write_json(plan_.output_dir / "failure.json", {{"stage", stage}, {"error", e.what()}});
  }

  void finish() {
    if (plan_.output_dir.empty()) return;
    write_json(plan_.output_dir / "report.json", report_.to_json());
    write_text(plan_.output_dir / "report.txt", report_.table());
    if (plan_.measure_latency) write_json(plan_.output_dir / "timings.json", report_.timings_json());
    write_json(plan_.output_dir / "plan.json", plan_.to_json());
  }

 private:
  void time(const std::string& id, const GraphProgram& g, std::span<const EncodedExample> eval) {
    if (!plan_.measure_latency || eval.empty()) return;
    report_.timings.push_back({id, single_thread_latency(g, latency_batch(eval, plan_.task, plan_.latency_batch))});
  }

  const CompressionPlan& plan_;
  const CompressionData& data_;
  CompressionReport report_;
};

nlohmann::json grid_details(const GridResult& g) {
  return {{"grid", g.table_json()}, {"selected", grid_point_json(g.table.at(g.best_index).point)}};
}

}  // namespace

CompressionReport gradual_compress(const Checkpoint& teacher, const CompressionData& data,
                                   const CompressionPlan& plan_in, const Checkpoint* reference) {
  const CompressionPlan plan = plan_in.seeded();
  plan.validate();
  if (!(teacher.config.head == plan.task.head)) throw ValidationError("teacher head does not match the task");
  if (teacher.tokenizer_hash != data.tokenizer.fingerprint()) {
    throw ValidationError("teacher was not trained with the plan's tokenizer");
  }
  const auto& spec = plan.task;
  const auto teacher_shape = ReferenceShape::of(teacher.config);
  if (plan.target.layers > teacher_shape.layers || plan.target.total_heads > teacher_shape.total_heads ||
      plan.target.ffn > teacher_shape.ffn) {
    throw ValidationError("reference shape is larger than the teacher");
  }
  Run run(plan, data);
  auto& rep = run.report();
  std::string stage = "teacher";
  try {
    const auto full = encode_all(data.tokenizer, data, spec);
    rep.teacher = run.record("teacher", "Teacher", teacher, full.eval, "");

    // S0: teacher assistant when the size gap is large.
    stage = "S0";
    Checkpoint model = teacher;
    const std::int64_t target_params = count_parameters(shaped_config(teacher.config, plan.target));
    StepRecord s0;
    s0.id = "S0";
    s0.label = "Step 0 (TA)";
    if (needs_teacher_assistant(teacher.parameter_count(), target_params, plan.assistant_ratio)) {
      ReferenceShape as = plan.assistant.value_or(ReferenceShape{(teacher_shape.layers + plan.target.layers + 1) / 2,
                                                                 (teacher_shape.total_heads + plan.target.total_heads) / 2,
                                                                 (teacher_shape.ffn + plan.target.ffn) / 2});
      const Checkpoint init = truncate_to_shape(teacher, as);
      const auto ap = init.parameter_count();
      if (ap >= teacher.parameter_count() || ap <= target_params) {
        throw ValidationError("assistant shape must lie strictly between the target and the teacher");
      }
      auto grid = distill_grid(teacher, init, full.train, full.validation, spec, plan.distill, plan.assistant_grid);
      model = grid.best;
      run.save(model, "s0_assistant.gcmp");
      s0 = run.record("S0", "Step 0 (TA)", model, full.eval, "s0_assistant.gcmp");
      s0.details = grid_details(grid);
      s0.details["assistant_shape"] = as.to_json();
    } else {
      s0.executed = false;
      s0.params = teacher.parameter_count();
      s0.size_bytes = rep.teacher.size_bytes;
      s0.vocab_size = rep.teacher.vocab_size;
      s0.metrics = rep.teacher.metrics;
      s0.headline = rep.teacher.headline;
    }
    s0.details["size_ratio"] = static_cast<double>(teacher.parameter_count()) / static_cast<double>(target_params);
    rep.steps.push_back(s0);

    // S1: vocabulary pruning, fine-tuned back when the metric dropped.
    stage = "S1";
    auto vs = vocab_step(model, data.tokenizer, data, plan);
    run.save(vs.model.ckpt, "s1_vocab.gcmp");
    run.save(vs.model.tokenizer, "s1_tokenizer.json");
    const auto enc = encode_all(vs.model.tokenizer, data, spec);
    auto s1 = run.record("S1", "Step 1 (VP+KD)", vs.model.ckpt, enc.eval, "s1_vocab.gcmp");
    s1.details = {{"removed_tokens", vs.prune.removed_count()},
                  {"removed_fraction", vs.prune.removed_fraction},
                  {"removed_embedding_params",
                   static_cast<std::int64_t>(vs.prune.removed_count()) * teacher.config.hidden},
                  {"validation_before", vs.metric_before},
                  {"validation_after_prune", vs.metric_after_prune},
                  {"recovery_epochs", vs.recovery_epochs},
                  {"tokenizer", "s1_tokenizer.json"}};
    rep.steps.push_back(s1);
    const Checkpoint& step_teacher = vs.model.ckpt;

    // S2: depth pruning + distillation.
    stage = "S2";
    std::vector<int> kept;
    auto g2 = depth_step(step_teacher, enc.train, enc.validation, plan, &kept);
    run.save(g2.best, "s2_depth.gcmp");
    auto s2 = run.record("S2", "Step 2 (DP+KD)", g2.best, enc.eval, "s2_depth.gcmp");
    s2.details = grid_details(g2);
    s2.details["kept_layers"] = kept;
    s2.details["strategy"] = plan.depth.to_json();
    rep.steps.push_back(s2);

    // S3: width pruning + re-distillation.
    stage = "S3";
    WidthPruneResult wp;
    auto g3 = width_step(step_teacher, g2.best, enc.train, enc.validation, plan, &wp);
    run.save(g3.best, "s3_width.gcmp");
    auto s3 = run.record("S3", "Step 3 (WP+KD)", g3.best, enc.eval, "s3_width.gcmp");
    s3.details = grid_details(g3);
    s3.details["prune_iterations"] = wp.steps.size();
    s3.details["heads"] = g3.best.config.heads;
    s3.details["ffn_dims"] = g3.best.config.ffn_dims;
    rep.steps.push_back(s3);

    // S4.1: graph optimisation, S4.2: dynamic int8 quantization.
    stage = "S4.1";
    const auto exported = export_graph(g3.best);
    auto opt = optimize_graph(exported);
    run.save(opt.graph, "s4_1_graph.gcmp");
    auto s41 = run.record("S4.1", "Step 4.1 (GO)", opt.graph, g3.best.parameter_count(), enc.eval, "s4_1_graph.gcmp");
    s41.details = {{"rounds", opt.rounds},
                   {"nodes_before", exported.node_count()},
                   {"nodes_after", opt.graph.node_count()}};
    rep.steps.push_back(s41);

    stage = "S4.2";
    auto quant = quantize_dynamic(opt.graph);
    run.save(quant, "s4_2_graph_int8.gcmp");
    auto s42 = run.record("S4.2", "Step 4 (GO+Q)", quant, g3.best.parameter_count(), enc.eval, "s4_2_graph_int8.gcmp");
    s42.details = {{"linear_weight_payload_ratio", linear_weight_payload_ratio(quant)}};
    rep.steps.push_back(s42);

    if (reference) {
      stage = "baselines";
      auto b = build_baselines(teacher, *reference, data, plan);
      run.save(b.ft, "baseline_ft.gcmp");
      run.save(b.kd, "baseline_kd.gcmp");
      run.save(b.kd_tokenizer, "baseline_kd_tokenizer.json");
      rep.baselines.push_back(run.record("FT", "Reference (FT)", b.ft, full.eval, "baseline_ft.gcmp"));
      const auto kd_eval = encode_examples(b.kd_tokenizer, data.test.empty() ? data.validation : data.test, spec);
      rep.baselines.push_back(run.record("KD", "Reference (KD)", b.kd, kd_eval, "baseline_kd.gcmp"));
    }
  } catch (const std::exception& e) {
    run.fail(stage, e);
    throw;
  }
  run.finish();
  return rep;
}

CompressionReport gradual_compress(const CompressionPlan& plan) {
  if (plan.teacher.empty() || plan.tokenizer.empty() || plan.train_data.empty() || plan.validation_data.empty()) {
    throw ValidationError("plan needs teacher, tokenizer, train and validation paths");
  }
  const auto data = load_compression_data(plan);
  const auto teacher = Checkpoint::load(plan.teacher);
  if (plan.reference_pretrained.empty()) return gradual_compress(teacher, data, plan);
  const auto reference = Checkpoint::load(plan.reference_pretrained);
  return gradual_compress(teacher, data, plan, &reference);
}

// --- efficiency ---

nlohmann::json EfficiencyReport::to_json() const {
  return {{"size_bytes", size_bytes},
          {"param_count", param_count},
          {"mean_latency_seconds", mean_latency_seconds},
          {"compression_rate", compression_rate},
          {"acceleration", acceleration},
          {"performance_delta_pp", performance_delta_pp}};
}

EfficiencyReport efficiency_from(const EfficiencyInputs& teacher, const EfficiencyInputs& artifact) {
  if (teacher.size <= 0.0 || artifact.size <= 0.0) throw ValidationError("sizes must be positive");
  if (teacher.latency_seconds <= 0.0 || artifact.latency_seconds <= 0.0) {
    throw ValidationError("latencies must be positive");
  }
  EfficiencyReport r;
  r.size_bytes = static_cast<std::int64_t>(artifact.size);
  r.mean_latency_seconds = artifact.latency_seconds;
  r.compression_rate = teacher.size / artifact.size;
  r.acceleration = teacher.latency_seconds / artifact.latency_seconds;
  r.performance_delta_pp = 100.0 * (artifact.metric - teacher.metric);
  return r;
}

EfficiencySummary average_efficiency(std::span<const EfficiencyReport> per_task) {
  if (per_task.empty()) throw ValidationError("no efficiency entries to average");
  EfficiencySummary s;
  for (const auto& r : per_task) {
    s.compression_rate += r.compression_rate;
    s.acceleration += r.acceleration;
    s.performance_delta_pp += r.performance_delta_pp;
  }
  const auto n = static_cast<double>(per_task.size());
  s.compression_rate /= n;
  s.acceleration /= n;
  s.performance_delta_pp /= n;
  return s;
}

std::int64_t graph_parameter_count(const GraphProgram& g) {
  return count_parameters(ModelConfig::from_json(g.meta.at("config")));
}

LoadedArtifact load_artifact(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto c = decode_container(bytes);
  LoadedArtifact a;
  a.size_bytes = static_cast<std::int64_t>(bytes.size());
  const auto kind = c.header.value("kind", "");
  if (kind == "graph") {
    a.graph = GraphProgram::from_container(c);
  } else if (kind == "checkpoint") {
    a.graph = export_graph(Checkpoint::from_container(c));
  } else {
    throw ValidationError(path.string() + " is neither a checkpoint nor a graph");
  }
  a.params = graph_parameter_count(a.graph);
  return a;
}

namespace {

// Ids outside a (vocabulary-pruned) graph's table become <unk>.
Batch fit_vocabulary(Batch b, const GraphProgram& g) {
  const int vocab = ModelConfig::from_json(g.meta.at("config")).vocab_size;
  for (auto& id : b.ids)
    if (id >= vocab) id = SpecialIds::kUnk;
  return b;
}

}  // namespace

EfficiencyReport efficiency_stats(const fs::path& artifact, const fs::path& teacher, const Batch& sample, int warmup,
                                  int runs) {
  if (runs < 30) throw ValidationError("latency needs at least 30 timed runs");
  const auto a = load_artifact(artifact);
  const auto t = load_artifact(teacher);
  const int threads = kernels::num_threads();
  kernels::set_num_threads(1);
  LatencyStats la, lt;
  try {
    lt = measure_latency(t.graph, fit_vocabulary(sample, t.graph), warmup, runs);
    la = measure_latency(a.graph, fit_vocabulary(sample, a.graph), warmup, runs);
  } catch (...) {
    kernels::set_num_threads(threads);
    throw;
  }
  kernels::set_num_threads(threads);
  auto r = efficiency_from({static_cast<double>(t.size_bytes), lt.mean_seconds, 0.0},
                           {static_cast<double>(a.size_bytes), la.mean_seconds, 0.0});
  r.param_count = a.params;
  return r;
}

}  // namespace gcmp
