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

#include "gcmp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gcmp/error.hpp"
#include "gcmp/ops.hpp"
#include "gcmp/optim.hpp"

namespace gcmp {

namespace {

std::string schedule_name(Schedule s) { return s == Schedule::Constant ? "constant" : "warmup_cosine"; }

Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::Constant;
  if (s == "warmup_cosine") return Schedule::WarmupCosine;
  throw ValidationError("unknown schedule '" + s + "'");
}

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t salt, std::uint64_t step) {
  return Rng::mix(Rng::mix(seed ^ salt) + step);
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
  if (batch_size < 1 || eval_batch_size < 1) throw ValidationError("batch sizes must be positive");
  if (max_epochs < 0 || patience < 0) throw ValidationError("epochs and patience must be non-negative");
  if (patience > max_epochs && max_epochs > 0) throw ValidationError("patience cannot exceed max_epochs");
  if (!(warmup_fraction >= 0.0f && warmup_fraction < 1.0f)) throw ValidationError("warmup_fraction in [0, 1)");
  if (!(mask_rate >= 0.0f && mask_rate < 1.0f)) throw ValidationError("mask_rate must be in [0, 1)");
  for (auto [steps, len] : seq_len_phases)
    if (steps < 0 || len < 3) throw ValidationError("bad sequence-length phase");
  if (eval_interval < 1) throw ValidationError("eval_interval must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json phases = nlohmann::json::array();
  for (auto [s, l] : seq_len_phases) phases.push_back({s, l});
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"warmup_fraction", warmup_fraction},
          {"schedule", schedule_name(schedule)},
          {"seed", seed},
          {"weight_decay", weight_decay},
          {"eval_batch_size", eval_batch_size},
          {"mask_rate", mask_rate},
          {"seq_len_phases", phases},
          {"eval_interval", eval_interval}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    if (j.contains("seq_len_phases")) {
      c.seq_len_phases.clear();
      for (const auto& p : j.at("seq_len_phases")) c.seq_len_phases.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
    c.eval_interval = j.value("eval_interval", c.eval_interval);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

float lr_at(std::int64_t step, std::int64_t total, float peak, float warmup_fraction, Schedule schedule) {
  if (schedule == Schedule::Constant) return peak;
  if (total <= 0) return peak;
  const auto warm = static_cast<std::int64_t>(std::floor(static_cast<double>(warmup_fraction) * total));
  if (step < warm) return static_cast<float>(peak * static_cast<double>(step) / static_cast<double>(warm));
  const double span = static_cast<double>(std::max<std::int64_t>(1, total - warm));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  return static_cast<float>(peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// --- MLM ---

MlmCorruption mlm_mask(const Batch& batch, float mask_rate, int vocab_size, std::uint64_t seed) {
  if (!(mask_rate >= 0.0f && mask_rate < 1.0f)) throw ValidationError("mask_rate must be in [0, 1)");
  if (vocab_size <= SpecialIds::kCount) throw ValidationError("vocabulary has no maskable tokens");
  Rng rng(seed);
  MlmCorruption out;
  out.ids = batch.ids;
  out.targets.assign(batch.ids.size(), ops::kIgnore);
  out.action.assign(batch.ids.size(), MaskAction::None);
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    if (batch.mask[i] <= 0.0f || BpeTokenizer::is_special(batch.ids[i])) continue;
    if (!(rng.uniform() < mask_rate)) continue;
    out.targets[i] = batch.ids[i];
    const float r = rng.uniform();
    if (r < 0.8f) {
      out.ids[i] = SpecialIds::kMask;
      out.action[i] = MaskAction::Masked;
    } else if (r < 0.9f) {
      out.ids[i] = static_cast<TokenId>(SpecialIds::kCount + rng.below(vocab_size - SpecialIds::kCount));
      out.action[i] = MaskAction::Random;
    } else {
      out.action[i] = MaskAction::Kept;
    }
  }
  return out;
}

std::vector<std::vector<TokenId>> encode_lines(const BpeTokenizer& tok, std::span<const std::string> lines,
                                               int max_len) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    auto ids = tok.encode(line);
    if (static_cast<int>(ids.size()) > max_len - 2) ids.resize(static_cast<std::size_t>(max_len - 2));
    std::vector<TokenId> seq{SpecialIds::kCls};
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(SpecialIds::kSep);
    out.push_back(std::move(seq));
  }
  return out;
}

namespace {

struct MlmBatchLoss {
  Tensor loss;
  std::int64_t selected = 0;
  std::int64_t correct = 0;
};

MlmBatchLoss mlm_batch(const Checkpoint& ck, const std::vector<std::vector<TokenId>>& seqs, float mask_rate,
                       std::uint64_t mask_seed, const ForwardOptions& opts) {
  Batch b = Batch::from_sequences(seqs);
  auto corrupt = mlm_mask(b, mask_rate, ck.config.vocab_size, mask_seed);
  MlmBatchLoss out;
  for (auto t : corrupt.targets) out.selected += t != ops::kIgnore;
  if (out.selected == 0) return out;
  b.ids = corrupt.ids;
  Tensor logits = forward(ck, b, opts);
  const std::int64_t v = ck.config.vocab_size;
  Tensor flat = ops::reshape(logits, {logits.numel() / v, v});
  out.loss = ops::cross_entropy(flat, corrupt.targets);
  const auto lv = flat.data();
  for (std::size_t i = 0; i < corrupt.targets.size(); ++i) {
    if (corrupt.targets[i] == ops::kIgnore) continue;
    const auto row = lv.subspan(i * static_cast<std::size_t>(v), static_cast<std::size_t>(v));
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    out.correct += best == corrupt.targets[i];
  }
  return out;
}

}  // namespace

MlmEval evaluate_mlm(const Checkpoint& ck, std::span<const std::vector<TokenId>> seqs, float mask_rate,
                     std::uint64_t seed, int batch_size) {
  double loss_sum = 0.0;
  std::int64_t selected = 0, correct = 0;
  for (std::size_t start = 0; start < seqs.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(seqs.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<TokenId>> chunk(seqs.begin() + start, seqs.begin() + end);
    auto r = mlm_batch(ck, chunk, mask_rate, step_seed(seed, 0x6d6c6d, start), {});
    if (r.selected == 0) continue;
    loss_sum += r.loss.item() * static_cast<double>(r.selected);
    selected += r.selected;
    correct += r.correct;
  }
  MlmEval e;
  if (selected > 0) {
    e.loss = loss_sum / static_cast<double>(selected);
    e.accuracy = static_cast<double>(correct) / static_cast<double>(selected);
  }
  return e;
}

PretrainResult pretrain_mlm(const Checkpoint& init, const BpeTokenizer& tok,
                            std::span<const std::string> train_lines, std::span<const std::string> val_lines,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (init.config.head.type != HeadType::MLM) throw ValidationError("pre-training needs an MLM head");
  if (static_cast<std::size_t>(init.config.vocab_size) != tok.vocab_size()) {
    throw ValidationError("checkpoint vocabulary does not match the tokenizer");
  }
  if (!init.tokenizer_hash.empty() && init.tokenizer_hash != tok.fingerprint()) {
    throw ValidationError("checkpoint is bound to a different tokenizer");
  }
  if (train_lines.empty() || val_lines.empty()) throw ValidationError("pre-training needs train and validation lines");
  auto phases = cfg.seq_len_phases;
  if (phases.empty()) phases.emplace_back(0, init.config.max_positions);
  std::int64_t total = 0;
  int longest = 0;
  for (auto [steps, len] : phases) {
    if (len > init.config.max_positions) throw ValidationError("phase length exceeds max_positions");
    total += steps;
    longest = std::max(longest, len);
  }
  const auto val = encode_lines(tok, val_lines, longest);
  const std::uint64_t val_seed = step_seed(cfg.seed, 0x76616c, 0);

  PretrainResult res;
  Checkpoint work(init);
  work.tokenizer_hash = tok.fingerprint();
  const auto start_eval = evaluate_mlm(work, val, cfg.mask_rate, val_seed, cfg.eval_batch_size);
  res.initial_val_loss = res.val_loss = start_eval.loss;
  res.mlm_accuracy = start_eval.accuracy;
  res.ckpt = work;
  if (total == 0) return res;

  work.set_requires_grad(true);
  AdamW opt(work.parameters(), {.weight_decay = cfg.weight_decay});
  Rng sampler(step_seed(cfg.seed, 0x73616d, 0));
  std::int64_t step = 0;
  for (auto [steps, len] : phases) {
    const auto train = encode_lines(tok, train_lines, len);
    for (int s = 0; s < steps; ++s, ++step) {
      std::vector<std::vector<TokenId>> batch;
      for (int i = 0; i < cfg.batch_size; ++i) {
        batch.push_back(train[static_cast<std::size_t>(sampler.below(static_cast<std::int64_t>(train.size())))]);
      }
      opt.zero_grad();
      {
        Tape tape;
        TapeScope scope(tape);
        ForwardOptions fo{.mode = Mode::Train, .seed = step_seed(cfg.seed, 0x64726f, step)};
        auto r = mlm_batch(work, batch, cfg.mask_rate, step_seed(cfg.seed, 0x6d736b, step), fo);
        if (r.selected > 0) tape.backward(r.loss);
      }
      opt.step(lr_at(step, total, cfg.lr, cfg.warmup_fraction, cfg.schedule));
      if ((step + 1) % cfg.eval_interval == 0 || step + 1 == total) {
        const auto e = evaluate_mlm(work, val, cfg.mask_rate, val_seed, cfg.eval_batch_size);
        if (e.loss < res.val_loss) {
          res.val_loss = e.loss;
          res.mlm_accuracy = e.accuracy;
          res.ckpt = work;
        }
      }
    }
  }
  res.steps = total;
  return res;
}

// --- supervised ---

EarlyStopResult train_epochs(const Checkpoint& start, std::size_t train_size, const TrainConfig& cfg,
                             const BatchLossFn& batch_loss, const ValLossFn& val_loss) {
  cfg.validate();
  EarlyStopResult res;
  res.best = start;
  res.best_val_loss = val_loss(start);
  if (cfg.max_epochs == 0 || train_size == 0) return res;

  Checkpoint work(start);
  work.set_requires_grad(true);
  AdamW opt(work.parameters(), {.weight_decay = cfg.weight_decay});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((train_size + bs - 1) / bs);
  const std::int64_t total = steps_per_epoch * cfg.max_epochs;
  std::vector<std::size_t> order(train_size);
  std::int64_t step = 0;
  int since_best = 0;
  bool have_best = false;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < train_size; ++i) order[i] = i;
    Rng rng(step_seed(cfg.seed, 0x65706f, static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < train_size; s += bs, ++step) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(bs, train_size - s));
      opt.zero_grad();
      {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = batch_loss(work, idx, step_seed(cfg.seed, 0x64726f, step));
        loss_sum += loss.item() * static_cast<double>(idx.size());
        tape.backward(loss);
      }
      opt.step(lr_at(step, total, cfg.lr, cfg.warmup_fraction, cfg.schedule));
    }
    const double v = val_loss(work);
    res.history.push_back({epoch, loss_sum / static_cast<double>(train_size), v});
    res.epochs_run = epoch;
    if (!have_best || v < res.best_val_loss) {
      have_best = true;
      res.best_val_loss = v;
      res.best_epoch = epoch;
      res.best = work;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return res;
}

Evaluation evaluate(const Checkpoint& ck, std::span<const EncodedExample> data, const TaskSpec& spec,
                    int batch_size) {
  if (!(ck.config.head == spec.head)) throw ValidationError("checkpoint head does not match the task");
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
    Tensor logits = forward(ck, tb.batch);
    loss_sum += task_loss(spec, logits, tb).item() * static_cast<double>(idx.size());
    auto preds = decode_predictions(spec, logits, data, idx);
    ev.predictions.insert(ev.predictions.end(), preds.begin(), preds.end());
  }
  ev.loss = data.empty() ? 0.0 : loss_sum / static_cast<double>(data.size());
  ev.metrics = compute_metrics(ev.predictions, gold, spec.head);
  return ev;
}

FinetuneResult finetune(const Checkpoint& ck, std::span<const EncodedExample> train,
                        std::span<const EncodedExample> val, const TaskSpec& spec, const TrainConfig& cfg) {
  if (!(ck.config.head == spec.head)) throw ValidationError("checkpoint head does not match the task");
  if (val.empty()) throw ValidationError("fine-tuning needs a validation split");
  auto batch_loss = [&](const Checkpoint& m, std::span<const std::size_t> idx, std::uint64_t seed) {
    TaskBatch tb = make_batch(train, idx, spec);
    return task_loss(spec, forward(m, tb.batch, {.mode = Mode::Train, .seed = seed}), tb);
  };
  auto val_loss = [&](const Checkpoint& m) { return evaluate(m, val, spec, cfg.eval_batch_size).loss; };
  auto es = train_epochs(ck, train.size(), cfg, batch_loss, val_loss);
  FinetuneResult r;
  r.validation = evaluate(es.best, val, spec, cfg.eval_batch_size);
  r.ckpt = std::move(es.best);
  r.best_epoch = es.best_epoch;
  r.epochs_run = es.epochs_run;
  r.history = std::move(es.history);
  return r;
}

// --- grid search ---

std::vector<GridPoint> expand_grid(std::span<const GridAxis> axes) {
  std::vector<GridPoint> points{GridPoint{}};
  for (const auto& [key, values] : axes) {
    if (values.empty()) throw ValidationError("grid axis '" + key + "' has no values");
    std::vector<GridPoint> next;
    for (const auto& p : points)
      for (double v : values) {
        GridPoint q = p;
        q.emplace_back(key, v);
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  return points;
}

double grid_value(const GridPoint& p, const std::string& key, double fallback) {
  for (const auto& [k, v] : p)
    if (k == key) return v;
  return fallback;
}

nlohmann::json grid_point_json(const GridPoint& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : p) j[k] = v;
  return j;
}

nlohmann::json GridResult::table_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < table.size(); ++i) {
    rows.push_back({{"params", grid_point_json(table[i].point)},
                    {"val_loss", table[i].val_loss},
                    {"metrics", table[i].metrics.to_json()},
                    {"selected", i == best_index}});
  }
  return rows;
}

GridResult grid_search(std::span<const GridAxis> axes, const std::function<TrialOutcome(const GridPoint&)>& trial) {
  const auto points = expand_grid(axes);
  GridResult res;
  bool have = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    TrialOutcome o = trial(points[i]);
    res.table.push_back({points[i], o.val_loss, o.metrics});
    if (!have || o.val_loss < res.table[res.best_index].val_loss) {
      have = true;
      res.best_index = i;
      res.best = std::move(o.ckpt);
    }
  }
  return res;
}

TrainConfig apply_grid_point(TrainConfig cfg, const GridPoint& p) {
  for (const auto& [k, v] : p) {
    if (k == "lr") {
      cfg.lr = static_cast<float>(v);
    } else if (k == "batch_size") {
      cfg.batch_size = static_cast<int>(v);
    } else if (k == "max_epochs") {
      cfg.max_epochs = static_cast<int>(v);
    } else if (k == "warmup_fraction") {
      cfg.warmup_fraction = static_cast<float>(v);
    } else {
      throw ValidationError("unknown training grid key '" + k + "'");
    }
  }
  cfg.validate();
  return cfg;
}

GridResult finetune_grid(const Checkpoint& ck, std::span<const EncodedExample> train,
                         std::span<const EncodedExample> val, const TaskSpec& spec, const TrainConfig& base,
                         std::span<const GridAxis> axes) {
  return grid_search(axes, [&](const GridPoint& p) {
    auto r = finetune(ck, train, val, spec, apply_grid_point(base, p));
    return TrialOutcome{std::move(r.ckpt), r.validation.loss, r.validation.metrics};
  });
}

}  // namespace gcmp
