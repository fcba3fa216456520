#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "semfuse/checkpoint.hpp"
#include "semfuse/config.hpp"
#include "semfuse/data.hpp"
#include "semfuse/fusion_net.hpp"
#include "semfuse/losses.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/optimizer.hpp"
#include "semfuse/report.hpp"
#include "semfuse/seg_net.hpp"

namespace semfuse {

enum class Phase { WARM_START, SEMANTIC };

inline std::string to_string(Phase p) { return p == Phase::WARM_START ? "warm" : "semantic"; }

/// One optimizer step as written to the training log.
struct StepRecord {
  Phase phase = Phase::WARM_START;
  int epoch = 0;
  long step = 0;
  std::string batch;  // comma-separated pair ids
  double loss = 0.0;
  std::map<std::string, double> components;
  std::optional<double> corr_sum;  // batch mean of Corr(ir, f) + Corr(vis, f)

  std::string to_line() const {
    std::string out = "step=" + std::to_string(step) + " phase=" + to_string(phase) + " epoch=" + std::to_string(epoch) +
                      " loss=" + fmt(loss);
    for (const auto& [k, v] : components) out += " " + k + "=" + fmt(v);
    if (corr_sum) out += " corr_sum=" + fmt(*corr_sum);
    out += " batch=" + batch;
    return out;
  }

  static std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }
};

struct ValidationStats {
  double sem_loss = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  double corr_sum = 0.0;
};

struct EpochSummary {
  Phase phase = Phase::WARM_START;
  int epoch = 0;
  double mean_loss = 0.0;
  std::map<std::string, double> mean_components;
  std::optional<ValidationStats> validation;

  std::string to_line() const {
    std::string out = "epoch=" + std::to_string(epoch) + " phase=" + to_string(phase) +
                      " mean_loss=" + StepRecord::fmt(mean_loss);
    for (const auto& [k, v] : mean_components) out += " mean_" + k + "=" + StepRecord::fmt(v);
    if (validation)
      out += " val_sem=" + StepRecord::fmt(validation->sem_loss) + " val_miou=" + StepRecord::fmt(validation->miou) +
             " val_macc=" + StepRecord::fmt(validation->macc) + " val_corr_sum=" + StepRecord::fmt(validation->corr_sum);
    return out;
  }
};

/// Optional observers of training progress.
struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
};

/// Progress of one phase: counters, per-step history, optimizer moments.
struct TrainState {
  Phase phase = Phase::WARM_START;
  int epoch = 0;
  long step = 0;
  std::uint64_t seed = 0;
  std::vector<StepRecord> history;
  std::vector<EpochSummary> epochs;
  std::vector<std::vector<double>> first_moments, second_moments;

  /// Final epoch mean loss strictly below the first (trivially true with fewer than two epochs).
  bool trend_ok() const { return epochs.size() < 2 || epochs.back().mean_loss < epochs.front().mean_loss; }
};

// ---------------------------------------------------------------------------
// Checkpoints of trained models

/// Metadata text: the run config followed by a [checkpoint] section.
inline std::string checkpoint_metadata(const RunConfig& cfg, const std::string& phase, int epochs_completed) {
  return serialize_config(cfg) + "[checkpoint]\nphase = " + phase + "\nepochs = " + std::to_string(epochs_completed) +
         "\n";
}

/// Run config recorded in a checkpoint, finalized.
inline RunConfig checkpoint_config(const Checkpoint& ckpt) {
  const auto cut = ckpt.metadata.find("[checkpoint]");
  RunConfig cfg;
  parse_config_text(cfg, ckpt.metadata.substr(0, cut), "<checkpoint>");
  cfg.finalize();
  return cfg;
}

/// Value of `key` in the [checkpoint] section, or empty.
inline std::string checkpoint_info(const Checkpoint& ckpt, const std::string& key) {
  const auto cut = ckpt.metadata.find("[checkpoint]");
  if (cut == std::string::npos) return {};
  std::istringstream in(ckpt.metadata.substr(cut));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && detail::trim(line.substr(0, eq)) == key) return detail::trim(line.substr(eq + 1));
  }
  return {};
}

template <typename T>
Checkpoint make_checkpoint(const RunConfig& cfg, const std::string& phase, int epochs_completed,
                           const FusionModel<T>& fusion, const SegModel<T>* seg = nullptr) {
  Checkpoint ckpt{checkpoint_metadata(cfg, phase, epochs_completed), {}};
  export_parameters(fusion.parameters(), ckpt);
  if (seg) export_parameters(seg->parameters(), ckpt);
  return ckpt;
}

template <typename T>
FusionModel<T> load_fusion_model(const Checkpoint& ckpt) {
  FusionModel<T> model(checkpoint_config(ckpt).train);
  import_parameters(model.parameters(), ckpt);
  return model;
}

/// Segmentation network stored in a checkpoint; IoError when the checkpoint has none.
template <typename T>
SegModel<T> load_seg_model(const Checkpoint& ckpt) {
  if (!ckpt.find("seg.head.weight")) throw IoError("checkpoint holds no segmentation network");
  SegModel<T> model(checkpoint_config(ckpt).train);
  import_parameters(model.parameters(), ckpt);
  return model;
}

// ---------------------------------------------------------------------------
// Data

struct Splits {
  std::vector<ImagePair> train;
  std::vector<ImagePair> val;
};

/// Synthetic validation scenes: same generator, disjoint seed and id prefix.
inline SynthSpec validation_spec(const DataConfig& data) {
  SynthSpec spec = data.synth_train;
  spec.images = data.synth_val_images;
  spec.seed = data.synth_train.seed + 1;
  spec.id_prefix = "val";
  return spec;
}

/// Training and validation pairs for a finalized config: synthetic scenes when data.root is empty.
inline Splits load_splits(const RunConfig& cfg) {
  Splits s;
  if (cfg.data.root.empty()) {
    s.train = generate_synthetic(cfg.data.synth_train);
    if (cfg.data.synth_val_images > 0) s.val = generate_synthetic(validation_spec(cfg.data));
    return s;
  }
  const auto palette = cfg.palette();
  s.train = load_dataset(scan_dataset(cfg.data.root, cfg.data.train_split, palette, cfg.train));
  if (!cfg.data.val_split.empty())
    s.val = load_dataset(scan_dataset(cfg.data.root, cfg.data.val_split, palette, cfg.train));
  return s;
}

namespace detail {

template <typename T>
struct Batch {
  Var<T> ir, vis;
  LabelBatch labels;
  std::string ids;
};

template <typename T>
Batch<T> make_batch(const std::vector<const ImagePair*>& pairs, bool need_labels) {
  std::vector<const Image*> irs, viss;
  Batch<T> b;
  for (const ImagePair* p : pairs) {
    irs.push_back(&p->ir);
    viss.push_back(&p->vis_luma);
    b.ids += (b.ids.empty() ? "" : ",") + p->id;
    if (need_labels) {
      if (!p->label) throw LabelError(p->id + ": semantic training needs a label map");
      b.labels.push_back(*p->label);
    }
  }
  b.ir = Var<T>::constant(stack_images<T>(irs));
  b.vis = Var<T>::constant(stack_images<T>(viss));
  return b;
}

template <typename T>
double mean_of(const Tensor<T>& t) {
  double acc = 0.0;
  for (T v : t.values()) acc += static_cast<double>(v);
  return t.size() ? acc / static_cast<double>(t.size()) : 0.0;
}

inline bool batch_fully_masked(const LabelBatch& labels, const std::set<int>& mask) {
  if (mask.empty()) return false;
  for (const auto& l : labels)
    for (int v : l.labels())
      if (!mask.count(v)) return false;
  return true;
}

inline void finish_epoch(TrainState& state, Phase phase, int epoch, std::size_t first_step,
                         std::optional<ValidationStats> validation, const TrainHooks& hooks) {
  EpochSummary e{phase, epoch, 0.0, {}, validation};
  const std::size_t n = state.history.size() - first_step;
  for (std::size_t i = first_step; i < state.history.size(); ++i) {
    e.mean_loss += state.history[i].loss / static_cast<double>(n);
    for (const auto& [k, v] : state.history[i].components) e.mean_components[k] += v / static_cast<double>(n);
  }
  state.epochs.push_back(e);
  if (hooks.on_epoch) hooks.on_epoch(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evaluation

/// Evaluation of a fusion network, and of a segmentation network when given, on labeled or unlabeled pairs.
struct Evaluation {
  EvalReport report;
  std::optional<double> sem_loss;  // mean unmasked cross-entropy over labeled pairs
};

/// Scores already-fused images against their source pairs; `fused[i]` belongs to `pairs[i]`.
template <typename T>
Evaluation evaluate_fused(const std::vector<Image>& fused, const std::vector<ImagePair>& pairs, const SegModel<T>* seg,
                          const LabelPalette& palette, const std::vector<int>& scored_classes) {
  if (pairs.empty()) throw EmptyDataset("evaluate: no pairs");
  if (fused.size() != pairs.size()) throw ShapeMismatch("evaluate: fused image count differs from pair count");
  Evaluation out;
  out.report.class_names = palette.class_names;
  ConfusionMatrix cm(palette.class_count());
  double sem = 0.0;
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ImagePair& p = pairs[i];
    const Image& f = fused[i];
    if (!f.same_size(p.ir)) throw ShapeMismatch(p.id + ": fused image size differs from the sources");
    out.report.images.push_back({p.id, spatial_frequency(f), average_gradient(f), corr(p.ir, f), corr(p.vis_luma, f)});
    if (seg && p.label) {
      const Var<T> logits = seg->forward(Var<T>::constant(stack_images<T>({&f})));
      accumulate(cm, predict(logits.value(), 0), *p.label, palette.ignore_index);
      sem += l_sem<T>(logits, std::span<const LabelMap>(&*p.label, 1), {}).value();
      ++labeled;
    }
  }
  if (labeled > 0) {
    out.report.segmentation = class_scores(cm, scored_classes);
    out.report.confusion = cm;
    out.sem_loss = sem / static_cast<double>(labeled);
  }
  return out;
}

template <typename T>
Evaluation evaluate(const FusionModel<T>& fusion, const SegModel<T>* seg, const std::vector<ImagePair>& pairs,
                    const LabelPalette& palette, const std::vector<int>& scored_classes) {
  std::vector<Image> fused;
  fused.reserve(pairs.size());
  for (const auto& p : pairs) fused.push_back(fusion.forward(p));
  return evaluate_fused(fused, pairs, seg, palette, scored_classes);
}

template <typename T>
ValidationStats validate(const FusionModel<T>& fusion, const SegModel<T>& seg, const std::vector<ImagePair>& val,
                         const LabelPalette& palette, const std::vector<int>& scored_classes) {
  const auto e = evaluate(fusion, &seg, val, palette, scored_classes);
  ValidationStats s;
  s.sem_loss = e.sem_loss.value_or(0.0);
  if (e.report.segmentation) {
    s.macc = e.report.segmentation->macc;
    s.miou = e.report.segmentation->miou;
  }
  s.corr_sum = e.report.mean(&ImageMetrics::corr_ir) + e.report.mean(&ImageMetrics::corr_vis);
  return s;
}

// ---------------------------------------------------------------------------
// Warm start

template <typename T>
struct WarmStartResult {
  TrainState state;
  Checkpoint theta_prime;

  std::vector<double> epoch_means() const {
    std::vector<double> out;
    for (const auto& e : state.epochs) out.push_back(e.mean_loss);
    return out;
  }
};

/// Trains the fusion network toward the configured warm-start target; the model is updated in place.
template <typename T>
WarmStartResult<T> warm_start(FusionModel<T>& model, const std::vector<ImagePair>& data, const RunConfig& cfg,
                              const TrainHooks& hooks = {}) {
  const TrainConfig& tc = cfg.train;
  for (const auto& p : data) validate_pair(p, tc);
  WarmStartResult<T> out;
  TrainState& state = out.state;
  state.phase = Phase::WARM_START;
  state.seed = Rng::derive(tc.seed, 10).next();
  Adam<T> opt(parameter_vars(model.parameters()), {tc.warm_start_lr});
  const BatchIterator batches(data, static_cast<std::size_t>(tc.batch_size), state.seed, true);
  for (int epoch = 0; epoch < tc.warm_start_epochs; ++epoch) {
    const std::size_t first = state.history.size();
    for (const auto& pairs : batches.epoch(static_cast<std::size_t>(epoch))) {
      const auto b = detail::make_batch<T>(pairs, false);
      opt.zero_grad();
      const Var<T> fused = model.forward(b.ir, b.vis);
      const auto loss = l_ws(tc.warm_start_rule, fused, b.ir, b.vis);
      if (!std::isfinite(loss.value())) throw NonFiniteLoss("non-finite warm-start loss at batch " + b.ids);
      backward(loss.total);
      opt.step();
      StepRecord r{Phase::WARM_START, epoch, ++state.step, b.ids, loss.value(), loss.components, std::nullopt};
      state.history.push_back(r);
      if (hooks.on_step) hooks.on_step(r);
    }
    state.epoch = epoch + 1;
    detail::finish_epoch(state, Phase::WARM_START, epoch, first, std::nullopt, hooks);
  }
  state.first_moments = opt.first_moments();
  state.second_moments = opt.second_moments();
  out.theta_prime = make_checkpoint(cfg, "warm", state.epoch, model);
  return out;
}

// ---------------------------------------------------------------------------
// Semantic phase

template <typename T>
struct SemanticResult {
  TrainState state;
  ValidationStats initial;  // before the first update
  Checkpoint last;
  Checkpoint best;  // highest validation mIoU (earliest on ties)
  int best_epoch = 0;

  double min_corr_sum() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : state.history)
      if (r.corr_sum) m = std::min(m, *r.corr_sum);
    return m;
  }
  const ValidationStats& final_validation() const {
    return state.epochs.empty() ? initial : *state.epochs.back().validation;
  }
};

/// Joint training of the fusion and segmentation networks on L_sem + lambda * L_reg.
///
/// `from_warm_start` states that `fusion` holds warm-start weights; without it the
/// phase runs only when the config sets skip_warm_start.
template <typename T>
SemanticResult<T> semantic_train(FusionModel<T>& fusion, SegModel<T>& seg, const std::vector<ImagePair>& train,
                                 const std::vector<ImagePair>& val, const RunConfig& cfg, bool from_warm_start,
                                 const TrainHooks& hooks = {}) {
  const TrainConfig& tc = cfg.train;
  if (!from_warm_start && !tc.skip_warm_start)
    throw PhaseError("semantic phase needs warm-start weights; set train.skip_warm_start=true to train without them");
  if (val.empty()) throw EmptyDataset("semantic phase needs a validation split");
  std::set<int> present;
  for (const auto& p : train) {
    validate_pair(p, tc);
    if (!p.label) throw LabelError(p.id + ": semantic training needs a label map");
    present.insert(p.label->labels().begin(), p.label->labels().end());
  }
  if (std::all_of(present.begin(), present.end(), [&](int c) { return tc.class_mask.count(c) > 0; }))
    throw MaskError("class_mask covers every label present in the training set");

  const LabelPalette palette = cfg.palette();
  const std::vector<int> scored = cfg.scored_classes();
  SemanticResult<T> out;
  TrainState& state = out.state;
  state.phase = Phase::SEMANTIC;
  state.seed = Rng::derive(tc.seed, 20).next();

  std::vector<Var<T>> vars = parameter_vars(fusion.parameters());
  for (const auto& v : parameter_vars(seg.parameters())) vars.push_back(v);
  Adam<T> opt(vars, {tc.semantic_lr});

  out.initial = validate(fusion, seg, val, palette, scored);
  out.best = make_checkpoint(cfg, "semantic-best", 0, fusion, &seg);
  double best_miou = out.initial.miou;
  const BatchIterator batches(train, static_cast<std::size_t>(tc.batch_size), state.seed, true);
  for (int epoch = 0; epoch < tc.semantic_epochs; ++epoch) {
    const std::size_t first = state.history.size();
    for (const auto& pairs : batches.epoch(static_cast<std::size_t>(epoch))) {
      const auto b = detail::make_batch<T>(pairs, true);
      opt.zero_grad();
      const Var<T> fused = fusion.forward(b.ir, b.vis);
      const Var<T> logits = seg.forward(fused);
      const auto reg = l_reg(fused, b.ir, b.vis);
      std::map<std::string, double> components{{"reg", reg.value()}};
      std::vector<Var<T>> terms;
      std::vector<T> weights;
      if (!detail::batch_fully_masked(b.labels, tc.class_mask)) {
        const auto sem = l_sem(logits, std::span<const LabelMap>(b.labels), tc.class_mask);
        components["sem"] = sem.value();
        if (!tc.drop_semantic_loss) {
          terms.push_back(sem.total);
          weights.push_back(T{1});
        }
      }
      if (tc.lambda != 0.0) {
        terms.push_back(reg.total);
        weights.push_back(static_cast<T>(tc.lambda));
      }
      double loss = 0.0;
      if (!terms.empty()) {
        const Var<T> total = ops::weighted_sum<T>(terms, weights);
        loss = static_cast<double>(total.item());
        if (!std::isfinite(loss)) throw NonFiniteLoss("non-finite semantic loss at batch " + b.ids);
        backward(total);
        if (tc.clip_norm > 0) opt.clip_grad_norm(tc.clip_norm);
      }
      opt.step();
      const double cs = detail::mean_of(correlation_sum(detach(fused), b.ir, b.vis).value());
      StepRecord r{Phase::SEMANTIC, epoch, ++state.step, b.ids, loss, components, cs};
      state.history.push_back(r);
      if (hooks.on_step) hooks.on_step(r);
    }
    state.epoch = epoch + 1;
    const ValidationStats v = validate(fusion, seg, val, palette, scored);
    detail::finish_epoch(state, Phase::SEMANTIC, epoch, first, v, hooks);
    if (v.miou > best_miou) {
      best_miou = v.miou;
      out.best_epoch = state.epoch;
      out.best = make_checkpoint(cfg, "semantic-best", state.epoch, fusion, &seg);
    }
  }
  state.first_moments = opt.first_moments();
  state.second_moments = opt.second_moments();
  out.last = make_checkpoint(cfg, "semantic", state.epoch, fusion, &seg);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  std::string name;
  std::vector<std::string> overrides;  // section.key=value
};

struct AblationPlan {
  std::vector<AblationRow> rows;
  std::vector<std::string> skipped;  // rows of the default plan the palette cannot support, with reasons

  /// Structure and strategy variants, then class-removal variants when the palette names the classes.
  static AblationPlan default_plan(const LabelPalette& palette) {
    AblationPlan plan;
    plan.rows = {
        {"w/o SLA", {"model.attention=NONE"}},
        {"CHA", {"model.attention=CHA"}},
        {"SPA", {"model.attention=SPA"}},
        {"Max-ST", {"train.warm_start_rule=MAX"}},
        {"w/o WS", {"train.skip_warm_start=true"}},
        {"w/o L_reg", {"train.lambda=0"}},
        {"Ours (Ave-ST)", {}},
    };
    const bool car = palette.find("car").has_value(), person = palette.find("person").has_value();
    if (car) plan.rows.push_back({"w/o Car", {"train.class_mask=car"}});
    else plan.skipped.push_back("w/o Car: palette has no class named car");
    if (person) plan.rows.push_back({"w/o Person", {"train.class_mask=person"}});
    else plan.skipped.push_back("w/o Person: palette has no class named person");
    if (car && person) plan.rows.push_back({"w/o Car&Person", {"train.class_mask=car,person"}});
    else plan.skipped.push_back("w/o Car&Person: palette lacks car or person");
    plan.rows.push_back({"w/o L_sem", {"train.drop_semantic_loss=true"}});
    return plan;
  }

  /// One row per line: `name | key=value key=value`; '#' starts a comment.
  static AblationPlan parse(const std::string& text) {
    AblationPlan plan;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto bar = line.find('|');
      AblationRow row{detail::trim(line.substr(0, bar)), {}};
      if (row.name.empty()) throw ConfigError("plan:" + std::to_string(lineno) + ": row without a name");
      if (bar != std::string::npos) {
        std::istringstream rest(line.substr(bar + 1));
        std::string tok;
        while (rest >> tok) {
          if (tok.find('=') == std::string::npos)
            throw ConfigError("plan:" + std::to_string(lineno) + ": expected section.key=value, got '" + tok + "'");
          row.overrides.push_back(tok);
        }
      }
      plan.rows.push_back(std::move(row));
    }
    if (plan.rows.empty()) throw ConfigError("plan has no rows");
    return plan;
  }
};

struct AblationOutcome {
  AblationRow row;
  bool ok = false;
  std::string error;
  EvalReport report;  // validation split, final weights
  std::optional<SemanticResult<float>> semantic;
};

namespace detail {
/// Config text that determines the warm-start weights; rows sharing it share theta'.
inline std::string warm_start_key(RunConfig cfg) {
  const RunConfig defaults;
  cfg.train.lambda = defaults.train.lambda;
  cfg.train.class_mask.clear();
  cfg.train.semantic_epochs = defaults.train.semantic_epochs;
  cfg.train.semantic_lr = defaults.train.semantic_lr;
  cfg.train.drop_semantic_loss = false;
  cfg.train.clip_norm = defaults.train.clip_norm;
  cfg.train.skip_warm_start = false;
  cfg.eval = defaults.eval;
  return serialize_config(cfg);
}
}  // namespace detail

/// Runs every row from the shared seed; a failing row is recorded and the sweep continues.
inline std::vector<AblationOutcome> run_ablation(const AblationPlan& plan, const RunConfig& base, const Splits& data,
                                                 const TrainHooks& hooks = {},
                                                 std::function<void(const AblationOutcome&)> on_row = {}) {
  std::vector<AblationOutcome> out;
  std::map<std::string, Checkpoint> warm_cache;
  for (const auto& row : plan.rows) {
    AblationOutcome o{row, false, {}, {}, std::nullopt};
    try {
      RunConfig cfg = base;
      for (const auto& ov : row.overrides) apply_override(cfg, ov);
      cfg.finalize();
      FusionModel<float> fusion(cfg.train);
      bool warm = false;
      if (!cfg.train.skip_warm_start) {
        const std::string key = detail::warm_start_key(cfg);
        auto it = warm_cache.find(key);
        if (it == warm_cache.end()) {
          FusionModel<float> fresh(cfg.train);
          it = warm_cache.emplace(key, warm_start(fresh, data.train, cfg, hooks).theta_prime).first;
        }
        import_parameters(fusion.parameters(), it->second);
        warm = true;
      }
      SegModel<float> seg(cfg.train);
      auto sem = semantic_train(fusion, seg, data.train, data.val, cfg, warm, hooks);
      o.report = evaluate(fusion, &seg, data.val, cfg.palette(), cfg.scored_classes()).report;
      o.semantic = std::move(sem);
      o.ok = true;
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    if (on_row) on_row(o);
    out.push_back(std::move(o));
  }
  return out;
}

/// Tab-separated table: row name, status, per-class IoU (percent), mAcc, mIoU.
inline std::string ablation_table(const std::vector<AblationOutcome>& rows, const LabelPalette& palette,
                                  const std::vector<int>& scored_classes) {
  std::string out = "row\tstatus";
  for (int k : scored_classes) out += "\t" + palette.class_names.at(static_cast<std::size_t>(k));
  out += "\tmAcc\tmIoU\n";
  for (const auto& r : rows) {
    out += r.row.name + "\t" + (r.ok ? "ok" : "failed: " + r.error);
    const auto& seg = r.report.segmentation;
    for (int k : scored_classes) {
      std::string cell = "-";
      if (r.ok && seg)
        for (const auto& c : seg->per_class)
          if (c.class_index == k && c.scored) cell = EvalReport::percent(c.iou);
      out += "\t" + cell;
    }
    out += "\t" + (r.ok && seg ? EvalReport::percent(seg->macc) : std::string("-"));
    out += "\t" + (r.ok && seg ? EvalReport::percent(seg->miou) : std::string("-")) + "\n";
  }
  return out;
}

}  // namespace semfuse
