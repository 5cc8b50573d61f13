#pragma once

// SGD with momentum, the staged learning-rate schedule and the two-stage
// training driver.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "apdr/dataset.hpp"
#include "apdr/errors.hpp"
#include "apdr/model.hpp"
#include "apdr/objective.hpp"
#include "apdr/random.hpp"

namespace apdr {

struct TrainConfig {
  std::size_t epochs_stage1 = 60;
  std::size_t epochs_stage2 = 60;
  double base_lr = 0.01;
  double lr_decay = 0.2;  // multiplicative
  std::size_t decay_every = 50;
  double frozen_lr = 0.0001;  // stage-1 modules during stage 2
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t p = 8;         // identities per batch
  std::size_t k_per_id = 4;  // samples per identity
  std::uint64_t seed = 1;
  double lambda = 0.1;
  double margin = 0.2;
  bool use_triplet = true;
  std::size_t checkpoint_every = 10;

  LossConfig loss() const { return {lambda, margin, use_triplet}; }

  void validate() const {
    if (epochs_stage1 < 1 || epochs_stage2 < 1) throw ConfigError("stage lengths must be >= 1");
    if (!(base_lr > 0) || !(lr_decay > 0)) throw ConfigError("learning rates must be positive");
    if (!(frozen_lr >= 0)) throw ConfigError("frozen_lr must be non-negative (0 freezes stage-1 modules)");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
    if (p < 1 || k_per_id < 1) throw ConfigError("batch P and K must be >= 1");
    if (!(margin > 0)) throw ConfigError("margin must be positive");
    if (lambda < 0) throw ConfigError("lambda must be non-negative");
  }
  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs_stage1", c.epochs_stage1}, {"epochs_stage2", c.epochs_stage2}, {"base_lr", c.base_lr},
       {"lr_decay", c.lr_decay},           {"decay_every", c.decay_every},     {"frozen_lr", c.frozen_lr},
       {"momentum", c.momentum},           {"weight_decay", c.weight_decay},   {"p", c.p},
       {"k_per_id", c.k_per_id},           {"seed", c.seed},                   {"lambda", c.lambda},
       {"margin", c.margin},               {"use_triplet", c.use_triplet},     {"checkpoint_every", c.checkpoint_every}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs_stage1 = j.value("epochs_stage1", d.epochs_stage1);
  c.epochs_stage2 = j.value("epochs_stage2", d.epochs_stage2);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.decay_every = j.value("decay_every", d.decay_every);
  c.frozen_lr = j.value("frozen_lr", d.frozen_lr);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.p = j.value("p", d.p);
  c.k_per_id = j.value("k_per_id", d.k_per_id);
  c.seed = j.value("seed", d.seed);
  c.lambda = j.value("lambda", d.lambda);
  c.margin = j.value("margin", d.margin);
  c.use_triplet = j.value("use_triplet", d.use_triplet);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

// Learning rate for `group` at 0-based `epoch` of `stage`. Groups not trained
// in a stage (stage-2 modules during stage 1) get 0.
inline double lr_at(const TrainConfig& c, std::size_t epoch, Stage stage, ParamGroup group) {
  const double scheduled = c.base_lr * std::pow(c.lr_decay, double(epoch / c.decay_every));
  if (stage == Stage::one) return group == ParamGroup::stage1 ? scheduled : 0.0;
  return group == ParamGroup::stage2 ? scheduled : c.frozen_lr;
}

template <class T>
struct SgdState {
  std::vector<Buffer<T>> velocity;  // one buffer per model parameter
};

template <class T>
SgdState<T> make_sgd_state(const Model<T>& m) {
  SgdState<T> s;
  for (const auto& p : m.params) s.velocity.emplace_back(p.numel(), T(0));
  return s;
}

struct SgdHyper {
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

// v <- momentum * v + grad + wd * param;  param <- param - lr * v.
// `lr[g]` unset means group g is inactive this step and is left untouched.
// Weight decay skips parameters flagged decay=false (biases, BN affine).
template <class T>
void sgd_step(Model<T>& m, SgdState<T>& state, const std::array<std::optional<double>, 2>& lr, const SgdHyper& h) {
  if (state.velocity.size() != m.params.size()) throw InternalError("optimizer state does not match model");
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& group_lr = lr[std::size_t(m.info[i].group)];
    if (!group_lr) continue;
    auto& p = m.params[i];
    auto& v = state.velocity[i];
    if (p.grad.size() != p.numel()) throw InternalError("missing gradient for active parameter " + m.info[i].name);
    if (v.size() != p.numel()) throw InternalError("velocity shape mismatch for " + m.info[i].name);
    const T mu = T(h.momentum), wd = m.info[i].decay ? T(h.weight_decay) : T(0), step = T(*group_lr);
    for (std::size_t k = 0; k < p.numel(); ++k) {
      v[k] = mu * v[k] + p.grad[k] + wd * p.data[k];
      p.data[k] -= step * v[k];
    }
  }
}

// Everything a training run needs to resume exactly.
struct TrainState {
  Model<float> model;
  SgdState<float> optimizer;
  Rng rng;
  Stage stage = Stage::one;
  std::size_t epoch = 0;  // completed epochs within `stage`
  bool stage1_complete = false;
};

inline TrainState make_train_state(const ModelConfig& mc, const TrainConfig& tc) {
  TrainState s{build_model<float>(mc, tc.seed), {}, Rng(tc.seed ^ 0x5bd1e995u), Stage::one, 0, false};
  s.optimizer = make_sgd_state(s.model);
  return s;
}

struct StepRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based within the stage
  Stage stage = Stage::one;
  double lr = 0;
  LossBreakdown loss;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TrainState&, const LossBreakdown& epoch_mean)> on_epoch;
};

inline std::size_t batches_per_epoch(std::size_t num_ids, std::size_t p) { return (num_ids + p - 1) / p; }

namespace detail {

inline void check_finite(const Graph<float>& g, const LossBreakdown& l, std::size_t epoch, std::size_t step) {
  if (std::isfinite(l.total)) return;
  const std::string where = g.first_non_finite();
  throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                       "; first non-finite tensor: " + (where.empty() ? std::string("loss") : where));
}

}  // namespace detail

// Runs epochs [state.epoch, end_epoch) of `stage`. Stage 1 optimizes the
// stem, both stage-1 branches, detectors and heads; stage 2 trains the part
// stream, fusion, gates and projection at the full schedule and keeps the
// stage-1 modules at the frozen rate with batch-norm still in train mode.
inline std::vector<LossBreakdown> train_stage(TrainState& state, const TrainConfig& cfg, ImageStore& store, Stage stage,
                                              std::size_t end_epoch, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (stage == Stage::two && !state.stage1_complete) throw InputError("stage 2 needs a completed stage-1 model");
  if (state.stage != stage) {
    state.stage = stage;
    state.epoch = 0;
  }
  const auto& manifest = store.manifest();
  const auto by_id = samples_by_identity(manifest);
  const IdentityIndex index(manifest.train_identities());
  if (index.size() != state.model.config.num_train_ids) {
    throw ConfigError("dataset has " + std::to_string(index.size()) + " train identities, model expects " +
                      std::to_string(state.model.config.num_train_ids));
  }
  const std::size_t steps = batches_per_epoch(by_id.size(), cfg.p);
  const LossConfig lc = cfg.loss();
  ForwardOptions fo;
  fo.mode = NormMode::train;
  fo.attributes = stage == Stage::two || cfg.lambda != 0.0;
  fo.parts = stage == Stage::two;

  std::vector<LossBreakdown> epoch_means;
  auto& model = state.model;
  model.set_trainable(true);
  while (state.epoch < end_epoch) {
    const double lr1 = lr_at(cfg, state.epoch, stage, ParamGroup::stage1);
    const double lr2 = lr_at(cfg, state.epoch, stage, ParamGroup::stage2);
    std::array<std::optional<double>, 2> lr{lr1, std::nullopt};
    if (stage == Stage::two) lr[1] = lr2;

    LossBreakdown sum{0, 0, 0, 0, lc.lambda, lc.margin};
    for (std::size_t s = 0; s < steps; ++s) {
      const Batch batch = store.batch(pk_sample(by_id, cfg.p, cfg.k_per_id, state.rng));
      Graph<float> g;
      Tensor<float> images = batch.images;
      const ForwardResult out = forward(g, model, images, fo);
      const Objective<float> obj =
          stage == Stage::one ? stage1_loss(g, out, batch, index, lc) : stage2_loss(g, out, batch, index, lc);
      detail::check_finite(g, obj.parts, state.epoch + 1, s + 1);

      for (std::size_t i = 0; i < model.params.size(); ++i) {
        if (lr[std::size_t(model.info[i].group)]) model.params[i].zero_grad();
        else model.params[i].grad.clear();
      }
      g.backward(obj.total);
      sgd_step(model, state.optimizer, lr, {cfg.momentum, cfg.weight_decay});

      sum.total += obj.parts.total;
      sum.id += obj.parts.id;
      sum.triplet += obj.parts.triplet;
      sum.attribute += obj.parts.attribute;
      if (hooks.on_step) {
        hooks.on_step({state.epoch + 1, state.epoch * steps + s + 1, stage, stage == Stage::one ? lr1 : lr2, obj.parts});
      }
    }
    for (double* v : {&sum.total, &sum.id, &sum.triplet, &sum.attribute}) *v /= double(steps);
    epoch_means.push_back(sum);
    ++state.epoch;
    if (stage == Stage::one && state.epoch >= cfg.epochs_stage1) state.stage1_complete = true;
    if (hooks.on_epoch) hooks.on_epoch(state, sum);
  }
  model.zero_grad();
  return epoch_means;
}

inline std::vector<LossBreakdown> train_stage1(TrainState& state, const TrainConfig& cfg, ImageStore& store,
                                               const TrainHooks& hooks = {}) {
  return train_stage(state, cfg, store, Stage::one, cfg.epochs_stage1, hooks);
}

inline std::vector<LossBreakdown> train_stage2(TrainState& state, const TrainConfig& cfg, ImageStore& store,
                                               const TrainHooks& hooks = {}) {
  return train_stage(state, cfg, store, Stage::two, cfg.epochs_stage2, hooks);
}

inline std::string csv_header() { return "epoch,step,stage,lr,total,id,tri,attri"; }

inline std::string csv_row(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%d,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch, r.step, int(r.stage), r.lr, r.loss.total,
                r.loss.id, r.loss.triplet, r.loss.attribute);
  return buf;
}

}  // namespace apdr
