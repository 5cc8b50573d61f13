#pragma once

// End-to-end finite-difference check of the full model on a tiny
// configuration (8x8 images, narrow widths), run in double.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "apdr/gradcheck.hpp"
#include "apdr/model.hpp"
#include "apdr/objective.hpp"
#include "apdr/random.hpp"

namespace apdr {

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.geometry = {3, 8, 8};
  c.widths = {4, 6, 6, 8};
  c.feat_dim = 8;
  c.fusion_dim = 6;
  c.attr_dim = 4;
  c.gate_hidden = 5;
  c.num_train_ids = 3;
  return c;
}

struct ModelCheckResult {
  double worst = 0;
  std::string worst_param;
  std::size_t tensors_checked = 0;
};

// For every parameter tensor, compares the analytic directional derivative
// <grad, v> with a central difference along a random unit direction v.
// The loss is stage1_loss + stage2_loss so every parameter is reached.
inline ModelCheckResult model_grad_check(std::uint64_t seed, double step = 1e-5) {
  const ModelConfig cfg = tiny_model_config();
  Model<double> m = build_model<double>(cfg, seed);
  Rng rng(seed ^ 0x2545f4914f6cdd1dULL);
  // Detectors, biases and BN affine terms start at constants; jitter them so
  // no structure hides an error.
  for (auto& p : m.params)
    for (auto& v : p.data) v += 0.1 * normal(rng);

  const std::size_t n = 6;
  Tensor<double> images({n, cfg.geometry.channels, cfg.geometry.height, cfg.geometry.width});
  for (auto& v : images.data) v = uniform(rng, -1.0, 1.0);
  Batch batch;
  batch.identities = {0, 0, 1, 1, 2, 2};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> row;
    for (const auto& grp : cfg.schema.groups) row.push_back(uniform_index(rng, grp.num_classes));
    batch.attr_labels.push_back(row);
  }
  const IdentityIndex index({0, 1, 2});
  const LossConfig lc;
  ForwardOptions fo;
  fo.parts = true;

  auto evaluate = [&](bool with_grad) {
    Graph<double> g;
    const ForwardResult out = forward(g, m, images, fo);
    Var loss = add(g, stage1_loss(g, out, batch, index, lc).total, stage2_loss(g, out, batch, index, lc).total);
    if (with_grad) g.backward(loss);
    return g.value(loss)[0];
  };
  // Train-mode BN updates running stats on every pass; they do not feed the
  // train-mode output, so repeated evaluation is still a pure function.
  m.set_trainable(true);
  for (auto& p : m.params) p.zero_grad();
  evaluate(true);

  ModelCheckResult r;
  for (std::size_t t = 0; t < m.params.size(); ++t) {
    auto& p = m.params[t];
    std::vector<double> dir(p.numel());
    double norm = 0;
    for (auto& d : dir) norm += (d = normal(rng)) * d;
    norm = std::sqrt(norm);
    double analytic = 0;
    for (std::size_t i = 0; i < dir.size(); ++i) analytic += p.grad[i] * (dir[i] /= norm);

    const Buffer<double> orig = p.data;
    for (std::size_t i = 0; i < dir.size(); ++i) p.data[i] = orig[i] + step * dir[i];
    const double up = evaluate(false);
    for (std::size_t i = 0; i < dir.size(); ++i) p.data[i] = orig[i] - step * dir[i];
    const double down = evaluate(false);
    p.data = orig;

    // Biases feeding a train-mode BN have an exactly zero gradient; the
    // difference quotient there is pure rounding noise (~1e-10), hence the
    // larger floor.
    const double err = relative_error(analytic, (up - down) / (2 * step), 1e-6);
    ++r.tensors_checked;
    if (err >= r.worst) r.worst = err, r.worst_param = m.info[t].name;
  }
  return r;
}

}  // namespace apdr
