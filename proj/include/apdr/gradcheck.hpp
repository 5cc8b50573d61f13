#pragma once

// Central finite-difference checks for the ops in ops.hpp, run in double.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "apdr/errors.hpp"
#include "apdr/graph.hpp"
#include "apdr/ops.hpp"
#include "apdr/tensor.hpp"

namespace apdr {

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
}

using CheckBuilder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

// Contracts the output of `build` with a fixed random tensor to get a scalar,
// then compares analytic and central-difference gradients for every input
// element. Returns the largest relative error seen.
inline double grad_check(const CheckBuilder& build, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                         double step = 1e-5) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Tensor<double> probe;

  auto evaluate = [&](bool with_grad) {
    Graph<double> g;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(g.parameter(t, "input"));
    Var y = build(g, vars);
    if (probe.data.empty()) {
      probe = Tensor<double>(g.value(y).shape);
      for (auto& v : probe.data) v = uni(rng);
    }
    Var loss = sum(g, mul(g, y, g.constant(probe, "probe")));
    if (with_grad) g.backward(loss);
    return g.value(loss)[0];
  };

  for (auto& t : inputs) {
    t.requires_grad = true;
    t.zero_grad();
  }
  evaluate(true);

  double worst = 0.0;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + step;
      const double up = evaluate(false);
      t.data[i] = orig - step;
      const double down = evaluate(false);
      t.data[i] = orig;
      worst = std::max(worst, relative_error(t.grad[i], (up - down) / (2.0 * step)));
    }
  }
  return worst;
}

enum class Sampling {
  uniform,     // U(-1, 1)
  away_zero,   // |x| in [0.1, 1], random sign (keeps relu off its kink)
  positive,    // U(0.05, 1)
};

struct OpCheck {
  std::string name;
  std::vector<Shape> shapes;
  std::vector<Sampling> sampling;
  CheckBuilder build;
};

inline Tensor<double> sample_tensor(const Shape& shape, Sampling s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::uniform_real_distribution<double> pos(0.05, 1.0);
  Tensor<double> t(shape);
  for (auto& v : t.data) {
    switch (s) {
      case Sampling::uniform: v = uni(rng); break;
      case Sampling::away_zero: v = (uni(rng) < 0 ? -1.0 : 1.0) * mag(rng); break;
      case Sampling::positive: v = pos(rng); break;
    }
  }
  return t;
}

// Every op registered for gradient checking, with default shapes.
inline const std::vector<OpCheck>& registered_ops() {
  using S = Sampling;
  static const std::vector<OpCheck> ops = [] {
    std::vector<OpCheck> v;
    v.push_back({"conv2d", {{2, 3, 5, 4}, {4, 3, 3, 3}}, {S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return conv2d(g, in[0], in[1], 1, 1); }});
    v.push_back({"conv2d_stride2_bias", {{2, 2, 6, 5}, {3, 2, 3, 3}, {3}}, {S::uniform, S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return conv2d(g, in[0], in[1], 2, 1, in[2]); }});
    v.push_back({"conv2d_1x1", {{2, 4, 3, 3}, {1, 4, 1, 1}, {1}}, {S::uniform, S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return conv2d(g, in[0], in[1], 1, 0, in[2]); }});
    v.push_back({"linear", {{2, 3}, {3, 4}, {4}}, {S::uniform, S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return linear(g, in[0], in[1], in[2]); }});
    v.push_back({"batch_norm", {{4, 3}, {3}, {3}}, {S::uniform, S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) {
                   BatchNormState<double> st;
                   return batch_norm(g, in[0], in[1], in[2], st, NormMode::train);
                 }});
    v.push_back({"batch_norm_2d", {{2, 3, 2, 2}, {3}, {3}}, {S::uniform, S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) {
                   BatchNormState<double> st;
                   return batch_norm(g, in[0], in[1], in[2], st, NormMode::train);
                 }});
    v.push_back({"batch_norm_eval", {{3, 4}, {4}, {4}}, {S::uniform, S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) {
                   BatchNormState<double> st(4);
                   st.running_mean = {0.1, -0.2, 0.3, 0.0};
                   st.running_var = {0.5, 1.5, 2.0, 0.8};
                   return batch_norm(g, in[0], in[1], in[2], st, NormMode::eval);
                 }});
    v.push_back({"relu", {{3, 5}}, {S::away_zero},
                 [](Graph<double>& g, const std::vector<Var>& in) { return relu(g, in[0]); }});
    v.push_back({"tanh", {{3, 5}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return tanh(g, in[0]); }});
    v.push_back({"sigmoid", {{3, 5}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return sigmoid(g, in[0]); }});
    v.push_back({"global_average_pool", {{2, 3, 3, 2}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return global_average_pool(g, in[0]); }});
    v.push_back({"weighted_average_pool", {{1, 2, 3, 3}, {1, 1, 3, 3}}, {S::uniform, S::positive},
                 [](Graph<double>& g, const std::vector<Var>& in) { return weighted_average_pool(g, in[0], in[1]); }});
    v.push_back({"softmax_cross_entropy", {{3, 4}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) {
                   return softmax_cross_entropy(g, in[0], std::vector<std::size_t>{0, 3, 1});
                 }});
    v.push_back({"concat", {{2, 3}, {2, 1}, {2, 2}}, {S::uniform, S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return concat(g, in); }});
    v.push_back({"add", {{2, 3}, {2, 3}}, {S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return add(g, in[0], in[1]); }});
    v.push_back({"sub", {{2, 3}, {2, 3}}, {S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return sub(g, in[0], in[1]); }});
    v.push_back({"mul", {{2, 3}, {2, 3}}, {S::uniform, S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return mul(g, in[0], in[1]); }});
    v.push_back({"scale", {{2, 3}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return scale(g, in[0], 0.7); }});
    v.push_back({"add_scalar", {{2, 3}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return add_scalar(g, in[0], 0.2); }});
    v.push_back({"mean", {{2, 3}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) { return mean(g, in[0]); }});
    v.push_back({"row_sq_dist", {{4, 3}}, {S::uniform},
                 [](Graph<double>& g, const std::vector<Var>& in) {
                   return row_sq_dist(g, in[0], {0, 1, 2, 3}, {1, 3, 0, 2});
                 }});
    return v;
  }();
  return ops;
}

inline const OpCheck& find_op_check(const std::string& name) {
  for (const auto& op : registered_ops()) {
    if (op.name == name) return op;
  }
  throw InputError("no gradient check registered for op '" + name + "'");
}

// Runs one registered op on freshly sampled inputs of the given shapes
// (registry defaults when `shapes` is empty).
inline double grad_check(const std::string& op_name, const std::vector<Shape>& shapes, std::uint64_t seed) {
  const OpCheck& op = find_op_check(op_name);
  const auto& use = shapes.empty() ? op.shapes : shapes;
  if (use.size() != op.sampling.size()) {
    throw ConfigError("op '" + op_name + "' takes " + std::to_string(op.sampling.size()) + " inputs");
  }
  std::mt19937_64 rng(seed);
  std::vector<Tensor<double>> inputs;
  for (std::size_t i = 0; i < use.size(); ++i) inputs.push_back(sample_tensor(use[i], op.sampling[i], rng));
  return grad_check(op.build, std::move(inputs), seed);
}

}  // namespace apdr
