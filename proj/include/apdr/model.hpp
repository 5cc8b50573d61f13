#pragma once

// Two-stream re-id network with attribute-guided part detectors.
//
//   images -> stem (blocks 1-3) -+-> global block 4  -> GF -> GAP -> g
//                                +-> attribute block 4 -> AF -> K detectors -> masks
//                                |        masks x AF -> per-attribute FC+BN -> a_i -> classifiers
//                                +-> part block 4      -> PF -> masks x PF -> l_k
//   a_1..a_N -> fusion FC -> f_attri
//   p_k = l_k * sigmoid(W_p tanh(W_l l_k + W_h f_attri + b))
//   f_p = FC(p_1..p_K),  f = [f_p, g]
//
// Every block 4 variant starts with a stride-2 conv except the attribute and
// part variants, so AF and PF have twice the resolution of GF.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "apdr/dataset.hpp"
#include "apdr/graph.hpp"
#include "apdr/ops.hpp"
#include "apdr/random.hpp"
#include "apdr/schema.hpp"
#include "apdr/tensor.hpp"

namespace apdr {

struct ModelConfig {
  AttributeSchema schema = default_schema();
  ImageGeometry geometry;
  std::array<std::size_t, 4> widths{16, 32, 32, 32};  // blocks 1..4
  std::size_t feat_dim = 256;     // dim(g) and dim(f_p)
  std::size_t fusion_dim = 256;   // dim(f_attri)
  std::size_t attr_dim = 64;      // dim(a_i)
  std::size_t gate_hidden = 64;
  std::size_t num_train_ids = 50;

  std::size_t num_masks() const { return schema.num_mask_groups(); }
  std::size_t part_dim() const { return widths[3]; }
  std::size_t final_dim() const { return 2 * feat_dim; }

  // Spatial size after the stem and after each block-4 variant.
  std::pair<std::size_t, std::size_t> attribute_map_size() const {
    auto down = [](std::size_t x) { return (x + 2 - 3) / 2 + 1; };
    std::size_t h = geometry.height, w = geometry.width;
    for (int i = 0; i < 3; ++i) h = down(h), w = down(w);
    return {h, w};
  }
  std::pair<std::size_t, std::size_t> global_map_size() const {
    auto [h, w] = attribute_map_size();
    return {(h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1};
  }

  void validate() const {
    schema.validate();
    if (feat_dim == 0 || fusion_dim == 0 || attr_dim == 0 || gate_hidden == 0) throw ConfigError("model dims must be positive");
    for (auto w : widths)
      if (w == 0) throw ConfigError("backbone widths must be positive");
    if (num_train_ids < 2) throw ConfigError("need at least 2 train identities for the classifiers");
    if (geometry.height < 1 || geometry.width < 1) throw ConfigError("image size must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"schema", c.schema},
       {"channels", c.geometry.channels},
       {"height", c.geometry.height},
       {"width", c.geometry.width},
       {"widths", c.widths},
       {"feat_dim", c.feat_dim},
       {"fusion_dim", c.fusion_dim},
       {"attr_dim", c.attr_dim},
       {"gate_hidden", c.gate_hidden},
       {"num_masks", c.num_masks()},
       {"num_train_ids", c.num_train_ids}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("schema").get_to(c.schema);
  c.geometry = {j.at("channels").get<std::size_t>(), j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>()};
  j.at("widths").get_to(c.widths);
  j.at("feat_dim").get_to(c.feat_dim);
  j.at("fusion_dim").get_to(c.fusion_dim);
  j.at("attr_dim").get_to(c.attr_dim);
  j.at("gate_hidden").get_to(c.gate_hidden);
  j.at("num_train_ids").get_to(c.num_train_ids);
}

// Learning-rate group: stage-1 modules are trained first, stage-2 modules
// (part stream, fusion, gates, projection, local classifier) afterwards.
enum class ParamGroup { stage1, stage2 };

struct ParamInfo {
  std::string name;
  ParamGroup group = ParamGroup::stage1;
  bool decay = true;  // false for biases and batch-norm affine terms
};

struct ConvBnIndex {
  std::size_t weight, gamma, beta, state;
  int stride;
};
struct BlockIndex {
  ConvBnIndex first, second;
};
struct LinearIndex {
  std::size_t weight;
  std::optional<std::size_t> bias;
};
struct DetectorIndex {
  std::size_t weight, bias;
};
struct AttrHeadIndex {
  LinearIndex fc;
  std::size_t gamma, beta, state;
  LinearIndex classifier;
};
struct GateIndex {
  std::size_t w_l, w_h, bias, w_p;
};

struct ModelLayout {
  std::array<BlockIndex, 3> stem;
  BlockIndex global_block, attr_block, part_block;
  LinearIndex global_classifier;
  std::vector<DetectorIndex> detectors;
  std::vector<AttrHeadIndex> heads;
  LinearIndex fusion;
  std::vector<GateIndex> gates;
  LinearIndex projection;
  LinearIndex local_classifier;
};

template <class T>
struct Model {
  ModelConfig config;
  ModelLayout layout;
  std::vector<Tensor<T>> params;
  std::vector<ParamInfo> info;
  std::vector<BatchNormState<T>> bn;
  std::vector<std::string> bn_names;

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < info.size(); ++i)
      if (info[i].name == name) return i;
    throw InputError("no parameter named '" + name + "'");
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params) p.grad.clear();
  }

  void set_trainable(bool on) {
    for (auto& p : params) p.requires_grad = on;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.config = config;
    m.layout = layout;
    m.info = info;
    m.bn_names = bn_names;
    for (const auto& p : params) m.params.push_back(p.template cast<U>());
    for (const auto& s : bn) m.bn.push_back(s.template cast<U>());
    return m;
  }
};

namespace detail {

enum class Init { kaiming, zeros, ones };

template <class T>
class ModelBuilder {
 public:
  ModelBuilder(Model<T>& m, Rng& rng) : m_(m), rng_(rng) {}

  std::size_t add(const std::string& name, Shape shape, ParamGroup group, Init init, std::size_t fan_in, bool decay) {
    Tensor<T> t(std::move(shape));
    if (init == Init::ones) std::fill(t.data.begin(), t.data.end(), T(1));
    if (init == Init::kaiming) {
      const double bound = std::sqrt(6.0 / double(fan_in));
      for (auto& v : t.data) v = T(uniform(rng_, -bound, bound));
    }
    t.requires_grad = true;
    m_.params.push_back(std::move(t));
    m_.info.push_back({name, group, decay});
    return m_.params.size() - 1;
  }

  ConvBnIndex conv_bn(const std::string& name, std::size_t in, std::size_t out, int stride, ParamGroup group) {
    ConvBnIndex c;
    c.weight = add(name + ".weight", {out, in, 3, 3}, group, Init::kaiming, in * 9, true);
    c.gamma = add(name + ".bn.gamma", {out}, group, Init::ones, 0, false);
    c.beta = add(name + ".bn.beta", {out}, group, Init::zeros, 0, false);
    m_.bn.emplace_back(out);
    m_.bn_names.push_back(name + ".bn");
    c.state = m_.bn.size() - 1;
    c.stride = stride;
    return c;
  }

  BlockIndex block(const std::string& name, std::size_t in, std::size_t mid, std::size_t out, int stride, ParamGroup group) {
    return {conv_bn(name + ".conv1", in, mid, stride, group), conv_bn(name + ".conv2", mid, out, 1, group)};
  }

  LinearIndex linear(const std::string& name, std::size_t in, std::size_t out, ParamGroup group, bool bias = true) {
    LinearIndex l;
    l.weight = add(name + ".weight", {in, out}, group, Init::kaiming, in, true);
    if (bias) l.bias = add(name + ".bias", {out}, group, Init::zeros, 0, false);
    return l;
  }

 private:
  Model<T>& m_;
  Rng& rng_;
};

}  // namespace detail

// Kaiming-uniform convs and FC layers, BN gamma=1 beta=0, zero biases.
// Detectors start at zero so every initial mask is exactly 0.5.
template <class T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.config = cfg;
  Rng rng(seed);
  detail::ModelBuilder<T> b(m, rng);
  using G = ParamGroup;
  const auto& w = cfg.widths;
  const std::size_t k = cfg.num_masks(), n_attr = cfg.schema.num_attributes();
  auto& L = m.layout;

  L.stem[0] = b.block("stem.block1", cfg.geometry.channels, w[0], w[0], 2, G::stage1);
  L.stem[1] = b.block("stem.block2", w[0], w[1], w[1], 2, G::stage1);
  L.stem[2] = b.block("stem.block3", w[1], w[2], w[2], 2, G::stage1);
  L.global_block = b.block("global.block4", w[2], w[3], cfg.feat_dim, 2, G::stage1);
  L.attr_block = b.block("attribute.block4", w[2], w[3], w[3], 1, G::stage1);
  L.global_classifier = b.linear("global.classifier", cfg.feat_dim, cfg.num_train_ids, G::stage1);
  for (std::size_t i = 0; i < k; ++i) {
    const std::string name = "detector." + cfg.schema.mask_groups[i];
    L.detectors.push_back({b.add(name + ".weight", {1, w[3], 1, 1}, G::stage1, detail::Init::zeros, 0, true),
                           b.add(name + ".bias", {1}, G::stage1, detail::Init::zeros, 0, false)});
  }
  for (std::size_t i = 0; i < n_attr; ++i) {
    const auto& grp = cfg.schema.groups[i];
    const std::string name = "attribute." + grp.name;
    AttrHeadIndex h;
    h.fc = b.linear(name + ".fc", w[3], cfg.attr_dim, G::stage1);
    h.gamma = b.add(name + ".bn.gamma", {cfg.attr_dim}, G::stage1, detail::Init::ones, 0, false);
    h.beta = b.add(name + ".bn.beta", {cfg.attr_dim}, G::stage1, detail::Init::zeros, 0, false);
    m.bn.emplace_back(cfg.attr_dim);
    m.bn_names.push_back(name + ".bn");
    h.state = m.bn.size() - 1;
    h.classifier = b.linear(name + ".classifier", cfg.attr_dim, grp.num_classes, G::stage1);
    L.heads.push_back(h);
  }

  L.part_block = b.block("part.block4", w[2], w[3], w[3], 1, G::stage2);
  L.fusion = b.linear("fusion", n_attr * cfg.attr_dim, cfg.fusion_dim, G::stage2);
  for (std::size_t i = 0; i < k; ++i) {
    const std::string name = "gate." + cfg.schema.mask_groups[i];
    GateIndex gi;
    gi.w_l = b.add(name + ".w_l", {w[3], cfg.gate_hidden}, G::stage2, detail::Init::kaiming, w[3], true);
    gi.w_h = b.add(name + ".w_h", {cfg.fusion_dim, cfg.gate_hidden}, G::stage2, detail::Init::kaiming, cfg.fusion_dim, true);
    gi.bias = b.add(name + ".bias", {cfg.gate_hidden}, G::stage2, detail::Init::zeros, 0, false);
    gi.w_p = b.add(name + ".w_p", {cfg.gate_hidden, w[3]}, G::stage2, detail::Init::kaiming, cfg.gate_hidden, true);
    L.gates.push_back(gi);
  }
  L.projection = b.linear("part.projection", k * w[3], cfg.feat_dim, G::stage2);
  L.local_classifier = b.linear("part.classifier", cfg.feat_dim, cfg.num_train_ids, G::stage2);
  return m;
}

enum class Stage { one = 1, two = 2 };

struct ForwardOptions {
  NormMode mode = NormMode::train;
  bool attributes = true;  // attribute branch, detectors and heads
  bool parts = false;      // fusion, part stream, refinement, f_p and f
};

struct ForwardResult {
  Var global_map, attribute_map, part_map;  // GF, AF, PF
  Var g;
  Var id_logits;
  std::vector<Var> masks;        // K maps, N x 1 x H' x W'
  std::vector<Var> attr_feats;   // a_i
  std::vector<Var> attr_logits;
  Var f_attri;
  std::vector<Var> parts;    // l_k
  std::vector<Var> refined;  // p_k
  Var f_p, f;
  Var local_logits;
};

template <class T>
Var param(Graph<T>& g, Model<T>& m, std::size_t index) {
  return g.parameter(m.params[index], m.info[index].name);
}

template <class T>
Var conv_bn_relu(Graph<T>& g, Model<T>& m, Var x, const ConvBnIndex& c, NormMode mode) {
  Var y = conv2d(g, x, param(g, m, c.weight), c.stride, 1);
  y = batch_norm(g, y, param(g, m, c.gamma), param(g, m, c.beta), m.bn[c.state], mode);
  return relu(g, y);
}

template <class T>
Var run_block(Graph<T>& g, Model<T>& m, Var x, const BlockIndex& b, NormMode mode) {
  return conv_bn_relu(g, m, conv_bn_relu(g, m, x, b.first, mode), b.second, mode);
}

template <class T>
Var run_linear(Graph<T>& g, Model<T>& m, Var x, const LinearIndex& l) {
  std::optional<Var> bias;
  if (l.bias) bias = param(g, m, *l.bias);
  return linear(g, x, param(g, m, l.weight), bias);
}

// Shared stem + global branch.
template <class T>
Var forward_stem(Graph<T>& g, Model<T>& m, const Tensor<T>& images, NormMode mode) {
  const auto& geo = m.config.geometry;
  if (images.ndim() != 4 || images.dim(1) != geo.channels || images.dim(2) != geo.height || images.dim(3) != geo.width) {
    throw ConfigError("images " + shape_str(images.shape) + " do not match configured size " +
                      shape_str({geo.channels, geo.height, geo.width}));
  }
  Var x = g.constant(images, "images");
  for (const auto& blk : m.layout.stem) x = run_block(g, m, x, blk, mode);
  return x;
}

// Mask i = sigmoid(1x1 conv(AF)).
template <class T>
std::vector<Var> detect_masks(Graph<T>& g, Model<T>& m, Var attribute_map) {
  std::vector<Var> masks;
  for (const auto& d : m.layout.detectors) {
    masks.push_back(sigmoid(g, conv2d(g, attribute_map, param(g, m, d.weight), 1, 0,
                                      std::optional<Var>(param(g, m, d.bias)))));
  }
  return masks;
}

// a_i = BN(FC(weighted_average_pool(AF, mask of group i))), one head per attribute.
template <class T>
void attribute_heads(Graph<T>& g, Model<T>& m, Var attribute_map, const std::vector<Var>& masks, NormMode mode,
                     ForwardResult& out) {
  for (std::size_t i = 0; i < m.layout.heads.size(); ++i) {
    const auto& h = m.layout.heads[i];
    Var pooled = weighted_average_pool(g, attribute_map, masks.at(m.config.schema.groups[i].mask_group));
    Var a = batch_norm(g, run_linear(g, m, pooled, h.fc), param(g, m, h.gamma), param(g, m, h.beta),
                       m.bn[h.state], mode);
    out.attr_feats.push_back(a);
    out.attr_logits.push_back(run_linear(g, m, a, h.classifier));
  }
}

template <class T>
Var fuse_attributes(Graph<T>& g, Model<T>& m, const std::vector<Var>& attr_feats) {
  return run_linear(g, m, concat(g, attr_feats), m.layout.fusion);
}

template <class T>
std::vector<Var> extract_parts(Graph<T>& g, Var part_map, const std::vector<Var>& masks) {
  std::vector<Var> parts;
  for (Var mk : masks) parts.push_back(weighted_average_pool(g, part_map, mk));
  return parts;
}

// p = l * sigmoid(W_p tanh(W_l l + W_h f_attri + b)), gate of dim(l).
template <class T>
Var refine_part(Graph<T>& g, Model<T>& m, Var part, Var f_attri, const GateIndex& gi) {
  Var hidden = add(g, linear(g, part, param(g, m, gi.w_l), std::optional<Var>(param(g, m, gi.bias))),
                   linear(g, f_attri, param(g, m, gi.w_h)));
  Var gate = sigmoid(g, linear(g, tanh(g, hidden), param(g, m, gi.w_p)));
  return mul(g, part, gate);
}

template <class T>
ForwardResult forward(Graph<T>& g, Model<T>& m, const Tensor<T>& images, const ForwardOptions& opt) {
  ForwardResult r;
  Var stem = forward_stem(g, m, images, opt.mode);
  r.global_map = run_block(g, m, stem, m.layout.global_block, opt.mode);
  r.g = global_average_pool(g, r.global_map);
  r.id_logits = run_linear(g, m, r.g, m.layout.global_classifier);
  if (!opt.attributes && !opt.parts) return r;

  r.attribute_map = run_block(g, m, stem, m.layout.attr_block, opt.mode);
  r.masks = detect_masks(g, m, r.attribute_map);
  attribute_heads(g, m, r.attribute_map, r.masks, opt.mode, r);
  if (!opt.parts) return r;

  r.f_attri = fuse_attributes(g, m, r.attr_feats);
  r.part_map = run_block(g, m, stem, m.layout.part_block, opt.mode);
  r.parts = extract_parts(g, r.part_map, r.masks);
  for (std::size_t k = 0; k < r.parts.size(); ++k)
    r.refined.push_back(refine_part(g, m, r.parts[k], r.f_attri, m.layout.gates[k]));
  r.f_p = run_linear(g, m, concat(g, r.refined), m.layout.projection);
  r.f = concat(g, std::vector<Var>{r.f_p, r.g});
  r.local_logits = run_linear(g, m, r.f_p, m.layout.local_classifier);
  return r;
}

}  // namespace apdr
