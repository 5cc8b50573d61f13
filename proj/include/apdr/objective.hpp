#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <vector>

#include "apdr/dataset.hpp"
#include "apdr/graph.hpp"
#include "apdr/model.hpp"
#include "apdr/ops.hpp"

namespace apdr {

struct TripletSet {
  std::vector<std::size_t> anchor, positive, negative;
  std::size_t size() const { return anchor.size(); }
  bool empty() const { return anchor.empty(); }
};

struct LossBreakdown {
  double total = 0, id = 0, triplet = 0, attribute = 0;
  double lambda = 0.1, margin = 0.2;
};

struct LossConfig {
  double lambda = 0.1;
  double margin = 0.2;
  bool use_triplet = true;
};

template <class T>
struct Objective {
  Var total;
  LossBreakdown parts;
};

// Mean negative log-likelihood of the true identity.
template <class T>
Var identity_loss(Graph<T>& g, Var id_logits, const std::vector<std::size_t>& labels) {
  return softmax_cross_entropy(g, id_logits, labels);
}

// Sum over attribute groups of the batch-mean cross-entropy.
template <class T>
Var attribute_loss(Graph<T>& g, const std::vector<Var>& logits, const std::vector<std::vector<std::size_t>>& labels) {
  if (logits.empty()) throw InputError("attribute_loss needs at least one attribute group");
  Var total;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    std::vector<std::size_t> col;
    for (const auto& row : labels) {
      if (row.size() != logits.size()) throw InputError("attribute label row has wrong length");
      col.push_back(row[a]);
    }
    Var term = softmax_cross_entropy(g, logits[a], col);
    total = total.valid() ? add(g, total, term) : term;
  }
  return total;
}

template <class T>
T squared_distance(const Tensor<T>& emb, std::size_t a, std::size_t b) {
  const std::size_t d = emb.dim(1);
  T s = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const T diff = emb[a * d + j] - emb[b * d + j];
    s += diff * diff;
  }
  return s;
}

// Batch-hard mining: per anchor the farthest same-identity sample and the
// nearest other-identity sample (squared L2). Ties go to the lower index.
// Anchors lacking either are skipped.
template <class T>
TripletSet mine_triplets(const Tensor<T>& emb, const std::vector<int>& ids) {
  if (emb.ndim() != 2 || emb.dim(0) != ids.size()) throw InputError("mine_triplets: embeddings and labels disagree");
  const std::size_t n = ids.size();
  TripletSet t;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t best_p = n, best_n = n;
    T dp = -1, dn = std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const T d = squared_distance(emb, a, j);
      if (ids[j] == ids[a]) {
        if (d > dp) dp = d, best_p = j;
      } else if (d < dn) {
        dn = d, best_n = j;
      }
    }
    if (best_p == n || best_n == n) continue;
    t.anchor.push_back(a);
    t.positive.push_back(best_p);
    t.negative.push_back(best_n);
  }
  return t;
}

// mean over triplets of max(d_p - d_n + margin, 0); a constant 0 when empty.
template <class T>
Var triplet_loss(Graph<T>& g, Var emb, const TripletSet& triplets, double margin) {
  if (!(margin > 0)) throw InputError("triplet margin must be positive");
  if (triplets.empty()) return g.constant(Tensor<T>({1}, T(0)), "empty_triplets");
  Var dp = row_sq_dist(g, emb, triplets.anchor, triplets.positive);
  Var dn = row_sq_dist(g, emb, triplets.anchor, triplets.negative);
  return mean(g, relu(g, add_scalar(g, sub(g, dp, dn), T(margin))));
}

// Maps raw identities to classifier indices 0..C-1.
class IdentityIndex {
 public:
  IdentityIndex() = default;
  explicit IdentityIndex(const std::vector<int>& train_ids) {
    for (std::size_t i = 0; i < train_ids.size(); ++i) map_[train_ids[i]] = i;
  }
  std::vector<std::size_t> operator()(const std::vector<int>& ids) const {
    std::vector<std::size_t> out;
    for (int id : ids) {
      auto it = map_.find(id);
      if (it == map_.end()) throw InputError("identity " + std::to_string(id) + " is not a train identity");
      out.push_back(it->second);
    }
    return out;
  }
  std::size_t size() const { return map_.size(); }

 private:
  std::map<int, std::size_t> map_;
};

template <class T>
double scalar(const Graph<T>& g, Var v) {
  return double(g.value(v)[0]);
}

// id(g) + triplet(g) + lambda * attribute. The triplet term can be disabled for
// the identity-only baseline; the attribute term vanishes when lambda is 0.
template <class T>
Objective<T> stage1_loss(Graph<T>& g, const ForwardResult& out, const Batch& batch, const IdentityIndex& index,
                         const LossConfig& cfg) {
  Objective<T> o;
  o.parts.lambda = cfg.lambda;
  o.parts.margin = cfg.margin;
  Var id = identity_loss(g, out.id_logits, index(batch.identities));
  o.parts.id = scalar(g, id);
  Var total = id;
  if (cfg.use_triplet) {
    Var tri = triplet_loss(g, out.g, mine_triplets(g.value(out.g), batch.identities), cfg.margin);
    o.parts.triplet = scalar(g, tri);
    total = add(g, total, tri);
  }
  if (cfg.lambda != 0.0 && !out.attr_logits.empty()) {
    Var attr = attribute_loss(g, out.attr_logits, batch.attr_labels);
    o.parts.attribute = scalar(g, attr);
    total = add(g, total, scale(g, attr, T(cfg.lambda)));
  }
  o.total = total;
  o.parts.total = scalar(g, total);
  return o;
}

// id(local classifier on f_p) + triplet(f); no attribute term.
template <class T>
Objective<T> stage2_loss(Graph<T>& g, const ForwardResult& out, const Batch& batch, const IdentityIndex& index,
                         const LossConfig& cfg) {
  if (!out.f.valid() || !out.local_logits.valid()) throw InputError("stage2_loss needs a forward pass with parts enabled");
  Objective<T> o;
  o.parts.lambda = cfg.lambda;
  o.parts.margin = cfg.margin;
  Var id = identity_loss(g, out.local_logits, index(batch.identities));
  Var tri = triplet_loss(g, out.f, mine_triplets(g.value(out.f), batch.identities), cfg.margin);
  o.parts.id = scalar(g, id);
  o.parts.triplet = scalar(g, tri);
  o.total = add(g, id, tri);
  o.parts.total = scalar(g, o.total);
  return o;
}

}  // namespace apdr
