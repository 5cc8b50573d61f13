#pragma once

// Embedding extraction, single-query CMC / mAP, k-reciprocal re-ranking and
// mask localization against the generator's ground-truth zones.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "apdr/dataset.hpp"
#include "apdr/errors.hpp"
#include "apdr/image_io.hpp"
#include "apdr/model.hpp"

namespace apdr {

// Which descriptor to score: f = [f_p, g] by default, g alone for the
// baseline rows, or the concatenated raw / refined part features.
enum class Branch { full, global, part, refined_part };

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::full: return "full";
    case Branch::global: return "global";
    case Branch::part: return "part";
    case Branch::refined_part: return "refined-part";
  }
  return "?";
}

inline Branch parse_branch(const std::string& s) {
  for (Branch b : {Branch::full, Branch::global, Branch::part, Branch::refined_part})
    if (s == branch_name(b)) return b;
  throw ConfigError("unknown branch '" + s + "' (expected full, global, part or refined-part)");
}

struct EmbeddingSet {
  Eigen::MatrixXd features;  // one row per sample
  std::vector<int> identities;
  std::vector<int> cameras;
  std::vector<std::size_t> sample_indices;
  std::string source;

  std::size_t size() const { return identities.size(); }
};

// Eval-mode forward over `indices` in chunks; rows L2-normalized unless
// `normalize` is false.
inline EmbeddingSet extract_embeddings(Model<float>& m, ImageStore& store, const std::vector<std::size_t>& indices,
                                       Branch branch = Branch::full, bool normalize = true, std::size_t chunk = 32) {
  const auto& geo = store.manifest().geometry;
  const auto& want = m.config.geometry;
  if (!(geo == want)) {
    throw ConfigError("model expects " + shape_str({want.channels, want.height, want.width}) + " images, dataset has " +
                      shape_str({geo.channels, geo.height, geo.width}));
  }
  EmbeddingSet e;
  ForwardOptions fo{NormMode::eval, branch != Branch::global, branch != Branch::global};
  std::vector<std::vector<float>> rows;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::vector<std::size_t> part(indices.begin() + long(start),
                                        indices.begin() + long(std::min(indices.size(), start + chunk)));
    const Batch b = store.batch(part);
    Graph<float> g;
    const ForwardResult out = forward(g, m, b.images, fo);
    Var v;
    switch (branch) {
      case Branch::full: v = out.f; break;
      case Branch::global: v = out.g; break;
      case Branch::part: v = concat(g, out.parts); break;
      case Branch::refined_part: v = concat(g, out.refined); break;
    }
    const auto& t = g.value(v);
    const std::size_t d = t.dim(1);
    for (std::size_t i = 0; i < part.size(); ++i) rows.emplace_back(t.data.begin() + long(i * d), t.data.begin() + long((i + 1) * d));
    e.identities.insert(e.identities.end(), b.identities.begin(), b.identities.end());
    e.cameras.insert(e.cameras.end(), b.cameras.begin(), b.cameras.end());
  }
  e.sample_indices = indices;
  const std::size_t d = rows.empty() ? 0 : rows[0].size();
  e.features.resize(long(rows.size()), long(d));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) e.features(long(i), long(j)) = rows[i][j];
  if (normalize) {
    for (long i = 0; i < e.features.rows(); ++i) {
      const double n = e.features.row(i).norm();
      if (n > 0) e.features.row(i) /= n;
    }
  }
  return e;
}

// Squared Euclidean distances, query rows x gallery columns.
inline Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& q, const Eigen::MatrixXd& g) {
  if (q.cols() != g.cols()) {
    throw ConfigError("feature dims differ: query " + std::to_string(q.cols()) + ", gallery " + std::to_string(g.cols()));
  }
  Eigen::MatrixXd d(q.rows(), g.rows());
  for (long i = 0; i < q.rows(); ++i)
    for (long j = 0; j < g.rows(); ++j) d(i, j) = (q.row(i) - g.row(j)).squaredNorm();
  return d;
}

inline Eigen::MatrixXd distance_matrix(const EmbeddingSet& q, const EmbeddingSet& g) {
  return distance_matrix(q.features, g.features);
}

struct RetrievalMetrics {
  std::vector<double> cmc;  // cmc[k-1] = accuracy within top k
  double map = 0;
  std::size_t num_queries = 0;   // queries scored
  std::size_t num_excluded = 0;  // queries without any valid match
};

struct EvalReport {
  RetrievalMetrics metrics;
  std::optional<RetrievalMetrics> reranked;
  std::vector<double> mask_iou;           // per mask group, empty when unavailable
  std::vector<double> mask_iou_baseline;  // gt_area / image_area per mask group
  std::string checkpoint;
  std::string branch = "full";
  std::uint64_t seed = 0;
};

// Single-query protocol: gallery entries sharing both identity and camera
// with the query are dropped; ties in distance go to the lower gallery index.
inline RetrievalMetrics cmc_map(const Eigen::MatrixXd& dist, const std::vector<int>& q_ids, const std::vector<int>& q_cams,
                                const std::vector<int>& g_ids, const std::vector<int>& g_cams) {
  const std::size_t nq = q_ids.size(), ng = g_ids.size();
  if (std::size_t(dist.rows()) != nq || std::size_t(dist.cols()) != ng || q_cams.size() != nq || g_cams.size() != ng) {
    throw InputError("cmc_map: distance matrix and label arrays disagree");
  }
  RetrievalMetrics r;
  r.cmc.assign(ng, 0.0);
  std::vector<std::size_t> order(ng);
  for (std::size_t q = 0; q < nq; ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist(long(q), long(a)) < dist(long(q), long(b));
    });
    std::size_t rank = 0, hits = 0, first_hit = 0;
    double ap = 0;
    for (std::size_t j : order) {
      const bool same_id = g_ids[j] == q_ids[q];
      if (same_id && g_cams[j] == q_cams[q]) continue;
      ++rank;
      if (!same_id) continue;
      ++hits;
      if (hits == 1) first_hit = rank;
      ap += double(hits) / double(rank);
    }
    if (hits == 0) {
      ++r.num_excluded;
      continue;
    }
    ++r.num_queries;
    r.map += ap / double(hits);
    for (std::size_t k = first_hit; k <= ng; ++k) r.cmc[k - 1] += 1;
  }
  if (r.num_queries > 0) {
    r.map /= double(r.num_queries);
    for (auto& c : r.cmc) c /= double(r.num_queries);
  }
  return r;
}

inline RetrievalMetrics cmc_map(const Eigen::MatrixXd& dist, const EmbeddingSet& q, const EmbeddingSet& g) {
  return cmc_map(dist, q.identities, q.cameras, g.identities, g.cameras);
}

struct RerankConfig {
  std::size_t k1 = 20;
  std::size_t k2 = 6;
  double lambda = 0.3;
};

namespace detail {

// Rows of `all` (query then gallery) sorted by distance, ties by index.
inline std::vector<std::vector<std::size_t>> rank_rows(const Eigen::MatrixXd& d) {
  const std::size_t n = std::size_t(d.rows());
  std::vector<std::vector<std::size_t>> rank(n, std::vector<std::size_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = rank[i];
    std::iota(r.begin(), r.end(), 0);
    std::stable_sort(r.begin(), r.end(), [&](std::size_t a, std::size_t b) { return d(long(i), long(a)) < d(long(i), long(b)); });
  }
  return rank;
}

inline std::vector<std::size_t> reciprocal_neighbours(const std::vector<std::vector<std::size_t>>& rank, std::size_t i,
                                                      std::size_t k) {
  std::vector<std::size_t> out;
  const std::size_t n = rank.size(), width = std::min(n, k + 1);
  for (std::size_t a = 0; a < width; ++a) {
    const std::size_t j = rank[i][a];
    const auto& back = rank[j];
    if (std::find(back.begin(), back.begin() + long(width), i) != back.begin() + long(width)) out.push_back(j);
  }
  return out;
}

}  // namespace detail

// k-reciprocal re-ranking over the joint query+gallery set. Neighbour sets
// and weights use row-normalized distances; the final blend mixes the
// Jaccard distance with the distances as given, so lambda = 1 returns
// `q_g` unchanged.
inline Eigen::MatrixXd k_reciprocal_rerank(const Eigen::MatrixXd& q_g, const Eigen::MatrixXd& q_q, const Eigen::MatrixXd& g_g,
                                           const RerankConfig& cfg) {
  const std::size_t nq = std::size_t(q_g.rows()), ng = std::size_t(q_g.cols()), n = nq + ng;
  if (std::size_t(q_q.rows()) != nq || std::size_t(q_q.cols()) != nq || std::size_t(g_g.rows()) != ng ||
      std::size_t(g_g.cols()) != ng) {
    throw InputError("rerank: distance blocks have inconsistent sizes");
  }
  if (cfg.k1 >= ng) throw InputError("rerank: k1=" + std::to_string(cfg.k1) + " must be below the gallery size " + std::to_string(ng));
  if (cfg.k2 < 1 || cfg.k2 >= cfg.k1) throw InputError("rerank: need k1 > k2 >= 1");
  if (cfg.lambda < 0 || cfg.lambda > 1) throw InputError("rerank: lambda must lie in [0, 1]");

  Eigen::MatrixXd all(n, n);
  all.topLeftCorner(nq, nq) = q_q;
  all.topRightCorner(nq, ng) = q_g;
  all.bottomLeftCorner(ng, nq) = q_g.transpose();
  all.bottomRightCorner(ng, ng) = g_g;
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = all.row(long(i)).maxCoeff();
    if (mx > 0) all.row(long(i)) /= mx;
  }
  const auto rank = detail::rank_rows(all);

  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
  const std::size_t half = std::size_t(std::nearbyint(double(cfg.k1) / 2.0));  // half-to-even
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = detail::reciprocal_neighbours(rank, i, cfg.k1);
    std::vector<std::size_t> expanded = r;
    for (std::size_t c : r) {
      const auto rc = detail::reciprocal_neighbours(rank, c, half);
      std::size_t overlap = 0;
      for (std::size_t x : rc) overlap += std::find(r.begin(), r.end(), x) != r.end();
      if (double(overlap) > 2.0 / 3.0 * double(rc.size())) expanded.insert(expanded.end(), rc.begin(), rc.end());
    }
    std::sort(expanded.begin(), expanded.end());
    expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());
    double total = 0;
    for (std::size_t j : expanded) total += std::exp(-all(long(i), long(j)));
    for (std::size_t j : expanded) v(long(i), long(j)) = std::exp(-all(long(i), long(j))) / total;
  }
  if (cfg.k2 > 1) {
    Eigen::MatrixXd qe = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < cfg.k2; ++a) qe.row(long(i)) += v.row(long(rank[i][a]));
      qe.row(long(i)) /= double(cfg.k2);
    }
    v = qe;
  }

  Eigen::MatrixXd out(nq, ng);
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < ng; ++j) {
      double shared = 0;
      for (std::size_t c = 0; c < n; ++c) shared += std::min(v(long(i), long(c)), v(long(nq + j), long(c)));
      const double jaccard = 1.0 - shared / (2.0 - shared);
      out(long(i), long(j)) = cfg.lambda * q_g(long(i), long(j)) + (1.0 - cfg.lambda) * jaccard;
    }
  return out;
}

// Defaults scaled down for tiny galleries: k1 <= gallery/2, k2 < k1.
inline RerankConfig scaled_rerank_config(RerankConfig cfg, std::size_t gallery_size) {
  cfg.k1 = std::max<std::size_t>(2, std::min(cfg.k1, gallery_size / 2));
  cfg.k2 = std::max<std::size_t>(1, std::min(cfg.k2, cfg.k1 - 1));
  return cfg;
}

// ---------------------------------------------------------------------------
// Mask localization.

// IoU of a binarized learned mask (mh x mw, upsampled by nearest neighbour)
// against a binary ground-truth map (h x w). Both empty counts as 1.
inline double mask_iou(const float* learned, std::size_t mh, std::size_t mw, const float* gt, std::size_t h, std::size_t w,
                       double threshold = 0.5) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const bool a = learned[(r * mh / h) * mw + c * mw / w] >= threshold;
      const bool b = gt[r * w + c] > 0.5f;
      inter += a && b;
      uni += a || b;
    }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

struct MaskIoU {
  std::vector<double> iou;       // mean over samples, per mask group
  std::vector<double> baseline;  // mean gt_area / image_area, per mask group
  std::size_t samples = 0;
};

// Learned masks of `indices` against their ground truth.
inline MaskIoU evaluate_masks(Model<float>& m, ImageStore& store, const std::vector<std::size_t>& indices,
                              double threshold = 0.5, std::size_t chunk = 32) {
  const auto& manifest = store.manifest();
  const std::size_t k = m.config.num_masks();
  if (manifest.schema.num_mask_groups() != k) {
    throw InputError("model has " + std::to_string(k) + " masks but the dataset ground truth has " +
                     std::to_string(manifest.schema.num_mask_groups()));
  }
  const std::size_t h = manifest.geometry.height, w = manifest.geometry.width;
  MaskIoU out;
  out.iou.assign(k, 0.0);
  out.baseline.assign(k, 0.0);
  ForwardOptions fo{NormMode::eval, true, false};
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::vector<std::size_t> part(indices.begin() + long(start),
                                        indices.begin() + long(std::min(indices.size(), start + chunk)));
    for (std::size_t i : part)
      if (!store.get(i).gt_masks) throw InputError("sample " + manifest.samples[i].image + " has no ground-truth mask");
    const Batch b = store.batch(part);
    Graph<float> g;
    const auto masks = forward(g, m, b.images, fo).masks;
    for (std::size_t s = 0; s < part.size(); ++s) {
      const auto& gt = *store.get(part[s]).gt_masks;
      for (std::size_t q = 0; q < k; ++q) {
        const auto& mk = g.value(masks[q]);
        const std::size_t mh = mk.dim(2), mw = mk.dim(3);
        const float* gq = gt.ptr() + q * h * w;
        out.iou[q] += mask_iou(mk.ptr() + s * mh * mw, mh, mw, gq, h, w, threshold);
        out.baseline[q] += double(std::count_if(gq, gq + h * w, [](float x) { return x > 0.5f; })) / double(h * w);
      }
    }
    out.samples += part.size();
  }
  for (std::size_t q = 0; q < k; ++q) {
    out.iou[q] /= double(std::max<std::size_t>(1, out.samples));
    out.baseline[q] /= double(std::max<std::size_t>(1, out.samples));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files.

inline void to_json(nlohmann::json& j, const RetrievalMetrics& r) {
  j = {{"cmc", r.cmc}, {"map", r.map}, {"num_queries", r.num_queries}, {"num_excluded", r.num_excluded}};
}
inline void from_json(const nlohmann::json& j, RetrievalMetrics& r) {
  j.at("cmc").get_to(r.cmc);
  j.at("map").get_to(r.map);
  j.at("num_queries").get_to(r.num_queries);
  j.at("num_excluded").get_to(r.num_excluded);
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = r.metrics;
  j["reranked"] = r.reranked.has_value();
  if (r.reranked) j["rerank"] = *r.reranked;
  j["mask_iou"] = r.mask_iou;
  j["mask_iou_baseline"] = r.mask_iou_baseline;
  j["checkpoint"] = r.checkpoint;
  j["branch"] = r.branch;
  j["seed"] = r.seed;
}
inline void from_json(const nlohmann::json& j, EvalReport& r) {
  j.get_to(r.metrics);
  r.reranked.reset();
  if (j.at("reranked").get<bool>()) r.reranked = j.at("rerank").get<RetrievalMetrics>();
  j.at("mask_iou").get_to(r.mask_iou);
  j.at("mask_iou_baseline").get_to(r.mask_iou_baseline);
  j.at("checkpoint").get_to(r.checkpoint);
  j.at("branch").get_to(r.branch);
  j.at("seed").get_to(r.seed);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

inline std::string cmc_csv(const std::vector<double>& cmc) {
  std::string s = "k,accuracy\n";
  char buf[64];
  for (std::size_t k = 0; k < cmc.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", k + 1, cmc[k]);
    s += buf;
  }
  return s;
}

// report.json plus cmc.csv (and rerank_cmc.csv when re-ranked) in `dir`.
inline void emit_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", nlohmann::json(r).dump(2) + "\n");
  write_text(dir / "cmc.csv", cmc_csv(r.metrics.cmc));
  if (r.reranked) write_text(dir / "rerank_cmc.csv", cmc_csv(r.reranked->cmc));
}

// One PGM per mask for each probe: <dir>/<image stem>_mask<k>.pgm, scaled to
// 0..255 at the learned resolution. Returns the written paths.
inline std::vector<std::filesystem::path> dump_masks(Model<float>& m, ImageStore& store,
                                                     const std::vector<std::size_t>& probes,
                                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  if (probes.empty()) return written;
  const Batch b = store.batch(probes);
  Graph<float> g;
  ForwardOptions fo{NormMode::eval, true, false};
  const auto masks = forward(g, m, b.images, fo).masks;
  for (std::size_t s = 0; s < probes.size(); ++s) {
    const auto stem = std::filesystem::path(store.manifest().samples[probes[s]].image).stem().string();
    for (std::size_t q = 0; q < masks.size(); ++q) {
      const auto& mk = g.value(masks[q]);
      const std::size_t mh = mk.dim(2), mw = mk.dim(3);
      Image8 img{mw, mh, 1, std::vector<std::uint8_t>(mh * mw)};
      for (std::size_t i = 0; i < mh * mw; ++i)
        img.pixels[i] = detail::quantize(double(mk[s * mh * mw + i]));
      auto path = dir / (stem + "_mask" + std::to_string(q) + ".pgm");
      write_pnm(path, img);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace apdr
