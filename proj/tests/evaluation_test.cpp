#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "apdr/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace apdr;
using apdr::testing_util::scratch_dir;
using apdr::testing_util::slurp;
using namespace apdr::oracles;

namespace {

Eigen::MatrixXd row(std::initializer_list<double> v) {
  Eigen::MatrixXd m(1, long(v.size()));
  long j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

}  // namespace

TEST(Distance, Examples) {
  Eigen::MatrixXd a = row({0.6, 0.8});
  EXPECT_EQ(distance_matrix(a, a)(0, 0), 0.0);
  Eigen::MatrixXd e = Eigen::MatrixXd::Identity(3, 3);
  auto d = distance_matrix(e, e);
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(d(i, j), i == j ? 0.0 : 2.0);
  Rng rng(3);
  auto p = random_points(rng, 6, 4);
  auto s = distance_matrix(p, p);
  EXPECT_TRUE(s.isApprox(s.transpose(), 0.0));
  EXPECT_THROW(distance_matrix(p, random_points(rng, 2, 3)), ConfigError);
}

TEST(CmcMap, WorkedExample) {
  // gallery A B A on cameras different from the query's
  auto r = cmc_map(row({0.2, 0.1, 0.3}), {7}, {0}, {7, 8, 7}, {1, 2, 3});
  EXPECT_EQ(r.cmc[0], 0.0);
  EXPECT_EQ(r.cmc[1], 1.0);
  EXPECT_NEAR(r.map, (1.0 / 2 + 2.0 / 3) / 2, 1e-12);
  EXPECT_NEAR(r.map, 0.5833, 1e-4);
}

TEST(CmcMap, PerfectRetrieval) {
  auto r = cmc_map(row({0.1, 0.5, 0.9}), {1}, {0}, {1, 2, 3}, {1, 1, 1});
  EXPECT_EQ(r.cmc[0], 1.0);
  EXPECT_EQ(r.map, 1.0);
}

TEST(CmcMap, JunkFiltered) {
  // same id, same camera at distance 0 must not count
  auto with = cmc_map(row({0.0, 0.1, 0.5}), {1}, {0}, {1, 2, 1}, {0, 1, 1});
  auto without = cmc_map(row({0.1, 0.5}), {1}, {0}, {2, 1}, {1, 1});
  EXPECT_EQ(with.cmc[0], 0.0);
  EXPECT_EQ(with.cmc[1], 1.0);
  EXPECT_EQ(with.map, without.map);
}

TEST(CmcMap, QueryWithoutMatchExcluded) {
  Eigen::MatrixXd d(2, 2);
  d << 0.1, 0.2, 0.3, 0.4;
  auto r = cmc_map(d, {1, 5}, {0, 0}, {1, 2}, {1, 1});
  EXPECT_EQ(r.num_queries, 1u);
  EXPECT_EQ(r.num_excluded, 1u);
  EXPECT_EQ(r.cmc[0], 1.0);
}

TEST(CmcMap, MatchesBruteForce) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng, trial % 2 == 1);
    auto a = cmc_map(in.d, in.qi, in.qc, in.gi, in.gc);
    auto b = brute_force_cmc_map(in.d, in.qi, in.qc, in.gi, in.gc);
    ASSERT_EQ(a.cmc, b.cmc) << trial;
    ASSERT_EQ(a.map, b.map) << trial;
    ASSERT_EQ(a.num_excluded, b.num_excluded);
  }
}

TEST(CmcMap, InvariantsOnRandomInstances) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng, false);
    auto r = cmc_map(in.d, in.qi, in.qc, in.gi, in.gc);
    if (r.num_queries == 0) continue;
    EXPECT_GE(r.map, 0.0);
    EXPECT_LE(r.map, 1.0);
    for (std::size_t k = 1; k < r.cmc.size(); ++k) EXPECT_LE(r.cmc[k - 1], r.cmc[k]);
    EXPECT_EQ(r.cmc.back(), 1.0);
    // strictly increasing transform leaves every ranking alone
    Eigen::MatrixXd t = in.d.unaryExpr([](double x) { return std::exp(3 * x) + x * x * x; });
    auto rt = cmc_map(t, in.qi, in.qc, in.gi, in.gc);
    EXPECT_EQ(rt.cmc, r.cmc);
    EXPECT_EQ(rt.map, r.map);
  }
}

TEST(Rerank, LambdaOneIsIdentity) {
  Rng rng(8);
  auto q = random_points(rng, 3, 4), g = random_points(rng, 12, 4);
  auto qg = distance_matrix(q, g);
  auto out = k_reciprocal_rerank(qg, distance_matrix(q, q), distance_matrix(g, g), {5, 2, 1.0});
  EXPECT_EQ(out, qg);
}

TEST(Rerank, MatchesDirectDefinition) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nq = 1 + uniform_index(rng, 3), ng = 8 - nq;
    auto q = random_points(rng, nq, 3), g = random_points(rng, ng, 3);
    RerankConfig cfg;
    cfg.k1 = 2 + uniform_index(rng, ng - 2);  // k1 < gallery size
    cfg.k2 = 1 + uniform_index(rng, cfg.k1 - 1);
    cfg.lambda = uniform01(rng);
    auto qg = distance_matrix(q, g), qq = distance_matrix(q, q), gg = distance_matrix(g, g);
    auto a = k_reciprocal_rerank(qg, qq, gg, cfg);
    auto b = oracle_rerank(qg, qq, gg, cfg);
    ASSERT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6) << "trial " << trial << " k1=" << cfg.k1 << " k2=" << cfg.k2;
  }
}

TEST(Rerank, DuplicateGalleryVectorsTie) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = random_points(rng, 3, 4);
    auto g = random_points(rng, 10, 4);
    g.row(7) = g.row(2);
    auto out = k_reciprocal_rerank(distance_matrix(q, g), distance_matrix(q, q), distance_matrix(g, g), {4, 2, 0.3});
    for (long i = 0; i < 3; ++i) EXPECT_NEAR(out(i, 2), out(i, 7), 1e-12);
  }
}

TEST(Rerank, Preconditions) {
  Eigen::MatrixXd qg = Eigen::MatrixXd::Ones(1, 4), qq = Eigen::MatrixXd::Zero(1, 1), gg = Eigen::MatrixXd::Ones(4, 4);
  EXPECT_THROW(k_reciprocal_rerank(qg, qq, gg, {4, 1, 0.3}), InputError);
  EXPECT_THROW(k_reciprocal_rerank(qg, qq, gg, {2, 2, 0.3}), InputError);
  EXPECT_THROW(k_reciprocal_rerank(qg, qq, gg, {3, 1, 1.5}), InputError);
  auto c = scaled_rerank_config({}, 10);
  EXPECT_EQ(c.k1, 5u);
  EXPECT_EQ(c.k2, 4u);
  EXPECT_EQ(scaled_rerank_config({}, 150).k1, 20u);
}

TEST(MaskIoU, SetArithmetic) {
  const std::vector<float> gt{0, 1, 1, 0, 0, 1, 1, 0};  // 2x4
  std::vector<float> same(gt.begin(), gt.end()), disjoint{1, 0, 0, 1, 1, 0, 0, 1}, plus(8, 1.f);
  EXPECT_EQ(mask_iou(same.data(), 2, 4, gt.data(), 2, 4), 1.0);
  EXPECT_EQ(mask_iou(disjoint.data(), 2, 4, gt.data(), 2, 4), 0.0);
  EXPECT_EQ(mask_iou(plus.data(), 2, 4, gt.data(), 2, 4), 0.5);
}

TEST(MaskIoU, NearestNeighbourUpsampling) {
  const std::vector<float> learned{0.9f, 0.1f, 0.2f, 0.7f};  // 2x2 -> 4x4
  std::vector<float> gt(16, 0.f);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) gt[r * 4 + c] = (r < 2) == (c < 2) ? 1.f : 0.f;
  EXPECT_EQ(mask_iou(learned.data(), 2, 2, gt.data(), 4, 4), 1.0);
  EXPECT_EQ(mask_iou(learned.data(), 2, 2, gt.data(), 4, 4, 0.8), 0.5);
}

TEST(Report, JsonRoundTripAndCsv) {
  EvalReport r;
  r.metrics.cmc = {0.25, 0.5, 1.0};
  r.metrics.map = 0.4;
  r.metrics.num_queries = 4;
  r.reranked = RetrievalMetrics{{0.5, 0.75, 1.0}, 0.6, 4, 0};
  r.mask_iou = {0.3, 0.7};
  r.mask_iou_baseline = {0.1, 0.2};
  r.checkpoint = "ckpt_stage2_e60.bin";
  r.seed = 3;
  const auto dir = scratch_dir();
  emit_report(r, dir);
  auto back = nlohmann::json::parse(slurp(dir / "report.json")).get<EvalReport>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(r));
  auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const char* key : {"cmc", "map", "mask_iou", "reranked", "checkpoint", "seed"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(slurp(dir / "cmc.csv"), "k,accuracy\n1,0.25\n2,0.5\n3,1\n");
  EXPECT_TRUE(std::filesystem::exists(dir / "rerank_cmc.csv"));
}

namespace {

class EvalData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto dir = std::filesystem::temp_directory_path() / "apdr_tests" / "eval_data";
    std::filesystem::remove_all(dir);
    GeneratorConfig gc;
    gc.num_identities = 6;
    gc.num_test_identities = 3;
    gc.samples_per_identity = 4;
    manifest_ = new DatasetManifest(generate_attrgrid(gc, 2, dir));
  }
  static void TearDownTestSuite() { delete manifest_; }
  static inline DatasetManifest* manifest_ = nullptr;
};

}  // namespace

TEST_F(EvalData, EmbeddingsNormalizedAndDeterministic) {
  ModelConfig mc;
  mc.num_train_ids = 3;
  auto m = build_model<float>(mc, 1);
  ImageStore store(*manifest_);
  auto idx = manifest_->indices(Split::gallery);
  idx.push_back(idx.front());  // duplicate image
  auto e = extract_embeddings(m, store, idx);
  ASSERT_EQ(e.features.cols(), 512);
  ASSERT_EQ(e.size(), idx.size());
  for (long i = 0; i < e.features.rows(); ++i) EXPECT_NEAR(e.features.row(i).norm(), 1.0, 1e-5);
  EXPECT_EQ(e.features.row(0), e.features.row(long(idx.size() - 1)));
  // chunking changes GEMM blocking, so across chunks rows agree to rounding
  auto chunked = extract_embeddings(m, store, idx, Branch::full, true, 4);
  EXPECT_LT((chunked.features - e.features).cwiseAbs().maxCoeff(), 1e-6);
  auto raw = extract_embeddings(m, store, idx, Branch::full, false);
  EXPECT_GT(std::abs(raw.features.row(0).norm() - 1.0), 1e-3);
  EXPECT_EQ(extract_embeddings(m, store, idx, Branch::global).features.cols(), 256);
  EXPECT_EQ(extract_embeddings(m, store, idx, Branch::part).features.cols(), 8 * 32);
  EXPECT_EQ(extract_embeddings(m, store, idx, Branch::refined_part).features.cols(), 8 * 32);
}

TEST_F(EvalData, GeometryMismatch) {
  ModelConfig mc;
  mc.num_train_ids = 3;
  mc.geometry = {3, 32, 16};
  auto m = build_model<float>(mc, 1);
  ImageStore store(*manifest_);
  EXPECT_THROW(extract_embeddings(m, store, {0}), ConfigError);
}

TEST_F(EvalData, UntrainedMasksScoreTheAreaBaseline) {
  ModelConfig mc;
  mc.num_train_ids = 3;
  auto m = build_model<float>(mc, 1);
  ImageStore store(*manifest_);
  auto r = evaluate_masks(m, store, manifest_->indices(Split::query));
  ASSERT_EQ(r.iou.size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_GT(r.baseline[k], 0.0);
    EXPECT_NEAR(r.iou[k], r.baseline[k], 1e-12);
  }
}

TEST_F(EvalData, MaskDumpsPerProbe) {
  ModelConfig mc;
  mc.num_train_ids = 3;
  auto m = build_model<float>(mc, 1);
  ImageStore store(*manifest_);
  const auto dir = scratch_dir();
  auto files = dump_masks(m, store, {0, 5}, dir);
  EXPECT_EQ(files.size(), 16u);
  const auto img = read_pnm(files.front());
  EXPECT_EQ(img.height, 8u);
  EXPECT_EQ(img.width, 4u);
  for (auto p : img.pixels) EXPECT_EQ(p, 128);
}

TEST_F(EvalData, SampleWithoutGroundTruth) {
  DatasetManifest copy = *manifest_;
  copy.samples[0].mask.reset();
  ModelConfig mc;
  mc.num_train_ids = 3;
  auto m = build_model<float>(mc, 1);
  ImageStore store(copy);
  EXPECT_THROW(evaluate_masks(m, store, {0}), InputError);
}
