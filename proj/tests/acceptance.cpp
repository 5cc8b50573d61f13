// End-to-end acceptance run: one PASS/FAIL line per criterion (1-7).
// Exit status is 0 only when every criterion passes.
//
// Usage: acceptance [--only 1,2,...] [--workdir DIR]

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "apdr/checkpoint.hpp"
#include "apdr/cli.hpp"
#include "apdr/config.hpp"
#include "apdr/evaluation.hpp"
#include "apdr/gradcheck.hpp"
#include "apdr/model_check.hpp"
#include "apdr/training.hpp"
#include "oracles.hpp"

using namespace apdr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({id, name, pass, detail});
  std::printf("criterion %d  %-24s %s  %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Same relative paths with identical bytes, ignoring names in `skip`.
bool same_tree(const fs::path& a, const fs::path& b, const std::set<std::string>& skip = {}) {
  auto files = [&](const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (!e.is_regular_file() || skip.count(e.path().filename().string())) continue;
      out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
  };
  return files(a) == files(b);
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "apdr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "apdr %s exited %d: %s\n", args[1].c_str(), code, err.str().c_str());
  return code;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

void gradient_suite() {
  const auto t0 = Clock::now();
  double worst_op = 0, worst_model = 0;
  std::string worst_op_name, worst_param;
  std::size_t checks = 0;
  for (const auto& op : registered_ops()) {
    for (std::uint64_t s = 1; s <= 10; ++s, ++checks) {
      const double e = grad_check(op.name, {}, s);
      if (e >= worst_op) worst_op = e, worst_op_name = op.name;
    }
  }
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const auto r = model_grad_check(s);
    if (r.worst >= worst_model) worst_model = r.worst, worst_param = r.worst_param;
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_op < 1e-4 && worst_model < 1e-3 && secs < 120;
  record(1, "gradient suite", pass,
         fmt("%zu ops x 10 seeds, worst %.2e (%s) < 1e-4; end-to-end x 10 seeds, worst %.2e (%s) < 1e-3; %.1f s < 120 s",
             registered_ops().size(), worst_op, worst_op_name.c_str(), worst_model, worst_param.c_str(), secs));
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalence

void oracle_equivalence() {
  std::size_t cmc_ok = 0, mining_ok = 0, rerank_ok = 0;
  double rerank_worst = 0;
  Rng rng(1001);
  for (int t = 0; t < 200; ++t) {
    const auto in = oracles::random_instance(rng, t % 2 == 1);
    const auto a = cmc_map(in.d, in.qi, in.qc, in.gi, in.gc);
    const auto b = oracles::brute_force_cmc_map(in.d, in.qi, in.qc, in.gi, in.gc);
    cmc_ok += a.cmc == b.cmc && a.map == b.map && a.num_excluded == b.num_excluded && a.num_queries == b.num_queries;
  }
  Rng mrng(1002);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + uniform_index(mrng, 15), d = 1 + uniform_index(mrng, 4);
    Tensor<double> e({n, d});
    for (auto& v : e.data) v = double(uniform_index(mrng, 5));
    std::vector<int> ids(n);
    for (auto& id : ids) id = int(uniform_index(mrng, 4));
    const auto a = mine_triplets(e, ids), b = oracles::brute_force_mining(e, ids);
    mining_ok += a.anchor == b.anchor && a.positive == b.positive && a.negative == b.negative;
  }
  Rng rrng(1003);
  for (int t = 0; t < 50; ++t) {
    const std::size_t nq = 1 + uniform_index(rrng, 3), ng = 8 - nq;
    const auto q = oracles::random_points(rrng, nq, 3), g = oracles::random_points(rrng, ng, 3);
    RerankConfig cfg;
    cfg.k1 = 2 + uniform_index(rrng, ng - 2);
    cfg.k2 = 1 + uniform_index(rrng, cfg.k1 - 1);
    cfg.lambda = uniform01(rrng);
    const auto qg = distance_matrix(q, g), qq = distance_matrix(q, q), gg = distance_matrix(g, g);
    const double diff = (k_reciprocal_rerank(qg, qq, gg, cfg) - oracles::oracle_rerank(qg, qq, gg, cfg)).cwiseAbs().maxCoeff();
    rerank_worst = std::max(rerank_worst, diff);
    rerank_ok += diff <= 1e-6;
  }
  const bool pass = cmc_ok == 200 && mining_ok == 100 && rerank_ok == 50;
  record(2, "oracle equivalence", pass,
         fmt("cmc_map exact on %zu/200, mining exact on %zu/100, re-ranking within 1e-6 on %zu/50 (worst %.1e)", cmc_ok,
             mining_ok, rerank_ok, rerank_worst));
}

// ---------------------------------------------------------------------------
// 4 / 5 / 7 share the training runs; 3 uses their logs and checkpoints.

struct Row {
  double rank1 = 0, map = 0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  Row baseline, perceptual, apdr, part, refined;
  std::vector<RetrievalMetrics> all_metrics;
  MaskIoU masks;
  std::vector<LossBreakdown> stage1, stage2;  // full run, epoch means
  double min_step_loss = 0;                   // over every logged step of every run
  bool roundtrip_exact = false;
};

RetrievalMetrics score(Model<float>& m, ImageStore& store, Branch b) {
  const auto& man = store.manifest();
  const auto q = extract_embeddings(m, store, man.indices(Split::query), b);
  const auto g = extract_embeddings(m, store, man.indices(Split::gallery), b);
  return cmc_map(distance_matrix(q, g), q, g);
}

Row to_row(const RetrievalMetrics& r) { return {r.cmc.at(0), r.map}; }

RunConfig preset_config(const std::string& preset, std::uint64_t seed) {
  return resolve_config("train", nullptr, {{"preset", preset}, {"seed", std::to_string(seed)}});
}

// save -> load -> eval forward must match bit for bit.
bool checkpoint_roundtrip(TrainState& s, const TrainConfig& tc, ImageStore& store, const fs::path& path) {
  save_checkpoint(path, s, tc);
  Checkpoint ck = load_checkpoint(path);
  const auto idx = store.manifest().indices(Split::query);
  const Batch b = store.batch({idx.begin(), idx.begin() + 8});
  ForwardOptions fo{NormMode::eval, true, true};
  Graph<float> g1, g2;
  const auto& f1 = g1.value(forward(g1, s.model, b.images, fo).f);
  const auto& f2 = g2.value(forward(g2, ck.state.model, b.images, fo).f);
  bool same = f1.data == f2.data && ck.state.epoch == s.epoch && rng_state(ck.state.rng) == rng_state(s.rng);
  for (std::size_t i = 0; i < s.model.params.size(); ++i) same = same && s.model.params[i].data == ck.state.model.params[i].data;
  for (std::size_t i = 0; i < s.optimizer.velocity.size(); ++i)
    same = same && s.optimizer.velocity[i] == ck.state.optimizer.velocity[i];
  return same;
}

SeedRun run_seed(std::uint64_t seed, const fs::path& work) {
  SeedRun r;
  r.seed = seed;
  const RunConfig gen = resolve_config("generate", nullptr, {{"seed", std::to_string(seed)}});
  const fs::path data = work / ("data_" + std::to_string(seed));
  fs::remove_all(data);
  const DatasetManifest man = generate_attrgrid(gen.generator, seed, data);
  ImageStore store(man);

  double min_loss = 1e300;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& s) {
    for (double v : {s.loss.total, s.loss.id, s.loss.triplet, s.loss.attribute}) min_loss = std::min(min_loss, v);
  };

  // identity-only baseline
  const RunConfig base = preset_config("baseline", seed);
  TrainState bs = make_train_state(base.model_config(man), base.train_config());
  train_stage1(bs, base.train_config(), store, hooks);
  const auto base_m = score(bs.model, store, parse_branch(base.eval.branch));
  r.baseline = to_row(base_m);

  // full model; its stage 1 is the perceptual-attribute row
  const RunConfig full = preset_config("apdr", seed);
  for (const char* p : {"perceptual", "part", "refined-part"}) {
    if (!(preset_config(p, seed).train_config() == full.train_config()))
      throw InternalError(std::string("preset ") + p + " trains differently from apdr");
  }
  TrainState fs_ = make_train_state(full.model_config(man), full.train_config());
  r.stage1 = train_stage1(fs_, full.train_config(), store, hooks);
  const auto perc_m = score(fs_.model, store, parse_branch(preset_config("perceptual", seed).eval.branch));
  r.perceptual = to_row(perc_m);
  r.masks = evaluate_masks(fs_.model, store, cli::test_indices(man));

  r.stage2 = train_stage2(fs_, full.train_config(), store, hooks);
  const auto apdr_m = score(fs_.model, store, Branch::full);
  const auto part_m = score(fs_.model, store, parse_branch(preset_config("part", seed).eval.branch));
  const auto ref_m = score(fs_.model, store, parse_branch(preset_config("refined-part", seed).eval.branch));
  r.apdr = to_row(apdr_m);
  r.part = to_row(part_m);
  r.refined = to_row(ref_m);
  r.all_metrics = {base_m, perc_m, apdr_m, part_m, ref_m};
  r.min_step_loss = min_loss;
  r.roundtrip_exact = checkpoint_roundtrip(fs_, full.train_config(), store, work / ("full_" + std::to_string(seed) + ".bin"));
  fs::remove_all(data);
  return r;
}

// ---------------------------------------------------------------------------
// 3. Invariants

bool mask_and_gate_invariants(std::string& detail) {
  std::size_t mask_values = 0, gate_values = 0, bad_mask = 0, bad_gate = 0;
  ModelConfig mc;
  mc.num_train_ids = 10;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Model<float> m = build_model<float>(mc, seed);
    Rng rng(seed + 77);
    const float spread = seed == 4 ? 40.f : 0.5f;  // last seed drives the sigmoids into saturation
    for (auto& p : m.params)
      for (auto& v : p.data) v += spread * float(normal(rng));
    Tensor<float> images({4, 3, mc.geometry.height, mc.geometry.width});
    for (auto& v : images.data) v = float(uniform01(rng));
    Graph<float> g;
    ForwardOptions fo{NormMode::train, true, true};
    const auto out = forward(g, m, images, fo);
    for (Var mk : out.masks)
      for (float v : g.value(mk).data) ++mask_values, bad_mask += !(v > 0.f && v < 1.f);
    for (std::size_t k = 0; k < out.parts.size(); ++k) {
      const auto& l = g.value(out.parts[k]);
      const auto& p = g.value(out.refined[k]);
      for (std::size_t i = 0; i < l.numel(); ++i) ++gate_values, bad_gate += !(std::abs(p[i]) <= std::abs(l[i]));
    }
  }
  detail += fmt("mask in (0,1) %zu/%zu; |p|<=|l| %zu/%zu", mask_values - bad_mask, mask_values, gate_values - bad_gate,
                gate_values);
  return bad_mask == 0 && bad_gate == 0;
}

bool determinism_via_cli(const fs::path& work, std::string& detail) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  const std::string data = (root / "data").string(), run = (root / "run").string();
  const std::vector<std::string> gen = {"generate",           "--seed",         "7",   "--identities", "12",
                                        "--test-identities", "4",              "--samples-per-id",   "4",
                                        "--out",              data};
  bool ok = cli(gen) == 0;
  fs::copy(data, root / "data_copy", fs::copy_options::recursive);
  auto again = gen;
  again.push_back("--force");
  ok = ok && cli(again) == 0;
  // config.json differs only in recording --force
  const bool gen_same = ok && same_tree(data, root / "data_copy", {"config.json"});

  const std::vector<std::string> train = {"train",
                                          "--data",
                                          data,
                                          "--out",
                                          run,
                                          "--seed",
                                          "3",
                                          "--model.widths",
                                          "[4,8,8,8]",
                                          "--model.feat_dim",
                                          "16",
                                          "--model.fusion_dim",
                                          "16",
                                          "--model.attr_dim",
                                          "8",
                                          "--model.gate_hidden",
                                          "8",
                                          "--train.p",
                                          "4",
                                          "--train.k_per_id",
                                          "2",
                                          "--train.epochs_stage1",
                                          "3",
                                          "--train.epochs_stage2",
                                          "2",
                                          "--train.checkpoint_every",
                                          "1"};
  ok = cli(train) == 0;
  fs::copy(run, root / "run_copy", fs::copy_options::recursive);
  // re-run purely from the written config
  ok = ok && cli({"train", "--config", (root / "run_copy" / "config.json").string()}) == 0;
  const bool train_same = ok && same_tree(run, root / "run_copy", {"config.json"});

  const std::string ck = (fs::path(run) / "ckpt_stage2_e2.bin").string();
  ok = cli({"eval", "--data", data, "--checkpoint", ck, "--rerank", "--out", (root / "eval1").string()}) == 0;
  ok = ok && cli({"eval", "--data", data, "--checkpoint", ck, "--rerank", "--out", (root / "eval2").string()}) == 0;
  const bool eval_same = ok && slurp(root / "eval1" / "report.json") == slurp(root / "eval2" / "report.json") &&
                         slurp(root / "eval1" / "cmc.csv") == slurp(root / "eval2" / "cmc.csv");
  detail += fmt("; generate %s, train %s, eval %s", gen_same ? "identical" : "DIFFERS", train_same ? "identical" : "DIFFERS",
                eval_same ? "identical" : "DIFFERS");
  fs::remove_all(root);
  return gen_same && train_same && eval_same;
}

void invariant_suite(const std::vector<SeedRun>& runs, const fs::path& work) {
  std::string detail;
  bool pass = mask_and_gate_invariants(detail);

  std::size_t curves = 0, monotone = 0;
  for (const auto& r : runs)
    for (const auto& m : r.all_metrics) {
      ++curves;
      bool ok = m.map >= 0 && m.map <= 1;
      for (std::size_t k = 0; k < m.cmc.size(); ++k)
        ok = ok && m.cmc[k] >= 0 && m.cmc[k] <= 1 && (k == 0 || m.cmc[k - 1] <= m.cmc[k]);
      monotone += ok;
    }
  Rng rng(1004);
  for (int t = 0; t < 200; ++t) {
    const auto in = oracles::random_instance(rng, t % 2 == 0);
    const auto m = cmc_map(in.d, in.qi, in.qc, in.gi, in.gc);
    ++curves;
    bool ok = m.map >= 0 && m.map <= 1;
    for (std::size_t k = 1; k < m.cmc.size(); ++k) ok = ok && m.cmc[k - 1] <= m.cmc[k];
    monotone += ok;
  }
  pass = pass && monotone == curves;
  detail += fmt("; CMC monotone %zu/%zu", monotone, curves);

  double min_loss = 1e300;
  bool roundtrip = !runs.empty();
  for (const auto& r : runs) min_loss = std::min(min_loss, r.min_step_loss), roundtrip = roundtrip && r.roundtrip_exact;
  pass = pass && min_loss >= 0 && roundtrip;
  detail += fmt("; min step loss %.3g >= 0; checkpoint round trip %s", min_loss, roundtrip ? "bit-exact" : "DIFFERS");

  pass = determinism_via_cli(work, detail) && pass;
  record(3, "invariant suite", pass, detail);
}

// ---------------------------------------------------------------------------
// 4. Ablation ordering

struct Gap {
  const char* name;
  std::function<double(const SeedRun&)> gap;  // positive when the ordering holds
  bool allow_equal_mean;
};

void ablation_ordering(const std::vector<SeedRun>& runs, double secs) {
  std::printf("\n  seed  baseline(r1/mAP)  perceptual       apdr             part             refined-part\n");
  for (const auto& r : runs) {
    std::printf("  %4llu  %.3f / %.3f    %.3f / %.3f    %.3f / %.3f    %.3f / %.3f    %.3f / %.3f\n",
                (unsigned long long)r.seed, r.baseline.rank1, r.baseline.map, r.perceptual.rank1, r.perceptual.map,
                r.apdr.rank1, r.apdr.map, r.part.rank1, r.part.map, r.refined.rank1, r.refined.map);
  }
  std::printf("\n");
  const std::vector<Gap> gaps = {
      {"apdr>perceptual r1", [](const SeedRun& r) { return r.apdr.rank1 - r.perceptual.rank1; }, false},
      {"apdr>perceptual mAP", [](const SeedRun& r) { return r.apdr.map - r.perceptual.map; }, false},
      {"perceptual>baseline r1", [](const SeedRun& r) { return r.perceptual.rank1 - r.baseline.rank1; }, false},
      {"perceptual>baseline mAP", [](const SeedRun& r) { return r.perceptual.map - r.baseline.map; }, false},
      {"refined>=part r1", [](const SeedRun& r) { return r.refined.rank1 - r.part.rank1; }, true},
      {"refined>=part mAP", [](const SeedRun& r) { return r.refined.map - r.part.map; }, true},
  };
  bool pass = secs < 15 * 60;
  std::string detail;
  for (const auto& g : gaps) {
    double mean = 0;
    std::size_t positive = 0;
    for (const auto& r : runs) {
      const double d = g.gap(r);
      mean += d / double(runs.size());
      positive += d > 0;
    }
    const bool ok = (g.allow_equal_mean ? mean >= 0 : mean > 0) && positive >= 2;
    pass = pass && ok;
    detail += fmt("%s%s mean %+.3f, %zu/3 seeds %s", detail.empty() ? "" : "; ", g.name, mean, positive, ok ? "ok" : "NO");
  }
  detail += fmt("; %.0f s < 900 s", secs);
  record(4, "ablation ordering", pass, detail);
}

// ---------------------------------------------------------------------------
// 5. Mask localization

void mask_localization(const std::vector<SeedRun>& runs) {
  std::size_t good_seeds = 0;
  std::string detail;
  for (const auto& r : runs) {
    std::size_t good = 0;
    std::string ratios;
    for (std::size_t k = 0; k < r.masks.iou.size(); ++k) {
      const double ratio = r.masks.iou[k] / r.masks.baseline[k];
      good += ratio >= 2.0;
      ratios += fmt("%s%.2f", k ? " " : "", ratio);
    }
    good_seeds += good >= 6;
    detail += fmt("%sseed %llu: %zu/%zu masks >= 2x [%s]", detail.empty() ? "" : "; ", (unsigned long long)r.seed, good,
                  r.masks.iou.size(), ratios.c_str());
  }
  record(5, "mask localization", good_seeds >= 2, fmt("%zu/3 seeds with >= 6 of 8; ", good_seeds) + detail);
}

// ---------------------------------------------------------------------------
// 6. Hyperparameter fidelity

void hyperparameter_fidelity(const fs::path& work) {
  const RunConfig c = resolve_config("train", nullptr, {});
  const nlohmann::json doc = to_json_document(c);
  fs::create_directories(work);
  write_config(c, work);
  const nlohmann::json back = read_config_file(work / "config.json");
  const RunConfig reread = resolve_config("train", &back, {});

  DatasetManifest man;
  man.schema = c.generator.schema;
  man.geometry = c.generator.geometry;
  man.samples.push_back({"x", std::nullopt, 0, 0, {}, Split::train});
  man.samples.push_back({"y", std::nullopt, 1, 0, {}, Split::train});
  const ModelConfig mc = c.model_config(man);

  struct Check {
    const char* what;
    bool ok;
  };
  const std::vector<Check> checks = {
      {"m=0.2", back["train"]["margin"] == 0.2},
      {"lambda=0.1", back["train"]["lambda"] == 0.1},
      {"momentum=0.9", back["train"]["momentum"] == 0.9},
      {"weight_decay=0.0005", back["train"]["weight_decay"] == 0.0005},
      {"dim(g)=256", back["model"]["feat_dim"] == 256 && mc.feat_dim == 256},
      {"dim(f_p)=256", back["model"]["feat_dim"] == 256},
      {"dim(f_attri)=256", back["model"]["fusion_dim"] == 256 && mc.fusion_dim == 256},
      {"dim(f)=512", back["derived"]["final_dim"] == 512 && mc.final_dim() == 512},
      {"K=8", back["derived"]["num_masks"] == 8 && mc.num_masks() == 8},
      {"base lr 0.01", back["train"]["base_lr"] == 0.01},
      {"frozen lr 0.0001", back["train"]["frozen_lr"] == 0.0001},
      {"round trip", detail::settable_json(c) == detail::settable_json(reread) && doc["derived"] == back["derived"]},
  };
  bool pass = true;
  std::string detail;
  for (const auto& ch : checks) {
    pass = pass && ch.ok;
    detail += fmt("%s%s %s", detail.empty() ? "" : ", ", ch.what, ch.ok ? "ok" : "WRONG");
  }
  record(6, "hyperparameter fidelity", pass, detail);
}

// ---------------------------------------------------------------------------
// 7. Smoke convergence

void smoke_convergence(const std::vector<SeedRun>& runs) {
  bool pass = runs.size() == 3;
  std::string detail;
  for (const auto& r : runs) {
    const bool s1 = r.stage1.back().total < r.stage1.front().total;
    const bool s2 = r.stage2.back().total < r.stage2.front().total;
    pass = pass && s1 && s2;
    detail += fmt("%sseed %llu: stage 1 %.3f -> %.3f, stage 2 %.3f -> %.3f", detail.empty() ? "" : "; ",
                  (unsigned long long)r.seed, r.stage1.front().total, r.stage1.back().total, r.stage2.front().total,
                  r.stage2.back().total);
  }
  record(7, "smoke convergence", pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / "apdr_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--workdir DIR]\n");
      return 2;
    }
  }
  auto want = [&](int id) { return only.empty() || only.count(id); };
  fs::remove_all(work);
  fs::create_directories(work);

  try {
    if (want(1)) gradient_suite();
    if (want(2)) oracle_equivalence();
    if (want(6)) hyperparameter_fidelity(work / "config");

    std::vector<SeedRun> runs;
    if (want(3) || want(4) || want(5) || want(7)) {
      const auto t0 = Clock::now();
      for (std::uint64_t seed : {1, 2, 3}) {
        runs.push_back(run_seed(seed, work));
        std::printf("  seed %llu trained (%.0f s elapsed)\n", (unsigned long long)seed, seconds_since(t0));
        std::fflush(stdout);
      }
      const double secs = seconds_since(t0);
      if (want(4)) ablation_ordering(runs, secs);
      if (want(5)) mask_localization(runs);
      if (want(7)) smoke_convergence(runs);
      if (want(3)) invariant_suite(runs, work);
    }
  } catch (const std::exception& e) {
    std::printf("acceptance run aborted: %s\n", e.what());
    return 1;
  }

  std::size_t passed = 0;
  for (const auto& o : outcomes) passed += o.pass;
  std::printf("\n%zu/%zu criteria passed\n", passed, outcomes.size());
  fs::remove_all(work);
  return passed == outcomes.size() ? 0 : 1;
}
