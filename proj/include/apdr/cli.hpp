#pragma once

// The `apdr` command line: generate, train, eval, gradcheck, inspect-masks.
// Exit codes: 0 success, 2 usage or precondition, 3 numerical failure,
// 1 anything else (I/O).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "apdr/checkpoint.hpp"
#include "apdr/config.hpp"
#include "apdr/dataset.hpp"
#include "apdr/errors.hpp"
#include "apdr/evaluation.hpp"
#include "apdr/gradcheck.hpp"
#include "apdr/model_check.hpp"
#include "apdr/training.hpp"

namespace apdr {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

namespace cli {

inline fs::path require_path(const std::string& value, const char* flag, const char* what) {
  if (value.empty()) throw InputError(std::string("missing ") + flag + " (" + what + ")");
  return value;
}

inline DatasetManifest open_dataset(const RunConfig& c) {
  fs::path p = require_path(c.paths.data, "--data", "dataset directory");
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::exists(p)) throw InputError("no dataset at " + p.string());
  return load_manifest(p);
}

inline std::string checkpoint_name(Stage s, std::size_t epoch) {
  return "ckpt_stage" + std::to_string(int(s)) + "_e" + std::to_string(epoch) + ".bin";
}

// Highest-epoch checkpoint of `stage` in `dir`, or empty.
inline fs::path latest_checkpoint(const fs::path& dir, Stage stage) {
  const std::regex pat("ckpt_stage" + std::to_string(int(stage)) + "_e([0-9]+)\\.bin");
  fs::path best;
  long best_epoch = -1;
  if (!fs::is_directory(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pat) && std::stol(m[1]) > best_epoch) best_epoch = std::stol(m[1]), best = e.path();
  }
  return best;
}

inline std::vector<std::size_t> test_indices(const DatasetManifest& m) {
  auto idx = m.indices(Split::query);
  const auto g = m.indices(Split::gallery);
  idx.insert(idx.end(), g.begin(), g.end());
  return idx;
}

// Mask IoU needs ground truth for every test sample and a matching K.
inline std::optional<std::string> mask_iou_unavailable(const Model<float>& m, const DatasetManifest& d) {
  for (std::size_t i : test_indices(d))
    if (!d.samples[i].mask) return "dataset has no ground-truth masks";
  if (m.config.num_masks() != d.schema.num_mask_groups()) {
    return "model has " + std::to_string(m.config.num_masks()) + " masks, ground truth has " +
           std::to_string(d.schema.num_mask_groups());
  }
  return std::nullopt;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---------------------------------------------------------------------------

inline int cmd_generate(const RunConfig& c, std::ostream& out) {
  const fs::path dir = require_path(c.paths.out, "--out", "output directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!c.force) throw InputError("output directory " + dir.string() + " is not empty (pass --force to overwrite)");
    for (const char* name : {"images", "masks", "manifest.json", "config.json"}) fs::remove_all(dir / name);
  }
  const auto m = generate_attrgrid(c.generator, c.seed, dir);
  write_config(c, dir);
  out << "generated " << m.samples.size() << " samples: " << m.train_identities().size() << " train identities, "
      << m.indices(Split::query).size() << " query / " << m.indices(Split::gallery).size() << " gallery images in "
      << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const DatasetManifest manifest = open_dataset(c);
  const fs::path dir = require_path(c.paths.out, "--out", "run directory");
  const TrainConfig tc = c.train_config();
  const bool want1 = c.stage != "2", want2 = c.stage != "1";

  TrainState state;
  bool fresh = false;
  if (!c.paths.resume.empty()) {
    state = load_checkpoint(c.paths.resume).state;
    out << "resuming from " << c.paths.resume << " (stage " << int(state.stage) << ", epoch " << state.epoch << ")\n";
  } else if (!want1) {
    const fs::path ck = latest_checkpoint(dir, Stage::one);
    if (ck.empty()) {
      throw InputError("train --stage 2 needs a stage-1 checkpoint; none found in " + dir.string() +
                       " (run --stage 1 first or pass --resume)");
    }
    state = load_checkpoint(ck).state;
    if (!state.stage1_complete) throw InputError("stage-1 checkpoint " + ck.string() + " is not from a finished stage 1");
    out << "stage 2 starts from " << ck.string() << "\n";
  } else {
    state = make_train_state(c.model_config(manifest), tc);
    fresh = true;
  }
  if (want2 && !want1 && !state.stage1_complete) throw InputError("stage 2 needs a completed stage-1 model");

  fs::create_directories(dir);
  write_config(c, dir);
  const fs::path log_path = dir / "log.csv";
  const bool new_log = fresh || !fs::exists(log_path);
  std::ofstream log(log_path, new_log ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  if (new_log) log << csv_header() << "\n";

  ImageStore store(manifest);
  auto run = [&](Stage stage, std::size_t end) {
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r) { log << csv_row(r) << "\n"; };
    hooks.on_epoch = [&](const TrainState& s, const LossBreakdown& l) {
      log.flush();
      out << "stage " << int(stage) << " epoch " << s.epoch << "/" << end << "  total " << fmt("%.4f", l.total)
          << "  id " << fmt("%.4f", l.id) << "  tri " << fmt("%.4f", l.triplet) << "  attr " << fmt("%.4f", l.attribute)
          << "\n";
      if (s.epoch % tc.checkpoint_every == 0 || s.epoch == end) save_checkpoint(dir / checkpoint_name(stage, s.epoch), s, tc);
    };
    try {
      train_stage(state, tc, store, stage, end, hooks);
    } catch (const NumericalError&) {
      log.flush();
      throw;
    }
  };
  if (want1 && !state.stage1_complete && state.stage == Stage::one) run(Stage::one, tc.epochs_stage1);
  else if (want1 && fresh == false && c.paths.resume.empty()) err << "stage 1 already complete; skipping\n";
  if (want2) run(Stage::two, tc.epochs_stage2);
  out << "done; outputs in " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_eval(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const DatasetManifest manifest = open_dataset(c);
  const fs::path ck_path = require_path(c.paths.checkpoint, "--checkpoint", "trained model");
  const fs::path dir = require_path(c.paths.out, "--out", "report directory");
  Checkpoint ck = load_checkpoint(ck_path);
  Model<float>& model = ck.state.model;
  const bool stage2 = ck.state.stage == Stage::two;

  const Branch branch = c.eval.branch == "auto" ? (stage2 ? Branch::full : Branch::global) : parse_branch(c.eval.branch);
  if (branch != Branch::global && !stage2) err << "warning: checkpoint has not been through stage 2; part features are untrained\n";

  ImageStore store(manifest);
  const auto q = extract_embeddings(model, store, manifest.indices(Split::query), branch);
  const auto g = extract_embeddings(model, store, manifest.indices(Split::gallery), branch);
  const Eigen::MatrixXd q_g = distance_matrix(q, g);

  EvalReport report;
  report.metrics = cmc_map(q_g, q, g);
  report.checkpoint = ck_path.string();
  report.branch = branch_name(branch);
  report.seed = c.seed;
  if (c.eval.rerank) {
    const RerankConfig rc = scaled_rerank_config(c.rerank_config(), g.size());
    const Eigen::MatrixXd rr = k_reciprocal_rerank(q_g, distance_matrix(q, q), distance_matrix(g, g), rc);
    report.reranked = cmc_map(rr, q, g);
  }
  if (auto why = mask_iou_unavailable(model, manifest)) {
    err << "warning: " << *why << "; mask IoU skipped\n";
  } else {
    const MaskIoU mi = evaluate_masks(model, store, test_indices(manifest), c.eval.mask_threshold);
    report.mask_iou = mi.iou;
    report.mask_iou_baseline = mi.baseline;
  }
  emit_report(report, dir);
  write_config(c, dir);

  auto line = [&](const char* tag, const RetrievalMetrics& r) {
    auto at = [&](std::size_t k) { return r.cmc.empty() ? 0.0 : r.cmc[std::min(k, r.cmc.size()) - 1]; };
    out << tag << "rank-1 " << fmt("%.4f", at(1)) << "  rank-5 " << fmt("%.4f", at(5)) << "  rank-10 "
        << fmt("%.4f", at(10)) << "  mAP " << fmt("%.4f", r.map) << "  (" << r.num_queries << " queries";
    if (r.num_excluded) out << ", " << r.num_excluded << " without a valid match";
    out << ")\n";
  };
  out << "branch " << report.branch << "\n";
  line("", report.metrics);
  if (report.reranked) line("re-ranked: ", *report.reranked);
  for (std::size_t k = 0; k < report.mask_iou.size(); ++k) {
    out << "mask " << k << " (" << model.config.schema.mask_groups[k] << ") IoU " << fmt("%.4f", report.mask_iou[k])
        << "  uniform baseline " << fmt("%.4f", report.mask_iou_baseline[k]) << "\n";
  }
  return kExitOk;
}

inline int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  std::vector<std::uint64_t> seeds;
  if (c.source_of("seed") != Source::default_value) seeds = {c.seed};
  else
    for (std::uint64_t s = 1; s <= c.gradcheck.seeds; ++s) seeds.push_back(s);
  const bool model_only = c.gradcheck.op == "end_to_end";
  const bool all = c.gradcheck.op.empty();
  if (!all && !model_only) find_op_check(c.gradcheck.op);

  std::string csv = "op,seed,rel_error,tolerance,status\n";
  bool ok = true;
  auto record = [&](const std::string& name, std::uint64_t seed, double e, double tol) {
    const bool pass = e < tol;
    ok = ok && pass;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-24s %4llu  %.3e  %s\n", name.c_str(), (unsigned long long)seed, e,
                  pass ? "ok" : "FAIL");
    out << buf;
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.6e,%.1e,%s\n", name.c_str(), (unsigned long long)seed, e, tol,
                  pass ? "ok" : "fail");
    csv += buf;
  };
  out << "op                       seed  rel_error  status\n";
  for (const auto& op : registered_ops()) {
    if (!all && op.name != c.gradcheck.op) continue;
    for (auto s : seeds) record(op.name, s, grad_check(op.name, {}, s), c.gradcheck.op_tolerance);
  }
  if (all || model_only) {
    for (auto s : seeds) record("end_to_end", s, model_grad_check(s).worst, c.gradcheck.model_tolerance);
  }
  if (!c.paths.out.empty()) {
    write_config(c, c.paths.out);
    write_text(fs::path(c.paths.out) / "gradcheck.csv", csv);
  }
  out << (ok ? "all checks passed\n" : "some checks exceeded tolerance\n");
  return ok ? kExitOk : kExitNumerical;
}

inline int cmd_inspect_masks(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const DatasetManifest manifest = open_dataset(c);
  const fs::path ck_path = require_path(c.paths.checkpoint, "--checkpoint", "trained model");
  const fs::path dir = require_path(c.paths.out, "--out", "output directory");
  Checkpoint ck = load_checkpoint(ck_path);
  Model<float>& model = ck.state.model;
  if (model.config.geometry != manifest.geometry) throw ConfigError("checkpoint image size does not match the dataset");

  ImageStore store(manifest);
  auto probes = manifest.indices(Split::query);
  if (probes.empty()) probes = manifest.indices(Split::train);
  probes.resize(std::min(probes.size(), c.eval.probes));
  const auto files = dump_masks(model, store, probes, dir / "masks");
  write_config(c, dir);
  out << "wrote " << files.size() << " mask images (" << model.config.num_masks() << " per probe) to "
      << (dir / "masks").string() << "\n";

  if (auto why = mask_iou_unavailable(model, manifest)) {
    err << "warning: " << *why << "; IoU skipped\n";
    return kExitOk;
  }
  const MaskIoU mi = evaluate_masks(model, store, test_indices(manifest), c.eval.mask_threshold);
  nlohmann::json summary = {{"iou", mi.iou}, {"baseline", mi.baseline}, {"samples", mi.samples},
                            {"threshold", c.eval.mask_threshold}, {"checkpoint", ck_path.string()}};
  write_text(dir / "mask_iou.json", summary.dump(2) + "\n");
  out << "mask IoU over " << mi.samples << " test images (threshold " << c.eval.mask_threshold << ")\n";
  for (std::size_t k = 0; k < mi.iou.size(); ++k) {
    out << "  " << k << " " << model.config.schema.mask_groups[k] << ": IoU " << fmt("%.4f", mi.iou[k])
        << "  baseline " << fmt("%.4f", mi.baseline[k]) << "  ratio " << fmt("%.2f", mi.iou[k] / mi.baseline[k])
        << "\n";
  }
  return kExitOk;
}

}  // namespace cli

// Parses argv, resolves the RunConfig and runs one command.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"APDR: attribute-part detection and refinement for person re-identification"};
  app.require_subcommand(1);
  app.fallthrough();

  std::vector<FlagValue> flags;
  auto set = [&flags](const std::string& key) {
    return [&flags, key](const std::string& v) { flags.push_back({key, v}); };
  };
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (e.g. a config.json written by an earlier run)");
  app.add_option_function<std::string>("--out", set("paths.out"), "output directory");
  app.add_flag_callback("--force", [&] { flags.push_back({"force", "true"}); }, "overwrite an existing dataset");
  auto* all_keys = app.add_option_group("settings", "any config field, e.g. --train.lambda 0.2");
  for (const auto& key : config_keys()) {
    if (key == "force" || key == "paths.out") continue;
    all_keys->add_option_function<std::string>("--" + key, set(key));
  }

  auto* gen = app.add_subcommand("generate", "render a synthetic AttrGrid dataset");
  gen->add_option_function<std::string>("--identities", set("generator.num_identities"), "total identities");
  gen->add_option_function<std::string>("--test-identities", set("generator.num_test_identities"), "held-out identities");
  gen->add_option_function<std::string>("--samples-per-id", set("generator.samples_per_identity"));
  gen->add_option_function<std::string>("--cameras", set("generator.num_cameras"));
  gen->add_option_function<std::string>("--noise", set("generator.noise"));

  auto* train = app.add_subcommand("train", "two-stage training");
  train->add_option_function<std::string>("--data", set("paths.data"), "dataset directory");
  train->add_option_function<std::string>("--resume", set("paths.resume"), "continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "retrieval metrics for a checkpoint");
  eval->add_option_function<std::string>("--data", set("paths.data"), "dataset directory");
  eval->add_option_function<std::string>("--checkpoint", set("paths.checkpoint"));
  eval->add_option_function<std::string>("--branch", set("eval.branch"), "full, global, part or refined-part");
  eval->add_flag_callback("--rerank", [&] { flags.push_back({"eval.rerank", "true"}); }, "add k-reciprocal re-ranking");
  eval->add_option_function<std::string>(
          "--baseline", [&](const std::string&) { flags.push_back({"eval.branch", "global"}); }, "global-only: score g alone")
      ->check(CLI::IsMember({"global-only"}));

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every op and the tiny model");
  grad->add_option_function<std::string>("--op", set("gradcheck.op"), "single op name, or end_to_end");

  auto* inspect = app.add_subcommand("inspect-masks", "dump learned masks and score them against ground truth");
  inspect->add_option_function<std::string>("--data", set("paths.data"), "dataset directory");
  inspect->add_option_function<std::string>("--checkpoint", set("paths.checkpoint"));
  inspect->add_option_function<std::string>("--probes", set("eval.probes"), "number of probe images to dump");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    nlohmann::json file;
    if (!config_path.empty()) file = read_config_file(config_path);
    const RunConfig c = resolve_config(sub->get_name(), config_path.empty() ? nullptr : &file, flags);
    if (sub == gen) return cli::cmd_generate(c, out);
    if (sub == train) return cli::cmd_train(c, out, err);
    if (sub == eval) return cli::cmd_eval(c, out, err);
    if (sub == grad) return cli::cmd_gradcheck(c, out);
    return cli::cmd_inspect_masks(c, out, err);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace apdr
