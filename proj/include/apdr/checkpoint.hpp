#pragma once

// Checkpoint file:
//   "APDRCKPT" | u32 version | u64 header length | JSON header | f32 blob
// All integers and floats little-endian. The header carries the model config,
// train config, epoch/stage, RNG state and a name -> (kind, shape, offset)
// table into the blob.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "apdr/errors.hpp"
#include "apdr/model.hpp"
#include "apdr/random.hpp"
#include "apdr/training.hpp"

namespace apdr {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'A', 'P', 'D', 'R', 'C', 'K', 'P', 'T'};

struct Checkpoint {
  TrainState state;
  TrainConfig train_config;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_le(const std::string& in, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(std::uint8_t(in[off + i])) << (8 * i);
  return v;
}

}  // namespace detail

// Written to a temporary sibling first and renamed into place.
inline void save_checkpoint(const std::filesystem::path& path, const TrainState& s, const TrainConfig& tc) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["model_config"] = s.model.config;
  header["train_config"] = tc;
  header["epoch"] = s.epoch;
  header["stage"] = int(s.stage);
  header["stage1_complete"] = s.stage1_complete;
  header["rng"] = rng_state(s.rng);

  std::string blob;
  std::uint64_t offset = 0;
  auto& table = header["tensors"] = nlohmann::json::array();
  auto emit = [&](const std::string& name, const std::string& kind, const Shape& shape, const Buffer<float>& data) {
    table.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset}});
    for (float f : data) detail::put_u32(blob, std::bit_cast<std::uint32_t>(f));
    offset += data.size();
  };
  for (std::size_t i = 0; i < s.model.params.size(); ++i) {
    const auto& p = s.model.params[i];
    emit(s.model.info[i].name, "param", p.shape, p.data);
    emit(s.model.info[i].name, "velocity", p.shape, s.optimizer.velocity.at(i));
  }
  for (std::size_t i = 0; i < s.model.bn.size(); ++i) {
    const Shape shape{s.model.bn[i].running_mean.size()};
    emit(s.model.bn_names[i], "bn_mean", shape, s.model.bn[i].running_mean);
    emit(s.model.bn_names[i], "bn_var", shape, s.model.bn[i].running_var);
  }
  header["blob_floats"] = offset;

  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, h.size());
  out += h;
  out += blob;

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Parses and validates the whole file before building anything, so a bad file
// never yields a partially restored state.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("missing checkpoint " + path.string());
  const std::string raw{std::istreambuf_iterator<char>(f), {}};
  if (raw.size() < 20 || std::memcmp(raw.data(), kCheckpointMagic, 8) != 0) {
    throw LoadError("not a checkpoint file: " + path.string());
  }
  const auto version = std::uint32_t(detail::get_le(raw, 8, 4));
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t hlen = detail::get_le(raw, 12, 8);
  if (raw.size() < 20 + hlen) throw LoadError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  ModelConfig mc;
  TrainConfig tc;
  try {
    header = nlohmann::json::parse(raw.substr(20, hlen));
    header.at("model_config").get_to(mc);
    header.at("train_config").get_to(tc);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const std::uint64_t n_floats = header.at("blob_floats").get<std::uint64_t>();
  const std::size_t blob_off = 20 + hlen;
  if (raw.size() != blob_off + 4 * n_floats) {
    throw LoadError("truncated checkpoint " + path.string() + ": expected " + std::to_string(blob_off + 4 * n_floats) +
                    " bytes, found " + std::to_string(raw.size()));
  }

  Checkpoint ck;
  ck.train_config = tc;
  try {
    ck.state.model = build_model<float>(mc, 0);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint model config invalid: ") + e.what());
  }
  auto& model = ck.state.model;
  ck.state.optimizer = make_sgd_state(model);
  std::vector<bool> seen_param(model.params.size()), seen_vel(model.params.size()), seen_mean(model.bn.size()),
      seen_var(model.bn.size());

  auto read = [&](std::uint64_t offset, std::size_t count, Buffer<float>& dst) {
    if (offset + count > n_floats) throw LoadError("checkpoint tensor exceeds blob");
    dst.resize(count);
    for (std::size_t i = 0; i < count; ++i)
      dst[i] = std::bit_cast<float>(std::uint32_t(detail::get_le(raw, blob_off + 4 * (offset + i), 4)));
  };
  for (const auto& e : header.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto kind = e.at("kind").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto off = e.at("offset").get<std::uint64_t>();
    if (kind == "param" || kind == "velocity") {
      std::size_t idx;
      try {
        idx = model.find(name);
      } catch (const InputError&) {
        throw LoadError("checkpoint tensor '" + name + "' not part of the configured model");
      }
      if (shape != model.params[idx].shape) {
        throw LoadError("shape mismatch for '" + name + "': file " + shape_str(shape) + ", model " +
                        shape_str(model.params[idx].shape));
      }
      if (kind == "param") {
        read(off, shape_numel(shape), model.params[idx].data);
        seen_param[idx] = true;
      } else {
        read(off, shape_numel(shape), ck.state.optimizer.velocity[idx]);
        seen_vel[idx] = true;
      }
    } else if (kind == "bn_mean" || kind == "bn_var") {
      std::size_t idx = model.bn_names.size();
      for (std::size_t i = 0; i < model.bn_names.size(); ++i)
        if (model.bn_names[i] == name) idx = i;
      if (idx == model.bn_names.size()) throw LoadError("unknown batch-norm state '" + name + "'");
      auto& dst = kind == "bn_mean" ? model.bn[idx].running_mean : model.bn[idx].running_var;
      if (shape != Shape{dst.size()}) throw LoadError("shape mismatch for batch-norm state '" + name + "'");
      read(off, dst.size(), dst);
      (kind == "bn_mean" ? seen_mean : seen_var)[idx] = true;
    } else {
      throw LoadError("unknown checkpoint tensor kind '" + kind + "'");
    }
  }
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (!seen_param[i] || !seen_vel[i]) throw LoadError("checkpoint lacks tensor '" + model.info[i].name + "'");
  }
  for (std::size_t i = 0; i < model.bn.size(); ++i) {
    if (!seen_mean[i] || !seen_var[i]) throw LoadError("checkpoint lacks batch-norm state '" + model.bn_names[i] + "'");
  }
  ck.state.epoch = header.at("epoch").get<std::size_t>();
  ck.state.stage = header.at("stage").get<int>() == 2 ? Stage::two : Stage::one;
  ck.state.stage1_complete = header.at("stage1_complete").get<bool>();
  set_rng_state(ck.state.rng, header.at("rng").get<std::string>());
  return ck;
}

}  // namespace apdr
