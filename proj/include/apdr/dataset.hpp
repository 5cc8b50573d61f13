#pragma once

// Synthetic pedestrian-surrogate data ("AttrGrid"), manifest I/O and the
// identity-balanced P x K batch sampler.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "apdr/errors.hpp"
#include "apdr/image_io.hpp"
#include "apdr/random.hpp"
#include "apdr/schema.hpp"
#include "apdr/tensor.hpp"

namespace apdr {

namespace fs = std::filesystem;

struct ImageGeometry {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 32;
  bool operator==(const ImageGeometry&) const = default;
};

enum class Split { train, query, gallery };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  throw LoadError("unknown split '" + s + "'");
}

struct SampleRecord {
  std::string image;               // relative to the manifest directory
  std::optional<std::string> mask;  // K stacked H x W maps, 0/255
  int identity = 0;
  int camera = 0;
  std::vector<std::size_t> labels;  // one class index per schema group
  Split split = Split::train;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  AttributeSchema schema;
  ImageGeometry geometry;
  std::uint64_t seed = 0;
  std::vector<SampleRecord> samples;
  fs::path root;  // directory holding the manifest; not serialized

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == s) out.push_back(i);
    return out;
  }

  // Train identities in ascending order; position = classifier index.
  std::vector<int> train_identities() const {
    std::set<int> ids;
    for (const auto& s : samples)
      if (s.split == Split::train) ids.insert(s.identity);
    return {ids.begin(), ids.end()};
  }

  bool operator==(const DatasetManifest& o) const {
    return schema == o.schema && geometry == o.geometry && seed == o.seed && samples == o.samples;
  }
};

// Decoded sample. Pixels are C x H x W in [0, 1]; gt_masks is K x H x W in {0, 1}.
struct ImageSample {
  Tensor<float> pixels;
  int identity = 0;
  int camera = 0;
  std::vector<std::size_t> attr_labels;
  std::optional<Tensor<float>> gt_masks;
};

struct Batch {
  Tensor<float> images;  // N x C x H x W
  std::vector<int> identities;
  std::vector<int> cameras;
  std::vector<std::vector<std::size_t>> attr_labels;  // N x groups
  std::vector<std::size_t> sample_indices;

  std::size_t size() const { return identities.size(); }
};

// ---------------------------------------------------------------------------
// Generator

struct GeneratorConfig {
  std::size_t num_identities = 75;
  std::size_t num_test_identities = 25;
  std::size_t samples_per_identity = 8;
  std::size_t num_cameras = 4;
  ImageGeometry geometry;
  AttributeSchema schema = default_schema();
  double noise = 0.5;     // pixel noise level, 0 disables
  double jitter = 1.0;    // camera / translation / brightness jitter, 0 disables
  double texture = 0.08;  // identity-specific texture amplitude, 0 disables
  std::size_t outfits = 25;  // distinct attribute vectors shared among identities; 0: one per identity
  double hue_shift = 0.07;  // palette rotation between attribute groups; 0: one palette for all

  void validate() const {
    schema.validate();
    if (num_identities < 2) throw ConfigError("need at least 2 identities, got " + std::to_string(num_identities));
    if (num_test_identities >= num_identities) throw ConfigError("need at least one train identity");
    if (samples_per_identity < 1) throw ConfigError("need at least one sample per identity");
    if (num_cameras < 1) throw ConfigError("need at least one camera");
    if (num_test_identities > 0 && (samples_per_identity < 2 || num_cameras < 2)) {
      throw ConfigError("test identities need >= 2 samples and >= 2 cameras for cross-camera queries");
    }
    if (geometry.channels != 3) throw ConfigError("generator renders 3-channel images");
    if (geometry.height < 16 || geometry.width < 8) throw ConfigError("generator needs images of at least 16x8");
    if (schema.num_mask_groups() > 8) throw ConfigError("generator supports at most 8 body zones");
    if (noise < 0 || jitter < 0 || jitter > 1 || texture < 0) throw ConfigError("noise/jitter/texture out of range");
    if (outfits > 0 && outfits < num_identities && texture == 0.0)
      throw ConfigError("identities can share outfits only with identity texture enabled");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"num_identities", c.num_identities},
       {"num_test_identities", c.num_test_identities},
       {"samples_per_identity", c.samples_per_identity},
       {"num_cameras", c.num_cameras},
       {"channels", c.geometry.channels},
       {"height", c.geometry.height},
       {"width", c.geometry.width},
       {"schema", c.schema},
       {"noise", c.noise},
       {"jitter", c.jitter},
       {"texture", c.texture},
       {"outfits", c.outfits},
       {"hue_shift", c.hue_shift}};
}
inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c.num_identities = j.value("num_identities", d.num_identities);
  c.num_test_identities = j.value("num_test_identities", d.num_test_identities);
  c.samples_per_identity = j.value("samples_per_identity", d.samples_per_identity);
  c.num_cameras = j.value("num_cameras", d.num_cameras);
  c.geometry = {j.value("channels", d.geometry.channels), j.value("height", d.geometry.height),
                j.value("width", d.geometry.width)};
  c.schema = j.contains("schema") ? j.at("schema").get<AttributeSchema>() : d.schema;
  c.noise = j.value("noise", d.noise);
  c.jitter = j.value("jitter", d.jitter);
  c.texture = j.value("texture", d.texture);
  c.outfits = j.value("outfits", d.outfits);
  c.hue_shift = j.value("hue_shift", d.hue_shift);
}

// Rectangle in fractions of the image: rows [y0, y1), cols [x0, x1).
struct Zone {
  double y0, y1, x0, x1;
};

// Canonical body zones, pairwise disjoint.
inline Zone body_zone(const std::string& name, std::size_t index) {
  static const std::vector<std::pair<std::string, Zone>> table = {
      {"head", {0.03, 0.18, 0.34, 0.66}},    {"upper", {0.19, 0.48, 0.25, 0.75}},
      {"lower", {0.49, 0.80, 0.28, 0.72}},   {"feet", {0.81, 0.93, 0.25, 0.75}},
      {"backpack", {0.22, 0.42, 0.78, 0.97}}, {"bag", {0.44, 0.62, 0.03, 0.22}},
      {"handbag", {0.64, 0.78, 0.78, 0.97}},  {"gender-zone", {0.22, 0.40, 0.03, 0.22}},
  };
  for (const auto& [n, z] : table)
    if (n == name) return z;
  return table.at(index).second;
}

namespace detail {

struct PixelRect {
  long r0, r1, c0, c1;
};

inline PixelRect to_pixels(const Zone& z, std::size_t h, std::size_t w) {
  return {long(std::lround(z.y0 * double(h))), long(std::lround(z.y1 * double(h))), long(std::lround(z.x0 * double(w))),
          long(std::lround(z.x1 * double(w)))};
}

inline std::array<double, 3> hsv(double hue, double sat, double val) {
  hue = hue - std::floor(hue);
  const double h6 = hue * 6.0;
  const int sector = int(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (sector) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

inline std::array<double, 3> class_color(std::size_t group, std::size_t value, std::size_t num_classes, double shift) {
  return hsv(double(value) / double(num_classes) + shift * double(group), 0.85, value % 2 == 0 ? 0.92 : 0.55);
}

inline std::uint8_t quantize(double v) { return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace detail

// Renders every sample, writes images/, masks/ and manifest.json under `out`,
// and returns the manifest. Output bytes depend only on (config, seed).
inline DatasetManifest generate_attrgrid(const GeneratorConfig& cfg, std::uint64_t seed, const fs::path& out) {
  cfg.validate();
  const std::size_t h = cfg.geometry.height, w = cfg.geometry.width;
  const std::size_t n_groups = cfg.schema.num_attributes(), k_masks = cfg.schema.num_mask_groups();
  Rng rng(seed);

  // Identity profiles: attribute vector + low-frequency texture field.
  std::size_t combos = 1;
  for (const auto& g : cfg.schema.groups) combos = std::min<std::size_t>(combos * g.num_classes, 1u << 30);
  if (cfg.texture == 0.0 && combos < cfg.num_identities) {
    throw ConfigError("schema allows only " + std::to_string(combos) +
                      " distinct attribute vectors; enable texture to share vectors across identities");
  }
  std::vector<std::vector<std::size_t>> attrs;
  std::set<std::vector<std::size_t>> seen;
  const std::size_t n_vectors = cfg.outfits > 0 ? std::min(cfg.outfits, cfg.num_identities) : cfg.num_identities;
  for (std::size_t id = 0; id < n_vectors; ++id) {
    std::vector<std::size_t> v(n_groups);
    for (int attempt = 0;; ++attempt) {
      for (std::size_t gi = 0; gi < n_groups; ++gi) v[gi] = uniform_index(rng, cfg.schema.groups[gi].num_classes);
      if (!seen.count(v) || (cfg.texture > 0.0 && attempt > 64)) break;
    }
    seen.insert(v);
    attrs.push_back(v);
  }
  // Every outfit is worn at least once, the rest are drawn at random.
  for (std::size_t id = n_vectors; id < cfg.num_identities; ++id) attrs.push_back(attrs[uniform_index(rng, n_vectors)]);
  const std::size_t th = (h + 3) / 4, tw = (w + 3) / 4;
  std::vector<std::vector<double>> textures(cfg.num_identities, std::vector<double>(th * tw * 3));
  for (auto& t : textures)
    for (auto& v : t) v = cfg.texture * uniform(rng, -1.0, 1.0);

  std::vector<detail::PixelRect> zones;
  for (std::size_t k = 0; k < k_masks; ++k) zones.push_back(detail::to_pixels(body_zone(cfg.schema.mask_groups[k], k), h, w));
  const auto body = detail::to_pixels({0.03, 0.93, 0.25, 0.75}, h, w);

  fs::create_directories(out / "images");
  fs::create_directories(out / "masks");

  DatasetManifest manifest;
  manifest.schema = cfg.schema;
  manifest.geometry = cfg.geometry;
  manifest.seed = seed;
  manifest.root = out;

  const std::size_t n_train = cfg.num_identities - cfg.num_test_identities;
  const std::size_t n_query_per_id = cfg.samples_per_identity >= 4 ? 2 : 1;
  std::size_t serial = 0;
  for (std::size_t id = 0; id < cfg.num_identities; ++id) {
    const bool is_test = id >= n_train;
    for (std::size_t s = 0; s < cfg.samples_per_identity; ++s, ++serial) {
      const std::size_t cam = (id + s) % cfg.num_cameras;
      const double cb_y = std::cos(1.3 * double(cam) + 0.4), cb_x = std::sin(2.3 * double(cam) + 1.1);
      const long dy = std::lround(0.1 * double(h) * cfg.jitter * (0.5 * cb_y + 0.5 * uniform(rng, -1, 1)));
      const long dx = std::lround(0.1 * double(w) * cfg.jitter * (0.5 * cb_x + 0.5 * uniform(rng, -1, 1)));
      const double cam_offset =
          cfg.num_cameras > 1 ? 0.06 * cfg.jitter * (2.0 * double(cam) / double(cfg.num_cameras - 1) - 1.0) : 0.0;
      const double brightness = cam_offset + 0.04 * cfg.jitter * uniform(rng, -1, 1);
      std::array<double, 3> gain;
      for (int ch = 0; ch < 3; ++ch) gain[ch] = 1.0 + 0.1 * cfg.jitter * std::sin(2.1 * double(cam) + 1.7 * ch);
      const double bg = 0.45 + 0.1 * cfg.jitter * uniform(rng, -1, 1);

      // Canonical (unshifted) rendering.
      std::vector<double> canvas(h * w * 3, bg);
      std::vector<std::uint8_t> masks(k_masks * h * w, 0);
      auto paint = [&](long r, long c, const std::array<double, 3>& col) {
        for (int ch = 0; ch < 3; ++ch) canvas[(r * long(w) + c) * 3 + ch] = col[ch];
      };
      for (long r = body.r0; r < body.r1; ++r)
        for (long c = body.c0; c < body.c1; ++c) paint(r, c, {0.80, 0.66, 0.56});
      for (std::size_t k = 0; k < k_masks; ++k) {
        const auto& z = zones[k];
        const auto members = cfg.schema.attributes_of_mask(k);
        const long rows = z.r1 - z.r0;
        for (std::size_t j = 0; j < members.size(); ++j) {
          const std::size_t gi = members[j];
          const std::size_t val = attrs[id][gi];
          const auto col = detail::class_color(gi, val, cfg.schema.groups[gi].num_classes, cfg.hue_shift);
          const long b0 = z.r0 + rows * long(j) / long(members.size());
          const long b1 = z.r0 + rows * long(j + 1) / long(members.size());
          for (long r = b0; r < b1; ++r)
            for (long c = z.c0; c < z.c1; ++c) {
              auto px = col;
              if (val % 2 == 1 && (r - b0) % 2 == 1)
                for (auto& v : px) v *= 0.8;  // striped texture for odd classes
              paint(r, c, px);
            }
        }
        for (long r = z.r0; r < z.r1; ++r)
          for (long c = z.c0; c < z.c1; ++c) masks[(k * h + std::size_t(r)) * w + std::size_t(c)] = 255;
      }
      // identity texture over the figure (body and zones)
      for (long r = 0; r < long(h); ++r)
        for (long c = 0; c < long(w); ++c) {
          bool on_figure = r >= body.r0 && r < body.r1 && c >= body.c0 && c < body.c1;
          for (std::size_t k = 0; k < k_masks && !on_figure; ++k) on_figure = masks[(k * h + r) * w + c] != 0;
          if (!on_figure) continue;
          for (int ch = 0; ch < 3; ++ch)
            canvas[(r * long(w) + c) * 3 + ch] += textures[id][((r / 4) * long(tw) + c / 4) * 3 + ch];
        }

      Image8 img{w, h, 3, std::vector<std::uint8_t>(h * w * 3)};
      Image8 mimg{w, h * k_masks, 1, std::vector<std::uint8_t>(k_masks * h * w, 0)};
      for (long r = 0; r < long(h); ++r)
        for (long c = 0; c < long(w); ++c) {
          const long sr = r - dy, sc = c - dx;
          const bool inside = sr >= 0 && sr < long(h) && sc >= 0 && sc < long(w);
          for (int ch = 0; ch < 3; ++ch) {
            double v = inside ? canvas[(sr * long(w) + sc) * 3 + ch] : bg;
            v = v * gain[ch] + brightness;
            if (cfg.noise > 0) v += 0.08 * cfg.noise * normal(rng);
            img.pixels[(r * long(w) + c) * 3 + ch] = detail::quantize(v);
          }
          if (inside)
            for (std::size_t k = 0; k < k_masks; ++k)
              mimg.pixels[(k * h + r) * w + c] = masks[(k * h + sr) * w + sc];
        }

      char name[32];
      std::snprintf(name, sizeof(name), "%06zu", serial);
      SampleRecord rec;
      rec.image = std::string("images/") + name + ".ppm";
      rec.mask = std::string("masks/") + name + ".pgm";
      rec.identity = int(id);
      rec.camera = int(cam);
      rec.labels = attrs[id];
      rec.split = !is_test ? Split::train : (s < n_query_per_id ? Split::query : Split::gallery);
      write_pnm(out / rec.image, img);
      write_pnm(out / *rec.mask, mimg);
      manifest.samples.push_back(std::move(rec));
    }
  }

  nlohmann::json j;
  j["format"] = "apdr-manifest";
  j["version"] = 1;
  j["seed"] = seed;
  j["generator"] = cfg;
  j["geometry"] = {{"channels", cfg.geometry.channels}, {"height", h}, {"width", w}};
  j["schema"] = manifest.schema;
  j["samples"] = nlohmann::json::array();
  for (const auto& r : manifest.samples) {
    j["samples"].push_back({{"image", r.image},
                            {"mask", *r.mask},
                            {"identity", r.identity},
                            {"camera", r.camera},
                            {"labels", r.labels},
                            {"split", split_name(r.split)}});
  }
  std::ofstream(out / "manifest.json") << j.dump(1) << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// Manifest loading

inline void validate_manifest(const DatasetManifest& m) {
  try {
    m.schema.validate();
  } catch (const ConfigError& e) {
    throw LoadError(std::string("invalid schema: ") + e.what());
  }
  std::set<int> train_ids, query_ids, gallery_ids;
  for (const auto& s : m.samples) {
    if (s.identity < 0 || s.camera < 0) throw LoadError("negative identity or camera for " + s.image);
    if (s.labels.size() != m.schema.num_attributes()) {
      throw LoadError(s.image + ": expected " + std::to_string(m.schema.num_attributes()) + " attribute labels, got " +
                      std::to_string(s.labels.size()));
    }
    for (std::size_t g = 0; g < s.labels.size(); ++g) {
      if (s.labels[g] >= m.schema.groups[g].num_classes) {
        throw LoadError(s.image + ": label " + std::to_string(s.labels[g]) + " out of range for attribute group '" +
                        m.schema.groups[g].name + "' (" + std::to_string(m.schema.groups[g].num_classes) + " classes)");
      }
    }
    (s.split == Split::train ? train_ids : s.split == Split::query ? query_ids : gallery_ids).insert(s.identity);
    if (!fs::exists(m.root / s.image)) throw LoadError("missing image file " + (m.root / s.image).string());
    if (s.mask && !fs::exists(m.root / *s.mask)) throw LoadError("missing mask file " + (m.root / *s.mask).string());
  }
  for (int id : train_ids) {
    if (query_ids.count(id) || gallery_ids.count(id)) {
      throw LoadError("split violation: train identity " + std::to_string(id) + " also appears in query/gallery");
    }
  }
  for (int id : query_ids) {
    if (!gallery_ids.count(id)) {
      throw LoadError("split violation: query identity " + std::to_string(id) + " has no gallery samples");
    }
  }
}

inline DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing manifest file " + path.string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    j.at("schema").get_to(m.schema);
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& geo = j.at("geometry");
    m.geometry = {geo.at("channels").get<std::size_t>(), geo.at("height").get<std::size_t>(),
                  geo.at("width").get<std::size_t>()};
    for (const auto& r : j.at("samples")) {
      SampleRecord s;
      r.at("image").get_to(s.image);
      if (r.contains("mask") && !r.at("mask").is_null()) s.mask = r.at("mask").get<std::string>();
      r.at("identity").get_to(s.identity);
      r.at("camera").get_to(s.camera);
      r.at("labels").get_to(s.labels);
      s.split = parse_split(r.at("split").get<std::string>());
      m.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + path.string() + ": " + e.what());
  }
  m.root = path.parent_path();
  validate_manifest(m);
  return m;
}

// Decodes images on first access and keeps them.
class ImageStore {
 public:
  explicit ImageStore(const DatasetManifest& m) : manifest_(&m), cache_(m.samples.size()) {}

  const DatasetManifest& manifest() const { return *manifest_; }

  const ImageSample& get(std::size_t i) {
    auto& slot = cache_.at(i);
    if (!slot) slot = decode(i);
    return *slot;
  }

  Batch batch(const std::vector<std::size_t>& indices) {
    const auto& geo = manifest_->geometry;
    const std::size_t per = geo.channels * geo.height * geo.width;
    Batch b;
    b.images = Tensor<float>({indices.size(), geo.channels, geo.height, geo.width});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto& s = get(indices[k]);
      std::copy(s.pixels.data.begin(), s.pixels.data.end(), b.images.data.begin() + long(k * per));
      b.identities.push_back(s.identity);
      b.cameras.push_back(s.camera);
      b.attr_labels.push_back(s.attr_labels);
    }
    b.sample_indices = indices;
    return b;
  }

 private:
  ImageSample decode(std::size_t i) const {
    const auto& rec = manifest_->samples[i];
    const auto& geo = manifest_->geometry;
    const Image8 img = read_pnm(manifest_->root / rec.image);
    if (img.channels != geo.channels || img.height != geo.height || img.width != geo.width) {
      throw LoadError("image " + rec.image + " does not match manifest geometry");
    }
    ImageSample s;
    s.pixels = Tensor<float>({geo.channels, geo.height, geo.width});
    for (std::size_t r = 0; r < geo.height; ++r)
      for (std::size_t c = 0; c < geo.width; ++c)
        for (std::size_t ch = 0; ch < geo.channels; ++ch)
          s.pixels[(ch * geo.height + r) * geo.width + c] = float(img.pixels[(r * geo.width + c) * geo.channels + ch]) / 255.f;
    s.identity = rec.identity;
    s.camera = rec.camera;
    s.attr_labels = rec.labels;
    if (rec.mask) {
      const Image8 mk = read_pnm(manifest_->root / *rec.mask);
      const std::size_t k = manifest_->schema.num_mask_groups();
      if (mk.channels != 1 || mk.width != geo.width || mk.height != geo.height * k) {
        throw LoadError("mask file " + *rec.mask + " must hold " + std::to_string(k) + " stacked maps");
      }
      Tensor<float> gm({k, geo.height, geo.width});
      for (std::size_t i2 = 0; i2 < gm.numel(); ++i2) gm[i2] = mk.pixels[i2] >= 128 ? 1.f : 0.f;
      s.gt_masks = std::move(gm);
    }
    return s;
  }

  const DatasetManifest* manifest_;
  std::vector<std::optional<ImageSample>> cache_;
};

// ---------------------------------------------------------------------------
// P x K sampling

// Sample indices of `split` grouped by identity, identities ascending.
inline std::map<int, std::vector<std::size_t>> samples_by_identity(const DatasetManifest& m, Split split = Split::train) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    if (m.samples[i].split == split) out[m.samples[i].identity].push_back(i);
  return out;
}

// P distinct identities x k_per_id samples each (with replacement when an
// identity has fewer samples), in shuffled order.
inline std::vector<std::size_t> pk_sample(const std::map<int, std::vector<std::size_t>>& by_id, std::size_t p,
                                          std::size_t k_per_id, Rng& rng) {
  if (p == 0 || k_per_id == 0) throw InputError("pk_sample needs P >= 1 and K >= 1");
  if (p > by_id.size()) {
    throw InputError("pk_sample: P=" + std::to_string(p) + " exceeds the " + std::to_string(by_id.size()) +
                     " available identities");
  }
  std::vector<const std::vector<std::size_t>*> ids;
  for (const auto& [id, v] : by_id) ids.push_back(&v);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p; ++i) {
    std::swap(ids[i], ids[i + uniform_index(rng, ids.size() - i)]);
    std::vector<std::size_t> pool = *ids[i];
    if (pool.size() >= k_per_id) {
      for (std::size_t j = 0; j < k_per_id; ++j) {
        std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
        out.push_back(pool[j]);
      }
    } else {
      for (std::size_t j = 0; j < k_per_id; ++j) out.push_back(pool[uniform_index(rng, pool.size())]);
    }
  }
  shuffle(out.begin(), out.end(), rng);
  return out;
}

inline std::vector<std::size_t> pk_sample(const DatasetManifest& m, std::size_t p, std::size_t k_per_id, Rng& rng) {
  return pk_sample(samples_by_identity(m), p, k_per_id, rng);
}

}  // namespace apdr
