#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "apdr/errors.hpp"

namespace apdr {

struct AttributeGroup {
  std::string name;
  std::size_t num_classes = 2;
  std::size_t mask_group = 0;

  bool operator==(const AttributeGroup&) const = default;
};

// N attribute groups sharing K attention masks. Attributes assigned the same
// mask group share one detector but keep separate feature heads.
struct AttributeSchema {
  std::vector<AttributeGroup> groups;
  std::vector<std::string> mask_groups;

  std::size_t num_attributes() const { return groups.size(); }
  std::size_t num_mask_groups() const { return mask_groups.size(); }

  std::vector<std::size_t> attributes_of_mask(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i].mask_group == k) out.push_back(i);
    return out;
  }

  void validate() const {
    if (groups.empty()) throw ConfigError("attribute schema has no groups");
    if (mask_groups.empty()) throw ConfigError("attribute schema has no mask groups");
    std::set<std::string> names;
    std::vector<bool> used(mask_groups.size(), false);
    for (const auto& g : groups) {
      if (!names.insert(g.name).second) throw ConfigError("duplicate attribute name '" + g.name + "'");
      if (g.num_classes < 2) throw ConfigError("attribute '" + g.name + "' needs at least 2 classes");
      if (g.mask_group >= mask_groups.size()) {
        throw ConfigError("attribute '" + g.name + "' references mask group " + std::to_string(g.mask_group) +
                          " but only " + std::to_string(mask_groups.size()) + " exist");
      }
      used[g.mask_group] = true;
    }
    std::set<std::string> mnames(mask_groups.begin(), mask_groups.end());
    if (mnames.size() != mask_groups.size()) throw ConfigError("duplicate mask group names");
    for (std::size_t k = 0; k < used.size(); ++k) {
      if (!used[k]) throw ConfigError("mask group '" + mask_groups[k] + "' has no attribute");
    }
  }

  // Same attributes, all sharing one mask.
  AttributeSchema single_mask() const {
    AttributeSchema s = *this;
    s.mask_groups = {"whole-body"};
    for (auto& g : s.groups) g.mask_group = 0;
    return s;
  }

  // Same attributes, one mask each.
  AttributeSchema mask_per_attribute() const {
    AttributeSchema s = *this;
    s.mask_groups.clear();
    for (std::size_t i = 0; i < s.groups.size(); ++i) {
      s.mask_groups.push_back(s.groups[i].name);
      s.groups[i].mask_group = i;
    }
    return s;
  }

  bool operator==(const AttributeSchema&) const = default;
};

// Ten attribute groups on eight masks: two head attributes and two upper-body
// attributes share a mask, the rest have one each.
inline AttributeSchema default_schema() {
  AttributeSchema s;
  s.mask_groups = {"head", "upper", "lower", "feet", "backpack", "bag", "handbag", "gender-zone"};
  s.groups = {
      {"hair", 2, 0},        {"hat", 2, 0},    {"upper_color", 4, 1}, {"sleeve", 2, 1}, {"lower_color", 4, 2},
      {"shoes", 3, 3},       {"backpack", 2, 4}, {"bag", 2, 5},       {"handbag", 2, 6}, {"gender", 2, 7},
  };
  return s;
}

inline void to_json(nlohmann::json& j, const AttributeGroup& g) {
  j = {{"name", g.name}, {"num_classes", g.num_classes}, {"mask_group", g.mask_group}};
}
inline void from_json(const nlohmann::json& j, AttributeGroup& g) {
  j.at("name").get_to(g.name);
  j.at("num_classes").get_to(g.num_classes);
  j.at("mask_group").get_to(g.mask_group);
}
inline void to_json(nlohmann::json& j, const AttributeSchema& s) {
  j = {{"groups", s.groups}, {"mask_groups", s.mask_groups}};
}
inline void from_json(const nlohmann::json& j, AttributeSchema& s) {
  j.at("groups").get_to(s.groups);
  j.at("mask_groups").get_to(s.mask_groups);
}

}  // namespace apdr
