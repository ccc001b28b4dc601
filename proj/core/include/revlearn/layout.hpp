#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revlearn/errors.hpp"

namespace revlearn {

// Named contiguous segment of the flat parameter vector. Groups double as
// schedule groups: learning rate and momentum vary per (iteration, group).
struct ParamGroup {
  std::string name;
  int64_t offset = 0;
  int64_t len = 0;
};

struct ParamLayout {
  std::vector<ParamGroup> groups;

  int64_t dim() const;
  int num_groups() const { return static_cast<int>(groups.size()); }
  // Validates that groups are disjoint and cover [0, dim) exactly.
  void validate() const;
  // Group index per element, for the training loop.
  std::vector<int32_t> element_groups() const;
  int group_index(const std::string& name) const;
};

enum class Transform : uint8_t { Identity, Log, Logit };

// Named block of the flat hyperparameter vector theta, with the transform
// that maps meta-space values into the block.
struct HyperBlock {
  std::string name;
  int64_t offset = 0;
  int64_t len = 0;
  Transform transform = Transform::Identity;
};

struct HyperLayout {
  std::vector<HyperBlock> blocks;

  int64_t dim() const;
  void validate() const;
  const HyperBlock* find(const std::string& name) const;
};

}  // namespace revlearn
