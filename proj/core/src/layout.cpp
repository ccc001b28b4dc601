#include "revlearn/layout.hpp"

#include <algorithm>

namespace revlearn {

namespace {

template <typename T>
int64_t segments_dim(const std::vector<T>& segs, const char* what) {
  std::vector<std::pair<int64_t, int64_t>> spans;
  spans.reserve(segs.size());
  int64_t total = 0;
  for (const auto& s : segs) {
    if (s.len < 0 || s.offset < 0) {
      throw ContractViolation(std::string(what) + " '" + s.name + "': negative extent");
    }
    spans.emplace_back(s.offset, s.offset + s.len);
    total += s.len;
  }
  std::sort(spans.begin(), spans.end());
  int64_t cursor = 0;
  for (const auto& [lo, hi] : spans) {
    if (lo != cursor) {
      throw ContractViolation(std::string(what) + "s must be disjoint and cover the vector");
    }
    cursor = hi;
  }
  if (cursor != total) {
    throw ContractViolation(std::string(what) + "s overlap");
  }
  return total;
}

}  // namespace

int64_t ParamLayout::dim() const {
  int64_t total = 0;
  for (const auto& g : groups) total += g.len;
  return total;
}

void ParamLayout::validate() const { segments_dim(groups, "parameter group"); }

std::vector<int32_t> ParamLayout::element_groups() const {
  std::vector<int32_t> out(static_cast<size_t>(dim()), -1);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    for (int64_t i = 0; i < g.len; ++i) {
      out[static_cast<size_t>(g.offset + i)] = static_cast<int32_t>(gi);
    }
  }
  return out;
}

int ParamLayout::group_index(const std::string& name) const {
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    if (groups[gi].name == name) return static_cast<int>(gi);
  }
  throw ContractViolation("unknown parameter group '" + name + "'");
}

int64_t HyperLayout::dim() const {
  int64_t total = 0;
  for (const auto& b : blocks) total += b.len;
  return total;
}

void HyperLayout::validate() const { segments_dim(blocks, "hyperparameter block"); }

const HyperBlock* HyperLayout::find(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

}  // namespace revlearn
