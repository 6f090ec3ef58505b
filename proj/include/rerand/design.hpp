#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace rerand {

using Index = Eigen::Index;

/// Treatment indicators, one byte per unit (or per cluster), values 0/1.
using Assignment = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct SimpleDesign {
  Index treated = 0;
};

/// Units arrive in consecutive blocks; block k occupies rows
/// [sum(stage_sizes[0..k)), sum(stage_sizes[0..k])).
struct SequentialDesign {
  std::vector<Index> stage_sizes;
  std::vector<Index> stage_treated;
};

struct StratifiedDesign {
  std::vector<std::vector<Index>> strata;
  std::vector<Index> stratum_treated;
};

struct ClusterDesign {
  std::vector<std::vector<Index>> clusters;
  Index clusters_treated = 0;
};

using Design = std::variant<SimpleDesign, SequentialDesign, StratifiedDesign, ClusterDesign>;

enum class DesignKind { Simple, Sequential, Stratified, Cluster };

inline DesignKind kind_of(const Design& design) {
  return static_cast<DesignKind>(design.index());
}

inline std::string_view kind_name(DesignKind kind) {
  switch (kind) {
    case DesignKind::Simple: return "simple";
    case DesignKind::Sequential: return "sequential";
    case DesignKind::Stratified: return "stratified";
    case DesignKind::Cluster: return "cluster";
  }
  return "unknown";
}

/// Groups units by label id, ids numbered 0..K-1 in first-appearance order.
inline std::vector<std::vector<Index>> groups_from_labels(std::span<const Index> labels) {
  std::vector<std::vector<Index>> groups;
  for (Index i = 0; i < static_cast<Index>(labels.size()); ++i) {
    const auto id = static_cast<std::size_t>(labels[i]);
    if (groups.size() <= id) groups.resize(id + 1);
    groups[id].push_back(i);
  }
  return groups;
}

inline StratifiedDesign contiguous_strata(std::span<const Index> sizes,
                                          std::span<const Index> treated) {
  StratifiedDesign design;
  Index next = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    std::vector<Index> members(static_cast<std::size_t>(sizes[k]));
    for (auto& m : members) m = next++;
    design.strata.push_back(std::move(members));
    design.stratum_treated.push_back(treated[k]);
  }
  return design;
}

inline ClusterDesign contiguous_clusters(Index count, Index size, Index treated) {
  ClusterDesign design;
  design.clusters_treated = treated;
  for (Index k = 0; k < count; ++k) {
    std::vector<Index> members(static_cast<std::size_t>(size));
    for (Index j = 0; j < size; ++j) members[static_cast<std::size_t>(j)] = k * size + j;
    design.clusters.push_back(std::move(members));
  }
  return design;
}

inline Assignment mirror(const Assignment& w) {
  return (w.array() == 0).cast<std::uint8_t>().matrix();
}

}  // namespace rerand
