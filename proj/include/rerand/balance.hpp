#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "rerand/design.hpp"
#include "rerand/error.hpp"

namespace rerand {

struct BuildOptions {
  /// Added to the diagonal of the sample covariance before factorization.
  double ridge = 0.0;
  /// dense_hat() refuses to materialize H above this many units.
  Index dense_hat_limit = 2048;
  /// A Cholesky pivot below tolerance * max diag(S) is treated as singular.
  double pivot_tolerance = 1e-10;
};

/// Covariates whitened by the sample covariance, together with the design
/// constraints. Immutable once built; share it freely across threads.
///
/// The Mahalanobis balance of an assignment W is
///   M(W) = n/(n_t n_c) * || Z'W - (n_t/n) Z'1 ||^2,
/// where Z = (X - 1 xbar') L^{-T} and S = L L' is the sample covariance
/// (divisor n - 1), so Z'Z = (n - 1) I. The hat matrix H = n/(n_t n_c) Z Z'
/// is only ever evaluated entry-wise.
template <typename Scalar>
class BalanceProblem {
 public:
  using Matrix = DenseMatrix<Scalar>;
  using Vector = DenseVector<Scalar>;
  using Rows = RowMatrix<Scalar>;

  static BalanceProblem build(const Matrix& x, const Design& design,
                              const BuildOptions& options = {});

  Index units() const { return whitened_.rows(); }
  Index dimension() const { return whitened_.cols(); }
  /// Nominal arm sizes. For cluster designs with unequal clusters the
  /// realized treated count depends on the assignment; see scale_for().
  Index treated() const { return treated_; }
  Index control() const { return units() - treated_; }
  Scalar scale() const { return scale_; }
  Scalar scale_for(Index treated) const {
    const auto n = static_cast<Scalar>(units());
    return n / (static_cast<Scalar>(treated) * (n - static_cast<Scalar>(treated)));
  }

  const Matrix& covariates() const { return covariates_; }
  const Vector& column_means() const { return means_; }
  const Rows& whitened() const { return whitened_; }
  /// Z'1; zero up to rounding.
  const Vector& whitened_total() const { return total_; }
  /// h = 2 (n_t/n) H 1.
  const Vector& h_vector() const { return h_; }

  const Design& design() const { return design_; }
  DesignKind kind() const { return kind_of(design_); }

  Scalar hat(Index i, Index j) const { return scale_ * whitened_.row(i).dot(whitened_.row(j)); }
  Matrix dense_hat() const {
    require(units() <= options_.dense_hat_limit, Errc::ConfigInvalid,
            "dense H requested for n=" + std::to_string(units()) + " above limit " +
                std::to_string(options_.dense_hat_limit));
    return scale_ * whitened_ * whitened_.transpose();
  }

  /// Stratum (stratified) or cluster (cluster) id of each unit; empty otherwise.
  const std::vector<Index>& group_of() const { return group_of_; }

  Index clusters() const { return static_cast<Index>(cluster_sizes_.size()); }
  const Rows& cluster_sums() const { return cluster_sums_; }
  const std::vector<Index>& cluster_sizes() const { return cluster_sizes_; }

  Index stages() const { return static_cast<Index>(stage_problems_.size()); }
  /// Problem restricted to the first stage_end(k) units, re-whitened.
  const BalanceProblem& stage(Index k) const { return stage_problems_.at(static_cast<std::size_t>(k)); }
  Index stage_begin(Index k) const { return k == 0 ? 0 : stage_end(k - 1); }
  Index stage_end(Index k) const { return stage_ends_.at(static_cast<std::size_t>(k)); }

  const BuildOptions& options() const { return options_; }

 private:
  void whiten(const Matrix& x);

  Matrix covariates_;
  Vector means_;
  Rows whitened_;
  Vector total_;
  Vector h_;
  Design design_;
  BuildOptions options_;
  Index treated_ = 0;
  Scalar scale_ = 0;
  std::vector<Index> group_of_;
  Rows cluster_sums_;
  std::vector<Index> cluster_sizes_;
  std::vector<BalanceProblem> stage_problems_;
  std::vector<Index> stage_ends_;
};

template <typename Scalar>
BalanceProblem<Scalar> build_problem(const DenseMatrix<Scalar>& x, const Design& design,
                                     const BuildOptions& options = {}) {
  return BalanceProblem<Scalar>::build(x, design, options);
}

namespace detail {

inline void check_partition(const std::vector<std::vector<Index>>& groups, Index n,
                            std::vector<Index>& group_of, const char* what) {
  group_of.assign(static_cast<std::size_t>(n), -1);
  Index covered = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    require(!groups[k].empty(), Errc::DimensionMismatch, std::string("empty ") + what);
    for (Index i : groups[k]) {
      require(i >= 0 && i < n, Errc::DimensionMismatch,
              std::string(what) + " index out of range: " + std::to_string(i));
      require(group_of[static_cast<std::size_t>(i)] < 0, Errc::DimensionMismatch,
              "unit " + std::to_string(i) + " belongs to two " + what + "s");
      group_of[static_cast<std::size_t>(i)] = static_cast<Index>(k);
      ++covered;
    }
  }
  require(covered == n, Errc::DimensionMismatch,
          std::string(what) + "s do not cover all " + std::to_string(n) + " units");
}

}  // namespace detail

template <typename Scalar>
void BalanceProblem<Scalar>::whiten(const Matrix& x) {
  const Index n = x.rows();
  const Index p = x.cols();
  means_ = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - means_.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<Scalar>(n - 1);
  if (options_.ridge > 0) cov.diagonal().array() += static_cast<Scalar>(options_.ridge);

  const Scalar max_diag = cov.diagonal().maxCoeff();
  require(max_diag > 0, Errc::RankDeficient, "all covariate columns are constant");
  Eigen::LLT<Matrix> llt(cov);
  const Matrix factor = llt.matrixL();
  const Scalar min_pivot = llt.info() == Eigen::Success
                               ? factor.diagonal().array().square().minCoeff()
                               : Scalar(0);
  require(min_pivot >= static_cast<Scalar>(options_.pivot_tolerance) * max_diag,
          Errc::RankDeficient,
          "sample covariance of " + std::to_string(p) + " covariates over " + std::to_string(n) +
              " units is singular (collinear or constant columns); consider a ridge");

  whitened_ = llt.matrixL().solve(centered.transpose()).transpose();
  total_ = whitened_.colwise().sum().transpose();
}

template <typename Scalar>
BalanceProblem<Scalar> BalanceProblem<Scalar>::build(const Matrix& x, const Design& design,
                                                     const BuildOptions& options) {
  const Index n = x.rows();
  const Index p = x.cols();
  require(n >= 2 && p >= 1, Errc::DimensionMismatch,
          "covariates must have at least 2 rows and 1 column");
  require(x.allFinite(), Errc::DimensionMismatch, "covariates contain non-finite entries");
  if (options.ridge <= 0) {
    require(n - 1 > p, Errc::RankDeficient,
            "need n - 1 > p for a full-rank covariance (n=" + std::to_string(n) +
                ", p=" + std::to_string(p) + ")");
  }

  BalanceProblem problem;
  problem.covariates_ = x;
  problem.design_ = design;
  problem.options_ = options;

  switch (kind_of(design)) {
    case DesignKind::Simple: {
      problem.treated_ = std::get<SimpleDesign>(design).treated;
      break;
    }
    case DesignKind::Sequential: {
      const auto& seq = std::get<SequentialDesign>(design);
      require(!seq.stage_sizes.empty() && seq.stage_sizes.size() == seq.stage_treated.size(),
              Errc::DimensionMismatch, "stage sizes and stage treated counts must align");
      Index end = 0;
      Index treated = 0;
      for (std::size_t k = 0; k < seq.stage_sizes.size(); ++k) {
        require(seq.stage_sizes[k] >= 1 && seq.stage_treated[k] >= 0 &&
                    seq.stage_treated[k] <= seq.stage_sizes[k],
                Errc::DimensionMismatch, "invalid size for stage " + std::to_string(k + 1));
        end += seq.stage_sizes[k];
        treated += seq.stage_treated[k];
        problem.stage_ends_.push_back(end);
      }
      require(end == n, Errc::DimensionMismatch,
              "stage sizes sum to " + std::to_string(end) + ", expected " + std::to_string(n));
      problem.treated_ = treated;
      Index stage_treated = 0;
      for (std::size_t k = 0; k < seq.stage_sizes.size(); ++k) {
        stage_treated += seq.stage_treated[k];
        const Index rows = problem.stage_ends_[k];
        require(stage_treated > 0 && stage_treated < rows, Errc::DimensionMismatch,
                "stage " + std::to_string(k + 1) + " prefix has an empty arm");
        problem.stage_problems_.push_back(
            build(x.topRows(rows), SimpleDesign{stage_treated}, options));
      }
      break;
    }
    case DesignKind::Stratified: {
      const auto& strat = std::get<StratifiedDesign>(design);
      require(strat.strata.size() == strat.stratum_treated.size(), Errc::DimensionMismatch,
              "strata and stratum treated counts must align");
      detail::check_partition(strat.strata, n, problem.group_of_, "stratum");
      Index treated = 0;
      for (std::size_t k = 0; k < strat.strata.size(); ++k) {
        const Index t = strat.stratum_treated[k];
        require(t >= 0 && t <= static_cast<Index>(strat.strata[k].size()),
                Errc::DimensionMismatch, "invalid treated count in stratum " + std::to_string(k + 1));
        treated += t;
      }
      problem.treated_ = treated;
      break;
    }
    case DesignKind::Cluster: {
      const auto& clust = std::get<ClusterDesign>(design);
      detail::check_partition(clust.clusters, n, problem.group_of_, "cluster");
      const auto count = static_cast<Index>(clust.clusters.size());
      require(clust.clusters_treated >= 1 && clust.clusters_treated < count,
              Errc::DimensionMismatch, "need 1 <= K_t < K clusters treated");
      for (const auto& members : clust.clusters)
        problem.cluster_sizes_.push_back(static_cast<Index>(members.size()));
      const double share = static_cast<double>(clust.clusters_treated) / static_cast<double>(count);
      problem.treated_ = std::clamp<Index>(static_cast<Index>(std::lround(share * n)), 1, n - 1);
      break;
    }
  }
  require(problem.treated_ > 0 && problem.treated_ < n, Errc::DimensionMismatch,
          "both arms must be nonempty (n_t=" + std::to_string(problem.treated_) +
              ", n=" + std::to_string(n) + ")");

  problem.whiten(x);
  problem.scale_ = problem.scale_for(problem.treated_);
  const Scalar share = static_cast<Scalar>(problem.treated_) / static_cast<Scalar>(n);
  problem.h_ = 2 * share * problem.scale_ * (problem.whitened_ * problem.total_);

  if (problem.kind() == DesignKind::Cluster) {
    const auto& clust = std::get<ClusterDesign>(design);
    problem.cluster_sums_ = Rows::Zero(problem.clusters(), p);
    for (Index k = 0; k < problem.clusters(); ++k)
      for (Index i : clust.clusters[static_cast<std::size_t>(k)])
        problem.cluster_sums_.row(k) += problem.whitened_.row(i);
  }
  return problem;
}

namespace detail {

template <typename Scalar>
DenseVector<Scalar> treated_sum(const BalanceProblem<Scalar>& problem, const Assignment& w) {
  DenseVector<Scalar> sum = DenseVector<Scalar>::Zero(problem.dimension());
  for (Index i = 0; i < w.size(); ++i)
    if (w[i]) sum += problem.whitened().row(i).transpose();
  return sum;
}

/// M(W) with the scaling taken from the realized treated count.
template <typename Scalar>
Scalar mahalanobis_unchecked(const BalanceProblem<Scalar>& problem, const Assignment& w) {
  const Index treated = w.template cast<Index>().sum();
  const Scalar share = static_cast<Scalar>(treated) / static_cast<Scalar>(problem.units());
  const DenseVector<Scalar> centered = treated_sum(problem, w) - share * problem.whitened_total();
  return problem.scale_for(treated) * centered.squaredNorm();
}

inline bool is_binary(const Assignment& w) {
  return (w.array() <= 1).all();
}

}  // namespace detail

/// Throws InfeasibleAssignment unless W satisfies the design's constraints.
template <typename Scalar>
void check_feasible(const BalanceProblem<Scalar>& problem, const Assignment& w) {
  const Index n = problem.units();
  require(w.size() == n, Errc::InfeasibleAssignment,
          "assignment has length " + std::to_string(w.size()) + ", expected " + std::to_string(n));
  require(detail::is_binary(w), Errc::InfeasibleAssignment, "assignment entries must be 0 or 1");
  const auto count = [&](Index begin, Index end) {
    return w.segment(begin, end - begin).template cast<Index>().sum();
  };
  switch (problem.kind()) {
    case DesignKind::Simple:
      require(count(0, n) == problem.treated(), Errc::InfeasibleAssignment,
              "assignment treats " + std::to_string(count(0, n)) + " units, expected " +
                  std::to_string(problem.treated()));
      break;
    case DesignKind::Sequential: {
      const auto& seq = std::get<SequentialDesign>(problem.design());
      for (Index k = 0; k < problem.stages(); ++k)
        require(count(problem.stage_begin(k), problem.stage_end(k)) ==
                    seq.stage_treated[static_cast<std::size_t>(k)],
                Errc::InfeasibleAssignment,
                "wrong treated count in stage " + std::to_string(k + 1));
      break;
    }
    case DesignKind::Stratified: {
      const auto& strat = std::get<StratifiedDesign>(problem.design());
      for (std::size_t k = 0; k < strat.strata.size(); ++k) {
        Index t = 0;
        for (Index i : strat.strata[k]) t += w[i];
        require(t == strat.stratum_treated[k], Errc::InfeasibleAssignment,
                "wrong treated count in stratum " + std::to_string(k + 1));
      }
      break;
    }
    case DesignKind::Cluster: {
      const auto& clust = std::get<ClusterDesign>(problem.design());
      Index treated_clusters = 0;
      for (const auto& members : clust.clusters) {
        const auto first = w[members.front()];
        for (Index i : members)
          require(w[i] == first, Errc::InfeasibleAssignment,
                  "assignment is not constant within a cluster");
        treated_clusters += first;
      }
      require(treated_clusters == clust.clusters_treated, Errc::InfeasibleAssignment,
              "assignment treats " + std::to_string(treated_clusters) + " clusters, expected " +
                  std::to_string(clust.clusters_treated));
      break;
    }
  }
}

/// Mahalanobis distance between treated and control covariate means, O(np).
template <typename Scalar>
Scalar mahalanobis(const BalanceProblem<Scalar>& problem, const Assignment& w) {
  check_feasible(problem, w);
  return detail::mahalanobis_unchecked(problem, w);
}

/// Unit-level assignment W(U) of a cluster assignment U.
template <typename Scalar>
Assignment expand_clusters(const BalanceProblem<Scalar>& problem, const Assignment& u) {
  require(problem.kind() == DesignKind::Cluster, Errc::ConfigInvalid,
          "expand_clusters needs a cluster design");
  require(u.size() == problem.clusters() && detail::is_binary(u), Errc::InfeasibleAssignment,
          "cluster assignment must be a 0/1 vector of length K");
  const auto& clust = std::get<ClusterDesign>(problem.design());
  Assignment w(problem.units());
  for (Index k = 0; k < u.size(); ++k)
    for (Index i : clust.clusters[static_cast<std::size_t>(k)]) w[i] = u[k];
  return w;
}

template <typename Scalar>
Scalar cluster_mahalanobis(const BalanceProblem<Scalar>& problem, const Assignment& u) {
  const Assignment w = expand_clusters(problem, u);
  require(u.template cast<Index>().sum() ==
              std::get<ClusterDesign>(problem.design()).clusters_treated,
          Errc::InfeasibleAssignment, "cluster assignment does not treat K_t clusters");
  return detail::mahalanobis_unchecked(problem, w);
}

/// Index k of the stage whose prefix has exactly `length` units, or throws StageMismatch.
template <typename Scalar>
Index stage_for_prefix(const BalanceProblem<Scalar>& problem, Index length) {
  require(problem.kind() == DesignKind::Sequential, Errc::StageMismatch,
          "problem is not sequential");
  for (Index k = 0; k < problem.stages(); ++k)
    if (problem.stage_end(k) == length) return k;
  fail(Errc::StageMismatch,
       "prefix length " + std::to_string(length) + " is not a stage boundary");
}

/// M_[k] of a prefix covering the first k stages, using that prefix's own
/// means and covariance.
template <typename Scalar>
Scalar sequential_mahalanobis(const BalanceProblem<Scalar>& problem, const Assignment& prefix) {
  const Index k = stage_for_prefix(problem, prefix.size());
  require(detail::is_binary(prefix), Errc::StageMismatch, "prefix entries must be 0 or 1");
  const auto& seq = std::get<SequentialDesign>(problem.design());
  for (Index g = 0; g <= k; ++g) {
    const Index begin = problem.stage_begin(g);
    const Index t = prefix.segment(begin, problem.stage_end(g) - begin).template cast<Index>().sum();
    require(t == seq.stage_treated[static_cast<std::size_t>(g)], Errc::StageMismatch,
            "wrong treated count in stage " + std::to_string(g + 1));
  }
  return detail::mahalanobis_unchecked(problem.stage(k), prefix);
}

extern template class BalanceProblem<double>;

}  // namespace rerand
