#pragma once

#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "rerand/balance.hpp"

namespace rerand {

/// Mutable search position: an assignment plus the cached centered treated
/// sum u = Z'W - (n_t/n) Z'1, so that M = scale * ||u||^2 and a swap costs
/// O(p). In cluster mode the swap operands are cluster ids; in a sequential
/// stage the first frozen_prefix() units may not move.
template <typename Scalar>
class BalanceState {
 public:
  using Vector = DenseVector<Scalar>;

  const BalanceProblem<Scalar>& problem() const { return *problem_; }
  const Assignment& assignment() const { return assignment_; }
  /// Cluster indicator U; empty unless cluster_mode().
  const Assignment& cluster_assignment() const { return clusters_; }
  bool cluster_mode() const { return cluster_mode_; }
  Index frozen_prefix() const { return frozen_; }
  Index treated() const { return treated_; }
  Scalar m_value() const { return m_; }
  /// Sum of whitened rows over treated units.
  Vector treated_whitened_sum() const { return centered_ + share() * problem_->whitened_total(); }

  /// M(W*) - M(W) for swapping treated `t` with control `c`, no checks.
  Scalar delta_unchecked(Index t, Index c) const {
    if (!cluster_mode_) {
      const auto& z = problem_->whitened();
      const Scalar cross = centered_.dot(z.row(c)) - centered_.dot(z.row(t));
      const Scalar step = (z.row(c) - z.row(t)).squaredNorm();
      return scale_ * (2 * cross + step);
    }
    const Index moved = treated_ - sizes()[t] + sizes()[c];
    return cluster_m(moved, shifted(t, c, moved)) - m_;
  }

  void swap_unchecked(Index t, Index c) {
    if (!cluster_mode_) {
      centered_ += problem_->whitened().row(c).transpose() - problem_->whitened().row(t).transpose();
      assignment_[t] = 0;
      assignment_[c] = 1;
      m_ = scale_ * centered_.squaredNorm();
    } else {
      const Index moved = treated_ - sizes()[t] + sizes()[c];
      centered_ = shifted(t, c, moved);
      treated_ = moved;
      scale_ = problem_->scale_for(treated_);
      m_ = scale_ * centered_.squaredNorm();
      clusters_[t] = 0;
      clusters_[c] = 1;
      const auto& members = std::get<ClusterDesign>(problem_->design()).clusters;
      for (Index i : members[static_cast<std::size_t>(t)]) assignment_[i] = 0;
      for (Index i : members[static_cast<std::size_t>(c)]) assignment_[i] = 1;
    }
#ifndef NDEBUG
    const Scalar full = detail::mahalanobis_unchecked(*problem_, assignment_);
    const Scalar tol = std::numeric_limits<Scalar>::epsilon() < Scalar(1e-10) ? Scalar(1e-8) : Scalar(1e-3);
    assert(std::abs(full - m_) <= tol * std::max(Scalar(1), m_));
#endif
  }

  /// Throws InvalidSwap unless (t, c) is a legal treated/control exchange.
  void check_swap(Index t, Index c) const {
    const Assignment& w = cluster_mode_ ? clusters_ : assignment_;
    require(t >= 0 && t < w.size() && c >= 0 && c < w.size(), Errc::InvalidSwap,
            "swap position out of range");
    require(w[t] == 1 && w[c] == 0, Errc::InvalidSwap,
            "swap needs a treated position " + std::to_string(t) + " and a control position " +
                std::to_string(c));
    require(t >= frozen_ && c >= frozen_, Errc::InvalidSwap,
            "positions before " + std::to_string(frozen_) + " are frozen");
    if (!cluster_mode_ && problem_->kind() == DesignKind::Stratified) {
      const auto& group = problem_->group_of();
      require(group[static_cast<std::size_t>(t)] == group[static_cast<std::size_t>(c)],
              Errc::InvalidSwap, "stratified swaps must stay within one stratum");
    }
  }

  /// Builds a state without feasibility checks. `w` is unit-level; in
  /// cluster mode `u` must be its cluster indicator.
  static BalanceState make(const BalanceProblem<Scalar>& problem, Assignment w, Index frozen,
                           Assignment u = {}) {
    BalanceState state;
    state.problem_ = &problem;
    state.cluster_mode_ = u.size() > 0;
    state.frozen_ = frozen;
    state.treated_ = w.template cast<Index>().sum();
    state.scale_ = problem.scale_for(state.treated_);
    if (state.cluster_mode_) {
      state.centered_ = Vector::Zero(problem.dimension());
      for (Index k = 0; k < u.size(); ++k)
        if (u[k]) state.centered_ += problem.cluster_sums().row(k).transpose();
      state.centered_ -= state.share() * problem.whitened_total();
    } else {
      state.centered_ = detail::treated_sum(problem, w) - state.share() * problem.whitened_total();
    }
    state.m_ = state.scale_ * state.centered_.squaredNorm();
    state.assignment_ = std::move(w);
    state.clusters_ = std::move(u);
    return state;
  }

 private:
  Scalar share() const { return static_cast<Scalar>(treated_) / static_cast<Scalar>(problem_->units()); }
  const std::vector<Index>& sizes() const { return problem_->cluster_sizes(); }

  Vector shifted(Index t, Index c, Index moved) const {
    const Scalar step = static_cast<Scalar>(moved - treated_) / static_cast<Scalar>(problem_->units());
    return centered_ + problem_->cluster_sums().row(c).transpose() -
           problem_->cluster_sums().row(t).transpose() - step * problem_->whitened_total();
  }

  Scalar cluster_m(Index treated, const Vector& centered) const {
    return problem_->scale_for(treated) * centered.squaredNorm();
  }

  const BalanceProblem<Scalar>* problem_ = nullptr;
  Assignment assignment_;
  Assignment clusters_;
  Vector centered_;
  Scalar m_ = 0;
  Scalar scale_ = 0;
  Index treated_ = 0;
  Index frozen_ = 0;
  bool cluster_mode_ = false;
};

/// State for a feasible assignment. Cluster designs are tracked at the cluster
/// level; a sequential design is tracked on its final stage with every
/// earlier stage frozen.
template <typename Scalar>
BalanceState<Scalar> init_state(const BalanceProblem<Scalar>& problem, const Assignment& w) {
  check_feasible(problem, w);
  switch (problem.kind()) {
    case DesignKind::Cluster: {
      const auto& clust = std::get<ClusterDesign>(problem.design());
      Assignment u(problem.clusters());
      for (Index k = 0; k < u.size(); ++k) u[k] = w[clust.clusters[static_cast<std::size_t>(k)].front()];
      return BalanceState<Scalar>::make(problem, w, 0, std::move(u));
    }
    case DesignKind::Sequential: {
      const Index last = problem.stages() - 1;
      return BalanceState<Scalar>::make(problem.stage(last), w, problem.stage_begin(last));
    }
    default:
      return BalanceState<Scalar>::make(problem, w, 0);
  }
}

template <typename Scalar>
BalanceState<Scalar> init_cluster_state(const BalanceProblem<Scalar>& problem, const Assignment& u) {
  Assignment w = expand_clusters(problem, u);
  check_feasible(problem, w);
  return BalanceState<Scalar>::make(problem, std::move(w), 0, u);
}

/// State of stage k of a sequential design: evaluates M_[k] on the prefix and
/// freezes every unit enrolled before stage k.
template <typename Scalar>
BalanceState<Scalar> init_stage_state(const BalanceProblem<Scalar>& problem, Index stage,
                                      const Assignment& prefix) {
  require(problem.kind() == DesignKind::Sequential, Errc::StageMismatch, "problem is not sequential");
  require(stage >= 0 && stage < problem.stages() && prefix.size() == problem.stage_end(stage),
          Errc::StageMismatch, "prefix does not end at stage " + std::to_string(stage + 1));
  sequential_mahalanobis(problem, prefix);
  return BalanceState<Scalar>::make(problem.stage(stage), prefix, problem.stage_begin(stage));
}

template <typename Scalar>
Scalar swap_delta(const BalanceState<Scalar>& state, Index treated_pos, Index control_pos) {
  state.check_swap(treated_pos, control_pos);
  return state.delta_unchecked(treated_pos, control_pos);
}

template <typename Scalar>
BalanceState<Scalar>& apply_swap(BalanceState<Scalar>& state, Index treated_pos, Index control_pos) {
  state.check_swap(treated_pos, control_pos);
  state.swap_unchecked(treated_pos, control_pos);
  return state;
}

}  // namespace rerand
