#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "rerand/balance_state.hpp"
#include "rerand/chisq.hpp"
#include "rerand/rng.hpp"

namespace rerand {

enum class Method { CR, ARSRR, PSRR, VNSRR };

std::string_view method_name(Method method);
/// Accepts cr, arsrr, psrr, vnsrr (any case); throws ConfigError otherwise.
Method parse_method(std::string_view name);

/// One observation of a search chain, reported through SamplerConfig::on_event.
struct SearchEvent {
  enum class Kind { Start, Candidate, Improve, Shake, Uphill, Stage };
  Kind kind;
  double m;
};

struct SamplerConfig {
  Method method = Method::VNSRR;
  /// L and S. Unset means the defaults below.
  std::optional<Index> local_pairs;
  std::optional<Index> shake_pairs;
  /// Per-stratum (stratified) or per-stage (sequential) L_k and S_k.
  std::vector<Index> group_local_pairs;
  std::vector<Index> group_shake_pairs;
  double psrr_gamma = 20.0;
  /// Candidate evaluations allowed per draw (per stage for sequential designs).
  std::int64_t max_iterations = 10'000'000;
  /// Master seed of sample_batch.
  std::uint64_t seed = 0;
  std::function<void(const SearchEvent&)> on_event;
};

/// L = min(10, max(1, floor(min(n_t, n_c) / 4))); zero when an arm is empty.
inline Index default_local_pairs(Index treated, Index control) {
  const Index smaller = std::min(treated, control);
  if (smaller <= 0) return 0;
  return std::min<Index>(10, std::max<Index>(1, smaller / 4));
}

/// S = max(1, ceil(L / 2)); zero when L is.
inline Index default_shake_pairs(Index local_pairs) {
  if (local_pairs <= 0) return 0;
  return std::max<Index>(1, (local_pairs + 1) / 2);
}

struct StageThresholds {
  std::vector<double> values;
};
struct StageShares {
  std::vector<double> shares;
};

/// A single threshold a, or (sequential designs) explicit per-stage
/// thresholds or stage shares resolved against the realized previous M.
using ThresholdPlan = std::variant<double, StageThresholds, StageShares>;

struct DesignSpec {
  Design design;
  ThresholdPlan thresholds = std::numeric_limits<double>::infinity();
  SamplerConfig sampler;
};

struct AssignmentDraw {
  Assignment assignment;
  double m_value = 0.0;
  std::int64_t iterations = 0;
  std::chrono::duration<double> wall_time{0};
  /// M_[k] at the end of every stage (sequential designs only).
  std::vector<double> stage_m;
};

namespace detail {

/// Swap bookkeeping for one set of exchangeable positions (all units, a
/// stratum, the current stage, or the clusters).
struct SwapGroup {
  std::vector<Index> members;
  Index treated = 0;
  std::vector<Index> ones;
  std::vector<Index> zeros;
  Index local_pairs = 0;
  Index shake_pairs = 0;
};

/// Moves a uniformly random ordered sample of `count` items to the front.
inline void sample_front(std::vector<Index>& items, Index count, Rng& rng) {
  const auto size = items.size();
  for (std::size_t j = 0; j < static_cast<std::size_t>(count); ++j) {
    const auto r = j + rng.uniform_index(size - j);
    std::swap(items[j], items[r]);
  }
}

template <typename Scalar>
struct SearchFrame {
  const BalanceProblem<Scalar>* problem = nullptr;
  std::vector<SwapGroup> groups;
  Assignment base;
  Index frozen = 0;
  bool cluster = false;
};

inline void emit(const SamplerConfig& config, SearchEvent::Kind kind, double m) {
  if (config.on_event) config.on_event(SearchEvent{kind, m});
}

[[noreturn]] inline void budget_exceeded(std::int64_t budget, const std::string& where) {
  fail(Errc::IterationBudgetExceeded,
       "no acceptable assignment after " + std::to_string(budget) + " candidate evaluations" + where +
           "; the threshold is likely too small for this instance");
}

/// Uniform draw over the frame's feasible set; refills ones/zeros.
template <typename Scalar>
BalanceState<Scalar> uniform_start(SearchFrame<Scalar>& frame, Rng& rng) {
  Assignment w = frame.base;
  Assignment u;
  if (frame.cluster) u = Assignment::Zero(frame.problem->clusters());
  for (auto& group : frame.groups) {
    sample_front(group.members, group.treated, rng);
    const auto split = group.members.begin() + group.treated;
    group.ones.assign(group.members.begin(), split);
    group.zeros.assign(split, group.members.end());
    for (Index id : group.ones) (frame.cluster ? u : w)[id] = 1;
  }
  if (frame.cluster) {
    const auto& clusters = std::get<ClusterDesign>(frame.problem->design()).clusters;
    for (Index k = 0; k < u.size(); ++k)
      if (u[k])
        for (Index i : clusters[static_cast<std::size_t>(k)]) w[i] = 1;
  }
  return BalanceState<Scalar>::make(*frame.problem, std::move(w), frame.frozen, std::move(u));
}

inline void swap_slots(SwapGroup& group, std::size_t one_slot, std::size_t zero_slot) {
  std::swap(group.ones[one_slot], group.zeros[zero_slot]);
}

/// Variable neighborhood search: local passes over disjoint random
/// treated/control pairs, applying strictly improving swaps at once; a pass
/// without improvement is followed by a shake of S forced swaps.
template <typename Scalar>
std::int64_t run_vns(SearchFrame<Scalar>& frame, BalanceState<Scalar>& state, double a,
                     const SamplerConfig& config, Rng& rng, const std::string& where) {
  std::int64_t iterations = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const bool aggregate = frame.groups.size() > 1;
  while (state.m_value() > a) {
    pairs.clear();
    for (std::size_t g = 0; g < frame.groups.size(); ++g) {
      auto& group = frame.groups[g];
      sample_front(group.ones, group.local_pairs, rng);
      sample_front(group.zeros, group.local_pairs, rng);
      for (std::size_t l = 0; l < static_cast<std::size_t>(group.local_pairs); ++l) pairs.emplace_back(g, l);
    }
    if (aggregate)
      for (std::size_t j = pairs.size(); j > 1; --j) std::swap(pairs[j - 1], pairs[rng.uniform_index(j)]);

    bool improved = false;
    for (const auto& [g, l] : pairs) {
      auto& group = frame.groups[g];
      const Index t = group.ones[l];
      const Index c = group.zeros[l];
      if (iterations >= config.max_iterations) budget_exceeded(config.max_iterations, where);
      ++iterations;
      const Scalar delta = state.delta_unchecked(t, c);
      emit(config, SearchEvent::Kind::Candidate, static_cast<double>(state.m_value() + delta));
      if (delta < 0) {
        state.swap_unchecked(t, c);
        swap_slots(group, l, l);
        improved = true;
        emit(config, SearchEvent::Kind::Improve, static_cast<double>(state.m_value()));
        if (state.m_value() <= a) break;
      }
    }
    if (!improved) {
      for (auto& group : frame.groups) {
        sample_front(group.ones, group.shake_pairs, rng);
        sample_front(group.zeros, group.shake_pairs, rng);
        for (std::size_t s = 0; s < static_cast<std::size_t>(group.shake_pairs); ++s) {
          if (iterations >= config.max_iterations) budget_exceeded(config.max_iterations, where);
          ++iterations;
          state.swap_unchecked(group.ones[s], group.zeros[s]);
          swap_slots(group, s, s);
          emit(config, SearchEvent::Kind::Shake, static_cast<double>(state.m_value()));
        }
      }
    }
  }
  return iterations;
}

/// Metropolis-style pair switching: a random swap is taken when it lowers M
/// and otherwise with probability (M / M*)^gamma.
template <typename Scalar>
std::int64_t run_psrr(SearchFrame<Scalar>& frame, BalanceState<Scalar>& state, double a,
                      const SamplerConfig& config, Rng& rng, const std::string& where) {
  std::int64_t iterations = 0;
  auto& group = frame.groups.front();
  while (state.m_value() > a) {
    if (iterations >= config.max_iterations) budget_exceeded(config.max_iterations, where);
    ++iterations;
    const auto one_slot = rng.uniform_index(group.ones.size());
    const auto zero_slot = rng.uniform_index(group.zeros.size());
    const Index t = group.ones[one_slot];
    const Index c = group.zeros[zero_slot];
    const Scalar current = state.m_value();
    const Scalar proposed = current + state.delta_unchecked(t, c);
    emit(config, SearchEvent::Kind::Candidate, static_cast<double>(proposed));
    bool accept = proposed < current;
    if (!accept) {
      const double ratio = static_cast<double>(current) / static_cast<double>(proposed);
      accept = rng.uniform01() < std::pow(ratio, config.psrr_gamma);
    }
    if (accept) {
      state.swap_unchecked(t, c);
      swap_slots(group, one_slot, zero_slot);
      emit(config, proposed < current ? SearchEvent::Kind::Improve : SearchEvent::Kind::Uphill,
           static_cast<double>(state.m_value()));
    }
  }
  return iterations;
}

inline void check_pairs(const SwapGroup& group, const std::string& what) {
  const Index room = std::min(group.treated, static_cast<Index>(group.members.size()) - group.treated);
  require(group.local_pairs >= 0 && group.local_pairs <= room, Errc::ConfigInvalid,
          "L=" + std::to_string(group.local_pairs) + " exceeds min(n_t, n_c)=" + std::to_string(room) + what);
  require(group.shake_pairs >= 0 && group.shake_pairs <= room, Errc::ConfigInvalid,
          "S=" + std::to_string(group.shake_pairs) + " exceeds min(n_t, n_c)=" + std::to_string(room) + what);
}

inline void assign_pairs(SwapGroup& group, const SamplerConfig& config, std::size_t index, bool per_group) {
  const Index control = static_cast<Index>(group.members.size()) - group.treated;
  if (per_group && index < config.group_local_pairs.size())
    group.local_pairs = config.group_local_pairs[index];
  else if (config.local_pairs)
    group.local_pairs = *config.local_pairs;
  else
    group.local_pairs = default_local_pairs(group.treated, control);
  if (per_group && index < config.group_shake_pairs.size())
    group.shake_pairs = config.group_shake_pairs[index];
  else if (config.shake_pairs)
    group.shake_pairs = *config.shake_pairs;
  else
    group.shake_pairs = default_shake_pairs(group.local_pairs);
}

inline std::vector<Index> iota_members(Index begin, Index end) {
  std::vector<Index> members(static_cast<std::size_t>(end - begin));
  for (Index i = begin; i < end; ++i) members[static_cast<std::size_t>(i - begin)] = i;
  return members;
}

/// Frame of a non-sequential problem.
template <typename Scalar>
SearchFrame<Scalar> make_frame(const BalanceProblem<Scalar>& problem, const SamplerConfig& config) {
  SearchFrame<Scalar> frame;
  frame.problem = &problem;
  frame.base = Assignment::Zero(problem.units());
  switch (problem.kind()) {
    case DesignKind::Simple: {
      SwapGroup group;
      group.members = iota_members(0, problem.units());
      group.treated = problem.treated();
      frame.groups.push_back(std::move(group));
      break;
    }
    case DesignKind::Stratified: {
      const auto& strat = std::get<StratifiedDesign>(problem.design());
      for (std::size_t k = 0; k < strat.strata.size(); ++k) {
        SwapGroup group;
        group.members = strat.strata[k];
        group.treated = strat.stratum_treated[k];
        frame.groups.push_back(std::move(group));
      }
      break;
    }
    case DesignKind::Cluster: {
      SwapGroup group;
      group.members = iota_members(0, problem.clusters());
      group.treated = std::get<ClusterDesign>(problem.design()).clusters_treated;
      frame.groups.push_back(std::move(group));
      frame.cluster = true;
      break;
    }
    case DesignKind::Sequential:
      fail(Errc::ConfigInvalid, "sequential problems are searched stage by stage");
  }
  const bool per_group = problem.kind() == DesignKind::Stratified;
  for (std::size_t g = 0; g < frame.groups.size(); ++g) {
    assign_pairs(frame.groups[g], config, g, per_group);
    if (config.method == Method::VNSRR)
      check_pairs(frame.groups[g], per_group ? " in stratum " + std::to_string(g + 1) : std::string());
  }
  if (config.method == Method::VNSRR) {
    Index total = 0;
    for (const auto& group : frame.groups) total += group.local_pairs;
    require(total >= 1, Errc::ConfigInvalid, "VNSRR needs at least one local pair");
  }
  return frame;
}

inline double single_threshold(const ThresholdPlan& plan) {
  if (const auto* a = std::get_if<double>(&plan)) {
    require(*a > 0.0, Errc::ConfigInvalid, "threshold must be positive");
    return *a;
  }
  if (const auto* list = std::get_if<StageThresholds>(&plan); list && list->values.size() == 1)
    return list->values.front();
  fail(Errc::ConfigInvalid, "stage-wise thresholds need a sequential design");
}

template <typename Scalar>
double stage_threshold(const BalanceProblem<Scalar>& problem, const ThresholdPlan& plan, Index stage,
                       double previous_m) {
  if (const auto* a = std::get_if<double>(&plan)) return *a;
  if (const auto* list = std::get_if<StageThresholds>(&plan)) {
    require(static_cast<Index>(list->values.size()) == problem.stages(), Errc::ConfigInvalid,
            "need one threshold per stage");
    return list->values[static_cast<std::size_t>(stage)];
  }
  const auto& shares = std::get<StageShares>(plan);
  require(static_cast<Index>(shares.shares.size()) == problem.stages(), Errc::ConfigInvalid,
          "need one share per stage");
  SequentialThresholdSpec spec;
  spec.stage_shares = shares.shares;
  spec.df = static_cast<int>(problem.dimension());
  spec.stage_sizes = std::get<SequentialDesign>(problem.design()).stage_sizes;
  return sequential_stage_threshold(spec, stage, previous_m);
}

/// Brings `state` under threshold `a` with the configured method.
template <typename Scalar>
std::int64_t search(SearchFrame<Scalar>& frame, BalanceState<Scalar>& state, double a,
                    const SamplerConfig& config, Rng& rng, const std::string& where) {
  switch (config.method) {
    case Method::CR:
      return 0;
    case Method::ARSRR: {
      std::int64_t draws = 1;
      while (state.m_value() > a) {
        if (draws >= config.max_iterations) budget_exceeded(config.max_iterations, where);
        ++draws;
        state = uniform_start(frame, rng);
      }
      return draws;
    }
    case Method::PSRR:
      require(frame.groups.size() == 1 && !frame.cluster, Errc::ConfigInvalid,
              "PSRR supports simple and sequential designs only");
      return run_psrr(frame, state, a, config, rng, where);
    case Method::VNSRR:
      return run_vns(frame, state, a, config, rng, where);
  }
  return 0;
}

template <typename Scalar>
AssignmentDraw run_sequential(const BalanceProblem<Scalar>& problem, const ThresholdPlan& plan,
                              const SamplerConfig& config, Rng& rng) {
  const auto& seq = std::get<SequentialDesign>(problem.design());
  AssignmentDraw draw;
  Assignment w = Assignment::Zero(problem.units());
  double previous_m = 0.0;
  for (Index k = 0; k < problem.stages(); ++k) {
    const auto stage = static_cast<std::size_t>(k);
    const Index begin = problem.stage_begin(k);
    const Index end = problem.stage_end(k);
    SearchFrame<Scalar> frame;
    frame.problem = &problem.stage(k);
    frame.base = w.head(end);
    frame.frozen = begin;
    SwapGroup group;
    group.members = iota_members(begin, end);
    group.treated = seq.stage_treated[stage];
    assign_pairs(group, config, stage, true);
    const std::string where = " in stage " + std::to_string(k + 1);
    if (config.method == Method::VNSRR) {
      check_pairs(group, where);
      require(group.local_pairs >= 1, Errc::ConfigInvalid, "VNSRR needs at least one local pair" + where);
    }
    frame.groups.push_back(std::move(group));

    const double a = stage_threshold(problem, plan, k, previous_m);
    auto state = uniform_start(frame, rng);
    emit(config, SearchEvent::Kind::Start, static_cast<double>(state.m_value()));
    draw.iterations += search(frame, state, a, config, rng, where);
    w.head(end) = state.assignment();
    previous_m = static_cast<double>(state.m_value());
    draw.stage_m.push_back(previous_m);
    emit(config, SearchEvent::Kind::Stage, previous_m);
  }
  draw.assignment = std::move(w);
  draw.m_value = previous_m;
  return draw;
}

template <typename Scalar>
AssignmentDraw run(const BalanceProblem<Scalar>& problem, const ThresholdPlan& plan,
                   const SamplerConfig& config, Rng& rng) {
  const auto start = std::chrono::steady_clock::now();
  AssignmentDraw draw;
  if (problem.kind() == DesignKind::Sequential) {
    draw = run_sequential(problem, plan, config, rng);
  } else {
    const double a = config.method == Method::CR ? std::numeric_limits<double>::infinity()
                                                 : single_threshold(plan);
    auto frame = make_frame(problem, config);
    auto state = uniform_start(frame, rng);
    emit(config, SearchEvent::Kind::Start, static_cast<double>(state.m_value()));
    draw.iterations = search(frame, state, a, config, rng, std::string());
    if (config.method == Method::CR) draw.iterations = 1;
    draw.m_value = static_cast<double>(state.m_value());
    draw.assignment = state.assignment();
  }
  draw.wall_time = std::chrono::steady_clock::now() - start;
  return draw;
}

inline void require_kind(DesignKind actual, DesignKind wanted, std::string_view sampler) {
  require(actual == wanted, Errc::ConfigInvalid,
          std::string(sampler) + " needs a " + std::string(kind_name(wanted)) + " design, got " +
              std::string(kind_name(actual)));
}

template <typename Scalar>
AssignmentDraw run_as(const BalanceProblem<Scalar>& problem, const ThresholdPlan& plan, SamplerConfig config,
                      Method method, Rng& rng) {
  config.method = method;
  return run(problem, plan, config, rng);
}

}  // namespace detail

/// Complete randomization over the design's feasible set.
template <typename Scalar>
AssignmentDraw sample_cr(const BalanceProblem<Scalar>& problem, Rng& rng) {
  SamplerConfig config;
  config.method = Method::CR;
  return detail::run(problem, std::numeric_limits<double>::infinity(), config, rng);
}

/// Acceptance-rejection: complete randomization repeated until M <= a (per
/// stage for sequential designs).
template <typename Scalar>
AssignmentDraw sample_arsrr(const BalanceProblem<Scalar>& problem, const ThresholdPlan& thresholds,
                            const SamplerConfig& config, Rng& rng) {
  return detail::run_as(problem, thresholds, config, Method::ARSRR, rng);
}

/// Pair-switching rerandomization for simple and sequential designs.
template <typename Scalar>
AssignmentDraw sample_psrr(const BalanceProblem<Scalar>& problem, const ThresholdPlan& thresholds,
                           const SamplerConfig& config, Rng& rng) {
  const auto kind = problem.kind();
  require(kind == DesignKind::Simple || kind == DesignKind::Sequential, Errc::ConfigInvalid,
          "PSRR supports simple and sequential designs only");
  return detail::run_as(problem, thresholds, config, Method::PSRR, rng);
}

template <typename Scalar>
AssignmentDraw sample_vnsrr(const BalanceProblem<Scalar>& problem, double a, const SamplerConfig& config,
                            Rng& rng) {
  detail::require_kind(problem.kind(), DesignKind::Simple, "VNSRR");
  return detail::run_as(problem, a, config, Method::VNSRR, rng);
}

template <typename Scalar>
AssignmentDraw sample_seq_vnsrr(const BalanceProblem<Scalar>& problem, const ThresholdPlan& thresholds,
                                const SamplerConfig& config, Rng& rng) {
  detail::require_kind(problem.kind(), DesignKind::Sequential, "SeqVNSRR");
  return detail::run_as(problem, thresholds, config, Method::VNSRR, rng);
}

template <typename Scalar>
AssignmentDraw sample_strat_vnsrr(const BalanceProblem<Scalar>& problem, double a, const SamplerConfig& config,
                                  Rng& rng) {
  detail::require_kind(problem.kind(), DesignKind::Stratified, "StratVNSRR");
  return detail::run_as(problem, a, config, Method::VNSRR, rng);
}

template <typename Scalar>
AssignmentDraw sample_clust_vnsrr(const BalanceProblem<Scalar>& problem, double a, const SamplerConfig& config,
                                  Rng& rng) {
  detail::require_kind(problem.kind(), DesignKind::Cluster, "ClustVNSRR");
  return detail::run_as(problem, a, config, Method::VNSRR, rng);
}

/// Dispatches on config.method and the problem's structure.
template <typename Scalar>
AssignmentDraw draw_assignment(const BalanceProblem<Scalar>& problem, const ThresholdPlan& thresholds,
                               const SamplerConfig& config, Rng& rng) {
  if (config.method == Method::PSRR) return sample_psrr(problem, thresholds, config, rng);
  return detail::run(problem, thresholds, config, rng);
}

/// `count` independent draws; draw i uses the stream stream_seed(config.seed, i),
/// so the result does not depend on `threads`.
template <typename Scalar>
std::vector<AssignmentDraw> sample_batch(const BalanceProblem<Scalar>& problem, const ThresholdPlan& thresholds,
                                         const SamplerConfig& config, Index count, unsigned threads = 1) {
  require(count >= 1, Errc::ConfigInvalid, "batch size must be at least 1");
  std::vector<AssignmentDraw> draws(static_cast<std::size_t>(count));
  std::atomic<Index> next{0};
  std::mutex error_mutex;
  Index error_index = count;
  std::optional<Error> error;

  const auto worker = [&] {
    for (Index i = next++; i < count; i = next++) {
      try {
        Rng rng(stream_seed(config.seed, static_cast<std::uint64_t>(i)));
        draws[static_cast<std::size_t>(i)] = draw_assignment(problem, thresholds, config, rng);
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error.emplace(e.code(), "draw " + std::to_string(i) + ": " + e.what());
        }
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) throw *error;
  return draws;
}

}  // namespace rerand
