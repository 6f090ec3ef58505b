#include "rerand/chisq.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "rerand/error.hpp"

namespace rerand {

namespace {

constexpr double kEps = 1e-17;
constexpr int kMaxTerms = 1'000'000;

double log_gamma_prefactor(double a, double x) {
  return -x + a * std::log(x) - std::lgamma(a);
}

double gamma_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < kMaxTerms; ++n) {
    term *= x / (a + n);
    sum += term;
    if (term < sum * kEps) break;
  }
  return sum * std::exp(log_gamma_prefactor(a, x));
}

double gamma_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_gamma_prefactor(a, x)) * h;
}

void check_df(int df) {
  require(df >= 1, Errc::ConfigInvalid, "degrees of freedom must be positive");
}

void check_prob(double prob) {
  require(prob > 0.0 && prob < 1.0, Errc::ConfigInvalid,
          "probability must lie in (0, 1), got " + std::to_string(prob));
}

template <typename Cdf>
double bisect_quantile(Cdf&& cdf, double prob, double hi) {
  double lo = 0.0;
  while (cdf(hi) < prob) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < prob)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double regularized_gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return gamma_series(a, x);
  return 1.0 - gamma_continued_fraction(a, x);
}

double regularized_gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - gamma_series(a, x);
  return gamma_continued_fraction(a, x);
}

double chisq_cdf(int df, double x) {
  check_df(df);
  return regularized_gamma_p(0.5 * df, 0.5 * x);
}

double chisq_pdf(int df, double x) {
  check_df(df);
  if (x < 0.0) return 0.0;
  const double k = 0.5 * df;
  if (x == 0.0) return df == 1 ? std::numeric_limits<double>::infinity() : (df == 2 ? 0.5 : 0.0);
  return std::exp((k - 1.0) * std::log(x) - 0.5 * x - k * std::log(2.0) - std::lgamma(k));
}

double chisq_quantile(int df, double prob) {
  check_df(df);
  check_prob(prob);
  const auto cdf = [df](double x) { return chisq_cdf(df, x); };
  double x = bisect_quantile(cdf, prob, std::max(1.0, static_cast<double>(df)));
  for (int it = 0; it < 3; ++it) {
    const double density = chisq_pdf(df, x);
    if (!(density > 0.0) || !std::isfinite(density)) break;
    const double next = x - (cdf(x) - prob) / density;
    if (!(next > 0.0) || std::abs(next - x) > 1e-6 * x) break;
    if (std::abs(cdf(next) - prob) >= std::abs(cdf(x) - prob)) break;
    x = next;
  }
  return x;
}

double noncentral_chisq_cdf(int df, double noncentrality, double x) {
  check_df(df);
  require(noncentrality >= 0.0, Errc::ConfigInvalid, "noncentrality must be nonnegative");
  if (noncentrality == 0.0) return chisq_cdf(df, x);
  if (x <= 0.0) return 0.0;
  const double mean = 0.5 * noncentrality;
  const double log_mean = std::log(mean);
  double total = 0.0;
  double mass = 0.0;
  for (int j = 0; j < kMaxTerms; ++j) {
    const double weight = std::exp(-mean + j * log_mean - std::lgamma(j + 1.0));
    mass += weight;
    if (weight > 0.0) total += weight * regularized_gamma_p(0.5 * df + j, 0.5 * x);
    if (j >= mean && 1.0 - mass < 1e-12) break;
  }
  return std::min(1.0, total);
}

double noncentral_chisq_quantile(int df, double noncentrality, double prob) {
  check_df(df);
  check_prob(prob);
  require(noncentrality >= 0.0, Errc::ConfigInvalid, "noncentrality must be nonnegative");
  if (noncentrality == 0.0) return chisq_quantile(df, prob);
  const double hi = df + noncentrality + 40.0 * std::sqrt(2.0 * df + 4.0 * noncentrality);
  const auto cdf = [&](double x) { return noncentral_chisq_cdf(df, noncentrality, x); };
  return bisect_quantile(cdf, prob, hi);
}

double ThresholdSpec::threshold() const {
  check_df(df);
  if (const auto* pa = std::get_if<AcceptanceProbability>(&mode)) {
    check_prob(pa->value);
    return chisq_quantile(df, pa->value);
  }
  const double a = std::get<ExplicitThreshold>(mode).value;
  require(a > 0.0, Errc::ConfigInvalid, "threshold must be positive");
  return a;
}

double sequential_stage_threshold(const SequentialThresholdSpec& spec, Index stage, double previous_m) {
  const auto k = static_cast<std::size_t>(stage);
  require(!spec.stage_shares.empty() && spec.stage_shares.size() == spec.stage_sizes.size(),
          Errc::ConfigInvalid, "stage shares and stage sizes must align");
  require(k < spec.stage_sizes.size(), Errc::StageMismatch, "stage index out of range");
  const double share = spec.stage_shares[k];
  require(share >= 1.0, Errc::ConfigInvalid, "stage shares must be at least 1");
  double before = 0.0;
  for (std::size_t g = 0; g < k; ++g) before += static_cast<double>(spec.stage_sizes[g]);
  const double size = static_cast<double>(spec.stage_sizes[k]);
  if (share == 1.0) return std::numeric_limits<double>::infinity();
  const double noncentrality = k == 0 ? 0.0 : before / size * previous_m;
  const double q = noncentral_chisq_quantile(spec.df, noncentrality, 1.0 / share);
  return size / (before + size) * q;
}

std::vector<double> sequential_thresholds(const SequentialThresholdSpec& spec,
                                          std::span<const double> realized_m_prev) {
  require(realized_m_prev.size() == spec.stage_sizes.size(), Errc::StageMismatch,
          "need one realized M per stage");
  std::vector<double> thresholds;
  for (std::size_t k = 0; k < spec.stage_sizes.size(); ++k)
    thresholds.push_back(sequential_stage_threshold(spec, static_cast<Index>(k), realized_m_prev[k]));
  return thresholds;
}

}  // namespace rerand
