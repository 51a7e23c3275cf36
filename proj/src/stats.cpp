#include "distilkit/stats.hpp"

#include <cmath>
#include <functional>

#include "distilkit/error.hpp"

namespace distilkit {

const char* metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::ACC: return "acc";
    case MetricKind::F1: return "f1";
    case MetricKind::MCC: return "mcc";
  }
  return "unknown";
}

MetricKind metric_from_name(const std::string& name) {
  for (MetricKind k : {MetricKind::ACC, MetricKind::F1, MetricKind::MCC})
    if (name == metric_name(k)) return k;
  throw ConfigInvalid("unknown metric: " + name);
}

double metric(MetricKind kind, const std::vector<int>& predictions,
              const std::vector<int>& golds) {
  if (predictions.size() != golds.size() || predictions.empty())
    throw LengthMismatch("predictions and golds must be equal-length and nonempty");
  if (kind == MetricKind::ACC) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < golds.size(); ++i)
      if (predictions[i] == golds[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(golds.size());
  }
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (predictions[i] != 0 && predictions[i] != 1)
      throw LengthMismatch("F1/MCC need binary predictions");
    if (golds[i] != 0 && golds[i] != 1) throw LengthMismatch("F1/MCC need binary golds");
    if (predictions[i] == 1 && golds[i] == 1) ++tp;
    else if (predictions[i] == 0 && golds[i] == 0) ++tn;
    else if (predictions[i] == 1) ++fp;
    else ++fn;
  }
  if (kind == MetricKind::F1) {
    double denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2 * tp / denom;
  }
  double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  return denom == 0 ? 0.0 : (tp * tn - fp * fn) / denom;
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mu = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

namespace {

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// modified Lentz evaluation of the incomplete-beta continued fraction
double incomplete_beta_cf(double x, double a, double b) {
  constexpr double tiny = 1e-300;
  constexpr double tolerance = 1e-15;
  constexpr int max_terms = 100000;
  auto numer = [x, a, b](int n) {
    if (n % 2 == 0) {
      double m = n / 2;
      return m * (b - m) * x / (a + 2.0 * m - 1.0) / (a + 2.0 * m);
    }
    double m = (n - 1) / 2;
    return -(a + m) * (a + b + m) * x / (a + 2.0 * m) / (a + 2.0 * m + 1.0);
  };
  double ret = 1.0;
  double c = ret;
  double d = 0.0;
  for (int n = 1; n < max_terms; ++n) {
    d = 1.0 + numer(n) * d;
    if (d == 0.0) d = tiny;
    c = 1.0 + numer(n) / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    double mult = c * d;
    ret *= mult;
    if (std::fabs(mult - 1.0) <= tolerance) break;
  }
  return ret;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(x >= 0.0 && x <= 1.0 && a > 0.0 && b > 0.0)) return NAN;
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double logx = std::log(x);
  double logy = std::log1p(-x);
  if (x <= (a + 1.0) / (a + b + 2.0))
    return std::exp(logx * a + logy * b - log_beta(a, b)) / a / incomplete_beta_cf(x, a, b);
  return 1.0 -
         std::exp(logy * b + logx * a - log_beta(a, b)) / b / incomplete_beta_cf(1.0 - x, b, a);
}

double student_t_cdf(double x, double dof) {
  if (!(dof > 0)) return NAN;
  double tail = regularized_incomplete_beta(dof / (x * x + dof), dof / 2.0, 0.5) / 2.0;
  return x >= 0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw LengthMismatch("paired series must have equal length");
  if (a.size() < 2) throw TooFewPairs("need at least 2 pairs, got " + std::to_string(a.size()));

  std::vector<double> diffs(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];
  const int n = static_cast<int>(diffs.size());
  double mu = mean_of(diffs);
  double sd = sample_std(diffs);

  TTestResult result;
  result.dof = n - 1;
  if (sd == 0.0) {
    // all differences identical: p = 1 when they are zero, else p -> 0
    if (mu == 0.0) {
      result.t = 0.0;
      result.p = 1.0;
    } else {
      result.t = mu > 0 ? HUGE_VAL : -HUGE_VAL;
      result.p = 0.0;
    }
    return result;
  }
  result.t = mu / (sd / std::sqrt(static_cast<double>(n)));
  result.p = 2.0 * (1.0 - student_t_cdf(std::fabs(result.t), static_cast<double>(result.dof)));
  return result;
}

}  // namespace distilkit
