#pragma once

#include <string>
#include <utility>
#include <vector>

namespace distilkit {

enum class MetricKind { ACC, F1, MCC };

const char* metric_name(MetricKind kind);
MetricKind metric_from_name(const std::string& name);

// ACC on any label set; F1 and MCC on binary labels with positive class 1.
// Degenerate denominators yield 0 rather than NaN.
double metric(MetricKind kind, const std::vector<int>& predictions,
              const std::vector<int>& golds);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int dof = 0;
};

// Two-sided paired t-test. Conventions for degenerate inputs: all-zero
// differences give p = 1; identical nonzero differences give p = 0.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

double mean_of(const std::vector<double>& xs);
// Sample standard deviation (n - 1); 0 for fewer than two points.
double sample_std(const std::vector<double>& xs);

// CDF of Student's t distribution via the regularized incomplete beta
// function (continued fraction, accurate to ~1e-10).
double student_t_cdf(double x, double dof);
double regularized_incomplete_beta(double x, double a, double b);

}  // namespace distilkit
