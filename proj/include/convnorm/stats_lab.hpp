#pragma once

// Plain Monte Carlo versus importance-sampled estimation of E_rho[g(x)].

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "convnorm/rng.hpp"

namespace convnorm::stats {

enum class DensityKind { kNormal, kExponential, kMixture };

struct Density {
  DensityKind kind = DensityKind::kNormal;
  // normal: a = mean, b = std. exponential: a = rate.
  // mixture: weight * N(a, b) + (1 - weight) * N(c, d).
  double a = 0.0;
  double b = 1.0;
  double c = 0.0;
  double d = 1.0;
  double weight = 1.0;

  static Density normal(double mean, double sd);
  static Density exponential(double rate);
  static Density mixture(double weight, double mean1, double sd1, double mean2, double sd2);

  double pdf(double x) const;
  double sample(Rng& rng) const;
  double mean() const;
  std::string str() const;
};

// The integrand g: identity, or x * 1(x > threshold).
struct Functional {
  bool tail = false;
  double threshold = 0.0;

  double operator()(double x) const { return (!tail || x > threshold) ? x : 0.0; }
};

struct SamplerSpec {
  Density target;
  Density proposal;
  Functional f;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
};

// Throws std::invalid_argument when n == 0.
void validate(const SamplerSpec& spec);

// (1/N) sum g(x_i), x_i ~ target.
double mc_mean(const SamplerSpec& spec);
// (1/N) sum g(x_i) p_i, x_i ~ proposal, p_i = target(x_i) / proposal(x_i).
// Throws std::domain_error if the proposal density vanishes at a draw.
double importance_mean(const SamplerSpec& spec);
// (1/N) sum x_i p_i over given samples and weights.
double weighted_mean(std::span<const double> samples, std::span<const double> weights);

// Closed-form radon-nikodym weight of N(0, 1) w.r.t. N(theta, 1):
// exp(-x theta + theta^2 / 2).
double shifted_normal_weight(double x, double theta);

struct ReportRow {
  std::string method;
  double mean = 0.0;
  double variance = 0.0;  // sample variance of the replicate estimates
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

// Replicate r uses seed spec.seed + r for both estimators.
std::vector<ReportRow> estimator_report(const SamplerSpec& spec, std::size_t replicates);
std::string report_csv(const std::vector<ReportRow>& rows);

inline constexpr const char* kReportHeader = "method,mean,variance,n,seed";

struct BuiltinSpec {
  std::string name;
  SamplerSpec spec;
  double true_value;
};

// Target/proposal pairs exercised by the demo and the unbiasedness checks.
std::vector<BuiltinSpec> builtin_specs(std::size_t n, std::uint64_t seed);

}  // namespace convnorm::stats
