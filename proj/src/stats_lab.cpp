#include "convnorm/stats_lab.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "convnorm/train.hpp"

namespace convnorm::stats {

namespace {

double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

Density Density::normal(double mean, double sd) {
  if (!(sd > 0.0)) throw std::invalid_argument("normal density: sd must be > 0");
  return {DensityKind::kNormal, mean, sd, 0.0, 1.0, 1.0};
}

Density Density::exponential(double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("exponential density: rate must be > 0");
  return {DensityKind::kExponential, rate, 1.0, 0.0, 1.0, 1.0};
}

Density Density::mixture(double weight, double mean1, double sd1, double mean2,
                         double sd2) {
  if (!(weight > 0.0 && weight < 1.0) || !(sd1 > 0.0) || !(sd2 > 0.0)) {
    throw std::invalid_argument("mixture density: need 0 < weight < 1 and positive sds");
  }
  return {DensityKind::kMixture, mean1, sd1, mean2, sd2, weight};
}

double Density::pdf(double x) const {
  switch (kind) {
    case DensityKind::kNormal:
      return normal_pdf(x, a, b);
    case DensityKind::kExponential:
      return x < 0.0 ? 0.0 : a * std::exp(-a * x);
    case DensityKind::kMixture:
      return weight * normal_pdf(x, a, b) + (1.0 - weight) * normal_pdf(x, c, d);
  }
  return 0.0;
}

double Density::sample(Rng& rng) const {
  switch (kind) {
    case DensityKind::kNormal:
      return a + b * rng.normal();
    case DensityKind::kExponential:
      return rng.exponential(a);
    case DensityKind::kMixture:
      return rng.uniform() < weight ? a + b * rng.normal() : c + d * rng.normal();
  }
  return 0.0;
}

double Density::mean() const {
  switch (kind) {
    case DensityKind::kNormal: return a;
    case DensityKind::kExponential: return 1.0 / a;
    case DensityKind::kMixture: return weight * a + (1.0 - weight) * c;
  }
  return 0.0;
}

std::string Density::str() const {
  switch (kind) {
    case DensityKind::kNormal:
      return "normal(" + format_real(a) + "," + format_real(b) + ")";
    case DensityKind::kExponential:
      return "exponential(" + format_real(a) + ")";
    case DensityKind::kMixture:
      return "mixture(" + format_real(weight) + ";" + format_real(a) + "," +
             format_real(b) + ";" + format_real(c) + "," + format_real(d) + ")";
  }
  return "?";
}

void validate(const SamplerSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("sampler: sample count must be >= 1");
}

double mc_mean(const SamplerSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) acc += spec.f(spec.target.sample(rng));
  return acc / static_cast<double>(spec.n);
}

double importance_mean(const SamplerSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double x = spec.proposal.sample(rng);
    const double q = spec.proposal.pdf(x);
    if (!(q > 0.0)) {
      throw std::domain_error("importance sampling: proposal density is zero at draw " +
                              std::to_string(i) + " (x = " + format_real(x) +
                              "); target is not absolutely continuous w.r.t. proposal");
    }
    acc += spec.f(x) * (spec.target.pdf(x) / q);
  }
  return acc / static_cast<double>(spec.n);
}

double weighted_mean(std::span<const double> samples, std::span<const double> weights) {
  if (samples.size() != weights.size() || samples.empty()) {
    throw std::invalid_argument("weighted_mean: sample and weight counts differ or are zero");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) acc += samples[i] * weights[i];
  return acc / static_cast<double>(samples.size());
}

double shifted_normal_weight(double x, double theta) {
  return std::exp(-x * theta + 0.5 * theta * theta);
}

std::vector<ReportRow> estimator_report(const SamplerSpec& spec, std::size_t replicates) {
  validate(spec);
  if (replicates == 0) throw std::invalid_argument("report: replicates must be >= 1");
  std::vector<double> mc(replicates), is(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    SamplerSpec rep = spec;
    rep.seed = spec.seed + r;
    mc[r] = mc_mean(rep);
    is[r] = importance_mean(rep);
  }
  auto summarize = [&](const std::string& method, const std::vector<double>& v) {
    double m = 0.0;
    for (double e : v) m += e;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    if (v.size() > 1) {
      for (double e : v) var += (e - m) * (e - m);
      var /= static_cast<double>(v.size() - 1);
    }
    return ReportRow{method, m, var, spec.n, spec.seed};
  };
  return {summarize("monte_carlo", mc), summarize("importance", is)};
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += r.method + "," + format_real(r.mean) + "," + format_real(r.variance) + "," +
           std::to_string(r.n) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<BuiltinSpec> builtin_specs(std::size_t n, std::uint64_t seed) {
  const double tail_value = std::exp(-8.0) / std::sqrt(2.0 * std::numbers::pi);
  return {
      {"normal_shifted_proposal",
       {Density::normal(0.0, 1.0), Density::normal(0.5, 1.0), {}, n, seed},
       0.0},
      {"exponential_heavier_proposal",
       {Density::exponential(1.0), Density::exponential(0.5), {}, n, seed},
       1.0},
      {"mixture_wide_proposal",
       {Density::mixture(0.3, -2.0, 0.5, 3.0, 1.0), Density::normal(1.0, 3.0), {}, n, seed},
       0.3 * -2.0 + 0.7 * 3.0},
      // E[x 1(x > 4)] under N(0, 1) equals the standard normal density at 4.
      {"normal_tail_above_4",
       {Density::normal(0.0, 1.0), Density::normal(4.5, 1.0), {true, 4.0}, n, seed},
       tail_value},
  };
}

}  // namespace convnorm::stats
