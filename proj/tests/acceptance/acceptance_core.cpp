// Property-based acceptance checks that need no external data.

#include <cmath>
#include <iostream>
#include <sstream>

#include "cifar_fixture.hpp"
#include "convnorm/batch_norm.hpp"
#include "convnorm/dwck.hpp"
#include "convnorm/gradcheck_suite.hpp"
#include "convnorm/learned_stats.hpp"
#include "convnorm/stats_lab.hpp"
#include "convnorm/train.hpp"
#include "oracles.hpp"
#include "report.hpp"

using namespace convnorm;
using namespace convnorm::acceptance;
using oracle::random_tensor;

namespace {

// Pilot (seeds 1000..1099, N = 10^4, proposal N(4.5, 1)): MC variance
// about 3e-8, importance variance about 1e-11, factor about 3.4e3. The pass
// floor stays at the required 10; the pilot is re-run and printed each time.
constexpr double kTailVarianceFloor = 10.0;
constexpr std::uint64_t kPilotSeed = 1000;

void gradients(Report& r, std::vector<GradCheckEntry>& entries) {
  Stopwatch sw;
  entries = run_gradcheck_suite(10, 1);
  double worst = 0.0;
  std::string worst_name;
  bool ok = true;
  for (const auto& e : entries) {
    ok = ok && e.passed() && e.seeds >= 10;
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
    if (!e.passed()) std::cout << "  failing: " << e.name << " " << fmt(e.max_rel_error) << "\n";
  }
  const double t = sw.seconds();
  r.record("1", "gradient check, every op and norm layer",
           ok && t < 120.0,
           std::to_string(entries.size()) + " entries x 10 seeds, worst " + fmt(worst) + " (" +
               worst_name + "), limit 1e-4, runtime limit 120 s",
           t);
}

void bn_oracle(Report& r) {
  Stopwatch sw;
  Rng rng(2);
  double worst_stat = 0.0, worst_out = 0.0;
  for (int b = 0; b < 100; ++b) {
    const std::size_t n = 1 + rng.below(8), c = 1 + rng.below(6);
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
    const double lo = rng.uniform(-5, 0), hi = lo + rng.uniform(0.1, 10);
    const auto x = random_tensor<float>({n, c, h, w}, rng, lo, hi);
    auto s = BatchNormState<float>::create(c);
    const auto y = batch_norm_forward(x, s, true);
    const auto flat = oracle::batch_moments(x);
    for (std::size_t k = 0; k < c; ++k) {
      worst_stat = std::max(worst_stat, std::abs(s.batch_mean[k] - flat.mean[k]));
      worst_stat = std::max(worst_stat, std::abs(s.batch_var[k] - flat.var[k]));
    }
    const auto want = oracle::batch_norm(x, std::vector<double>(c, 1.0),
                                         std::vector<double>(c, 0.0), 1e-5);
    for (std::size_t i = 0; i < want.size(); ++i)
      worst_out = std::max(worst_out, std::abs(y.values()[i] - want[i]));
  }
  r.record("2", "batch norm statistics against flat-loop sums",
           worst_stat < 1e-5 && worst_out < 1e-5,
           "100 float batches, max stat error " + fmt(worst_stat) + ", max output error " +
               fmt(worst_out) + ", limit 1e-5",
           sw.seconds());
}

void dwck_equals_bn(Report& r) {
  Stopwatch sw;
  Rng rng(3);
  double worst = 0.0;
  for (std::size_t dim : {4u, 8u, 16u, 32u}) {
    for (int b = 0; b < 20; ++b) {
      const std::size_t c = 1 + rng.below(4), n = 1 + rng.below(6);
      const auto x = random_tensor<float>({n, c, dim, dim}, rng, -2.0, 3.0);
      Rng init(b);
      DwckOptions opt;
      opt.jitter = 0.0;
      auto d = DwckNormState<float>::create(c, dim, dim, init, opt);
      auto bn = BatchNormState<float>::create(c);
      const auto yd = dwck_norm_forward(x, d, true);
      const auto yb = batch_norm_forward(x, bn, true);
      for (std::size_t i = 0; i < yd.numel(); ++i)
        worst = std::max(worst, static_cast<double>(std::abs(yd.values()[i] - yb.values()[i])));
    }
  }
  r.record("3", "uniform DWCK normalization equals batch norm", worst < 1e-5,
           "dims 4, 8, 16, 32 x 20 float batches, max elementwise difference " + fmt(worst) +
               ", limit 1e-5",
           sw.seconds());
}

void planner(Report& r) {
  Stopwatch sw;
  std::size_t bad = 0;
  for (std::size_t h = 1; h <= 64; ++h) {
    for (std::size_t w = 1; w <= 64; ++w) {
      const auto p = plan_dwck(h, w);
      std::size_t ph = p.pad_h, pw = p.pad_w;
      bool ok = ph >= h && pw >= w && ph == oracle::smooth_ceiling(h) &&
                pw == oracle::smooth_ceiling(w);
      for (const auto& st : p.stages) {
        ok = ok && st.kernel_h == st.stride_h && st.kernel_w == st.stride_w &&
             ph % st.kernel_h == 0 && pw % st.kernel_w == 0;
        if (!ok) break;
        ph /= st.kernel_h;
        pw /= st.kernel_w;
      }
      if (!ok || ph != 1 || pw != 1) ++bad;
    }
  }
  const auto p32 = plan_dwck(32, 32);
  const std::vector<DwckStage> want{{4, 4, 4, 4}, {2, 2, 2, 2}, {2, 2, 2, 2}, {2, 2, 2, 2}};
  const bool exact = p32.stages == want && p32.pad_h == 32 && p32.pad_w == 32;
  r.record("4", "planner soundness for 1 <= H, W <= 64", bad == 0 && exact,
           std::to_string(bad) + " of 4096 plans fail to collapse to 1x1; 32x32 -> " +
               (exact ? "[(4,4),(2,2),(2,2),(2,2)]" : "wrong stack: " + p32.str()),
           sw.seconds());
}

void initialization(Report& r) {
  Stopwatch sw;
  double worst_uniform = 0.0;
  std::size_t outside = 0;
  const double j = 0.1;
  Rng rng(5);
  const std::vector<std::pair<std::size_t, std::size_t>> dims{{4, 4}, {8, 8}, {16, 16}, {32, 32},
                                                              {31, 31}, {7, 12}, {5, 5}};
  for (int draw = 0; draw < 1000; ++draw) {
    const auto [h, w] = dims[static_cast<std::size_t>(draw) % dims.size()];
    const double target = 1.0 / static_cast<double>(h * w);
    DwckOptions flat;
    flat.jitter = 0.0;
    const auto s0 = DwckNormState<double>::create(2, h, w, rng, flat);
    const Padding pad = plan_padding(s0.plan, h, w);
    for (const auto& ch : effective_weights(s0))
      for (std::size_t y = pad.top; y < pad.top + h; ++y)
        for (std::size_t x = pad.left; x < pad.left + w; ++x)
          worst_uniform = std::max(worst_uniform, std::abs(ch[y * s0.plan.pad_w + x] - target));

    DwckOptions jit;
    jit.jitter = j;
    const auto s1 = DwckNormState<double>::create(2, h, w, rng, jit);
    const double n = static_cast<double>(s1.plan.stages.size());
    const double lo = std::pow(1 - j, n) * target, hi = std::pow(1 + j, n) * target;
    for (const auto& ch : effective_weights(s1))
      for (double e : ch)
        if (e < lo * (1 - 1e-12) || e > hi * (1 + 1e-12)) ++outside;
  }
  r.record("5", "n-th root initialization", worst_uniform < 1e-9 && outside == 0,
           "1000 inits; jitter 0 max |w - 1/(HW)| " + fmt(worst_uniform) +
               " (limit 1e-9); jitter 0.1: " + std::to_string(outside) +
               " effective weights outside [(1-j)^n, (1+j)^n]/(HW)",
           sw.seconds());
}

void worked_example(Report& r) {
  Stopwatch sw;
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng init(0);
    DwckOptions opt;
    opt.jitter = 0.0;
    auto s = DwckNormState<double>::create(1, 4, 4, init, opt);
    double x[4][4], p[2][2], q[2][2];
    std::vector<double> xs;
    for (auto& row : x)
      for (double& v : row) xs.push_back(v = rng.uniform(-10, 10));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 2; ++k) {
        s.stage_weights[0].mutable_values()[i * 2 + k] = p[i][k] = rng.uniform(-1, 1);
        s.stage_weights[1].mutable_values()[i * 2 + k] = q[i][k] = rng.uniform(-1, 1);
      }
    const double got = dwck_mean(Tensor<double>(Shape{1, 1, 4, 4}, xs), s).item();
    worst = std::max(worst, std::abs(got - oracle::two_stage_closed_form(x, p, q)));
  }
  r.record("6", "4x4 two-stage stack equals the closed form", worst < 1e-12,
           "1000 random (x, p, q), max difference " + fmt(worst) + ", limit 1e-12", sw.seconds());
}

void importance_sampling(Report& r) {
  Stopwatch sw;
  bool exact = true;
  for (const auto& b : stats::builtin_specs(10000, 7)) {
    stats::SamplerSpec same = b.spec;
    same.proposal = same.target;
    exact = exact && stats::importance_mean(same) == stats::mc_mean(same);
  }
  r.record("7a", "uniform-weight estimator equals plain Monte Carlo", exact,
           "proposal = target on every builtin target, N = 10^4, compared with ==", sw.seconds());

  Stopwatch sw2;
  auto tail = stats::builtin_specs(10000, kPilotSeed).back();
  const auto pilot = stats::estimator_report(tail.spec, 100);
  const double pilot_factor = pilot[0].variance / pilot[1].variance;
  tail.spec.seed = 1;
  const auto rows = stats::estimator_report(tail.spec, 100);
  const double factor = rows[0].variance / rows[1].variance;
  r.record("7b", "tail functional variance reduction", factor > kTailVarianceFloor,
           "E[x 1(x>4)] under N(0,1), proposal N(4.5,1), N = 10^4, 100 replicates: MC var " +
               fmt(rows[0].variance) + ", IS var " + fmt(rows[1].variance) + ", factor " +
               fmt(factor) + " (pilot " + fmt(pilot_factor) + "), floor " +
               fmt(kTailVarianceFloor),
           sw2.seconds());
}

void learned_stats(Report& r, const std::vector<GradCheckEntry>& entries) {
  Stopwatch sw;
  Rng rng(9);
  const auto l1 = build_stat_nets<float>(1, 96, rng);
  const auto l5 = build_stat_nets<float>(5, 192, rng);
  const bool counts = l1.mean_net.parameter_count() == 85 && l1.std_net.parameter_count() == 85 &&
                      l1.mean_net.stages.size() == 3 && l5.mean_net.stages.size() == 4;
  double worst = -1.0;
  for (const auto& e : entries)
    if (e.name.rfind("learned", 0) == 0) worst = std::max(worst, e.max_rel_error);
  r.record("9a", "learned-stats architecture and gradient",
           counts && worst >= 0.0 && worst < kGradCheckTolerance,
           "layer-1 nets " + std::to_string(l1.mean_net.parameter_count()) + " + " +
               std::to_string(l1.std_net.parameter_count()) + " parameters (want 85 each), " +
               std::to_string(l5.mean_net.stages.size()) + " stages at layer 5, gradcheck " +
               fmt(worst),
           sw.seconds());
}

std::string mask_wall_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] != '#' && line.rfind("epoch,", 0) != 0) {
      std::size_t pos = 0;
      for (int k = 0; k < 5; ++k) pos = line.find(',', pos) + 1;
      const std::size_t end = line.find(',', pos);
      line.replace(pos, end - pos, "*");
    }
    out += line + "\n";
  }
  return out;
}

void determinism(Report& r) {
  Stopwatch sw;
  const auto train = testing::synthetic_cifar(200, 11);
  const auto val = testing::synthetic_cifar(100, 12);
  bool same = true;
  for (NormKind kind : {NormKind::kNone, NormKind::kBatch, NormKind::kDwck, NormKind::kLearned}) {
    std::string csv[2];
    for (auto& text : csv) {
      ClassifierConfig mc;
      mc.norm = kind;
      mc.width_scale = 0.25;
      Rng rng(1);
      AllCnn m = AllCnn::build(mc, rng);
      TrainConfig tc;
      tc.epochs = 2;
      const auto rows = train_model(m, train, val, tc);
      text = std::string(kMetricsHeader) + "\n";
      for (const auto& row : rows) text += format_metrics_row(row) + "\n";
      text = mask_wall_time(text);
    }
    same = same && csv[0] == csv[1];
  }
  r.record("10-synthetic", "repeated runs give identical metrics", same,
           "every norm kind, 2 epochs on 200 synthetic images, twice; CSV text compared with "
           "wall_time_s masked",
           sw.seconds());
}

}  // namespace

int main() {
  Report report;
  std::vector<GradCheckEntry> entries;
  gradients(report, entries);
  bn_oracle(report);
  dwck_equals_bn(report);
  planner(report);
  initialization(report);
  worked_example(report);
  importance_sampling(report);
  learned_stats(report, entries);
  determinism(report);
  report.summary();
  return report.exit_code();
}
