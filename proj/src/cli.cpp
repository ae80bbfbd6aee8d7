#include "convnorm/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

#include "convnorm/checkpoint.hpp"
#include "convnorm/data.hpp"
#include "convnorm/dwck.hpp"
#include "convnorm/gradcheck_suite.hpp"
#include "convnorm/stats_lab.hpp"

namespace convnorm {

namespace {

// Train/val subsets stay fixed across training seeds.
constexpr std::uint64_t kSubsetSeed = 0;

const std::map<std::string, Subcommand>& subcommand_names() {
  static const std::map<std::string, Subcommand> names = {
      {"train", Subcommand::kTrain},
      {"eval", Subcommand::kEval},
      {"gradcheck", Subcommand::kGradcheck},
      {"planner", Subcommand::kPlanner},
      {"sampling-demo", Subcommand::kSamplingDemo},
  };
  return names;
}

std::string subcommand_name(Subcommand s) {
  for (const auto& [name, value] : subcommand_names()) {
    if (value == s) return name;
  }
  return "?";
}

std::pair<std::size_t, std::size_t> parse_dims(const std::string& text) {
  const auto x = text.find_first_of("xX");
  std::size_t h = 0, w = 0;
  bool ok = x != std::string::npos;
  if (ok) {
    try {
      std::size_t used_h = 0, used_w = 0;
      const std::string hs = text.substr(0, x), ws = text.substr(x + 1);
      h = std::stoul(hs, &used_h);
      w = std::stoul(ws, &used_w);
      ok = used_h == hs.size() && used_w == ws.size() && h > 0 && w > 0;
    } catch (const std::exception&) {
      ok = false;
    }
  }
  if (!ok) throw CLI::ValidationError("--dims", "expected HxW with positive integers, got " + text);
  return {h, w};
}

std::string plan_stack(const DwckPlan& plan) {
  std::string out = "[";
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    if (i) out += ",";
    out += "(" + std::to_string(plan.stages[i].kernel_h) + "," +
           std::to_string(plan.stages[i].kernel_w) + ")";
  }
  return out + "]";
}

bool finite_row(const MetricsRow& r) {
  return std::isfinite(r.train_loss) && std::isfinite(r.train_acc) &&
         std::isfinite(r.val_loss) && std::isfinite(r.val_acc) &&
         std::isfinite(r.weight_sum_drift);
}

std::filesystem::path require_data_dir(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) {
    throw std::runtime_error("no CIFAR-10 directory: pass --data-dir or set CONVNORM_DATA_DIR");
  }
  return cfg.data_dir;
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  out << text;
  if (!out_path.empty()) write_file_atomic(out_path, text);
}

int run_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.out.empty()) throw std::runtime_error("train: --out is required");
  const CifarSplits data = load_cifar10(require_data_dir(cfg));
  const Dataset train = cfg.train_subset ? subset(data.train, cfg.train_subset, kSubsetSeed)
                                         : data.train;
  const Dataset val = cfg.val_subset ? subset(data.test, cfg.val_subset, kSubsetSeed)
                                     : data.test;
  Rng rng(cfg.train.seed);
  AllCnn model = AllCnn::build(cfg.model, rng);
  const auto rows = train_model(model, train, val, cfg.train, [&](const MetricsRow& r, AllCnn&) {
    err << "epoch " << r.epoch << " " << format_metrics_row(r) << "\n";
  });
  write_metrics_csv(cfg.out, describe(cfg), rows);
  if (!cfg.checkpoint.empty()) save_checkpoint(model, cfg.checkpoint);
  out << "wrote " << cfg.out << " (" << rows.size() << " epochs)\n";
  for (const auto& r : rows) {
    if (!finite_row(r)) {
      err << "non-finite metrics at epoch " << r.epoch << "\n";
      return 1;
    }
  }
  return 0;
}

int run_eval(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  if (cfg.checkpoint.empty()) throw std::runtime_error("eval: --checkpoint is required");
  AllCnn model = load_checkpoint(cfg.checkpoint);
  const CifarSplits data = load_cifar10(require_data_dir(cfg));
  const Dataset val = cfg.val_subset ? subset(data.test, cfg.val_subset, kSubsetSeed)
                                     : data.test;
  const EvalResult r = evaluate(model, val, cfg.train.eval_batch_size);
  std::string text = "# " + describe(cfg) + "\nsplit,loss,accuracy,n\n";
  text += "val," + format_real(r.loss) + "," + format_real(r.accuracy) + "," +
          std::to_string(val.size()) + "\n";
  emit(text, cfg.out, out);
  return std::isfinite(r.loss) ? 0 : 1;
}

int run_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto entries = run_gradcheck_suite(cfg.gradcheck_seeds, cfg.train.seed);
  std::string text = "# " + describe(cfg) + "\nlayer,max_rel_error,seeds,tensors,status\n";
  bool all = true;
  for (const auto& e : entries) {
    all = all && e.passed();
    text += e.name + "," + format_real(e.max_rel_error) + "," + std::to_string(e.seeds) + "," +
            std::to_string(e.tensors) + "," + (e.passed() ? "PASS" : "FAIL") + "\n";
  }
  emit(text, cfg.out, out);
  return all ? 0 : 1;
}

int run_planner(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const DwckPlan plan = plan_dwck(cfg.plan_h, cfg.plan_w);
  std::string text = "# " + describe(cfg) + "\n" + plan.str() + "\n" + plan_stack(plan) + "\n";
  emit(text, cfg.out, out);
  return 0;
}

int run_sampling_demo(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  std::string text = "# " + describe(cfg) + "\n" + stats::kReportHeader + "\n";
  for (const auto& b : stats::builtin_specs(cfg.samples, cfg.train.seed)) {
    const auto rows = stats::estimator_report(b.spec, cfg.replicates);
    const std::string body = stats::report_csv(rows);
    // Drop the per-report header and qualify each method with its pair name.
    std::istringstream lines(body.substr(body.find('\n') + 1));
    for (std::string line; std::getline(lines, line);) text += b.name + "/" + line + "\n";
  }
  emit(text, cfg.out, out);
  return 0;
}

}  // namespace

RunConfig parse_args(const std::vector<std::string>& args) {
  RunConfig cfg;
  CLI::App app{"convnorm: normalization-layer experiments on an all-convolutional classifier",
               "convnorm"};
  app.fallthrough();
  app.require_subcommand(1, 1);

  std::string norm = std::string(to_string(cfg.model.norm));
  std::string dims = "32x32";
  bool no_affine = false;

  app.add_option("--norm", norm, "normalization kind")
      ->check(CLI::IsMember({"none", "batch", "dwck", "learned"}))
      ->capture_default_str();
  app.add_option("--lr", cfg.train.lr, "SGD learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--batch-size", cfg.train.batch_size)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--epochs", cfg.train.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--seed", cfg.train.seed)->capture_default_str();
  app.add_option("--train-subset", cfg.train_subset, "stratified train images (0 = all)")
      ->capture_default_str();
  app.add_option("--val-subset", cfg.val_subset, "stratified test-split images (0 = all)")
      ->capture_default_str();
  app.add_option("--width-scale", cfg.model.width_scale)
      ->check(CLI::Range(1e-9, 1.0))
      ->capture_default_str();
  app.add_option("--jitter", cfg.model.jitter, "DWCK init jitter in [0, 0.5)")
      ->check(CLI::Range(0.0, 0.4999999))
      ->capture_default_str();
  app.add_flag("--no-affine", no_affine, "drop the learnable gamma/beta");
  app.add_flag("--weighted-var", cfg.model.weighted_var, "DWCK-weighted variance");
  app.add_option("--data-dir", cfg.data_dir, "CIFAR-10 binary directory");
  app.add_option("--out", cfg.out, "output CSV");
  app.add_option("--checkpoint", cfg.checkpoint, "checkpoint to write (train) or read (eval)");
  app.add_option("--dims", dims, "planner extents HxW")->capture_default_str();
  app.add_option("--gradcheck-seeds", cfg.gradcheck_seeds)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--samples", cfg.samples, "sampling-demo draws per estimate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--replicates", cfg.replicates)->check(CLI::PositiveNumber)->capture_default_str();

  for (const auto& [name, value] : subcommand_names()) {
    app.add_subcommand(name)->callback([&cfg, value = value] { cfg.subcommand = value; });
  }

  // Taken before parsing: afterwards help() describes only the selected subcommand.
  const std::string usage = app.help();
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw UsageError("", usage);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what(), usage);
  }

  try {
    const auto [h, w] = parse_dims(dims);
    cfg.plan_h = h;
    cfg.plan_w = w;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what(), usage);
  }
  cfg.model.norm = *parse_norm_kind(norm);
  cfg.model.affine = !no_affine;
  if (cfg.data_dir.empty()) {
    if (const char* env = std::getenv("CONVNORM_DATA_DIR")) cfg.data_dir = env;
  }
  return cfg;
}

std::string describe(const RunConfig& cfg) {
  std::ostringstream s;
  s << "subcommand=" << subcommand_name(cfg.subcommand) << " norm=" << to_string(cfg.model.norm)
    << " lr=" << format_real(cfg.train.lr) << " batch_size=" << cfg.train.batch_size
    << " epochs=" << cfg.train.epochs << " seed=" << cfg.train.seed
    << " train_subset=" << cfg.train_subset << " val_subset=" << cfg.val_subset
    << " width_scale=" << format_real(cfg.model.width_scale)
    << " jitter=" << format_real(cfg.model.jitter) << " affine=" << cfg.model.affine
    << " weighted_var=" << cfg.model.weighted_var
    << " project_nonneg=" << cfg.train.project_nonneg
    << " eval_batch_size=" << cfg.train.eval_batch_size << " data_dir=" << cfg.data_dir
    << " out=" << cfg.out << " checkpoint=" << cfg.checkpoint << " dims=" << cfg.plan_h << "x"
    << cfg.plan_w << " gradcheck_seeds=" << cfg.gradcheck_seeds << " samples=" << cfg.samples
    << " replicates=" << cfg.replicates;
  return s.str();
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.subcommand == Subcommand::kTrain) out << "# " << describe(cfg) << "\n";
  switch (cfg.subcommand) {
    case Subcommand::kTrain: return run_train(cfg, out, err);
    case Subcommand::kEval: return run_eval(cfg, out, err);
    case Subcommand::kGradcheck: return run_gradcheck(cfg, out, err);
    case Subcommand::kPlanner: return run_planner(cfg, out, err);
    case Subcommand::kSamplingDemo: return run_sampling_demo(cfg, out, err);
  }
  return 2;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  RunConfig cfg;
  try {
    cfg = parse_args(args);
  } catch (const UsageError& e) {
    if (std::string(e.what()).empty()) {
      std::cout << e.usage;
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n\n" << e.usage;
    return 2;
  }
  try {
    return run(cfg, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace convnorm
