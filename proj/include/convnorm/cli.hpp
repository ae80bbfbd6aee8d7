#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "convnorm/model.hpp"
#include "convnorm/train.hpp"

namespace convnorm {

enum class Subcommand { kTrain, kEval, kGradcheck, kPlanner, kSamplingDemo };

struct RunConfig {
  Subcommand subcommand = Subcommand::kTrain;
  TrainConfig train;
  ClassifierConfig model;
  std::string data_dir;  // falls back to CONVNORM_DATA_DIR
  std::string out;
  std::string checkpoint;
  std::size_t train_subset = 0;  // 0 keeps the whole split
  std::size_t val_subset = 0;
  std::size_t plan_h = 32;
  std::size_t plan_w = 32;
  std::size_t gradcheck_seeds = 10;
  std::size_t samples = 10000;      // sampling-demo N
  std::size_t replicates = 100;     // sampling-demo replicates
};

// Thrown for unknown flags or invalid values. `usage` carries the help text.
struct UsageError : std::runtime_error {
  UsageError(const std::string& what, std::string usage_text)
      : std::runtime_error(what), usage(std::move(usage_text)) {}
  std::string usage;
};

// Parses argv[1..]. `--help` is reported as a UsageError with an empty message.
RunConfig parse_args(const std::vector<std::string>& args);

// One line "key=value ..." covering every resolved field.
std::string describe(const RunConfig& cfg);

// Executes the subcommand; the return value is the process exit code.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// parse_args + run with usage/exception reporting; what main() calls.
int cli_main(int argc, char** argv);

}  // namespace convnorm
