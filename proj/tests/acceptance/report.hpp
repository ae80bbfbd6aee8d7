#pragma once

#include <chrono>
#include <string>
#include <vector>

namespace convnorm::acceptance {

// Collects one verdict per criterion and prints it as soon as it is known.
class Report {
 public:
  void record(const std::string& id, const std::string& title, bool passed,
              const std::string& detail, double seconds);
  // 0 when every recorded criterion passed.
  int exit_code() const;
  void summary() const;

 private:
  std::size_t passed_ = 0;
  std::size_t failed_ = 0;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string fmt(double v, int precision = 3);

}  // namespace convnorm::acceptance
