#pragma once

// CIFAR-10 binary (version 1) ingestion and deterministic batching.
// Each record is one label byte followed by 3 x 1024 pixel bytes, channel
// planar and row-major within a channel.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convnorm/tensor.hpp"

namespace convnorm {

inline constexpr std::size_t kCifarClasses = 10;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarImageBytes = kCifarChannels * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecordBytes = kCifarImageBytes + 1;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

struct Dataset {
  // size() images of (3, 32, 32) values in [0, 1], contiguous.
  std::vector<float> pixels;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  // (k, 3, 32, 32) batch of the given images.
  Tensor<float> images(std::span<const std::size_t> indices) const;
  // (k, 10, 1, 1) one-hot rows.
  Tensor<float> one_hot(std::span<const std::size_t> indices) const;
  // The 3073-byte record that encodes image i.
  std::vector<std::uint8_t> record(std::size_t i) const;
};

// Parses whole records; `source` names the input in error messages.
Dataset parse_cifar_records(std::span<const std::uint8_t> bytes,
                            const std::string& source);
Dataset read_cifar_file(const std::filesystem::path& path);
void write_cifar_file(const std::filesystem::path& path, const Dataset& ds);

struct CifarSplits {
  Dataset train;
  Dataset test;
};

// Reads data_batch_{1..5}.bin and test_batch.bin from `dir`, or from
// `dir`/cifar-10-batches-bin when present. Every file must hold exactly
// 10000 records.
CifarSplits load_cifar10(const std::filesystem::path& dir);

// Class-stratified subset: n / 10 images per class, the remainder going one
// each to the lowest class indices. Chosen images keep their original order.
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

struct Batch {
  Tensor<float> images;
  Tensor<float> one_hot;
  std::vector<std::size_t> indices;
};

class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

  // Visiting order for an epoch, a pure function of (seed, epoch).
  std::vector<std::size_t> permutation(std::size_t epoch) const;
  void start_epoch(std::size_t epoch);
  // Next batch of the current epoch; the final partial batch is kept.
  std::optional<Batch> next();

  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const;

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchIterator batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

}  // namespace convnorm
