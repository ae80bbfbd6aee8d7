#include "convnorm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include "convnorm/rng.hpp"

namespace convnorm {

Tensor<float> Dataset::images(std::span<const std::size_t> indices) const {
  std::vector<float> v(indices.size() * kCifarImageBytes);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size()) throw std::out_of_range("dataset: image index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(i * kCifarImageBytes),
                kCifarImageBytes, v.begin() + static_cast<std::ptrdiff_t>(k * kCifarImageBytes));
  }
  return Tensor<float>(Shape{indices.size(), kCifarChannels, kCifarSide, kCifarSide},
                       std::move(v));
}

Tensor<float> Dataset::one_hot(std::span<const std::size_t> indices) const {
  std::vector<float> v(indices.size() * kCifarClasses, 0.0f);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    v[k * kCifarClasses + labels.at(indices[k])] = 1.0f;
  }
  return Tensor<float>(Shape{indices.size(), kCifarClasses, 1, 1}, std::move(v));
}

std::vector<std::uint8_t> Dataset::record(std::size_t i) const {
  std::vector<std::uint8_t> out(kCifarRecordBytes);
  out[0] = labels.at(i);
  for (std::size_t j = 0; j < kCifarImageBytes; ++j) {
    out[j + 1] = static_cast<std::uint8_t>(std::lround(pixels[i * kCifarImageBytes + j] * 255.0f));
  }
  return out;
}

Dataset parse_cifar_records(std::span<const std::uint8_t> bytes,
                            const std::string& source) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw std::runtime_error("cifar: " + source + " has " + std::to_string(bytes.size()) +
                             " bytes, not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.labels.resize(count);
  ds.pixels.resize(count * kCifarImageBytes);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t offset = r * kCifarRecordBytes;
    const std::uint8_t label = bytes[offset];
    if (label >= kCifarClasses) {
      throw std::runtime_error("cifar: " + source + " label byte " + std::to_string(label) +
                               " > 9 at offset " + std::to_string(offset));
    }
    ds.labels[r] = label;
    for (std::size_t j = 0; j < kCifarImageBytes; ++j) {
      ds.pixels[r * kCifarImageBytes + j] = static_cast<float>(bytes[offset + 1 + j]) / 255.0f;
    }
  }
  return ds;
}

Dataset read_cifar_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cifar: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_cifar_records(bytes, path.string());
}

void write_cifar_file(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cifar: cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto rec = ds.record(i);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw std::runtime_error("cifar: write failed for " + path.string());
}

namespace {

Dataset read_checked(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("cifar: missing file " + path.string());
  }
  const auto bytes = std::filesystem::file_size(path);
  if (bytes != kCifarRecordBytes * kCifarRecordsPerFile) {
    throw std::runtime_error("cifar: " + path.string() + " has " + std::to_string(bytes) +
                             " bytes, expected " +
                             std::to_string(kCifarRecordBytes * kCifarRecordsPerFile));
  }
  return read_cifar_file(path);
}

void append(Dataset& into, Dataset&& from) {
  into.pixels.insert(into.pixels.end(), from.pixels.begin(), from.pixels.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

}  // namespace

CifarSplits load_cifar10(const std::filesystem::path& dir) {
  std::filesystem::path root = dir;
  if (std::filesystem::is_directory(dir / "cifar-10-batches-bin")) {
    root = dir / "cifar-10-batches-bin";
  }
  CifarSplits splits;
  for (int i = 1; i <= 5; ++i) {
    append(splits.train, read_checked(root / ("data_batch_" + std::to_string(i) + ".bin")));
  }
  splits.test = read_checked(root / "test_batch.bin");
  return splits;
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n < kCifarClasses) {
    throw std::invalid_argument("subset: n = " + std::to_string(n) +
                                " cannot be stratified over 10 classes");
  }
  if (n > ds.size()) {
    throw std::invalid_argument("subset: n = " + std::to_string(n) + " exceeds dataset size " +
                                std::to_string(ds.size()));
  }
  std::vector<std::vector<std::size_t>> by_class(kCifarClasses);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t c = 0; c < kCifarClasses; ++c) {
    const std::size_t want = n / kCifarClasses + (c < n % kCifarClasses ? 1 : 0);
    auto& pool = by_class[c];
    if (pool.size() < want) {
      throw std::invalid_argument("subset: class " + std::to_string(c) + " has only " +
                                  std::to_string(pool.size()) + " images, need " +
                                  std::to_string(want));
    }
    // Partial Fisher-Yates: the first `want` slots become a uniform sample.
    for (std::size_t k = 0; k < want; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng.below(pool.size() - k));
      std::swap(pool[k], pool[j]);
    }
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(chosen.begin(), chosen.end());

  Dataset out;
  out.labels.reserve(n);
  out.pixels.reserve(n * kCifarImageBytes);
  for (std::size_t i : chosen) {
    out.labels.push_back(ds.labels[i]);
    const auto begin = ds.pixels.begin() + static_cast<std::ptrdiff_t>(i * kCifarImageBytes);
    out.pixels.insert(out.pixels.end(), begin, begin + static_cast<std::ptrdiff_t>(kCifarImageBytes));
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch size must be >= 1");
  if (ds.size() == 0) throw std::invalid_argument("batches: empty dataset");
  start_epoch(0);
}

std::vector<std::size_t> BatchIterator::permutation(std::size_t epoch) const {
  std::vector<std::size_t> order(ds_->size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed_).fork(epoch);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
  }
  return order;
}

void BatchIterator::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  order_ = permutation(epoch);
  cursor_ = 0;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  Batch b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                   order_.begin() + static_cast<std::ptrdiff_t>(end));
  b.images = ds_->images(b.indices);
  b.one_hot = ds_->one_hot(b.indices);
  cursor_ = end;
  return b;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

BatchIterator batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed) {
  return BatchIterator(ds, batch_size, seed);
}

}  // namespace convnorm
