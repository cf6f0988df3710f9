#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsam/tensor.hpp"

namespace bsam {

enum class Provenance { Blobs, Csv, Idx };

struct Dataset {
  Tensor features;  // (n, d)
  std::vector<int> labels;
  std::size_t classes = 0;
  Provenance provenance = Provenance::Blobs;
  std::optional<std::uint64_t> seed;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
  // Throws ConfigError if labels or features break the dataset invariants.
  void validate() const;
  // Rows in `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
  Batch as_batch() const;
};

// Class means sit `separation` apart (simplex corners when d >= C, a circle in
// the first two coordinates otherwise, a line when d == 1); each sample is its
// mean plus unit-variance Gaussian noise. Labels cycle 0..C-1, so class counts
// differ by at most one.
Dataset gen_gaussian_blobs(std::size_t n, std::size_t d, std::size_t classes, double separation, std::uint64_t seed);
std::vector<std::vector<double>> blob_means(std::size_t d, std::size_t classes, double separation);

// Each label is flipped with probability `rate` to a uniformly chosen other class.
std::vector<int> inject_symmetric_noise(std::span<const int> labels, std::size_t classes, double rate,
                                        std::uint64_t seed);

// Header f0,...,f{d-1},label. Class count is max label + 1 unless given.
Dataset load_csv_dataset(const std::filesystem::path& path, std::optional<std::size_t> classes = std::nullopt);
Dataset parse_csv_dataset(const std::string& text, std::optional<std::size_t> classes = std::nullopt);
void write_csv_dataset(const Dataset& data, const std::filesystem::path& path);

// Big-endian IDX3 images (magic 0x00000803) and IDX1 labels (0x00000801);
// pixels scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<std::size_t> classes = std::nullopt);
Dataset parse_idx(std::span<const unsigned char> images, std::span<const unsigned char> labels,
                  std::optional<std::size_t> classes = std::nullopt);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then the first round(n * (1 - test_fraction)) indices train.
Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

// Seeded permutation chunked into ceil(n / b) batches; the last may be short.
std::vector<Batch> batches(const Dataset& data, std::size_t b, std::uint64_t epoch_seed);
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t b, std::uint64_t epoch_seed);

}  // namespace bsam
