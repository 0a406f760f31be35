#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dynkd/tensor.hpp"

namespace dynkd {

enum class DatasetName { cifar10, cifar100, synthetic };
enum class Split { train, test };

std::string to_string(DatasetName name);
DatasetName parse_dataset_name(const std::string& text);
std::string to_string(Split split);

struct Normalization {
  std::array<real, 3> mean{0.0, 0.0, 0.0};
  std::array<real, 3> std{1.0, 1.0, 1.0};
};

struct SyntheticSpec {
  int num_classes = 4;
  int samples_per_class = 256;
  int test_samples_per_class = 64;
  std::uint64_t seed = 7;
};

struct DatasetSpec {
  DatasetName name = DatasetName::synthetic;
  std::filesystem::path root;  // directory holding the CIFAR binary archives
  Split split = Split::train;
  std::optional<int> subset_size;
  std::uint64_t subset_seed = 0;
  // Computed from the full train split (and cached for CIFAR) when absent.
  std::optional<Normalization> normalization;
  SyntheticSpec synthetic;
  bool allow_download = false;
  std::string archive_sha256;  // required with allow_download
};

struct Dataset {
  std::string name;
  Split split = Split::train;
  int num_classes = 0;
  Tensor images;  // (N, 3, 32, 32)
  std::vector<int> labels;
  Normalization normalization;

  int size() const { return static_cast<int>(labels.size()); }
};

/// Loads, normalizes and (optionally) subsets a split. Deterministic in the
/// spec. Throws IngestionError for missing/corrupt files (with byte offset) and
/// IntegrityError when files no longer match their cached checksums.
Dataset load_dataset(const DatasetSpec& spec);

/// Unnormalized synthetic images: class k is a Gaussian blob whose colour is
/// the k-th of num_classes evenly spaced hues, at a jittered position, plus
/// pixel noise. Samples are interleaved by class.
Dataset make_synthetic(int num_classes, int samples_per_class, std::uint64_t seed);

/// Stratified draw of `count` indices: each class receives floor(count/K) or
/// one more, classes getting the extra chosen by the seed. Result is sorted.
std::vector<int> stratified_subset(std::span<const int> labels, int num_classes, int count,
                                   std::uint64_t seed);

Normalization compute_normalization(const Tensor& images);
void apply_normalization(Tensor& images, const Normalization& norm);

/// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<int> shuffled_order(int n, std::uint64_t seed);

/// Splits an order into consecutive batches; the last may be short.
std::vector<std::vector<int>> make_batches(std::span<const int> order, int batch_size);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather_batch(const Dataset& data, std::span<const int> indices);

/// Random 32x32 crop from a 4-pixel zero-padded image and horizontal flip.
void augment_batch(Tensor& images, std::mt19937_64& rng);

/// Environment variable consulted when the configured data root is empty.
inline constexpr const char* kDataRootEnv = "DYNKD_DATA_ROOT";

/// Hex SHA-256 of a file.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dynkd
