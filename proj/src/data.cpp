#include "dynkd/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "dynkd/error.hpp"
#include "dynkd/fetch.hpp"

namespace dynkd {

namespace fs = std::filesystem;

namespace {

constexpr int kImageSide = 32;
constexpr int kPixels = kImageSide * kImageSide;
constexpr const char* kStatsFile = "dynkd_stats.json";

struct CifarLayout {
  std::string subdir;
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  int label_bytes;
  int label_index;  // which label byte is the class
  int num_classes;
};

CifarLayout layout_for(DatasetName name) {
  if (name == DatasetName::cifar10) {
    return {"cifar-10-batches-bin",
            {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
             "data_batch_5.bin"},
            {"test_batch.bin"},
            1,
            0,
            10};
  }
  // CIFAR-100 records carry (coarse, fine); the fine label is the class.
  return {"cifar-100-binary", {"train.bin"}, {"test.bin"}, 2, 1, 100};
}

fs::path resolve_root(const DatasetSpec& spec) {
  if (!spec.root.empty()) return spec.root;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  throw ConfigError(std::string("dataset root not set (configure dataset.root or set ") +
                    kDataRootEnv + ")");
}

fs::path locate_cifar_dir(const fs::path& root, const CifarLayout& layout) {
  const fs::path nested = root / layout.subdir;
  if (fs::exists(nested / layout.test_files.front())) return nested;
  if (fs::exists(root / layout.test_files.front())) return root;
  return {};
}

struct RawSplit {
  std::vector<unsigned char> pixels;  // N * 3072 bytes, CHW per record
  std::vector<int> labels;
};

void read_cifar_file(const fs::path& path, const CifarLayout& layout, RawSplit& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("missing CIFAR file " + path.string(), 0);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::size_t record = static_cast<std::size_t>(layout.label_bytes) + 3 * kPixels;
  if (bytes.empty()) throw IngestionError("empty CIFAR file " + path.string(), 0);
  if (bytes.size() % record != 0) {
    throw IngestionError(path.string() + " ends with a truncated record",
                         static_cast<long long>(bytes.size() - bytes.size() % record));
  }
  const std::size_t count = bytes.size() / record;
  for (std::size_t r = 0; r < count; ++r) {
    const unsigned char* rec = bytes.data() + r * record;
    const int label = rec[layout.label_index];
    if (label >= layout.num_classes) {
      throw IngestionError(path.string() + ": label " + std::to_string(label) + " out of range",
                           static_cast<long long>(r * record + layout.label_index));
    }
    out.labels.push_back(label);
    out.pixels.insert(out.pixels.end(), rec + layout.label_bytes, rec + record);
  }
}

RawSplit read_cifar_split(const fs::path& dir, const CifarLayout& layout, Split split) {
  RawSplit raw;
  for (const auto& f : split == Split::train ? layout.train_files : layout.test_files) {
    read_cifar_file(dir / f, layout, raw);
  }
  return raw;
}

Tensor to_tensor(const RawSplit& raw) {
  const int n = static_cast<int>(raw.labels.size());
  Tensor images({n, 3, kImageSide, kImageSide});
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) images[i] = raw.pixels[i] / 255.0;
  return images;
}

Normalization stats_from_raw(const RawSplit& raw) {
  std::array<long double, 3> sum{}, sq{};
  const std::size_t n = raw.labels.size();
  for (std::size_t r = 0; r < n; ++r) {
    for (int c = 0; c < 3; ++c) {
      const unsigned char* p = raw.pixels.data() + r * 3 * kPixels + c * kPixels;
      for (int i = 0; i < kPixels; ++i) {
        const long double v = p[i] / 255.0L;
        sum[c] += v;
        sq[c] += v * v;
      }
    }
  }
  Normalization norm;
  const long double count = static_cast<long double>(n) * kPixels;
  for (int c = 0; c < 3; ++c) {
    const long double mean = sum[c] / count;
    norm.mean[c] = static_cast<real>(mean);
    norm.std[c] = static_cast<real>(std::sqrt(std::max(sq[c] / count - mean * mean, 1e-12L)));
  }
  return norm;
}

// Checks every file of the split against the cached checksums (recording new
// ones) and returns the cached normalization, computing it on first use.
Normalization cifar_normalization(const fs::path& dir, const CifarLayout& layout,
                                  const std::vector<std::string>& files_in_use) {
  const fs::path cache_path = dir / kStatsFile;
  nlohmann::json cache = nlohmann::json::object();
  if (fs::exists(cache_path)) {
    std::ifstream in(cache_path);
    try {
      in >> cache;
    } catch (const nlohmann::json::exception&) {
      cache = nlohmann::json::object();
    }
  }
  bool dirty = false;
  for (const auto& f : files_in_use) {
    const std::string digest = sha256_file(dir / f);
    if (cache.contains("files") && cache["files"].contains(f)) {
      if (cache["files"][f].get<std::string>() != digest) {
        throw IntegrityError("checksum of " + (dir / f).string() +
                             " differs from the one recorded at first load");
      }
    } else {
      cache["files"][f] = digest;
      dirty = true;
    }
  }
  Normalization norm;
  if (cache.contains("mean") && cache.contains("std")) {
    for (int c = 0; c < 3; ++c) {
      norm.mean[c] = cache["mean"][c].get<real>();
      norm.std[c] = cache["std"][c].get<real>();
    }
  } else {
    norm = stats_from_raw(read_cifar_split(dir, layout, Split::train));
    cache["mean"] = norm.mean;
    cache["std"] = norm.std;
    dirty = true;
  }
  if (dirty) {
    // Best effort: a read-only data directory just means recomputing next time.
    std::ofstream out(cache_path);
    if (out) out << cache.dump(2) << "\n";
  }
  return norm;
}

Dataset load_cifar(const DatasetSpec& spec) {
  const CifarLayout layout = layout_for(spec.name);
  const fs::path root = resolve_root(spec);
  fs::path dir = locate_cifar_dir(root, layout);
  if (dir.empty() && spec.allow_download) {
    fetch_cifar(spec.name, root, spec.archive_sha256);
    dir = locate_cifar_dir(root, layout);
  }
  if (dir.empty()) {
    throw IngestionError("CIFAR binaries not found under " + root.string() + " (expected " +
                             (root / layout.subdir / layout.test_files.front()).string() + ")",
                         0);
  }
  std::vector<std::string> in_use = layout.train_files;
  if (spec.split == Split::test) in_use.insert(in_use.end(), layout.test_files.begin(), layout.test_files.end());
  Normalization norm = spec.normalization.value_or(Normalization{});
  if (!spec.normalization) {
    norm = cifar_normalization(dir, layout, in_use);
  }

  const RawSplit raw = read_cifar_split(dir, layout, spec.split);
  Dataset ds;
  ds.name = to_string(spec.name);
  ds.split = spec.split;
  ds.num_classes = layout.num_classes;
  ds.images = to_tensor(raw);
  ds.labels = raw.labels;
  ds.normalization = norm;
  return ds;
}

Dataset load_synthetic(const DatasetSpec& spec) {
  const SyntheticSpec& s = spec.synthetic;
  Dataset train = make_synthetic(s.num_classes, s.samples_per_class, s.seed);
  const Normalization norm = spec.normalization.value_or(compute_normalization(train.images));
  Dataset ds = spec.split == Split::train
                   ? std::move(train)
                   : make_synthetic(s.num_classes, s.test_samples_per_class,
                                    s.seed ^ 0x9e3779b97f4a7c15ull);
  ds.split = spec.split;
  ds.normalization = norm;
  return ds;
}

}  // namespace

std::string to_string(DatasetName name) {
  switch (name) {
    case DatasetName::cifar10:
      return "cifar10";
    case DatasetName::cifar100:
      return "cifar100";
    case DatasetName::synthetic:
      return "synthetic";
  }
  return "?";
}

DatasetName parse_dataset_name(const std::string& text) {
  if (text == "cifar10") return DatasetName::cifar10;
  if (text == "cifar100") return DatasetName::cifar100;
  if (text == "synthetic") return DatasetName::synthetic;
  throw ConfigError("unknown dataset '" + text + "' (expected cifar10, cifar100 or synthetic)");
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Dataset load_dataset(const DatasetSpec& spec) {
  Dataset ds = spec.name == DatasetName::synthetic ? load_synthetic(spec) : load_cifar(spec);
  if (spec.subset_size) {
    const int n = *spec.subset_size;
    if (n < 1 || n > ds.size()) {
      throw ConfigError("subset_size " + std::to_string(n) + " outside 1.." +
                        std::to_string(ds.size()));
    }
    const auto keep = stratified_subset(ds.labels, ds.num_classes, n, spec.subset_seed);
    std::vector<int> labels;
    labels.reserve(keep.size());
    for (int i : keep) labels.push_back(ds.labels[i]);
    ds.images = gather_samples(ds.images, keep);
    ds.labels = std::move(labels);
  }
  apply_normalization(ds.images, ds.normalization);
  return ds;
}

Dataset make_synthetic(int num_classes, int samples_per_class, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (samples_per_class < 1) throw ConfigError("synthetic samples_per_class must be >= 1");
  const int n = num_classes * samples_per_class;
  Dataset ds;
  ds.name = "synthetic";
  ds.num_classes = num_classes;
  ds.images = Tensor({n, 3, kImageSide, kImageSide});
  ds.labels.resize(n);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<real> centre(9.0, 23.0);
  std::uniform_real_distribution<real> width(3.0, 5.0);
  std::normal_distribution<real> noise(0.0, 0.5);
  constexpr real kAmplitude = 1.5;
  for (int i = 0; i < n; ++i) {
    const int k = i % num_classes;
    ds.labels[i] = k;
    const real hue = 2.0 * std::numbers::pi * k / num_classes;
    const std::array<real, 3> colour{std::cos(hue), std::cos(hue - 2.0 * std::numbers::pi / 3.0),
                                     std::cos(hue + 2.0 * std::numbers::pi / 3.0)};
    const real cy = centre(rng), cx = centre(rng), sigma = width(rng);
    const real inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < kImageSide; ++y) {
        for (int x = 0; x < kImageSide; ++x) {
          const real r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          ds.images.at(i, c, y, x) = kAmplitude * colour[c] * std::exp(-r2 * inv2s2) + noise(rng);
        }
      }
    }
  }
  return ds;
}

std::vector<int> stratified_subset(std::span<const int> labels, int num_classes, int count,
                                   std::uint64_t seed) {
  if (count < 0 || count > static_cast<int>(labels.size())) {
    throw ConfigError("subset size exceeds the split");
  }
  std::vector<std::vector<int>> by_class(num_classes);
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) by_class.at(labels[i]).push_back(i);

  std::mt19937_64 rng(seed);
  // Per-class shuffles first, then which classes take the remainder.
  for (auto& members : by_class) {
    for (int i = static_cast<int>(members.size()) - 1; i > 0; --i) {
      std::uniform_int_distribution<int> pick(0, i);
      std::swap(members[i], members[pick(rng)]);
    }
  }
  std::vector<int> quota(num_classes, count / num_classes);
  const std::vector<int> class_order = shuffled_order(num_classes, rng());
  for (int r = 0; r < count % num_classes; ++r) ++quota[class_order[r]];
  // Classes smaller than their quota hand the shortfall to the others in order.
  int shortfall = 0;
  for (int k = 0; k < num_classes; ++k) {
    const int have = static_cast<int>(by_class[k].size());
    if (quota[k] > have) {
      shortfall += quota[k] - have;
      quota[k] = have;
    }
  }
  for (int idx = 0; shortfall > 0 && idx < num_classes; ++idx) {
    const int k = class_order[idx];
    const int spare = static_cast<int>(by_class[k].size()) - quota[k];
    const int take = std::min(spare, shortfall);
    quota[k] += take;
    shortfall -= take;
  }
  std::vector<int> out;
  out.reserve(count);
  for (int k = 0; k < num_classes; ++k) {
    out.insert(out.end(), by_class[k].begin(), by_class[k].begin() + quota[k]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Normalization compute_normalization(const Tensor& images) {
  const Shape s = images.shape();
  if (s.c != 3) throw ShapeError("normalization expects 3-channel images");
  std::array<long double, 3> sum{}, sq{};
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < 3; ++c) {
      const real* p = images.data() + (static_cast<std::size_t>(n) * 3 + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sum[c] += p[i];
        sq[c] += static_cast<long double>(p[i]) * p[i];
      }
    }
  Normalization norm;
  const long double count = static_cast<long double>(s.n) * s.plane();
  for (int c = 0; c < 3; ++c) {
    const long double mean = sum[c] / count;
    norm.mean[c] = static_cast<real>(mean);
    norm.std[c] = static_cast<real>(std::sqrt(std::max(sq[c] / count - mean * mean, 1e-12L)));
  }
  return norm;
}

void apply_normalization(Tensor& images, const Normalization& norm) {
  const Shape s = images.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      real* p = images.data() + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] = (p[i] - norm.mean[c]) / norm.std[c];
    }
}

std::vector<int> shuffled_order(int n, std::uint64_t seed) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  return order;
}

std::vector<std::vector<int>> make_batches(std::span<const int> order, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  return batches;
}

Batch gather_batch(const Dataset& data, std::span<const int> indices) {
  Batch b;
  b.images = gather_samples(data.images, indices);
  b.labels.reserve(indices.size());
  for (int i : indices) b.labels.push_back(data.labels.at(i));
  return b;
}

void augment_batch(Tensor& images, std::mt19937_64& rng) {
  const Shape s = images.shape();
  constexpr int pad = 4;
  std::uniform_int_distribution<int> shift(-pad, pad);
  std::bernoulli_distribution flip(0.5);
  std::vector<real> plane(s.plane());
  for (int n = 0; n < s.n; ++n) {
    const int dy = shift(rng), dx = shift(rng);
    const bool mirror = flip(rng);
    for (int c = 0; c < s.c; ++c) {
      real* p = images.data() + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const int sy = y + dy;
          const int sx = (mirror ? s.w - 1 - x : x) + dx;
          plane[y * s.w + x] = (sy >= 0 && sy < s.h && sx >= 0 && sx < s.w) ? p[sy * s.w + sx] : 0.0;
        }
      std::copy(plane.begin(), plane.end(), p);
    }
  }
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path.string(), 0);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

}  // namespace dynkd
