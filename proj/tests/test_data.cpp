#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>

#include "dynkd/data.hpp"
#include "dynkd/error.hpp"
#include "support.hpp"

using namespace dynkd;
using dynkd::testing::temp_dir;
using dynkd::testing::write_fake_cifar;

namespace fs = std::filesystem;

namespace {

fs::path fake_cifar10(const std::string& name, int per_file = 30) {
  const fs::path root = temp_dir(name);
  const fs::path dir = root / "cifar-10-batches-bin";
  for (int i = 1; i <= 5; ++i) {
    write_fake_cifar(dir / ("data_batch_" + std::to_string(i) + ".bin"), per_file, 10, 1, 0, i);
  }
  write_fake_cifar(dir / "test_batch.bin", per_file, 10, 1, 0, 99);
  return root;
}

DatasetSpec cifar_spec(const fs::path& root, DatasetName name = DatasetName::cifar10) {
  DatasetSpec s;
  s.name = name;
  s.root = root;
  return s;
}

std::map<int, int> class_counts(const std::vector<int>& labels) {
  std::map<int, int> c;
  for (int y : labels) ++c[y];
  return c;
}

}  // namespace

TEST_CASE("CIFAR-10 binaries: shapes, labels and normalization") {
  const fs::path root = fake_cifar10("c10");
  const Dataset train = load_dataset(cifar_spec(root));
  CHECK(train.size() == 150);
  CHECK(train.num_classes == 10);
  CHECK(train.images.shape() == Shape{150, 3, 32, 32});
  CHECK(class_counts(train.labels).size() == 10);
  CHECK(train.labels[13] == 3);
  // Normalized with the train statistics: per-channel mean ~0, std ~1.
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    int n = 0;
    for (int i = 0; i < train.size(); ++i)
      for (int p = 0; p < 1024; ++p) {
        const real v = train.images[(static_cast<std::size_t>(i) * 3 + c) * 1024 + p];
        sum += v;
        sq += v * v;
        ++n;
      }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(std::sqrt(sq / n) - 1.0) < 0.1);
  }
  auto spec = cifar_spec(root);
  spec.split = Split::test;
  const Dataset test = load_dataset(spec);
  CHECK(test.size() == 30);
  CHECK(test.normalization.mean == train.normalization.mean);
  fs::remove_all(root);
}

TEST_CASE("CIFAR-100 uses the fine label byte") {
  const fs::path root = temp_dir("c100");
  write_fake_cifar(root / "cifar-100-binary" / "train.bin", 200, 100, 2, 1, 1);
  write_fake_cifar(root / "cifar-100-binary" / "test.bin", 100, 100, 2, 1, 2);
  const Dataset ds = load_dataset(cifar_spec(root, DatasetName::cifar100));
  CHECK(ds.num_classes == 100);
  CHECK(ds.labels[57] == 57);
  CHECK(ds.labels[157] == 57);
  fs::remove_all(root);
}

TEST_CASE("truncated CIFAR file names the byte offset") {
  const fs::path root = fake_cifar10("c10_trunc");
  const fs::path file = root / "cifar-10-batches-bin" / "data_batch_3.bin";
  fs::resize_file(file, 3073 * 7 + 100);
  try {
    load_dataset(cifar_spec(root));
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(e.byte_offset() == 3073 * 7);
  }
  fs::remove_all(root);
}

TEST_CASE("missing CIFAR directory is an ingestion error") {
  const fs::path root = temp_dir("c10_missing");
  CHECK_THROWS_AS(load_dataset(cifar_spec(root)), IngestionError);
  fs::remove_all(root);
}

TEST_CASE("a file changed after first load fails the integrity check") {
  const fs::path root = fake_cifar10("c10_sha");
  load_dataset(cifar_spec(root));
  const fs::path file = root / "cifar-10-batches-bin" / "data_batch_2.bin";
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(500);
    f.put(static_cast<char>(7));
    f.put(static_cast<char>(200));
  }
  CHECK_THROWS_AS(load_dataset(cifar_spec(root)), IntegrityError);
  fs::remove_all(root);
}

TEST_CASE("stratified subset is balanced and seeded") {
  std::vector<int> labels;
  for (int i = 0; i < 5000; ++i) labels.push_back(i % 10);
  const auto a = stratified_subset(labels, 10, 1000, 3);
  const auto b = stratified_subset(labels, 10, 1000, 3);
  const auto c = stratified_subset(labels, 10, 1000, 4);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 1000);
  CHECK(std::is_sorted(a.begin(), a.end()));
  std::vector<int> picked;
  for (int i : a) picked.push_back(labels[i]);
  for (auto [k, n] : class_counts(picked)) {
    CHECK(n >= 99);
    CHECK(n <= 101);
  }
  const auto odd = stratified_subset(labels, 10, 1005, 3);
  std::vector<int> odd_labels;
  for (int i : odd) odd_labels.push_back(labels[i]);
  for (auto [k, n] : class_counts(odd_labels)) CHECK((n == 100 || n == 101));
}

TEST_CASE("subset through load_dataset and its bounds") {
  DatasetSpec s;
  s.synthetic = {4, 50, 10, 1};
  s.subset_size = 40;
  s.subset_seed = 9;
  const Dataset ds = load_dataset(s);
  CHECK(ds.size() == 40);
  for (auto [k, n] : class_counts(ds.labels)) CHECK(n == 10);
  s.subset_size = 201;
  CHECK_THROWS_AS(load_dataset(s), ConfigError);
}

TEST_CASE("synthetic data is deterministic and balanced") {
  const Dataset a = make_synthetic(2, 64, 5);
  const Dataset b = make_synthetic(2, 64, 5);
  const Dataset c = make_synthetic(2, 64, 6);
  CHECK(a.size() == 128);
  CHECK(a.images.shape() == Shape{128, 3, 32, 32});
  CHECK(a.labels == b.labels);
  CHECK(dynkd::testing::max_abs_diff(a.images, b.images) == 0.0);
  CHECK(dynkd::testing::max_abs_diff(a.images, c.images) > 0.0);
  CHECK(class_counts(a.labels)[0] == 64);
  CHECK(class_counts(a.labels)[1] == 64);

  DatasetSpec spec;
  spec.synthetic = {2, 64, 16, 5};
  const Dataset train = load_dataset(spec);
  spec.split = Split::test;
  const Dataset test = load_dataset(spec);
  CHECK(test.size() == 32);
  CHECK(test.normalization.std == train.normalization.std);
}

TEST_CASE("shuffling, batching and gathering") {
  const auto o1 = shuffled_order(100, 1);
  const auto o2 = shuffled_order(100, 1);
  CHECK(o1 == o2);
  CHECK(o1 != shuffled_order(100, 2));
  auto sorted = o1;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) CHECK(sorted[i] == i);

  const auto batches = make_batches(o1, 32);
  REQUIRE(batches.size() == 4);
  CHECK(batches.back().size() == 4);

  const Dataset ds = make_synthetic(3, 4, 1);
  const std::vector<int> idx{5, 0};
  const Batch b = gather_batch(ds, idx);
  CHECK(b.images.shape() == Shape{2, 3, 32, 32});
  CHECK(b.labels == std::vector<int>{ds.labels[5], ds.labels[0]});
  CHECK(b.images[0] == ds.images[5 * 3072]);
}

TEST_CASE("augmentation preserves shape and varies with the seed") {
  const Dataset ds = make_synthetic(2, 8, 1);
  Tensor a = ds.images, b = ds.images;
  std::mt19937_64 r1(1), r2(1);
  augment_batch(a, r1);
  augment_batch(b, r2);
  CHECK(a.shape() == ds.images.shape());
  CHECK(dynkd::testing::max_abs_diff(a, b) == 0.0);
  CHECK(dynkd::testing::max_abs_diff(a, ds.images) > 0.0);
}

TEST_CASE("dataset names parse") {
  CHECK(parse_dataset_name("cifar100") == DatasetName::cifar100);
  CHECK(to_string(DatasetName::synthetic) == "synthetic");
  CHECK_THROWS_AS(parse_dataset_name("mnist"), ConfigError);
}
