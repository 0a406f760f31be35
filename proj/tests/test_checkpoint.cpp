#include <doctest.h>

#include <fstream>

#include "dynkd/checkpoint.hpp"
#include "dynkd/error.hpp"
#include "dynkd/nn/zoo.hpp"
#include "support.hpp"

using namespace dynkd;
using dynkd::testing::max_abs_diff;
using dynkd::testing::random_tensor;
using dynkd::testing::temp_dir;

namespace fs = std::filesystem;

TEST_CASE("checkpoint round trip restores parameters, buffers and metadata") {
  const fs::path dir = temp_dir("ckpt");
  nn::Model m = nn::build_model("tiny_student", 7, 5);
  // Move batchnorm statistics away from their initial values.
  m.forward_with_features(random_tensor({4, 3, 32, 32}, 1, 2.0), true);
  save_checkpoint(dir / "m.ckpt", m, {{"acc", 0.5}});
  LoadedCheckpoint loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.metadata["acc"].get<double>() == 0.5);
  CHECK(loaded.model.architecture_id() == "tiny_student");
  CHECK(loaded.model.num_classes() == 7);
  CHECK(loaded.model.parameter_checksum() == m.parameter_checksum());
  const Tensor x = random_tensor({2, 3, 32, 32}, 2);
  CHECK(max_abs_diff(loaded.model.predict_logits(x), m.predict_logits(x)) == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint refuses corrupt files") {
  const fs::path dir = temp_dir("ckpt_bad");
  nn::Model m = nn::build_model("tiny_student", 3, 1);
  const fs::path good = dir / "m.ckpt";
  save_checkpoint(good, m);
  const auto size = fs::file_size(good);

  SUBCASE("missing") { CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), Error); }
  SUBCASE("bad magic") {
    std::fstream f(good, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(load_checkpoint(good), Error);
  }
  SUBCASE("unknown version") {
    std::fstream f(good, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(static_cast<char>(99));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(good), Error);
  }
  SUBCASE("truncated") {
    fs::resize_file(good, size - 16);
    CHECK_THROWS_AS(load_checkpoint(good), Error);
  }
  fs::remove_all(dir);
}
