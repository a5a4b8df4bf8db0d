#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "eprop/data.hpp"
#include "eprop/rng.hpp"

using namespace eprop;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& stem) {
    path = (std::filesystem::temp_directory_path() / stem).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
};

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_u32_be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

std::vector<uint8_t> image_bytes(uint32_t count, uint32_t rows, uint32_t cols,
                                 const std::vector<uint8_t>& pixels) {
  std::vector<uint8_t> v;
  push_u32_be(v, 0x00000803u);
  push_u32_be(v, count);
  push_u32_be(v, rows);
  push_u32_be(v, cols);
  v.insert(v.end(), pixels.begin(), pixels.end());
  return v;
}

std::vector<uint8_t> label_bytes(uint32_t count, const std::vector<uint8_t>& labels) {
  std::vector<uint8_t> v;
  push_u32_be(v, 0x00000801u);
  push_u32_be(v, count);
  v.insert(v.end(), labels.begin(), labels.end());
  return v;
}

LabeledDataset synthetic_dataset(int pixel_count, int n) {
  LabeledDataset ds;
  ds.name = "synthetic";
  ds.images = Eigen::MatrixXf::Zero(pixel_count, n);
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    ds.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(i % 10);
    ds.images(i % pixel_count, i) = 1.0f;
  }
  return ds;
}

}  // namespace

TEST_CASE("idx files round-trip byte-exactly", "[data]") {
  TempFile img("eprop_test_images_idx");
  TempFile lab("eprop_test_labels_idx");
  const std::vector<uint8_t> pixels = {0, 128, 255, 64, 10, 20, 30, 40};
  write_bytes(img.path, image_bytes(2, 2, 2, pixels));
  write_bytes(lab.path, label_bytes(2, {3, 9}));

  const LabeledDataset ds = load_idx(img.path, lab.path);
  REQUIRE(ds.size() == 2);
  REQUIRE(ds.pixel_count() == 4);
  for (int e = 0; e < 2; ++e)
    for (int p = 0; p < 4; ++p)
      CHECK(ds.images(p, e) == static_cast<float>(pixels[static_cast<size_t>(4 * e + p)]) / 255.0f);
  CHECK(ds.labels == std::vector<uint8_t>{3, 9});
}

TEST_CASE("an empty pair is a valid dataset", "[data]") {
  TempFile img("eprop_test_empty_images");
  TempFile lab("eprop_test_empty_labels");
  write_bytes(img.path, image_bytes(0, 2, 2, {}));
  write_bytes(lab.path, label_bytes(0, {}));
  const LabeledDataset ds = load_idx(img.path, lab.path);
  CHECK(ds.size() == 0);
  CHECK(ds.pixel_count() == 4);
}

TEST_CASE("idx loader rejects malformed files", "[data]") {
  TempFile img("eprop_test_bad_images");
  TempFile lab("eprop_test_bad_labels");
  const std::vector<uint8_t> pixels = {1, 2, 3, 4, 5, 6, 7, 8};
  write_bytes(img.path, image_bytes(2, 2, 2, pixels));
  write_bytes(lab.path, label_bytes(2, {0, 1}));

  SECTION("missing image file") {
    CHECK_THROWS_AS(load_idx(img.path + ".nope", lab.path), DataError);
  }
  SECTION("missing label file") {
    CHECK_THROWS_AS(load_idx(img.path, lab.path + ".nope"), DataError);
  }
  SECTION("wrong image magic") {
    std::vector<uint8_t> v = image_bytes(2, 2, 2, pixels);
    v[3] = 0x01;
    write_bytes(img.path, v);
    CHECK_THROWS_WITH(load_idx(img.path, lab.path),
                      Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("wrong label magic") {
    std::vector<uint8_t> v = label_bytes(2, {0, 1});
    v[3] = 0x03;
    write_bytes(lab.path, v);
    CHECK_THROWS_WITH(load_idx(img.path, lab.path),
                      Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("image/label count mismatch") {
    write_bytes(lab.path, label_bytes(3, {0, 1, 2}));
    CHECK_THROWS_WITH(load_idx(img.path, lab.path),
                      Catch::Matchers::ContainsSubstring("count"));
  }
  SECTION("truncated pixels") {
    std::vector<uint8_t> v = image_bytes(2, 2, 2, pixels);
    v.resize(v.size() - 2);
    write_bytes(img.path, v);
    CHECK_THROWS_AS(load_idx(img.path, lab.path), DataError);
  }
  SECTION("truncated labels") {
    std::vector<uint8_t> v = label_bytes(2, {0, 1});
    v.resize(v.size() - 1);
    write_bytes(lab.path, v);
    CHECK_THROWS_AS(load_idx(img.path, lab.path), DataError);
  }
  SECTION("zero image dimensions") {
    write_bytes(img.path, image_bytes(2, 0, 2, {}));
    CHECK_THROWS_AS(load_idx(img.path, lab.path), DataError);
  }
}

TEST_CASE("batch encoding doubles the input with opposite signs", "[data]") {
  LabeledDataset ds;
  ds.images = Eigen::MatrixXf::Zero(4, 3);
  ds.images.col(0) << 0.5f, 0.0f, 0.0f, 0.0f;
  ds.images.col(1) << 0.0f, 1.0f, 0.0f, 0.25f;
  ds.labels = {3, 9, 0};

  const EncodedBatch batch = encode_batch(ds, {0, 1}, 500.0);
  REQUIRE(batch.inputs.rows() == 8);
  REQUIRE(batch.inputs.cols() == 2);
  CHECK(batch.inputs(0, 0) == 250.0);
  CHECK(batch.inputs(4, 0) == -250.0);
  CHECK((batch.inputs.topRows(4) + batch.inputs.bottomRows(4)).cwiseAbs().maxCoeff() == 0.0);

  REQUIRE(batch.targets.rows() == 10);
  CHECK(batch.targets(3, 0) == 1.0);
  CHECK(batch.targets(9, 1) == 1.0);
  CHECK(batch.targets.colwise().sum().isOnes());
  CHECK(batch.example_ids == std::vector<int64_t>{0, 1});
}

TEST_CASE("batch encoding validates its arguments", "[data]") {
  LabeledDataset ds = synthetic_dataset(4, 6);
  CHECK_THROWS_AS(encode_batch(ds, {0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(encode_batch(ds, {6}, 500.0), std::out_of_range);
  CHECK_THROWS_AS(encode_batch(ds, {-1}, 500.0), std::out_of_range);
  ds.labels[0] = 10;  // label beyond the class count is corrupt data
  CHECK_THROWS_AS(encode_batch(ds, {0}, 500.0), DataError);
}

TEST_CASE("epoch permutations are deterministic and complete", "[data]") {
  const auto a = epoch_permutation(100, 7, 0);
  const auto b = epoch_permutation(100, 7, 0);
  CHECK(a == b);
  CHECK(a != epoch_permutation(100, 7, 1));
  CHECK(a != epoch_permutation(100, 8, 0));

  std::vector<int64_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int64_t> expect(100);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);
}

TEST_CASE("batch iterator walks epochs in shuffled order", "[data]") {
  const LabeledDataset ds = synthetic_dataset(4, 10);
  BatchIterator it(ds, 4, 500.0, 42);

  std::vector<int64_t> epoch0;
  CHECK(it.epoch() == 0);
  for (int b = 0; b < 3; ++b) {
    const EncodedBatch batch = it.next();
    CHECK(batch.inputs.cols() == (b == 2 ? 2 : 4));
    epoch0.insert(epoch0.end(), batch.example_ids.begin(), batch.example_ids.end());
  }
  std::vector<int64_t> sorted = epoch0;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int64_t> expect(10);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);

  const EncodedBatch first_of_next = it.next();
  CHECK(it.epoch() == 1);
  CHECK(epoch_permutation(10, 42, 1)[0] == first_of_next.example_ids[0]);

  BatchIterator again(ds, 4, 500.0, 42);
  std::vector<int64_t> replay;
  for (int b = 0; b < 3; ++b) {
    const EncodedBatch batch = again.next();
    replay.insert(replay.end(), batch.example_ids.begin(), batch.example_ids.end());
  }
  CHECK(replay == epoch0);
}

TEST_CASE("dataset directory resolution honours the environment", "[data]") {
  CHECK(dataset_dir("mnist", "/srv/data") == std::filesystem::path("/srv/data/mnist"));
  CHECK_THROWS_AS(load_dataset("definitely_missing_dataset", "/nonexistent_root", "train"),
                  DataError);
}
