#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eprop/rng.hpp"

// Dataset handling: IDX file parsing (the MNIST-family container format),
// voltage encoding of images, and deterministic batch iteration.

namespace eprop {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Images stored column-per-example, pixel intensities scaled to [0, 1].
struct LabeledDataset {
  std::string name;
  Eigen::MatrixXf images;       // pixel_count x example_count
  std::vector<uint8_t> labels;  // example_count

  Eigen::Index size() const { return images.cols(); }
  Eigen::Index pixel_count() const { return images.rows(); }
};

namespace detail {

inline uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("idx: truncated header in " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace detail

// Reads an IDX image file (magic 0x00000803, dims n x rows x cols, u8 pixels)
// and its companion label file (magic 0x00000801, dim n, u8 labels).
inline LabeledDataset load_idx(const std::string& image_path, const std::string& label_path) {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw DataError("idx: cannot open " + image_path);
  const uint32_t img_magic = detail::read_u32_be(img, image_path);
  if (img_magic != 0x00000803u)
    throw DataError("idx: bad image magic in " + image_path + " (expected 0x00000803)");
  const uint32_t count = detail::read_u32_be(img, image_path);
  const uint32_t rows = detail::read_u32_be(img, image_path);
  const uint32_t cols = detail::read_u32_be(img, image_path);
  if (rows == 0 || cols == 0)
    throw DataError("idx: zero image dimensions in " + image_path);
  const size_t pixels = size_t(rows) * cols;
  std::vector<unsigned char> raw(pixels * count);
  img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(img.gcount()) != raw.size())
    throw DataError("idx: truncated pixel data in " + image_path);

  std::ifstream lbl(label_path, std::ios::binary);
  if (!lbl) throw DataError("idx: cannot open " + label_path);
  const uint32_t lbl_magic = detail::read_u32_be(lbl, label_path);
  if (lbl_magic != 0x00000801u)
    throw DataError("idx: bad label magic in " + label_path + " (expected 0x00000801)");
  const uint32_t lbl_count = detail::read_u32_be(lbl, label_path);
  if (lbl_count != count)
    throw DataError("idx: image/label count mismatch (" + std::to_string(count) + " vs " +
                    std::to_string(lbl_count) + ")");
  LabeledDataset ds;
  ds.labels.resize(count);
  lbl.read(reinterpret_cast<char*>(ds.labels.data()), count);
  if (static_cast<size_t>(lbl.gcount()) != count)
    throw DataError("idx: truncated label data in " + label_path);

  ds.images.resize(static_cast<Eigen::Index>(pixels), count);
  float* dst = ds.images.data();
  for (size_t i = 0; i < raw.size(); ++i) dst[i] = float(raw[i]) / 255.0f;
  return ds;
}

// Resolves the directory holding IDX files for `name` (mnist, kmnist,
// fashion_mnist): `root` if given, else $EPROP_DATA_DIR/<name>.
inline std::filesystem::path dataset_dir(const std::string& name, const std::string& root) {
  if (!root.empty()) return std::filesystem::path(root) / name;
  if (const char* env = std::getenv("EPROP_DATA_DIR"))
    return std::filesystem::path(env) / name;
  throw DataError("dataset: no data directory given and EPROP_DATA_DIR is unset");
}

inline LabeledDataset load_dataset(const std::string& name, const std::string& root,
                                   const std::string& split) {
  if (split != "train" && split != "test")
    throw DataError("dataset: split must be 'train' or 'test'");
  const auto dir = dataset_dir(name, root);
  const std::string stem = split == "train" ? "train" : "t10k";
  LabeledDataset ds = load_idx((dir / (stem + "-images-idx3-ubyte")).string(),
                               (dir / (stem + "-labels-idx1-ubyte")).string());
  ds.name = name;
  return ds;
}

// The example visit order for one epoch: a Fisher-Yates permutation of
// [0, n) keyed on (seed, epoch).
inline std::vector<int64_t> epoch_permutation(int64_t n, uint64_t seed, int64_t epoch) {
  if (n < 0) throw std::invalid_argument("epoch_permutation: n must be >= 0");
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  rng::Stream stream(rng::key(seed, static_cast<uint64_t>(epoch)));
  stream.shuffle(order);
  return order;
}

// One training batch in network coordinates. Input rows [0, P) carry +gamma*x
// and rows [P, 2P) carry -gamma*x, so every pattern also appears with
// reversed polarity; targets are one-hot voltages. `example_ids` are the
// dataset indices the columns came from, used to key per-example noise.
struct EncodedBatch {
  Eigen::MatrixXd inputs;   // 2*pixel_count x batch
  Eigen::MatrixXd targets;  // class_count x batch
  std::vector<int64_t> example_ids;

  Eigen::Index batch_size() const { return inputs.cols(); }
};

inline EncodedBatch encode_batch(const LabeledDataset& ds, const std::vector<int64_t>& indices,
                                 double gamma, int class_count = 10) {
  if (gamma <= 0) throw std::invalid_argument("encode_batch: gamma must be positive");
  if (class_count < 1) throw std::invalid_argument("encode_batch: class_count must be >= 1");
  const Eigen::Index pixels = ds.pixel_count();
  EncodedBatch batch;
  batch.inputs.resize(2 * pixels, static_cast<Eigen::Index>(indices.size()));
  batch.targets = Eigen::MatrixXd::Zero(class_count, static_cast<Eigen::Index>(indices.size()));
  batch.example_ids = indices;
  for (size_t c = 0; c < indices.size(); ++c) {
    const int64_t idx = indices[c];
    if (idx < 0 || idx >= ds.size())
      throw std::out_of_range("encode_batch: example index out of range");
    const Eigen::VectorXd x = ds.images.col(idx).cast<double>() * gamma;
    const auto col = static_cast<Eigen::Index>(c);
    batch.inputs.col(col).head(pixels) = x;
    batch.inputs.col(col).tail(pixels) = -x;
    const uint8_t label = ds.labels[static_cast<size_t>(idx)];
    if (label >= class_count)
      throw DataError("encode_batch: label " + std::to_string(int(label)) +
                      " outside class range");
    batch.targets(label, col) = 1.0;
  }
  return batch;
}

// Hands out successive batches of a shuffled epoch; reshuffles with a fresh
// permutation keyed on (seed, epoch) when one epoch is exhausted, so a run
// is reproducible from the seed alone. The final batch of an epoch may be
// short.
class BatchIterator {
 public:
  BatchIterator(const LabeledDataset& dataset, int batch_size, double gamma, uint64_t seed)
      : dataset_(&dataset), batch_size_(batch_size), gamma_(gamma), seed_(seed) {
    if (batch_size < 1) throw std::invalid_argument("BatchIterator: batch size must be >= 1");
    if (dataset.size() == 0) throw std::invalid_argument("BatchIterator: empty dataset");
    reshuffle();
  }

  int64_t epoch() const { return epoch_; }

  EncodedBatch next() {
    if (cursor_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    const size_t take = std::min(order_.size() - cursor_, static_cast<size_t>(batch_size_));
    std::vector<int64_t> indices(order_.begin() + static_cast<ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    return encode_batch(*dataset_, indices, gamma_);
  }

 private:
  void reshuffle() {
    order_ = epoch_permutation(dataset_->size(), seed_, epoch_);
    cursor_ = 0;
  }

  const LabeledDataset* dataset_;
  int batch_size_;
  double gamma_;
  uint64_t seed_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
  int64_t epoch_ = 0;
};

}  // namespace eprop
