/*
 Copyright 2026 The dgnopt Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include "dgnopt/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

#include "dgnopt/error.hpp"

namespace dgnopt {

Split Split::subset(const std::vector<int>& index) const {
  Split out;
  out.x.resize(x.rows(), static_cast<Eigen::Index>(index.size()));
  out.y.resize(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    out.x.col(static_cast<Eigen::Index>(i)) = x.col(index[i]);
    out.y[i] = y[index[i]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};

class IdxReader {
 public:
  explicit IdxReader(const std::string& path) : path_(path), file_(gzopen(path.c_str(), "rb")) {
    if (!file_) throw Error(ErrorKind::io, "cannot open " + path);
  }

  void read(void* dst, std::size_t n, const char* what) {
    const int got = gzread(file_.get(), dst, static_cast<unsigned>(n));
    if (got < 0 || static_cast<std::size_t>(got) != n) {
      std::ostringstream msg;
      msg << path_ << ": truncated while reading " << what << " at offset " << offset_;
      throw Error(ErrorKind::truncated_file, msg.str());
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  std::vector<std::uint32_t> header(int expected_dims) {
    const std::uint32_t magic = u32("magic");
    const std::uint32_t want = 0x0800u | static_cast<std::uint32_t>(expected_dims);
    if (magic != want) {
      char buf[96];
      std::snprintf(buf, sizeof buf, ": bad magic 0x%08x at offset 0 (expected 0x%08x)", magic, want);
      throw Error(ErrorKind::bad_magic, path_ + buf);
    }
    std::vector<std::uint32_t> dims;
    for (int i = 0; i < expected_dims; ++i) dims.push_back(u32("dimensions"));
    return dims;
  }

 private:
  std::string path_;
  std::unique_ptr<gzFile_s, GzCloser> file_;
  std::size_t offset_ = 0;
};

}  // namespace

IdxData read_idx(const std::string& images_path, const std::string& labels_path, int classes) {
  IdxReader images(images_path);
  const std::vector<std::uint32_t> dims = images.header(3);
  IdxReader labels(labels_path);
  const std::vector<std::uint32_t> ldims = labels.header(1);
  if (dims[0] != ldims[0]) throw Error(ErrorKind::dimension_mismatch, "image and label counts differ");

  const std::size_t count = dims[0];
  const std::size_t pixels = static_cast<std::size_t>(dims[1]) * dims[2];
  IdxData out;
  out.images.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(count));
  std::vector<unsigned char> buf(pixels);
  for (std::size_t i = 0; i < count; ++i) {
    images.read(buf.data(), pixels, "pixels");
    for (std::size_t j = 0; j < pixels; ++j) out.images(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = buf[j];
  }
  std::vector<unsigned char> lbuf(count);
  labels.read(lbuf.data(), count, "labels");
  out.labels.assign(lbuf.begin(), lbuf.end());
  for (std::size_t i = 0; i < count; ++i)
    if (out.labels[i] >= classes)
      throw Error(ErrorKind::label_range, labels_path + ": label " + std::to_string(out.labels[i]) + " at index " +
                                              std::to_string(i) + " is not below " + std::to_string(classes));
  return out;
}

void write_idx(const std::string& images_path, const std::string& labels_path, const IdxData& data,
               const std::vector<int>& image_dims) {
  auto put32 = [](std::ofstream& f, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    f.write(b, 4);
  };
  if (image_dims.size() != 2 || image_dims[0] * image_dims[1] != data.images.rows())
    throw Error(ErrorKind::dimension_mismatch, "image dimensions do not match the data");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw Error(ErrorKind::io, "cannot write IDX files");
  const auto count = static_cast<std::uint32_t>(data.images.cols());
  put32(img, 0x0803);
  put32(img, count);
  put32(img, static_cast<std::uint32_t>(image_dims[0]));
  put32(img, static_cast<std::uint32_t>(image_dims[1]));
  for (Eigen::Index i = 0; i < data.images.cols(); ++i)
    for (Eigen::Index j = 0; j < data.images.rows(); ++j)
      img.put(static_cast<char>(static_cast<unsigned char>(std::clamp(data.images(j, i), 0.0, 255.0))));
  put32(lab, 0x0801);
  put32(lab, count);
  for (int y : data.labels) lab.put(static_cast<char>(y));
}

// ---------------------------------------------------------------------------
// Synthetic sets

Matrix pool_images(const Matrix& images, int factor) {
  if (factor == 1) return images;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(images.rows()))));
  if (factor < 1 || side * side != images.rows() || side % factor != 0)
    throw Error(ErrorKind::invalid_argument, "pooling needs square images with side divisible by the factor");
  const int out = side / factor;
  const double scale = 1.0 / (factor * factor);
  Matrix pooled = Matrix::Zero(out * out, images.cols());
  for (Eigen::Index c = 0; c < images.cols(); ++c)
    for (int r = 0; r < side; ++r)
      for (int q = 0; q < side; ++q) pooled((r / factor) * out + q / factor, c) += scale * images(r * side + q, c);
  return pooled;
}

Split make_blobs(int samples, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Split out;
  out.x.resize(2, samples);
  out.y.resize(samples);
  for (int i = 0; i < samples; ++i) {
    const int label = i % 2;
    const double cx = label ? 1.0 : -1.0;
    out.x(0, i) = cx + noise * gauss(rng);
    out.x(1, i) = 0.5 * cx + noise * gauss(rng);
    out.y[i] = label;
  }
  return out;
}

Split make_moons(int samples, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  Split out;
  out.x.resize(2, samples);
  out.y.resize(samples);
  for (int i = 0; i < samples; ++i) {
    const int label = i % 2;
    const double a = angle(rng);
    if (label == 0) {
      out.x(0, i) = std::cos(a);
      out.x(1, i) = std::sin(a);
    } else {
      out.x(0, i) = 1.0 - std::cos(a);
      out.x(1, i) = 0.5 - std::sin(a);
    }
    out.x(0, i) += noise * gauss(rng);
    out.x(1, i) += noise * gauss(rng);
    out.y[i] = label;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  s.mean = x.rowwise().mean();
  s.inv_std.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double var = (x.row(i).array() - s.mean(i)).square().mean();
    s.inv_std(i) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return s;
}

Standardizer Standardizer::fit_shared(const Matrix& x) {
  Standardizer s;
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  s.mean = Vector::Constant(x.rows(), mean);
  s.inv_std = Vector::Constant(x.rows(), var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0);
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  return (x.colwise() - mean).array().colwise() * inv_std.array();
}

std::vector<int> class_histogram(const std::vector<int>& y, int classes) {
  std::vector<int> h(classes, 0);
  for (int c : y) {
    if (c < 0 || c >= classes) throw Error(ErrorKind::label_range, "label " + std::to_string(c));
    ++h[c];
  }
  return h;
}

Dataset split_dataset(std::string name, const Split& all, int classes, const SplitSpec& spec) {
  const int total = all.size();
  if (spec.val < 0 || spec.test_fraction < 0.0 || spec.test_fraction >= 1.0)
    throw Error(ErrorKind::config, "split sizes out of range");
  if (spec.val + static_cast<int>(std::lround(spec.test_fraction * total)) >= total)
    throw Error(ErrorKind::config, "validation and test splits leave no training data");
  std::vector<std::vector<int>> by_class(classes);
  for (int i = 0; i < total; ++i) {
    if (all.y[i] < 0 || all.y[i] >= classes) throw Error(ErrorKind::label_range, "label " + std::to_string(all.y[i]));
    by_class[all.y[i]].push_back(i);
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<int> train, val, test;
  const double val_fraction = static_cast<double>(spec.val) / total;
  double val_carry = 0.0, test_carry = 0.0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    const int n_test = static_cast<int>(std::floor(spec.test_fraction * n + test_carry + 0.5));
    test_carry += spec.test_fraction * n - n_test;
    const int n_val = static_cast<int>(std::floor(val_fraction * n + val_carry + 0.5));
    val_carry += val_fraction * n - n_val;
    for (std::size_t i = 0; i < members.size(); ++i) {
      const int k = static_cast<int>(i);
      (k < n_test ? test : k < n_test + n_val ? val : train).push_back(members[i]);
    }
  }
  std::shuffle(train.begin(), train.end(), rng);
  std::shuffle(val.begin(), val.end(), rng);
  std::shuffle(test.begin(), test.end(), rng);

  Dataset out;
  out.name = std::move(name);
  out.classes = classes;
  out.train = all.subset(train);
  out.val = all.subset(val);
  out.test = all.subset(test);
  const Standardizer s = spec.standardization == Standardization::per_channel ? Standardizer::fit_shared(out.train.x)
                                                                              : Standardizer::fit(out.train.x);
  out.train.x = s.apply(out.train.x);
  out.val.x = s.apply(out.val.x);
  out.test.x = s.apply(out.test.x);
  return out;
}

}  // namespace dgnopt
