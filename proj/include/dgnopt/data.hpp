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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgnopt/linalg.hpp"

namespace dgnopt {

/// Labelled samples stored as columns.
struct Split {
  Matrix x;
  std::vector<int> y;
  int size() const { return static_cast<int>(y.size()); }
  Split subset(const std::vector<int>& index) const;
};

struct Dataset {
  std::string name;
  Split train, val, test;
  int classes = 0;
  int features() const { return static_cast<int>(train.x.rows()); }
};

/// Raw contents of an IDX image/label pair.
struct IdxData {
  Matrix images;  // one column per image, values in [0, 255]
  std::vector<int> labels;
};

/// Reads an IDX image file and its label file; gzip is detected from the magic bytes.
IdxData read_idx(const std::string& images_path, const std::string& labels_path, int classes = 10);
/// Writes uncompressed IDX files (unsigned bytes).
void write_idx(const std::string& images_path, const std::string& labels_path, const IdxData& data,
               const std::vector<int>& image_dims);

/// Mean pooling of square single-channel images (one per column) by `factor` along each side.
Matrix pool_images(const Matrix& images, int factor);

Split make_blobs(int samples, double noise, std::uint64_t seed);
Split make_moons(int samples, double noise, std::uint64_t seed);

enum class Standardization { per_feature, per_channel };

struct SplitSpec {
  int val = 512;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  /// per_channel shares one mean and deviation across all features (single-channel images).
  Standardization standardization = Standardization::per_feature;
};

/// Stratified train/val/test split, standardized with train statistics.
Dataset split_dataset(std::string name, const Split& all, int classes, const SplitSpec& spec);

/// Per-feature mean and inverse standard deviation (constant features keep scale 1).
struct Standardizer {
  Vector mean;
  Vector inv_std;
  static Standardizer fit(const Matrix& x);
  static Standardizer fit_shared(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

/// Per-class counts.
std::vector<int> class_histogram(const std::vector<int>& y, int classes);

}  // namespace dgnopt
