#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ccau::npy {

// Minimal NPY (format version 1.0) support for dense little-endian arrays.
// Covers the dtypes the pipeline stores: '<f4', '<f8'. Data is held as
// float in memory; '<f8' round-trips through the double overloads.

struct Array {
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t numel() const {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

Array load(const std::string& path);
void save(const std::string& path, const Array& arr);

std::vector<double> load_f64(const std::string& path, std::vector<int64_t>* shape);
void save_f64(const std::string& path, const std::vector<int64_t>& shape,
              const std::vector<double>& data);

}  // namespace ccau::npy
