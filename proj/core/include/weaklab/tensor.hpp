#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace weaklab {

// Dense row-major float tensor with an explicit shape. Instance features,
// spectrograms and images all travel in this container; model arithmetic
// happens in double internally.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
  }
  Tensor(std::vector<int> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("tensor data size does not match shape");
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= d;
    }
    return s.empty() ? 0 : n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  // 2-D accessors for (rows, cols) layouts.
  float& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
  }
  float at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_to_string(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

} // namespace weaklab
