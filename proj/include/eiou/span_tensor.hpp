#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "eiou/common.hpp"

namespace eiou {

// (start, end) coordinate of a span in the score plane; end is inclusive.
struct Cell {
  int start = 0;
  int end = 0;
};

// Upper-triangular cells i <= j < length in row-major order.
inline std::vector<Cell> valid_cells(int length) {
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(length) * static_cast<std::size_t>(length + 1) / 2);
  for (int i = 0; i < length; ++i) {
    for (int j = i; j < length; ++j) cells.push_back({i, j});
  }
  return cells;
}

// C x L x L array over the span plane of a sentence of `length` tokens padded
// to `padded_len`. Cells with i > j or j >= length are masked.
template <class T>
class SpanTensor {
 public:
  SpanTensor() = default;
  SpanTensor(int classes, int padded_len, int length)
      : classes_(classes), padded_len_(padded_len), length_(length),
        data_(static_cast<std::size_t>(classes) * padded_len * padded_len, T{}) {
    if (classes < 1 || length < 0 || padded_len < length) {
      throw Error("bad span tensor shape");
    }
  }

  int classes() const { return classes_; }
  int padded_len() const { return padded_len_; }
  int length() const { return length_; }

  bool valid(int i, int j) const { return i <= j && j < length_ && i >= 0; }

  T& at(int c, int i, int j) { return data_[offset(c, i, j)]; }
  const T& at(int c, int i, int j) const { return data_[offset(c, i, j)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const auto& other) const {
    return classes_ == other.classes() && padded_len_ == other.padded_len() &&
           length_ == other.length();
  }

  // Values of class slice c on the valid cells, in valid_cells() order.
  std::vector<double> slice_values(int c) const {
    std::vector<double> out;
    for (int i = 0; i < length_; ++i) {
      for (int j = i; j < length_; ++j) out.push_back(static_cast<double>(at(c, i, j)));
    }
    return out;
  }

  bool operator==(const SpanTensor&) const = default;

 private:
  std::size_t offset(int c, int i, int j) const {
    return (static_cast<std::size_t>(c) * padded_len_ + static_cast<std::size_t>(i)) * padded_len_ +
           static_cast<std::size_t>(j);
  }

  int classes_ = 0;
  int padded_len_ = 0;
  int length_ = 0;
  std::vector<T> data_;
};

using ScoreTensor = SpanTensor<double>;
using GoldTensor = SpanTensor<std::uint8_t>;

}  // namespace eiou
