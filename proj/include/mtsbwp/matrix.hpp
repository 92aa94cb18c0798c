#pragma once

#include <cassert>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace mtsbwp {

// Dense row-major double matrix, just enough for rate/bucket/token tables.
// Indexing is 0-based here; file formats and log messages use the 1-based
// (dp, ts) labels.
class Mat {
 public:
  Mat() = default;

  Mat(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols),
        v_(static_cast<std::size_t>(rows < 0 ? 0 : rows) *
               static_cast<std::size_t>(cols < 0 ? 0 : cols),
           fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Mat: negative size");
  }

  Mat(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = static_cast<int>(rows.size());
    cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    v_.reserve(static_cast<std::size_t>(rows_) * cols_);
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != cols_)
        throw std::invalid_argument("Mat: ragged initializer");
      v_.insert(v_.end(), row.begin(), row.end());
    }
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return v_.empty(); }

  double& operator()(int r, int c) {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return v_[static_cast<std::size_t>(r) * cols_ + c];
  }
  double operator()(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return v_[static_cast<std::size_t>(r) * cols_ + c];
  }

  const std::vector<double>& data() const { return v_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

}  // namespace mtsbwp
