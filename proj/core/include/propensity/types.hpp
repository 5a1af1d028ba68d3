#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace propensity {

/// Milliseconds since the Unix epoch, UTC.
using TimestampMs = std::int64_t;
using DurationMs = std::int64_t;

inline constexpr DurationMs kMsPerHour = 3'600'000;
inline constexpr DurationMs kMsPerDay = 24 * kMsPerHour;
inline constexpr DurationMs kDefaultHorizonMs = 48 * kMsPerHour;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) noexcept { return std::isnan(v); }

inline double ms_to_days(DurationMs ms) noexcept {
  return static_cast<double>(ms) / static_cast<double>(kMsPerDay);
}

/// UTC calendar day index of a timestamp (floor division, valid for negatives).
inline std::int64_t utc_day(TimestampMs ts) noexcept {
  std::int64_t d = ts / kMsPerDay;
  if (ts % kMsPerDay < 0) --d;
  return d;
}

/// Monday = 0 ... Sunday = 6. 1970-01-01 was a Thursday.
inline int utc_weekday(TimestampMs ts) noexcept {
  std::int64_t w = (utc_day(ts) + 3) % 7;
  if (w < 0) w += 7;
  return static_cast<int>(w);
}

/// Base class for every error raised by the library, so callers can catch
/// library failures separately from std::bad_alloc and friends.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major dense matrix; NaN marks a missing cell.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return values_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return values_[r * cols_ + c];
  }

  std::span<const double> row(std::size_t r) const noexcept {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) noexcept {
    return {values_.data() + r * cols_, cols_};
  }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw Error("DenseMatrix::append_row: width mismatch");
    values_.insert(values_.end(), values.begin(), values.end());
    ++rows_;
  }

  /// New matrix holding the given rows, in the given order.
  DenseMatrix select_rows(std::span<const std::size_t> rows) const {
    DenseMatrix out(rows.size(), cols_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = row(rows[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  const std::vector<double>& values() const noexcept { return values_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

template <typename T>
std::vector<T> select(std::span<const T> values, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(values[i]);
  return out;
}

/// Logistic function, kept strictly inside (0, 1) for every finite input.
inline double sigmoid(double z) noexcept {
  double p;
  if (z >= 0) {
    p = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return p < lo ? lo : (p > hi ? hi : p);
}

inline double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

}  // namespace propensity
