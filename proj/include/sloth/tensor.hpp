#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sloth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor vector(std::vector<double> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(shape_) + " vs " +
                       shape_str(other.shape_));
    }
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!all_finite(t.data())) throw NumericError(std::string("non-finite values in ") + what);
}

/// sign with sign(0) == 0.
inline double sign(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline double norm_l1(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

inline double norm_l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double norm_linf(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

inline std::size_t argmin(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::min_element(v.begin(), v.end())));
}

namespace detail {
inline void require_logits(const Tensor& logits, const char* what) {
  if (logits.rank() != 1 || logits.size() < 2) {
    throw ShapeError(std::string(what) + ": expected a logit vector of length >= 2, got " +
                     shape_str(logits.shape()));
  }
  require_finite(logits, what);
}
}  // namespace detail

/// Max-shifted softmax; accepts any finite logits.
inline Tensor softmax(const Tensor& logits) {
  detail::require_logits(logits, "softmax");
  const auto z = logits.data();
  const double shift = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    p[j] = std::exp(z[j] - shift);
    total += p[j];
  }
  for (double& v : p) v /= total;
  return Tensor::vector(std::move(p));
}

inline Tensor log_softmax(const Tensor& logits) {
  detail::require_logits(logits, "log_softmax");
  const auto z = logits.data();
  const double shift = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - shift);
  const double lse = shift + std::log(total);
  std::vector<double> out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] - lse;
  return Tensor::vector(std::move(out));
}

/// Shannon entropy (natural log) of a probability vector; 0·log 0 = 0.
inline double entropy(const Tensor& probs) {
  double h = 0.0;
  for (double p : probs.data()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

inline void require_distribution(const Tensor& target, std::size_t m, const char* what) {
  if (target.rank() != 1 || target.size() != m) {
    throw ShapeError(std::string(what) + ": target length " + std::to_string(target.size()) +
                     " does not match " + std::to_string(m) + " logits");
  }
  double total = 0.0;
  for (double v : target.data()) {
    if (!std::isfinite(v) || v < 0.0) {
      throw NumericError(std::string(what) + ": target has a negative or non-finite entry");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw NumericError(std::string(what) + ": target sums to " + std::to_string(total));
  }
}

/// -sum_j target_j * log softmax(logits)_j, for a probability-vector target.
inline double cross_entropy(const Tensor& logits, const Tensor& target) {
  const Tensor logp = log_softmax(logits);
  require_distribution(target, logits.size(), "cross_entropy");
  double loss = 0.0;
  for (std::size_t j = 0; j < logp.size(); ++j) {
    if (target[j] != 0.0) loss -= target[j] * logp[j];
  }
  return loss;
}

/// d cross_entropy / d logits = softmax(logits) - target (target sums to one).
inline Tensor cross_entropy_grad(const Tensor& logits, const Tensor& target) {
  Tensor p = softmax(logits);
  require_distribution(target, logits.size(), "cross_entropy_grad");
  for (std::size_t j = 0; j < p.size(); ++j) p[j] -= target[j];
  return p;
}

inline Tensor one_hot(std::size_t m, std::size_t label) {
  if (label >= m) throw ShapeError("label " + std::to_string(label) + " out of range");
  Tensor t({m});
  t[label] = 1.0;
  return t;
}

}  // namespace sloth
