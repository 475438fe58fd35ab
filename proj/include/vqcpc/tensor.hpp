#ifndef VQCPC_TENSOR_HPP
#define VQCPC_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqcpc {

namespace detail {
// Thread-local high-water mark of the largest single tensor allocation,
// in elements. Used by structural memory tests (see AllocProbe).
void note_allocation(std::size_t elements);
std::size_t allocation_high_water();
void reset_allocation_high_water();
}  // namespace detail

/// Dense row-major tensor of real scalars. S is float (training) or
/// double (gradient checks).
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), S(0)) {
    detail::note_allocation(data_.size());
  }

  Tensor(std::vector<std::size_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
    detail::note_allocation(data_.size());
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<std::size_t> shape, S v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  S& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const S& at2(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  S& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const S& at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

/// RAII scope that tracks the largest single tensor allocated inside it.
/// The skewing-trick tests use this to assert that the relative-attention
/// path never materializes a full per-pair relative-embedding tensor.
class AllocProbe {
 public:
  AllocProbe() { detail::reset_allocation_high_water(); }
  std::size_t max_single_allocation() const {
    return detail::allocation_high_water();
  }
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace vqcpc

#endif
