#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace gibbs_lens {

/// Extents of a dense row-major tensor, rank 1 to 4.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents);
  explicit Shape(std::span<const std::size_t> extents);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return extents_[axis]; }
  std::size_t element_count() const;
  std::span<const std::size_t> extents() const { return {extents_.data(), rank_}; }

  std::string to_string() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.extents().size() == b.extents().size() &&
           std::equal(a.extents().begin(), a.extents().end(), b.extents().begin());
  }

 private:
  std::array<std::size_t, kMaxRank> extents_{};
  std::size_t rank_ = 0;
};

/// Allocator with a fixed 64-byte alignment. Vectorized reductions split work by
/// alignment, so a fixed alignment keeps floating-point results reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

/// Dense tensor of 64-bit floats. Images and feature maps use [H, W, C].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // [H, W, C] element access.
  double& at(std::size_t h, std::size_t w, std::size_t c) {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }

  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

/// Convolution filters in [Kh, Kw, Cin, Cout] layout plus one bias per output channel.
struct KernelBank {
  Tensor kernels;
  Tensor bias;

  KernelBank() = default;
  KernelBank(Tensor kernels, Tensor bias);

  std::size_t kernel_h() const { return kernels.shape()[0]; }
  std::size_t kernel_w() const { return kernels.shape()[1]; }
  std::size_t in_channels() const { return kernels.shape()[2]; }
  std::size_t out_channels() const { return kernels.shape()[3]; }
};

// ---------------------------------------------------------------------------
// Forward kernels. All are pure; shape violations throw std::invalid_argument.

/// Valid, stride-1 cross-correlation of an [H, W, Cin] input.
Tensor conv2d(const Tensor& input, const KernelBank& bank);

struct PoolResult {
  Tensor output;
  // Flat input index of the selected element for each output element.
  std::vector<std::uint32_t> argmax;
};

/// 2x2 / stride-2 max pooling; odd trailing rows and columns are dropped.
/// Ties resolve to the first element in row-major window order.
PoolResult maxpool2(const Tensor& input);

Tensor relu(const Tensor& input);

/// output_l = sum_m input_m * weight[m, l] + bias_l, input flattened row-major.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& logits);

/// -ln(probs[label]) with the probability floored at 1e-300.
double cross_entropy(const Tensor& probs, std::size_t label);

// ---------------------------------------------------------------------------
// Backward kernels.

struct Conv2dGrads {
  Tensor input;  // empty when not requested
  KernelBank bank;
};

Conv2dGrads conv2d_backward(const Tensor& input, const KernelBank& bank, const Tensor& grad_output,
                            bool want_input_grad);

Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                         const Tensor& grad_output);

/// Gradient through relu given the forward output; the subgradient at 0 is 0.
Tensor relu_backward(const Tensor& output, const Tensor& grad_output);

struct LinearGrads {
  Tensor input;  // shaped like the forward input
  Tensor weight;
  Tensor bias;
};

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output);

/// Gradient of cross_entropy(softmax(logits), label) with respect to the logits: probs - one_hot.
Tensor softmax_cross_entropy_grad(const Tensor& probs, std::size_t label);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> values);

}  // namespace gibbs_lens
