#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace celltopo {

/// Allocator with a fixed 64-byte alignment. Vectorized reductions pick
/// their summation order from the buffer address, so a fixed alignment is
/// what keeps repeated runs bit-identical.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles with rank <= 4. Images use the
/// channels x height x width layout throughout the library.
class Grid {
 public:
  using Shape = std::vector<int>;

  Grid() = default;
  explicit Grid(Shape shape, double fill = 0.0);
  Grid(Shape shape, std::vector<double> values);

  static Grid zeros_like(const Grid& other) { return Grid(other.shape_); }
  static Grid scalar(double v) { return Grid({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // rank-3 (C x H x W) accessors
  double& at(int c, int y, int x) {
    return values_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int c, int y, int x) const {
    return values_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  void fill(double v);
  Grid reshaped(Shape shape) const;

  /// Scalar value of a one-element grid.
  double item() const;

  bool all_finite() const;
  bool same_shape(const Grid& other) const { return shape_ == other.shape_; }
  bool operator==(const Grid& other) const = default;

 private:
  Shape shape_;
  AlignedBuffer values_;
};

std::string shape_string(const Grid::Shape& shape);

/// Padding and stride of a 2-D convolution. Stride-1 layers with even
/// kernels pad asymmetrically (lo on top/left, hi on bottom/right).
struct ConvGeometry {
  int stride = 1;
  int pad_lo = 0;
  int pad_hi = 0;

  static ConvGeometry symmetric(int stride, int padding) { return {stride, padding, padding}; }
  /// Size-preserving geometry for stride 1 and kernel k.
  static ConvGeometry same(int kernel) { return {1, (kernel - 1) / 2, kernel / 2}; }
  /// Size-halving geometry for stride 2 and kernel 4.
  static ConvGeometry halving() { return {2, 1, 1}; }

  int output_extent(int input, int kernel) const {
    return (input + pad_lo + pad_hi - kernel) / stride + 1;
  }
  /// Extent of the transposed-convolution output for an input of `input`.
  int transposed_extent(int input, int kernel) const {
    return (input - 1) * stride + kernel - pad_lo - pad_hi;
  }
};

/// Cross-correlation of a C x H x W input with O x C x k x k kernels plus an
/// optional per-output-channel bias (O values).
Grid conv2d(const Grid& input, const Grid& kernels, const Grid* bias, ConvGeometry geom);
Grid conv2d(const Grid& input, const Grid& kernels, const Grid* bias, int stride, int padding);

/// Adjoint of conv2d: C x H x W input, C x O x 4 x 4 kernels, stride 2,
/// padding 1, giving O x 2H x 2W. Other configurations are rejected.
Grid conv2d_transpose(const Grid& input, const Grid& kernels, const Grid* bias, int stride,
                      int padding);

namespace detail {

// Unchecked kernels shared by the public entry points and the tape.
Grid conv2d_forward(const Grid& input, const Grid& kernels, const Grid* bias, ConvGeometry geom);
void conv2d_backward(const Grid& input, const Grid& kernels, const Grid& grad_out,
                     ConvGeometry geom, Grid* grad_input, Grid* grad_kernels, Grid* grad_bias);

Grid conv_transpose_forward(const Grid& input, const Grid& kernels, const Grid* bias,
                            ConvGeometry geom);
void conv_transpose_backward(const Grid& input, const Grid& kernels, const Grid& grad_out,
                             ConvGeometry geom, Grid* grad_input, Grid* grad_kernels,
                             Grid* grad_bias);

void check_conv_shapes(const Grid& input, const Grid& kernels, const Grid* bias,
                       ConvGeometry geom);

}  // namespace detail

}  // namespace celltopo
