#include "celltopo/grid.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace celltopo {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t shape_product(const Grid::Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("grid dimensions must be positive, got " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Lowers a C x H x W image into a (C*k*k) x (Ho*Wo) patch matrix.
void im2col(const double* in, int channels, int height, int width, int k, ConvGeometry g,
            int out_h, int out_w, double* cols) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* src = in + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad_lo + ky;
          double* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, 0.0);
            continue;
          }
          const double* src_row = src + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad_lo + kx;
            row[ox] = (ix >= 0 && ix < width) ? src_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds a patch matrix back onto a C x H x W image (adjoint of im2col).
void col2im(const double* cols, int channels, int height, int width, int k, ConvGeometry g,
            int out_h, int out_w, double* img) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    double* dst = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad_lo + ky;
          if (iy < 0 || iy >= height) continue;
          const double* row = src + static_cast<std::size_t>(oy) * out_w;
          double* dst_row = dst + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad_lo + kx;
            if (ix >= 0 && ix < width) dst_row[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Grid::Grid(Shape shape, double fill) : shape_(std::move(shape)) {
  values_.assign(shape_product(shape_), fill);
}

Grid::Grid(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (shape_product(shape_) != values_.size()) {
    throw std::invalid_argument("value count " + std::to_string(values_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

void Grid::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Grid Grid::reshaped(Shape shape) const {
  Grid out;
  if (shape_product(shape) != values_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  out.shape_ = std::move(shape);
  out.values_ = values_;
  return out;
}

double Grid::item() const {
  if (values_.size() != 1) {
    throw std::invalid_argument("item() requires a one-element grid, got " + shape_string(shape_));
  }
  return values_[0];
}

bool Grid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Grid::Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

void check_conv_shapes(const Grid& input, const Grid& kernels, const Grid* bias,
                       ConvGeometry geom) {
  if (input.rank() != 3) {
    throw std::invalid_argument("conv2d input must be C x H x W, got " + shape_string(input.shape()));
  }
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw std::invalid_argument("conv2d kernels must be O x C x k x k, got " +
                                shape_string(kernels.shape()));
  }
  if (kernels.dim(1) != input.dim(0)) {
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_string(input.shape()) +
                                " vs kernels " + shape_string(kernels.shape()));
  }
  if (bias && bias->size() != static_cast<std::size_t>(kernels.dim(0))) {
    throw std::invalid_argument("conv2d bias must have " + std::to_string(kernels.dim(0)) +
                                " entries, got " + shape_string(bias->shape()));
  }
  if (geom.stride < 1 || geom.pad_lo < 0 || geom.pad_hi < 0) {
    throw std::invalid_argument("conv2d stride must be >= 1 and padding >= 0");
  }
  const int k = kernels.dim(2);
  if (input.dim(1) + geom.pad_lo + geom.pad_hi < k || input.dim(2) + geom.pad_lo + geom.pad_hi < k) {
    throw std::invalid_argument("conv2d input " + shape_string(input.shape()) +
                                " smaller than kernel extent after padding");
  }
}

Grid conv2d_forward(const Grid& input, const Grid& kernels, const Grid* bias, ConvGeometry geom) {
  const int channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const int out_channels = kernels.dim(0), k = kernels.dim(2);
  const int out_h = geom.output_extent(height, k), out_w = geom.output_extent(width, k);
  const int patch = channels * k * k, plane = out_h * out_w;

  AlignedBuffer cols(static_cast<std::size_t>(patch) * plane);
  im2col(input.data(), channels, height, width, k, geom, out_h, out_w, cols.data());

  Grid out({out_channels, out_h, out_w});
  MapMat out_m(out.data(), out_channels, plane);
  out_m.noalias() = ConstMapMat(kernels.data(), out_channels, patch) *
                    ConstMapMat(cols.data(), patch, plane);
  if (bias) {
    for (int o = 0; o < out_channels; ++o) out_m.row(o).array() += (*bias)[o];
  }
  return out;
}

void conv2d_backward(const Grid& input, const Grid& kernels, const Grid& grad_out,
                     ConvGeometry geom, Grid* grad_input, Grid* grad_kernels, Grid* grad_bias) {
  const int channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const int out_channels = kernels.dim(0), k = kernels.dim(2);
  const int out_h = grad_out.dim(1), out_w = grad_out.dim(2);
  const int patch = channels * k * k, plane = out_h * out_w;
  ConstMapMat dout(grad_out.data(), out_channels, plane);

  AlignedBuffer cols(static_cast<std::size_t>(patch) * plane);
  if (grad_kernels) {
    im2col(input.data(), channels, height, width, k, geom, out_h, out_w, cols.data());
    MapMat(grad_kernels->data(), out_channels, patch).noalias() +=
        dout * ConstMapMat(cols.data(), patch, plane).transpose();
  }
  if (grad_bias) {
    for (int o = 0; o < out_channels; ++o) (*grad_bias)[o] += dout.row(o).sum();
  }
  if (grad_input) {
    MapMat cols_m(cols.data(), patch, plane);
    cols_m.noalias() = ConstMapMat(kernels.data(), out_channels, patch).transpose() * dout;
    col2im(cols.data(), channels, height, width, k, geom, out_h, out_w, grad_input->data());
  }
}

Grid conv_transpose_forward(const Grid& input, const Grid& kernels, const Grid* bias,
                            ConvGeometry geom) {
  const int in_channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const int out_channels = kernels.dim(1), k = kernels.dim(2);
  const int out_h = geom.transposed_extent(height, k), out_w = geom.transposed_extent(width, k);
  const int patch = out_channels * k * k, plane = height * width;

  AlignedBuffer cols(static_cast<std::size_t>(patch) * plane);
  MapMat(cols.data(), patch, plane).noalias() =
      ConstMapMat(kernels.data(), in_channels, patch).transpose() *
      ConstMapMat(input.data(), in_channels, plane);

  Grid out({out_channels, out_h, out_w});
  col2im(cols.data(), out_channels, out_h, out_w, k, geom, height, width, out.data());
  if (bias) {
    MapMat out_m(out.data(), out_channels, out_h * out_w);
    for (int o = 0; o < out_channels; ++o) out_m.row(o).array() += (*bias)[o];
  }
  return out;
}

void conv_transpose_backward(const Grid& input, const Grid& kernels, const Grid& grad_out,
                             ConvGeometry geom, Grid* grad_input, Grid* grad_kernels,
                             Grid* grad_bias) {
  const int in_channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const int out_channels = kernels.dim(1), k = kernels.dim(2);
  const int out_h = grad_out.dim(1), out_w = grad_out.dim(2);
  const int patch = out_channels * k * k, plane = height * width;

  if (grad_bias) {
    ConstMapMat dout(grad_out.data(), out_channels, out_h * out_w);
    for (int o = 0; o < out_channels; ++o) (*grad_bias)[o] += dout.row(o).sum();
  }
  if (!grad_input && !grad_kernels) return;

  AlignedBuffer cols(static_cast<std::size_t>(patch) * plane);
  im2col(grad_out.data(), out_channels, out_h, out_w, k, geom, height, width, cols.data());
  ConstMapMat dcols(cols.data(), patch, plane);
  if (grad_input) {
    MapMat(grad_input->data(), in_channels, plane).noalias() +=
        ConstMapMat(kernels.data(), in_channels, patch) * dcols;
  }
  if (grad_kernels) {
    MapMat(grad_kernels->data(), in_channels, patch).noalias() +=
        ConstMapMat(input.data(), in_channels, plane) * dcols.transpose();
  }
}

}  // namespace detail

Grid conv2d(const Grid& input, const Grid& kernels, const Grid* bias, ConvGeometry geom) {
  detail::check_conv_shapes(input, kernels, bias, geom);
  return detail::conv2d_forward(input, kernels, bias, geom);
}

Grid conv2d(const Grid& input, const Grid& kernels, const Grid* bias, int stride, int padding) {
  return conv2d(input, kernels, bias, ConvGeometry::symmetric(stride, padding));
}

Grid conv2d_transpose(const Grid& input, const Grid& kernels, const Grid* bias, int stride,
                      int padding) {
  if (stride != 2 || padding != 1 || kernels.rank() != 4 || kernels.dim(2) != 4 ||
      kernels.dim(3) != 4) {
    throw std::invalid_argument(
        "conv2d_transpose supports only the doubling configuration (4x4 kernel, stride 2, "
        "padding 1)");
  }
  if (input.rank() != 3 || kernels.dim(0) != input.dim(0)) {
    throw std::invalid_argument("conv2d_transpose channel mismatch: input " +
                                shape_string(input.shape()) + " vs kernels " +
                                shape_string(kernels.shape()));
  }
  if (bias && bias->size() != static_cast<std::size_t>(kernels.dim(1))) {
    throw std::invalid_argument("conv2d_transpose bias must have one entry per output channel");
  }
  return detail::conv_transpose_forward(input, kernels, bias, ConvGeometry::halving());
}

}  // namespace celltopo
