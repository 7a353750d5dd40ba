#include "gibbs_lens/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include <Eigen/Core>

namespace gibbs_lens {

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.shape().rank() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + " tensor, got " + t.shape().to_string());
  }
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> extents)
    : Shape(std::span<const std::size_t>(extents.begin(), extents.size())) {}

Shape::Shape(std::span<const std::size_t> extents) {
  if (extents.empty() || extents.size() > kMaxRank) {
    throw std::invalid_argument("Shape: rank must be in [1, 4], got " + std::to_string(extents.size()));
  }
  for (std::size_t e : extents) {
    if (e == 0) throw std::invalid_argument("Shape: extents must be positive");
  }
  std::copy(extents.begin(), extents.end(), extents_.begin());
  rank_ = extents.size();
}

std::size_t Shape::element_count() const {
  if (rank_ == 0) return 0;
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= extents_[i];
  return n;
}

std::string Shape::to_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < rank_; ++i) {
    if (i) s += "x";
    s += std::to_string(extents_[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.element_count(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.element_count()) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_.to_string());
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

KernelBank::KernelBank(Tensor k, Tensor b) : kernels(std::move(k)), bias(std::move(b)) {
  if (kernels.shape().rank() != 4) {
    throw std::invalid_argument("KernelBank: kernels must be [Kh, Kw, Cin, Cout], got " +
                                kernels.shape().to_string());
  }
  if (bias.shape().rank() != 1 || bias.size() != kernels.shape()[3]) {
    throw std::invalid_argument("KernelBank: bias " + bias.shape().to_string() +
                                " does not match kernels " + kernels.shape().to_string());
  }
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t h, w, cin, kh, kw, cout, ho, wo;
  std::size_t patch() const { return kh * kw * cin; }
};

ConvGeometry conv_geometry(const char* op, const Tensor& input, const KernelBank& bank) {
  require_rank(op, input, 3);
  ConvGeometry g{input.shape()[0], input.shape()[1], input.shape()[2], bank.kernel_h(), bank.kernel_w(),
                 bank.out_channels(), 0, 0};
  if (g.h < g.kh || g.w < g.kw || g.cin != bank.in_channels()) {
    shape_error(op, "input " + input.shape().to_string() + " incompatible with kernels " +
                        bank.kernels.shape().to_string());
  }
  g.ho = g.h - g.kh + 1;
  g.wo = g.w - g.kw + 1;
  return g;
}

// Row (y * wo + x) holds the receptive field of output (y, x) in [Kh, Kw, Cin] order,
// matching the row layout of the [Kh, Kw, Cin, Cout] kernel tensor.
RowMatrix im2col(const Tensor& input, const ConvGeometry& g) {
  RowMatrix cols(static_cast<Eigen::Index>(g.ho * g.wo), static_cast<Eigen::Index>(g.patch()));
  const double* in = input.raw();
  for (std::size_t y = 0; y < g.ho; ++y) {
    for (std::size_t x = 0; x < g.wo; ++x) {
      double* row = cols.data() + (y * g.wo + x) * g.patch();
      for (std::size_t i = 0; i < g.kh; ++i) {
        const double* src = in + ((y + i) * g.w + x) * g.cin;
        std::copy(src, src + g.kw * g.cin, row + i * g.kw * g.cin);
      }
    }
  }
  return cols;
}

}  // namespace

Tensor conv2d(const Tensor& input, const KernelBank& bank) {
  const ConvGeometry g = conv_geometry("conv2d", input, bank);
  const RowMatrix cols = im2col(input, g);
  ConstMatrixMap kern(bank.kernels.raw(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.cout));
  Tensor out(Shape{g.ho, g.wo, g.cout});
  MatrixMap o(out.raw(), static_cast<Eigen::Index>(g.ho * g.wo), static_cast<Eigen::Index>(g.cout));
  o.noalias() = cols * kern;
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bank.bias.raw(), static_cast<Eigen::Index>(g.cout));
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const KernelBank& bank, const Tensor& grad_output,
                            bool want_input_grad) {
  const ConvGeometry g = conv_geometry("conv2d_backward", input, bank);
  if (!(grad_output.shape() == Shape{g.ho, g.wo, g.cout})) {
    shape_error("conv2d_backward", "output gradient " + grad_output.shape().to_string() +
                                       " does not match expected " + Shape{g.ho, g.wo, g.cout}.to_string());
  }
  const auto rows = static_cast<Eigen::Index>(g.ho * g.wo);
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto cout = static_cast<Eigen::Index>(g.cout);
  ConstMatrixMap go(grad_output.raw(), rows, cout);

  Conv2dGrads grads;
  grads.bank = KernelBank(Tensor(bank.kernels.shape()), Tensor(bank.bias.shape()));
  const RowMatrix cols = im2col(input, g);
  MatrixMap gk(grads.bank.kernels.raw(), patch, cout);
  gk.noalias() = cols.transpose() * go;
  double* gb = grads.bank.bias.raw();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cout; ++c) gb[c] += go(r, c);
  }

  if (want_input_grad) {
    ConstMatrixMap kern(bank.kernels.raw(), patch, cout);
    const RowMatrix gcols = go * kern.transpose();
    grads.input = Tensor(input.shape());
    double* gi = grads.input.raw();
    for (std::size_t y = 0; y < g.ho; ++y) {
      for (std::size_t x = 0; x < g.wo; ++x) {
        const double* row = gcols.data() + (y * g.wo + x) * g.patch();
        for (std::size_t i = 0; i < g.kh; ++i) {
          double* dst = gi + ((y + i) * g.w + x) * g.cin;
          const double* src = row + i * g.kw * g.cin;
          for (std::size_t k = 0; k < g.kw * g.cin; ++k) dst[k] += src[k];
        }
      }
    }
  }
  return grads;
}

PoolResult maxpool2(const Tensor& input) {
  require_rank("maxpool2", input, 3);
  const std::size_t h = input.shape()[0], w = input.shape()[1], c = input.shape()[2];
  if (h < 2 || w < 2) {
    shape_error("maxpool2", "input " + input.shape().to_string() + " is smaller than one 2x2 window");
  }
  const std::size_t ho = h / 2, wo = w / 2;
  PoolResult r{Tensor(Shape{ho, wo, c}), std::vector<std::uint32_t>(ho * wo * c)};
  const double* in = input.raw();
  double* out = r.output.raw();
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (2 * y * w + 2 * x) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (y * wo + x) * c + ch;
        out[o] = in[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                         const Tensor& grad_output) {
  if (argmax.size() != grad_output.size()) {
    shape_error("maxpool2_backward", "argmax length " + std::to_string(argmax.size()) +
                                         " does not match output gradient " + grad_output.shape().to_string());
  }
  Tensor grad(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    if (argmax[o] >= grad.size()) shape_error("maxpool2_backward", "argmax index out of range");
    grad[argmax[o]] += grad_output[o];
  }
  return grad;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_output) {
  if (!(output.shape() == grad_output.shape())) {
    shape_error("relu_backward", "output " + output.shape().to_string() + " vs gradient " +
                                     grad_output.shape().to_string());
  }
  Tensor grad(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) grad[i] = output[i] > 0.0 ? grad_output[i] : 0.0;
  return grad;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", weight, 2);
  const std::size_t m = weight.shape()[0], l = weight.shape()[1];
  if (input.size() != m || bias.size() != l) {
    shape_error("linear", "input " + input.shape().to_string() + ", weight " + weight.shape().to_string() +
                              ", bias " + bias.shape().to_string() + " are incompatible");
  }
  Tensor out(Shape{l});
  for (std::size_t j = 0; j < l; ++j) out[j] = bias[j];
  const double* w = weight.raw();
  for (std::size_t i = 0; i < m; ++i) {
    const double v = input[i];
    const double* wr = w + i * l;
    for (std::size_t j = 0; j < l; ++j) out[j] += v * wr[j];
  }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output) {
  require_rank("linear_backward", weight, 2);
  const std::size_t m = weight.shape()[0], l = weight.shape()[1];
  if (input.size() != m || grad_output.size() != l) {
    shape_error("linear_backward", "input " + input.shape().to_string() + ", weight " +
                                       weight.shape().to_string() + ", gradient " +
                                       grad_output.shape().to_string() + " are incompatible");
  }
  LinearGrads g{Tensor(input.shape()), Tensor(weight.shape()), grad_output};
  const double* w = weight.raw();
  double* gw = g.weight.raw();
  for (std::size_t i = 0; i < m; ++i) {
    const double v = input[i];
    const double* wr = w + i * l;
    double* gr = gw + i * l;
    double acc = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      gr[j] = v * grad_output[j];
      acc += wr[j] * grad_output[j];
    }
    g.input[i] = acc;
  }
  return g;
}

Tensor softmax(const Tensor& logits) {
  if (logits.size() == 0) shape_error("softmax", "empty logits");
  double mx = logits[0];
  for (double v : logits.data()) mx = std::max(mx, v);
  Tensor out(logits.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out.data()) v /= sum;
  return out;
}

double cross_entropy(const Tensor& probs, std::size_t label) {
  if (label >= probs.size()) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of range for " +
                                std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[label], 1e-300));
}

Tensor softmax_cross_entropy_grad(const Tensor& probs, std::size_t label) {
  if (label >= probs.size()) {
    throw std::invalid_argument("softmax_cross_entropy_grad: label " + std::to_string(label) +
                                " out of range for " + std::to_string(probs.size()) + " classes");
  }
  Tensor g = probs;
  g[label] -= 1.0;
  return g;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace gibbs_lens
