#include "safl/tensor.hpp"

#include <Eigen/Core>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "safl/errors.hpp"

namespace safl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, ho, wo, pad_top, pad_left;

  std::size_t patch() const { return cin * k * k; }
  std::size_t positions() const { return ho * wo; }
};

ConvGeometry conv_geometry(const LayerSpec& spec, const Shape& in) {
  ConvGeometry g{};
  g.cin = in[0];
  g.h = in[1];
  g.w = in[2];
  g.cout = static_cast<std::size_t>(spec.out);
  g.k = static_cast<std::size_t>(spec.kernel);
  g.stride = static_cast<std::size_t>(spec.stride);
  g.ho = (g.h + g.stride - 1) / g.stride;
  g.wo = (g.w + g.stride - 1) / g.stride;
  const long pad_h = std::max<long>(0, static_cast<long>((g.ho - 1) * g.stride + g.k) - static_cast<long>(g.h));
  const long pad_w = std::max<long>(0, static_cast<long>((g.wo - 1) * g.stride + g.k) - static_cast<long>(g.w));
  g.pad_top = static_cast<std::size_t>(pad_h / 2);
  g.pad_left = static_cast<std::size_t>(pad_w / 2);
  return g;
}

// Valid output columns [lo, hi) for kernel column kj: those whose input
// column oj * stride + kj - pad_left lies inside [0, w).
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
  const long offset = static_cast<long>(kj) - static_cast<long>(g.pad_left);
  const long s = static_cast<long>(g.stride);
  long lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  long hi = (static_cast<long>(g.w) - 1 - offset) / s + 1;
  if (static_cast<long>(g.w) - 1 - offset < 0) hi = 0;
  lo = std::min<long>(lo, static_cast<long>(g.wo));
  hi = std::clamp<long>(hi, lo, static_cast<long>(g.wo));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Patch matrix of one sample: row r of the K x P block starts at cols + r * ld.
void im2col(const double* in, const ConvGeometry& g, double* cols, std::size_t ld) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad_top);
          double* dst = row + oi * g.wo;
          if (ii < 0 || ii >= static_cast<long>(g.h) || lo >= hi) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = in + (c * g.h + static_cast<std::size_t>(ii)) * g.w + kj - g.pad_left;
          std::fill(dst, dst + lo, 0.0);
          for (std::size_t oj = lo; oj < hi; ++oj) dst[oj] = src[oj * g.stride];
          std::fill(dst + hi, dst + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* in_grad, std::size_t ld) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad_top);
          if (ii < 0 || ii >= static_cast<long>(g.h)) {
            continue;
          }
          double* dst = in_grad + (c * g.h + static_cast<std::size_t>(ii)) * g.w + kj - g.pad_left;
          const double* src = row + oi * g.wo;
          for (std::size_t oj = lo; oj < hi; ++oj) dst[oj * g.stride] += src[oj];
        }
      }
    }
  }
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    return InvalidArgument("layer " + std::to_string(index) + " (" + layer_kind_name(spec.kind) +
                           "): " + why + ", input shape " + shape_string(in));
  };
  switch (spec.kind) {
    case LayerKind::kDense:
      if (in.size() != 1 || in[0] != static_cast<std::size_t>(spec.in)) {
        throw fail("expects a flat input of size " + std::to_string(spec.in));
      }
      return {static_cast<std::size_t>(spec.out)};
    case LayerKind::kConv2d: {
      if (in.size() != 3 || in[0] != static_cast<std::size_t>(spec.in)) {
        throw fail("expects [" + std::to_string(spec.in) + ", H, W]");
      }
      const ConvGeometry g = conv_geometry(spec, in);
      return {g.cout, g.ho, g.wo};
    }
    case LayerKind::kUpsample2d:
      if (in.size() != 3) {
        throw fail("expects [C, H, W]");
      }
      return {in[0], in[1] * spec.factor, in[2] * spec.factor};
    case LayerKind::kLeakyRelu:
    case LayerKind::kTanh:
    case LayerKind::kSigmoid:
      return in;
    case LayerKind::kFlatten:
      return {shape_size(in)};
    case LayerKind::kReshape:
      if (shape_size(spec.target) != shape_size(in)) {
        throw fail("cannot reshape to " + shape_string(spec.target));
      }
      return spec.target;
  }
  throw fail("unknown layer kind");
}

Shape with_batch(std::size_t batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

Tensor layer_forward(const LayerSpec& spec, const std::vector<Tensor>& params, const Tensor& x,
                     const Shape& out_per_sample) {
  const std::size_t batch = x.shape[0];
  Tensor y(with_batch(batch, out_per_sample));
  switch (spec.kind) {
    case LayerKind::kDense: {
      const auto in = static_cast<Eigen::Index>(spec.in);
      const auto out = static_cast<Eigen::Index>(spec.out);
      ConstMatMap xm(x.data.data(), static_cast<Eigen::Index>(batch), in);
      ConstMatMap wm(params[0].data.data(), out, in);
      Eigen::Map<const Eigen::RowVectorXd> bm(params[1].data.data(), out);
      MatMap ym(y.data.data(), static_cast<Eigen::Index>(batch), out);
      ym.noalias() = xm * wm.transpose();
      ym.rowwise() += bm;
      break;
    }
    case LayerKind::kConv2d: {
      const Shape in_shape(x.shape.begin() + 1, x.shape.end());
      const ConvGeometry g = conv_geometry(spec, in_shape);
      const auto K = static_cast<Eigen::Index>(g.patch());
      const auto P = static_cast<Eigen::Index>(g.positions());
      const auto C = static_cast<Eigen::Index>(g.cout);
      const std::size_t in_stride = g.cin * g.h * g.w;
      RowMat cols(K, P);
      ConstMatMap wm(params[0].data.data(), C, K);
      Eigen::Map<const Eigen::VectorXd> bias(params[1].data.data(), C);
      for (std::size_t b = 0; b < batch; ++b) {
        im2col(x.data.data() + b * in_stride, g, cols.data(), g.positions());
        MatMap ym(y.data.data() + b * g.cout * g.positions(), C, P);
        ym.noalias() = wm * cols;
        ym.colwise() += bias;
      }
      break;
    }
    case LayerKind::kUpsample2d: {
      const std::size_t c = x.shape[1], h = x.shape[2], w = x.shape[3];
      const std::size_t f = static_cast<std::size_t>(spec.factor);
      const std::size_t ho = h * f, wo = w * f;
      for (std::size_t bc = 0; bc < batch * c; ++bc) {
        const double* src = x.data.data() + bc * h * w;
        double* dst = y.data.data() + bc * ho * wo;
        for (std::size_t i = 0; i < ho; ++i) {
          for (std::size_t j = 0; j < wo; ++j) {
            dst[i * wo + j] = src[(i / f) * w + j / f];
          }
        }
      }
      break;
    }
    case LayerKind::kLeakyRelu:
      for (std::size_t i = 0; i < x.size(); ++i) {
        y.data[i] = x.data[i] > 0.0 ? x.data[i] : spec.alpha * x.data[i];
      }
      break;
    case LayerKind::kTanh:
      for (std::size_t i = 0; i < x.size(); ++i) {
        y.data[i] = std::tanh(x.data[i]);
      }
      break;
    case LayerKind::kSigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) {
        y.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
      }
      break;
    case LayerKind::kFlatten:
    case LayerKind::kReshape:
      y.data = x.data;
      break;
  }
  return y;
}

// Returns dL/dx; adds parameter gradients into `pg` when non-null.
Tensor layer_backward(const LayerSpec& spec, const std::vector<Tensor>& params, const Tensor& x,
                      const Tensor& y, const Tensor& gy, std::vector<Tensor>* pg) {
  const std::size_t batch = x.shape[0];
  Tensor gx(x.shape);
  switch (spec.kind) {
    case LayerKind::kDense: {
      const auto in = static_cast<Eigen::Index>(spec.in);
      const auto out = static_cast<Eigen::Index>(spec.out);
      const auto B = static_cast<Eigen::Index>(batch);
      ConstMatMap xm(x.data.data(), B, in);
      ConstMatMap wm(params[0].data.data(), out, in);
      ConstMatMap gym(gy.data.data(), B, out);
      MatMap gxm(gx.data.data(), B, in);
      gxm.noalias() = gym * wm;
      if (pg != nullptr) {
        MatMap gw((*pg)[0].data.data(), out, in);
        gw.noalias() += gym.transpose() * xm;
        // Plain loops: Eigen reductions peel by alignment, which makes the
        // summation order (and the last bits) depend on where buffers land.
        double* gb = (*pg)[1].data.data();
        for (Eigen::Index b = 0; b < B; ++b)
          for (Eigen::Index o = 0; o < out; ++o) gb[o] += gym(b, o);
      }
      break;
    }
    case LayerKind::kConv2d: {
      const Shape in_shape(x.shape.begin() + 1, x.shape.end());
      const ConvGeometry g = conv_geometry(spec, in_shape);
      const auto K = static_cast<Eigen::Index>(g.patch());
      const auto P = static_cast<Eigen::Index>(g.positions());
      const auto C = static_cast<Eigen::Index>(g.cout);
      const std::size_t in_stride = g.cin * g.h * g.w;
      ConstMatMap wm(params[0].data.data(), C, K);
      RowMat cols(K, P);
      RowMat gcols(K, P);
      for (std::size_t b = 0; b < batch; ++b) {
        ConstMatMap gym(gy.data.data() + b * g.cout * g.positions(), C, P);
        if (pg != nullptr) {
          im2col(x.data.data() + b * in_stride, g, cols.data(), g.positions());
          MatMap gw((*pg)[0].data.data(), C, K);
          gw.noalias() += gym * cols.transpose();
          double* gb = (*pg)[1].data.data();
          for (Eigen::Index c = 0; c < C; ++c) {
            const double* row = gym.data() + c * P;
            double sum = 0.0;
            for (Eigen::Index q = 0; q < P; ++q) sum += row[q];
            gb[c] += sum;
          }
        }
        gcols.noalias() = wm.transpose() * gym;
        col2im_add(gcols.data(), g, gx.data.data() + b * in_stride, g.positions());
      }
      break;
    }
    case LayerKind::kUpsample2d: {
      const std::size_t c = x.shape[1], h = x.shape[2], w = x.shape[3];
      const std::size_t f = static_cast<std::size_t>(spec.factor);
      const std::size_t ho = h * f, wo = w * f;
      for (std::size_t bc = 0; bc < batch * c; ++bc) {
        const double* src = gy.data.data() + bc * ho * wo;
        double* dst = gx.data.data() + bc * h * w;
        for (std::size_t i = 0; i < ho; ++i) {
          for (std::size_t j = 0; j < wo; ++j) {
            dst[(i / f) * w + j / f] += src[i * wo + j];
          }
        }
      }
      break;
    }
    case LayerKind::kLeakyRelu:
      for (std::size_t i = 0; i < x.size(); ++i) {
        gx.data[i] = x.data[i] > 0.0 ? gy.data[i] : spec.alpha * gy.data[i];
      }
      break;
    case LayerKind::kTanh:
      for (std::size_t i = 0; i < x.size(); ++i) {
        gx.data[i] = gy.data[i] * (1.0 - y.data[i] * y.data[i]);
      }
      break;
    case LayerKind::kSigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) {
        gx.data[i] = gy.data[i] * y.data[i] * (1.0 - y.data[i]);
      }
      break;
    case LayerKind::kFlatten:
    case LayerKind::kReshape:
      gx.data = gy.data;
      break;
  }
  return gx;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? ", " : "") + std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw InvalidArgument("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_string(shape));
  }
}

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kTanh: return "tanh";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kReshape: return "reshape";
    case LayerKind::kUpsample2d: return "upsample2d";
  }
  return "unknown";
}

LayerSpec LayerSpec::dense(int in, int out) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv2d(int in_channels, int out_channels, int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.in = in_channels;
  s.out = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::leaky_relu(double alpha) {
  LayerSpec s;
  s.kind = LayerKind::kLeakyRelu;
  s.alpha = alpha;
  return s;
}

LayerSpec LayerSpec::tanh() {
  LayerSpec s;
  s.kind = LayerKind::kTanh;
  return s;
}

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::kSigmoid;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec LayerSpec::reshape(Shape per_sample) {
  LayerSpec s;
  s.kind = LayerKind::kReshape;
  s.target = std::move(per_sample);
  return s;
}

LayerSpec LayerSpec::upsample2d(int factor) {
  LayerSpec s;
  s.kind = LayerKind::kUpsample2d;
  s.factor = factor;
  return s;
}

Network Network::build(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed) {
  Network net;
  net.input_shape = std::move(input_shape);
  net.layers = std::move(layers);
  net.seed = seed;
  std::mt19937_64 rng(seed);
  Shape shape = net.input_shape;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i];
    if ((spec.kind == LayerKind::kDense || spec.kind == LayerKind::kConv2d) && (spec.in < 1 || spec.out < 1)) {
      throw InvalidArgument("layer " + std::to_string(i) + ": channel counts must be positive");
    }
    if (spec.kind == LayerKind::kConv2d && (spec.kernel < 1 || spec.stride < 1)) {
      throw InvalidArgument("layer " + std::to_string(i) + ": kernel and stride must be positive");
    }
    if (spec.kind == LayerKind::kUpsample2d && spec.factor < 1) {
      throw InvalidArgument("layer " + std::to_string(i) + ": upsample factor must be positive");
    }
    shape = layer_output_shape(spec, shape, i);
    std::vector<Tensor> params;
    if (spec.kind == LayerKind::kDense || spec.kind == LayerKind::kConv2d) {
      const std::size_t k2 = spec.kind == LayerKind::kConv2d ? static_cast<std::size_t>(spec.kernel * spec.kernel) : 1;
      const double fan_in = static_cast<double>(spec.in * k2);
      const double fan_out = static_cast<double>(spec.out * k2);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor w({static_cast<std::size_t>(spec.out), static_cast<std::size_t>(spec.in) * k2});
      for (double& v : w.data) {
        v = dist(rng);
      }
      params.push_back(std::move(w));
      params.emplace_back(Shape{static_cast<std::size_t>(spec.out)});
    }
    net.params.push_back(std::move(params));
  }
  return net;
}

Shape Network::output_shape() const {
  Shape shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    shape = layer_output_shape(layers[i], shape, i);
  }
  return shape;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : params) {
    for (const Tensor& t : layer) {
      n += t.size();
    }
  }
  return n;
}

Tensor forward(const Network& net, const Tensor& input, Tape* tape) {
  if (input.shape.size() != net.input_shape.size() + 1 || input.shape[0] == 0 ||
      !std::equal(net.input_shape.begin(), net.input_shape.end(), input.shape.begin() + 1)) {
    throw InvalidArgument("network expects input [batch, " + shape_string(net.input_shape).substr(1) +
                          " but got " + shape_string(input.shape));
  }
  if (tape != nullptr) {
    tape->values.clear();
    tape->values.reserve(net.layers.size() + 1);
  }
  Tensor x = input;
  Shape per_sample = net.input_shape;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    per_sample = layer_output_shape(net.layers[i], per_sample, i);
    Tensor y = layer_forward(net.layers[i], net.params[i], x, per_sample);
    if (tape != nullptr) {
      tape->values.push_back(std::move(x));
    }
    x = std::move(y);
  }
  if (tape != nullptr) {
    tape->values.push_back(x);
  }
  return x;
}

ParamSet zero_grads(const Network& net) {
  ParamSet grads;
  grads.reserve(net.params.size());
  for (const auto& layer : net.params) {
    std::vector<Tensor> g;
    for (const Tensor& t : layer) {
      g.emplace_back(t.shape);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

Tensor backward(const Network& net, const Tape& tape, const Tensor& output_grad, ParamSet* param_grads) {
  if (tape.values.size() != net.layers.size() + 1) {
    throw InvalidArgument("tape does not belong to this network");
  }
  if (output_grad.shape != tape.values.back().shape) {
    throw InvalidArgument("output gradient shape " + shape_string(output_grad.shape) +
                          " does not match output " + shape_string(tape.values.back().shape));
  }
  Tensor g = output_grad;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    std::vector<Tensor>* pg = param_grads != nullptr ? &(*param_grads)[i] : nullptr;
    g = layer_backward(net.layers[i], net.params[i], tape.values[i], tape.values[i + 1], g, pg);
  }
  return g;
}

void clip_params(Network& net, double c) {
  if (!(c > 0.0)) {
    throw InvalidArgument("clip bound must be positive");
  }
  for (auto& layer : net.params) {
    for (Tensor& t : layer) {
      for (double& v : t.data) {
        v = std::min(std::max(v, -c), c);
      }
    }
  }
}

bool params_within(const Network& net, double c) {
  for (const auto& layer : net.params) {
    for (const Tensor& t : layer) {
      for (double v : t.data) {
        if (!(v >= -c && v <= c)) {
          return false;
        }
      }
    }
  }
  return true;
}

OptimizerState OptimizerState::sgd(const Network& net, double learning_rate) {
  OptimizerState s;
  s.kind = OptimizerKind::kSgd;
  s.learning_rate = learning_rate;
  s.accumulators = zero_grads(net);
  return s;
}

OptimizerState OptimizerState::rmsprop(const Network& net, double learning_rate, double rho, double epsilon) {
  OptimizerState s;
  s.kind = OptimizerKind::kRmsProp;
  s.learning_rate = learning_rate;
  s.rho = rho;
  s.epsilon = epsilon;
  s.accumulators = zero_grads(net);
  return s;
}

void optimizer_step(OptimizerState& state, Network& net, const ParamSet& grads) {
  if (grads.size() != net.params.size() || state.accumulators.size() != net.params.size()) {
    throw InvalidArgument("gradient layout does not match the network");
  }
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    if (grads[i].size() != net.params[i].size()) {
      throw InvalidArgument("gradient layout does not match layer " + std::to_string(i));
    }
    for (std::size_t j = 0; j < net.params[i].size(); ++j) {
      const Tensor& g = grads[i][j];
      if (g.shape != net.params[i][j].shape) {
        throw InvalidArgument("gradient shape mismatch at layer " + std::to_string(i));
      }
      for (double v : g.data) {
        if (!std::isfinite(v)) {
          throw NumericError("non-finite gradient in layer " + std::to_string(i), i);
        }
      }
    }
  }
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    for (std::size_t j = 0; j < net.params[i].size(); ++j) {
      std::vector<double>& w = net.params[i][j].data;
      const std::vector<double>& g = grads[i][j].data;
      if (state.kind == OptimizerKind::kSgd) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          w[k] -= state.learning_rate * g[k];
        }
      } else {
        std::vector<double>& a = state.accumulators[i][j].data;
        for (std::size_t k = 0; k < w.size(); ++k) {
          a[k] = state.rho * a[k] + (1.0 - state.rho) * g[k] * g[k];
          w[k] -= state.learning_rate * g[k] / std::sqrt(a[k] + state.epsilon);
        }
      }
    }
  }
}

void accumulate(ParamSet& dst, const ParamSet& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].size(); ++j) {
      std::vector<double>& d = dst[i][j].data;
      const std::vector<double>& s = src[i][j].data;
      for (std::size_t k = 0; k < d.size(); ++k) {
        d[k] += scale * s[k];
      }
    }
  }
}

namespace {

void write_shape(detail::ByteWriter& out, const Shape& s) {
  out.u32(static_cast<std::uint32_t>(s.size()));
  for (std::size_t d : s) {
    out.u32(static_cast<std::uint32_t>(d));
  }
}

Shape read_shape(detail::ByteReader& in) {
  const std::uint32_t rank = in.u32();
  if (rank > 8) {
    throw MalformedFile("checkpoint: implausible tensor rank " + std::to_string(rank));
  }
  Shape s(rank);
  for (auto& d : s) {
    d = in.u32();
  }
  return s;
}

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter out;
  out.bytes("SAFL");
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
  out.bytes(ckpt.metadata);
  out.u32(static_cast<std::uint32_t>(ckpt.networks.size()));
  // Layer spec table.
  for (const auto& [name, net] : ckpt.networks) {
    out.u32(static_cast<std::uint32_t>(name.size()));
    out.bytes(name);
    out.put<std::uint64_t>(net.seed);
    write_shape(out, net.input_shape);
    out.u32(static_cast<std::uint32_t>(net.layers.size()));
    for (const LayerSpec& l : net.layers) {
      out.u32(static_cast<std::uint32_t>(l.kind));
      out.put<std::int32_t>(l.in);
      out.put<std::int32_t>(l.out);
      out.put<std::int32_t>(l.kernel);
      out.put<std::int32_t>(l.stride);
      out.put<std::int32_t>(l.factor);
      out.f64(l.alpha);
      write_shape(out, l.target);
    }
  }
  // Parameter blobs, in table order.
  for (const auto& entry : ckpt.networks) {
    for (const auto& layer : entry.net.params) {
      out.u32(static_cast<std::uint32_t>(layer.size()));
      for (const Tensor& t : layer) {
        write_shape(out, t.shape);
        for (double v : t.data) {
          out.f64(v);
        }
      }
    }
  }
  const auto& bytes = out.data();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
  out.u32(crc);
  return out.data();
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& source) {
  if (bytes.size() < 8) {
    throw MalformedFile(source + ": too short for a checkpoint");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 4);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
  if (crc != stored) {
    throw MalformedFile(source + ": CRC32 mismatch");
  }
  detail::ByteReader in(std::span<const char>(bytes.data(), body), source);
  if (in.bytes(4) != "SAFL") {
    throw MalformedFile(source + ": bad magic");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw MalformedFile(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = std::string(in.bytes(in.u32()));
  const std::uint32_t count = in.u32();
  for (std::uint32_t n = 0; n < count; ++n) {
    NamedNetwork entry;
    entry.name = std::string(in.bytes(in.u32()));
    entry.net.seed = in.get<std::uint64_t>();
    entry.net.input_shape = read_shape(in);
    const std::uint32_t layers = in.u32();
    for (std::uint32_t i = 0; i < layers; ++i) {
      LayerSpec l;
      l.kind = static_cast<LayerKind>(in.u32());
      l.in = in.get<std::int32_t>();
      l.out = in.get<std::int32_t>();
      l.kernel = in.get<std::int32_t>();
      l.stride = in.get<std::int32_t>();
      l.factor = in.get<std::int32_t>();
      l.alpha = in.f64();
      l.target = read_shape(in);
      entry.net.layers.push_back(l);
    }
    ckpt.networks.push_back(std::move(entry));
  }
  for (auto& entry : ckpt.networks) {
    // Validates the layer table and yields the expected parameter layout.
    Network reference;
    try {
      reference = Network::build(entry.net.input_shape, entry.net.layers, 0);
    } catch (const InvalidArgument& e) {
      throw MalformedFile(source + ": network '" + entry.name + "': " + e.what());
    }
    for (std::size_t i = 0; i < entry.net.layers.size(); ++i) {
      const std::uint32_t n_params = in.u32();
      if (n_params != reference.params[i].size()) {
        throw MalformedFile(source + ": parameter count mismatch in '" + entry.name + "'");
      }
      std::vector<Tensor> params;
      for (std::uint32_t j = 0; j < n_params; ++j) {
        Shape shape = read_shape(in);
        if (shape != reference.params[i][j].shape) {
          throw MalformedFile(source + ": parameter shape mismatch in '" + entry.name + "'");
        }
        Tensor t(shape);
        for (double& v : t.data) {
          v = in.f64();
        }
        params.push_back(std::move(t));
      }
      entry.net.params.push_back(std::move(params));
    }
  }
  if (in.remaining() != 0) {
    throw MalformedFile(source + ": trailing bytes before CRC");
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path), path);
}

}  // namespace safl
