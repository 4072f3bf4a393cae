#pragma once

// Dense float64 tensors and layer-level reverse-mode differentiation.
//
// A Network is a plain value: an input shape, an ordered list of layer specs
// and one parameter list per layer. forward() records every intermediate in
// a Tape; backward() replays it in reverse, returning the gradient with
// respect to the input and accumulating parameter gradients.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace safl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class LayerKind : std::uint32_t {
  kDense = 1,
  kConv2d = 2,
  kLeakyRelu = 3,
  kTanh = 4,
  kSigmoid = 5,
  kFlatten = 6,
  kReshape = 7,
  kUpsample2d = 8,
};

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::kFlatten;
  int in = 0;       // dense fan-in / conv input channels
  int out = 0;      // dense fan-out / conv output channels
  int kernel = 0;   // conv kernel size
  int stride = 1;   // conv stride
  int factor = 2;   // upsample factor
  double alpha = 0.2;  // leaky relu slope
  Shape target;     // reshape per-sample shape

  static LayerSpec dense(int in, int out);
  /// "Same" zero padding: output spatial size is ceil(input / stride).
  static LayerSpec conv2d(int in_channels, int out_channels, int kernel, int stride);
  static LayerSpec leaky_relu(double alpha = 0.2);
  static LayerSpec tanh();
  static LayerSpec sigmoid();
  static LayerSpec flatten();
  static LayerSpec reshape(Shape per_sample);
  static LayerSpec upsample2d(int factor = 2);

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Per-layer parameter tensors: {weight, bias} for dense/conv, empty otherwise.
using ParamSet = std::vector<std::vector<Tensor>>;

struct Network {
  Shape input_shape;  // per sample, without the batch dimension
  std::vector<LayerSpec> layers;
  ParamSet params;
  std::uint64_t seed = 0;

  /// Checks shape compatibility and draws weights uniformly in
  /// +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
  static Network build(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

  Shape output_shape() const;
  std::size_t parameter_count() const;

  friend bool operator==(const Network&, const Network&) = default;
};

/// values[i] is the input of layer i; values.back() is the network output.
struct Tape {
  std::vector<Tensor> values;
};

/// `input` is [batch, input_shape...]. Throws InvalidArgument on mismatch.
Tensor forward(const Network& net, const Tensor& input, Tape* tape = nullptr);

ParamSet zero_grads(const Network& net);

/// Reverse pass over a tape produced by forward() on the same network.
/// Parameter gradients are added into `param_grads` when it is non-null.
Tensor backward(const Network& net, const Tape& tape, const Tensor& output_grad,
                ParamSet* param_grads = nullptr);

/// Clamps every parameter entry into [-c, c].
void clip_params(Network& net, double c);

bool params_within(const Network& net, double c);

enum class OptimizerKind : std::uint32_t { kSgd = 0, kRmsProp = 1 };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kRmsProp;
  double learning_rate = 5e-5;
  double rho = 0.9;
  double epsilon = 1e-8;
  ParamSet accumulators;

  static OptimizerState sgd(const Network& net, double learning_rate);
  static OptimizerState rmsprop(const Network& net, double learning_rate, double rho = 0.9,
                                double epsilon = 1e-8);
};

/// sgd: w -= lr g. rmsprop: a = rho a + (1 - rho) g^2; w -= lr g / sqrt(a + eps).
/// Throws NumericError carrying the layer index on non-finite gradients.
void optimizer_step(OptimizerState& state, Network& net, const ParamSet& grads);

/// Adds `scale * src` into `dst` (matching shapes).
void accumulate(ParamSet& dst, const ParamSet& src, double scale = 1.0);

// Checkpoint container: "SAFL", version, metadata, layer spec table,
// float64 parameter blobs, CRC32 trailer.
struct NamedNetwork {
  std::string name;
  Network net;
};

struct Checkpoint {
  std::string metadata;  // free-form key=value lines
  std::vector<NamedNetwork> networks;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace safl
