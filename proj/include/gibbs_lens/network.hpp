#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gibbs_lens/dataset.hpp"
#include "gibbs_lens/tensor.hpp"

namespace gibbs_lens {

enum class Arch : std::uint8_t { kReduced = 0, kCnn1 = 1, kCnn2 = 2 };

std::string_view arch_name(Arch arch);
/// Parses "CNN1" / "CNN2" (case-insensitive); anything else throws std::invalid_argument.
Arch parse_arch(std::string_view tag);

enum class LayerKind { kConv, kMaxPoolRelu, kFullyConnected, kSoftmax };

/// Random variable a layer belongs to in the layer-group factorization.
enum class RandomVariable { kF1, kF2, kFY };
enum class GroupRole { kPrior, kLikelihood };

std::string_view to_string(LayerKind kind);
std::string_view to_string(RandomVariable rv);

struct LayerDesc {
  std::string name;  // f1 .. f5, fY
  LayerKind kind;
  Shape output;
  RandomVariable variable;
};

/// Maps each layer to F1 / F2 / FY. F1 is the prior; F2 and FY model the likelihood.
struct LayerGroup {
  std::vector<RandomVariable> layer_variables;

  static GroupRole role(RandomVariable rv) {
    return rv == RandomVariable::kF1 ? GroupRole::kPrior : GroupRole::kLikelihood;
  }
  std::vector<std::size_t> layers_of(RandomVariable rv) const;
};

/// conv -> maxpool+relu -> conv -> maxpool+relu -> fully connected -> softmax.
/// CNN1 and CNN2 fix the sizes; reduced variants exist for gradient checking.
struct NetworkSpec {
  Arch arch = Arch::kCnn1;
  std::size_t input_side = kImageSide;
  std::size_t conv1_kernel = 3;
  std::size_t conv1_filters = 20;
  std::size_t conv2_kernel = 5;
  std::size_t conv2_filters = 60;
  std::size_t classes = 10;

  static NetworkSpec cnn1();
  static NetworkSpec cnn2();
  static NetworkSpec reduced(std::size_t input_side, std::size_t conv1_kernel, std::size_t conv1_filters,
                             std::size_t conv2_kernel, std::size_t conv2_filters, std::size_t classes);

  Shape input_shape() const { return Shape{input_side, input_side, 1}; }
  /// Output shape of each of the six layers, in order; throws when the chain does not fit.
  std::vector<LayerDesc> layers() const;
  LayerGroup group() const;
  std::size_t fc_inputs() const;
};

inline constexpr std::size_t kLayerCount = 6;
enum LayerIndex : std::size_t { kF1 = 0, kF2 = 1, kF3 = 2, kF4 = 3, kF5 = 4, kFY = 5 };

struct Parameters {
  KernelBank conv1;
  KernelBank conv2;
  Tensor fc_weight;  // [M, L]
  Tensor fc_bias;    // [L]

  /// Zero-filled parameters shaped for `spec`.
  static Parameters zeros_like(const NetworkSpec& spec);

  /// Fixed order: conv1 kernels, conv1 bias, conv2 kernels, conv2 bias, fc weight, fc bias.
  std::array<Tensor*, 6> tensors();
  std::array<const Tensor*, 6> tensors() const;
  std::size_t count() const;

  friend bool operator==(const Parameters& a, const Parameters& b);
};

using Gradients = Parameters;

struct Network {
  NetworkSpec spec;
  Parameters params;
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, deterministic in seed.
Parameters init_parameters(const NetworkSpec& spec, std::uint64_t seed);
Network build_network(const NetworkSpec& spec, std::uint64_t seed);
Network build_network(std::string_view arch_tag, std::uint64_t seed);

/// Outputs of one forward pass: f1 .. f5 and fY, plus what backward needs.
struct Capture {
  Tensor input;
  std::array<Tensor, kLayerCount> layers;
  std::array<std::vector<std::uint32_t>, 2> pool_argmax;  // for f2 and f4

  const Tensor& probabilities() const { return layers[kFY]; }
};

Capture forward(const NetworkSpec& spec, const Parameters& params, const Tensor& image);

/// Gradient of cross_entropy(softmax output, label) with respect to every parameter.
Gradients backward(const NetworkSpec& spec, const Parameters& params, const Capture& capture, std::size_t label);

struct TrainConfig {
  double learning_rate = 3e-4;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 1;
  bool stop_at_zero_train_error = true;
  /// 0 = read GIBBS_LENS_THREADS, falling back to the hardware concurrency.
  std::size_t threads = 0;

  void validate() const;
};

/// v <- momentum * v - lr * g; p <- p + v.
void sgd_step(Parameters& params, const Gradients& grads, Parameters& velocity, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch;
  double train_loss;
  double train_err;
  double test_err;
};

struct TrainMetrics {
  std::vector<EpochRecord> epochs;
  bool reached_zero_train_error = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
  Parameters params;
  TrainMetrics metrics;
};

TrainResult train(const NetworkSpec& spec, Parameters params, const SyntheticDataset& dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

std::size_t predict(const NetworkSpec& spec, const Parameters& params, const Tensor& image);

/// Fraction of samples whose argmax prediction differs from the label.
double evaluate(const NetworkSpec& spec, const Parameters& params, std::span<const Sample> split,
                std::size_t threads = 0);

/// Worker count from GIBBS_LENS_THREADS (0 or unset = hardware concurrency).
std::size_t resolve_threads(std::size_t requested);

// Checkpoints: "GCKP", version u16, arch u8, then per tensor: rank u8, extents u32, float64 data.
inline constexpr std::uint16_t kCheckpointVersion = 1;
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

/// CSV with header `epoch,train_loss,train_err,test_err`.
std::string metrics_csv(const TrainMetrics& metrics);

}  // namespace gibbs_lens
