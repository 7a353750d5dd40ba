#include "gibbs_lens/network.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "gibbs_lens/rng.hpp"
#include "gibbs_lens/text_format.hpp"

namespace gibbs_lens {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5EED;

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is handled by
// exactly one worker; callers write results into per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
}

void add_into(Parameters& acc, const Parameters& g) {
  auto dst = acc.tensors();
  auto src = g.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t) {
    double* d = dst[t]->raw();
    const double* s = src[t]->raw();
    for (std::size_t i = 0; i < dst[t]->size(); ++i) d[i] += s[i];
  }
}

void require_same_shapes(const char* op, const Parameters& a, const Parameters& b) {
  auto ta = a.tensors();
  auto tb = b.tensors();
  for (std::size_t t = 0; t < ta.size(); ++t) {
    if (!(ta[t]->shape() == tb[t]->shape())) {
      throw std::invalid_argument(std::string(op) + ": parameter tensor " + std::to_string(t) + " shape " +
                                  ta[t]->shape().to_string() + " does not match " + tb[t]->shape().to_string());
    }
  }
}

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

std::string_view arch_name(Arch arch) {
  switch (arch) {
    case Arch::kCnn1: return "CNN1";
    case Arch::kCnn2: return "CNN2";
    case Arch::kReduced: return "reduced";
  }
  return "unknown";
}

Arch parse_arch(std::string_view tag) {
  std::string upper(tag);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "CNN1") return Arch::kCnn1;
  if (upper == "CNN2") return Arch::kCnn2;
  throw std::invalid_argument("unknown architecture \"" + std::string(tag) + "\" (expected CNN1 or CNN2)");
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kMaxPoolRelu: return "maxpool+relu";
    case LayerKind::kFullyConnected: return "fully_connected";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "unknown";
}

std::string_view to_string(RandomVariable rv) {
  switch (rv) {
    case RandomVariable::kF1: return "F1";
    case RandomVariable::kF2: return "F2";
    case RandomVariable::kFY: return "FY";
  }
  return "unknown";
}

std::vector<std::size_t> LayerGroup::layers_of(RandomVariable rv) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layer_variables.size(); ++i) {
    if (layer_variables[i] == rv) out.push_back(i);
  }
  return out;
}

NetworkSpec NetworkSpec::cnn1() { return NetworkSpec{}; }

NetworkSpec NetworkSpec::cnn2() {
  NetworkSpec s;
  s.arch = Arch::kCnn2;
  s.conv2_filters = 36;
  return s;
}

NetworkSpec NetworkSpec::reduced(std::size_t input_side, std::size_t conv1_kernel, std::size_t conv1_filters,
                                 std::size_t conv2_kernel, std::size_t conv2_filters, std::size_t classes) {
  NetworkSpec s{Arch::kReduced, input_side, conv1_kernel, conv1_filters, conv2_kernel, conv2_filters, classes};
  s.layers();  // validates the shape chain
  return s;
}

std::vector<LayerDesc> NetworkSpec::layers() const {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("NetworkSpec: " + why + " (input side " + std::to_string(input_side) + ")");
  };
  if (conv1_kernel < 1 || conv2_kernel < 1 || conv1_filters < 1 || conv2_filters < 1 || classes < 2) {
    fail("kernel sizes, filter counts and classes must be positive");
  }
  if (input_side < conv1_kernel) fail("conv1 kernel larger than input");
  const std::size_t s1 = input_side - conv1_kernel + 1;
  if (s1 < 2) fail("conv1 output smaller than a pooling window");
  const std::size_t s2 = s1 / 2;
  if (s2 < conv2_kernel) fail("conv2 kernel larger than its input");
  const std::size_t s3 = s2 - conv2_kernel + 1;
  if (s3 < 2) fail("conv2 output smaller than a pooling window");
  const std::size_t s4 = s3 / 2;
  using RV = RandomVariable;
  return {
      {"f1", LayerKind::kConv, Shape{s1, s1, conv1_filters}, RV::kF1},
      {"f2", LayerKind::kMaxPoolRelu, Shape{s2, s2, conv1_filters}, RV::kF2},
      {"f3", LayerKind::kConv, Shape{s3, s3, conv2_filters}, RV::kF2},
      {"f4", LayerKind::kMaxPoolRelu, Shape{s4, s4, conv2_filters}, RV::kFY},
      {"f5", LayerKind::kFullyConnected, Shape{classes}, RV::kFY},
      {"fY", LayerKind::kSoftmax, Shape{classes}, RV::kFY},
  };
}

LayerGroup NetworkSpec::group() const {
  LayerGroup g;
  for (const auto& l : layers()) g.layer_variables.push_back(l.variable);
  return g;
}

std::size_t NetworkSpec::fc_inputs() const { return layers()[kF4].output.element_count(); }

Parameters Parameters::zeros_like(const NetworkSpec& spec) {
  Parameters p;
  p.conv1 = KernelBank(Tensor(Shape{spec.conv1_kernel, spec.conv1_kernel, 1, spec.conv1_filters}),
                       Tensor(Shape{spec.conv1_filters}));
  p.conv2 = KernelBank(Tensor(Shape{spec.conv2_kernel, spec.conv2_kernel, spec.conv1_filters, spec.conv2_filters}),
                       Tensor(Shape{spec.conv2_filters}));
  p.fc_weight = Tensor(Shape{spec.fc_inputs(), spec.classes});
  p.fc_bias = Tensor(Shape{spec.classes});
  return p;
}

std::array<Tensor*, 6> Parameters::tensors() {
  return {&conv1.kernels, &conv1.bias, &conv2.kernels, &conv2.bias, &fc_weight, &fc_bias};
}

std::array<const Tensor*, 6> Parameters::tensors() const {
  return {&conv1.kernels, &conv1.bias, &conv2.kernels, &conv2.bias, &fc_weight, &fc_bias};
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

bool operator==(const Parameters& a, const Parameters& b) {
  auto ta = a.tensors();
  auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!(*ta[i] == *tb[i])) return false;
  }
  return true;
}

Parameters init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  Parameters p = Parameters::zeros_like(spec);
  auto he_fill = [](Tensor& t, std::size_t fan_in, CounterRng& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data()) v = sd * rng.normal();
  };
  CounterRng r1(derive_seed(seed, kInitStream, 1));
  CounterRng r2(derive_seed(seed, kInitStream, 2));
  CounterRng r3(derive_seed(seed, kInitStream, 3));
  he_fill(p.conv1.kernels, spec.conv1_kernel * spec.conv1_kernel, r1);
  he_fill(p.conv2.kernels, spec.conv2_kernel * spec.conv2_kernel * spec.conv1_filters, r2);
  he_fill(p.fc_weight, spec.fc_inputs(), r3);
  return p;
}

Network build_network(const NetworkSpec& spec, std::uint64_t seed) { return {spec, init_parameters(spec, seed)}; }

Network build_network(std::string_view arch_tag, std::uint64_t seed) {
  const Arch arch = parse_arch(arch_tag);
  return build_network(arch == Arch::kCnn1 ? NetworkSpec::cnn1() : NetworkSpec::cnn2(), seed);
}

Capture forward(const NetworkSpec& spec, const Parameters& params, const Tensor& image) {
  if (!(image.shape() == spec.input_shape())) {
    throw std::invalid_argument("forward: image shape " + image.shape().to_string() + " does not match " +
                                spec.input_shape().to_string());
  }
  Capture c;
  c.input = image;
  c.layers[kF1] = conv2d(image, params.conv1);
  PoolResult p1 = maxpool2(c.layers[kF1]);
  c.layers[kF2] = relu(p1.output);
  c.pool_argmax[0] = std::move(p1.argmax);
  c.layers[kF3] = conv2d(c.layers[kF2], params.conv2);
  PoolResult p2 = maxpool2(c.layers[kF3]);
  c.layers[kF4] = relu(p2.output);
  c.pool_argmax[1] = std::move(p2.argmax);
  c.layers[kF5] = linear(c.layers[kF4], params.fc_weight, params.fc_bias);
  c.layers[kFY] = softmax(c.layers[kF5]);
  return c;
}

Gradients backward(const NetworkSpec& spec, const Parameters& params, const Capture& capture, std::size_t label) {
  const auto descs = spec.layers();
  if (!(capture.input.shape() == spec.input_shape())) {
    throw std::invalid_argument("backward: stale capture, input " + capture.input.shape().to_string());
  }
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    if (!(capture.layers[i].shape() == descs[i].output)) {
      throw std::invalid_argument("backward: stale capture, layer " + descs[i].name + " has shape " +
                                  capture.layers[i].shape().to_string() + ", expected " +
                                  descs[i].output.to_string());
    }
  }
  if (capture.pool_argmax[0].size() != capture.layers[kF2].size() ||
      capture.pool_argmax[1].size() != capture.layers[kF4].size()) {
    throw std::invalid_argument("backward: stale capture, pooling indices do not match");
  }

  Gradients g;
  const Tensor d_logits = softmax_cross_entropy_grad(capture.probabilities(), label);
  LinearGrads fc = linear_backward(capture.layers[kF4], params.fc_weight, d_logits);
  g.fc_weight = std::move(fc.weight);
  g.fc_bias = std::move(fc.bias);

  const Tensor d_pool2 = relu_backward(capture.layers[kF4], fc.input);
  const Tensor d_f3 = maxpool2_backward(capture.layers[kF3].shape(), capture.pool_argmax[1], d_pool2);
  Conv2dGrads c2 = conv2d_backward(capture.layers[kF2], params.conv2, d_f3, true);
  g.conv2 = std::move(c2.bank);

  const Tensor d_pool1 = relu_backward(capture.layers[kF2], c2.input);
  const Tensor d_f1 = maxpool2_backward(capture.layers[kF1].shape(), capture.pool_argmax[0], d_pool1);
  Conv2dGrads c1 = conv2d_backward(capture.input, params.conv1, d_f1, false);
  g.conv1 = std::move(c1.bank);
  return g;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be at least 1");
}

void sgd_step(Parameters& params, const Gradients& grads, Parameters& velocity, const TrainConfig& config) {
  require_same_shapes("sgd_step", params, grads);
  require_same_shapes("sgd_step", params, velocity);
  auto p = params.tensors();
  auto g = grads.tensors();
  auto v = velocity.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    double* pd = p[t]->raw();
    const double* gd = g[t]->raw();
    double* vd = v[t]->raw();
    for (std::size_t i = 0; i < p[t]->size(); ++i) {
      vd[i] = config.momentum * vd[i] - config.learning_rate * gd[i];
      pd[i] += vd[i];
    }
  }
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GIBBS_LENS_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::size_t predict(const NetworkSpec& spec, const Parameters& params, const Tensor& image) {
  return argmax(forward(spec, params, image).layers[kF5].data());
}

double evaluate(const NetworkSpec& spec, const Parameters& params, std::span<const Sample> split,
                std::size_t threads) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<std::uint8_t> wrong(split.size());
  parallel_for(split.size(), resolve_threads(threads), [&](std::size_t i) {
    wrong[i] = predict(spec, params, split[i].to_tensor()) != split[i].label;
  });
  const auto errors = std::count(wrong.begin(), wrong.end(), std::uint8_t{1});
  return static_cast<double>(errors) / static_cast<double>(split.size());
}

TrainResult train(const NetworkSpec& spec, Parameters params, const SyntheticDataset& dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.train.empty()) throw std::invalid_argument("train: empty training split");
  if (dataset.test.empty()) throw std::invalid_argument("train: empty testing split");
  require_same_shapes("train", params, Parameters::zeros_like(spec));
  for (const auto* split : {&dataset.train, &dataset.test}) {
    for (const Sample& s : *split) {
      if (s.label >= spec.classes) throw std::invalid_argument("train: label out of range for network");
    }
  }

  const std::size_t threads = resolve_threads(config.threads);
  std::vector<Tensor> images;
  images.reserve(dataset.train.size());
  for (const Sample& s : dataset.train) images.push_back(s.to_tensor());

  TrainResult result{std::move(params), {}};
  Parameters velocity = Parameters::zeros_like(spec);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    CounterRng rng(derive_seed(config.seed, kShuffleStream, epoch));
    shuffle(std::span<std::size_t>(order), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::vector<Gradients> per_example(n);
      std::vector<double> losses(n);
      parallel_for(n, threads, [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        const Capture cap = forward(spec, result.params, images[idx]);
        losses[k] = cross_entropy(cap.probabilities(), dataset.train[idx].label);
        per_example[k] = backward(spec, result.params, cap, dataset.train[idx].label);
      });
      // Fixed example-order reduction keeps results independent of the worker count.
      Gradients batch = Parameters::zeros_like(spec);
      for (std::size_t k = 0; k < n; ++k) {
        add_into(batch, per_example[k]);
        loss_sum += losses[k];
      }
      const double scale = 1.0 / static_cast<double>(n);
      for (Tensor* t : batch.tensors()) {
        for (double& v : t->data()) v *= scale;
      }
      sgd_step(result.params, batch, velocity, config);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()),
                    evaluate(spec, result.params, dataset.train, threads),
                    evaluate(spec, result.params, dataset.test, threads)};
    result.metrics.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.train_err == 0.0) {
      result.metrics.reached_zero_train_error = true;
      if (config.stop_at_zero_train_error) break;
    }
  }
  return result;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  if (net.spec.arch == Arch::kReduced) {
    throw std::invalid_argument("save_checkpoint: only CNN1 and CNN2 checkpoints are supported");
  }
  require_same_shapes("save_checkpoint", net.params, Parameters::zeros_like(net.spec));
  std::vector<std::uint8_t> out;
  for (char c : {'G', 'C', 'K', 'P'}) out.push_back(static_cast<std::uint8_t>(c));
  put_le(out, kCheckpointVersion, 2);
  put_le(out, static_cast<std::uint8_t>(net.spec.arch), 1);
  for (const Tensor* t : net.params.tensors()) {
    put_le(out, t->shape().rank(), 1);
    for (std::size_t e : t->shape().extents()) put_le(out, e, 4);
    for (double v : t->data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write to " + path.string() + " failed");
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto take = [&](int n) {
    if (pos + static_cast<std::size_t>(n) > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated file " + path.string());
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += static_cast<std::size_t>(n);
    return v;
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "GCKP", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  pos = 4;
  if (const auto version = take(2); version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto arch = static_cast<Arch>(take(1));
  Network net;
  if (arch == Arch::kCnn1) {
    net.spec = NetworkSpec::cnn1();
  } else if (arch == Arch::kCnn2) {
    net.spec = NetworkSpec::cnn2();
  } else {
    throw std::runtime_error("checkpoint: unknown architecture tag " + std::to_string(static_cast<int>(arch)));
  }
  net.params = Parameters::zeros_like(net.spec);
  for (Tensor* t : net.params.tensors()) {
    const auto rank = take(1);
    if (rank != t->shape().rank()) throw std::runtime_error("checkpoint: tensor rank mismatch");
    for (std::size_t e : t->shape().extents()) {
      if (take(4) != e) throw std::runtime_error("checkpoint: tensor extent mismatch");
    }
    for (double& v : t->data()) v = std::bit_cast<double>(take(8));
  }
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  return net;
}

std::string metrics_csv(const TrainMetrics& metrics) {
  std::string out = "epoch,train_loss,train_err,test_err\n";
  for (const EpochRecord& r : metrics.epochs) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.train_err) + "," +
           format_double(r.test_err) + "\n";
  }
  return out;
}

}  // namespace gibbs_lens
