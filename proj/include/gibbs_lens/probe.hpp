#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "gibbs_lens/network.hpp"
#include "gibbs_lens/tensor.hpp"

namespace gibbs_lens {

/// Uniform bins over [lo, hi) plus underflow and overflow.
struct Binning {
  double lo = -128.0;
  double hi = 128.0;
  std::size_t bin_count = 64;
  double smoothing_epsilon = 1e-6;

  void validate() const;
  double width() const { return (hi - lo) / static_cast<double>(bin_count); }
  double edge(std::size_t i) const { return lo + width() * static_cast<double>(i); }
  std::vector<double> edges() const;

  friend bool operator==(const Binning&, const Binning&) = default;
};

/// Binned probability estimate of a Gibbs distribution. Interior mass plus
/// underflow and overflow sums to 1.
struct EnergyHistogram {
  Binning binning;
  std::vector<double> mass;
  std::size_t sample_count = 0;
  double underflow = 0.0;
  double overflow = 0.0;

  double total_mass() const;
  /// Builds a histogram from explicit masses; they must be non-negative and sum to 1.
  static EnergyHistogram from_masses(const Binning& binning, std::vector<double> mass, double underflow = 0.0,
                                     double overflow = 0.0);
};

enum class EnergyGroup { kF1, kF2 };

/// How a per-location energy sample is formed from the channel responses.
struct FieldOptions {
  enum class Aggregation { kMean, kSum };
  Aggregation aggregation = Aggregation::kMean;
  /// false: histogram the filter responses (negated energy); true: the energy itself.
  bool energy_sign = false;
};

/// One sample per spatial location of the group's convolution output: f1 (pre-activation)
/// for F1, f3 for F2. Each sample aggregates the channel responses at that location.
std::vector<double> energy_field(const Capture& capture, EnergyGroup group, const FieldOptions& options = {});

/// Half-open bins [edge_i, edge_{i+1}); values below lo or at/above hi go to under/overflow.
EnergyHistogram make_histogram(std::span<const double> samples, const Binning& binning);

/// Bin masses of N(mean, variance); tail mass goes to under/overflow.
EnergyHistogram gaussian_reference(const Binning& binning, double mean, double variance);

/// KL(p || q) in nats over interior bins plus under/overflow, after adding
/// smoothing_epsilon to every bin of both and renormalizing.
double kl_div(const EnergyHistogram& p, const EnergyHistogram& q);

/// Max |softmax(beta g) - normalized prod_k exp(g_k)^beta_lk| over the L outputs.
/// `beta` is row-major L x K.
double poe_deviation(std::span<const double> beta, std::size_t rows, std::span<const double> g);

struct RbmParams {
  std::vector<double> weights;  // V x H, row-major
  std::vector<double> visible_bias;
  std::vector<double> hidden_bias;
  std::size_t visible = 0;
  std::size_t hidden = 0;
};

/// -(b_H . f + x^T W f + b_V . x)
double rbm_energy(const RbmParams& params, std::span<const double> x, std::span<const double> f);

struct ProbeReport {
  EnergyHistogram reference;
  EnergyHistogram input;
  EnergyHistogram f1;
  EnergyHistogram f2;
  std::vector<double> probabilities;
  double kl_input = 0.0;
  double kl_f1 = 0.0;
  FieldOptions field;
};

ProbeReport probe(const NetworkSpec& spec, const Parameters& params, const Tensor& image,
                  const Binning& binning = {}, const FieldOptions& field = {}, double reference_mean = 0.0,
                  double reference_variance = 1024.0);

nlohmann::json to_json(const EnergyHistogram& h);
EnergyHistogram histogram_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProbeReport& report);

}  // namespace gibbs_lens
