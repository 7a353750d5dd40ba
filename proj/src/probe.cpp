#include "gibbs_lens/probe.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gibbs_lens {

void Binning::validate() const {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw std::invalid_argument("Binning: require finite lo < hi");
  }
  if (bin_count < 2) throw std::invalid_argument("Binning: bin_count must be at least 2");
  if (!(smoothing_epsilon > 0.0)) throw std::invalid_argument("Binning: smoothing_epsilon must be positive");
}

std::vector<double> Binning::edges() const {
  std::vector<double> e(bin_count + 1);
  for (std::size_t i = 0; i <= bin_count; ++i) e[i] = edge(i);
  e[bin_count] = hi;
  return e;
}

double EnergyHistogram::total_mass() const {
  double s = underflow + overflow;
  for (double m : mass) s += m;
  return s;
}

EnergyHistogram EnergyHistogram::from_masses(const Binning& binning, std::vector<double> mass, double underflow,
                                             double overflow) {
  binning.validate();
  if (mass.size() != binning.bin_count) {
    throw std::invalid_argument("EnergyHistogram: " + std::to_string(mass.size()) + " masses for " +
                                std::to_string(binning.bin_count) + " bins");
  }
  EnergyHistogram h{binning, std::move(mass), 0, underflow, overflow};
  for (double m : h.mass) {
    if (!(m >= 0.0)) throw std::invalid_argument("EnergyHistogram: negative or NaN mass");
  }
  if (!(underflow >= 0.0) || !(overflow >= 0.0)) {
    throw std::invalid_argument("EnergyHistogram: negative tail mass");
  }
  if (std::abs(h.total_mass() - 1.0) > 1e-9) {
    throw std::invalid_argument("EnergyHistogram: masses sum to " + std::to_string(h.total_mass()));
  }
  return h;
}

std::vector<double> energy_field(const Capture& capture, EnergyGroup group, const FieldOptions& options) {
  const Tensor& layer = capture.layers[group == EnergyGroup::kF1 ? kF1 : kF3];
  if (layer.shape().rank() != 3) {
    throw std::invalid_argument(std::string("energy_field: capture has no ") +
                                (group == EnergyGroup::kF1 ? "f1" : "f3") + " output for this group");
  }
  const std::size_t locations = layer.shape()[0] * layer.shape()[1];
  const std::size_t channels = layer.shape()[2];
  const double scale = (options.aggregation == FieldOptions::Aggregation::kMean ? 1.0 / static_cast<double>(channels)
                                                                                 : 1.0) *
                       (options.energy_sign ? -1.0 : 1.0);
  std::vector<double> field(locations);
  const double* d = layer.raw();
  for (std::size_t loc = 0; loc < locations; ++loc) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += d[loc * channels + c];
    field[loc] = s * scale;
  }
  return field;
}

EnergyHistogram make_histogram(std::span<const double> samples, const Binning& binning) {
  binning.validate();
  if (samples.empty()) throw std::invalid_argument("make_histogram: no samples");
  std::vector<double> counts(binning.bin_count, 0.0);
  double under = 0.0, over = 0.0;
  const double width = binning.width();
  for (double v : samples) {
    if (std::isnan(v)) throw std::invalid_argument("make_histogram: NaN sample");
    if (v < binning.lo) {
      under += 1.0;
    } else if (v >= binning.hi) {
      over += 1.0;
    } else {
      auto idx = static_cast<std::size_t>(std::floor((v - binning.lo) / width));
      idx = std::min(idx, binning.bin_count - 1);
      // Keep the bin choice consistent with edge(i) under rounding.
      if (idx > 0 && v < binning.edge(idx)) --idx;
      if (idx + 1 < binning.bin_count && v >= binning.edge(idx + 1)) ++idx;
      counts[idx] += 1.0;
    }
  }
  const double n = static_cast<double>(samples.size());
  EnergyHistogram h{binning, std::move(counts), samples.size(), under / n, over / n};
  for (double& m : h.mass) m /= n;
  return h;
}

EnergyHistogram gaussian_reference(const Binning& binning, double mean, double variance) {
  binning.validate();
  if (!(variance > 0.0)) throw std::invalid_argument("gaussian_reference: variance must be positive");
  const double denom = std::sqrt(2.0 * variance);
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / denom); };
  EnergyHistogram h;
  h.binning = binning;
  h.mass.resize(binning.bin_count);
  const auto edges = binning.edges();
  for (std::size_t i = 0; i < binning.bin_count; ++i) h.mass[i] = cdf(edges[i + 1]) - cdf(edges[i]);
  h.underflow = cdf(binning.lo);
  h.overflow = 0.5 * std::erfc((binning.hi - mean) / denom);
  return h;
}

double kl_div(const EnergyHistogram& p, const EnergyHistogram& q) {
  if (!(p.binning == q.binning) || p.mass.size() != q.mass.size()) {
    throw std::invalid_argument("kl_div: histograms use different binnings");
  }
  const double eps = p.binning.smoothing_epsilon;
  const double slots = static_cast<double>(p.mass.size() + 2);
  const double p_norm = p.total_mass() + slots * eps;
  const double q_norm = q.total_mass() + slots * eps;
  auto term = [&](double pm, double qm) {
    const double ps = (pm + eps) / p_norm;
    const double qs = (qm + eps) / q_norm;
    return ps * std::log(ps / qs);
  };
  double kl = term(p.underflow, q.underflow) + term(p.overflow, q.overflow);
  for (std::size_t i = 0; i < p.mass.size(); ++i) kl += term(p.mass[i], q.mass[i]);
  return kl;
}

double poe_deviation(std::span<const double> beta, std::size_t rows, std::span<const double> g) {
  const std::size_t k = g.size();
  if (rows == 0 || k == 0 || beta.size() != rows * k) {
    throw std::invalid_argument("poe_deviation: beta must be rows x len(g)");
  }
  // Route 1: softmax of the linear energies.
  std::vector<double> logits(rows, 0.0);
  for (std::size_t l = 0; l < rows; ++l) {
    for (std::size_t j = 0; j < k; ++j) logits[l] += beta[l * k + j] * g[j];
  }
  Tensor direct = softmax(Tensor(Shape{rows}, logits));

  // Route 2: product of experts exp(g_k) raised to beta_lk, normalized over outputs.
  std::vector<double> experts(k);
  for (std::size_t j = 0; j < k; ++j) experts[j] = std::exp(g[j]);
  std::vector<double> product(rows, 1.0);
  double z = 0.0;
  for (std::size_t l = 0; l < rows; ++l) {
    for (std::size_t j = 0; j < k; ++j) product[l] *= std::pow(experts[j], beta[l * k + j]);
    z += product[l];
  }
  double dev = 0.0;
  for (std::size_t l = 0; l < rows; ++l) dev = std::max(dev, std::abs(direct[l] - product[l] / z));
  return dev;
}

double rbm_energy(const RbmParams& params, std::span<const double> x, std::span<const double> f) {
  const std::size_t v = params.visible, h = params.hidden;
  if (x.size() != v || f.size() != h || params.weights.size() != v * h || params.visible_bias.size() != v ||
      params.hidden_bias.size() != h) {
    throw std::invalid_argument("rbm_energy: dimension mismatch (visible " + std::to_string(v) + ", hidden " +
                                std::to_string(h) + ", x " + std::to_string(x.size()) + ", f " +
                                std::to_string(f.size()) + ")");
  }
  double hidden_term = 0.0, visible_term = 0.0, coupling = 0.0;
  for (std::size_t j = 0; j < h; ++j) hidden_term += params.hidden_bias[j] * f[j];
  for (std::size_t i = 0; i < v; ++i) {
    visible_term += params.visible_bias[i] * x[i];
    double row = 0.0;
    for (std::size_t j = 0; j < h; ++j) row += params.weights[i * h + j] * f[j];
    coupling += x[i] * row;
  }
  return -(hidden_term + coupling + visible_term);
}

ProbeReport probe(const NetworkSpec& spec, const Parameters& params, const Tensor& image, const Binning& binning,
                  const FieldOptions& field, double reference_mean, double reference_variance) {
  const Capture cap = forward(spec, params, image);
  ProbeReport r;
  r.field = field;
  r.reference = gaussian_reference(binning, reference_mean, reference_variance);
  r.input = make_histogram(image.data(), binning);
  r.kl_input = kl_div(r.reference, r.input);
  r.f1 = make_histogram(energy_field(cap, EnergyGroup::kF1, field), binning);
  r.kl_f1 = kl_div(r.reference, r.f1);
  r.f2 = make_histogram(energy_field(cap, EnergyGroup::kF2, field), binning);
  r.probabilities.assign(cap.probabilities().data().begin(), cap.probabilities().data().end());
  return r;
}

nlohmann::json to_json(const EnergyHistogram& h) {
  return {{"mass", h.mass},
          {"underflow", h.underflow},
          {"overflow", h.overflow},
          {"sample_count", h.sample_count}};
}

EnergyHistogram histogram_from_json(const nlohmann::json& j) {
  EnergyHistogram h;
  h.mass = j.at("mass").get<std::vector<double>>();
  h.underflow = j.at("underflow").get<double>();
  h.overflow = j.at("overflow").get<double>();
  h.sample_count = j.at("sample_count").get<std::size_t>();
  return h;
}

nlohmann::json to_json(const ProbeReport& report) {
  const Binning& b = report.reference.binning;
  nlohmann::json j;
  j["binning"] = {{"lo", b.lo}, {"hi", b.hi}, {"bin_count", b.bin_count}, {"smoothing_epsilon", b.smoothing_epsilon}};
  j["edges"] = b.edges();
  j["field"] = {{"aggregation", report.field.aggregation == FieldOptions::Aggregation::kMean ? "mean" : "sum"},
                {"energy_sign", report.field.energy_sign}};
  j["reference"] = to_json(report.reference);
  j["input"] = to_json(report.input);
  j["f1"] = to_json(report.f1);
  j["f2"] = to_json(report.f2);
  j["kl_input"] = report.kl_input;
  j["kl_f1"] = report.kl_f1;
  j["probabilities"] = report.probabilities;
  j["predicted"] = argmax(report.probabilities);
  return j;
}

}  // namespace gibbs_lens
