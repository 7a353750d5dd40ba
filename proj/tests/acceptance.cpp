// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Heavy criteria train the desk-scale experiments; expect tens of minutes on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gibbs_lens/experiment.hpp"
#include "oracles.hpp"

using namespace gibbs_lens;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void gate(const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path work_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gibbs_lens_acceptance" / name;
  fs::remove_all(dir);
  return dir;
}

void progress(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

ExperimentConfig desk_config(ExperimentKind kind, const std::string& dir) {
  ExperimentConfig c = default_config(kind);
  c.output_dir = work_dir(dir);
  c.log = progress;
  return c;
}

double smallest_pool_gap(const Tensor& x) {
  double gap = INFINITY;
  for (std::size_t i = 0; i + 1 < x.shape()[0]; i += 2)
    for (std::size_t j = 0; j + 1 < x.shape()[1]; j += 2)
      for (std::size_t c = 0; c < x.shape()[2]; ++c) {
        double v[4] = {x.at(i, j, c), x.at(i, j + 1, c), x.at(i + 1, j, c), x.at(i + 1, j + 1, c)};
        std::sort(v, v + 4);
        gap = std::min(gap, v[3] - v[2]);
      }
  return gap;
}

double smallest_abs(const Tensor& t) {
  double m = INFINITY;
  for (double v : t.data()) m = std::min(m, std::abs(v));
  return m;
}

Outcome gradient_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 gen(11);
  std::size_t nets = 0, params = 0;
  double worst = 0.0;
  for (std::size_t filters : {4, 6}) {
    const NetworkSpec spec = NetworkSpec::reduced(8, 3, filters, 2, filters, 3);
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      Network net = build_network(spec, seed);
      std::normal_distribution<double> nd(0.0, 0.1);
      for (Tensor* t : net.params.tensors())
        if (t->shape().rank() == 1)
          for (double& v : t->data()) v = nd(gen);
      Tensor img(spec.input_shape());
      std::normal_distribution<double> px(0.0, 1.0);
      for (double& v : img.data()) v = px(gen);
      const std::size_t label = seed % 3;
      const Capture cap = forward(spec, net.params, img);
      if (smallest_pool_gap(cap.layers[kF1]) < 1e-4 || smallest_pool_gap(cap.layers[kF3]) < 1e-4 ||
          smallest_abs(maxpool2(cap.layers[kF1]).output) < 1e-4 ||
          smallest_abs(maxpool2(cap.layers[kF3]).output) < 1e-4)
        continue;
      const Gradients g = backward(spec, net.params, cap, label);
      const auto gt = g.tensors();
      const auto pt = net.params.tensors();
      for (std::size_t k = 0; k < pt.size(); ++k)
        for (std::size_t i = 0; i < pt[k]->size(); ++i) {
          const double keep = (*pt[k])[i];
          (*pt[k])[i] = keep + 1e-6;
          const double up = oracle::loss(spec, net.params, img, label);
          (*pt[k])[i] = keep - 1e-6;
          const double down = oracle::loss(spec, net.params, img, label);
          (*pt[k])[i] = keep;
          const double numeric = (up - down) / 2e-6, analytic = (*gt[k])[i];
          const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
          worst = std::max(worst, std::abs(numeric - analytic) / scale);
          ++params;
        }
      ++nets;
    }
  }
  const double secs = seconds_since(start);
  return {nets >= 4 && worst < 1e-5 && secs < 60.0,
          fmt("%zu networks, %zu parameters, max relative error %.3g (< 1e-5), %.1f s (< 60 s)", nets, params, worst,
              secs)};
}

Outcome poe_identity() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 gen(31);
  std::uniform_int_distribution<std::size_t> ld(2, 10), kd(1, 20);
  std::uniform_real_distribution<double> bd(-2.0, 2.0), gd(-3.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t l = ld(gen), k = kd(gen);
    std::vector<double> beta(l * k), g(k);
    for (double& v : beta) v = bd(gen);
    for (double& v : g) v = gd(gen);
    worst = std::max(worst, poe_deviation(beta, l, g));
  }
  const double secs = seconds_since(start);
  return {worst < 1e-9 && secs < 1.0, fmt("1000 instances, max deviation %.3g (< 1e-9), %.3f s (< 1 s)", worst, secs)};
}

Outcome dataset_fidelity() {
  const DatasetSpec spec = default_config(ExperimentKind::kProbe).dataset;
  const auto start = std::chrono::steady_clock::now();
  const SyntheticDataset ds = generate_dataset(spec);
  const double gen_secs = seconds_since(start);

  const Binning b;
  const EnergyHistogram ref = gaussian_reference(b, spec.pixel_mean, spec.pixel_variance);
  std::size_t images = 0, permuted = 0, under = 0;
  std::vector<double> pooled;
  auto check_split = [&](const std::vector<Sample>& split, std::uint64_t stream) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      // Regenerate from the image stream (0 train, 1 test) to recover the raw draws.
      CounterRng rng(derive_seed(spec.seed, stream, i));
      const GeneratedImage g = generate_image(i % spec.classes, rng, spec.pixel_mean, spec.pixel_variance);
      std::vector<double> pixels(split[i].pixels.begin(), split[i].pixels.end()), draws = g.draws;
      const bool same_image = std::equal(pixels.begin(), pixels.end(), g.image.data().begin());
      std::sort(pixels.begin(), pixels.end());
      std::sort(draws.begin(), draws.end());
      permuted += same_image && pixels == draws;
      under += kl_div(ref, make_histogram(split[i].to_tensor().data(), b)) < 0.7;
      pooled.insert(pooled.end(), split[i].pixels.begin(), split[i].pixels.end());
      ++images;
    }
  };
  check_split(ds.train, 0);
  check_split(ds.test, 1);
  const double pooled_kl = kl_div(ref, make_histogram(pooled, b));
  const double frac = static_cast<double>(under) / static_cast<double>(images);
  return {permuted == images && pooled_kl < 0.01 && frac >= 0.95 && gen_secs < 30.0,
          fmt("%zu/%zu images are permutations of their draws, pooled KL %.5f (< 0.01), per-image KL < 0.7 for "
              "%.4f (>= 0.95), generation %.2f s (< 30 s)",
              permuted, images, pooled_kl, frac, gen_secs)};
}

Outcome oracle_equivalence() {
  std::mt19937_64 gen(4242);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  double conv = 0.0, pool = 0.0, lin = 0.0, soft = 0.0, ce = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t kh = dim(gen), kw = dim(gen), cin = dim(gen), cout = dim(gen);
    const Tensor x = oracle::random_tensor(Shape{kh + dim(gen), kw + dim(gen), cin}, gen);
    const KernelBank bank{oracle::random_tensor(Shape{kh, kw, cin, cout}, gen), oracle::random_tensor(Shape{cout}, gen)};
    const Tensor y = conv2d(x, bank), yo = oracle::conv2d(x, bank);
    if (y.shape() != yo.shape()) return {false, "conv2d shape mismatch"};
    for (std::size_t i = 0; i < y.size(); ++i) conv = std::max(conv, std::abs(y[i] - yo[i]));

    const Tensor px = oracle::random_tensor(Shape{1 + dim(gen) * 2, 1 + dim(gen) * 2, cin}, gen);
    const Tensor p = maxpool2(px).output, po = oracle::maxpool2(px);
    if (p.shape() != po.shape()) return {false, "maxpool2 shape mismatch"};
    for (std::size_t i = 0; i < p.size(); ++i) pool = std::max(pool, std::abs(p[i] - po[i]));

    const std::size_t m = dim(gen) * 3, l = dim(gen) + 1;
    const Tensor lx = oracle::random_tensor(Shape{m}, gen), lw = oracle::random_tensor(Shape{m, l}, gen),
                 lb = oracle::random_tensor(Shape{l}, gen);
    const Tensor ly = linear(lx, lw, lb), lyo = oracle::linear(lx, lw, lb);
    for (std::size_t i = 0; i < l; ++i) lin = std::max(lin, std::abs(ly[i] - lyo[i]));

    const Tensor z = oracle::random_tensor(Shape{l}, gen, -10, 10);
    const Tensor s = softmax(z), so = oracle::softmax(z);
    for (std::size_t i = 0; i < l; ++i) {
      soft = std::max(soft, std::abs(s[i] - so[i]));
      ce = std::max(ce, std::abs(cross_entropy(s, i) - oracle::cross_entropy(so, i)));
    }
  }
  Binning two;
  two.lo = 0.0;
  two.hi = 2.0;
  two.bin_count = 2;
  const double closed = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  const double kl = kl_div(EnergyHistogram::from_masses(two, {0.5, 0.5}), EnergyHistogram::from_masses(two, {0.25, 0.75}));
  const double kl_err = std::abs(kl - closed);
  const double worst = std::max({conv, pool, lin, soft, ce});
  return {worst <= 1e-12 && kl_err < 1e-4,
          fmt("max deviation conv %.2g, pool %.2g, linear %.2g, softmax %.2g, ce %.2g (<= 1e-12); two-bin KL error "
              "%.2g (< 1e-4)",
              conv, pool, lin, soft, ce, kl_err)};
}

// Byte comparison of every CSV and JSON artifact of two runs.
Outcome compare_runs(const RunArtifacts& a, const RunArtifacts& b, const fs::path& root_a, const fs::path& root_b) {
  std::size_t compared = 0;
  for (const fs::path& p : a.files()) {
    const std::string ext = p.extension().string();
    if (ext != ".csv" && ext != ".json") continue;
    const fs::path other = root_b / fs::relative(p, root_a);
    if (!fs::exists(other) || slurp(p) != slurp(other)) return {false, "differs: " + p.filename().string()};
    ++compared;
  }
  if (slurp(a.manifest) != slurp(b.manifest)) return {false, "manifests differ"};
  if (b.files().size() != a.files().size()) return {false, "artifact counts differ"};
  return {compared > 0, fmt("%zu CSV/JSON artifacts", compared)};
}

}  // namespace

int main() {
  std::printf("gibbs-lens acceptance (%s)\n", std::string(kToolVersion).c_str());
  gate("gradient fidelity", gradient_fidelity);
  gate("PoE identity", poe_identity);
  gate("dataset fidelity", dataset_fidelity);
  gate("oracle equivalence", oracle_equivalence);

  // One desk-scale probe experiment serves both training reproduction and probe sanity.
  const ExperimentConfig probe_cfg = desk_config(ExperimentKind::kProbe, "probe");
  RunArtifacts probe_art;
  double probe_secs = 0.0;
  std::string probe_error;
  {
    const auto start = std::chrono::steady_clock::now();
    try {
      probe_art = run_probe_experiment(probe_cfg);
    } catch (const std::exception& e) {
      probe_error = e.what();
    }
    probe_secs = seconds_since(start);
  }
  gate("training reproduction", [&]() -> Outcome {
    if (!probe_error.empty()) return {false, "exception: " + probe_error};
    const RunSummary& r = probe_art.runs.front();
    return {r.reached_zero_train_error && r.final_test_err < 0.5 && probe_secs < 600.0,
            fmt("CNN1 200/class: zero train error %s after %zu epochs (limit 200), final test error %.4f (< 0.5), "
                "%.0f s (< 600 s)",
                r.reached_zero_train_error ? "reached" : "NOT reached", r.epochs, r.final_test_err, probe_secs)};
  });
  gate("probe sanity", [&]() -> Outcome {
    if (!probe_error.empty()) return {false, "exception: " + probe_error};
    const RunSummary& r = probe_art.runs.front();
    return {r.probe_correct && std::isfinite(r.kl_f1) && r.kl_f1 < 2.0,
            fmt("test image %zu (%s), kl_f1 %.4f (< 2.0), kl_input %.4f", r.probe_index,
                r.probe_correct ? "correctly classified" : "misclassified", r.kl_f1, r.kl_input)};
  });

  gate("generalization ordering", [] {
    const RunArtifacts art = run_generalization_experiment(desk_config(ExperimentKind::kGeneralization, "general"));
    const OrderingCheck c = check_generalization_ordering(art.runs);
    return Outcome{c.test_err_holds && c.kl_holds,
                   fmt("%zu runs; median test error CNN1 %.4f vs CNN2 %.4f (%s); median kl_f1 CNN1 %.4f vs CNN2 %.4f (%s)",
                       art.runs.size(), c.median_test_err_cnn1, c.median_test_err_cnn2,
                       c.test_err_holds ? "holds" : "violated", c.median_kl_cnn1, c.median_kl_cnn2,
                       c.kl_holds ? "holds" : "violated")};
  });

  gate("random labels", [] {
    const RunArtifacts art = run_random_label_experiment(desk_config(ExperimentKind::kRandomLabels, "random"));
    const RunSummary& r = art.runs.front();
    const bool chance = std::abs(r.final_test_err - 0.9) <= 0.05;
    return Outcome{r.reached_zero_train_error && chance && std::isfinite(r.kl_f1),
                   fmt("zero train error %s (final %.4f after %zu epochs), test error %.4f (0.90 +/- 0.05), kl_f1 %.4f",
                       r.reached_zero_train_error ? "reached" : "NOT reached", r.final_train_err, r.epochs,
                       r.final_test_err, r.kl_f1)};
  });

  gate("determinism", [&]() -> Outcome {
    if (!probe_error.empty()) return {false, "exception: " + probe_error};
    ExperimentConfig again = probe_cfg;
    again.output_dir = work_dir("probe_again");
    const Outcome probe = compare_runs(probe_art, run_probe_experiment(again), probe_cfg.output_dir, again.output_dir);
    if (!probe.pass) return {false, "probe experiment: " + probe.detail};

    ExperimentConfig small = desk_config(ExperimentKind::kGeneralization, "general_small_a");
    small.dataset.train_per_class = 20;
    small.dataset.test_per_class = 10;
    small.train.max_epochs = 5;
    small.seeds = {1, 2};
    const RunArtifacts a = run_generalization_experiment(small);
    ExperimentConfig small_b = small;
    small_b.output_dir = work_dir("general_small_b");
    const Outcome gen = compare_runs(a, run_generalization_experiment(small_b), small.output_dir, small_b.output_dir);
    return {gen.pass, "probe experiment: " + probe.detail + " identical; small generalization: " + gen.detail +
                          (gen.pass ? " identical" : "")};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
