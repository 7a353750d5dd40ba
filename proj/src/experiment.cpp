#include "gibbs_lens/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "gibbs_lens/figure.hpp"
#include "gibbs_lens/text_format.hpp"

namespace gibbs_lens {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMetricsHeader = "arch,seed,epoch,train_loss,train_err,test_err\n";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write to " + path.string() + " failed");
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string run_tag(Arch arch, std::uint64_t seed) {
  return lower(arch_name(arch)) + "_seed" + std::to_string(seed);
}

NetworkSpec spec_for(Arch arch) {
  switch (arch) {
    case Arch::kCnn1: return NetworkSpec::cnn1();
    case Arch::kCnn2: return NetworkSpec::cnn2();
    case Arch::kReduced: break;
  }
  throw std::invalid_argument("experiments run CNN1 or CNN2 only");
}

std::string metrics_rows(Arch arch, std::uint64_t seed, const TrainMetrics& m) {
  std::string out;
  for (const EpochRecord& r : m.epochs) {
    out += std::string(arch_name(arch)) + "," + std::to_string(seed) + "," + std::to_string(r.epoch) + "," +
           format_double(r.train_loss) + "," + format_double(r.train_err) + "," + format_double(r.test_err) + "\n";
  }
  return out;
}

struct TrainedModel {
  Network net;
  TrainMetrics metrics;
};

TrainedModel train_model(const ExperimentConfig& config, Arch arch, std::uint64_t seed, const SyntheticDataset& ds) {
  TrainConfig tc = config.train;
  tc.seed = seed;
  Network net = build_network(spec_for(arch), seed);
  EpochCallback cb;
  if (config.log) {
    cb = [&](const EpochRecord& r) {
      config.log(std::string(arch_name(arch)) + " seed " + std::to_string(seed) + " epoch " +
                 std::to_string(r.epoch) + " loss " + format_fixed(r.train_loss, 4) + " train_err " +
                 format_fixed(r.train_err, 4) + " test_err " + format_fixed(r.test_err, 4));
    };
  }
  TrainResult tr = train(net.spec, std::move(net.params), ds, tc, cb);
  return {{net.spec, std::move(tr.params)}, std::move(tr.metrics)};
}

nlohmann::json probe_document(const ExperimentConfig& config, const TrainedModel& model, std::uint64_t seed,
                              const SyntheticDataset& ds, std::size_t index, ProbeReport* report_out) {
  const Sample& sample = ds.test.at(index);
  const ProbeReport report = probe(model.net.spec, model.net.params, sample.to_tensor(), config.binning, config.field,
                                   ds.spec.pixel_mean, ds.spec.pixel_variance);
  nlohmann::json j = to_json(report);
  j["arch"] = arch_name(model.net.spec.arch);
  j["seed"] = seed;
  j["test_index"] = index;
  j["label"] = sample.label;
  j["reference_mean"] = ds.spec.pixel_mean;
  j["reference_variance"] = ds.spec.pixel_variance;
  j["image"] = sample.pixels;
  if (report_out) *report_out = report;
  return j;
}

RunSummary summarize(const ExperimentConfig& config, const TrainedModel& model, std::uint64_t seed,
                     const SyntheticDataset& ds, std::size_t probe_index, const ProbeReport& report) {
  RunSummary s;
  s.arch = model.net.spec.arch;
  s.seed = seed;
  s.epochs = model.metrics.epochs.size();
  s.reached_zero_train_error = model.metrics.reached_zero_train_error;
  if (!model.metrics.epochs.empty()) {
    s.final_train_err = model.metrics.epochs.back().train_err;
    s.final_test_err = model.metrics.epochs.back().test_err;
  }
  s.probe_index = probe_index;
  s.kl_input = report.kl_input;
  s.kl_f1 = report.kl_f1;
  s.probe_correct = argmax(report.probabilities) == ds.test[probe_index].label;
  const std::size_t n = std::min(config.kl_probe_images, ds.test.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Capture cap = forward(model.net.spec, model.net.params, ds.test[i].to_tensor());
    const auto field = energy_field(cap, EnergyGroup::kF1, config.field);
    sum += kl_div(gaussian_reference(config.binning, ds.spec.pixel_mean, ds.spec.pixel_variance),
                  make_histogram(field, config.binning));
  }
  s.kl_f1_mean = n ? sum / static_cast<double>(n) : 0.0;
  return s;
}

nlohmann::json summary_json(const RunSummary& s) {
  return {{"arch", arch_name(s.arch)},
          {"seed", s.seed},
          {"epochs", s.epochs},
          {"reached_zero_train_error", s.reached_zero_train_error},
          {"final_train_err", s.final_train_err},
          {"final_test_err", s.final_test_err},
          {"probe_index", s.probe_index},
          {"probe_correct", s.probe_correct},
          {"kl_input", s.kl_input},
          {"kl_f1", s.kl_f1},
          {"kl_f1_mean", s.kl_f1_mean}};
}

void write_manifest(const ExperimentConfig& config, RunArtifacts& art, nlohmann::json extra = {}) {
  art.manifest = config.output_dir / "manifest.json";
  nlohmann::json j;
  j["experiment"] = to_string(config.experiment);
  j["version"] = kToolVersion;
  j["config"] = config.to_json();
  std::vector<std::string> files;
  for (const auto& p : art.files()) files.push_back(fs::relative(p, config.output_dir).generic_string());
  std::sort(files.begin(), files.end());
  j["artifacts"] = files;
  j["warnings"] = art.warnings;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : art.runs) runs.push_back(summary_json(r));
  j["runs"] = runs;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(art.manifest, j.dump(2) + "\n");
}

void prepare_output(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);
}

void warn_if_not_converged(const ExperimentConfig& config, const TrainedModel& m, std::uint64_t seed,
                           RunArtifacts& art) {
  if (!m.metrics.reached_zero_train_error) {
    art.warnings.push_back(std::string(arch_name(m.net.spec.arch)) + " seed " + std::to_string(seed) +
                           ": training error did not reach zero within " +
                           std::to_string(config.train.max_epochs) + " epochs");
  }
}

// Shared body of the probe and random-label experiments: one CNN1 run, one probe report.
RunArtifacts single_model_experiment(const ExperimentConfig& config, const SyntheticDataset& ds, bool prefer_correct) {
  prepare_output(config);
  RunArtifacts art;
  const std::uint64_t seed = config.seeds.front();
  const Arch arch = config.archs.empty() ? Arch::kCnn1 : config.archs.front();
  const TrainedModel model = train_model(config, arch, seed, ds);
  warn_if_not_converged(config, model, seed, art);
  const std::string tag = run_tag(arch, seed);

  const fs::path csv = config.output_dir / "metrics.csv";
  write_text(csv, kMetricsHeader + metrics_rows(arch, seed, model.metrics));
  art.metrics_csv.push_back(csv);

  const fs::path ckpt = config.output_dir / (tag + ".gckp");
  save_checkpoint(model.net, ckpt);
  art.checkpoints.push_back(ckpt);

  std::size_t index = 0;
  if (prefer_correct) {
    bool found = false;
    for (std::size_t i = 0; i < ds.test.size() && !found; ++i) {
      if (predict(model.net.spec, model.net.params, ds.test[i].to_tensor()) == ds.test[i].label) {
        index = i;
        found = true;
      }
    }
    if (!found) art.warnings.push_back("no correctly classified test image; probing test image 0");
  }
  ProbeReport report;
  const nlohmann::json doc = probe_document(config, model, seed, ds, index, &report);
  const fs::path probe_path = config.output_dir / ("probe_" + tag + ".json");
  write_text(probe_path, doc.dump(2) + "\n");
  art.probe_json.push_back(probe_path);
  art.runs.push_back(summarize(config, model, seed, ds, index, report));

  const fs::path curves = config.output_dir / "curves.svg";
  render_figure(FigureKind::kCurves, std::span<const fs::path>(&csv, 1), curves,
                {std::string(arch_name(arch)) + " error rates", ""});
  art.figures.push_back(curves);
  for (const char* panel : {"input", "f1", "f2"}) {
    const fs::path out = config.output_dir / (std::string("overlay_") + panel + ".svg");
    render_figure(FigureKind::kHistogramOverlay, std::span<const fs::path>(&probe_path, 1), out,
                  {std::string("histogram of ") + panel + " vs reference", panel});
    art.figures.push_back(out);
  }
  return art;
}

}  // namespace

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kProbe: return "probe";
    case ExperimentKind::kGeneralization: return "generalization";
    case ExperimentKind::kRandomLabels: return "random_labels";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  dataset.validate();
  train.validate();
  binning.validate();
  if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: at least one seed is required");
  if (output_dir.empty()) throw std::invalid_argument("ExperimentConfig: output directory is required");
  for (Arch a : archs) {
    if (a == Arch::kReduced) throw std::invalid_argument("ExperimentConfig: experiments run CNN1 or CNN2 only");
  }
  if (experiment == ExperimentKind::kGeneralization &&
      (std::find(archs.begin(), archs.end(), Arch::kCnn1) == archs.end() ||
       std::find(archs.begin(), archs.end(), Arch::kCnn2) == archs.end())) {
    throw std::invalid_argument("ExperimentConfig: the generalization experiment needs both CNN1 and CNN2");
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json archs_json = nlohmann::json::array();
  for (Arch a : archs) archs_json.push_back(arch_name(a));
  return {
      {"dataset",
       {{"classes", dataset.classes},
        {"train_per_class", dataset.train_per_class},
        {"test_per_class", dataset.test_per_class},
        {"pixel_mean", dataset.pixel_mean},
        {"pixel_variance", dataset.pixel_variance},
        {"seed", dataset.seed},
        {"label_mode", dataset.label_mode == LabelMode::kTrueLabels ? "true_labels" : "random_labels"}}},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"momentum", train.momentum},
        {"batch_size", train.batch_size},
        {"max_epochs", train.max_epochs},
        {"stop_at_zero_train_error", train.stop_at_zero_train_error}}},
      {"archs", archs_json},
      {"seeds", seeds},
      {"binning",
       {{"lo", binning.lo}, {"hi", binning.hi}, {"bin_count", binning.bin_count},
        {"smoothing_epsilon", binning.smoothing_epsilon}}},
      {"field",
       {{"aggregation", field.aggregation == FieldOptions::Aggregation::kMean ? "mean" : "sum"},
        {"energy_sign", field.energy_sign}}},
      {"kl_probe_images", kl_probe_images},
  };
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  c.dataset.train_per_class = 200;
  c.dataset.test_per_class = 200;
  c.dataset.seed = 1;
  c.archs = {Arch::kCnn1};
  c.seeds = {1};
  switch (kind) {
    case ExperimentKind::kProbe: break;
    case ExperimentKind::kGeneralization:
      c.archs = {Arch::kCnn1, Arch::kCnn2};
      c.seeds = {1, 2, 3, 4, 5};
      break;
    case ExperimentKind::kRandomLabels:
      c.dataset.train_per_class = 100;
      c.dataset.test_per_class = 100;
      c.dataset.label_mode = LabelMode::kRandomLabels;
      break;
  }
  c.output_dir = fs::path("runs") / std::string(to_string(kind));
  return c;
}

std::vector<fs::path> RunArtifacts::files() const {
  std::vector<fs::path> out;
  for (const auto* group : {&metrics_csv, &probe_json, &figures, &checkpoints, &tables}) {
    out.insert(out.end(), group->begin(), group->end());
  }
  return out;
}

RunArtifacts run_probe_experiment(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.dataset.label_mode = LabelMode::kTrueLabels;
  prepare_output(c);
  const SyntheticDataset ds = generate_dataset(c.dataset);
  RunArtifacts art = single_model_experiment(c, ds, true);
  write_manifest(c, art);
  return art;
}

RunArtifacts run_random_label_experiment(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.dataset.label_mode = LabelMode::kRandomLabels;
  prepare_output(c);
  const SyntheticDataset ds = generate_dataset(c.dataset);
  RunArtifacts art = single_model_experiment(c, ds, false);
  const RunSummary& r = art.runs.front();
  write_manifest(c, art,
                 {{"chance_error", 1.0 - 1.0 / static_cast<double>(c.dataset.classes)},
                  {"final_test_err", r.final_test_err},
                  {"reached_zero_train_error", r.reached_zero_train_error}});
  return art;
}

RunArtifacts run_generalization_experiment(const ExperimentConfig& config) {
  prepare_output(config);
  RunArtifacts art;
  const SyntheticDataset ds = generate_dataset(config.dataset);
  constexpr std::size_t kProbeIndex = 0;

  std::string rows = kMetricsHeader;
  std::vector<fs::path> first_seed_probes;
  for (const std::uint64_t seed : config.seeds) {
    for (const Arch arch : config.archs) {
      const TrainedModel model = train_model(config, arch, seed, ds);
      warn_if_not_converged(config, model, seed, art);
      rows += metrics_rows(arch, seed, model.metrics);
      const std::string tag = run_tag(arch, seed);

      const fs::path ckpt = config.output_dir / (tag + ".gckp");
      save_checkpoint(model.net, ckpt);
      art.checkpoints.push_back(ckpt);

      ProbeReport report;
      const nlohmann::json doc = probe_document(config, model, seed, ds, kProbeIndex, &report);
      const fs::path probe_path = config.output_dir / ("probe_" + tag + ".json");
      write_text(probe_path, doc.dump(2) + "\n");
      art.probe_json.push_back(probe_path);
      if (seed == config.seeds.front()) first_seed_probes.push_back(probe_path);
      art.runs.push_back(summarize(config, model, seed, ds, kProbeIndex, report));
    }
  }

  const fs::path csv = config.output_dir / "metrics.csv";
  write_text(csv, rows);
  art.metrics_csv.push_back(csv);

  std::string summary = "arch,seed,epochs,final_train_err,final_test_err,kl_input,kl_f1,kl_f1_mean\n";
  for (const RunSummary& r : art.runs) {
    summary += std::string(arch_name(r.arch)) + "," + std::to_string(r.seed) + "," + std::to_string(r.epochs) + "," +
               format_double(r.final_train_err) + "," + format_double(r.final_test_err) + "," +
               format_double(r.kl_input) + "," + format_double(r.kl_f1) + "," + format_double(r.kl_f1_mean) + "\n";
  }
  const fs::path summary_path = config.output_dir / "summary.csv";
  write_text(summary_path, summary);
  art.tables.push_back(summary_path);

  const fs::path curves = config.output_dir / "curves.svg";
  render_figure(FigureKind::kCurves, std::span<const fs::path>(&csv, 1), curves, {"CNN1 vs CNN2 error rates", ""});
  art.figures.push_back(curves);
  const fs::path overlay = config.output_dir / "overlay_f1.svg";
  render_figure(FigureKind::kHistogramOverlay, first_seed_probes, overlay,
                {"F1 histograms vs reference (seed " + std::to_string(config.seeds.front()) + ")", "f1"});
  art.figures.push_back(overlay);

  const OrderingCheck ord = check_generalization_ordering(art.runs);
  write_manifest(config, art,
                 {{"ordering",
                   {{"median_test_err_cnn1", ord.median_test_err_cnn1},
                    {"median_test_err_cnn2", ord.median_test_err_cnn2},
                    {"median_kl_f1_cnn1", ord.median_kl_cnn1},
                    {"median_kl_f1_cnn2", ord.median_kl_cnn2},
                    {"test_err_ordering_holds", ord.test_err_holds},
                    {"kl_ordering_holds", ord.kl_holds}}}});
  return art;
}

RunArtifacts run_experiment(const ExperimentConfig& config) {
  switch (config.experiment) {
    case ExperimentKind::kProbe: return run_probe_experiment(config);
    case ExperimentKind::kGeneralization: return run_generalization_experiment(config);
    case ExperimentKind::kRandomLabels: return run_random_label_experiment(config);
  }
  throw std::invalid_argument("unknown experiment");
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty sequence");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

OrderingCheck check_generalization_ordering(const std::vector<RunSummary>& runs) {
  std::vector<double> err1, err2, kl1, kl2;
  for (const RunSummary& r : runs) {
    if (r.arch == Arch::kCnn1) {
      err1.push_back(r.final_test_err);
      kl1.push_back(r.kl_f1);
    } else if (r.arch == Arch::kCnn2) {
      err2.push_back(r.final_test_err);
      kl2.push_back(r.kl_f1);
    }
  }
  if (err1.empty() || err2.empty()) {
    throw std::invalid_argument("check_generalization_ordering: need runs of both CNN1 and CNN2");
  }
  OrderingCheck c;
  c.median_test_err_cnn1 = median(err1);
  c.median_test_err_cnn2 = median(err2);
  c.median_kl_cnn1 = median(kl1);
  c.median_kl_cnn2 = median(kl2);
  c.test_err_holds = c.median_test_err_cnn1 <= c.median_test_err_cnn2;
  c.kl_holds = c.median_kl_cnn1 <= c.median_kl_cnn2;
  return c;
}

}  // namespace gibbs_lens
