// gibbs-lens: synthetic digit data, CNN training, Gibbs-distribution probes and experiments.
#include <CLI11.hpp>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gibbs_lens/dataset.hpp"
#include "gibbs_lens/experiment.hpp"
#include "gibbs_lens/figure.hpp"
#include "gibbs_lens/network.hpp"
#include "gibbs_lens/probe.hpp"
#include "gibbs_lens/text_format.hpp"

namespace fs = std::filesystem;
using namespace gibbs_lens;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitAssert = 2;

struct Globals {
  std::uint64_t seed = 1;
  fs::path out = "runs";
  bool full = false;
};

struct DataFlags {
  std::size_t classes = 10;
  std::optional<std::size_t> train_per_class;
  std::optional<std::size_t> test_per_class;
  double pixel_mean = 0.0;
  double pixel_variance = 1024.0;
  std::optional<std::uint64_t> data_seed;
  bool random_labels = false;

  void add(CLI::App* app, bool with_label_mode) {
    app->add_option("--classes", classes, "Number of classes (glyphs 0..classes-1)")->capture_default_str();
    app->add_option("--train-per-class", train_per_class, "Training images per class (default 200, 1000 with --full)");
    app->add_option("--test-per-class", test_per_class, "Test images per class (default 200, 1000 with --full)");
    app->add_option("--pixel-mean", pixel_mean, "Pixel distribution mean")->capture_default_str();
    app->add_option("--pixel-variance", pixel_variance, "Pixel distribution variance")->capture_default_str();
    app->add_option("--data-seed", data_seed, "Dataset seed (default: --seed)");
    if (with_label_mode) app->add_flag("--random-labels", random_labels, "Draw labels independently of images");
  }

  DatasetSpec spec(const Globals& g, std::size_t desk_default) const {
    DatasetSpec s;
    const std::size_t base = g.full ? 1000 : desk_default;
    s.classes = classes;
    s.train_per_class = train_per_class.value_or(base);
    s.test_per_class = test_per_class.value_or(base);
    s.pixel_mean = pixel_mean;
    s.pixel_variance = pixel_variance;
    s.seed = data_seed.value_or(g.seed);
    s.label_mode = random_labels ? LabelMode::kRandomLabels : LabelMode::kTrueLabels;
    return s;
  }
};

struct TrainFlags {
  std::optional<double> learning_rate;
  std::optional<double> momentum;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> max_epochs;
  std::size_t threads = 0;
  bool no_early_stop = false;

  void add(CLI::App* app) {
    const TrainConfig d;
    app->add_option("--lr", learning_rate, "Learning rate (default " + format_double(d.learning_rate) + ")");
    app->add_option("--momentum", momentum, "SGD momentum (default " + format_double(d.momentum) + ")");
    app->add_option("--batch", batch_size,
                    "Mini-batch size (default " + std::to_string(d.batch_size) + ")");
    app->add_option("--max-epochs", max_epochs, "Epoch limit (default " + std::to_string(d.max_epochs) + ")");
    app->add_flag("--no-early-stop", no_early_stop, "Keep training after zero training error");
    app->add_option("--threads", threads, "Worker threads (0: GIBBS_LENS_THREADS or all cores)")
        ->capture_default_str();
  }

  /// Flags given on the command line override `base`.
  TrainConfig resolve(TrainConfig base, std::uint64_t seed) const {
    if (learning_rate) base.learning_rate = *learning_rate;
    if (momentum) base.momentum = *momentum;
    if (batch_size) base.batch_size = *batch_size;
    if (max_epochs) base.max_epochs = *max_epochs;
    base.threads = threads;
    base.seed = seed;
    base.stop_at_zero_train_error = !no_early_stop;
    return base;
  }
};

struct ProbeFlags {
  Binning binning;
  std::string aggregation = "mean";
  bool energy_sign = false;

  void add(CLI::App* app) {
    app->add_option("--bins", binning.bin_count, "Histogram bin count")->capture_default_str();
    app->add_option("--range-lo", binning.lo, "Lowest bin edge")->capture_default_str();
    app->add_option("--range-hi", binning.hi, "Highest bin edge")->capture_default_str();
    app->add_option("--epsilon", binning.smoothing_epsilon, "KL smoothing mass per bin")->capture_default_str();
    app->add_option("--aggregation", aggregation, "Channel aggregation of the energy field")
        ->check(CLI::IsMember({"mean", "sum"}))
        ->capture_default_str();
    app->add_flag("--energy-sign", energy_sign, "Histogram negated responses (energies) instead of responses");
  }

  FieldOptions field() const {
    FieldOptions f;
    f.aggregation = aggregation == "sum" ? FieldOptions::Aggregation::kSum : FieldOptions::Aggregation::kMean;
    f.energy_sign = energy_sign;
    return f;
  }
};

void log_line(const std::string& line) { std::cerr << line << '\n'; }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

SyntheticDataset dataset_from(const std::optional<fs::path>& file, const DatasetSpec& spec) {
  if (file) return load_dataset(*file);
  return generate_dataset(spec);
}

void print_artifacts(const RunArtifacts& art) {
  for (const auto& w : art.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "manifest " << art.manifest.string() << '\n';
  for (const RunSummary& r : art.runs) {
    std::cout << arch_name(r.arch) << " seed " << r.seed << ": epochs " << r.epochs << ", train_err "
              << format_fixed(r.final_train_err, 4) << ", test_err " << format_fixed(r.final_test_err, 4)
              << ", kl_input " << format_fixed(r.kl_input, 4) << ", kl_f1 " << format_fixed(r.kl_f1, 4)
              << " (test image " << r.probe_index << ")\n";
  }
}

ExperimentConfig experiment_config(ExperimentKind kind, const Globals& g, const DataFlags& data,
                                   const TrainFlags& train_flags, const ProbeFlags& probe_flags,
                                   std::size_t kl_images) {
  ExperimentConfig c = default_config(kind);
  c.dataset = data.spec(g, kind == ExperimentKind::kRandomLabels ? 100 : 200);
  c.train = train_flags.resolve(c.train, g.seed);
  c.seeds = {g.seed};
  c.binning = probe_flags.binning;
  c.field = probe_flags.field();
  c.kl_probe_images = kl_images;
  c.output_dir = g.out;
  c.log = log_line;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gibbs-distribution probes for convolutional networks on synthetic Gaussian-pixel digits"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_flag("--full", g.full, "Use the full 1000/1000 per-class dataset");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate and save a synthetic dataset");
  DataFlags gen_data;
  gen_data.add(gen, true);
  std::string gen_name = "dataset.gsyn";
  gen->add_option("--name", gen_name, "File name under --out")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train one network and save a checkpoint");
  DataFlags tr_data;
  tr_data.add(tr, true);
  TrainFlags tr_train;
  tr_train.add(tr);
  std::string tr_arch = "CNN1";
  std::optional<fs::path> tr_file;
  tr->add_option("--arch", tr_arch, "CNN1 or CNN2")->capture_default_str();
  tr->add_option("--data", tr_file, "Dataset file (default: generate)")->check(CLI::ExistingFile);

  // probe
  auto* pr = app.add_subcommand("probe", "Probe a checkpoint on a test image, or run the probe experiment");
  DataFlags pr_data;
  pr_data.add(pr, true);
  TrainFlags pr_train;
  pr_train.add(pr);
  ProbeFlags pr_probe;
  pr_probe.add(pr);
  std::optional<fs::path> pr_ckpt, pr_file;
  std::size_t pr_index = 0;
  std::size_t pr_kl_images = 100;
  pr->add_option("--checkpoint", pr_ckpt, "Trained checkpoint (omit to train CNN1 first)")->check(CLI::ExistingFile);
  pr->add_option("--data", pr_file, "Dataset file (default: generate)")->check(CLI::ExistingFile);
  pr->add_option("--index", pr_index, "Test image index (with --checkpoint)")->capture_default_str();
  pr->add_option("--kl-images", pr_kl_images, "Test images averaged into kl_f1_mean")->capture_default_str();

  // exp-generalization
  auto* eg = app.add_subcommand("exp-generalization", "CNN1 vs CNN2 over several seeds");
  DataFlags eg_data;
  eg_data.add(eg, false);
  TrainFlags eg_train;
  eg_train.add(eg);
  ProbeFlags eg_probe;
  eg_probe.add(eg);
  std::vector<std::uint64_t> eg_seeds = {1, 2, 3, 4, 5};
  bool eg_assert = false;
  std::size_t eg_kl_images = 100;
  eg->add_option("--seeds", eg_seeds, "Training seeds")->capture_default_str();
  eg->add_flag("--assert", eg_assert, "Exit 2 unless both median orderings hold");
  eg->add_option("--kl-images", eg_kl_images, "Test images averaged into kl_f1_mean")->capture_default_str();

  // exp-random-labels
  auto* er = app.add_subcommand("exp-random-labels", "Train CNN1 on random labels");
  DataFlags er_data;
  er_data.add(er, false);
  TrainFlags er_train;
  er_train.add(er);
  ProbeFlags er_probe;
  er_probe.add(er);
  bool er_assert = false;
  std::size_t er_kl_images = 100;
  er->add_flag("--assert", er_assert, "Exit 2 unless training error is 0 and test error is within 0.90 +- 0.05");
  er->add_option("--kl-images", er_kl_images, "Test images averaged into kl_f1_mean")->capture_default_str();

  // plot
  auto* pl = app.add_subcommand("plot", "Render an SVG from metrics CSVs or probe JSONs");
  std::string pl_kind = "curves";
  std::vector<fs::path> pl_inputs;
  fs::path pl_output;
  FigureOptions pl_options;
  pl->add_option("--kind", pl_kind, "curves or overlay")
      ->check(CLI::IsMember({"curves", "overlay"}))
      ->capture_default_str();
  pl->add_option("--panel", pl_options.panel, "Overlay panel: input, f1 or f2")
      ->check(CLI::IsMember({"input", "f1", "f2"}))
      ->capture_default_str();
  pl->add_option("--title", pl_options.title, "Figure title");
  pl->add_option("-o,--output", pl_output, "Output SVG path")->required();
  pl->add_option("inputs", pl_inputs, "CSV or JSON inputs")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) {
      const SyntheticDataset ds = generate_dataset(gen_data.spec(g, 200));
      fs::create_directories(g.out);
      const fs::path path = g.out / gen_name;
      save_dataset(ds, path);
      std::cout << path.string() << ": " << ds.train.size() << " train, " << ds.test.size() << " test\n";
    } else if (*tr) {
      const Arch arch = parse_arch(tr_arch);
      if (arch == Arch::kReduced) throw std::invalid_argument("train: --arch must be CNN1 or CNN2");
      const SyntheticDataset ds = dataset_from(tr_file, tr_data.spec(g, 200));
      Network net = build_network(tr_arch, g.seed);
      const TrainConfig config = tr_train.resolve(TrainConfig{}, g.seed);
      config.validate();
      TrainResult result = train(net.spec, std::move(net.params), ds, config, [&](const EpochRecord& r) {
        log_line("epoch " + std::to_string(r.epoch) + " loss " + format_fixed(r.train_loss, 4) + " train_err " +
                 format_fixed(r.train_err, 4) + " test_err " + format_fixed(r.test_err, 4));
      });
      net.params = std::move(result.params);
      fs::create_directories(g.out);
      std::string tag = std::string(arch_name(arch)) + "_seed" + std::to_string(g.seed);
      for (char& c : tag) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      save_checkpoint(net, g.out / (tag + ".gckp"));
      write_file(g.out / (tag + "_metrics.csv"), metrics_csv(result.metrics));
      if (!result.metrics.reached_zero_train_error) {
        std::cerr << "warning: training error did not reach zero within " << config.max_epochs << " epochs\n";
      }
      std::cout << (g.out / (tag + ".gckp")).string() << '\n';
    } else if (*pr) {
      if (pr_ckpt) {
        const Network net = load_checkpoint(*pr_ckpt);
        const SyntheticDataset ds = dataset_from(pr_file, pr_data.spec(g, 200));
        if (pr_index >= ds.test.size()) {
          throw std::invalid_argument("probe: --index " + std::to_string(pr_index) + " out of range (" +
                                      std::to_string(ds.test.size()) + " test images)");
        }
        const Sample& s = ds.test[pr_index];
        const ProbeReport report = probe(net.spec, net.params, s.to_tensor(), pr_probe.binning, pr_probe.field(),
                                         ds.spec.pixel_mean, ds.spec.pixel_variance);
        nlohmann::json j = to_json(report);
        j["arch"] = arch_name(net.spec.arch);
        j["test_index"] = pr_index;
        j["label"] = s.label;
        j["reference_mean"] = ds.spec.pixel_mean;
        j["reference_variance"] = ds.spec.pixel_variance;
        j["image"] = s.pixels;
        fs::create_directories(g.out);
        const fs::path path = g.out / ("probe_" + pr_ckpt->stem().string() + "_" + std::to_string(pr_index) + ".json");
        write_file(path, j.dump(2) + "\n");
        std::cout << path.string() << ": kl_input " << format_fixed(report.kl_input, 4) << ", kl_f1 "
                  << format_fixed(report.kl_f1, 4) << '\n';
      } else {
        if (pr_file) throw std::invalid_argument("probe: --data needs --checkpoint");
        const RunArtifacts art = run_probe_experiment(
            experiment_config(ExperimentKind::kProbe, g, pr_data, pr_train, pr_probe, pr_kl_images));
        print_artifacts(art);
      }
    } else if (*eg) {
      ExperimentConfig c = experiment_config(ExperimentKind::kGeneralization, g, eg_data, eg_train, eg_probe,
                                             eg_kl_images);
      c.archs = {Arch::kCnn1, Arch::kCnn2};
      c.seeds = eg_seeds;
      const RunArtifacts art = run_generalization_experiment(c);
      print_artifacts(art);
      const OrderingCheck ord = check_generalization_ordering(art.runs);
      std::cout << "median test_err CNN1 " << format_fixed(ord.median_test_err_cnn1, 4) << " vs CNN2 "
                << format_fixed(ord.median_test_err_cnn2, 4) << (ord.test_err_holds ? " (holds)" : " (violated)")
                << "\nmedian kl_f1 CNN1 " << format_fixed(ord.median_kl_cnn1, 4) << " vs CNN2 "
                << format_fixed(ord.median_kl_cnn2, 4) << (ord.kl_holds ? " (holds)" : " (violated)") << '\n';
      if (eg_assert && !(ord.test_err_holds && ord.kl_holds)) return kExitAssert;
    } else if (*er) {
      const RunArtifacts art = run_random_label_experiment(
          experiment_config(ExperimentKind::kRandomLabels, g, er_data, er_train, er_probe, er_kl_images));
      print_artifacts(art);
      const RunSummary& r = art.runs.front();
      const bool ok = r.reached_zero_train_error && std::abs(r.final_test_err - 0.90) <= 0.05;
      if (er_assert && !ok) return kExitAssert;
    } else if (*pl) {
      const FigureKind kind = pl_kind == "curves" ? FigureKind::kCurves : FigureKind::kHistogramOverlay;
      render_figure(kind, pl_inputs, pl_output, pl_options);
      std::cout << pl_output.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
