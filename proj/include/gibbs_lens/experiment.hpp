#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gibbs_lens/dataset.hpp"
#include "gibbs_lens/network.hpp"
#include "gibbs_lens/probe.hpp"

namespace gibbs_lens {

inline constexpr std::string_view kToolVersion = "gibbs-lens 0.1.0";

enum class ExperimentKind { kProbe, kGeneralization, kRandomLabels };

std::string_view to_string(ExperimentKind kind);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kProbe;
  DatasetSpec dataset;
  TrainConfig train;
  std::vector<Arch> archs;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir;
  Binning binning;
  FieldOptions field;
  /// Test images averaged into kl_f1_mean for each trained model.
  std::size_t kl_probe_images = 100;
  /// Per-epoch progress lines; not part of any artifact.
  std::function<void(const std::string&)> log;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Desk-scale defaults: 200 train and 200 test images per class, seeds 1..5 for the
/// generalization experiment, CNN1 only elsewhere, 100 per class for random labels.
ExperimentConfig default_config(ExperimentKind kind);

struct RunSummary {
  Arch arch = Arch::kCnn1;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  bool reached_zero_train_error = false;
  double final_train_err = 0.0;
  double final_test_err = 0.0;
  std::size_t probe_index = 0;
  double kl_input = 0.0;
  double kl_f1 = 0.0;
  double kl_f1_mean = 0.0;
  bool probe_correct = false;
};

struct RunArtifacts {
  std::filesystem::path manifest;
  std::vector<std::filesystem::path> metrics_csv;
  std::vector<std::filesystem::path> probe_json;
  std::vector<std::filesystem::path> figures;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> tables;
  std::vector<std::string> warnings;
  std::vector<RunSummary> runs;

  /// Every artifact except the manifest itself.
  std::vector<std::filesystem::path> files() const;
};

/// Trains CNN1 on true labels, probes the first correctly classified test image.
RunArtifacts run_probe_experiment(const ExperimentConfig& config);

/// Trains every selected architecture for every seed on one dataset and compares
/// final test error and KL[p(X) || q(F1)] medians.
RunArtifacts run_generalization_experiment(const ExperimentConfig& config);

/// Trains CNN1 on independently drawn labels and probes a random-labelled test image.
RunArtifacts run_random_label_experiment(const ExperimentConfig& config);

RunArtifacts run_experiment(const ExperimentConfig& config);

struct OrderingCheck {
  double median_test_err_cnn1 = 0.0;
  double median_test_err_cnn2 = 0.0;
  double median_kl_cnn1 = 0.0;
  double median_kl_cnn2 = 0.0;
  bool test_err_holds = false;
  bool kl_holds = false;
};

/// Medians over seeds of final test error and kl_f1 for CNN1 versus CNN2.
OrderingCheck check_generalization_ordering(const std::vector<RunSummary>& runs);

double median(std::vector<double> values);

}  // namespace gibbs_lens
