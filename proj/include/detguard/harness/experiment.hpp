#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "detguard/harness/config.hpp"
#include "detguard/sentinel/sentinel.hpp"

namespace detguard {

// Metrics of one model on the clean test split and on its fully triggered copy.
struct ModelEval {
  MetricSet clean;
  MetricSet triggered;  // triggered images scored against the victims' original boxes
  double asr = 0.0;
  double victim_recall = 0.0;        // on triggered images
  double clean_victim_recall = 0.0;  // same victims, untriggered images
};

ModelEval evaluate_model(TwoStageDetector& model, const Dataset& clean_test, const TriggeredSet& triggered,
                         const EvalConfig& config);

struct CurvePoint {
  int epoch = 0;
  double clean_ap = 0.0;
  double triggered_ap = 0.0;
  double victim_recall = 0.0;
};

struct RemovalRun {
  std::string name;
  ModelEval eval;
  std::vector<CurvePoint> curve;  // empty for ablation-only runs
  std::vector<double> epoch_loss;
  std::map<std::string, std::uint64_t> checksums;
};

struct SentinelRun {
  double mu = 0.0;
  std::size_t retained = 0;
  bool verdict = false;
  std::vector<double> scores;  // every s on the probes
  Heatmap heatmap;             // mean over probes
};

struct SeedResult {
  std::uint64_t seed = 0;
  int poisoned_scenes = 0;
  std::uint64_t clean_checksum = 0;
  std::uint64_t backdoored_checksum = 0;
  std::vector<double> clean_train_loss;
  std::vector<double> backdoored_train_loss;
  ModelEval clean_model;
  ModelEval backdoored;
  SentinelRun sentinel_clean;
  SentinelRun sentinel_backdoored;
  // Backdoored model, per triggered probe: trigger cell holds the heatmap max.
  double heatmap_hit_rate = 0.0;
  // Backdoored model, mean heatmap value at the trigger cell with and without the trigger.
  double trigger_cell_triggered = 0.0;
  double trigger_cell_clean = 0.0;
  std::optional<ModuleAttribution> attribution;
  std::optional<RemovalRun> vanilla;
  std::optional<RemovalRun> ours;
  std::map<std::string, RemovalRun> ablation;  // "TRF", "TRF+PD", "TRF+PD+RD"
  std::vector<std::string> failures;
  // Wall time spent on this seed; cached trainings count their recorded time.
  double seconds = 0.0;
};

struct ExperimentReport {
  static constexpr int kVersion = 1;
  ExperimentConfig config;
  double epsilon = 0.0;
  bool epsilon_calibrated = false;
  double theta = 0.0;
  bool theta_calibrated = false;
  std::vector<SeedResult> seeds;
  std::vector<std::string> failures;

  bool ok() const;
};

struct ExperimentOptions {
  // Trained checkpoints are reused from here when present (empty: no cache).
  std::filesystem::path cache_dir;
  std::function<void(const std::string&)> log;
};

ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentOptions& options = {});

nlohmann::json report_to_json(const ExperimentReport& report);

// table1.csv (detection), table2.csv (removal grid), table3.csv (ablation),
// curves.csv (per-epoch fine-tune metrics) and report.json.
void write_report(const ExperimentReport& report, const std::filesystem::path& out_dir);

// Per seed: heatmap_<seed>_{clean,backdoored}.csv and histogram_<seed>.csv
// (bin width 0.05 over [0, 1]) from a report JSON. A report without sentinel
// data yields header-only files.
void export_heatmap_and_histogram(const nlohmann::json& report, const std::filesystem::path& out_dir);

// Counts per bin of width `width` over [0, 1]; 1.0 falls in the last bin.
std::vector<int> histogram(const std::vector<double>& values, double width = 0.05);

// Train or load a model through the checkpoint cache.
struct TrainedModel {
  ad::ParameterStore params;
  std::vector<double> epoch_loss;
  double seconds = 0.0;  // training wall time, kept across cache hits
  bool from_cache = false;
};
TrainedModel train_cached(const ExperimentConfig& config, const std::vector<LabeledScene>& scenes,
                          const std::string& role, std::uint64_t seed, const std::string& data_key,
                          const ExperimentOptions& options);

// Splits shared by every seed; fixed by config.data.seed.
struct ExperimentData {
  Dataset train, val, test;
  TriggeredSet triggered;            // every test scene with one triggered victim
  std::vector<LabeledScene> probes;  // first sentinel.probes triggered scenes
};
ExperimentData prepare_data(const ExperimentConfig& config);

PoisonResult poison_for_seed(const ExperimentConfig& config, const Dataset& train_set, std::uint64_t seed);

struct SeedModels {
  PoisonResult poison;  // records only; the mixed scenes are released after training
  TrainedModel clean;
  TrainedModel backdoored;
};
// The clean and backdoored models of one seed, as run_experiment builds them.
SeedModels train_seed_models(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t seed,
                             const ExperimentOptions& options);

}  // namespace detguard
