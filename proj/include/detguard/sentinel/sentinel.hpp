#pragma once

#include <string>
#include <vector>

#include "detguard/detector/model.hpp"
#include "detguard/poison/poison.hpp"
#include "detguard/scene/scene.hpp"

namespace detguard {

struct InconsistencyConfig {
  double epsilon = 0.2;  // scores at or below this are negligible
  double theta = 0.5;    // backdoor verdict when mu > theta

  // Throws ConfigError unless 0 <= epsilon < theta.
  void validate() const;
};

// Objectness of the RPN and foreground probability of the RoI head for one
// proposal, both in [0, 1].
struct ComparablePair {
  double r = 0.0;
  double p = 0.0;
};

ComparablePair comparable_score(const ProposalRecord& record);

// s_i = |r_i - p_i| per proposal.
std::vector<double> inconsistency_scores(const std::vector<ProposalRecord>& records);
std::vector<double> inconsistency_scores(TwoStageDetector& model, const ad::Tensor& image);

struct ImageScores {
  int scene_id = 0;
  std::vector<Box> proposals;
  std::vector<double> scores;
};

struct InconsistencyReport {
  std::vector<ImageScores> images;
  std::vector<double> retained;  // every s > epsilon, in image order
  double mu = 0.0;               // mean of retained; 0 when none survive
  bool verdict = false;          // mu > theta
  InconsistencyConfig config;

  std::size_t score_count() const;
  std::vector<double> all_scores() const;
};

// Filters, averages and judges already computed scores.
InconsistencyReport summarize(std::vector<ImageScores> images, const InconsistencyConfig& config);

InconsistencyReport detect_backdoor(TwoStageDetector& model, const Dataset& probes, const InconsistencyConfig& config);

// Smallest epsilon leaving at most `survive_fraction` of the scores above it.
double calibrate_epsilon(std::vector<double> clean_scores, double survive_fraction = 0.05);

// Midpoint between the largest clean mu and the smallest backdoored mu.
// Throws ConfigError when the two groups overlap or either is empty.
double calibrate_theta(const std::vector<double>& clean_mu, const std::vector<double>& backdoored_mu);

// Screening probes for a defender without the trigger: a copy of each clean
// scene per grid position with a white patch of `patch` px stamped there.
Dataset screening_probes(const Dataset& clean, int patch, int grid_stride);

struct Heatmap {
  int rows = 0;
  int cols = 0;
  int stride = 0;
  std::vector<double> values;  // row-major mean s; 0 where no proposal lands

  double at(int row, int col) const { return values[static_cast<std::size_t>(row * cols + col)]; }
  // Cell of the first maximum in row-major order.
  int argmax() const;
  int cell_of(double x, double y) const;
};

// Mean s of the proposals whose centers fall in each stride x stride cell.
Heatmap inconsistency_heatmap(const std::vector<ProposalRecord>& records, int height, int width, int stride);
Heatmap inconsistency_heatmap(TwoStageDetector& model, const ad::Tensor& image, int stride);

std::string report_json(const InconsistencyReport& report);
std::string heatmap_csv(const Heatmap& heatmap);

}  // namespace detguard
