#include "detguard/sentinel/sentinel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "detguard/errors.hpp"
#include "json.hpp"

namespace detguard {

void InconsistencyConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (!(theta > 0.0)) throw ConfigError("theta must be > 0");
  if (!(epsilon < theta)) throw ConfigError("epsilon must be below theta");
}

ComparablePair comparable_score(const ProposalRecord& record) {
  const double bg = record.roi_class_scores.empty() ? 1.0 : record.roi_class_scores[0];
  return {std::clamp(record.rpn_objectness, 0.0, 1.0), std::clamp(1.0 - bg, 0.0, 1.0)};
}

std::vector<double> inconsistency_scores(const std::vector<ProposalRecord>& records) {
  std::vector<double> s;
  s.reserve(records.size());
  for (const auto& rec : records) {
    const auto [r, p] = comparable_score(rec);
    s.push_back(std::abs(r - p));
  }
  return s;
}

std::vector<double> inconsistency_scores(TwoStageDetector& model, const ad::Tensor& image) {
  return inconsistency_scores(model.analyze(image));
}

std::size_t InconsistencyReport::score_count() const {
  std::size_t n = 0;
  for (const auto& im : images) n += im.scores.size();
  return n;
}

std::vector<double> InconsistencyReport::all_scores() const {
  std::vector<double> out;
  for (const auto& im : images) out.insert(out.end(), im.scores.begin(), im.scores.end());
  return out;
}

InconsistencyReport summarize(std::vector<ImageScores> images, const InconsistencyConfig& config) {
  config.validate();
  InconsistencyReport rep;
  rep.config = config;
  rep.images = std::move(images);
  for (const auto& im : rep.images)
    for (double s : im.scores)
      if (s > config.epsilon) rep.retained.push_back(s);
  if (!rep.retained.empty())
    rep.mu = std::accumulate(rep.retained.begin(), rep.retained.end(), 0.0) / static_cast<double>(rep.retained.size());
  rep.verdict = rep.mu > config.theta;
  return rep;
}

InconsistencyReport detect_backdoor(TwoStageDetector& model, const Dataset& probes, const InconsistencyConfig& config) {
  config.validate();
  if (probes.empty()) throw ConfigError("probe set is empty");
  std::vector<ImageScores> images;
  images.reserve(probes.size());
  for (const auto& scene : probes.scenes) {
    const auto records = model.analyze(scene.image);
    ImageScores im;
    im.scene_id = scene.id;
    for (const auto& rec : records) im.proposals.push_back(rec.proposal);
    im.scores = inconsistency_scores(records);
    images.push_back(std::move(im));
  }
  return summarize(std::move(images), config);
}

double calibrate_epsilon(std::vector<double> clean_scores, double survive_fraction) {
  if (clean_scores.empty()) throw ConfigError("no clean scores to calibrate epsilon");
  if (!(survive_fraction >= 0.0 && survive_fraction < 1.0)) throw ConfigError("survive fraction must lie in [0, 1)");
  std::sort(clean_scores.begin(), clean_scores.end());
  const auto n = clean_scores.size();
  // At most floor(f*n) scores may be strictly above epsilon.
  const auto allowed = static_cast<std::size_t>(std::floor(survive_fraction * static_cast<double>(n)));
  return clean_scores[n - 1 - std::min(allowed, n - 1)];
}

double calibrate_theta(const std::vector<double>& clean_mu, const std::vector<double>& backdoored_mu) {
  if (clean_mu.empty() || backdoored_mu.empty()) throw ConfigError("theta calibration needs both groups");
  const double hi_clean = *std::max_element(clean_mu.begin(), clean_mu.end());
  const double lo_bd = *std::min_element(backdoored_mu.begin(), backdoored_mu.end());
  if (!(lo_bd > hi_clean))
    throw ConfigError("clean and backdoored mu overlap (max clean " + std::to_string(hi_clean) + ", min backdoored " +
                      std::to_string(lo_bd) + ")");
  return 0.5 * (hi_clean + lo_bd);
}

Dataset screening_probes(const Dataset& clean, int patch, int grid_stride) {
  if (patch < 1 || grid_stride < 1) throw ConfigError("patch and grid stride must be positive");
  Dataset out;
  out.split = clean.split + "-screening";
  out.spec = clean.spec;
  out.seed = clean.seed;
  int id = 0;
  for (const auto& scene : clean.scenes)
    for (int y = grid_stride / 2; y < scene.height(); y += grid_stride)
      for (int x = grid_stride / 2; x < scene.width(); x += grid_stride) {
        LabeledScene s = scene;
        s.id = id++;
        for (int c = 0; c < s.channels(); ++c)
          for (int yy = y - patch / 2; yy < y - patch / 2 + patch; ++yy)
            for (int xx = x - patch / 2; xx < x - patch / 2 + patch; ++xx)
              if (yy >= 0 && yy < s.height() && xx >= 0 && xx < s.width()) s.pixel(c, yy, xx) = 1.0;
        out.scenes.push_back(std::move(s));
      }
  return out;
}

int Heatmap::argmax() const {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

int Heatmap::cell_of(double x, double y) const {
  const int c = std::clamp(static_cast<int>(std::floor(x / stride)), 0, cols - 1);
  const int r = std::clamp(static_cast<int>(std::floor(y / stride)), 0, rows - 1);
  return r * cols + c;
}

Heatmap inconsistency_heatmap(const std::vector<ProposalRecord>& records, int height, int width, int stride) {
  if (stride < 1 || height % stride || width % stride) throw ConfigError("stride must divide the image dims");
  Heatmap h;
  h.rows = height / stride;
  h.cols = width / stride;
  h.stride = stride;
  h.values.assign(static_cast<std::size_t>(h.rows * h.cols), 0.0);
  std::vector<int> count(h.values.size(), 0);
  const auto s = inconsistency_scores(records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto cell = static_cast<std::size_t>(h.cell_of(records[i].proposal.cx, records[i].proposal.cy));
    h.values[cell] += s[i];
    ++count[cell];
  }
  for (std::size_t i = 0; i < h.values.size(); ++i)
    if (count[i]) h.values[i] /= count[i];
  return h;
}

Heatmap inconsistency_heatmap(TwoStageDetector& model, const ad::Tensor& image, int stride) {
  return inconsistency_heatmap(model.analyze(image), image.dim(1), image.dim(2), stride);
}

std::string report_json(const InconsistencyReport& report) {
  nlohmann::json j;
  j["format"] = "detguard-inconsistency";
  j["version"] = 1;
  j["epsilon"] = report.config.epsilon;
  j["theta"] = report.config.theta;
  j["mu"] = report.mu;
  j["verdict"] = report.verdict ? "backdoored" : "normal";
  j["score_count"] = report.score_count();
  j["retained_count"] = report.retained.size();
  if (!report.retained.empty()) {
    j["retained_min"] = *std::min_element(report.retained.begin(), report.retained.end());
    j["retained_max"] = *std::max_element(report.retained.begin(), report.retained.end());
  }
  auto& images = j["images"] = nlohmann::json::array();
  for (const auto& im : report.images) {
    nlohmann::json e;
    e["scene_id"] = im.scene_id;
    e["scores"] = im.scores;
    auto& boxes = e["proposals"] = nlohmann::json::array();
    for (const auto& b : im.proposals) boxes.push_back({b.cx, b.cy, b.w, b.h});
    images.push_back(std::move(e));
  }
  return j.dump(2);
}

std::string heatmap_csv(const Heatmap& heatmap) {
  std::ostringstream os;
  os.precision(17);
  os << "row";
  for (int c = 0; c < heatmap.cols; ++c) os << ",c" << c;
  os << "\n";
  for (int r = 0; r < heatmap.rows; ++r) {
    os << r;
    for (int c = 0; c < heatmap.cols; ++c) os << "," << heatmap.at(r, c);
    os << "\n";
  }
  return os.str();
}

}  // namespace detguard
