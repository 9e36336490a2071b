#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "detguard/autodiff/rng.hpp"
#include "detguard/errors.hpp"
#include "detguard/harness/experiment.hpp"
#include "detguard/scene/generator.hpp"

using namespace detguard;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("detguard_test_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seeds = {0, 1};
  c.removal_seeds = 1;
  c.data.n_train = 60;
  c.data.n_val = 4;
  c.data.n_test = 6;
  c.train.epochs = 1;
  c.train.lr_drop_epochs.clear();
  c.sentinel.probes = 4;
  c.purge.epochs = 1;
  return c;
}

}  // namespace

TEST(ExperimentConfig, JsonRoundTripKeepsEveryField) {
  ExperimentConfig c;
  c.seeds = {3, 9};
  c.removal_seeds = 2;
  c.attack.target_class = 2;
  c.sentinel.epsilon = 0.25;
  c.purge.augmentations = {Augmentation::RandomFlip};
  c.detector.roi_hidden = 48;
  const json j = to_json(c);
  EXPECT_EQ(to_json(experiment_config_from_json(j)), j);
}

TEST(ExperimentConfig, MissingKeysKeepDefaults) {
  const auto c = experiment_config_from_json(json::parse(R"({"attack": {"rate": 0.1}})"));
  EXPECT_DOUBLE_EQ(c.attack.rate, 0.1);
  EXPECT_DOUBLE_EQ(c.attack.relative_size, 0.1);
  EXPECT_EQ(c.data.n_train, ExperimentConfig{}.data.n_train);
}

TEST(ExperimentConfig, UnknownKeysAreRejectedWithTheirPath) {
  try {
    experiment_config_from_json(json::parse(R"({"detector": {"roi_hiden": 32}})"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("detector.roi_hiden"), std::string::npos) << e.what();
  }
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"sead": 1})")), ConfigError);
}

TEST(ExperimentConfig, InvalidValuesAreRejected) {
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"attack": {"rate": 0}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"seeds": []})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"removal_seeds": 9})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"purge": {"augmentations": ["blur"]}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"train": {"lr": "fast"}})")), ConfigError);
}

TEST(ExperimentConfig, MalformedFileReportsByteOffset) {
  const auto dir = scratch("config");
  std::ofstream(dir / "bad.json") << "{\"seeds\": [1, 2,, 3]}";
  try {
    load_experiment_config(dir / "bad.json");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 17u);
  }
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), Error);
}

TEST(Histogram, CountsSumToTheNumberOfScores) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(rng.uniform_int(0, 300)));
    for (auto& x : v) x = rng.uniform();
    if (trial % 7 == 0) v.push_back(1.0);
    const auto h = histogram(v, 0.05);
    ASSERT_EQ(h.size(), 20u);
    EXPECT_EQ(std::accumulate(h.begin(), h.end(), 0), static_cast<int>(v.size()));
  }
}

TEST(Histogram, EdgesAndValidation) {
  const auto h = histogram({0.0, 0.05, 0.0999, 1.0}, 0.05);
  EXPECT_EQ(h[0], 1);
  EXPECT_EQ(h[1], 2);
  EXPECT_EQ(h[19], 1);
  EXPECT_THROW(histogram({}, 0.0), ConfigError);
  EXPECT_THROW(histogram({}, 1.5), ConfigError);
}

TEST(ExportPlots, EmptyReportYieldsHeaderOnlyFiles) {
  const auto dir = scratch("empty_plots");
  export_heatmap_and_histogram(json{{"seeds", json::array()}}, dir);
  EXPECT_EQ(slurp(dir / "histogram.csv"), "bin_lo,bin_hi,clean,poisoned\n");
  EXPECT_EQ(slurp(dir / "histogram_summary.csv"), "seed,mean_clean,mean_poisoned,count_clean,count_poisoned\n");
}

TEST(ExportPlots, EmptyExperimentReportYieldsHeaderOnlyTables) {
  const auto dir = scratch("empty_tables");
  ExperimentReport rep;
  write_report(rep, dir);
  EXPECT_EQ(lines(slurp(dir / "table1.csv")).size(), 1u);
  EXPECT_EQ(slurp(dir / "table2.csv"), "seed,condition,dataset,AP,AP50,AP75,AP_S,AP_M,AP_L\n");
  EXPECT_EQ(lines(slurp(dir / "table3.csv")).size(), 1u);
  EXPECT_EQ(lines(slurp(dir / "curves.csv")).size(), 1u);
  EXPECT_EQ(json::parse(slurp(dir / "report.json")).at("version"), ExperimentReport::kVersion);
}

class TinyExperiment : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    first_ = new ExperimentReport(run_experiment(tiny_config()));
    second_ = new ExperimentReport(run_experiment(tiny_config()));
  }
  static void TearDownTestSuite() {
    delete first_;
    delete second_;
  }
  static ExperimentReport* first_;
  static ExperimentReport* second_;
};
ExperimentReport* TinyExperiment::first_ = nullptr;
ExperimentReport* TinyExperiment::second_ = nullptr;

json without_timing(json j) {
  for (auto& s : j.at("seeds")) s.erase("seconds");
  return j;
}

TEST_F(TinyExperiment, SameConfigAndSeedsGiveIdenticalReports) {
  EXPECT_EQ(without_timing(report_to_json(*first_)).dump(), without_timing(report_to_json(*second_)).dump());
  const auto a = scratch("det_a"), b = scratch("det_b");
  write_report(*first_, a);
  write_report(*second_, b);
  for (const char* f : {"table1.csv", "table2.csv", "table3.csv", "curves.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST_F(TinyExperiment, EverySeedIsScored) {
  ASSERT_EQ(first_->seeds.size(), 2u);
  for (const auto& s : first_->seeds) {
    EXPECT_EQ(s.poisoned_scenes, 3);
    EXPECT_GE(s.sentinel_clean.mu, 0.0);
    EXPECT_LE(s.sentinel_backdoored.mu, 1.0);
    EXPECT_GE(s.heatmap_hit_rate, 0.0);
    EXPECT_LE(s.heatmap_hit_rate, 1.0);
    EXPECT_GE(s.clean_model.clean.ap50, s.clean_model.clean.ap75);
  }
  EXPECT_TRUE(first_->epsilon_calibrated);
  EXPECT_TRUE(first_->seeds[0].vanilla.has_value());
  EXPECT_FALSE(first_->seeds[1].vanilla.has_value());
  for (const auto& s : first_->seeds) EXPECT_GT(s.seconds, 0.0);
}

TEST_F(TinyExperiment, TablesHaveTheExpectedShape) {
  const auto dir = scratch("shape");
  write_report(*first_, dir);
  const auto t1 = lines(slurp(dir / "table1.csv"));
  EXPECT_EQ(t1.size(), 3u);
  const auto t2 = lines(slurp(dir / "table2.csv"));
  const std::size_t conditions = first_->seeds[0].ours ? 3 : 2;
  // Per removal seed: conditions x {Poisoned, Clean}, then the same again as means.
  EXPECT_EQ(t2.size(), 1 + 2 * 2 * conditions);
  for (std::size_t i = 1; i < t2.size(); ++i)
    EXPECT_EQ(std::count(t2[i].begin(), t2[i].end(), ','), 8) << t2[i];
  const auto curves = lines(slurp(dir / "curves.csv"));
  // Vanilla curve: epoch 0 and epoch 1.
  EXPECT_GE(curves.size(), 3u);
}

TEST_F(TinyExperiment, ExportedHistogramsConserveScores) {
  const auto dir = scratch("plots");
  const json rep = report_to_json(*first_);
  export_heatmap_and_histogram(rep, dir);
  for (const auto& s : first_->seeds) {
    const auto rows = lines(slurp(dir / ("histogram_" + std::to_string(s.seed) + ".csv")));
    ASSERT_EQ(rows.size(), 21u);
    std::size_t clean = 0, bd = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      std::stringstream ss(rows[i]);
      std::string lo, hi, c, p;
      std::getline(ss, lo, ',');
      std::getline(ss, hi, ',');
      std::getline(ss, c, ',');
      std::getline(ss, p, ',');
      clean += std::stoul(c);
      bd += std::stoul(p);
    }
    EXPECT_EQ(clean, s.sentinel_clean.scores.size());
    EXPECT_EQ(bd, s.sentinel_backdoored.scores.size());
    EXPECT_TRUE(fs::exists(dir / ("heatmap_" + std::to_string(s.seed) + "_backdoored.csv")));
  }
}

TEST(TrainCached, SecondCallLoadsTheSameParameters) {
  const auto dir = scratch("cache");
  auto c = tiny_config();
  c.data.n_train = 12;
  const auto scenes = generate_dataset(12, c.data.scene, 4).scenes;
  ExperimentOptions opt;
  opt.cache_dir = dir;
  const auto a = train_cached(c, scenes, "clean", 0, "k", opt);
  const auto b = train_cached(c, scenes, "clean", 0, "k", opt);
  EXPECT_FALSE(a.from_cache);
  EXPECT_TRUE(b.from_cache);
  EXPECT_EQ(a.params.checksum(), b.params.checksum());
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  const auto other = train_cached(c, scenes, "clean", 0, "other-data", opt);
  EXPECT_FALSE(other.from_cache);
}
