// End-to-end acceptance run: prints one PASS/FAIL line per criterion.
//
// Usage: acceptance [config.json]
// Trained checkpoints are cached in DETGUARD_FIXTURE_CACHE so reruns only
// repeat detection, removal and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "detguard/detector/boxes.hpp"
#include "detguard/errors.hpp"
#include "detguard/harness/experiment.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#ifndef DETGUARD_FIXTURE_CACHE
#define DETGUARD_FIXTURE_CACHE "fixture_cache"
#endif
#ifndef DETGUARD_ACCEPTANCE_OUT
#define DETGUARD_ACCEPTANCE_OUT "acceptance_report"
#endif

using namespace detguard;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Verdict& v) {
  if (!v.pass) ++failures;
  std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str());
  std::fflush(stdout);
}

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Verdict gradients() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    oracles::MicroNet net(seed);
    const auto r = detguard::testing::gradient_check(net.store, [&](ad::Graph& g) { return net.loss(g); });
    worst = std::max(worst, r.max_rel_error);
  }
  return {worst <= 1e-3, "5 micro-nets, max relative error " + num(worst, 3) + " (limit 1e-3)"};
}

Verdict oracles_agree() {
  Rng rng(77);
  int nms_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = rng.uniform_int(0, 64);
    const auto boxes = oracles::random_boxes(n, rng);
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) scores.push_back(std::round(rng.uniform() * 20.0) / 20.0);
    const double thresh = rng.uniform(0.2, 0.8);
    nms_bad += nms(boxes, scores, thresh) != oracles::nms_oracle(boxes, scores, thresh);
  }
  double iou_err = 0.0;
  for (int t = 0; t < 500; ++t) {
    const Box a = oracles::random_grid_box(rng), b = oracles::random_grid_box(rng);
    iou_err = std::max(iou_err, std::abs(iou(a, b) - oracles::raster_iou(a, b)));
  }
  double ap_err = 0.0;
  const auto cases = oracles::hand_cases();
  for (const auto& c : cases)
    ap_err = std::max(ap_err, std::abs(average_precision(c.dets, c.gts, c.thresh).ap -
                                       oracles::ap_oracle(c.dets, c.gts, c.thresh)));
  const bool ok = nms_bad == 0 && iou_err <= 1e-6 && ap_err <= 1e-9 && cases.size() == 20;
  return {ok, "NMS mismatches " + std::to_string(nms_bad) + "/1000, IoU max error " + num(iou_err, 3) +
                  " over 500, AP max error " + num(ap_err, 3) + " over " + std::to_string(cases.size())};
}

Verdict attack(const ExperimentReport& rep) {
  int good = 0;
  double worst_time = 0.0;
  std::string detail;
  for (const auto& s : rep.seeds) {
    const double drop = s.clean_model.clean.ap - s.backdoored.clean.ap;
    const bool ok = s.backdoored.asr >= 0.8 && drop <= 0.05 && s.seconds <= 20 * 60;
    good += ok;
    worst_time = std::max(worst_time, s.seconds);
    detail += " seed " + std::to_string(s.seed) + ": ASR " + num(s.backdoored.asr, 3) + ", mAP drop " +
              num(drop, 3) + ";";
  }
  detail += " slowest seed " + num(worst_time / 60.0, 3) + " min";
  const bool pass = rep.seeds.size() >= 3 && good == static_cast<int>(rep.seeds.size());
  return {pass, std::to_string(good) + "/" + std::to_string(rep.seeds.size()) + " seeds meet ASR>=0.8, drop<=0.05, <=20 min;" + detail};
}

Verdict separation(const ExperimentReport& rep) {
  double max_clean = -1.0, min_bd = 2.0;
  int correct = 0;
  for (const auto& s : rep.seeds) {
    max_clean = std::max(max_clean, s.sentinel_clean.mu);
    min_bd = std::min(min_bd, s.sentinel_backdoored.mu);
    correct += !s.sentinel_clean.verdict;
    correct += s.sentinel_backdoored.verdict;
  }
  const int total = 2 * static_cast<int>(rep.seeds.size());
  const bool pass = rep.seeds.size() >= 5 && min_bd > max_clean && correct == total && rep.theta_calibrated;
  return {pass, "min mu(backdoored) " + num(min_bd) + " vs max mu(clean) " + num(max_clean) + ", theta " +
                    num(rep.theta) + ", accuracy " + std::to_string(correct) + "/" + std::to_string(total)};
}

Verdict identification(const ExperimentReport& rep) {
  int hits = 0;
  std::string detail;
  for (const auto& s : rep.seeds) {
    const std::string w = s.attribution ? s.attribution->winner : "none";
    hits += w == "roi_cls_head";
    detail += " " + w;
  }
  return {hits >= 4 && rep.seeds.size() >= 5,
          std::to_string(hits) + "/" + std::to_string(rep.seeds.size()) + " seeds name roi_cls_head;" + detail};
}

Verdict removal_order(const ExperimentReport& rep) {
  int ordered = 0, recall_ok = 0, runs = 0;
  std::string detail;
  for (const auto& s : rep.seeds) {
    if (!s.ours || !s.vanilla) continue;
    ++runs;
    const double o = s.ours->eval.triggered.ap, v = s.vanilla->eval.triggered.ap, b = s.backdoored.triggered.ap;
    const bool ord = o > v && v > b;
    const bool rec = s.ours->eval.victim_recall >= 0.8 * s.clean_model.victim_recall;
    ordered += ord;
    recall_ok += ord && rec;
    detail += " seed " + std::to_string(s.seed) + ": triggered AP Ours " + num(o, 3) + ", Vanilla " + num(v, 3) +
              ", Original " + num(b, 3) + ", recall " + num(s.ours->eval.victim_recall, 3) + " vs clean " +
              num(s.clean_model.victim_recall, 3) + ";";
  }
  return {recall_ok >= 3, std::to_string(recall_ok) + " seeds ordered with recovered recall (" +
                              std::to_string(ordered) + "/" + std::to_string(runs) + " ordered);" + detail};
}

Verdict clean_preserved(const ExperimentReport& rep) {
  int ok = 0, runs = 0;
  std::string detail;
  for (const auto& s : rep.seeds) {
    if (!s.ours) continue;
    ++runs;
    const double after = s.ours->eval.clean.ap, before = s.backdoored.clean.ap;
    ok += after >= before - 0.05;
    detail += " seed " + std::to_string(s.seed) + ": " + num(after, 3) + " vs " + num(before, 3) + ";";
  }
  const std::string count = runs < 3 ? " (3 removal seeds required)" : "";
  return {runs >= 3 && ok == runs, std::to_string(ok) + "/" + std::to_string(runs) + " seeds within 0.05" + count + ";" + detail};
}

Verdict ablation(const ExperimentReport& rep) {
  std::map<std::string, std::vector<double>> ap;
  for (const auto& s : rep.seeds)
    for (const auto& [name, run] : s.ablation) ap[name].push_back(run.eval.triggered.ap);
  auto mean = [&](const std::string& k) {
    const auto& v = ap[k];
    double sum = 0.0;
    for (double x : v) sum += x;
    return v.empty() ? std::nan("") : sum / static_cast<double>(v.size());
  };
  const double a = mean("TRF"), b = mean("TRF+PD"), c = mean("TRF+PD+RD");
  const bool pass = ap["TRF"].size() >= 3 && a <= b && b <= c && c > a;
  return {pass, "triggered AP means TRF " + num(a, 3) + ", TRF+PD " + num(b, 3) + ", TRF+PD+RD " + num(c, 3) +
                    " over " + std::to_string(ap["TRF"].size()) + " seeds"};
}

Verdict localization(const ExperimentReport& rep) {
  double hit = 0.0;
  int ordered = 0;
  std::string detail;
  for (const auto& s : rep.seeds) {
    hit += s.heatmap_hit_rate;
    const auto mean = [](const std::vector<double>& v) {
      double sum = 0.0;
      for (double x : v) sum += x;
      return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
    };
    const double mc = mean(s.sentinel_clean.scores), mp = mean(s.sentinel_backdoored.scores);
    ordered += mp > mc;
    detail += " seed " + std::to_string(s.seed) + ": hit " + num(s.heatmap_hit_rate, 3) + ", hist means " +
              num(mp, 3) + " vs " + num(mc, 3) + ";";
  }
  hit /= std::max<std::size_t>(1, rep.seeds.size());
  const bool pass = !rep.seeds.empty() && hit >= 0.8 && ordered == static_cast<int>(rep.seeds.size());
  return {pass, "trigger cell is the max in " + num(100 * hit, 3) + "% of probes;" + detail};
}

Verdict determinism() {
  ExperimentConfig c;
  c.seeds = {11};
  c.removal_seeds = 1;
  c.data.n_train = 40;
  c.data.n_val = 4;
  c.data.n_test = 6;
  c.train.epochs = 1;
  c.train.lr_drop_epochs.clear();
  c.sentinel.probes = 4;
  c.sentinel.epsilon = 0.05;
  c.sentinel.theta = 0.1;
  c.purge.epochs = 1;
  auto strip = [](json j) {
    for (auto& s : j.at("seeds")) s.erase("seconds");
    return j.dump();
  };
  const bool same = strip(report_to_json(run_experiment(c))) == strip(report_to_json(run_experiment(c)));

  // Local initialization: the reset module changes, every other byte stays.
  TwoStageDetector base(c.detector, 5);
  bool local = true, repeatable = true;
  for (const std::string& module : kCandidateModules) {
    TwoStageDetector a(c.detector, 0), b(c.detector, 0);
    a.load_parameters(base.params());
    b.load_parameters(base.params());
    locally_initialize(a, module, 99);
    locally_initialize(b, module, 99);
    bool changed = false;
    for (const auto& [name, p] : a.params().entries()) {
      const auto& orig = base.params().entries().at(name).value.data();
      const auto& now = p.value.data();
      const bool equal = std::memcmp(orig.data(), now.data(), now.size() * sizeof(double)) == 0;
      if (ad::has_prefix(name, module))
        changed = changed || !equal;
      else
        local = local && equal;
      const auto& twin = b.params().entries().at(name).value.data();
      repeatable = repeatable && std::memcmp(twin.data(), now.data(), now.size() * sizeof(double)) == 0;
    }
    local = local && changed;
  }
  return {same && local && repeatable, std::string("repeated run ") + (same ? "identical" : "differs") +
                                           ", local init " + (local ? "bytewise local" : "leaks") + ", reset " +
                                           (repeatable ? "repeatable" : "not repeatable")};
}

}  // namespace

int main(int argc, char** argv) {
  ExperimentConfig config;
  try {
    if (argc > 1) config = load_experiment_config(argv[1]);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  report(1, "gradients", gradients());
  report(2, "oracles", oracles_agree());

  ExperimentOptions options;
  options.cache_dir = DETGUARD_FIXTURE_CACHE;
  options.log = [](const std::string& m) { std::cerr << m << std::endl; };
  ExperimentReport rep;
  try {
    rep = run_experiment(config, options);
    write_report(rep, DETGUARD_ACCEPTANCE_OUT);
    export_heatmap_and_histogram(report_to_json(rep), std::filesystem::path(DETGUARD_ACCEPTANCE_OUT) / "plots");
  } catch (const std::exception& e) {
    std::cerr << "experiment failed: " << e.what() << "\n";
  }
  for (const auto& f : rep.failures) std::cerr << "note: " << f << "\n";
  for (const auto& s : rep.seeds)
    for (const auto& f : s.failures) std::cerr << "note: seed " << s.seed << ": " << f << "\n";

  report(3, "attack", attack(rep));
  report(4, "detection", separation(rep));
  report(5, "identification", identification(rep));
  report(6, "removal", removal_order(rep));
  report(7, "clean accuracy", clean_preserved(rep));
  report(8, "ablation", ablation(rep));
  report(9, "localization", localization(rep));
  report(10, "determinism", determinism());

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
