// detguard command-line interface.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
// 3 experiment finished with recorded failures.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "detguard/autodiff/checkpoint.hpp"
#include "detguard/errors.hpp"
#include "detguard/harness/experiment.hpp"
#include "detguard/scene/dataset_io.hpp"
#include "detguard/scene/generator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace detguard;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;
constexpr int kIncomplete = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig load_config(const Globals& g) {
  if (!g.config.empty() && !fs::is_regular_file(g.config)) throw ConfigError("config file not found: " + g.config);
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  c.validate();
  return c;
}

std::uint64_t seed_or(const Globals& g, std::uint64_t fallback) { return g.seed.value_or(fallback); }

fs::path out_dir(const Globals& g, const char* verb) {
  if (g.out.empty()) throw ConfigError(std::string(verb) + " needs --out");
  fs::create_directories(g.out);
  return g.out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

TwoStageDetector load_model(const ExperimentConfig& c, const std::string& path) {
  TwoStageDetector model(c.detector, 0);
  model.load_parameters(ad::load_checkpoint(path));
  return model;
}

json eval_to_json(const ModelEval& e) {
  return {{"clean", to_json(e.clean)},
          {"triggered", to_json(e.triggered)},
          {"asr", e.asr},
          {"victim_recall", e.victim_recall},
          {"clean_victim_recall", e.clean_victim_recall}};
}

TriggeredSet triggered_copy(const ExperimentConfig& c, const Dataset& test, std::uint64_t seed) {
  return triggerize_eval_set(test, c.attack.trigger(), sub_seed(seed, "split:triggered"), c.attack.min_victim_size);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor injection, detection and removal for miniature two-stage detectors"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment configuration (JSON)");
  app.add_option("--seed", g.seed, "seed for the selected stage");
  app.add_option("--out", g.out, "output directory");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  int n_scenes = 100;
  std::string split = "train";
  gen->add_option("--n-scenes", n_scenes, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--split", split, "split name recorded in the manifest");

  // poison
  auto* poi = app.add_subcommand("poison", "inject the object-disappearance backdoor into a dataset");
  std::string data;
  std::optional<double> rate, alpha, size_frac;
  poi->add_option("--data", data, "input dataset directory")->required();
  poi->add_option("--rate", rate, "poison rate");
  poi->add_option("--alpha", alpha, "trigger blend factor");
  poi->add_option("--size-frac", size_frac, "trigger side as a fraction of the victim box");
  bool triggered = false;
  poi->add_flag("--triggered", triggered, "stamp one victim in every scene (probe or test set)")->excludes("--rate");

  // train
  auto* trn = app.add_subcommand("train", "train a detector");
  std::optional<int> epochs;
  std::optional<double> lr;
  trn->add_option("--data", data, "training dataset directory")->required();
  trn->add_option("--epochs", epochs, "training epochs");
  trn->add_option("--lr", lr, "learning rate");

  // detect
  auto* det = app.add_subcommand("detect", "score a model for backdoor inconsistency");
  std::string model_path, probes_dir;
  std::optional<double> epsilon, theta;
  det->add_option("--model", model_path, "model checkpoint")->required();
  det->add_option("--probes", probes_dir, "probe dataset directory (triggered images)")->required();
  det->add_option("--epsilon", epsilon, "score filter threshold");
  det->add_option("--theta", theta, "decision threshold on the mean score");

  // purge
  auto* pur = app.add_subcommand("purge", "remove a backdoor by targeted renewal and fine-tuning");
  std::string clean_data, aug = "pd,rd", test_dir, method = "targeted", module;
  pur->add_option("--model", model_path, "backdoored model checkpoint")->required();
  pur->add_option("--clean-data", clean_data, "clean fine-tune dataset directory")->required();
  pur->add_option("--probes", probes_dir, "probe dataset directory used to identify the module");
  pur->add_option("--module", module, "module to reset, skipping identification");
  pur->add_option("--epochs", epochs, "fine-tune epochs");
  pur->add_option("--aug", aug, "augmentations, comma separated (pd, rd) or none");
  pur->add_option("--method", method, "targeted or vanilla")->check(CLI::IsMember({"targeted", "vanilla"}));
  pur->add_option("--test", test_dir, "clean test dataset for per-epoch metrics");
  pur->add_option("--epsilon", epsilon, "score filter threshold");
  pur->add_option("--theta", theta, "decision threshold on the mean score");

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a model on clean and triggered test scenes");
  evl->add_option("--model", model_path, "model checkpoint")->required();
  evl->add_option("--data", data, "clean test dataset directory")->required();

  // experiment
  auto* exp = app.add_subcommand("experiment", "run the full multi-seed study");
  std::string cache;
  exp->add_option("--cache", cache, "checkpoint cache directory");

  // export-plots
  auto* plt = app.add_subcommand("export-plots", "write heatmap and histogram CSVs from a report");
  std::string report_path;
  plt->add_option("--report", report_path, "experiment report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    ExperimentConfig c = load_config(g);

    if (gen->parsed()) {
      const auto dir = out_dir(g, "gen-data");
      write_dataset(generate_dataset(n_scenes, c.data.scene, seed_or(g, c.data.seed), split), dir);
      log("wrote " + std::to_string(n_scenes) + " scenes to " + dir.string());
      return 0;
    }

    if (poi->parsed()) {
      const auto dir = out_dir(g, "poison");
      PoisonSpec spec;
      spec.trigger = make_white_patch_trigger(size_frac.value_or(c.attack.relative_size), alpha.value_or(c.attack.alpha));
      spec.poison_rate = rate.value_or(c.attack.rate);
      spec.target_class = c.attack.target_class;
      spec.min_victim_size = c.attack.min_victim_size;
      spec.seed = sub_seed(seed_or(g, 0), "poison");
      if (triggered) {
        const auto t = triggerize_eval_set(read_dataset(data), spec.trigger, spec.seed, spec.min_victim_size);
        write_dataset(t.scenes, dir / "dataset");
        write_file(dir / "poison_manifest.json", poison_manifest_json(t.victims, spec.trigger));
        log("triggered " + std::to_string(t.victims.size()) + " scenes");
        return 0;
      }
      const auto result = poison_dataset(read_dataset(data), spec);
      write_dataset(result.mixed, dir / "dataset");
      write_file(dir / "poison_manifest.json", poison_manifest_json(result.records, spec.trigger));
      log("poisoned " + std::to_string(result.records.size()) + " scenes");
      return 0;
    }

    if (trn->parsed()) {
      const auto dir = out_dir(g, "train");
      if (epochs) {
        c.train.epochs = *epochs;
        c.train.lr_drop_epochs.clear();
      }
      if (lr) c.train.lr = *lr;
      const auto ds = read_dataset(data);
      const std::uint64_t seed = seed_or(g, 0);
      TwoStageDetector model(c.detector, sub_seed(seed, "model:cli"));
      TrainOptions opt;
      opt.schedule = c.train;
      opt.seed = sub_seed(seed, "train:cli");
      opt.on_epoch = [](int e, TwoStageDetector&) { log("epoch " + std::to_string(e)); };
      const auto curve = train(model, ds.scenes, opt);
      ad::save_checkpoint(model.params(), dir / "model.ckpt.json");
      write_file(dir / "train.json", json{{"format", "detguard-train"},
                                          {"version", 1},
                                          {"seed", seed},
                                          {"schedule", to_json(c.train)},
                                          {"detector", to_json(c.detector)},
                                          {"epoch_loss", curve.epoch_loss},
                                          {"checksum", model.params().checksum()}}
                                         .dump(2));
      return 0;
    }

    if (det->parsed()) {
      const auto dir = out_dir(g, "detect");
      auto model = load_model(c, model_path);
      const InconsistencyConfig icfg{epsilon.value_or(c.sentinel.epsilon.value_or(0.2)),
                                     theta.value_or(c.sentinel.theta.value_or(0.5))};
      icfg.validate();
      const auto probes = read_dataset(probes_dir);
      const auto report = detect_backdoor(model, probes, icfg);
      write_file(dir / "report.json", report_json(report));
      std::vector<Heatmap> maps;
      for (const auto& s : probes.scenes)
        maps.push_back(inconsistency_heatmap(model, s.image, c.sentinel.heatmap_stride));
      Heatmap mean = maps.front();
      for (std::size_t i = 0; i < mean.values.size(); ++i) {
        mean.values[i] = 0.0;
        for (const auto& m : maps) mean.values[i] += m.values[i] / static_cast<double>(maps.size());
      }
      write_file(dir / "heatmap.csv", heatmap_csv(mean));
      std::cout << (report.verdict ? "backdoored" : "normal") << " mu=" << report.mu << "\n";
      return 0;
    }

    if (pur->parsed()) {
      const auto dir = out_dir(g, "purge");
      auto model = load_model(c, model_path);
      std::vector<Augmentation> augs;
      if (aug != "none" && !aug.empty()) {
        std::stringstream ss(aug);
        for (std::string item; std::getline(ss, item, ',');) augs.push_back(parse_augmentation(item));
      }
      const std::uint64_t seed = seed_or(g, 0);
      RemovalConfig rc = c.removal(sub_seed(seed, "removal"), augs);
      if (epochs) rc.epochs = *epochs;
      const auto clean = read_dataset(clean_data);

      json epochs_json = json::array();
      EpochHook hook;
      std::optional<Dataset> test;
      std::optional<TriggeredSet> trig;
      if (!test_dir.empty()) {
        test = read_dataset(test_dir);
        trig = triggered_copy(c, *test, c.data.seed);
        hook = [&](int e, TwoStageDetector& m) {
          const auto ev = evaluate_model(m, *test, *trig, c.eval);
          epochs_json.push_back({{"epoch", e}, {"metrics", eval_to_json(ev)}});
          log("epoch " + std::to_string(e) + " clean AP " + std::to_string(ev.clean.ap) + " triggered AP " +
              std::to_string(ev.triggered.ap));
        };
      }

      RemovalResult result;
      if (method == "vanilla") {
        result = vanilla_finetune(model, clean.scenes, rc, hook);
      } else {
        std::string target = module;
        std::optional<ModuleAttribution> attribution;
        if (target.empty()) {
          if (probes_dir.empty()) throw ConfigError("targeted purge needs --probes or --module");
          const InconsistencyConfig icfg{epsilon.value_or(c.sentinel.epsilon.value_or(0.2)),
                                         theta.value_or(c.sentinel.theta.value_or(0.5))};
          const auto probes = read_dataset(probes_dir);
          attribution = identify_affected_module(model, probes, detect_backdoor(model, probes, icfg));
          target = attribution->winner;
        }
        result = targeted_renewal_finetune(model, clean.scenes, target, rc, hook);
        if (!result.attribution) result.attribution = attribution;
      }
      ad::save_checkpoint(model.params(), dir / "model.ckpt.json");
      json sums = json::object();
      for (const auto& [m, v] : result.checksums) sums[m] = v;
      json rep = {{"format", "detguard-removal"},
                  {"version", 1},
                  {"method", result.method},
                  {"reinitialized", result.reinitialized},
                  {"epoch_loss", result.curve.epoch_loss},
                  {"epochs", epochs_json},
                  {"checksums", sums}};
      if (result.attribution)
        rep["attribution"] = {{"winner", result.attribution->winner},
                              {"score", result.attribution->score},
                              {"count", result.attribution->count}};
      write_file(dir / "removal.json", rep.dump(2));
      return 0;
    }

    if (evl->parsed()) {
      auto model = load_model(c, model_path);
      const auto test = read_dataset(data);
      const auto trig = triggered_copy(c, test, seed_or(g, c.data.seed));
      const json j = {{"format", "detguard-eval"}, {"version", 1},
                      {"metrics", eval_to_json(evaluate_model(model, test, trig, c.eval))}};
      if (!g.out.empty()) write_file(out_dir(g, "eval") / "eval.json", j.dump(2));
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (exp->parsed()) {
      const auto dir = out_dir(g, "experiment");
      if (g.seed) c.seeds = {*g.seed};
      ExperimentOptions opt;
      opt.cache_dir = cache;
      opt.log = [](const std::string& m) { log(m); };
      const auto report = run_experiment(c, opt);
      write_report(report, dir);
      export_heatmap_and_histogram(report_to_json(report), dir / "plots");
      for (const auto& f : report.failures) log("failure: " + f);
      for (const auto& s : report.seeds)
        for (const auto& f : s.failures) log("seed " + std::to_string(s.seed) + " failure: " + f);
      return report.ok() ? 0 : kIncomplete;
    }

    if (plt->parsed()) {
      const auto dir = out_dir(g, "export-plots");
      std::ifstream in(report_path);
      if (!in) throw Error("cannot read " + report_path);
      json report;
      try {
        report = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ParseError(report_path, e.byte, e.what());
      }
      export_heatmap_and_histogram(report, dir);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}
