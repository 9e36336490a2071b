#include "detguard/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "detguard/autodiff/checkpoint.hpp"
#include "detguard/errors.hpp"
#include "detguard/scene/generator.hpp"

namespace detguard {

using nlohmann::json;

namespace {

void say(const ExperimentOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

// Sentinel pass over the probes: scores, filtered mean and mean heatmap.
struct ProbePass {
  std::vector<std::vector<ProposalRecord>> records;
  std::vector<ImageScores> images;
  std::vector<Heatmap> heatmaps;
};

ProbePass probe(TwoStageDetector& model, const std::vector<LabeledScene>& probes, int stride) {
  ProbePass p;
  for (const auto& s : probes) {
    auto recs = model.analyze(s.image);
    ImageScores im;
    im.scene_id = s.id;
    for (const auto& r : recs) im.proposals.push_back(r.proposal);
    im.scores = inconsistency_scores(recs);
    p.heatmaps.push_back(inconsistency_heatmap(recs, s.height(), s.width(), stride));
    p.images.push_back(std::move(im));
    p.records.push_back(std::move(recs));
  }
  return p;
}

Heatmap mean_heatmap(const std::vector<Heatmap>& maps) {
  Heatmap h = maps.front();
  std::fill(h.values.begin(), h.values.end(), 0.0);
  for (const auto& m : maps)
    for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] += m.values[i] / static_cast<double>(maps.size());
  return h;
}

SentinelRun sentinel_run(const ProbePass& pass, const InconsistencyConfig& cfg) {
  const auto rep = summarize(pass.images, cfg);
  SentinelRun r;
  r.mu = rep.mu;
  r.retained = rep.retained.size();
  r.verdict = rep.verdict;
  r.scores = rep.all_scores();
  r.heatmap = mean_heatmap(pass.heatmaps);
  return r;
}

json eval_json(const ModelEval& e) {
  return {{"clean", to_json(e.clean)},
          {"triggered", to_json(e.triggered)},
          {"asr", e.asr},
          {"victim_recall", e.victim_recall},
          {"clean_victim_recall", e.clean_victim_recall}};
}

json heatmap_json(const Heatmap& h) {
  return {{"rows", h.rows}, {"cols", h.cols}, {"stride", h.stride}, {"values", h.values}};
}

json run_json(const RemovalRun& r) {
  json curve = json::array();
  for (const auto& c : r.curve)
    curve.push_back({{"epoch", c.epoch},
                     {"clean_ap", c.clean_ap},
                     {"triggered_ap", c.triggered_ap},
                     {"victim_recall", c.victim_recall}});
  json sums = json::object();
  for (const auto& [m, v] : r.checksums) sums[m] = hex(v);
  return {{"name", r.name}, {"eval", eval_json(r.eval)}, {"curve", curve}, {"epoch_loss", r.epoch_loss},
          {"checksums", sums}};
}

json sentinel_json(const SentinelRun& s) {
  return {{"mu", s.mu},
          {"retained", s.retained},
          {"verdict", s.verdict ? "backdoored" : "normal"},
          {"scores", s.scores},
          {"heatmap", heatmap_json(s.heatmap)}};
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string metric_cells(const MetricSet& m) {
  std::string out;
  for (double v : m.values()) out += "," + fmt(v);
  return out;
}

MetricSet mean_metrics(const std::vector<MetricSet>& sets) {
  MetricSet m;
  std::array<double*, 6> dst{&m.ap, &m.ap50, &m.ap75, &m.ap_s, &m.ap_m, &m.ap_l};
  for (std::size_t k = 0; k < 6; ++k) {
    double sum = 0.0;
    int n = 0;
    for (const auto& s : sets)
      if (s.values()[k] >= 0.0) {
        sum += s.values()[k];
        ++n;
      }
    *dst[k] = n ? sum / n : -1.0;
  }
  return m;
}

std::vector<Augmentation> ablation_methods(const std::string& name) {
  if (name == "TRF") return {};
  if (name == "TRF+PD") return {Augmentation::Photodistortion};
  return {Augmentation::Photodistortion, Augmentation::RandomFlip};
}

}  // namespace

ModelEval evaluate_model(TwoStageDetector& model, const Dataset& clean_test, const TriggeredSet& triggered,
                         const EvalConfig& config) {
  ModelEval e;
  const auto clean_dets = collect_detections(model, clean_test, config);
  e.clean = evaluate_detections(clean_dets, clean_test, config);
  const auto trig_dets = collect_detections(model, triggered.scenes, config);
  e.triggered = evaluate_detections(trig_dets, triggered.with_restored_ground_truth(), config);
  e.asr = attack_success_rate(trig_dets, triggered.victims, config);
  e.victim_recall = 1.0 - e.asr;
  e.clean_victim_recall = victim_recall(clean_dets, triggered.victims, config);
  return e;
}

bool ExperimentReport::ok() const {
  if (!failures.empty()) return false;
  for (const auto& s : seeds)
    if (!s.failures.empty()) return false;
  return true;
}

std::vector<int> histogram(const std::vector<double>& values, double width) {
  if (!(width > 0.0 && width <= 1.0)) throw ConfigError("histogram bin width must lie in (0, 1]");
  const int bins = static_cast<int>(std::ceil(1.0 / width - 1e-9));
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    const int b = std::clamp(static_cast<int>(std::floor(v / width + 1e-12)), 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

TrainedModel train_cached(const ExperimentConfig& config, const std::vector<LabeledScene>& scenes,
                          const std::string& role, std::uint64_t seed, const std::string& data_key,
                          const ExperimentOptions& options) {
  const json key = {{"role", role},
                    {"seed", seed},
                    {"data", data_key},
                    {"detector", to_json(config.detector)},
                    {"train", to_json(config.train)},
                    {"format", 1}};
  const std::string stem = role + "-" + std::to_string(seed) + "-" + hex(hash_name(key.dump()));
  const auto ckpt = options.cache_dir / (stem + ".ckpt.json");
  const auto curve = options.cache_dir / (stem + ".curve.json");
  TrainedModel out;
  if (!options.cache_dir.empty() && std::filesystem::exists(ckpt) && std::filesystem::exists(curve)) {
    out.params = ad::load_checkpoint(ckpt);
    std::ifstream in(curve);
    const json side = json::parse(in);
    out.epoch_loss = side.at("epoch_loss").get<std::vector<double>>();
    out.seconds = side.value("seconds", 0.0);
    out.from_cache = true;
    say(options, "loaded " + role + " model for seed " + std::to_string(seed) + " from cache");
    return out;
  }
  say(options, "training " + role + " model for seed " + std::to_string(seed) + " on " +
                   std::to_string(scenes.size()) + " scenes");
  TwoStageDetector model(config.detector, sub_seed(seed, "model:" + role));
  TrainOptions opt;
  opt.schedule = config.train;
  opt.seed = sub_seed(seed, "train:" + role);
  opt.on_epoch = [&](int e, TwoStageDetector&) {
    if (e % 5 == 0 || e == config.train.epochs) say(options, "  " + role + " epoch " + std::to_string(e));
  };
  const Stopwatch clock;
  out.epoch_loss = train(model, scenes, opt).epoch_loss;
  out.seconds = clock.seconds();
  out.params = model.params();
  if (!options.cache_dir.empty()) {
    std::filesystem::create_directories(options.cache_dir);
    ad::save_checkpoint(out.params, ckpt.string() + ".tmp");
    write_text(curve.string() + ".tmp", json{{"epoch_loss", out.epoch_loss}, {"seconds", out.seconds}}.dump());
    std::filesystem::rename(ckpt.string() + ".tmp", ckpt);
    std::filesystem::rename(curve.string() + ".tmp", curve);
  }
  return out;
}

ExperimentData prepare_data(const ExperimentConfig& config) {
  const auto& dc = config.data;
  ExperimentData d;
  d.train = generate_dataset(dc.n_train, dc.scene, sub_seed(dc.seed, "split:train"), "train");
  d.val = generate_dataset(dc.n_val, dc.scene, sub_seed(dc.seed, "split:val"), "val");
  d.test = generate_dataset(dc.n_test, dc.scene, sub_seed(dc.seed, "split:test"), "test");
  d.triggered = triggerize_eval_set(d.test, config.attack.trigger(), sub_seed(dc.seed, "split:triggered"),
                                    config.attack.min_victim_size);
  const int n_probes = std::min<int>(config.sentinel.probes, static_cast<int>(d.triggered.scenes.size()));
  d.probes.assign(d.triggered.scenes.scenes.begin(), d.triggered.scenes.scenes.begin() + n_probes);
  return d;
}

PoisonResult poison_for_seed(const ExperimentConfig& config, const Dataset& train_set, std::uint64_t seed) {
  PoisonSpec ps;
  ps.trigger = config.attack.trigger();
  ps.poison_rate = config.attack.rate;
  ps.target_class = config.attack.target_class;
  ps.seed = sub_seed(seed, "poison");
  ps.min_victim_size = config.attack.min_victim_size;
  return poison_dataset(train_set, ps);
}

SeedModels train_seed_models(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t seed,
                             const ExperimentOptions& options) {
  const json full = to_json(config);
  const json data_key = {{"data", full.at("data")}};
  const json attack_key = {{"data", data_key}, {"attack", full.at("attack")}};
  SeedModels m;
  m.poison = poison_for_seed(config, data.train, seed);
  m.clean = train_cached(config, data.train.scenes, "clean", seed, data_key.dump(), options);
  m.backdoored = train_cached(config, m.poison.mixed.scenes, "backdoored", seed, attack_key.dump(), options);
  m.poison.mixed.scenes = {};
  return m;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentOptions& options) {
  config.validate();
  ExperimentReport rep;
  rep.config = config;

  const auto& dc = config.data;
  const ExperimentData data = prepare_data(config);
  const Dataset& train_set = data.train;
  const Dataset& val_set = data.val;
  const Dataset& test_set = data.test;
  const TriggeredSet& triggered = data.triggered;
  const std::vector<LabeledScene>& probes = data.probes;
  const int n_probes = static_cast<int>(probes.size());

  struct Models {
    std::unique_ptr<TwoStageDetector> clean, backdoored;
    PoisonResult poison;
  };
  std::vector<Models> models(config.seeds.size());

  // Stage 1: clean and backdoored models.
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    const std::uint64_t seed = config.seeds[i];
    const Stopwatch clock;
    SeedResult sr;
    sr.seed = seed;
    SeedModels trained = train_seed_models(config, data, seed, options);
    models[i].poison = std::move(trained.poison);
    sr.poisoned_scenes = static_cast<int>(models[i].poison.records.size());
    const auto& clean = trained.clean;
    const auto& bd = trained.backdoored;
    models[i].clean = std::make_unique<TwoStageDetector>(config.detector, 0);
    models[i].clean->load_parameters(clean.params);
    models[i].backdoored = std::make_unique<TwoStageDetector>(config.detector, 0);
    models[i].backdoored->load_parameters(bd.params);
    const double cached = (clean.from_cache ? clean.seconds : 0.0) + (bd.from_cache ? bd.seconds : 0.0);
    sr.clean_checksum = clean.params.checksum();
    sr.backdoored_checksum = bd.params.checksum();
    sr.clean_train_loss = clean.epoch_loss;
    sr.backdoored_train_loss = bd.epoch_loss;

    say(options, "evaluating seed " + std::to_string(seed));
    sr.clean_model = evaluate_model(*models[i].clean, test_set, triggered, config.eval);
    sr.backdoored = evaluate_model(*models[i].backdoored, test_set, triggered, config.eval);
    sr.seconds = clock.seconds() + cached;
    rep.seeds.push_back(std::move(sr));
  }

  // Stage 2: epsilon from clean reference models on clean validation scenes.
  if (config.sentinel.epsilon) {
    rep.epsilon = *config.sentinel.epsilon;
  } else {
    std::vector<double> pooled;
    for (auto& m : models)
      for (const auto& s : val_set.scenes) {
        const auto sc = inconsistency_scores(*m.clean, s.image);
        pooled.insert(pooled.end(), sc.begin(), sc.end());
      }
    rep.epsilon = calibrate_epsilon(pooled, config.sentinel.survive_fraction);
    rep.epsilon_calibrated = true;
  }

  // Stage 3: inconsistency on the triggered probes, theta, verdicts.
  std::vector<ProbePass> clean_pass, bd_pass;
  std::vector<double> mu_clean, mu_bd;
  const InconsistencyConfig provisional{rep.epsilon, std::max(rep.epsilon + 1e-9, 0.5)};
  for (std::size_t i = 0; i < models.size(); ++i) {
    const Stopwatch clock;
    clean_pass.push_back(probe(*models[i].clean, probes, config.sentinel.heatmap_stride));
    bd_pass.push_back(probe(*models[i].backdoored, probes, config.sentinel.heatmap_stride));
    mu_clean.push_back(summarize(clean_pass.back().images, provisional).mu);
    mu_bd.push_back(summarize(bd_pass.back().images, provisional).mu);
    rep.seeds[i].seconds += clock.seconds();
  }
  if (config.sentinel.theta) {
    rep.theta = *config.sentinel.theta;
  } else {
    try {
      rep.theta = calibrate_theta(mu_clean, mu_bd);
      rep.theta_calibrated = true;
    } catch (const ConfigError& e) {
      rep.failures.push_back(std::string("theta calibration: ") + e.what());
      rep.theta = 0.5 * (mean(mu_clean) + mean(mu_bd));
    }
  }
  const InconsistencyConfig icfg{rep.epsilon, std::max(rep.theta, rep.epsilon + 1e-9)};

  for (std::size_t i = 0; i < models.size(); ++i) {
    SeedResult& sr = rep.seeds[i];
    const Stopwatch clock;
    sr.sentinel_clean = sentinel_run(clean_pass[i], icfg);
    sr.sentinel_backdoored = sentinel_run(bd_pass[i], icfg);

    // Localization on the backdoored model, with and without the trigger.
    int hits = 0;
    double cell_trig = 0.0, cell_clean = 0.0;
    for (int k = 0; k < n_probes; ++k) {
      const auto& rec = triggered.victims[static_cast<std::size_t>(k)];
      const Heatmap& h = bd_pass[i].heatmaps[static_cast<std::size_t>(k)];
      const int cell =
          h.cell_of(rec.window.x0 + rec.window.w / 2.0, rec.window.y0 + rec.window.h / 2.0);
      hits += h.argmax() == cell;
      cell_trig += h.values[static_cast<std::size_t>(cell)];
      const auto clean_map = inconsistency_heatmap(*models[i].backdoored,
                                                   test_set.scenes[static_cast<std::size_t>(rec.scene_index)].image,
                                                   config.sentinel.heatmap_stride);
      cell_clean += clean_map.values[static_cast<std::size_t>(cell)];
    }
    sr.heatmap_hit_rate = static_cast<double>(hits) / n_probes;
    sr.trigger_cell_triggered = cell_trig / n_probes;
    sr.trigger_cell_clean = cell_clean / n_probes;
    try {
      sr.attribution = attribute_modules(*models[i].backdoored, bd_pass[i].records, icfg.epsilon);
    } catch (const ConfigError& e) {
      sr.failures.push_back(std::string("identify: ") + e.what());
    }
    sr.seconds += clock.seconds();
  }

  // Stage 4: removal on the first removal_seeds seeds.
  for (std::size_t i = 0; i < models.size() && static_cast<int>(i) < config.removal_seeds; ++i) {
    SeedResult& sr = rep.seeds[i];
    const std::uint64_t seed = sr.seed;
    const Stopwatch clock;
    const bool flagged = sr.sentinel_backdoored.verdict;
    if (!flagged) sr.failures.push_back("identify: verdict is normal; there is no backdoor to remove");

    // Clean fine-tune set: a share of the training split, disjoint from poisoned scenes.
    std::vector<int> pool;
    {
      std::vector<bool> poisoned(train_set.size(), false);
      for (const auto& r : models[i].poison.records) poisoned[static_cast<std::size_t>(r.scene_index)] = true;
      for (std::size_t k = 0; k < train_set.size(); ++k)
        if (!poisoned[k]) pool.push_back(static_cast<int>(k));
      Rng rng(sub_seed(seed, "finetune-set"));
      rng.shuffle(pool);
      const auto n = static_cast<std::size_t>(std::max(1.0, std::round(config.purge.clean_fraction * dc.n_train)));
      pool.resize(std::min(n, pool.size()));
      std::sort(pool.begin(), pool.end());
    }
    std::vector<LabeledScene> clean_ft;
    for (int k : pool) clean_ft.push_back(train_set.scenes[static_cast<std::size_t>(k)]);
    const std::uint64_t removal_seed = sub_seed(seed, "removal");

    auto curve_hook = [&](RemovalRun& run) {
      return [&config, &test_set, &triggered, &run, this_options = &options](int epoch, TwoStageDetector& m) {
        const auto e = evaluate_model(m, test_set, triggered, config.eval);
        run.curve.push_back({epoch, e.clean.ap, e.triggered.ap, e.victim_recall});
        say(*this_options, "  " + run.name + " epoch " + std::to_string(epoch) + " clean AP " + fmt(e.clean.ap) +
                               " triggered AP " + fmt(e.triggered.ap));
      };
    };

    try {
      say(options, "vanilla fine-tune for seed " + std::to_string(seed));
      RemovalRun van;
      van.name = "Vanilla";
      TwoStageDetector m(config.detector, 0);
      m.load_parameters(models[i].backdoored->params());
      const auto r = vanilla_finetune(m, clean_ft, config.removal(removal_seed, config.purge.augmentations), curve_hook(van));
      van.eval = evaluate_model(m, test_set, triggered, config.eval);
      van.epoch_loss = r.curve.epoch_loss;
      van.checksums = r.checksums;
      sr.vanilla = std::move(van);
    } catch (const Error& e) {
      sr.failures.push_back(std::string("vanilla fine-tune: ") + e.what());
    }

    if (!sr.attribution || !flagged) {
      sr.seconds += clock.seconds();
      continue;
    }
    const std::string module = sr.attribution->winner;
    auto targeted = [&](const std::string& name, const std::vector<Augmentation>& augs, bool with_curve) {
      say(options, name + " (reset " + module + ") for seed " + std::to_string(seed));
      RemovalRun run;
      run.name = name;
      TwoStageDetector m(config.detector, 0);
      m.load_parameters(models[i].backdoored->params());
      const auto r = targeted_renewal_finetune(m, clean_ft, module, config.removal(removal_seed, augs),
                                               with_curve ? EpochHook(curve_hook(run)) : EpochHook{});
      run.eval = evaluate_model(m, test_set, triggered, config.eval);
      run.epoch_loss = r.curve.epoch_loss;
      run.checksums = r.checksums;
      return run;
    };
    try {
      sr.ours = targeted("Ours", config.purge.augmentations, true);
      if (config.purge.ablation)
        for (const std::string name : {"TRF", "TRF+PD", "TRF+PD+RD"}) {
          const auto augs = ablation_methods(name);
          if (augs == config.purge.augmentations) {
            RemovalRun copy = *sr.ours;
            copy.name = name;
            copy.curve.clear();
            sr.ablation[name] = std::move(copy);
          } else {
            sr.ablation[name] = targeted(name, augs, false);
          }
        }
    } catch (const Error& e) {
      sr.failures.push_back(std::string("targeted removal: ") + e.what());
    }
    sr.seconds += clock.seconds();
  }
  return rep;
}

json report_to_json(const ExperimentReport& rep) {
  json j;
  j["format"] = "detguard-experiment";
  j["version"] = ExperimentReport::kVersion;
  j["config"] = to_json(rep.config);
  j["epsilon"] = rep.epsilon;
  j["epsilon_calibrated"] = rep.epsilon_calibrated;
  j["theta"] = rep.theta;
  j["theta_calibrated"] = rep.theta_calibrated;
  j["failures"] = rep.failures;
  j["ok"] = rep.ok();
  auto& seeds = j["seeds"] = json::array();
  for (const auto& s : rep.seeds) {
    json e;
    e["seed"] = s.seed;
    e["poisoned_scenes"] = s.poisoned_scenes;
    e["seconds"] = s.seconds;
    e["provenance"] = {{"clean_checksum", hex(s.clean_checksum)}, {"backdoored_checksum", hex(s.backdoored_checksum)}};
    e["train_loss"] = {{"clean", s.clean_train_loss}, {"backdoored", s.backdoored_train_loss}};
    e["clean_model"] = eval_json(s.clean_model);
    e["backdoored_model"] = eval_json(s.backdoored);
    e["sentinel"] = {{"clean", sentinel_json(s.sentinel_clean)},
                     {"backdoored", sentinel_json(s.sentinel_backdoored)},
                     {"heatmap_hit_rate", s.heatmap_hit_rate},
                     {"trigger_cell_triggered", s.trigger_cell_triggered},
                     {"trigger_cell_clean", s.trigger_cell_clean}};
    if (s.attribution) {
      e["attribution"] = {{"winner", s.attribution->winner},
                          {"score", s.attribution->score},
                          {"count", s.attribution->count}};
    }
    if (s.vanilla) e["vanilla"] = run_json(*s.vanilla);
    if (s.ours) e["ours"] = run_json(*s.ours);
    json abl = json::object();
    for (const auto& [name, run] : s.ablation) abl[name] = run_json(run);
    e["ablation"] = abl;
    e["failures"] = s.failures;
    seeds.push_back(std::move(e));
  }
  return j;
}

void write_report(const ExperimentReport& rep, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "report.json", report_to_json(rep).dump(2));

  std::ostringstream t1;
  t1 << "seed,mu_clean,mu_poisoned,verdict_clean,verdict_poisoned,epsilon,theta\n";
  for (const auto& s : rep.seeds)
    t1 << s.seed << "," << fmt(s.sentinel_clean.mu) << "," << fmt(s.sentinel_backdoored.mu) << ","
       << (s.sentinel_clean.verdict ? "backdoored" : "normal") << ","
       << (s.sentinel_backdoored.verdict ? "backdoored" : "normal") << "," << fmt(rep.epsilon) << "," << fmt(rep.theta)
       << "\n";
  write_text(out_dir / "table1.csv", t1.str());

  std::ostringstream t2;
  t2 << "seed,condition,dataset";
  for (const char* n : MetricSet::kNames) t2 << "," << n;
  t2 << "\n";
  std::map<std::string, std::vector<MetricSet>> pooled;
  for (const auto& s : rep.seeds) {
    std::vector<std::pair<std::string, const ModelEval*>> rows{{"Original", &s.backdoored}};
    if (s.vanilla) rows.emplace_back("Vanilla", &s.vanilla->eval);
    if (s.ours) rows.emplace_back("Ours", &s.ours->eval);
    if (!s.vanilla && !s.ours) continue;
    for (const auto& [cond, e] : rows) {
      t2 << s.seed << "," << cond << ",Poisoned" << metric_cells(e->triggered) << "\n";
      t2 << s.seed << "," << cond << ",Clean" << metric_cells(e->clean) << "\n";
      pooled[cond + ",Poisoned"].push_back(e->triggered);
      pooled[cond + ",Clean"].push_back(e->clean);
    }
  }
  for (const char* cond : {"Original", "Vanilla", "Ours"})
    for (const char* ds : {"Poisoned", "Clean"}) {
      const auto it = pooled.find(std::string(cond) + "," + ds);
      if (it != pooled.end()) t2 << "mean," << cond << "," << ds << metric_cells(mean_metrics(it->second)) << "\n";
    }
  write_text(out_dir / "table2.csv", t2.str());

  std::ostringstream t3;
  t3 << "seed,variant,triggered_AP,triggered_AP50,clean_AP,victim_recall\n";
  std::map<std::string, std::vector<const ModelEval*>> abl;
  for (const auto& s : rep.seeds)
    for (const auto& [name, run] : s.ablation) {
      t3 << s.seed << "," << name << "," << fmt(run.eval.triggered.ap) << "," << fmt(run.eval.triggered.ap50) << ","
         << fmt(run.eval.clean.ap) << "," << fmt(run.eval.victim_recall) << "\n";
      abl[name].push_back(&run.eval);
    }
  for (const char* name : {"TRF", "TRF+PD", "TRF+PD+RD"}) {
    const auto it = abl.find(name);
    if (it == abl.end()) continue;
    std::vector<double> ap, ap50, clean, rec;
    for (const auto* e : it->second) {
      ap.push_back(e->triggered.ap);
      ap50.push_back(e->triggered.ap50);
      clean.push_back(e->clean.ap);
      rec.push_back(e->victim_recall);
    }
    t3 << "mean," << name << "," << fmt(mean(ap)) << "," << fmt(mean(ap50)) << "," << fmt(mean(clean)) << ","
       << fmt(mean(rec)) << "\n";
  }
  write_text(out_dir / "table3.csv", t3.str());

  std::ostringstream cv;
  cv << "seed,method,epoch,clean_AP,triggered_AP,victim_recall\n";
  for (const auto& s : rep.seeds)
    for (const auto* run : {s.vanilla ? &*s.vanilla : nullptr, s.ours ? &*s.ours : nullptr})
      if (run)
        for (const auto& c : run->curve)
          cv << s.seed << "," << run->name << "," << c.epoch << "," << fmt(c.clean_ap) << "," << fmt(c.triggered_ap)
             << "," << fmt(c.victim_recall) << "\n";
  write_text(out_dir / "curves.csv", cv.str());
}

void export_heatmap_and_histogram(const json& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const double width = 0.05;
  const int bins = static_cast<int>(histogram({}, width).size());
  std::ostringstream summary;
  summary << "seed,mean_clean,mean_poisoned,count_clean,count_poisoned\n";
  const json seeds = report.contains("seeds") ? report.at("seeds") : json::array();
  if (seeds.empty()) {
    std::ostringstream hist;
    hist << "bin_lo,bin_hi,clean,poisoned\n";
    write_text(out_dir / "histogram.csv", hist.str());
    write_text(out_dir / "heatmap.csv", "row\n");
  }
  for (const auto& s : seeds) {
    if (!s.contains("sentinel")) continue;
    const std::string seed = std::to_string(s.at("seed").get<std::uint64_t>());
    const auto& sen = s.at("sentinel");
    const auto clean = sen.at("clean").at("scores").get<std::vector<double>>();
    const auto bd = sen.at("backdoored").at("scores").get<std::vector<double>>();
    const auto hc = histogram(clean, width), hb = histogram(bd, width);
    std::ostringstream hist;
    hist << "bin_lo,bin_hi,clean,poisoned\n";
    for (int b = 0; b < bins; ++b)
      hist << fmt(b * width) << "," << fmt(std::min(1.0, (b + 1) * width)) << "," << hc[static_cast<std::size_t>(b)]
           << "," << hb[static_cast<std::size_t>(b)] << "\n";
    write_text(out_dir / ("histogram_" + seed + ".csv"), hist.str());
    summary << seed << "," << fmt(mean(clean)) << "," << fmt(mean(bd)) << "," << clean.size() << "," << bd.size()
            << "\n";
    for (const char* which : {"clean", "backdoored"}) {
      const auto& h = sen.at(which).at("heatmap");
      Heatmap map;
      map.rows = h.at("rows").get<int>();
      map.cols = h.at("cols").get<int>();
      map.stride = h.at("stride").get<int>();
      map.values = h.at("values").get<std::vector<double>>();
      write_text(out_dir / ("heatmap_" + seed + "_" + which + ".csv"), heatmap_csv(map));
    }
  }
  write_text(out_dir / "histogram_summary.csv", summary.str());
}

}  // namespace detguard
