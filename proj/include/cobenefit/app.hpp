#ifndef COBENEFIT_APP_HPP
#define COBENEFIT_APP_HPP

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cobenefit/damage.hpp"
#include "cobenefit/nn/checkpoint.hpp"
#include "cobenefit/search.hpp"
#include "cobenefit/synthetic.hpp"
#include "cobenefit/train.hpp"
#include "cobenefit/world_io.hpp"

namespace cobenefit::app {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kMissingFile = 2,
  kSchema = 3,
  kShape = 4,
  kNumeric = 5,
};

/// Flag values shared by all subcommands. Empty paths fall back to config keys.
struct Options {
  fs::path config;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  fs::path out_dir = "run";
  fs::path world_dir;
  fs::path model_dir;
  fs::path hyper_file;
  std::string sector;  // empty = every emission sector
  double p_max = 0.20;
  double p_step = 0.02;
  std::size_t trials = 0;  // 0 = search.trials from config
  bool then_grid = false;
  std::string grid_space;  // "pruned" or "table"; empty = search.grid_space
  bool clamp_nonnegative = false;
  bool quiet = false;
};

/// Loads `path`; an `include = other.cfg` line pulls in another file whose
/// keys the including file overrides.
/// Keys holding paths; relative values resolve against the file that sets them.
inline constexpr std::array<std::string_view, 4> kPathKeys = {"world_dir", "model_dir", "mortality_csv", "regions_csv"};

inline KeyValueConfig load_config(const fs::path& path, int depth = 0) {
  if (depth > 8) throw SchemaError(path.string() + ": include nesting too deep");
  auto own = KeyValueConfig::load(path);
  if (!own.has("include")) return own;
  fs::path inc = own.get("include");
  if (inc.is_relative()) inc = path.parent_path() / inc;
  auto merged = load_config(inc, depth + 1);
  for (std::string_view key : kPathKeys) {
    const std::string k(key);
    if (!merged.has(k)) continue;
    const fs::path p = merged.get(k);
    if (p.is_relative()) merged.set(k, (inc.parent_path() / p).lexically_normal().string());
  }
  for (const auto& [k, v] : own.values()) {
    if (k != "include") merged.set(k, v);
  }
  return merged;
}

/// Keys under `prefix`, with the prefix removed.
inline KeyValueConfig subconfig(const KeyValueConfig& cfg, const std::string& prefix) {
  KeyValueConfig out;
  for (const auto& [k, v] : cfg.values()) {
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  }
  return out;
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

inline std::string file_crc(const fs::path& p) {
  const auto text = read_text(p);
  return hex32(nn::crc32_of(text.data(), text.size()));
}

/// Collects everything a run reads and writes; `finish` writes manifest.json.
class Run {
 public:
  Run(std::string subcommand, const Options& opt) : subcommand_(std::move(subcommand)), opt_(opt) {
    start_ = std::chrono::steady_clock::now();
    fs::create_directories(opt.out_dir);
  }

  void input(const fs::path& p) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) inputs_[f.string()] = file_crc(f);
    } else {
      inputs_[p.string()] = file_crc(p);
    }
  }

  void config(const fs::path& p) { configs_.push_back(p.string()); input(p); }

  /// Writes `text` under the run directory and records it.
  fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = opt_.out_dir / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, text);
    outputs_.push_back(name);
    return p;
  }

  void record(const std::vector<fs::path>& written) {
    for (const auto& p : written) outputs_.push_back(fs::relative(p, opt_.out_dir).generic_string());
  }

  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    timings_.emplace_back(stage, std::chrono::duration<double>(now - last_).count());
    last_ = now;
  }

  void finish() {
    nlohmann::ordered_json j;
    j["subcommand"] = subcommand_;
    j["config_paths"] = configs_;
    j["seed"] = opt_.seed;
    j["workers"] = opt_.workers;
    nlohmann::ordered_json in = nlohmann::ordered_json::object();
    for (const auto& [k, v] : inputs_) in[k] = v;
    j["input_crc32"] = in;
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& name : outputs_) out[name] = file_crc(opt_.out_dir / name);
    j["outputs"] = out;
    nlohmann::ordered_json t = nlohmann::ordered_json::object();
    for (const auto& [k, v] : timings_) t[k] = v;
    t["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j["timings_s"] = t;
    write_text(opt_.out_dir / "manifest.json", j.dump(2) + "\n");
  }

  const std::vector<std::string>& outputs() const { return outputs_; }

 private:
  std::string subcommand_;
  Options opt_;
  std::vector<std::string> configs_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  std::vector<std::pair<std::string, double>> timings_;
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------

/// Everything the model-side subcommands need: config, world, windows,
/// weights and the split.
struct Workspace {
  KeyValueConfig cfg;
  fs::path config_dir;
  fs::path world_dir;
  World world;
  std::optional<OracleKernel> kernel;
  std::vector<GridStack> stacks;
  std::vector<StationWeight> weights;
  DatasetSplit split;
  std::map<std::string, std::size_t> index;
};

inline fs::path resolve(const KeyValueConfig& cfg, const fs::path& base, const std::string& key) {
  fs::path p = cfg.get(key);
  return p.is_relative() ? base / p : p;
}

inline KeyValueConfig read_config(const Options& opt, Run& run) {
  if (opt.config.empty()) throw SchemaError("--config is required");
  run.config(opt.config);
  return load_config(opt.config);
}

inline HyperParams model_hyper(const KeyValueConfig& cfg, const Options& opt) {
  HyperParams h = hyper_from_config(subconfig(cfg, "model."));
  if (!opt.hyper_file.empty()) h = hyper_from_config(KeyValueConfig::load(opt.hyper_file), h);
  return h;
}

inline Workspace open_workspace(const Options& opt, Run& run, KeyValueConfig cfg, std::size_t half_extent) {
  Workspace ws;
  ws.cfg = std::move(cfg);
  ws.config_dir = opt.config.parent_path();
  ws.world_dir = !opt.world_dir.empty() ? opt.world_dir : resolve(ws.cfg, ws.config_dir, "world_dir");
  run.input(ws.world_dir);
  ws.world = load_world(ws.world_dir);
  if (fs::exists(ws.world_dir / "kernel.txt")) ws.kernel = load_kernel(ws.world_dir / "kernel.txt");
  ws.stacks.resize(ws.world.stations().size());
  parallel_for(ws.stacks.size(), opt.workers,
               [&](std::size_t i) { ws.stacks[i] = make_stack(ws.world, ws.world.stations()[i], half_extent); });
  ws.weights = compute_station_weights(ws.world.stations(), ws.world.city_population());
  ws.split = split_dataset(station_ids(ws.world.stations()), static_cast<std::uint64_t>(ws.cfg.integer_or("split.seed", 1)));
  for (std::size_t i = 0; i < ws.stacks.size(); ++i) ws.index[ws.world.stations()[i].id] = i;
  run.lap("load");
  return ws;
}

inline std::vector<Sample> samples(const Workspace& ws, const std::vector<std::string>& ids) {
  std::vector<Sample> out;
  for (const auto& id : ids) {
    const std::size_t i = ws.index.at(id);
    out.push_back({&ws.stacks[i], ws.world.stations()[i].pm25, ws.weights[i].weight});
  }
  return out;
}

inline std::vector<Channel> sectors(const Options& opt) {
  if (opt.sector.empty()) return {kEmissionChannelList.begin(), kEmissionChannelList.end()};
  const auto c = parse_channel(opt.sector);
  if (!c || !is_emission(*c)) throw SchemaError("--sector must be one of RRC, IDC, IDO, SVC, TRN");
  return {*c};
}

inline fs::path model_dir(const Options& opt, const Workspace& ws) {
  return !opt.model_dir.empty() ? opt.model_dir : resolve(ws.cfg, ws.config_dir, "model_dir");
}

/// Loads the trained model and the windows at its half extent.
inline std::pair<ResCnn, Workspace> open_model(const Options& opt, Run& run) {
  auto cfg = read_config(opt, run);
  const fs::path mdir = !opt.model_dir.empty() ? opt.model_dir : resolve(cfg, opt.config.parent_path(), "model_dir");
  run.input(mdir / "model.ckpt");
  run.input(mdir / "model.txt");
  ResCnn model = load_model(mdir);
  Workspace ws = open_workspace(opt, run, std::move(cfg), static_cast<std::size_t>(model.hyper().half_extent));
  return {std::move(model), std::move(ws)};
}

inline HealthConfig health(const Workspace& ws, Run& run) {
  auto h = health_config_from(ws.cfg, ws.config_dir);
  run.input(resolve(ws.cfg, ws.config_dir, "mortality_csv"));
  return h;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int gen_world(const Options& opt) {
  Run run("gen-world", opt);
  const auto cfg = read_config(opt, run);
  const WorldSpec spec = world_spec_from(cfg);
  const OracleKernel kernel = kernel_from_config(cfg, "kernel.");
  const auto sw = generate_world(opt.seed, spec, kernel);
  run.lap("generate");
  run.record(save_synthetic(sw, opt.out_dir));
  run.lap("write");
  run.finish();
  if (!opt.quiet) {
    std::cout << "world " << spec.rows << "x" << spec.cols << ", " << sw.world.stations().size() << " stations -> "
              << opt.out_dir.string() << "\n";
  }
  return kOk;
}

inline std::string split_csv_text(const Workspace& ws) {
  std::string out = "station_id,split\n";
  for (const auto& id : ws.split.train) out += id + ",train\n";
  for (const auto& id : ws.split.validation) out += id + ",validation\n";
  for (const auto& id : ws.split.test) out += id + ",test\n";
  return out;
}

inline std::string metrics_text(const ResCnn& model, const Workspace& ws) {
  const auto tr = samples(ws, ws.split.train), va = samples(ws, ws.split.validation), te = samples(ws, ws.split.test);
  return metrics_csv_header() + metrics_csv_row(evaluate(model, tr, "train")) +
         metrics_csv_row(evaluate(model, va, "validation")) + metrics_csv_row(evaluate(model, te, "test"));
}

inline int train_cmd(const Options& opt) {
  Run run("train", opt);
  auto cfg = read_config(opt, run);
  if (!opt.hyper_file.empty()) run.input(opt.hyper_file);
  const HyperParams hyper = model_hyper(cfg, opt);
  try {
    validate(hyper);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  Workspace ws = open_workspace(opt, run, cfg, static_cast<std::size_t>(hyper.half_extent));
  const auto tr = samples(ws, ws.split.train);
  ResCnn model = build_model(hyper, nn::mix_seed(opt.seed, 0x30DE1));
  TrainOptions to;
  to.seed = opt.seed;
  to.report_interval = static_cast<int>(cfg.integer_or("train.report_interval", 0));
  const auto result = train(model, tr, to);
  run.lap("train");
  run.record(save_model(model, opt.out_dir / "model"));
  std::string trace = "epoch,train_loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    trace += std::to_string(e + 1) + "," + format_double(result.epoch_loss[e]) + "\n";
  }
  run.write("loss_trace.csv", trace);
  std::string eval = "epoch,eval_wmse\n";
  for (const auto& [e, l] : result.eval_loss) eval += std::to_string(e) + "," + format_double(l) + "\n";
  run.write("eval_loss.csv", eval);
  run.write("split.csv", split_csv_text(ws));
  const std::string metrics = metrics_text(model, ws);
  run.write("metrics.csv", metrics);
  run.lap("evaluate");
  run.finish();
  if (!opt.quiet) std::cout << metrics;
  return kOk;
}

/// Trains on the training split and scores weighted MSE on validation.
inline TrialEvaluator trial_evaluator(const Workspace& ws) {
  return [&ws](const HyperParams& h, std::uint64_t seed) {
    validate(h);
    if (static_cast<std::size_t>(h.half_extent) != ws.stacks.front().half_extent) {
      throw ShapeError("trial half_extent differs from the prepared windows");
    }
    const auto tr = samples(ws, ws.split.train), va = samples(ws, ws.split.validation);
    ResCnn model = build_model(h, nn::mix_seed(seed, 0x30DE1));
    TrainOptions to;
    to.seed = seed;
    train(model, tr, to);
    return weighted_mse(model, va);
  };
}

inline int search_cmd(const Options& opt) {
  Run run("search", opt);
  auto cfg = read_config(opt, run);
  const HyperParams base = model_hyper(cfg, opt);
  Workspace ws = open_workspace(opt, run, cfg, static_cast<std::size_t>(base.half_extent));
  const SearchSpace space = space_from_config(cfg, full_search_space(cfg.boolean_or("search.learning_rate", false)));
  const std::size_t n = opt.trials ? opt.trials : static_cast<std::size_t>(cfg.integer_or("search.trials", 400));
  const auto evaluate_trial = trial_evaluator(ws);

  auto trials = random_search(space, n, base, opt.seed, evaluate_trial, opt.workers);
  run.lap("random");
  std::string log = trial_log_header();
  for (const auto& t : trials) log += trial_log_row(t);

  const TrialRecord* best = nullptr;
  for (const auto& t : trials) {
    if (std::isfinite(t.score) && (!best || t.score < best->score)) best = &t;
  }
  HyperParams winner = best ? best->hyper : base;

  if (opt.then_grid || cfg.boolean_or("search.then_grid", false)) {
    PruneRule rule;
    rule.delta_rel = cfg.number_or("search.delta_rel", rule.delta_rel);
    rule.delta_abs = cfg.number_or("search.delta_abs", rule.delta_abs);
    rule.kappa = cfg.number_or("search.kappa", rule.kappa);
    const std::string which = !opt.grid_space.empty() ? opt.grid_space : cfg.get_or("search.grid_space", "pruned");
    SearchSpace grid_space;
    if (which == "pruned") {
      grid_space = prune_space(trials, space, rule);
    } else if (which == "table") {
      grid_space = pruned_search_space();
    } else {
      throw SchemaError("grid space must be 'pruned' or 'table', got '" + which + "'");
    }
    run.write("grid_space.txt", space_to_text(grid_space));
    const auto grid = grid_search(grid_space, base, opt.seed, evaluate_trial, opt.workers, trials.size());
    run.lap("grid");
    for (const auto& t : grid.trials) log += trial_log_row(t);
    std::string board = trial_log_header();
    for (const auto& t : grid.leaderboard) board += trial_log_row(t);
    run.write("leaderboard.csv", board);
    winner = grid.best;
  }
  run.write("trials.csv", log);
  run.write("best_hyper.txt", hyper_to_text(winner));
  run.finish();
  if (!opt.quiet) std::cout << "best:\n" << hyper_to_text(winner);
  return kOk;
}

inline int evaluate_cmd(const Options& opt) {
  Run run("evaluate", opt);
  auto [model, ws] = open_model(opt, run);
  std::string pred = "station_id,split,pm25_ugm3,predicted_ugm3,weight\n";
  auto add = [&](const std::vector<std::string>& ids, const char* tag) {
    for (const auto& id : ids) {
      const std::size_t i = ws.index.at(id);
      pred += id + "," + tag + "," + format_double(ws.world.stations()[i].pm25) + "," +
              format_double(predict(model, ws.stacks[i]).value) + "," + format_double(ws.weights[i].weight) + "\n";
    }
  };
  add(ws.split.train, "train");
  add(ws.split.validation, "validation");
  add(ws.split.test, "test");
  run.write("predictions.csv", pred);
  const std::string metrics = metrics_text(model, ws);
  run.write("metrics.csv", metrics);
  run.lap("evaluate");
  run.finish();
  if (!opt.quiet) std::cout << metrics;
  return kOk;
}

inline std::vector<double> weight_vector(const Workspace& ws) {
  std::vector<double> w;
  for (const auto& s : ws.weights) w.push_back(s.weight);
  return w;
}

inline int scenario_sweep_cmd(const Options& opt) {
  Run run("scenario-sweep", opt);
  auto [model, ws] = open_model(opt, run);
  const auto h = health(ws, run);
  auto hd = h;
  hd.deaths.seed = opt.seed;
  const auto pop = station_age_population(ws.world, hd);
  const auto fractions = sweep_fractions(opt.p_max, opt.p_step);
  const auto w = weight_vector(ws);
  for (Channel c : sectors(opt)) {
    const auto rows = curtailment_sweep(model, ws.stacks, c, fractions, w, pop, hd, opt.workers);
    std::string out = "p,weighted_pm25_ugm3,avoided_deaths,deaths_low,deaths_high\n";
    for (const auto& r : rows) {
      out += format_double(r.p) + "," + format_double(r.weighted_concentration) + "," + format_double(r.deaths.mean) +
             "," + format_double(r.deaths.low) + "," + format_double(r.deaths.high) + "\n";
    }
    run.write("sweep_" + std::string(channel_name(c)) + ".csv", out);
    if (!opt.quiet) std::cout << channel_name(c) << ": " << rows.size() << " fractions\n";
  }
  run.lap("sweep");
  run.finish();
  return kOk;
}

inline std::string field_csv(const DamageField& f) {
  std::string out = "row,col,sector,md_usd_per_tco2\n";
  const std::string name(channel_name(f.sector));
  for (std::size_t r = 0; r < f.rows; ++r) {
    for (std::size_t c = 0; c < f.cols; ++c) {
      out += std::to_string(r) + "," + std::to_string(c) + "," + name + "," +
             (f.covered(r, c) ? format_double(f.at(r, c)) : std::string("no_coverage")) + "\n";
    }
  }
  return out;
}

struct FieldStats {
  std::size_t covered = 0;
  double mean = 0.0;
  double sd = 0.0;
};

inline FieldStats field_stats(const DamageField& f) {
  FieldStats s;
  for (std::size_t i = 0; i < f.md.size(); ++i) {
    if (f.coverage[i]) {
      ++s.covered;
      s.mean += f.md[i];
    }
  }
  if (s.covered == 0) return s;
  s.mean /= static_cast<double>(s.covered);
  for (std::size_t i = 0; i < f.md.size(); ++i) {
    if (f.coverage[i]) s.sd += (f.md[i] - s.mean) * (f.md[i] - s.mean);
  }
  s.sd = std::sqrt(s.sd / static_cast<double>(s.covered));
  return s;
}

/// Pearson correlation of two fields over cells both cover.
inline double field_correlation(const DamageField& a, const DamageField& b) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.md.size(); ++i) {
    if (a.coverage[i] && b.coverage[i]) {
      x.push_back(a.md[i]);
      y.push_back(b.md[i]);
    }
  }
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : std::numeric_limits<double>::quiet_NaN();
}

inline int md_map_cmd(const Options& opt) {
  Run run("md-map", opt);
  auto [model, ws] = open_model(opt, run);
  const auto h = health(ws, run);
  const auto pop = station_age_population(ws.world, h);
  const auto responses = model_responses(model, ws.stacks, opt.workers);
  std::optional<std::vector<StationResponse>> oracle;
  if (ws.kernel) oracle = oracle_responses(ws.world, ws.stacks, *ws.kernel);
  run.lap("gradients");
  std::string summary = "sector,covered_cells,uncovered_cells,negative_cells,mean_usd_per_tco2,sd_usd_per_tco2";
  summary += oracle ? ",oracle_correlation\n" : "\n";
  for (Channel c : sectors(opt)) {
    const std::string name(channel_name(c));
    const auto raw = marginal_damage_field(ws.world, ws.stacks, responses, pop, h, c);
    const auto field = opt.clamp_nonnegative ? raw.clamped_nonnegative() : raw;
    run.write("md_" + name + ".csv", field_csv(field));
    const auto st = field_stats(field);
    summary += name + "," + std::to_string(st.covered) + "," + std::to_string(raw.uncovered_cells()) + "," +
               std::to_string(raw.negative_cells()) + "," + format_double(st.mean) + "," + format_double(st.sd);
    if (oracle) {
      const auto of = marginal_damage_field(ws.world, ws.stacks, *oracle, pop, h, c);
      run.write("oracle_md_" + name + ".csv", field_csv(of));
      summary += "," + format_double(field_correlation(raw, of));
    }
    summary += "\n";
  }
  run.write("md_summary.csv", summary);
  run.lap("fields");
  run.finish();
  if (!opt.quiet) std::cout << summary;
  return kOk;
}

inline std::optional<RegionMap> regions(const Workspace& ws, Run& run) {
  fs::path p;
  if (ws.cfg.has("regions_csv")) p = resolve(ws.cfg, ws.config_dir, "regions_csv");
  else if (fs::exists(ws.world_dir / "regions.csv")) p = ws.world_dir / "regions.csv";
  else return std::nullopt;
  run.input(p);
  return RegionMap::load(p, ws.world.rows(), ws.world.cols());
}

inline int total_damage_cmd(const Options& opt) {
  Run run("total-damage", opt);
  auto [model, ws] = open_model(opt, run);
  const auto h = health(ws, run);
  const auto rmap = regions(ws, run);
  const auto pop = station_age_population(ws.world, h);
  const auto responses = model_responses(model, ws.stacks, opt.workers);
  run.lap("gradients");
  std::string out = "sector,region,damage_usd_per_year\n";
  std::string notes = "sector,unmapped_cells,uncovered_cells\n";
  for (Channel c : sectors(opt)) {
    const std::string name(channel_name(c));
    auto field = marginal_damage_field(ws.world, ws.stacks, responses, pop, h, c);
    if (opt.clamp_nonnegative) field = field.clamped_nonnegative();
    const auto s = total_damage(field, ws.world, rmap ? &*rmap : nullptr);
    for (const auto& [region, v] : s.by_region) out += name + "," + region + "," + format_double(v) + "\n";
    out += name + ",total," + format_double(s.total) + "\n";
    notes += name + "," + std::to_string(s.unmapped_cells) + "," + std::to_string(s.uncovered_cells) + "\n";
  }
  run.write("total_damage.csv", out);
  run.write("coverage.csv", notes);
  run.lap("totals");
  run.finish();
  if (!opt.quiet) std::cout << out;
  return kOk;
}

inline std::vector<double> default_edges(const World& w, std::size_t half_extent) {
  std::vector<double> e;
  for (std::size_t r = 0; r <= half_extent; ++r) e.push_back(static_cast<double>(2 * r + 1) * w.cell_km());
  return e;
}

inline int distance_curve_cmd(const Options& opt) {
  Run run("distance-curve", opt);
  auto [model, ws] = open_model(opt, run);
  const auto h = health(ws, run);
  const auto pop = station_age_population(ws.world, h);
  const std::size_t half = static_cast<std::size_t>(model.hyper().half_extent);
  const auto edges = ws.cfg.has("distance.edges_km") ? ws.cfg.numbers("distance.edges_km") : default_edges(ws.world, half);
  const auto radii = radii_for_edges(edges, ws.world.cell_km(), half);
  const auto responses = model_responses(model, ws.stacks, opt.workers);
  std::optional<std::vector<StationResponse>> oracle;
  if (ws.kernel) oracle = oracle_responses(ws.world, ws.stacks, *ws.kernel);
  run.lap("gradients");
  for (Channel c : sectors(opt)) {
    const std::string name(channel_name(c));
    const auto curve = damage_by_distance(ws.world, ws.stacks, responses, pop, h, c, radii);
    std::optional<std::vector<DistancePoint>> ocurve;
    if (oracle) ocurve = damage_by_distance(ws.world, ws.stacks, *oracle, pop, h, c, radii);
    std::string out = "edge_km,radius_cells,damage_usd_per_year";
    out += ocurve ? ",oracle_damage_usd_per_year\n" : "\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
      out += format_double(curve[i].edge_km) + "," + std::to_string(curve[i].radius) + "," +
             format_double(curve[i].total);
      if (ocurve) out += "," + format_double((*ocurve)[i].total);
      out += "\n";
    }
    run.write("distance_" + name + ".csv", out);
  }
  run.lap("curves");
  run.finish();
  if (!opt.quiet) std::cout << "distance curves for " << sectors(opt).size() << " sector(s)\n";
  return kOk;
}

/// Runs `fn` and maps exceptions to exit codes.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const MissingFileError& e) {
    std::cerr << "error: missing file: " << e.what() << "\n";
    return kMissingFile;
  } catch (const SchemaError& e) {
    std::cerr << "error: schema: " << e.what() << "\n";
    return kSchema;
  } catch (const nn::CheckpointError& e) {
    std::cerr << "error: schema: " << e.what() << "\n";
    return kSchema;
  } catch (const nn::ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return kShape;
  } catch (const DomainError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return kNumeric;
  } catch (const nn::NonFiniteError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return kNumeric;
  } catch (const TrainingError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}

}  // namespace cobenefit::app

#endif  // COBENEFIT_APP_HPP
