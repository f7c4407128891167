#ifndef COBENEFIT_SEARCH_HPP
#define COBENEFIT_SEARCH_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cobenefit/io.hpp"
#include "cobenefit/nn/random.hpp"
#include "cobenefit/rescnn.hpp"

namespace cobenefit {

struct SearchDimension {
  std::string name;  // a HyperParams field (see hyper_field_names())
  std::vector<double> values;
};

/// Ordered candidate lists; the order defines grid enumeration order.
struct SearchSpace {
  std::vector<SearchDimension> dims;

  std::size_t cardinality() const {
    std::size_t n = 1;
    for (const auto& d : dims) n *= d.values.size();
    return n;
  }

  const SearchDimension* find(const std::string& name) const {
    for (const auto& d : dims) {
      if (d.name == name) return &d;
    }
    return nullptr;
  }

  bool contains(const HyperParams& h) const {
    for (const auto& d : dims) {
      const double v = get_field(h, d.name);
      if (std::none_of(d.values.begin(), d.values.end(), [&](double x) { return x == v; })) return false;
    }
    return true;
  }
};

/// The full random-search space. Learning rate is held at its default
/// unless `with_learning_rate` adds it as an extra dimension.
inline SearchSpace full_search_space(bool with_learning_rate = false) {
  SearchSpace s{{
      {"iterations", {100, 300, 500}},
      {"batch_size", {20, 50, 100, 200}},
      {"conv_layers", {1, 2, 3, 4, 5}},
      {"filters", {20, 50, 80, 100}},
      {"conv_kernel", {2, 3, 4, 5, 6}},
      {"conv_stride", {1, 2}},
      {"pool_kernel", {2, 3, 4, 5, 6}},
      {"pool_stride", {1, 2}},
      {"dropout", {1, 0}},
      {"dropout_rate", {0.0, 0.1, 0.2, 0.5}},
      {"batchnorm", {1, 0}},
      {"fc_layers", {1, 2, 3}},
      {"fc_width", {50, 100, 200}},
      {"augmentation", {1, 0}},
      {"augmentation_eps", {0.05, 0.1, 0.2}},
  }};
  if (with_learning_rate) s.dims.push_back({"learning_rate", {1e-2, 1e-3, 1e-4}});
  return s;
}

/// The pruned space used for the exhaustive grid (384 combinations).
inline SearchSpace pruned_search_space() {
  return SearchSpace{{
      {"iterations", {500}},
      {"batch_size", {200}},
      {"conv_layers", {1, 2}},
      {"filters", {20, 50, 80}},
      {"conv_kernel", {2, 3}},
      {"conv_stride", {2}},
      {"pool_kernel", {2}},
      {"pool_stride", {2}},
      {"dropout", {1, 0}},
      {"dropout_rate", {0.1}},
      {"batchnorm", {1, 0}},
      {"fc_layers", {1, 2}},
      {"fc_width", {200}},
      {"augmentation", {1, 0}},
      {"augmentation_eps", {0.05, 0.1}},
  }};
}

inline std::string space_to_text(const SearchSpace& s) {
  std::string out;
  for (const auto& d : s.dims) {
    out += d.name + " = ";
    for (std::size_t i = 0; i < d.values.size(); ++i) out += (i ? "," : "") + format_double(d.values[i]);
    out += "\n";
  }
  return out;
}

/// Reads `space.<field> = v1,v2,...` keys; dimension order follows
/// hyper_field_names().
inline SearchSpace space_from_config(const KeyValueConfig& cfg, const SearchSpace& fallback) {
  SearchSpace s;
  for (const auto& name : hyper_field_names()) {
    if (cfg.has("space." + name)) s.dims.push_back({name, cfg.numbers("space." + name)});
  }
  return s.dims.empty() ? fallback : s;
}

// ---------------------------------------------------------------------------

enum class TrialStatus { kOk, kFailed };

struct TrialRecord {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  HyperParams hyper;
  double score = std::numeric_limits<double>::infinity();  // validation weighted MSE
  TrialStatus status = TrialStatus::kOk;
  std::string message;
  std::string phase;  // "random" or "grid"
};

/// Scores one hyperparameter setting (validation weighted MSE). May throw;
/// exceptions mark the trial failed with score +inf.
using TrialEvaluator = std::function<double(const HyperParams&, std::uint64_t seed)>;

/// Runs `evaluate` on every trial using up to `workers` threads. Each trial
/// owns its seed, so results do not depend on scheduling.
inline void run_trials(std::vector<TrialRecord>& trials, const TrialEvaluator& evaluate, unsigned workers) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < trials.size(); i = next++) {
      TrialRecord& t = trials[i];
      try {
        t.score = evaluate(t.hyper, t.seed);
        if (!std::isfinite(t.score)) {
          t.status = TrialStatus::kFailed;
          t.message = "non-finite score";
          t.score = std::numeric_limits<double>::infinity();
        }
      } catch (const std::exception& e) {
        t.status = TrialStatus::kFailed;
        t.message = e.what();
        t.score = std::numeric_limits<double>::infinity();
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(trials.size())));
  if (workers == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

/// Samples `n_trials` settings, each dimension i.i.d. uniform over its
/// values, on top of `base`.
inline std::vector<TrialRecord> sample_trials(const SearchSpace& space, std::size_t n_trials, const HyperParams& base,
                                              std::uint64_t seed) {
  std::vector<TrialRecord> trials(n_trials);
  nn::Rng rng(nn::mix_seed(seed, 0x4A2D));
  for (std::size_t t = 0; t < n_trials; ++t) {
    trials[t].id = t;
    trials[t].seed = nn::mix_seed(seed, t);
    trials[t].hyper = base;
    trials[t].phase = "random";
    for (const auto& d : space.dims) set_field(trials[t].hyper, d.name, d.values[rng.below(d.values.size())]);
  }
  return trials;
}

inline std::vector<TrialRecord> random_search(const SearchSpace& space, std::size_t n_trials, const HyperParams& base,
                                              std::uint64_t seed, const TrialEvaluator& evaluate,
                                              unsigned workers = 1) {
  if (n_trials == 0) throw std::invalid_argument("random_search: n_trials must be >= 1");
  auto trials = sample_trials(space, n_trials, base, seed);
  run_trials(trials, evaluate, workers);
  return trials;
}

struct PruneRule {
  double delta_rel = 0.05;  // margin as a fraction of the dimension-best mean
  double delta_abs = -1.0;  // when >= 0, overrides delta_rel
  double kappa = 2.0;       // variance ratio bound
};

struct ValueStats {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
};

/// Score used in pruning statistics for a failed trial: twice the worst
/// finite score seen, or +inf when no trial succeeded.
inline double failure_score(const std::vector<TrialRecord>& trials) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& t : trials) {
    if (std::isfinite(t.score)) worst = std::max(worst, t.score);
  }
  return std::isfinite(worst) ? worst + std::abs(worst) : std::numeric_limits<double>::infinity();
}

inline ValueStats value_stats(const std::vector<TrialRecord>& trials, const std::string& dim, double value,
                              double failed_score = std::numeric_limits<double>::infinity()) {
  ValueStats st;
  std::vector<double> scores;
  for (const auto& t : trials) {
    if (get_field(t.hyper, dim) == value) scores.push_back(std::isfinite(t.score) ? t.score : failed_score);
  }
  st.count = scores.size();
  if (scores.empty()) return st;
  if (std::any_of(scores.begin(), scores.end(), [](double s) { return !std::isfinite(s); })) {
    st.mean = st.variance = std::numeric_limits<double>::infinity();
    return st;
  }
  for (double s : scores) st.mean += s;
  st.mean /= static_cast<double>(scores.size());
  for (double s : scores) st.variance += (s - st.mean) * (s - st.mean);
  st.variance /= static_cast<double>(scores.size());
  return st;
}

/// For each dimension, drops values whose mean validation score is worse
/// than the dimension-best mean by more than delta, or whose score
/// variance exceeds kappa times the best value's variance. Values never
/// sampled are kept. At least the best value always survives. Failed
/// trials enter the statistics with failure_score().
inline SearchSpace prune_space(const std::vector<TrialRecord>& trials, const SearchSpace& space,
                               const PruneRule& rule = {}) {
  SearchSpace out;
  const double failed = failure_score(trials);
  for (const auto& d : space.dims) {
    if (d.values.size() < 2) {
      out.dims.push_back(d);
      continue;
    }
    std::vector<ValueStats> stats;
    for (double v : d.values) stats.push_back(value_stats(trials, d.name, v, failed));
    std::size_t best = d.values.size();
    for (std::size_t i = 0; i < stats.size(); ++i) {
      if (stats[i].count == 0) continue;
      if (best == d.values.size() || stats[i].mean < stats[best].mean) best = i;
    }
    if (best == d.values.size()) {
      out.dims.push_back(d);
      continue;
    }
    const double best_mean = stats[best].mean;
    const double delta = rule.delta_abs >= 0 ? rule.delta_abs : rule.delta_rel * std::abs(best_mean);
    SearchDimension kept{d.name, {}};
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      const auto& st = stats[i];
      const bool keep = i == best || st.count == 0 ||
                        (st.mean <= best_mean + delta && st.variance <= rule.kappa * stats[best].variance);
      if (keep) kept.values.push_back(d.values[i]);
    }
    if (kept.values.empty()) kept.values.push_back(d.values[best]);
    out.dims.push_back(std::move(kept));
  }
  return out;
}

/// Every combination of `space` on top of `base`, in lexicographic order
/// (first dimension most significant, values in listed order).
inline std::vector<HyperParams> enumerate_grid(const SearchSpace& space, const HyperParams& base) {
  std::vector<HyperParams> out;
  const std::size_t total = space.cardinality();
  out.reserve(total);
  std::vector<std::size_t> idx(space.dims.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    HyperParams h = base;
    for (std::size_t d = 0; d < space.dims.size(); ++d) set_field(h, space.dims[d].name, space.dims[d].values[idx[d]]);
    out.push_back(h);
    for (std::size_t d = space.dims.size(); d-- > 0;) {
      if (++idx[d] < space.dims[d].values.size()) break;
      idx[d] = 0;
    }
  }
  return out;
}

struct GridResult {
  HyperParams best;
  std::vector<TrialRecord> leaderboard;  // sorted by (score, enumeration order)
  std::vector<TrialRecord> trials;       // enumeration order
};

/// Exhaustive search; the winner minimizes the validation score with ties
/// going to the lexicographically first combination.
inline GridResult grid_search(const SearchSpace& space, const HyperParams& base, std::uint64_t seed,
                              const TrialEvaluator& evaluate, unsigned workers = 1, std::size_t first_id = 0) {
  GridResult r;
  const auto combos = enumerate_grid(space, base);
  r.trials.resize(combos.size());
  for (std::size_t i = 0; i < combos.size(); ++i) {
    r.trials[i].id = first_id + i;
    r.trials[i].seed = nn::mix_seed(seed, 0x6B1D0000ULL + i);
    r.trials[i].hyper = combos[i];
    r.trials[i].phase = "grid";
  }
  run_trials(r.trials, evaluate, workers);
  r.leaderboard = r.trials;
  std::stable_sort(r.leaderboard.begin(), r.leaderboard.end(),
                   [](const TrialRecord& a, const TrialRecord& b) { return a.score < b.score; });
  if (r.leaderboard.empty()) throw std::invalid_argument("grid_search: empty space");
  r.best = r.leaderboard.front().hyper;
  return r;
}

// ---------------------------------------------------------------------------
// Trial log: trial_id,seed,hyperparams_json,val_wmse,status

inline nlohmann::ordered_json hyper_to_json(const HyperParams& h) {
  nlohmann::ordered_json j;
  j["iterations"] = h.iterations;
  j["batch_size"] = h.batch_size;
  j["conv_layers"] = h.conv_layers;
  j["filters"] = h.filters;
  j["conv_kernel"] = h.conv_kernel;
  j["conv_stride"] = h.conv_stride;
  j["pool_kernel"] = h.pool_kernel;
  j["pool_stride"] = h.pool_stride;
  j["dropout"] = h.dropout;
  j["dropout_rate"] = h.dropout_rate;
  j["batchnorm"] = h.batchnorm;
  j["fc_layers"] = h.fc_layers;
  j["fc_width"] = h.fc_width;
  j["augmentation"] = h.augmentation;
  j["augmentation_eps"] = h.augmentation_eps;
  j["learning_rate"] = h.learning_rate;
  j["half_extent"] = h.half_extent;
  j["cnn_enabled"] = h.cnn_enabled;
  return j;
}

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

inline std::string trial_log_header() { return "trial_id,seed,hyperparams_json,val_wmse,status\n"; }

inline std::string trial_log_row(const TrialRecord& t) {
  std::string status = t.status == TrialStatus::kOk ? t.phase + ":ok" : t.phase + ":failed";
  return std::to_string(t.id) + "," + std::to_string(t.seed) + "," + csv_quote(hyper_to_json(t.hyper).dump()) + "," +
         (t.status == TrialStatus::kOk ? format_double(t.score) : std::string("inf")) + "," + status + "\n";
}

}  // namespace cobenefit

#endif  // COBENEFIT_SEARCH_HPP
