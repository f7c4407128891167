#ifndef COBENEFIT_TEST_FIXTURES_HPP
#define COBENEFIT_TEST_FIXTURES_HPP

#include <filesystem>
#include <string>

#include "cobenefit/synthetic.hpp"
#include "cobenefit/train.hpp"

namespace fixtures {

/// Small oracle world that trains in a second or two.
inline cobenefit::WorldSpec small_spec() {
  cobenefit::WorldSpec s;
  s.rows = 24;
  s.cols = 24;
  s.n_stations = 60;
  s.n_clusters = 2;
  s.cluster_radius_cells = 3;
  s.city_block = 4;
  return s;
}

inline cobenefit::OracleKernel small_kernel() {
  cobenefit::OracleKernel k;
  k.beta = {1.5e-4, 4e-5, 1e-4, 3e-4, 1.5e-4};
  k.lambda_km = 40;
  k.geo = {-0.002, 0.3, -0.003};
  k.intercept = 10;
  k.cutoff_cells = 6;
  return k;
}

/// Small CNN that fits a 9x9 window.
inline cobenefit::HyperParams small_hyper() {
  cobenefit::HyperParams h;
  h.half_extent = 4;
  h.iterations = 60;
  h.batch_size = 20;
  h.filters = 3;
  h.conv_kernel = 2;
  h.conv_stride = 2;
  h.fc_width = 6;
  h.learning_rate = 0.01;
  return h;
}

inline cobenefit::TrainOptions seeded(std::uint64_t seed) {
  cobenefit::TrainOptions o;
  o.seed = seed;
  return o;
}

/// World, normalized windows and weighted samples for every station.
struct Setup {
  cobenefit::SyntheticWorld sw;
  std::vector<cobenefit::GridStack> stacks;
  std::vector<double> weights;
  std::vector<cobenefit::Sample> samples;
};

inline Setup make_setup(std::uint64_t seed, std::size_t half_extent = 4,
                        const cobenefit::WorldSpec& spec = small_spec()) {
  Setup s;
  s.sw = cobenefit::generate_world(seed, spec, small_kernel());
  const auto& w = s.sw.world;
  for (const auto& st : w.stations()) s.stacks.push_back(cobenefit::make_stack(w, st, half_extent));
  for (const auto& sw : cobenefit::compute_station_weights(w.stations(), w.city_population())) {
    s.weights.push_back(sw.weight);
  }
  for (std::size_t i = 0; i < s.stacks.size(); ++i) {
    s.samples.push_back({&s.stacks[i], w.stations()[i].pm25, s.weights[i]});
  }
  return s;
}

/// Fresh directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cobenefit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::vector<double> vec(const cobenefit::nn::Tensor& t) { return {t.data(), t.data() + t.size()}; }

inline std::string slurp(const std::filesystem::path& p) { return cobenefit::read_text(p); }

}  // namespace fixtures

#endif
