#include <CLI11.hpp>

#include "cobenefit/app.hpp"

namespace app = cobenefit::app;

int main(int argc, char** argv) {
  CLI::App cli{"PM2.5 surrogate model and health co-benefit workflows"};
  cli.require_subcommand(1);
  app::Options opt;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "key = value config file")->required();
    sub->add_option("--seed", opt.seed, "seed for generation, training, search and draws");
    sub->add_option("--workers", opt.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out-dir", opt.out_dir, "run directory");
    sub->add_flag("--quiet", opt.quiet, "no stdout report");
  };
  auto world = [&](CLI::App* sub) { sub->add_option("--world", opt.world_dir, "world directory (overrides world_dir)"); };
  auto model = [&](CLI::App* sub) { sub->add_option("--model", opt.model_dir, "model directory (overrides model_dir)"); };
  auto sector = [&](CLI::App* sub) {
    sub->add_option("--sector", opt.sector, "RRC, IDC, IDO, SVC or TRN; default all five");
  };

  auto* gen = cli.add_subcommand("gen-world", "generate a synthetic oracle world");
  common(gen);

  auto* tr = cli.add_subcommand("train", "train a model on the world's training split");
  common(tr);
  world(tr);
  tr->add_option("--hyper", opt.hyper_file, "hyperparameter file, e.g. best_hyper.txt from search");

  auto* se = cli.add_subcommand("search", "random search, optionally followed by prune and grid search");
  common(se);
  world(se);
  se->add_option("--hyper", opt.hyper_file, "base hyperparameter file");
  se->add_option("--trials", opt.trials, "random trials (default search.trials)");
  se->add_flag("--then-grid", opt.then_grid, "prune the space and grid-search it");
  se->add_option("--grid-space", opt.grid_space, "pruned (from the random trials) or table (fixed 384-combination space)")
      ->check(CLI::IsMember({"pruned", "table"}));

  auto* ev = cli.add_subcommand("evaluate", "metrics for train, validation and test");
  common(ev);
  world(ev);
  model(ev);

  auto* sw = cli.add_subcommand("scenario-sweep", "avoided deaths under uniform curtailment of one sector");
  common(sw);
  world(sw);
  model(sw);
  sector(sw);
  sw->add_option("--p-max", opt.p_max, "largest curtailment fraction");
  sw->add_option("--p-step", opt.p_step, "fraction step");

  auto* md = cli.add_subcommand("md-map", "marginal damage per tCO2 on the grid");
  common(md);
  world(md);
  model(md);
  sector(md);
  md->add_flag("--clamp-nonnegative", opt.clamp_nonnegative, "report negative marginal damages as zero");

  auto* td = cli.add_subcommand("total-damage", "total damage by sector and region");
  common(td);
  world(td);
  model(td);
  sector(td);
  td->add_flag("--clamp-nonnegative", opt.clamp_nonnegative, "clamp marginal damages at zero before summing");

  auto* dc = cli.add_subcommand("distance-curve", "total damage against window edge length");
  common(dc);
  world(dc);
  model(dc);
  sector(dc);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : app::kOther;
  }

  return app::guarded([&] {
    if (*gen) return app::gen_world(opt);
    if (*tr) return app::train_cmd(opt);
    if (*se) return app::search_cmd(opt);
    if (*ev) return app::evaluate_cmd(opt);
    if (*sw) return app::scenario_sweep_cmd(opt);
    if (*md) return app::md_map_cmd(opt);
    if (*td) return app::total_damage_cmd(opt);
    return app::distance_curve_cmd(opt);
  });
}
