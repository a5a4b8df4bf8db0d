// Command-line harness around the library: single runs, sweeps, checkpoint
// evaluation, and sampling plans. Every experiment is reproducible from its
// config and base seed alone; outputs are JSONL records, CSV summaries, and
// binary checkpoints.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eprop/eprop.hpp"

namespace {

using namespace eprop;

// One slot per overridable config field; only flags the user actually passed
// are copied over whatever the config file provided.
struct CliValues {
  std::string config;
  std::string dataset;
  std::string data_dir;
  std::vector<int> layers;
  double beta = 0.0, eta = 0.0, gamma = 0.0, sigma = 0.0, threshold = 0.0;
  int steps = 0, batch = 0, samples = 0, jobs = 0, trials = 0;
  std::int64_t iters = 0, eval_interval = 0, eval_chunk = 0;
  std::uint64_t seed = 0;
  std::vector<double> sigmas, grid_betas, grid_eta_effs;
  std::vector<int> sample_counts;
  std::string out = "out";
};

void add_common_flags(CLI::App* cmd, CliValues& v) {
  cmd->add_option("--config", v.config, "JSON config file; explicit flags override its values")
      ->check(CLI::ExistingFile);
  cmd->add_option("--dataset", v.dataset, "dataset name under the data root");
  cmd->add_option("--data-dir", v.data_dir, "data root (default: $EPROP_DATA_DIR)");
  cmd->add_option("--layers", v.layers, "layer widths, doubled input first")->delimiter(',');
  cmd->add_option("--beta", v.beta, "nudge strength");
  cmd->add_option("--eta", v.eta, "learning rate");
  cmd->add_option("--gamma", v.gamma, "input amplification");
  cmd->add_option("--steps", v.steps, "relaxation sweeps per phase");
  cmd->add_option("--batch", v.batch, "examples per update");
  cmd->add_option("--iters", v.iters, "training iterations");
  cmd->add_option("--sigma", v.sigma, "measurement uncertainty");
  cmd->add_option("--samples", v.samples, "measurements averaged per attractor state");
  cmd->add_option("--seed", v.seed, "base seed");
  cmd->add_option("--threshold", v.threshold, "convergence threshold (0: per-dataset default)");
  cmd->add_option("--eval-interval", v.eval_interval, "iterations between test evaluations");
  cmd->add_option("--eval-chunk", v.eval_chunk, "test examples relaxed per evaluation batch");
  cmd->add_option("--jobs", v.jobs, "concurrent trials");
  cmd->add_option("--trials", v.trials, "trials per sweep cell");
  cmd->add_option("--out", v.out, "output directory");
}

ExperimentConfig build_config(const CLI::App* cmd, const CliValues& v) {
  ExperimentConfig cfg;
  if (cmd->count("--config")) cfg = load_config(v.config);
  const auto passed = [&](const char* name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (passed("--dataset")) cfg.dataset = v.dataset;
  if (passed("--data-dir")) cfg.data_dir = v.data_dir;
  if (passed("--layers")) cfg.layers = v.layers;
  if (passed("--beta")) cfg.beta = v.beta;
  if (passed("--eta")) cfg.eta = v.eta;
  if (passed("--gamma")) cfg.gamma = v.gamma;
  if (passed("--steps")) cfg.relax_steps = v.steps;
  if (passed("--batch")) cfg.batch_size = v.batch;
  if (passed("--iters")) cfg.iterations = v.iters;
  if (passed("--sigma")) cfg.sigma = v.sigma;
  if (passed("--samples")) cfg.samples = v.samples;
  if (passed("--seed")) cfg.base_seed = v.seed;
  if (passed("--threshold")) cfg.threshold = v.threshold;
  if (passed("--eval-interval")) cfg.eval_interval = v.eval_interval;
  if (passed("--eval-chunk")) cfg.eval_chunk = v.eval_chunk;
  if (passed("--jobs")) cfg.jobs = v.jobs;
  if (passed("--trials")) cfg.trials = v.trials;
  if (passed("--sigmas")) cfg.sigmas = v.sigmas;
  if (passed("--sample-counts")) cfg.sample_counts = v.sample_counts;
  if (passed("--grid-betas")) cfg.grid_betas = v.grid_betas;
  if (passed("--grid-eta-effs")) cfg.grid_eta_effs = v.grid_eta_effs;
  cfg.validate();
  return cfg;
}

std::pair<LabeledDataset, LabeledDataset> load_splits(const ExperimentConfig& cfg) {
  return {load_dataset(cfg.dataset, cfg.data_dir, "train"),
          load_dataset(cfg.dataset, cfg.data_dir, "test")};
}

void print_rows(const std::vector<SweepRow>& rows) {
  std::cout << kSummaryCsvHeader << '\n';
  for (const SweepRow& r : rows)
    std::cout << r.sigma << ',' << r.n_samples << ',' << r.beta << ',' << r.eta_eff << ','
              << r.mean_acc << ',' << r.max_acc << ',' << r.conv_rate << '\n';
}

void announce(const std::pair<std::string, std::string>& paths) {
  std::cout << "wrote " << paths.first << '\n' << "wrote " << paths.second << '\n';
}

int cmd_train(const CLI::App* cmd, const CliValues& v) {
  const ExperimentConfig cfg = build_config(cmd, v);
  const auto [train, test] = load_splits(cfg);
  std::cout << "training " << cfg.dataset << " for " << cfg.iterations
            << " iterations (sigma=" << cfg.sigma << ", N=" << cfg.samples << ")\n";

  NetworkParams trained;
  const TrialRecord record = run_trial(cfg, cfg.sigma, cfg.samples, 0, train, test, &trained);
  for (const EvalPoint& p : record.series) {
    std::cout << "iter " << p.iteration << "  test " << p.test_accuracy * 100 << "%";
    if (p.train_loss) std::cout << "  loss " << *p.train_loss;
    std::cout << '\n';
  }
  std::cout << "final " << record.final_accuracy * 100 << "%, max " << record.max_accuracy * 100
            << "%, " << (record.converged ? "converged" : "not converged") << '\n';

  announce(persist({record},
                   {aggregate_cell({record}, cfg.sigma, cfg.samples, cfg.beta, cfg.eta)}, v.out,
                   "train"));
  const std::string model_path =
      (std::filesystem::path(v.out) / "train_model.epnp").string();
  save_checkpoint(trained, model_path);
  std::cout << "wrote " << model_path << '\n';
  return record.diverged ? 1 : 0;
}

int cmd_sweep_sigma(const CLI::App* cmd, const CliValues& v) {
  const ExperimentConfig cfg = build_config(cmd, v);
  const auto [train, test] = load_splits(cfg);
  const SweepResult result = sweep_sigma(cfg, train, test);
  print_rows(result.rows);
  announce(persist(result.records, result.rows, v.out, "sweep_sigma"));
  return 0;
}

int cmd_sweep_samples(const CLI::App* cmd, const CliValues& v) {
  const ExperimentConfig cfg = build_config(cmd, v);
  const auto [train, test] = load_splits(cfg);
  const SampleSweepResult result = sweep_samples(cfg, train, test);
  print_rows(result.rows);
  for (const auto& [n, critical] : result.critical_sigma)
    std::cout << "N=" << n << " critical sigma " << critical << '\n';
  announce(persist(result.records, result.rows, v.out, "sweep_samples"));
  return 0;
}

int cmd_sweep_grid(const CLI::App* cmd, const CliValues& v) {
  const ExperimentConfig cfg = build_config(cmd, v);
  const auto [train, test] = load_splits(cfg);
  const SweepResult result = sweep_grid(cfg, train, test);
  print_rows(result.rows);
  announce(persist(result.records, result.rows, v.out, "sweep_grid"));
  return 0;
}

int cmd_eval(const CLI::App* cmd, const CliValues& v, const std::string& checkpoint,
             const std::string& split) {
  const ExperimentConfig cfg = build_config(cmd, v);
  const NetworkParams params = load_checkpoint(checkpoint);
  const LabeledDataset ds = load_dataset(cfg.dataset, cfg.data_dir, split);
  const double acc =
      evaluate_accuracy(params, ds, cfg.gamma, cfg.relax_steps, static_cast<int>(cfg.eval_chunk));
  std::cout << "accuracy " << acc << " on " << cfg.dataset << '/' << split << " ("
            << ds.size() << " examples)\n";
  return 0;
}

int cmd_plan(double sigma, double sigma_crit) {
  const UncertaintyPlan plan = plan_sampling(sigma, sigma_crit);
  nlohmann::json j{{"sigma", plan.sigma_phys},
                   {"sigma_crit", plan.sigma_crit},
                   {"n_samples", plan.n_samples},
                   {"sigma_act", plan.sigma_act}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_validate(const CLI::App* cmd, const CliValues& v) {
  const ExperimentConfig cfg = build_config(cmd, v);
  std::cout << nlohmann::json(cfg).dump(2) << '\n';
  std::cout << "config ok (threshold " << cfg.resolved_threshold() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equilibrium-propagation training of layered resistive networks"};
  app.require_subcommand(1);

  CliValues train_v, ssig_v, ssmp_v, grid_v, eval_v, val_v;

  CLI::App* train = app.add_subcommand("train", "single training run");
  add_common_flags(train, train_v);

  CLI::App* ssig = app.add_subcommand("sweep-sigma", "trials across an uncertainty grid");
  add_common_flags(ssig, ssig_v);
  ssig->add_option("--sigmas", ssig_v.sigmas, "sigma grid")->delimiter(',');

  CLI::App* ssmp =
      app.add_subcommand("sweep-samples", "critical uncertainty per sample count");
  add_common_flags(ssmp, ssmp_v);
  ssmp->add_option("--sigmas", ssmp_v.sigmas, "sigma grid")->delimiter(',');
  ssmp->add_option("--sample-counts", ssmp_v.sample_counts, "N grid")->delimiter(',');

  CLI::App* grid = app.add_subcommand("sweep-grid", "convergence heat map over (beta, eta/beta)");
  add_common_flags(grid, grid_v);
  grid->add_option("--sigmas", grid_v.sigmas, "sigma grid")->delimiter(',');
  grid->add_option("--grid-betas", grid_v.grid_betas, "beta axis")->delimiter(',');
  grid->add_option("--grid-eta-effs", grid_v.grid_eta_effs, "eta/beta axis")->delimiter(',');

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common_flags(eval, eval_v);
  std::string checkpoint, split = "test";
  eval->add_option("checkpoint", checkpoint, "binary checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--split", split, "train or test");

  CLI::App* plan = app.add_subcommand("plan", "samples needed to reach a critical uncertainty");
  double plan_sigma = 0.0, plan_crit = 0.0;
  plan->add_option("--sigma", plan_sigma, "physical measurement uncertainty")->required();
  plan->add_option("--sigma-crit", plan_crit, "largest trainable uncertainty")->required();

  CLI::App* validate = app.add_subcommand("validate", "parse and echo the effective config");
  validate->group("");  // hidden: debugging aid
  add_common_flags(validate, val_v);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train, train_v);
    if (ssig->parsed()) return cmd_sweep_sigma(ssig, ssig_v);
    if (ssmp->parsed()) return cmd_sweep_samples(ssmp, ssmp_v);
    if (grid->parsed()) return cmd_sweep_grid(grid, grid_v);
    if (eval->parsed()) return cmd_eval(eval, eval_v, checkpoint, split);
    if (plan->parsed()) return cmd_plan(plan_sigma, plan_crit);
    if (validate->parsed()) return cmd_validate(validate, val_v);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
