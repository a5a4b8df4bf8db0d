#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eprop/checkpoint.hpp"
#include "eprop/data.hpp"
#include "eprop/dynamics.hpp"
#include "eprop/learning.hpp"
#include "eprop/network.hpp"
#include "eprop/rng.hpp"
#include "eprop/uncertainty.hpp"

// Experiment harness: multi-trial runs over uncertainty sweeps, sample-count
// sweeps, and beta x eta_eff grids, with convergence statistics and
// JSONL/CSV persistence.

namespace eprop {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string dataset = "mnist";
  std::string data_dir;  // empty: resolve via EPROP_DATA_DIR
  std::vector<int> layers = {1568, 1024, 10};
  double beta = 1.0;
  double eta = 1e-3;
  double gamma = 500.0;
  int relax_steps = 5;
  int batch_size = 4;
  std::int64_t iterations = 150000;
  double sigma = 0.0;          // single-run measurement uncertainty
  int samples = 1;             // single-run measurements per attractor state
  std::vector<double> sigmas;  // sweep-sigma / sweep-grid sigma axis
  std::vector<int> sample_counts;      // sweep-samples N axis
  std::vector<double> grid_betas;      // sweep-grid beta axis
  std::vector<double> grid_eta_effs;   // sweep-grid eta/beta axis
  int trials = 30;
  std::uint64_t base_seed = 1;
  double threshold = 0.0;  // 0: pick a per-dataset default
  std::int64_t eval_interval = 2500;
  int eval_chunk = 512;
  int jobs = 1;

  void validate() const {
    LayerSpec{layers}.validate();
    if (beta <= 0) throw std::invalid_argument("config: beta must be > 0");
    if (eta <= 0) throw std::invalid_argument("config: eta must be > 0");
    if (gamma <= 0) throw std::invalid_argument("config: gamma must be > 0");
    if (relax_steps < 1) throw std::invalid_argument("config: relax_steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
    if (sigma < 0) throw std::invalid_argument("config: sigma must be >= 0");
    if (samples < 1) throw std::invalid_argument("config: samples must be >= 1");
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (threshold < 0 || threshold >= 1)
      throw std::invalid_argument("config: threshold must be in [0, 1)");
    if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
    if (eval_chunk < 1) throw std::invalid_argument("config: eval_chunk must be >= 1");
    if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
  }

  // Convergence thresholds: 0.9 for MNIST; KMNIST/Fashion-MNIST defaults sit
  // between their typical failed-run accuracy bands and trained accuracies.
  double resolved_threshold() const {
    if (threshold > 0) return threshold;
    if (dataset == "kmnist") return 0.80;
    if (dataset == "fashion_mnist" || dataset == "fmnist") return 0.75;
    return 0.90;
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"dataset", c.dataset},
                     {"data_dir", c.data_dir},
                     {"layers", c.layers},
                     {"beta", c.beta},
                     {"eta", c.eta},
                     {"gamma", c.gamma},
                     {"relax_steps", c.relax_steps},
                     {"batch_size", c.batch_size},
                     {"iterations", c.iterations},
                     {"sigma", c.sigma},
                     {"samples", c.samples},
                     {"sigmas", c.sigmas},
                     {"sample_counts", c.sample_counts},
                     {"grid_betas", c.grid_betas},
                     {"grid_eta_effs", c.grid_eta_effs},
                     {"trials", c.trials},
                     {"base_seed", c.base_seed},
                     {"threshold", c.threshold},
                     {"eval_interval", c.eval_interval},
                     {"eval_chunk", c.eval_chunk}};
  // `jobs` is a scheduling knob, not part of the experiment identity: records
  // embedding their config must not depend on how many workers ran the sweep.
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.dataset = j.value("dataset", c.dataset);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.layers = j.value("layers", c.layers);
  c.beta = j.value("beta", c.beta);
  c.eta = j.value("eta", c.eta);
  c.gamma = j.value("gamma", c.gamma);
  c.relax_steps = j.value("relax_steps", c.relax_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  c.sigma = j.value("sigma", c.sigma);
  c.samples = j.value("samples", c.samples);
  c.sigmas = j.value("sigmas", c.sigmas);
  c.sample_counts = j.value("sample_counts", c.sample_counts);
  c.grid_betas = j.value("grid_betas", c.grid_betas);
  c.grid_eta_effs = j.value("grid_eta_effs", c.grid_eta_effs);
  c.trials = j.value("trials", c.trials);
  c.base_seed = j.value("base_seed", c.base_seed);
  c.threshold = j.value("threshold", c.threshold);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.eval_chunk = j.value("eval_chunk", c.eval_chunk);
  c.jobs = j.value("jobs", c.jobs);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw HarnessError("bad config JSON in " + path + ": " + e.what());
  }
  return j.get<ExperimentConfig>();
}

struct EvalPoint {
  std::int64_t iteration = 0;
  std::optional<double> train_loss;  // mean over the window since the last point
  double test_accuracy = 0.0;
};

constexpr int kRecordSchemaVersion = 1;

struct TrialRecord {
  int schema_version = kRecordSchemaVersion;
  int trial_id = 0;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  int n_samples = 1;
  double beta = 1.0;
  double eta = 1e-3;
  nlohmann::json config;  // resolved config snapshot for the cell
  std::vector<EvalPoint> series;
  double final_accuracy = 0.0;
  double max_accuracy = 0.0;
  bool converged = false;
  bool diverged = false;
};

inline void to_json(nlohmann::json& j, const EvalPoint& p) {
  j = nlohmann::json{{"iteration", p.iteration}, {"test_accuracy", p.test_accuracy}};
  if (p.train_loss) j["train_loss"] = *p.train_loss;
}

inline void from_json(const nlohmann::json& j, EvalPoint& p) {
  j.at("iteration").get_to(p.iteration);
  j.at("test_accuracy").get_to(p.test_accuracy);
  if (j.contains("train_loss")) p.train_loss = j.at("train_loss").get<double>();
}

inline void to_json(nlohmann::json& j, const TrialRecord& r) {
  j = nlohmann::json{{"schema_version", r.schema_version},
                     {"trial_id", r.trial_id},
                     {"seed", r.seed},
                     {"sigma", r.sigma},
                     {"n_samples", r.n_samples},
                     {"beta", r.beta},
                     {"eta", r.eta},
                     {"config", r.config},
                     {"series", r.series},
                     {"final_accuracy", r.final_accuracy},
                     {"max_accuracy", r.max_accuracy},
                     {"converged", r.converged},
                     {"diverged", r.diverged}};
}

inline void from_json(const nlohmann::json& j, TrialRecord& r) {
  j.at("schema_version").get_to(r.schema_version);
  j.at("trial_id").get_to(r.trial_id);
  j.at("seed").get_to(r.seed);
  j.at("sigma").get_to(r.sigma);
  j.at("n_samples").get_to(r.n_samples);
  j.at("beta").get_to(r.beta);
  j.at("eta").get_to(r.eta);
  r.config = j.value("config", nlohmann::json::object());
  j.at("series").get_to(r.series);
  j.at("final_accuracy").get_to(r.final_accuracy);
  j.at("max_accuracy").get_to(r.max_accuracy);
  j.at("converged").get_to(r.converged);
  j.at("diverged").get_to(r.diverged);
}

// ---- evaluation ----

// Test-set accuracy (argmax of output voltages, noiseless readout), relaxed
// in chunks of `chunk` images to bound memory.
inline double evaluate_accuracy(const NetworkParams& params, const LabeledDataset& dataset,
                                double gamma, int relax_steps, int chunk = 512) {
  if (dataset.size() == 0) throw HarnessError("evaluate_accuracy: empty dataset");
  if (chunk < 1) throw std::invalid_argument("evaluate_accuracy: chunk must be >= 1");
  const Eigen::Index pixels = dataset.pixel_count();
  if (2 * pixels != params.input_width())
    throw HarnessError("evaluate_accuracy: dataset width does not match network input");
  std::int64_t correct = 0;
  for (Eigen::Index start = 0; start < dataset.size(); start += chunk) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk, dataset.size() - start);
    Eigen::MatrixXd inputs(2 * pixels, n);
    inputs.topRows(pixels) = dataset.images.middleCols(start, n).cast<double>() * gamma;
    inputs.bottomRows(pixels) = -inputs.topRows(pixels);
    const BatchAttractor att = relax_batch(params, inputs, BatchPhaseConfig{0.0, relax_steps, {}},
                                           BatchState::zeros(params.sizes, n));
    const Eigen::MatrixXd& out = att.state.voltages.back();
    for (Eigen::Index c = 0; c < n; ++c) {
      Eigen::Index predicted;
      out.col(c).maxCoeff(&predicted);
      if (predicted == dataset.labels[static_cast<size_t>(start + c)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// ---- trials ----

// Per-trial sub-seed purposes, all derived from key(base_seed, trial_index).
namespace seed_purpose {
constexpr std::uint64_t kInit = 0;
constexpr std::uint64_t kNoise = 1;
constexpr std::uint64_t kShuffle = 2;
}  // namespace seed_purpose

// Trains one trial at the given uncertainty cell, evaluating at iteration 0,
// every eval_interval, and the final iteration. Dynamics divergence makes a
// failed record (diverged = true), not an exception: failed runs are data.
// `trained` (optional) receives the final parameters, e.g. for checkpointing.
inline TrialRecord run_trial(const ExperimentConfig& cfg, double sigma, int n_samples,
                             int trial_index, const LabeledDataset& train,
                             const LabeledDataset& test, NetworkParams* trained = nullptr) {
  cfg.validate();
  if (sigma < 0) throw std::invalid_argument("run_trial: sigma must be >= 0");
  if (n_samples < 1) throw std::invalid_argument("run_trial: n_samples must be >= 1");

  TrialRecord record;
  record.trial_id = trial_index;
  record.seed = rng::key(cfg.base_seed, static_cast<std::uint64_t>(trial_index));
  record.sigma = sigma;
  record.n_samples = n_samples;
  record.beta = cfg.beta;
  record.eta = cfg.eta;
  {
    ExperimentConfig snapshot = cfg;
    snapshot.sigma = sigma;
    snapshot.samples = n_samples;
    record.config = snapshot;
  }

  NetworkParams params = init_params(LayerSpec{cfg.layers}, rng::key(record.seed, seed_purpose::kInit));
  const UpdateConfig update{cfg.eta, cfg.beta, cfg.batch_size, 0.0};
  const NoiseModel noise{sigma, n_samples, rng::key(record.seed, seed_purpose::kNoise)};
  const PhaseBudget budget{cfg.relax_steps, cfg.relax_steps};
  Trainer trainer(std::move(params), update, noise, budget);
  BatchIterator batches(train, cfg.batch_size, cfg.gamma,
                        rng::key(record.seed, seed_purpose::kShuffle));

  const auto eval_now = [&]() {
    return evaluate_accuracy(trainer.params(), test, cfg.gamma, cfg.relax_steps, cfg.eval_chunk);
  };
  record.series.push_back({0, std::nullopt, eval_now()});

  double window_loss = 0.0;
  std::int64_t window_batches = 0;
  try {
    for (std::int64_t iter = 1; iter <= cfg.iterations; ++iter) {
      const StepMetrics m = trainer.step(batches.next());
      window_loss += m.mean_loss;
      ++window_batches;
      if (iter % cfg.eval_interval == 0 || iter == cfg.iterations) {
        EvalPoint point;
        point.iteration = iter;
        point.train_loss = window_loss / static_cast<double>(window_batches);
        point.test_accuracy = eval_now();
        record.series.push_back(point);
        window_loss = 0.0;
        window_batches = 0;
      }
    }
  } catch (const DivergenceError&) {
    record.diverged = true;
  }

  record.final_accuracy = record.series.back().test_accuracy;
  record.max_accuracy = 0.0;
  for (const EvalPoint& p : record.series)
    record.max_accuracy = std::max(record.max_accuracy, p.test_accuracy);
  record.converged = !record.diverged && record.max_accuracy >= cfg.resolved_threshold();
  if (trained) *trained = std::move(trainer).take_params();
  return record;
}

// Runs `cfg.trials` trials of one cell, at most cfg.jobs at a time. Results
// are ordered by trial id regardless of schedule.
inline std::vector<TrialRecord> run_cell(const ExperimentConfig& cfg, double sigma, int n_samples,
                                         const LabeledDataset& train, const LabeledDataset& test) {
  std::vector<TrialRecord> records(static_cast<size_t>(cfg.trials));
  if (cfg.jobs <= 1) {
    for (int t = 0; t < cfg.trials; ++t)
      records[static_cast<size_t>(t)] = run_trial(cfg, sigma, n_samples, t, train, test);
    return records;
  }
  for (int base = 0; base < cfg.trials; base += cfg.jobs) {
    const int wave = std::min(cfg.jobs, cfg.trials - base);
    std::vector<std::future<TrialRecord>> futures;
    futures.reserve(static_cast<size_t>(wave));
    for (int t = base; t < base + wave; ++t)
      futures.push_back(std::async(std::launch::async, [&, t] {
        return run_trial(cfg, sigma, n_samples, t, train, test);
      }));
    for (int t = base; t < base + wave; ++t)
      records[static_cast<size_t>(t)] = futures[static_cast<size_t>(t - base)].get();
  }
  return records;
}

// ---- statistics ----

struct SweepRow {
  double sigma = 0.0;
  std::int64_t n_samples = 1;
  double beta = 1.0;
  double eta_eff = 1e-3;
  double mean_acc = 0.0;      // mean over trials of per-trial max accuracy
  double max_acc = 0.0;       // mean of the 5 highest per-trial max accuracies
  double max_acc_stderr = 0.0;
  double conv_rate = 0.0;     // converged trials / total trials
};

// Mean and standard error of the k highest values (k = 5 or fewer if the
// sample is smaller).
inline std::pair<double, double> top_k_mean_stderr(std::vector<double> values, int k = 5) {
  if (values.empty()) throw std::invalid_argument("top_k_mean_stderr: empty sample");
  std::sort(values.begin(), values.end(), std::greater<>());
  const size_t n = std::min(values.size(), static_cast<size_t>(k));
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += values[i];
  mean /= static_cast<double>(n);
  if (n < 2) return {mean, 0.0};
  double var = 0.0;
  for (size_t i = 0; i < n; ++i) var += (values[i] - mean) * (values[i] - mean);
  var /= static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

inline SweepRow aggregate_cell(const std::vector<TrialRecord>& records, double sigma,
                               std::int64_t n_samples, double beta, double eta) {
  if (records.empty()) throw std::invalid_argument("aggregate_cell: no records");
  SweepRow row;
  row.sigma = sigma;
  row.n_samples = n_samples;
  row.beta = beta;
  row.eta_eff = effective_lr(eta, beta);
  std::vector<double> maxima;
  maxima.reserve(records.size());
  int converged = 0;
  for (const TrialRecord& r : records) {
    maxima.push_back(r.max_accuracy);
    row.mean_acc += r.max_accuracy;
    if (r.converged) ++converged;
  }
  row.mean_acc /= static_cast<double>(records.size());
  const auto [top_mean, top_se] = top_k_mean_stderr(maxima);
  row.max_acc = top_mean;
  row.max_acc_stderr = top_se;
  row.conv_rate = static_cast<double>(converged) / static_cast<double>(records.size());
  return row;
}

// ---- sweeps ----

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<TrialRecord> records;
};

// Trials at every sigma in cfg.sigmas, single-measurement states
// (cfg.samples per state, N = 1 by default).
inline SweepResult sweep_sigma(const ExperimentConfig& cfg, const LabeledDataset& train,
                               const LabeledDataset& test) {
  if (cfg.sigmas.empty()) throw std::invalid_argument("sweep_sigma: empty sigma list");
  SweepResult result;
  for (double sigma : cfg.sigmas) {
    std::vector<TrialRecord> cell = run_cell(cfg, sigma, cfg.samples, train, test);
    result.rows.push_back(aggregate_cell(cell, sigma, cfg.samples, cfg.beta, cfg.eta));
    for (auto& r : cell) result.records.push_back(std::move(r));
  }
  return result;
}

struct SampleSweepResult {
  std::vector<SweepRow> rows;
  std::vector<TrialRecord> records;
  // per N: largest tested sigma whose mean accuracy stays at/above threshold
  std::vector<std::pair<std::int64_t, double>> critical_sigma;
};

inline SampleSweepResult sweep_samples(const ExperimentConfig& cfg, const LabeledDataset& train,
                                       const LabeledDataset& test) {
  if (cfg.sample_counts.empty()) throw std::invalid_argument("sweep_samples: empty N list");
  if (cfg.sigmas.empty()) throw std::invalid_argument("sweep_samples: empty sigma list");
  SampleSweepResult result;
  const double threshold = cfg.resolved_threshold();
  for (int n : cfg.sample_counts) {
    if (n < 1) throw std::invalid_argument("sweep_samples: N must be >= 1");
    double critical = 0.0;
    for (double sigma : cfg.sigmas) {
      std::vector<TrialRecord> cell = run_cell(cfg, sigma, n, train, test);
      const SweepRow row = aggregate_cell(cell, sigma, n, cfg.beta, cfg.eta);
      if (row.mean_acc >= threshold) critical = std::max(critical, sigma);
      result.rows.push_back(row);
      for (auto& r : cell) result.records.push_back(std::move(r));
    }
    result.critical_sigma.emplace_back(n, critical);
  }
  return result;
}

// Heat-map sweep: for each (beta, eta_eff, sigma) cell, eta = eta_eff * beta.
inline SweepResult sweep_grid(const ExperimentConfig& cfg, const LabeledDataset& train,
                              const LabeledDataset& test) {
  if (cfg.grid_betas.empty() || cfg.grid_eta_effs.empty())
    throw std::invalid_argument("sweep_grid: empty beta or eta_eff axis");
  if (cfg.sigmas.empty()) throw std::invalid_argument("sweep_grid: empty sigma list");
  SweepResult result;
  for (double sigma : cfg.sigmas)
    for (double beta : cfg.grid_betas)
      for (double eta_eff : cfg.grid_eta_effs) {
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.beta = beta;
        cell_cfg.eta = eta_eff * beta;
        std::vector<TrialRecord> cell = run_cell(cell_cfg, sigma, cfg.samples, train, test);
        result.rows.push_back(
            aggregate_cell(cell, sigma, cfg.samples, beta, cell_cfg.eta));
        for (auto& r : cell) result.records.push_back(std::move(r));
      }
  return result;
}

// ---- persistence ----

namespace detail {

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw HarnessError("format_double: conversion failed");
  return std::string(buf, ptr);
}

}  // namespace detail

constexpr const char* kSummaryCsvHeader = "sigma,n_samples,beta,eta_eff,mean_acc,max_acc,conv_rate";

// Writes <name>_records.jsonl (one record per line) and <name>_summary.csv
// into out_dir; returns the two paths.
inline std::pair<std::string, std::string> persist(const std::vector<TrialRecord>& records,
                                                   const std::vector<SweepRow>& rows,
                                                   const std::string& out_dir,
                                                   const std::string& name) {
  std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw HarnessError("cannot create output directory " + out_dir + ": " + ec.message());

  const std::string records_path = (dir / (name + "_records.jsonl")).string();
  {
    std::ofstream out(records_path);
    if (!out) throw HarnessError("cannot open for writing: " + records_path);
    for (const TrialRecord& r : records) out << nlohmann::json(r).dump() << '\n';
    if (!out) throw HarnessError("write failed: " + records_path);
  }

  const std::string summary_path = (dir / (name + "_summary.csv")).string();
  {
    std::ofstream out(summary_path);
    if (!out) throw HarnessError("cannot open for writing: " + summary_path);
    out << kSummaryCsvHeader << '\n';
    for (const SweepRow& row : rows)
      out << detail::format_double(row.sigma) << ',' << row.n_samples << ','
          << detail::format_double(row.beta) << ',' << detail::format_double(row.eta_eff) << ','
          << detail::format_double(row.mean_acc) << ',' << detail::format_double(row.max_acc)
          << ',' << detail::format_double(row.conv_rate) << '\n';
    if (!out) throw HarnessError("write failed: " + summary_path);
  }
  return {records_path, summary_path};
}

inline std::vector<TrialRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot open records: " + path);
  std::vector<TrialRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<TrialRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw HarnessError("bad record line in " + path + ": " + e.what());
    }
  }
  return records;
}

}  // namespace eprop
