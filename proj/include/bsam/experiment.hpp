#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bsam/data.hpp"
#include "bsam/models.hpp"
#include "bsam/optimizers.hpp"
#include "bsam/probes.hpp"

namespace bsam {

struct ModelConfig {
  std::string kind = "mlp";  // mlp | quadratic | double_well
  std::vector<std::size_t> layers;
  std::vector<double> diag;  // quadratic Hessian diagonal, centre 0
  double sharp_min = 0.0;
  double flat_min = 1.0;
  double kappa_sharp = 100.0;
  double kappa_flat = 1.0;
  std::vector<double> init;  // analytic starting point; empty = landscape default

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DataConfig {
  std::string source = "blobs";  // blobs | csv | idx
  std::size_t n = 512;
  std::size_t dim = 2;
  std::size_t classes = 2;
  double separation = 6.0;
  std::uint64_t seed = 0;
  double label_noise = 0.0;
  double test_fraction = 0.2;
  std::string csv;
  std::string idx_images;
  std::string idx_labels;
  double grad_noise = 0.0;  // analytic landscapes: std of each noise row

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  std::vector<std::uint64_t> seeds{0};
  bool trace = false;
};

struct ProbeConfig {
  std::size_t k = 1;
  int iters = 300;
  double tol = 1e-6;
  std::size_t batch_cap = 2048;
  std::size_t grid = 11;
  double extent = 1.0;
  std::optional<double> rho;  // defaults to opt.rho_max
};

struct ConvergenceConfig {
  double c = 0.1;
  std::vector<std::int64_t> horizons{100, 316, 1000, 3162, 10000};
};

struct ExperimentConfig {
  std::string run_id = "run";
  ModelConfig model;
  DataConfig data;
  OptimizerConfig opt;
  TrainConfig train;
  ProbeConfig probe;
  ConvergenceConfig convergence;
  std::map<std::string, int> key_lines;  // line each key was set on
};

// `key = value` lines, `#` comments, dotted keys. Throws ConfigError naming
// the offending key and line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

extern const char* const kMetricsHeader;

struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  double rho_min = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
  std::optional<double> test_acc;
  double grad_norm = 0.0;
  std::optional<double> cos_g_gmin;
  std::int64_t fwd_total = 0;
  std::int64_t bwd_total = 0;
};

std::string format_metrics_row(const MetricsRow& row);
// Shortest round-trip decimal form.
std::string format_double(double x);

// Dataset, split and probe batch shared by every seed of a config.
struct PreparedData {
  Dataset train;
  Dataset test;  // clean labels
  Batch probe;
};

PreparedData prepare_data(const ExperimentConfig& config);
// Model spec plus initial parameters for one seed.
std::pair<ParamVector, ModelSpec> init_model(const ExperimentConfig& config, std::uint64_t seed);

struct Evaluation {
  double loss = 0.0;
  std::optional<double> accuracy;  // MLP only
};
Evaluation evaluate(const ParamVector& params, const ModelSpec& spec, const Dataset& data);

enum class RunStatus { Ok, Diverged };

struct RunResult {
  std::string run_id;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::Ok;
  ModelSpec spec;
  ParamVector params;
  std::vector<MetricsRow> rows;
  std::vector<StepStats> trace;
  SharpnessReport report;
  double probe_loss = 0.0;
  Evaluation final_test;
  std::int64_t fwd_total = 0;
  std::int64_t bwd_total = 0;
};

struct TrainOptions {
  bool with_report = true;
};

RunResult train_seed(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed,
                     const TrainOptions& options = {});

std::string metrics_csv(const RunResult& run);
std::string report_text(const RunResult& run);
std::string checkpoint_text(const RunResult& run);

struct Checkpoint {
  std::string run_id;
  std::uint64_t seed = 0;
  ParamVector params;
};
Checkpoint parse_checkpoint(const std::string& text);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path run_file(const std::filesystem::path& out, const std::string& run_id, std::uint64_t seed,
                               const std::string& suffix);

// Trains every seed and writes metrics, checkpoint and report files.
std::vector<RunResult> run_training(const ExperimentConfig& config, const std::filesystem::path& out);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one value
};
MeanStd mean_std(const std::vector<double>& values);

struct CompareRow {
  std::string run_id;
  std::string variant;
  std::size_t seeds = 0;
  MeanStd test_acc;
  MeanStd lambda_max;
};

extern const char* const kCompareHeader;
// Summaries for already trained runs, one entry per config.
std::vector<CompareRow> compare_runs(const std::vector<ExperimentConfig>& configs,
                                     const std::vector<std::vector<RunResult>>& runs);
std::string compare_csv(const std::vector<CompareRow>& rows);
// Checks the configs share data, model and seeds; trains; writes comparison.csv.
std::vector<CompareRow> compare(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out);
void check_comparable(const std::vector<ExperimentConfig>& configs);

struct ConvergenceResult {
  std::vector<std::int64_t> horizons;
  std::vector<double> avg_sq_grad;  // A(T) = (1/T) sum_t ||grad L(w_t)||^2
  double slope = 0.0;               // least squares of log A against log T
};

ConvergenceResult convergence_check(const ExperimentConfig& config);
std::string convergence_text(const ExperimentConfig& config, const ConvergenceResult& result);
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Loss slice around a checkpoint on the probe batch, as TSV: the first row
// holds beta coordinates, the first column alpha coordinates.
LossSlice slice_for(const ExperimentConfig& config, const PreparedData& data, const Checkpoint& checkpoint);
std::string slice_tsv(const LossSlice& slice);

}  // namespace bsam
