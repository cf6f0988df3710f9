#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "bsam/error.hpp"
#include "bsam/experiment.hpp"

namespace {

namespace fs = std::filesystem;

fs::path resolve_out(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("BSAM_OUT_DIR"); env && *env) return env;
  return "out";
}

void write(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw bsam::IoError("cannot write '" + path.string() + "'");
  out << content;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw bsam::IoError("cannot create '" + dir.string() + "': " + ec.message());
}

bsam::Checkpoint checkpoint_for(const bsam::ExperimentConfig& config, const fs::path& out,
                                const std::string& explicit_path, std::optional<std::uint64_t> seed) {
  if (!explicit_path.empty()) return bsam::load_checkpoint(explicit_path);
  const auto s = seed.value_or(config.train.seeds.front());
  return bsam::load_checkpoint(bsam::run_file(out, config.run_id, s, "_checkpoint.txt"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sharpness-aware optimisation lab: SGD, SAM and bilateral SAM on small models"};
  app.require_subcommand(1);

  std::vector<std::string> configs;
  std::string config_path;
  std::string out_flag;
  std::string checkpoint_path;
  std::optional<std::uint64_t> seed;
  bool trace = false;

  auto* train = app.add_subcommand("train", "Train every seed of a config; write metrics, checkpoints and reports");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--out", out_flag, "Output directory (default: $BSAM_OUT_DIR or ./out)");
  train->add_flag("--trace", trace, "Log one metrics row per step instead of per epoch");

  auto* cmp = app.add_subcommand("compare", "Train several configs and summarise accuracy and lambda_max");
  cmp->add_option("--config", configs, "Config files (two or more)")->required()->expected(2, -1);
  cmp->add_option("--out", out_flag, "Output directory");

  auto* probe = app.add_subcommand("probe", "Sharpness report for a checkpoint");
  probe->add_option("--config", config_path, "Config file")->required();
  probe->add_option("--out", out_flag, "Output directory");
  probe->add_option("--checkpoint", checkpoint_path, "Checkpoint (default: <out>/<run_id>_seed<S>_checkpoint.txt)");
  probe->add_option("--seed", seed, "Seed whose checkpoint to load (default: first seed)");

  auto* slice = app.add_subcommand("slice", "2-D loss slice TSV around a checkpoint");
  slice->add_option("--config", config_path, "Config file")->required();
  slice->add_option("--out", out_flag, "Output directory");
  slice->add_option("--checkpoint", checkpoint_path, "Checkpoint (default: <out>/<run_id>_seed<S>_checkpoint.txt)");
  slice->add_option("--seed", seed, "Seed whose checkpoint to load (default: first seed)");

  auto* conv = app.add_subcommand("convergence", "Average squared gradient norm against horizon on a quadratic");
  conv->add_option("--config", config_path, "Config file")->required();
  conv->add_option("--out", out_flag, "Output directory");

  auto* gen = app.add_subcommand("gen-data", "Write the configured dataset as CSV");
  gen->add_option("--config", config_path, "Config file")->required();
  gen->add_option("--out", out_flag, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out = resolve_out(out_flag);
    ensure_dir(out);
    if (*train) {
      auto config = bsam::load_config(config_path);
      if (trace) config.train.trace = true;
      for (const auto& run : bsam::run_training(config, out)) {
        std::cout << config.run_id << " seed " << run.seed << ": "
                  << (run.status == bsam::RunStatus::Ok ? "ok" : "diverged")
                  << " test_loss=" << bsam::format_double(run.final_test.loss);
        if (run.final_test.accuracy) std::cout << " test_acc=" << bsam::format_double(*run.final_test.accuracy);
        if (!run.report.eigenvalues.empty()) {
          std::cout << " lambda_max=" << bsam::format_double(run.report.eigenvalues.front());
        }
        std::cout << "\n";
      }
    } else if (*cmp) {
      std::vector<bsam::ExperimentConfig> parsed;
      for (const auto& c : configs) parsed.push_back(bsam::load_config(c));
      std::cout << bsam::compare_csv(bsam::compare(parsed, out));
    } else if (*probe) {
      const auto config = bsam::load_config(config_path);
      const auto data = bsam::prepare_data(config);
      const auto ck = checkpoint_for(config, out, checkpoint_path, seed);
      bsam::RunResult run;
      run.run_id = config.run_id;
      run.seed = ck.seed;
      run.spec = bsam::init_model(config, ck.seed).second;
      run.spec.check(ck.params);
      run.params = ck.params;
      run.final_test = bsam::evaluate(ck.params, run.spec, data.test);
      run.probe_loss = bsam::forward_loss(ck.params, data.probe, run.spec);
      bsam::ReportOptions ro;
      ro.rho = config.probe.rho.value_or(config.opt.rho_max);
      ro.k = std::min(config.probe.k, ck.params.size());
      ro.iters = config.probe.iters;
      ro.tol = config.probe.tol;
      ro.seed = ck.seed;
      run.report = bsam::sharpness_report(ck.params, data.probe, run.spec, ro);
      const auto text = bsam::report_text(run);
      write(bsam::run_file(out, config.run_id, ck.seed, "_probe.txt"), text);
      std::cout << text;
    } else if (*slice) {
      const auto config = bsam::load_config(config_path);
      const auto data = bsam::prepare_data(config);
      const auto ck = checkpoint_for(config, out, checkpoint_path, seed);
      const auto path = bsam::run_file(out, config.run_id, ck.seed, "_slice.tsv");
      write(path, bsam::slice_tsv(bsam::slice_for(config, data, ck)));
      std::cout << path.string() << "\n";
    } else if (*conv) {
      const auto config = bsam::load_config(config_path);
      const auto text = bsam::convergence_text(config, bsam::convergence_check(config));
      write(out / (config.run_id + "_convergence.txt"), text);
      std::cout << text;
    } else if (*gen) {
      const auto config = bsam::load_config(config_path);
      const auto& d = config.data;
      const auto data = bsam::gen_gaussian_blobs(d.n, d.dim, d.classes, d.separation, d.seed);
      const auto path = out / (config.run_id + "_data.csv");
      bsam::write_csv_dataset(data, path);
      std::cout << path.string() << "\n";
    }
  } catch (const bsam::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
