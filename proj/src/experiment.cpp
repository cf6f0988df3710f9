#include "bsam/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bsam/error.hpp"
#include "bsam/rng.hpp"

namespace bsam {

const char* const kMetricsHeader =
    "run_id,seed,epoch,step,lr,rho_min,train_loss,test_loss,test_acc,grad_norm,cos_g_gmin,fwd_total,bwd_total";

const char* const kCompareHeader = "run_id,variant,seeds,test_acc_mean,test_acc_std,lambda_max_mean,lambda_max_std";

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

namespace {

std::string opt_double(const std::optional<double>& x) { return x ? format_double(*x) : std::string(); }

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset noise_dataset(std::size_t n, std::size_t dim, double stddev, std::uint64_t seed) {
  Dataset d;
  d.features = Tensor({n, dim}, 0.0);
  d.labels.assign(n, 0);
  d.classes = 1;
  d.seed = seed;
  if (stddev > 0.0) {
    auto rng = make_rng(seed, "gradient-noise");
    std::normal_distribution<double> normal(0.0, stddev);
    for (double& x : d.features.data()) x = normal(rng);
  }
  return d;
}

ModelSpec spec_for(const ExperimentConfig& config) {
  const auto& m = config.model;
  if (m.kind == "quadratic") return make_quadratic_diag(m.diag);
  if (m.kind == "double_well") return make_double_well(m.sharp_min, m.flat_min, m.kappa_sharp, m.kappa_flat);
  return ModelSpec(MlpSpec{m.layers, m.layers.back()});
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.seed << ',' << r.epoch << ',' << r.step << ',' << format_double(r.lr) << ','
     << format_double(r.rho_min) << ',' << format_double(r.train_loss) << ',' << opt_double(r.test_loss) << ','
     << opt_double(r.test_acc) << ',' << format_double(r.grad_norm) << ',' << opt_double(r.cos_g_gmin) << ','
     << r.fwd_total << ',' << r.bwd_total;
  return os.str();
}

PreparedData prepare_data(const ExperimentConfig& config) {
  const auto& dc = config.data;
  Dataset full;
  const bool mlp = config.model.kind == "mlp";
  if (!mlp) {
    full = noise_dataset(dc.n, spec_for(config).param_count(), dc.grad_noise, dc.seed);
  } else if (dc.source == "csv") {
    full = load_csv_dataset(dc.csv, dc.classes);
  } else if (dc.source == "idx") {
    full = load_idx(dc.idx_images, dc.idx_labels, dc.classes);
  } else {
    full = gen_gaussian_blobs(dc.n, dc.dim, dc.classes, dc.separation, dc.seed);
  }
  full.validate();
  if (mlp) {
    if (config.model.layers.front() != full.dim()) {
      throw ConfigError("model.layers input width " + std::to_string(config.model.layers.front()) +
                        " does not match data dimension " + std::to_string(full.dim()));
    }
    if (config.model.layers.back() != full.classes) {
      throw ConfigError("model.layers output width " + std::to_string(config.model.layers.back()) +
                        " does not match class count " + std::to_string(full.classes));
    }
  }
  const auto split = split_indices(full.size(), dc.test_fraction, dc.seed);
  if (split.train.empty() || split.test.empty()) throw ConfigError("train/test split leaves an empty side");
  PreparedData out;
  out.train = full.subset(split.train);
  out.test = full.subset(split.test);
  if (mlp && dc.label_noise > 0.0) {
    out.train.labels = inject_symmetric_noise(out.train.labels, out.train.classes, dc.label_noise, dc.seed);
  }
  if (mlp) {
    const std::size_t cap = std::min(config.probe.batch_cap, out.test.size());
    std::vector<std::size_t> idx(cap);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    out.probe = out.test.subset(idx).as_batch();
  } else {
    out.probe = clean_batch(spec_for(config));
  }
  return out;
}

std::pair<ParamVector, ModelSpec> init_model(const ExperimentConfig& config, std::uint64_t seed) {
  const auto& m = config.model;
  if (m.kind == "mlp") return build_mlp(m.layers, m.layers.back(), seed);
  ModelSpec spec = spec_for(config);
  std::vector<double> w = m.init;
  if (w.empty()) {
    if (spec.is_quadratic()) {
      w.assign(spec.param_count(), 1.0);
    } else {
      w.assign(1, 0.5 * (m.sharp_min + m.flat_min));
    }
  }
  return {ParamVector::plain(std::move(w)), std::move(spec)};
}

Evaluation evaluate(const ParamVector& params, const ModelSpec& spec, const Dataset& data) {
  if (!spec.is_mlp()) return {forward_loss(params, clean_batch(spec), spec), std::nullopt};
  const Batch b = data.as_batch();
  Evaluation e;
  e.loss = forward_loss(params, b, spec);
  const Tensor logits = mlp_logits(params, data.features, spec);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.dim(1); ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    if (static_cast<int>(best) == data.labels[i]) ++correct;
  }
  e.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return e;
}

RunResult train_seed(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed,
                     const TrainOptions& options) {
  auto [params, spec] = init_model(config, seed);
  const std::size_t n = data.train.size();
  const std::size_t b = config.train.batch_size;
  if (b > n) {
    throw ConfigError("train.batch_size " + std::to_string(b) + " exceeds training set size " + std::to_string(n));
  }
  const auto steps_per_epoch = static_cast<std::int64_t>((n + b - 1) / b);
  OptimizerConfig oc = config.opt;
  oc.lr.total_steps = steps_per_epoch * config.train.epochs;
  OptimizerState state = OptimizerState::create(oc, params);

  RunResult run;
  run.run_id = config.run_id;
  run.seed = seed;
  run.trace.reserve(static_cast<std::size_t>(oc.lr.total_steps));

  auto make_row = [&](int epoch) {
    MetricsRow row;
    row.run_id = config.run_id;
    row.seed = seed;
    row.epoch = epoch;
    row.step = state.t;
    row.fwd_total = run.fwd_total;
    row.bwd_total = run.bwd_total;
    return row;
  };

  for (int epoch = 1; epoch <= config.train.epochs && run.status == RunStatus::Ok; ++epoch) {
    const auto chunks = batch_indices(n, b, stream_seed(seed, "epoch-" + std::to_string(epoch)));
    double loss_sum = 0.0, gnorm_sum = 0.0, cos_sum = 0.0;
    std::size_t cos_count = 0;
    StepStats last;
    for (std::size_t s = 0; s < chunks.size(); ++s) {
      const Batch batch = data.train.subset(chunks[s]).as_batch();
      auto result = step(state, params, batch, spec);
      run.fwd_total += result.stats.fwd;
      run.bwd_total += result.stats.bwd;
      run.trace.push_back(result.stats);
      last = run.trace.back();
      const bool finite = std::isfinite(result.stats.loss) &&
                          std::all_of(result.params.values().begin(), result.params.values().end(),
                                      [](double x) { return std::isfinite(x); });
      if (!finite) {
        // Diagnostic row: the offending step, then stop this seed.
        MetricsRow row = make_row(epoch);
        row.lr = last.lr_t;
        row.rho_min = last.rho_min_t;
        row.train_loss = result.stats.loss;
        row.grad_norm = last.norm_g;
        row.cos_g_gmin = last.cos_g_gmin;
        run.rows.push_back(row);
        run.status = RunStatus::Diverged;
        break;
      }
      params = std::move(result.params);
      loss_sum += last.loss;
      gnorm_sum += last.norm_g;
      if (last.cos_g_gmin) {
        cos_sum += *last.cos_g_gmin;
        ++cos_count;
      }
      const bool epoch_end = s + 1 == chunks.size();
      if (config.train.trace) {
        MetricsRow row = make_row(epoch);
        row.lr = last.lr_t;
        row.rho_min = last.rho_min_t;
        row.train_loss = last.loss;
        row.grad_norm = last.norm_g;
        row.cos_g_gmin = last.cos_g_gmin;
        if (epoch_end) {
          const auto ev = evaluate(params, spec, data.test);
          row.test_loss = ev.loss;
          row.test_acc = ev.accuracy;
        }
        run.rows.push_back(row);
      }
    }
    if (run.status != RunStatus::Ok || config.train.trace) continue;
    const double steps = static_cast<double>(chunks.size());
    MetricsRow row = make_row(epoch);
    row.lr = last.lr_t;
    row.rho_min = last.rho_min_t;
    row.train_loss = loss_sum / steps;
    row.grad_norm = gnorm_sum / steps;
    if (cos_count > 0) row.cos_g_gmin = cos_sum / static_cast<double>(cos_count);
    const auto ev = evaluate(params, spec, data.test);
    row.test_loss = ev.loss;
    row.test_acc = ev.accuracy;
    run.rows.push_back(row);
  }

  run.spec = spec;
  run.params = params;
  if (run.status == RunStatus::Ok) {
    run.final_test = evaluate(params, spec, data.test);
    run.probe_loss = forward_loss(params, data.probe, spec);
    if (options.with_report) {
      ReportOptions ro;
      ro.rho = config.probe.rho.value_or(config.opt.rho_max);
      ro.k = std::min(config.probe.k, params.size());
      ro.iters = config.probe.iters;
      ro.tol = config.probe.tol;
      ro.seed = seed;
      run.report = sharpness_report(params, data.probe, spec, ro);
    }
  } else {
    run.final_test = {std::nan(""), std::nullopt};
    run.probe_loss = std::nan("");
  }
  return run;
}

std::string metrics_csv(const RunResult& run) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : run.rows) out += format_metrics_row(r) + "\n";
  return out;
}

std::string report_text(const RunResult& run) {
  std::ostringstream os;
  const auto& r = run.report;
  os << "run_id = " << run.run_id << "\n";
  os << "seed = " << run.seed << "\n";
  os << "status = " << (run.status == RunStatus::Ok ? "ok" : "diverged") << "\n";
  os << "steps = " << run.trace.size() << "\n";
  os << "fwd_total = " << run.fwd_total << "\n";
  os << "bwd_total = " << run.bwd_total << "\n";
  os << "probe_loss = " << format_double(run.probe_loss) << "\n";
  os << "test_loss = " << format_double(run.final_test.loss) << "\n";
  os << "test_acc = " << opt_double(run.final_test.accuracy) << "\n";
  os << "rho_used = " << format_double(r.rho_used) << "\n";
  os << "max_s = " << format_double(r.max_s) << "\n";
  os << "min_s = " << format_double(r.min_s) << "\n";
  os << "bil_s = " << format_double(r.bil_s) << "\n";
  os << "degenerate = " << (r.degenerate ? "true" : "false") << "\n";
  os << "k = " << r.eigenvalues.size() << "\n";
  for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) {
    os << "eig_" << i << " = " << format_double(r.eigenvalues[i]) << "\n";
    os << "eig_residual_" << i << " = " << format_double(r.eig_residuals[i]) << "\n";
  }
  return os.str();
}

std::string checkpoint_text(const RunResult& run) {
  std::ostringstream os;
  os << "# bsam checkpoint v1\n";
  os << "run_id = " << run.run_id << "\n";
  os << "seed = " << run.seed << "\n";
  for (const auto& seg : run.params.layout()) {
    os << "segment = " << seg.name << ' ' << seg.offset;
    for (auto d : seg.shape) os << ' ' << d;
    os << "\n";
  }
  os << "values = " << run.params.size() << "\n";
  for (double x : run.params.values()) os << format_double(x) << "\n";
  return os.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Checkpoint ck;
  std::vector<Segment> layout;
  std::vector<double> values;
  std::size_t expected = 0;
  bool in_values = false;
  int line_no = 0;
  auto fail = [&line_no](const std::string& what) {
    throw ParseError("checkpoint line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (in_values) {
      double x = 0.0;
      auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), x);
      if (ec != std::errc() || p != line.data() + line.size()) fail("bad value '" + line + "'");
      values.push_back(x);
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "run_id") {
      ck.run_id = value;
    } else if (key == "seed") {
      ck.seed = std::stoull(value);
    } else if (key == "segment") {
      std::istringstream ss(value);
      Segment seg;
      ss >> seg.name >> seg.offset;
      std::size_t d = 0;
      while (ss >> d) seg.shape.push_back(d);
      if (seg.name.empty() || seg.shape.empty()) fail("malformed segment");
      layout.push_back(seg);
    } else if (key == "values") {
      expected = std::stoull(value);
      in_values = true;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!in_values || values.size() != expected) {
    throw ParseError("checkpoint: expected " + std::to_string(expected) + " values, found " +
                     std::to_string(values.size()));
  }
  try {
    ck.params = ParamVector(std::move(values), std::move(layout));
  } catch (const DimensionError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::filesystem::path run_file(const std::filesystem::path& out, const std::string& run_id, std::uint64_t seed,
                               const std::string& suffix) {
  return out / (run_id + "_seed" + std::to_string(seed) + suffix);
}

std::vector<RunResult> run_training(const ExperimentConfig& config, const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  const auto data = prepare_data(config);
  std::vector<RunResult> runs;
  for (auto seed : config.train.seeds) {
    auto run = train_seed(config, data, seed);
    write_file(run_file(out, config.run_id, seed, "_metrics.csv"), metrics_csv(run));
    write_file(run_file(out, config.run_id, seed, "_checkpoint.txt"), checkpoint_text(run));
    write_file(run_file(out, config.run_id, seed, "_report.txt"), report_text(run));
    runs.push_back(std::move(run));
  }
  return runs;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {std::nan(""), std::nan("")};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

void check_comparable(const std::vector<ExperimentConfig>& configs) {
  if (configs.size() < 2) throw ConfigError("compare needs at least two configs");
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (configs[i].train.seeds != configs[0].train.seeds) {
      throw ConfigError("config '" + configs[i].run_id + "' uses a different seed set than '" + configs[0].run_id + "'");
    }
    if (!(configs[i].data == configs[0].data)) {
      throw ConfigError("config '" + configs[i].run_id + "' uses different data settings than '" + configs[0].run_id + "'");
    }
    if (!(configs[i].model == configs[0].model)) {
      throw ConfigError("config '" + configs[i].run_id + "' uses a different model than '" + configs[0].run_id + "'");
    }
  }
}

std::vector<CompareRow> compare_runs(const std::vector<ExperimentConfig>& configs,
                                     const std::vector<std::vector<RunResult>>& runs) {
  std::vector<CompareRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::vector<double> acc, lam;
    for (const auto& r : runs.at(i)) {
      acc.push_back(r.final_test.accuracy.value_or(std::nan("")));
      lam.push_back(r.report.eigenvalues.empty() ? std::nan("") : r.report.eigenvalues.front());
    }
    rows.push_back({configs[i].run_id, std::string(variant_name(configs[i].opt.variant)), runs[i].size(),
                    mean_std(acc), mean_std(lam)});
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out = std::string(kCompareHeader) + "\n";
  for (const auto& r : rows) {
    out += r.run_id + "," + r.variant + "," + std::to_string(r.seeds) + "," + format_double(r.test_acc.mean) + "," +
           format_double(r.test_acc.std) + "," + format_double(r.lambda_max.mean) + "," +
           format_double(r.lambda_max.std) + "\n";
  }
  return out;
}

std::vector<CompareRow> compare(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out) {
  check_comparable(configs);
  std::vector<std::vector<RunResult>> runs;
  for (const auto& c : configs) runs.push_back(run_training(c, out));
  auto rows = compare_runs(configs, runs);
  write_file(out / "comparison.csv", compare_csv(rows));
  return rows;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw RangeError("loglog_slope: need two or more matching points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

ConvergenceResult convergence_check(const ExperimentConfig& config) {
  if (config.model.kind != "quadratic") throw ConfigError("convergence check requires model.kind = quadratic");
  const auto seed = config.train.seeds.front();
  ConvergenceResult result;
  for (const auto horizon : config.convergence.horizons) {
    auto [w, spec] = init_model(config, seed);
    const std::size_t dim = spec.param_count();
    OptimizerConfig oc = config.opt;
    const double lr = config.convergence.c / std::sqrt(static_cast<double>(horizon));
    oc.lr = LrSchedule{lr, lr, horizon};
    OptimizerState state = OptimizerState::create(oc, w);
    auto rng = make_rng(seed, "convergence-" + std::to_string(horizon));
    std::normal_distribution<double> normal(0.0, config.data.grad_noise > 0.0 ? config.data.grad_noise : 1.0);
    Batch batch{Tensor({config.train.batch_size, dim}, 0.0), std::vector<int>(config.train.batch_size, 0)};
    double sum = 0.0;
    for (std::int64_t t = 0; t < horizon; ++t) {
      const auto g = quadratic_gradient(w, spec);
      sum += dot(g, g);
      if (config.data.grad_noise > 0.0) {
        for (double& x : batch.features.data()) x = normal(rng);
      }
      w = step(state, w, batch, spec).params;
    }
    result.horizons.push_back(horizon);
    result.avg_sq_grad.push_back(sum / static_cast<double>(horizon));
  }
  std::vector<double> x(result.horizons.begin(), result.horizons.end());
  result.slope = loglog_slope(x, result.avg_sq_grad);
  return result;
}

std::string convergence_text(const ExperimentConfig& config, const ConvergenceResult& result) {
  std::ostringstream os;
  os << "run_id = " << config.run_id << "\n";
  os << "variant = " << variant_name(config.opt.variant) << "\n";
  os << "c = " << format_double(config.convergence.c) << "\n";
  for (std::size_t i = 0; i < result.horizons.size(); ++i) {
    os << "A_" << result.horizons[i] << " = " << format_double(result.avg_sq_grad[i]) << "\n";
  }
  os << "slope = " << format_double(result.slope) << "\n";
  return os.str();
}

LossSlice slice_for(const ExperimentConfig& config, const PreparedData& data, const Checkpoint& checkpoint) {
  const auto spec = init_model(config, checkpoint.seed).second;
  spec.check(checkpoint.params);
  auto rng = make_rng(checkpoint.seed, "slice-directions");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(checkpoint.params.size()), b(checkpoint.params.size());
  for (double& x : a) x = normal(rng);
  for (double& x : b) x = normal(rng);
  return loss_slice(checkpoint.params, spec, data.probe, checkpoint.params.with_values(std::move(a)),
                    checkpoint.params.with_values(std::move(b)), config.probe.grid, config.probe.extent);
}

std::string slice_tsv(const LossSlice& slice) {
  std::string out = "alpha\\beta";
  for (double b : slice.betas) out += "\t" + format_double(b);
  out += "\n";
  for (std::size_t i = 0; i < slice.grid(); ++i) {
    out += format_double(slice.alphas[i]);
    for (std::size_t j = 0; j < slice.grid(); ++j) out += "\t" + format_double(slice.at(i, j));
    out += "\n";
  }
  return out;
}

}  // namespace bsam
