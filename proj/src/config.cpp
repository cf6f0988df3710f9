#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "bsam/error.hpp"
#include "bsam/experiment.hpp"

namespace bsam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string where(const std::string& key, int line) { return "line " + std::to_string(line) + ": key '" + key + "'"; }

double to_double(const std::string& key, int line, const std::string& v) {
  double x = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(where(key, line) + ": not a number: '" + v + "'");
  return x;
}

std::int64_t to_int(const std::string& key, int line, const std::string& v) {
  std::int64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(where(key, line) + ": not an integer: '" + v + "'");
  return x;
}

std::uint64_t to_count(const std::string& key, int line, const std::string& v) {
  const auto x = to_int(key, line, v);
  if (x < 0) throw ConfigError(where(key, line) + ": must be >= 0");
  return static_cast<std::uint64_t>(x);
}

bool to_bool(const std::string& key, int line, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where(key, line) + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, int line, const std::string& value)>;

template <class F>
Setter num(F f) {
  return [f](ExperimentConfig& c, const std::string& k, int l, const std::string& v) { f(c) = to_double(k, l, v); };
}
template <class F>
Setter count(F f) {
  return [f](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
    f(c) = static_cast<std::remove_reference_t<decltype(f(c))>>(to_count(k, l, v));
  };
}
template <class F>
Setter text(F f) {
  return [f](ExperimentConfig& c, const std::string&, int, const std::string& v) { f(c) = v; };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run_id", text([](ExperimentConfig& c) -> std::string& { return c.run_id; })},
      {"model.kind", text([](ExperimentConfig& c) -> std::string& { return c.model.kind; })},
      {"model.layers",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         c.model.layers.clear();
         for (const auto& s : split_list(v)) c.model.layers.push_back(to_count(k, l, s));
       }},
      {"model.diag",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         c.model.diag.clear();
         for (const auto& s : split_list(v)) c.model.diag.push_back(to_double(k, l, s));
       }},
      {"model.init",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         c.model.init.clear();
         for (const auto& s : split_list(v)) c.model.init.push_back(to_double(k, l, s));
       }},
      {"model.sharp_min", num([](ExperimentConfig& c) -> double& { return c.model.sharp_min; })},
      {"model.flat_min", num([](ExperimentConfig& c) -> double& { return c.model.flat_min; })},
      {"model.kappa_sharp", num([](ExperimentConfig& c) -> double& { return c.model.kappa_sharp; })},
      {"model.kappa_flat", num([](ExperimentConfig& c) -> double& { return c.model.kappa_flat; })},
      {"data.source", text([](ExperimentConfig& c) -> std::string& { return c.data.source; })},
      {"data.n", count([](ExperimentConfig& c) -> std::size_t& { return c.data.n; })},
      {"data.dim", count([](ExperimentConfig& c) -> std::size_t& { return c.data.dim; })},
      {"data.classes", count([](ExperimentConfig& c) -> std::size_t& { return c.data.classes; })},
      {"data.separation", num([](ExperimentConfig& c) -> double& { return c.data.separation; })},
      {"data.seed", count([](ExperimentConfig& c) -> std::uint64_t& { return c.data.seed; })},
      {"data.label_noise", num([](ExperimentConfig& c) -> double& { return c.data.label_noise; })},
      {"data.test_fraction", num([](ExperimentConfig& c) -> double& { return c.data.test_fraction; })},
      {"data.csv", text([](ExperimentConfig& c) -> std::string& { return c.data.csv; })},
      {"data.idx_images", text([](ExperimentConfig& c) -> std::string& { return c.data.idx_images; })},
      {"data.idx_labels", text([](ExperimentConfig& c) -> std::string& { return c.data.idx_labels; })},
      {"data.grad_noise", num([](ExperimentConfig& c) -> double& { return c.data.grad_noise; })},
      {"opt.variant",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         try {
           c.opt.variant = parse_variant(v);
         } catch (const ConfigError& e) {
           throw ConfigError(where(k, l) + ": " + e.what());
         }
       }},
      {"opt.lr_max", num([](ExperimentConfig& c) -> double& { return c.opt.lr.lr_max; })},
      {"opt.lr_min", num([](ExperimentConfig& c) -> double& { return c.opt.lr.lr_min; })},
      {"opt.momentum", num([](ExperimentConfig& c) -> double& { return c.opt.momentum; })},
      {"opt.weight_decay", num([](ExperimentConfig& c) -> double& { return c.opt.weight_decay; })},
      {"opt.rho_max", num([](ExperimentConfig& c) -> double& { return c.opt.rho_max; })},
      {"opt.rho_min_hat", num([](ExperimentConfig& c) -> double& { return c.opt.rho_min.rho_hat; })},
      {"opt.rho_min_check", num([](ExperimentConfig& c) -> double& { return c.opt.rho_min.rho_check; })},
      {"opt.p_norm", num([](ExperimentConfig& c) -> double& { return c.opt.p_norm; })},
      {"opt.zero_grad_eps", num([](ExperimentConfig& c) -> double& { return c.opt.zero_grad_eps; })},
      {"train.epochs",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         c.train.epochs = static_cast<int>(to_int(k, l, v));
       }},
      {"train.batch_size", count([](ExperimentConfig& c) -> std::size_t& { return c.train.batch_size; })},
      {"train.seeds",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         c.train.seeds.clear();
         for (const auto& s : split_list(v)) c.train.seeds.push_back(to_count(k, l, s));
       }},
      {"train.trace",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) { c.train.trace = to_bool(k, l, v); }},
      {"probe.k", count([](ExperimentConfig& c) -> std::size_t& { return c.probe.k; })},
      {"probe.iters",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         c.probe.iters = static_cast<int>(to_int(k, l, v));
       }},
      {"probe.tol", num([](ExperimentConfig& c) -> double& { return c.probe.tol; })},
      {"probe.batch_cap", count([](ExperimentConfig& c) -> std::size_t& { return c.probe.batch_cap; })},
      {"probe.grid", count([](ExperimentConfig& c) -> std::size_t& { return c.probe.grid; })},
      {"probe.extent", num([](ExperimentConfig& c) -> double& { return c.probe.extent; })},
      {"probe.rho",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) { c.probe.rho = to_double(k, l, v); }},
      {"convergence.c", num([](ExperimentConfig& c) -> double& { return c.convergence.c; })},
      {"convergence.horizons",
       [](ExperimentConfig& c, const std::string& k, int l, const std::string& v) {
         c.convergence.horizons.clear();
         for (const auto& s : split_list(v)) c.convergence.horizons.push_back(to_int(k, l, s));
       }},
  };
  return table;
}

// Error for an invariant on `key`, citing the line it was set on.
[[noreturn]] void invalid(const ExperimentConfig& c, const std::string& key, const std::string& what) {
  const auto it = c.key_lines.find(key);
  const std::string loc = it == c.key_lines.end() ? "default value" : "line " + std::to_string(it->second);
  throw ConfigError(loc + ": key '" + key + "': " + what);
}

void validate(const ExperimentConfig& c) {
  for (const char* key : {"model.kind", "opt.variant"}) {
    if (!c.key_lines.count(key)) throw ConfigError("missing required key '" + std::string(key) + "'");
  }
  const auto& m = c.model;
  if (m.kind == "mlp") {
    if (!c.key_lines.count("model.layers")) throw ConfigError("missing required key 'model.layers' for an mlp model");
    if (m.layers.size() < 2) invalid(c, "model.layers", "an MLP needs at least 2 layer sizes");
    for (auto s : m.layers) {
      if (s == 0) invalid(c, "model.layers", "layer sizes must be positive");
    }
  } else if (m.kind == "quadratic") {
    if (m.diag.empty()) invalid(c, "model.diag", "a quadratic model needs a Hessian diagonal");
    for (double d : m.diag) {
      if (!(d >= 0.0)) invalid(c, "model.diag", "Hessian diagonal entries must be >= 0");
    }
    if (!m.init.empty() && m.init.size() != m.diag.size()) invalid(c, "model.init", "length must match model.diag");
  } else if (m.kind == "double_well") {
    if (!(m.kappa_flat > 0.0) || !(m.kappa_sharp >= 10.0 * m.kappa_flat)) {
      invalid(c, "model.kappa_sharp", "double well needs kappa_sharp >= 10 * kappa_flat > 0");
    }
    if (m.sharp_min == m.flat_min) invalid(c, "model.flat_min", "minima must be distinct");
    if (!m.init.empty() && m.init.size() != 1) invalid(c, "model.init", "double well takes one starting value");
  } else {
    invalid(c, "model.kind", "expected mlp, quadratic or double_well, got '" + m.kind + "'");
  }

  const auto& d = c.data;
  if (d.source != "blobs" && d.source != "csv" && d.source != "idx") {
    invalid(c, "data.source", "expected blobs, csv or idx, got '" + d.source + "'");
  }
  if (d.source == "csv" && d.csv.empty()) invalid(c, "data.csv", "required when data.source = csv");
  if (d.source == "idx" && (d.idx_images.empty() || d.idx_labels.empty())) {
    invalid(c, "data.idx_images", "data.idx_images and data.idx_labels are required when data.source = idx");
  }
  if (d.n < 2) invalid(c, "data.n", "must be >= 2");
  if (d.dim < 1) invalid(c, "data.dim", "must be >= 1");
  if (d.classes < 2) invalid(c, "data.classes", "must be >= 2");
  if (!(d.separation > 0.0)) invalid(c, "data.separation", "must be > 0");
  if (!(d.label_noise >= 0.0 && d.label_noise <= 1.0)) invalid(c, "data.label_noise", "must be in [0, 1]");
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) invalid(c, "data.test_fraction", "must be in (0, 1)");
  if (!(d.grad_noise >= 0.0)) invalid(c, "data.grad_noise", "must be >= 0");

  const auto& o = c.opt;
  if (!(o.lr.lr_min >= 0.0)) invalid(c, "opt.lr_min", "must be >= 0");
  if (!(o.lr.lr_max >= o.lr.lr_min)) invalid(c, "opt.lr_max", "must be >= opt.lr_min");
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) invalid(c, "opt.momentum", "must be in [0, 1)");
  if (!(o.weight_decay >= 0.0)) invalid(c, "opt.weight_decay", "must be >= 0");
  if (!(o.rho_max >= 0.0)) invalid(c, "opt.rho_max", "must be >= 0");
  if (!(o.rho_min.rho_check >= 0.0)) invalid(c, "opt.rho_min_check", "must be >= 0");
  if (!(o.rho_min.rho_hat >= o.rho_min.rho_check)) invalid(c, "opt.rho_min_hat", "must be >= opt.rho_min_check");
  if (!(o.p_norm > 1.0)) invalid(c, "opt.p_norm", "must be > 1");
  if (!(o.zero_grad_eps >= 0.0)) invalid(c, "opt.zero_grad_eps", "must be >= 0");

  if (c.train.epochs < 1) invalid(c, "train.epochs", "must be >= 1");
  if (c.train.batch_size < 1) invalid(c, "train.batch_size", "must be >= 1");
  if (c.train.seeds.empty()) invalid(c, "train.seeds", "must list at least one seed");
  if (c.probe.iters < 1) invalid(c, "probe.iters", "must be >= 1");
  if (!(c.probe.tol > 0.0)) invalid(c, "probe.tol", "must be > 0");
  if (c.probe.batch_cap < 1) invalid(c, "probe.batch_cap", "must be >= 1");
  if (c.probe.grid < 3 || c.probe.grid % 2 == 0) invalid(c, "probe.grid", "must be odd and >= 3");
  if (!(c.probe.extent > 0.0)) invalid(c, "probe.extent", "must be > 0");
  if (c.probe.rho && !(*c.probe.rho >= 0.0)) invalid(c, "probe.rho", "must be >= 0");
  if (!(c.convergence.c > 0.0)) invalid(c, "convergence.c", "must be > 0");
  if (c.convergence.horizons.size() < 2) invalid(c, "convergence.horizons", "needs at least two horizons");
  for (auto t : c.convergence.horizons) {
    if (t < 1) invalid(c, "convergence.horizons", "horizons must be >= 1");
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where(key, line_no) + ": unknown key");
    if (c.key_lines.count(key)) {
      throw ConfigError(where(key, line_no) + ": duplicate key (first set on line " +
                        std::to_string(c.key_lines[key]) + ")");
    }
    if (value.empty()) throw ConfigError(where(key, line_no) + ": empty value");
    it->second(c, key, line_no, value);
    c.key_lines[key] = line_no;
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace bsam
