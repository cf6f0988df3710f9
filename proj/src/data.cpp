#include "bsam/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "bsam/error.hpp"
#include "bsam/rng.hpp"

namespace bsam {

void Dataset::validate() const {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw ConfigError("dataset features " + shape_str(features.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  if (labels.size() < 2) throw ConfigError("dataset needs at least 2 samples");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ConfigError("label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
    }
  }
  if (!features.all_finite()) throw ConfigError("dataset holds non-finite features");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  const std::size_t d = dim();
  Dataset out;
  out.features = Tensor({indices.size(), d}, 0.0);
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    for (std::size_t j = 0; j < d; ++j) out.features.at(r, j) = features.at(src, j);
    out.labels.push_back(labels[src]);
  }
  out.classes = classes;
  out.provenance = provenance;
  out.seed = seed;
  return out;
}

Batch Dataset::as_batch() const { return Batch{features, labels}; }

std::vector<std::vector<double>> blob_means(std::size_t d, std::size_t classes, double separation) {
  std::vector<std::vector<double>> means(classes, std::vector<double>(d, 0.0));
  if (d >= classes) {
    // Scaled basis vectors: every pair is `separation` apart.
    for (std::size_t k = 0; k < classes; ++k) means[k][k] = separation / std::numbers::sqrt2;
  } else if (d == 1) {
    const double mid = 0.5 * static_cast<double>(classes - 1);
    for (std::size_t k = 0; k < classes; ++k) means[k][0] = separation * (static_cast<double>(k) - mid);
  } else {
    // Regular polygon with side `separation`.
    const double r = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(classes)));
    for (std::size_t k = 0; k < classes; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
      means[k][0] = r * std::cos(a);
      means[k][1] = r * std::sin(a);
    }
  }
  return means;
}

Dataset gen_gaussian_blobs(std::size_t n, std::size_t d, std::size_t classes, double separation, std::uint64_t seed) {
  if (d < 1) throw ConfigError("gen_gaussian_blobs: d must be >= 1");
  if (classes < 2) throw ConfigError("gen_gaussian_blobs: need at least 2 classes");
  if (n < classes) throw ConfigError("gen_gaussian_blobs: n must be >= number of classes");
  if (!(separation > 0.0)) throw ConfigError("gen_gaussian_blobs: separation must be > 0");
  const auto means = blob_means(d, classes, separation);
  auto rng = make_rng(seed, "blobs");
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset out;
  out.features = Tensor({n, d}, 0.0);
  out.labels.resize(n);
  out.classes = classes;
  out.provenance = Provenance::Blobs;
  out.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    out.labels[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < d; ++j) out.features.at(i, j) = means[k][j] + normal(rng);
  }
  return out;
}

std::vector<int> inject_symmetric_noise(std::span<const int> labels, std::size_t classes, double rate,
                                        std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw RangeError("inject_symmetric_noise: rate must be in [0, 1]");
  if (classes < 2) throw ConfigError("inject_symmetric_noise: need at least 2 classes");
  auto rng = make_rng(seed, "label-noise");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> other(0, static_cast<int>(classes) - 2);
  std::vector<int> out(labels.begin(), labels.end());
  for (int& y : out) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw RangeError("inject_symmetric_noise: label " + std::to_string(y) + " out of range");
    }
    // Both draws happen for every label so the stream stays aligned across rates.
    const double u = coin(rng);
    const int r = other(rng);
    if (u < rate) y = r >= y ? r + 1 : r;
  }
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cells;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e;
}

std::size_t resolve_classes(const std::vector<int>& labels, std::optional<std::size_t> classes) {
  const int max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  if (!classes) return static_cast<std::size_t>(max_label) + 1;
  return *classes;
}

}  // namespace

Dataset parse_csv_dataset(const std::string& text, std::optional<std::size_t> classes) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("csv: empty input");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header.back() != "label") {
    throw ParseError("csv line 1: header must be f0,...,f{d-1},label");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw ParseError("csv line 1, column " + std::to_string(j + 1) + ": expected 'f" + std::to_string(j) + "'");
    }
  }
  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != d + 1) {
      throw ParseError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(d + 1) + " columns, got " +
                       std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      double x = 0.0;
      if (!parse_number(cells[j], x) || !std::isfinite(x)) {
        throw ParseError("csv line " + std::to_string(line_no) + ", column " + std::to_string(j + 1) +
                         ": not a finite number: '" + cells[j] + "'");
      }
      values.push_back(x);
    }
    int y = 0;
    if (!parse_number(cells[d], y) || y < 0) {
      throw ParseError("csv line " + std::to_string(line_no) + ", column " + std::to_string(d + 1) +
                       ": label must be a non-negative integer: '" + cells[d] + "'");
    }
    if (classes && static_cast<std::size_t>(y) >= *classes) {
      throw ParseError("csv line " + std::to_string(line_no) + ": label " + std::to_string(y) + " >= class count " +
                       std::to_string(*classes));
    }
    labels.push_back(y);
  }
  Dataset out;
  out.features = Tensor({labels.size(), d}, std::move(values));
  out.labels = std::move(labels);
  out.classes = resolve_classes(out.labels, classes);
  out.provenance = Provenance::Csv;
  if (out.size() < 2) throw ParseError("csv: dataset needs at least 2 rows");
  return out;
}

Dataset load_csv_dataset(const std::filesystem::path& path, std::optional<std::size_t> classes) {
  try {
    return parse_csv_dataset(read_file(path), classes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_csv_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, data.features.at(i, j));
      out.write(buf, p - buf);
      out << ',';
    }
    out << data.labels[i] << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size()) {
    throw ParseError(std::string(what) + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset parse_idx(std::span<const unsigned char> images, std::span<const unsigned char> labels,
                  std::optional<std::size_t> classes) {
  if (read_be32(images, 0, "idx images") != 0x00000803) throw ParseError("idx images: bad magic at offset 0");
  if (read_be32(labels, 0, "idx labels") != 0x00000801) throw ParseError("idx labels: bad magic at offset 0");
  const std::size_t n = read_be32(images, 4, "idx images");
  const std::size_t rows = read_be32(images, 8, "idx images");
  const std::size_t cols = read_be32(images, 12, "idx images");
  const std::size_t nl = read_be32(labels, 4, "idx labels");
  if (n != nl) throw ParseError("idx: image count " + std::to_string(n) + " != label count " + std::to_string(nl));
  const std::size_t d = rows * cols;
  if (images.size() != 16 + n * d) {
    throw ParseError("idx images: expected " + std::to_string(16 + n * d) + " bytes, got " +
                     std::to_string(images.size()));
  }
  if (labels.size() != 8 + n) {
    throw ParseError("idx labels: expected " + std::to_string(8 + n) + " bytes, got " + std::to_string(labels.size()));
  }
  Dataset out;
  out.features = Tensor({n, d}, 0.0);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.features.at(i, j) = images[16 + i * d + j] / 255.0;
    const int y = labels[8 + i];
    if (classes && static_cast<std::size_t>(y) >= *classes) {
      throw ParseError("idx labels: label " + std::to_string(y) + " at offset " + std::to_string(8 + i) +
                       " >= class count " + std::to_string(*classes));
    }
    out.labels[i] = y;
  }
  out.classes = resolve_classes(out.labels, classes);
  out.provenance = Provenance::Idx;
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<std::size_t> classes) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  auto as_bytes = [](const std::string& s) {
    return std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size());
  };
  return parse_idx(as_bytes(img), as_bytes(lab), classes);
}

Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw RangeError("split: test fraction must be in [0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_rng(seed, "split");
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - test_fraction)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t b, std::uint64_t epoch_seed) {
  if (b < 1) throw ConfigError("batches: batch size must be >= 1");
  if (b > n) throw ConfigError("batches: batch size " + std::to_string(b) + " exceeds dataset size " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_rng(epoch_seed, "epoch-permutation");
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t end = std::min(n, start + b);
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start), idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<Batch> batches(const Dataset& data, std::size_t b, std::uint64_t epoch_seed) {
  std::vector<Batch> out;
  for (const auto& chunk : batch_indices(data.size(), b, epoch_seed)) out.push_back(data.subset(chunk).as_batch());
  return out;
}

}  // namespace bsam
