#include "epgn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "epgn/binary_io.hpp"
#include "epgn/error.hpp"
#include "epgn/rng.hpp"

namespace epgn {

namespace fs = std::filesystem;

namespace {

void check_disjoint(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                    const std::string& what) {
  const std::set<std::size_t> sa(a.begin(), a.end());
  for (std::size_t v : b) {
    if (sa.count(v)) throw Error(ErrorKind::OverlappingSplit, what + " share element " + std::to_string(v));
  }
}

void check_unique(const std::vector<std::size_t>& a, const std::string& what) {
  std::set<std::size_t> seen;
  for (std::size_t v : a) {
    if (!seen.insert(v).second) throw Error(ErrorKind::OverlappingSplit, what + " lists " + std::to_string(v) + " twice");
  }
}

}  // namespace

void validate(const Dataset& ds) {
  if (ds.features.rank() != 2 || ds.attributes.rank() != 2) {
    throw Error(ErrorKind::Dimension, "features and attributes must be matrices");
  }
  const std::size_t n = ds.features.rows();
  const std::size_t m = ds.attributes.rows();
  if (ds.labels.size() != n) {
    throw Error(ErrorKind::HeaderMismatch, std::to_string(ds.labels.size()) + " labels for " +
                                               std::to_string(n) + " feature rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.labels[i] >= m) {
      throw Error(ErrorKind::LabelRange, "instance " + std::to_string(i) + " has label " +
                                             std::to_string(ds.labels[i]) + " >= " + std::to_string(m));
    }
  }
  for (const auto* cls : {&ds.seen_classes, &ds.unseen_classes}) {
    for (std::size_t c : *cls) {
      if (c >= m) throw Error(ErrorKind::LabelRange, "class id " + std::to_string(c) + " out of range");
    }
  }
  check_unique(ds.seen_classes, "seen classes");
  check_unique(ds.unseen_classes, "unseen classes");
  check_disjoint(ds.seen_classes, ds.unseen_classes, "seen and unseen classes");
  if (ds.seen_classes.size() + ds.unseen_classes.size() != m) {
    throw Error(ErrorKind::Data, "seen and unseen classes do not cover all " + std::to_string(m) + " classes");
  }
  const std::set<std::size_t> seen(ds.seen_classes.begin(), ds.seen_classes.end());
  const auto check_indices = [&](const std::vector<std::size_t>& idx, bool want_seen,
                                 const std::string& what) {
    check_unique(idx, what);
    for (std::size_t i : idx) {
      if (i >= n) throw Error(ErrorKind::LabelRange, what + " index " + std::to_string(i) + " >= N");
      if (seen.count(ds.labels[i]) != static_cast<std::size_t>(want_seen)) {
        throw Error(ErrorKind::Data, what + " instance " + std::to_string(i) + " has a " +
                                         (want_seen ? "non-seen" : "non-unseen") + " class");
      }
    }
  };
  check_indices(ds.train_idx, true, "train");
  check_indices(ds.test_seen_idx, true, "test_seen");
  check_indices(ds.test_unseen_idx, false, "test_unseen");
  check_disjoint(ds.train_idx, ds.test_seen_idx, "train and test_seen");
  check_disjoint(ds.train_idx, ds.test_unseen_idx, "train and test_unseen");
  check_disjoint(ds.test_seen_idx, ds.test_unseen_idx, "test_seen and test_unseen");
  if (!ds.class_names.empty() && ds.class_names.size() != m) {
    throw Error(ErrorKind::HeaderMismatch, "classes.txt has " + std::to_string(ds.class_names.size()) +
                                               " names for " + std::to_string(m) + " classes");
  }
}

namespace {

void write_matrix(std::ostream& out, const char* magic, const Tensor& t) {
  out.write(magic, 4);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
  for (double v : t.values()) binio::write<float>(out, static_cast<float>(v));
}

Tensor read_matrix(const fs::path& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "missing " + path.string());
  binio::expect_magic(in, magic, path.string());
  const auto rows = binio::read<std::uint32_t>(in, path.string() + " header");
  const auto cols = binio::read<std::uint32_t>(in, path.string() + " header");
  std::vector<double> values(static_cast<std::size_t>(rows) * cols);
  std::vector<float> raw(values.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!in) {
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": header declares " + std::to_string(rows) +
                                               "x" + std::to_string(cols) + " values but the file is shorter");
  }
  in.peek();
  if (!in.eof()) throw Error(ErrorKind::HeaderMismatch, path.string() + ": trailing bytes after matrix");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) {
      throw Error(ErrorKind::Data, path.string() + ": non-finite value at row " + std::to_string(i / cols));
    }
    values[i] = raw[i];
  }
  return Tensor::matrix(rows, cols, std::move(values));
}

std::size_t parse_index(const std::string& line, const fs::path& path, std::size_t lineno) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(line, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || line.find_first_not_of(" \t\r", pos) != std::string::npos || line[0] == '-') {
    throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": not an index: '" + line + "'");
  }
  return static_cast<std::size_t>(v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string serialize_labels(const Dataset& ds) {
  std::ostringstream out;
  for (std::size_t y : ds.labels) out << y << '\n';
  return out.str();
}

std::string serialize_split(const Dataset& ds) {
  std::ostringstream out;
  const auto section = [&](const char* name, const std::vector<std::size_t>& v) {
    out << '[' << name << "]\n";
    for (std::size_t i : v) out << i << '\n';
  };
  section("seen", ds.seen_classes);
  section("unseen", ds.unseen_classes);
  section("test_seen", ds.test_seen_idx);
  section("test_unseen", ds.test_unseen_idx);
  // Only spell out train when it differs from the default rule.
  std::vector<std::size_t> derived;
  const std::set<std::size_t> seen(ds.seen_classes.begin(), ds.seen_classes.end());
  const std::set<std::size_t> ts(ds.test_seen_idx.begin(), ds.test_seen_idx.end());
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (seen.count(ds.labels[i]) && !ts.count(i)) derived.push_back(i);
  }
  if (derived != ds.train_idx) section("train", ds.train_idx);
  return out.str();
}

std::string serialize_matrix(const char* magic, const Tensor& t) {
  std::ostringstream out(std::ios::binary);
  write_matrix(out, magic, t);
  return out.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::MissingFile, "dataset directory " + dir.string() + " not found");
  Dataset ds;
  ds.features = read_matrix(dir / "features.bin", "EPGF");
  ds.attributes = read_matrix(dir / "attributes.bin", "EPGA");

  const fs::path labels_path = dir / "labels.txt";
  std::ifstream labels(labels_path);
  if (!labels) throw Error(ErrorKind::MissingFile, "missing " + labels_path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(labels, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::size_t y = parse_index(t, labels_path, lineno);
    if (y >= ds.attributes.rows()) {
      throw Error(ErrorKind::LabelRange, labels_path.string() + ":" + std::to_string(lineno) +
                                             ": label " + std::to_string(y) + " >= M=" +
                                             std::to_string(ds.attributes.rows()));
    }
    ds.labels.push_back(y);
  }
  if (ds.labels.size() != ds.features.rows()) {
    throw Error(ErrorKind::HeaderMismatch, labels_path.string() + " has " + std::to_string(ds.labels.size()) +
                                               " labels but features.bin has " +
                                               std::to_string(ds.features.rows()) + " rows");
  }

  const fs::path split_path = dir / "split.txt";
  std::ifstream split(split_path);
  if (!split) throw Error(ErrorKind::MissingFile, "missing " + split_path.string());
  std::vector<std::size_t>* target = nullptr;
  bool has_train = false;
  std::set<std::string> sections;
  lineno = 0;
  while (std::getline(split, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      const std::string name = t.substr(1, t.size() - 2);
      if (name == "seen") target = &ds.seen_classes;
      else if (name == "unseen") target = &ds.unseen_classes;
      else if (name == "test_seen") target = &ds.test_seen_idx;
      else if (name == "test_unseen") target = &ds.test_unseen_idx;
      else if (name == "train") { target = &ds.train_idx; has_train = true; }
      else throw Error(ErrorKind::Data, split_path.string() + ":" + std::to_string(lineno) + ": unknown section " + t);
      sections.insert(name);
      continue;
    }
    if (target == nullptr) {
      throw Error(ErrorKind::Data, split_path.string() + ":" + std::to_string(lineno) + ": entry before any section");
    }
    target->push_back(parse_index(t, split_path, lineno));
  }
  for (const char* required : {"seen", "unseen", "test_seen", "test_unseen"}) {
    if (!sections.count(required)) {
      throw Error(ErrorKind::Data, split_path.string() + ": missing [" + std::string(required) + "] section");
    }
  }
  if (!has_train) {
    const std::set<std::size_t> seen(ds.seen_classes.begin(), ds.seen_classes.end());
    const std::set<std::size_t> ts(ds.test_seen_idx.begin(), ds.test_seen_idx.end());
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      if (seen.count(ds.labels[i]) && !ts.count(i)) ds.train_idx.push_back(i);
    }
  }

  const fs::path names_path = dir / "classes.txt";
  if (fs::exists(names_path)) {
    std::ifstream names(names_path);
    while (std::getline(names, line)) {
      const std::string t = trim(line);
      if (!t.empty()) ds.class_names.push_back(t);
    }
  }
  validate(ds);
  return ds;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  validate(ds);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::Io, "cannot create directory " + dir.string());
  write_file(dir / "features.bin", serialize_matrix("EPGF", ds.features));
  write_file(dir / "attributes.bin", serialize_matrix("EPGA", ds.attributes));
  write_file(dir / "labels.txt", serialize_labels(ds));
  write_file(dir / "split.txt", serialize_split(ds));
  if (!ds.class_names.empty()) {
    std::string names;
    for (const auto& n : ds.class_names) names += n + "\n";
    write_file(dir / "classes.txt", names);
  }
}

std::string dataset_digest(const Dataset& ds) {
  std::uint64_t h = fnv1a64(serialize_matrix("EPGF", ds.features));
  h = fnv1a64(serialize_matrix("EPGA", ds.attributes), h);
  h = fnv1a64(serialize_labels(ds), h);
  h = fnv1a64(serialize_split(ds), h);
  for (const auto& n : ds.class_names) h = fnv1a64(n + "\n", h);
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

Dataset normalize_features(const Dataset& ds, NormalizationScope scope) {
  if (scope == NormalizationScope::None) return ds;
  const std::size_t n = ds.features.rows(), d = ds.features.cols();
  std::vector<std::size_t> stat_rows;
  if (scope == NormalizationScope::Train) {
    stat_rows = ds.train_idx;
  } else {
    stat_rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) stat_rows[i] = i;
  }
  if (stat_rows.empty()) throw Error(ErrorKind::Data, "no instances to compute normalization statistics");
  std::vector<double> lo(d, INFINITY), hi(d, -INFINITY);
  for (std::size_t i : stat_rows) {
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], ds.features.at(i, j));
      hi[j] = std::max(hi[j], ds.features.at(i, j));
    }
  }
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double range = hi[j] - lo[j];
      const double v = range > 0.0 ? (ds.features.at(i, j) - lo[j]) / range : 0.0;
      out[i * d + j] = std::clamp(v, 0.0, 1.0);
    }
  }
  Dataset result = ds;
  result.features = Tensor::matrix(n, d, std::move(out));
  return result;
}

void validate(const SynthConfig& cfg) {
  if (cfg.classes == 0 || cfg.per_class == 0 || cfg.feature_dim == 0 || cfg.semantic_dim == 0) {
    throw Error(ErrorKind::Usage, "synthetic dimensions and counts must be >= 1");
  }
  if (cfg.unseen >= cfg.classes) {
    throw Error(ErrorKind::Usage, "unseen count " + std::to_string(cfg.unseen) +
                                      " must be below the class count " + std::to_string(cfg.classes));
  }
  if (!(cfg.noise >= 0.0) || !std::isfinite(cfg.noise)) throw Error(ErrorKind::Usage, "noise must be >= 0");
}

Dataset make_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  const RngStream root(cfg.seed);
  RngStream attr_rng = root.split("attributes");
  RngStream map_rng = root.split("map");
  RngStream noise_rng = root.split("noise");
  const std::size_t m = cfg.classes, k = cfg.semantic_dim, d = cfg.feature_dim, per = cfg.per_class;

  std::vector<double> attrs(m * k);
  for (auto& v : attrs) v = static_cast<double>(static_cast<float>(attr_rng.uniform()));
  std::vector<double> w(d * k);
  const double w_scale = std::sqrt(1.0 / static_cast<double>(k));
  for (auto& v : w) v = w_scale * map_rng.normal();

  const std::size_t n = m * per;
  std::vector<double> x(n * d);
  Dataset ds;
  ds.labels.resize(n);
  for (std::size_t c = 0; c < m; ++c) {
    std::vector<double> mu(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t q = 0; q < k; ++q) mu[j] += w[j * k + q] * attrs[c * k + q];
    }
    for (std::size_t r = 0; r < per; ++r) {
      const std::size_t i = c * per + r;
      ds.labels[i] = c;
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] = mu[j] + cfg.noise * noise_rng.normal();
    }
  }
  // Min-max over the generated set, then round to float precision.
  for (std::size_t j = 0; j < d; ++j) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, x[i * d + j]);
      hi = std::max(hi, x[i * d + j]);
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = range > 0.0 ? (x[i * d + j] - lo) / range : 0.0;
      x[i * d + j] = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
  }
  ds.features = Tensor::matrix(n, d, std::move(x));
  ds.attributes = Tensor::matrix(m, k, std::move(attrs));

  const std::size_t first_unseen = m - cfg.unseen;
  const std::size_t n_train = std::max<std::size_t>(1, (per * 4) / 5);
  for (std::size_t c = 0; c < m; ++c) {
    const bool unseen = c >= first_unseen;
    (unseen ? ds.unseen_classes : ds.seen_classes).push_back(c);
    for (std::size_t r = 0; r < per; ++r) {
      const std::size_t i = c * per + r;
      if (unseen) ds.test_unseen_idx.push_back(i);
      else if (r < n_train) ds.train_idx.push_back(i);
      else ds.test_seen_idx.push_back(i);
    }
  }
  validate(ds);
  return ds;
}

}  // namespace epgn
