#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace cpnoise {

enum class TaskKind { classification, regression, multi_label, segmentation };

// Feature matrix plus one response column. Classification stores labels in
// y_class, regression in y_real; exactly one is populated.
struct Dataset {
  TaskKind kind = TaskKind::classification;
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> x;  // n*d, row-major
  std::vector<int> y_class;
  std::vector<double> y_real;

  const double* row(std::size_t i) const { return x.data() + i * d; }
};

namespace csvio {

// Locale-independent shortest round-trip formatting, so emitted files are
// byte-identical across runs.
inline std::string format(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw std::runtime_error("csv: format failure");
  return std::string(buf, res.ptr);
}

inline std::string format(int v) { return std::to_string(v); }
inline std::string format(long v) { return std::to_string(v); }
inline std::string format(std::size_t v) { return std::to_string(v); }

}  // namespace csvio

// One row per sample: features..., label. Deterministic bytes.
inline void dump_csv(const Dataset& ds, std::ostream& os) {
  for (std::size_t j = 0; j < ds.d; ++j) os << "x" << j << ",";
  os << "y\n";
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < ds.d; ++j) {
      os << csvio::format(ds.x[i * ds.d + j]) << ",";
    }
    if (ds.kind == TaskKind::classification) {
      os << ds.y_class[i];
    } else {
      os << csvio::format(ds.y_real[i]);
    }
    os << "\n";
  }
}

inline void dump_csv(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  dump_csv(ds, f);
}

inline Dataset load_csv(std::istream& is, TaskKind kind) {
  Dataset ds;
  ds.kind = kind;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty file");
  std::size_t cols = 1;
  for (char ch : line) {
    if (ch == ',') ++cols;
  }
  if (cols < 2) throw std::runtime_error("csv: need features and a label");
  ds.d = cols - 1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    if (values.size() != cols) throw std::runtime_error("csv: ragged row");
    for (std::size_t j = 0; j + 1 < values.size(); ++j) ds.x.push_back(values[j]);
    if (kind == TaskKind::classification) {
      ds.y_class.push_back(static_cast<int>(values.back()));
    } else {
      ds.y_real.push_back(values.back());
    }
    ++ds.n;
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, TaskKind kind) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return load_csv(f, kind);
}

}  // namespace cpnoise
