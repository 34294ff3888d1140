#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

#include "cbiv/dataset.hpp"
#include "cbiv/errors.hpp"

namespace cbiv {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s, std::size_t line, const std::string& column) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("cannot parse value '" + std::string(s) + "' in column \"" + column + "\"", line);
  }
  return v;
}

// Parses names of the form <prefix><index>; returns -1 on mismatch.
int indexed(std::string_view name, std::string_view prefix) {
  if (name.size() <= prefix.size() || name.substr(0, prefix.size()) != prefix) return -1;
  int idx = -1;
  auto rest = name.substr(prefix.size());
  auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), idx);
  if (ec != std::errc() || ptr != rest.data() + rest.size()) return -1;
  return idx;
}

}  // namespace

void write_csv(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_csv: cannot open " + path);
  std::string header;
  for (Eigen::Index j = 0; j < ds.z.cols(); ++j) header += "z" + std::to_string(j) + ",";
  for (Eigen::Index j = 0; j < ds.x.cols(); ++j) header += "x" + std::to_string(j) + ",";
  header += "t,y";
  if (ds.binary_oracle) header += ",oracle_mu0,oracle_mu1,oracle_p";
  if (ds.continuous_oracle) header += ",oracle_x1,oracle_x2";
  out << header << '\n';
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    std::string row;
    for (Eigen::Index j = 0; j < ds.z.cols(); ++j) row += fmt17(ds.z(i, j)) + ",";
    for (Eigen::Index j = 0; j < ds.x.cols(); ++j) row += fmt17(ds.x(i, j)) + ",";
    row += fmt17(ds.t(i)) + "," + fmt17(ds.y(i));
    if (ds.binary_oracle) {
      row += "," + fmt17(ds.binary_oracle->mu0(i)) + "," + fmt17(ds.binary_oracle->mu1(i)) + "," +
             fmt17(ds.binary_oracle->propensity(i));
    }
    if (ds.continuous_oracle) {
      row += "," + fmt17(ds.continuous_oracle->x1(i)) + "," + fmt17(ds.continuous_oracle->x2(i));
    }
    out << row << '\n';
  }
  if (!out) throw IoError("write_csv: write failed for " + path);
}

Dataset read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto names = split_line(line);
  std::map<std::string, std::size_t> column;
  int max_z = -1, max_x = -1;
  for (std::size_t c = 0; c < names.size(); ++c) {
    const std::string name(names[c]);
    if (column.count(name)) throw ParseError("duplicate column \"" + name + "\"", 1);
    column[name] = c;
    if (int k = indexed(name, "z"); k >= 0) max_z = std::max(max_z, k);
    else if (int k2 = indexed(name, "x"); k2 >= 0) max_x = std::max(max_x, k2);
    else if (name != "t" && name != "y" && name.rfind("oracle_", 0) != 0) {
      throw ParseError("unexpected column \"" + name + "\"", 1);
    }
  }
  for (const char* req : {"t", "y"}) {
    if (!column.count(req)) throw ParseError(std::string("missing column \"") + req + "\"", 1);
  }
  for (int k = 0; k <= max_z; ++k) {
    if (!column.count("z" + std::to_string(k))) throw ParseError("missing column \"z" + std::to_string(k) + "\"", 1);
  }
  if (max_x < 0) throw ParseError("missing column \"x0\"", 1);
  for (int k = 0; k <= max_x; ++k) {
    if (!column.count("x" + std::to_string(k))) throw ParseError("missing column \"x" + std::to_string(k) + "\"", 1);
  }
  const bool bin_oracle = column.count("oracle_mu0") || column.count("oracle_mu1") || column.count("oracle_p");
  const bool cont_oracle = column.count("oracle_x1") || column.count("oracle_x2");
  if (bin_oracle) {
    for (const char* req : {"oracle_mu0", "oracle_mu1", "oracle_p"})
      if (!column.count(req)) throw ParseError(std::string("missing column \"") + req + "\"", 1);
  }
  if (cont_oracle) {
    for (const char* req : {"oracle_x1", "oracle_x2"})
      if (!column.count(req)) throw ParseError(std::string("missing column \"") + req + "\"", 1);
  }
  if (bin_oracle && cont_oracle) throw ParseError("both binary and continuous oracle columns present", 1);

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != names.size()) {
      throw ParseError("expected " + std::to_string(names.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    std::vector<double> values(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) values[c] = parse_double(fields[c], line_no, std::string(names[c]));
    rows.push_back(std::move(values));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  Dataset ds;
  ds.z.resize(n, max_z + 1);
  ds.x.resize(n, max_x + 1);
  ds.t.resize(n);
  ds.y.resize(n);
  auto col = [&](const std::string& name, Eigen::Index i) { return rows[static_cast<std::size_t>(i)][column.at(name)]; };
  bool all_binary = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k <= max_z; ++k) ds.z(i, k) = col("z" + std::to_string(k), i);
    for (int k = 0; k <= max_x; ++k) ds.x(i, k) = col("x" + std::to_string(k), i);
    ds.t(i) = col("t", i);
    ds.y(i) = col("y", i);
    all_binary = all_binary && (ds.t(i) == 0.0 || ds.t(i) == 1.0);
  }
  if (bin_oracle) {
    BinaryOracle o{Vector(n), Vector(n), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      o.mu0(i) = col("oracle_mu0", i);
      o.mu1(i) = col("oracle_mu1", i);
      o.propensity(i) = col("oracle_p", i);
    }
    ds.binary_oracle = std::move(o);
  }
  if (cont_oracle) {
    ContinuousOracle o{Vector(n), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      o.x1(i) = col("oracle_x1", i);
      o.x2(i) = col("oracle_x2", i);
    }
    ds.continuous_oracle = std::move(o);
  }
  if (bin_oracle) ds.kind = TreatmentKind::Binary;
  else if (cont_oracle) ds.kind = TreatmentKind::Continuous;
  else ds.kind = all_binary ? TreatmentKind::Binary : TreatmentKind::Continuous;
  if (bin_oracle && !all_binary) throw ParseError("binary oracle with non-binary t", 1);
  ds.validate();
  return ds;
}

}  // namespace cbiv
