#include "parahom/harness/io.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace parahom::harness {

namespace {

std::string csv_cell(const json& c) {
  if (c.is_number_integer() || c.is_number_unsigned()) return c.dump();
  if (c.is_number_float()) return format_number(c.get<double>());
  if (c.is_boolean()) return c.get<bool>() ? "true" : "false";
  if (c.is_null()) return "";
  std::string s = c.is_string() ? c.get<std::string>() : c.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const std::string& path, const std::string& content, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvTable& CsvTable::row(std::vector<json> cells) {
  if (cells.size() != header_.size()) throw std::invalid_argument("CsvTable: row width does not match the header");
  rows_.push_back(std::move(cells));
  return *this;
}

std::string CsvTable::str(const std::string& config_hash) const {
  std::ostringstream os;
  os << "# config_hash=" << config_hash << "\n";
  for (std::size_t i = 0; i < header_.size(); ++i) os << (i ? "," : "") << header_[i];
  os << "\n";
  for (const auto& r : rows_) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_cell(r[i]);
    os << "\n";
  }
  return os.str();
}

void CsvTable::write(const std::string& path, const std::string& config_hash) const {
  write_file(path, str(config_hash));
}

void ensure_directory(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& file) {
  return dir.empty() ? file : (std::filesystem::path(dir) / file).string();
}

void write_json_report(const std::string& path, json report, const std::string& config_hash) {
  report["schema_version"] = 1;
  report["config_hash"] = config_hash;
  report["generated_at"] = utc_timestamp();
  write_file(path, report.dump(2) + "\n");
}

void write_binary_matrix(const std::string& path, const Eigen::MatrixXd& m, json meta,
                         const std::string& config_hash) {
  static_assert(std::endian::native == std::endian::little, "binary artifacts assume a little-endian host");
  std::string bytes(std::size_t(m.size()) * sizeof(double), '\0');
  std::copy_n(reinterpret_cast<const char*>(m.data()), bytes.size(), bytes.data());
  write_file(path, bytes, true);
  json side = {{"file", std::filesystem::path(path).filename().string()},
               {"dtype", "float64"},
               {"byte_order", "little"},
               {"order", "column-major"},
               {"rows", m.rows()},
               {"cols", m.cols()},
               {"meta", std::move(meta)},
               {"config_hash", config_hash}};
  write_file(path + ".json", side.dump(2) + "\n");
}

Eigen::MatrixXd read_binary_matrix(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("missing sidecar for '" + path + "'");
  const json meta = json::parse(side);
  Eigen::MatrixXd m(meta.at("rows").get<Eigen::Index>(), meta.at("cols").get<Eigen::Index>());
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(m.data()), std::streamsize(m.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated binary artifact '" + path + "'");
  return m;
}

json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace parahom::harness
