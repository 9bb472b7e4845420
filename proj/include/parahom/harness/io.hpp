#ifndef PARAHOM_HARNESS_IO_HPP
#define PARAHOM_HARNESS_IO_HPP

// Artifact writers. Every artifact records the config hash; CSV files are
// deterministic, JSON reports carry the only timestamp.

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace parahom::harness {

using json = nlohmann::json;

/// Column-oriented CSV table; numbers are written with 17 significant digits.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& row(std::vector<json> cells);
  std::size_t rows() const { return rows_.size(); }
  std::string str(const std::string& config_hash) const;
  void write(const std::string& path, const std::string& config_hash) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<json>> rows_;
};

std::string format_number(double v);

/// Creates the directory (and parents) if needed.
void ensure_directory(const std::string& dir);
std::string join_path(const std::string& dir, const std::string& file);

/// Writes `report` with schema, config hash and timestamp fields added.
void write_json_report(const std::string& path, json report, const std::string& config_hash);

/// Raw little-endian float64, column-major, plus a JSON sidecar (path + ".json")
/// describing shape and metadata.
void write_binary_matrix(const std::string& path, const Eigen::MatrixXd& m, json meta,
                         const std::string& config_hash);
Eigen::MatrixXd read_binary_matrix(const std::string& path);

json to_json(const Eigen::MatrixXd& m);
json to_json(const Eigen::VectorXd& v);

}  // namespace parahom::harness

#endif  // PARAHOM_HARNESS_IO_HPP
