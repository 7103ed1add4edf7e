#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcgp/core.hpp"
#include "lcgp/model.hpp"

namespace lcgp {

namespace fs = std::filesystem;

// Malformed input; the message carries file and line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One sample per CSV file. The header names the input columns ("x" or
/// "x1,x2", ...) followed by the channel names; each row is one input point.
struct SampleTable {
  MatrixXd x;  // N x d
  MatrixXd y;  // M x N
  std::vector<std::string> channel_names;
};

SampleTable read_sample_csv(const fs::path& path);
void write_sample_csv(const fs::path& path, const MatrixXd& x, const MatrixXd& y,
                      const std::vector<std::string>& channel_names);

// All files must share inputs and channel names.
Dataset read_dataset(const std::vector<fs::path>& paths);

// Two columns: sample id (0-based, or the file stem) and label in {-1, +1}.
VectorXd read_labels(const fs::path& path, const std::vector<fs::path>& sample_paths);
void write_labels(const fs::path& path, const VectorXd& labels);

/// Jura geochemistry tables in GSLIB or CSV layout. Locations Xloc, Yloc
/// become the inputs; Cd, Ni and Zn the three channels.
Dataset read_jura(const fs::path& path);

void write_matrix_csv(const fs::path& path, const MatrixXd& m,
                      const std::vector<std::string>& header = {});
MatrixXd read_matrix_csv(const fs::path& path, bool has_header = true);

// Self-describing binary archive of a fitted model.
void save_model(const fs::path& path, const FittedModel& model);
FittedModel load_model(const fs::path& path);

/// Flat key = value configuration shared by the CLI and config files.
struct RunConfig {
  std::string command;
  std::vector<std::string> data;
  std::string labels;
  std::vector<std::string> validation;
  Index q = 2;
  Index nu = 0;
  double lu = 0.5;
  double lb = 1.0;
  double lz = 1.0;
  bool classify = false;
  unsigned long seed = 0;
  int max_iters = 200;
  double tol = 1e-6;
  std::string out = ".";
  std::string model;
  std::string preset;
  std::string format = "csv";
  Index samples = 10;
  Index points = 0;
  bool map_inputs = false;

  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  bool operator==(const RunConfig&) const = default;
};

}  // namespace lcgp
