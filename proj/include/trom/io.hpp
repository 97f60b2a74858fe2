#pragma once

// File formats shared by the command-line tool.
//
//   students.csv      student_id, z_*, outside_value, group, guaranteed_school_id,
//                     location_x, location_y
//   alternatives.csv  student_id, school_id, x_*, admit_prob
//   rols.csv          student_id, rank, school_id
//   schools.csv       school_id, capacity, is_public, score, location_x, location_y
//   priorities.csv    student_id, school_id            (optional)
//   assignment.csv    student_id, school_id, via, rank_position
//
// CSVs are RFC-4180 style with a mandatory header; floats are written with 17
// significant digits.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trom/estimation.hpp"
#include "trom/matching.hpp"
#include "trom/model.hpp"
#include "trom/parallel.hpp"
#include "trom/simulation.hpp"

namespace trom::io {

/// Input file violates its schema; the message carries file and line.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string format_double(double v);

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // source line of each row

  std::optional<std::size_t> column(const std::string& name) const;
  std::size_t require(const std::string& name) const;
  double number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;
  [[noreturn]] void fail(std::size_t row, const std::string& what) const;
};

CsvTable parse_csv(std::istream& in, const std::string& name);
CsvTable read_csv(const std::filesystem::path& path);
void write_csv_row(std::ostream& os, const std::vector<std::string>& fields);

struct StudentExtras {
  Group group = Group::low;
  std::optional<SchoolId> guaranteed;
  double x = 0.0, y = 0.0;
};

struct DatasetFiles {
  ChoiceDataset data;
  std::map<StudentId, StudentExtras> extras;
};

DatasetFiles read_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const ChoiceDataset& data,
                   const std::map<StudentId, StudentExtras>& extras = {});
void write_eps(const std::filesystem::path& file, const SimulatedData& sim);

/// Market from schools.csv, students.csv, rols.csv and optional priorities.csv.
Market read_market(const std::filesystem::path& dir, std::uint64_t lottery_seed);
void write_assignment(std::ostream& os, const Assignment& a, const Market& market);
Assignment read_assignment(const std::filesystem::path& file, const Market& market);

// ---------------------------------------------------------------------------
// Configuration

inline constexpr int kSchemaVersion = 1;

struct PredictSettings {
  double tau = 0.5;
  std::optional<MarginSpec> margin;
};

struct CounterfactualSettings {
  CovariateEdit edit;
};

struct BootstrapSettings {
  std::size_t replicates = 200;
  double level = 0.90;
  int random_starts = 0;
};

struct RunConfig {
  int version = kSchemaVersion;
  std::optional<std::uint64_t> seed;
  std::size_t threads = default_threads();
  bool debug = false;
  std::optional<SimDesign> design;
  MleConfig mle{};
  EmConfig em{};
  BootstrapSettings bootstrap{};
  PredictSettings predict{};
  std::optional<CounterfactualSettings> counterfactual;
  std::optional<std::uint64_t> lottery_seed;

  std::uint64_t require_seed(const char* command) const;
};

/// Parses and validates a config document; unknown keys are rejected.
RunConfig parse_config(const nlohmann::json& j);
RunConfig read_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Results

nlohmann::json params_to_json(const ThresholdParams& p, const ChoiceDataset& data);
ThresholdParams params_from_json(const nlohmann::json& j);
nlohmann::json fit_to_json(const FitResult& fit, const ChoiceDataset& data);
void add_intervals(nlohmann::json& out, const BootstrapResult& boot);

/// Reads the "params" block of a results file written by fit/em-fit/bootstrap.
ThresholdParams read_params(const std::filesystem::path& file);

}  // namespace trom::io
