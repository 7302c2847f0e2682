#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtla/policy.hpp"

namespace vtla {

/// A prediction converges when every axis is within its tolerance of the label.
struct AxisTolerance {
  double x = 0.05;   // mm
  double y = 0.05;   // mm
  double rz = 0.25;  // deg
};

bool within_tolerance(const Action& pred, const Action& label, const AxisTolerance& tol = {});
/// Percentage of predictions within tolerance. Throws on length mismatch or empty input.
double goal_convergence_rate(std::span<const Action> preds, std::span<const Action> labels,
                             const AxisTolerance& tol = {});
/// Mean absolute error per axis {x, y, rz}. Throws on length mismatch or empty input.
std::array<double, 3> l1_per_axis(std::span<const Action> preds, std::span<const Action> labels);

struct DatasetMetrics {
  std::size_t count = 0;
  double gcr = 0.0;  // percent
  double l1_x = 0.0;
  double l1_y = 0.0;
  double l1_rz = 0.0;
};

DatasetMetrics compute_metrics(std::span<const Action> preds, std::span<const Action> labels,
                               const AxisTolerance& tol = {});

struct DatasetReport {
  std::string method;
  std::optional<DatasetMetrics> id;
  std::optional<DatasetMetrics> ood;
};

/// Scores predictions against the samples' detokenized labels, grouped by split.
DatasetReport score_predictions(const std::vector<InstructionSample>& samples,
                                std::span<const Action> preds, std::string method);

/// Greedy predictions of `model` on every sample, scored against the
/// detokenized labels and grouped by split.
DatasetReport evaluate_dataset(const PolicyModel& model, const std::vector<InstructionSample>& samples,
                               std::span<const LabeledExample> examples, std::string method,
                               int workers = 1);

struct CellSpec {
  ShapeKind shape = ShapeKind::kSquare;
  double clearance_mm = 2.0;
  bool operator==(const CellSpec&) const = default;
};

/// "full" (five shapes x {2.0, 1.6, 1.0, 0.6}), "square" (square x the four
/// clearances), "shapes" (five shapes at 2.0 mm) or a single cell "SHAPE@MM".
std::vector<CellSpec> grid_preset(std::string_view name);

struct CellResult {
  CellSpec cell;
  int trials = 0;
  int successes = 0;
  int errors = 0;  // trials aborted by a policy failure
  /// Mean attempts over successful trials only; empty when none succeeded.
  std::optional<double> avg_steps;
  /// Mean attempts over every completed trial, failures counted at their budget.
  std::optional<double> avg_steps_all;

  double success_rate() const { return trials > 0 ? 100.0 * successes / trials : 0.0; }
};

struct InsertionTable {
  std::string method;
  int trials_per_cell = 0;
  std::uint64_t seed = 0;
  std::vector<CellResult> cells;
};

/// Builds one policy per trial from the trial seed.
using PolicyFactory = std::function<std::unique_ptr<Policy>(std::uint64_t trial_seed)>;

/// Seed of one trial; shared by every method so all see identical initial states.
std::uint64_t trial_seed(std::uint64_t seed, ShapeKind shape, double clearance_mm, int trial);

InsertionTable insertion_benchmark(const PolicyFactory& factory, std::span<const CellSpec> cells,
                                   int trials, std::uint64_t seed, int workers, std::string method);

enum class ReportFormat { kText, kMarkdown, kCsv, kJson };
ReportFormat parse_report_format(std::string_view name);

nlohmann::json to_json(const DatasetReport& r);
DatasetReport dataset_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InsertionTable& t);
InsertionTable insertion_table_from_json(const nlohmann::json& j);

std::string render_dataset_reports(std::span<const DatasetReport> reports, ReportFormat fmt);
std::string render_insertion_tables(std::span<const InsertionTable> tables, ReportFormat fmt);

}  // namespace vtla
