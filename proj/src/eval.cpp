#include "vtla/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "vtla/parallel.hpp"

namespace vtla {
namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument("prediction/label length mismatch: " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
  if (a == 0) throw std::invalid_argument("no predictions to score");
}

std::string fmt(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

nlohmann::json metrics_json(const DatasetMetrics& m) {
  return {{"count", m.count}, {"gcr", m.gcr}, {"l1_x", m.l1_x}, {"l1_y", m.l1_y}, {"l1_rz", m.l1_rz}};
}

DatasetMetrics metrics_from_json(const nlohmann::json& j) {
  return {j.at("count").get<std::size_t>(), j.at("gcr").get<double>(), j.at("l1_x").get<double>(),
          j.at("l1_y").get<double>(), j.at("l1_rz").get<double>()};
}

std::string clearance_label(double c) { return fmt(c, 1); }

}  // namespace

bool within_tolerance(const Action& pred, const Action& label, const AxisTolerance& tol) {
  // Labels and predictions are bin centres; the epsilon absorbs decimal residue.
  constexpr double eps = 1e-9;
  return std::abs(pred.dx - label.dx) <= tol.x + eps && std::abs(pred.dy - label.dy) <= tol.y + eps &&
         std::abs(pred.drz - label.drz) <= tol.rz + eps;
}

double goal_convergence_rate(std::span<const Action> preds, std::span<const Action> labels,
                             const AxisTolerance& tol) {
  check_lengths(preds.size(), labels.size());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += within_tolerance(preds[i], labels[i], tol);
  return 100.0 * static_cast<double>(ok) / static_cast<double>(preds.size());
}

std::array<double, 3> l1_per_axis(std::span<const Action> preds, std::span<const Action> labels) {
  check_lengths(preds.size(), labels.size());
  std::array<double, 3> sum{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    sum[0] += std::abs(preds[i].dx - labels[i].dx);
    sum[1] += std::abs(preds[i].dy - labels[i].dy);
    sum[2] += std::abs(preds[i].drz - labels[i].drz);
  }
  for (auto& s : sum) s /= static_cast<double>(preds.size());
  return sum;
}

DatasetMetrics compute_metrics(std::span<const Action> preds, std::span<const Action> labels,
                               const AxisTolerance& tol) {
  const auto l1 = l1_per_axis(preds, labels);
  const double gcr = goal_convergence_rate(preds, labels, tol);
  // Conjunction bound: all-axes accuracy cannot exceed any single axis.
  std::size_t ok[3] = {0, 0, 0};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ok[0] += within_tolerance({preds[i].dx, 0, 0}, {labels[i].dx, 0, 0}, tol);
    ok[1] += within_tolerance({0, preds[i].dy, 0}, {0, labels[i].dy, 0}, tol);
    ok[2] += within_tolerance({0, 0, preds[i].drz}, {0, 0, labels[i].drz}, tol);
  }
  for (std::size_t a : ok) {
    if (gcr > 100.0 * static_cast<double>(a) / static_cast<double>(preds.size())) {
      throw std::logic_error("GCR exceeds a per-axis accuracy");
    }
  }
  return {preds.size(), gcr, l1[0], l1[1], l1[2]};
}

DatasetReport score_predictions(const std::vector<InstructionSample>& samples,
                                std::span<const Action> all_preds, std::string method) {
  check_lengths(samples.size(), all_preds.size());
  std::vector<Action> preds[2], labels[2];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int s = samples[i].split == Split::kId ? 0 : 1;
    preds[s].push_back(all_preds[i]);
    labels[s].push_back(detokenize_action(samples[i].label));
  }
  DatasetReport r;
  r.method = std::move(method);
  if (!preds[0].empty()) r.id = compute_metrics(preds[0], labels[0]);
  if (!preds[1].empty()) r.ood = compute_metrics(preds[1], labels[1]);
  return r;
}

DatasetReport evaluate_dataset(const PolicyModel& model, const std::vector<InstructionSample>& samples,
                               std::span<const LabeledExample> examples, std::string method,
                               int workers) {
  if (samples.size() != examples.size()) throw std::invalid_argument("sample/example count mismatch");
  std::vector<Action> preds(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    preds[i] = detokenize_action(greedy_tokens(model, examples[i].features));
  });
  return score_predictions(samples, preds, std::move(method));
}

std::vector<CellSpec> grid_preset(std::string_view name) {
  static constexpr double kClearances[] = {2.0, 1.6, 1.0, 0.6};
  std::vector<CellSpec> cells;
  if (name == "full") {
    for (ShapeKind s : kAllShapes)
      for (double c : kClearances) cells.push_back({s, c});
  } else if (name == "square") {
    for (double c : kClearances) cells.push_back({ShapeKind::kSquare, c});
  } else if (name == "shapes") {
    for (ShapeKind s : kAllShapes) cells.push_back({s, 2.0});
  } else if (const auto at = name.find('@'); at != std::string_view::npos) {
    const std::string clearance(name.substr(at + 1));
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(clearance, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != clearance.size() || !(c > 0.0)) {
      throw std::invalid_argument("bad clearance in grid cell: " + std::string(name));
    }
    cells.push_back({parse_shape(name.substr(0, at)), c});
  } else {
    throw std::invalid_argument("unknown grid preset: " + std::string(name));
  }
  return cells;
}

std::uint64_t trial_seed(std::uint64_t seed, ShapeKind shape, double clearance_mm, int trial) {
  const auto tenths = static_cast<std::uint64_t>(std::llround(clearance_mm * 10.0));
  std::uint64_t h = hash_combine(seed, hash_name(shape_name(shape)));
  h = hash_combine(h, tenths);
  return hash_combine(h, static_cast<std::uint64_t>(trial));
}

InsertionTable insertion_benchmark(const PolicyFactory& factory, std::span<const CellSpec> cells,
                                   int trials, std::uint64_t seed, int workers, std::string method) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (cells.empty()) throw std::invalid_argument("empty evaluation grid");
  struct Outcome {
    bool success = false;
    bool error = false;
    int steps = 0;
  };
  const std::size_t per = static_cast<std::size_t>(trials);
  std::vector<Outcome> outcomes(cells.size() * per);
  parallel_for(outcomes.size(), workers, [&](std::size_t idx) {
    const CellSpec& cell = cells[idx / per];
    const int trial = static_cast<int>(idx % per);
    const std::uint64_t ts = trial_seed(seed, cell.shape, cell.clearance_mm, trial);
    Outcome& o = outcomes[idx];
    try {
      auto policy = factory(ts);
      const EpisodeTrace trace = run_episode(make_task(cell.shape, cell.clearance_mm), ts, *policy);
      o.success = trace.success();
      o.steps = trace.steps_used();
    } catch (const std::logic_error&) {
      throw;  // programming errors are not trial failures
    } catch (const std::exception&) {
      o.error = true;
    }
  });
  InsertionTable table;
  table.method = std::move(method);
  table.trials_per_cell = trials;
  table.seed = seed;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult r;
    r.cell = cells[c];
    r.trials = trials;
    long steps = 0, steps_all = 0;
    int completed = 0;
    for (std::size_t t = 0; t < per; ++t) {
      const Outcome& o = outcomes[c * per + t];
      if (o.error) {
        ++r.errors;
      } else {
        ++completed;
        steps_all += o.steps;
      }
      if (o.success) {
        ++r.successes;
        steps += o.steps;
      }
    }
    if (r.successes > 0) r.avg_steps = static_cast<double>(steps) / r.successes;
    if (completed > 0) r.avg_steps_all = static_cast<double>(steps_all) / completed;
    table.cells.push_back(r);
  }
  return table;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "text") return ReportFormat::kText;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw std::invalid_argument("unknown report format: " + std::string(name));
}

nlohmann::json to_json(const DatasetReport& r) {
  nlohmann::json j{{"kind", "dataset"}, {"method", r.method}};
  j["ID"] = r.id ? metrics_json(*r.id) : nlohmann::json(nullptr);
  j["OOD"] = r.ood ? metrics_json(*r.ood) : nlohmann::json(nullptr);
  return j;
}

DatasetReport dataset_report_from_json(const nlohmann::json& j) {
  DatasetReport r;
  r.method = j.at("method").get<std::string>();
  if (!j.at("ID").is_null()) r.id = metrics_from_json(j.at("ID"));
  if (!j.at("OOD").is_null()) r.ood = metrics_from_json(j.at("OOD"));
  return r;
}

nlohmann::json to_json(const InsertionTable& t) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : t.cells) {
    cells.push_back({{"shape", shape_name(c.cell.shape)},
                     {"clearance_mm", c.cell.clearance_mm},
                     {"trials", c.trials},
                     {"successes", c.successes},
                     {"errors", c.errors},
                     {"success_rate", c.success_rate()},
                     {"avg_steps", c.avg_steps ? nlohmann::json(*c.avg_steps) : nlohmann::json(nullptr)},
                     {"avg_steps_all",
                      c.avg_steps_all ? nlohmann::json(*c.avg_steps_all) : nlohmann::json(nullptr)}});
  }
  return {{"kind", "insertion"}, {"method", t.method}, {"trials_per_cell", t.trials_per_cell},
          {"seed", t.seed},      {"cells", cells}};
}

InsertionTable insertion_table_from_json(const nlohmann::json& j) {
  InsertionTable t;
  t.method = j.at("method").get<std::string>();
  t.trials_per_cell = j.at("trials_per_cell").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& c : j.at("cells")) {
    CellResult r;
    r.cell = {parse_shape(c.at("shape").get<std::string>()), c.at("clearance_mm").get<double>()};
    r.trials = c.at("trials").get<int>();
    r.successes = c.at("successes").get<int>();
    r.errors = c.at("errors").get<int>();
    if (!c.at("avg_steps").is_null()) r.avg_steps = c.at("avg_steps").get<double>();
    if (c.contains("avg_steps_all") && !c.at("avg_steps_all").is_null()) {
      r.avg_steps_all = c.at("avg_steps_all").get<double>();
    }
    t.cells.push_back(r);
  }
  return t;
}

std::string render_dataset_reports(std::span<const DatasetReport> reports, ReportFormat f) {
  std::ostringstream os;
  auto cells = [](const std::optional<DatasetMetrics>& m) {
    if (!m) return std::vector<std::string>{"-", "-", "-", "-"};
    return std::vector<std::string>{fmt(m->gcr, 1), fmt(m->l1_x, 3), fmt(m->l1_y, 3), fmt(m->l1_rz, 3)};
  };
  switch (f) {
    case ReportFormat::kJson: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : reports) arr.push_back(to_json(r));
      os << arr.dump(2) << '\n';
      break;
    }
    case ReportFormat::kCsv:
      os << "method,split,count,gcr,l1_x,l1_y,l1_rz\n";
      for (const auto& r : reports) {
        for (const auto& [name, m] : {std::pair{"ID", r.id}, std::pair{"OOD", r.ood}}) {
          if (!m) continue;
          os << r.method << ',' << name << ',' << m->count << ',' << fmt(m->gcr, 4) << ','
             << fmt(m->l1_x, 6) << ',' << fmt(m->l1_y, 6) << ',' << fmt(m->l1_rz, 6) << '\n';
        }
      }
      break;
    case ReportFormat::kMarkdown:
      os << "| Method | ID GCR (%) | ID L1 x | ID L1 y | ID L1 rz | OOD GCR (%) | OOD L1 x | OOD L1 y | OOD L1 rz |\n";
      os << "|---|---|---|---|---|---|---|---|---|\n";
      for (const auto& r : reports) {
        os << "| " << r.method;
        for (const auto& c : cells(r.id)) os << " | " << c;
        for (const auto& c : cells(r.ood)) os << " | " << c;
        os << " |\n";
      }
      break;
    case ReportFormat::kText:
      for (const auto& r : reports) {
        os << r.method << '\n';
        for (const auto& [name, m] : {std::pair{"ID", r.id}, std::pair{"OOD", r.ood}}) {
          if (!m) continue;
          os << "  " << name << "  n=" << m->count << "  GCR=" << fmt(m->gcr, 1) << "%  L1 x="
             << fmt(m->l1_x, 3) << " y=" << fmt(m->l1_y, 3) << " rz=" << fmt(m->l1_rz, 3) << '\n';
        }
      }
      break;
  }
  return os.str();
}

std::string render_insertion_tables(std::span<const InsertionTable> tables, ReportFormat f) {
  std::ostringstream os;
  auto steps = [](const CellResult& c) { return c.avg_steps ? fmt(*c.avg_steps, 2) : std::string("-"); };
  switch (f) {
    case ReportFormat::kJson: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& t : tables) arr.push_back(to_json(t));
      os << arr.dump(2) << '\n';
      break;
    }
    case ReportFormat::kCsv:
      os << "method,shape,clearance_mm,trials,successes,errors,success_rate,avg_steps\n";
      for (const auto& t : tables) {
        for (const auto& c : t.cells) {
          os << t.method << ',' << shape_name(c.cell.shape) << ',' << clearance_label(c.cell.clearance_mm)
             << ',' << c.trials << ',' << c.successes << ',' << c.errors << ','
             << fmt(c.success_rate(), 2) << ',' << (c.avg_steps ? fmt(*c.avg_steps, 4) : "") << '\n';
        }
      }
      break;
    case ReportFormat::kMarkdown: {
      // Columns are the union of cells in first-seen order.
      std::vector<CellSpec> cols;
      for (const auto& t : tables)
        for (const auto& c : t.cells)
          if (std::find(cols.begin(), cols.end(), c.cell) == cols.end()) cols.push_back(c.cell);
      os << "| Method |";
      for (const auto& c : cols)
        os << ' ' << shape_name(c.shape) << ' ' << clearance_label(c.clearance_mm) << "mm Suc | Step |";
      os << "\n|---|";
      for (std::size_t i = 0; i < cols.size(); ++i) os << "---|---|";
      os << '\n';
      for (const auto& t : tables) {
        os << "| " << t.method << " |";
        for (const auto& col : cols) {
          auto it = std::find_if(t.cells.begin(), t.cells.end(),
                                 [&](const CellResult& c) { return c.cell == col; });
          if (it == t.cells.end()) {
            os << " - | - |";
          } else {
            os << ' ' << fmt(it->success_rate(), 0) << "% | " << steps(*it) << " |";
          }
        }
        os << '\n';
      }
      break;
    }
    case ReportFormat::kText:
      for (const auto& t : tables) {
        os << t.method << " (" << t.trials_per_cell << " trials/cell, seed " << t.seed << ")\n";
        for (const auto& c : t.cells) {
          os << "  " << shape_name(c.cell.shape) << ' ' << clearance_label(c.cell.clearance_mm)
             << "mm  success " << fmt(c.success_rate(), 1) << "%  steps " << steps(c);
          if (c.errors > 0) os << "  errors " << c.errors;
          os << '\n';
        }
      }
      break;
  }
  return os.str();
}

}  // namespace vtla
