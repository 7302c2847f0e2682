#include "vtla/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "vtla/eval.hpp"
#include "vtla/parallel.hpp"
#include "vtla/preference.hpp"
#include "vtla/wire.hpp"

namespace vtla::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad flag values detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

struct Common {
  std::uint64_t seed = 0;
  int workers = default_workers();
  bool json = false;
};

std::uint64_t env_seed() {
  const char* v = std::getenv("VTLA_SEED");
  if (v == nullptr || *v == '\0') return 0;
  try {
    std::size_t used = 0;
    const unsigned long long s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw UsageError(std::string("VTLA_SEED is not an unsigned integer: ") + v);
  }
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Run seed (default: $VTLA_SEED or 0)");
  cmd->add_option("--workers", c.workers, "Worker threads (default: logical cores)")->check(CLI::PositiveNumber);
  cmd->add_flag("--json", c.json, "Machine-readable output on stdout");
}

json run_config(const std::string& command, const Common& c, json extra) {
  extra["command"] = command;
  extra["seed"] = c.seed;
  return extra;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  return json::parse(f);
}

std::vector<InstructionSample> only_split(std::vector<InstructionSample> samples, Split split) {
  std::erase_if(samples, [&](const InstructionSample& s) { return s.split != split; });
  return samples;
}

// ------------------------------------------------------------------ gen-data

struct GenArgs {
  Common c;
  std::string out;
  std::string preset = "desk";
  std::optional<int> count;
  std::vector<std::string> shapes;
  double clearance_min = 0.6;
  double clearance_max = 2.0;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  GenConfig cfg = GenConfig::preset(a.preset, a.c.seed);
  if (!a.shapes.empty()) {
    cfg.counts.clear();
    for (const auto& s : a.shapes) cfg.counts.emplace_back(parse_shape(s), 0);
    if (!a.count) throw UsageError("--shapes requires --count");
  }
  if (a.count) {
    const int n = static_cast<int>(cfg.counts.size());
    if (*a.count < n) throw UsageError("--count must be at least the number of shapes");
    for (int i = 0; i < n; ++i) cfg.counts[i].second = *a.count / n + (i < *a.count % n ? 1 : 0);
  }
  cfg.clearance_min = a.clearance_min;
  cfg.clearance_max = a.clearance_max;
  cfg.workers = a.c.workers;
  json shapes = json::object();
  for (const auto& [k, n] : cfg.counts) shapes[std::string(shape_name(k))] = n;
  // Worker count is excluded: output must not depend on it.
  cfg.run_config = run_config("gen-data", a.c,
                              {{"preset", a.preset}, {"out", a.out}, {"counts", shapes},
                               {"clearance_min", a.clearance_min}, {"clearance_max", a.clearance_max}});
  const auto t0 = std::chrono::steady_clock::now();
  const GenSummary s = generate_dataset(cfg, a.out);
  const double secs = seconds_since(t0);
  int successes = 0, max_steps = 0;
  for (const auto& e : s.episodes) {
    successes += e.phase == Phase::kSuccess;
    max_steps = std::max(max_steps, e.steps);
  }
  if (a.c.json) {
    out << json{{"samples", s.samples}, {"episodes", s.episodes.size()}, {"episode_successes", successes},
                {"max_steps", max_steps}, {"seconds", secs}, {"out", a.out}, {"run_config", cfg.run_config}}
               .dump()
        << '\n';
  } else {
    out << "wrote " << s.samples << " samples from " << s.episodes.size() << " episodes to " << a.out
        << " in " << secs << " s\n";
  }
  return kExitOk;
}

// ------------------------------------------------------------------ sft-train

struct SftArgs {
  Common c;
  std::string manifest;
  std::string out;
  std::string preset = "desk";
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<int> epochs;
  int hidden1 = Architecture{}.hidden1;
  int hidden2 = Architecture{}.hidden2;
  bool vision_first = false;
  std::string curve;
};

int cmd_sft_train(const SftArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path manifest(a.manifest);
  const auto all = read_manifest(manifest);
  const auto samples = only_split(all, Split::kId);
  if (samples.size() != all.size() && !a.c.json) {
    err << "sft-train: skipping " << all.size() - samples.size() << " OOD samples\n";
  }
  if (samples.empty()) throw std::runtime_error("no in-distribution samples in " + a.manifest);
  Architecture arch;
  arch.hidden1 = a.hidden1;
  arch.hidden2 = a.hidden2;
  arch.vision_last = !a.vision_first;
  SftHyper h = a.preset == "reference" ? SftHyper::reference() : SftHyper::desk();
  if (a.lr) h.lr = *a.lr;
  if (a.batch) h.batch = *a.batch;
  if (a.epochs) h.epochs = *a.epochs;
  h.seed = a.c.seed;
  const auto examples = load_examples(samples, manifest.parent_path(), arch, a.c.workers);
  PolicyModel model = PolicyModel::initialized(arch, a.c.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainCurve curve = sft_train(model, examples, h);
  const double secs = seconds_since(t0);
  const json rc = run_config("sft-train", a.c,
                             {{"preset", a.preset}, {"manifest", a.manifest}, {"out", a.out},
                              {"hyper", h.to_json()}, {"architecture", arch.to_json()}});
  save_checkpoint(a.out, model,
                  {{"run_config", rc}, {"samples", samples.size()}, {"initial_loss", curve.initial_loss},
                   {"epoch_loss", curve.epoch_loss}});
  if (!a.curve.empty()) {
    std::string csv = "epoch,loss\n0," + std::to_string(curve.initial_loss) + "\n";
    for (std::size_t i = 0; i < curve.epoch_loss.size(); ++i) {
      csv += std::to_string(i + 1) + "," + std::to_string(curve.epoch_loss[i]) + "\n";
    }
    write_text(a.curve, csv);
  }
  if (a.c.json) {
    out << json{{"checkpoint", a.out}, {"samples", samples.size()}, {"initial_loss", curve.initial_loss},
                {"epoch_loss", curve.epoch_loss},
                {"final_loss", curve.epoch_loss.empty() ? curve.initial_loss : curve.epoch_loss.back()},
                {"params_hash", model.params_hash()},
                {"seconds", secs}, {"run_config", rc}}
               .dump()
        << '\n';
  } else {
    out << "trained on " << samples.size() << " samples: loss " << curve.initial_loss << " -> "
        << (curve.epoch_loss.empty() ? curve.initial_loss : curve.epoch_loss.back()) << " in " << secs
        << " s; saved " << a.out << '\n';
  }
  return kExitOk;
}

// ------------------------------------------------------------------ build-prefs

struct PrefArgs {
  Common c;
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::string preset = "dpo-1k";
  std::optional<int> max_pairs;
  int draws = 1;
};

int cmd_build_prefs(const PrefArgs& a, std::ostream& out) {
  const PolicyModel model = load_checkpoint(a.checkpoint);
  const fs::path manifest(a.manifest);
  const auto samples = only_split(read_manifest(manifest), Split::kId);
  if (samples.empty()) throw std::runtime_error("no in-distribution samples in " + a.manifest);
  const auto examples = load_examples(samples, manifest.parent_path(), model.arch(), a.c.workers);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.sample_id);
  auto configs = default_generation_configs();
  for (std::size_t i = 0; i < configs.size(); ++i) configs[i].seed = derive_seed(a.c.seed, i);
  const std::size_t target =
      static_cast<std::size_t>(a.max_pairs ? *a.max_pairs : (a.preset == "dpo-2.4k" ? 2400 : 1000));
  const auto candidates = generate_candidates(model, examples, ids, configs, a.draws, a.c.workers);
  PairBuild built = build_preference_pairs(candidates);
  const std::size_t available = built.pairs.size();
  if (built.pairs.size() > target) built.pairs.resize(target);
  write_preferences(a.out, built.pairs, configs);
  json gen = json::array();
  for (const auto& c : configs) gen.push_back(c.to_json());
  const json rc = run_config("build-prefs", a.c,
                             {{"preset", a.preset}, {"checkpoint", a.checkpoint}, {"manifest", a.manifest},
                              {"out", a.out}, {"target_pairs", target}, {"draws", a.draws},
                              {"gen_configs", gen}});
  const json summary{{"pairs", built.pairs.size()},
                     {"pairs_available", available},
                     {"candidates", candidates.size()},
                     {"dropped_ties", built.dropped_ties},
                     {"dropped_identical", built.dropped_identical},
                     {"run_config", rc}};
  write_text(a.out + ".meta.json", summary.dump(2) + "\n");
  if (a.c.json) {
    out << summary.dump() << '\n';
  } else {
    out << "wrote " << built.pairs.size() << " pairs (of " << available << " available) from "
        << candidates.size() << " candidates; dropped " << built.dropped_ties << " ties, "
        << built.dropped_identical << " identical\n";
    if (built.pairs.size() < target) {
      out << "note: fewer pairs than the target of " << target << '\n';
    }
  }
  return kExitOk;
}

// ------------------------------------------------------------------ dpo-train

struct DpoArgs {
  Common c;
  std::string checkpoint;
  std::string manifest;
  std::string prefs;
  std::string out;
  std::string preset = "desk";
  std::optional<double> beta;
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<int> epochs;
};

int cmd_dpo_train(const DpoArgs& a, std::ostream& out) {
  const PolicyModel reference = load_checkpoint(a.checkpoint);
  auto pairs = read_preferences(a.prefs);
  if (pairs.empty()) throw std::runtime_error("no preference pairs in " + a.prefs);
  const fs::path manifest(a.manifest);
  const auto all = read_manifest(manifest);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < all.size(); ++i) index[all[i].sample_id] = i;
  std::vector<InstructionSample> used;
  std::map<std::string, std::size_t> used_index;
  for (auto& p : pairs) {
    auto it = index.find(p.sample_id);
    if (it == index.end()) throw std::runtime_error("pair sample not in manifest: " + p.sample_id);
    auto [u, fresh] = used_index.emplace(p.sample_id, used.size());
    if (fresh) used.push_back(all[it->second]);
    p.example_index = u->second;
  }
  const auto examples = load_examples(used, manifest.parent_path(), reference.arch(), a.c.workers);
  DpoConfig cfg = a.preset == "reference" ? DpoConfig::reference() : DpoConfig::desk();
  if (a.beta) cfg.beta = *a.beta;
  if (a.lr) cfg.lr = *a.lr;
  if (a.batch) cfg.batch = *a.batch;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.seed = a.c.seed;
  const auto items = make_dpo_items(reference, pairs, examples);
  PolicyModel policy = reference;
  const auto t0 = std::chrono::steady_clock::now();
  const DpoCurve curve = dpo_train(policy, items, cfg);
  const double secs = seconds_since(t0);
  const json rc = run_config("dpo-train", a.c,
                             {{"preset", a.preset}, {"checkpoint", a.checkpoint}, {"manifest", a.manifest},
                              {"prefs", a.prefs}, {"out", a.out}, {"dpo", cfg.to_json()}});
  save_checkpoint(a.out, policy,
                  {{"run_config", rc}, {"pairs", items.size()}, {"initial_loss", curve.initial_loss},
                   {"epoch_loss", curve.epoch_loss}, {"epoch_accuracy", curve.epoch_accuracy}});
  const double final_loss = curve.epoch_loss.empty() ? curve.initial_loss : curve.epoch_loss.back();
  const double final_acc =
      curve.epoch_accuracy.empty() ? preference_accuracy(policy, items) : curve.epoch_accuracy.back();
  if (a.c.json) {
    out << json{{"checkpoint", a.out}, {"pairs", items.size()}, {"initial_loss", curve.initial_loss},
                {"epoch_loss", curve.epoch_loss}, {"epoch_accuracy", curve.epoch_accuracy},
                {"final_loss", final_loss}, {"final_accuracy", final_acc}, {"seconds", secs},
                {"run_config", rc}}
               .dump()
        << '\n';
  } else {
    out << "DPO on " << items.size() << " pairs: loss " << curve.initial_loss << " -> " << final_loss
        << ", preference accuracy " << 100.0 * final_acc << "% in " << secs << " s; saved " << a.out
        << '\n';
  }
  return kExitOk;
}

// ------------------------------------------------------------------ eval-dataset

struct EvalDataArgs {
  Common c;
  std::string checkpoint;
  std::string policy;
  std::string manifest;
  std::string method;
  std::string format = "text";
  std::string out;
};

void emit_report(const Common& c, const std::string& format, const std::string& out_path,
                 const json& rc, const json& reports_json, const std::string& rendered,
                 std::ostream& out) {
  const json doc{{"run_config", rc}, {"reports", reports_json}};
  if (!out_path.empty()) {
    write_text(out_path, format == "json" ? doc.dump(2) + "\n" : rendered);
  }
  if (c.json) {
    out << doc.dump() << '\n';
  } else if (out_path.empty() || format != "json") {
    out << rendered;
  }
}

int cmd_eval_dataset(const EvalDataArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.policy.empty()) {
    throw UsageError("eval-dataset needs exactly one of --checkpoint or --policy");
  }
  const fs::path manifest(a.manifest);
  const auto samples = read_manifest(manifest);
  if (samples.empty()) throw std::runtime_error("empty manifest " + a.manifest);
  DatasetReport report;
  if (!a.checkpoint.empty()) {
    const PolicyModel model = load_checkpoint(a.checkpoint);
    const auto examples = load_examples(samples, manifest.parent_path(), model.arch(), a.c.workers);
    report = evaluate_dataset(model, samples, examples,
                              a.method.empty() ? fs::path(a.checkpoint).stem().string() : a.method,
                              a.c.workers);
  } else {
    std::vector<Action> preds;
    if (a.policy == "random") {
      RandomStream rng(a.c.seed, "random_policy");
      for (std::size_t i = 0; i < samples.size(); ++i) preds.push_back(random_bin_action(rng));
    } else if (a.policy == "zero") {
      preds.assign(samples.size(), Action{});
    } else {
      throw UsageError("eval-dataset --policy must be random or zero");
    }
    report = score_predictions(samples, preds, a.method.empty() ? a.policy : a.method);
  }
  const auto fmt = parse_report_format(a.format);
  const json rc = run_config("eval-dataset", a.c,
                             {{"checkpoint", a.checkpoint}, {"policy", a.policy}, {"manifest", a.manifest}});
  const std::vector<DatasetReport> reports{report};
  emit_report(a.c, a.format, a.out, rc, json::array({to_json(report)}),
              render_dataset_reports(reports, fmt), out);
  return kExitOk;
}

// ------------------------------------------------------------------ eval-insert

struct EvalInsertArgs {
  Common c;
  std::string policy;
  std::string grid = "full";
  int trials = 50;
  std::string method;
  std::string format = "text";
  std::string out;
  bool steps_over_all = false;
};

PolicyFactory make_factory(const std::string& name) {
  if (name == "oracle") {
    return [](std::uint64_t) { return std::make_unique<OraclePolicy>(); };
  }
  if (name == "random") {
    return [](std::uint64_t s) { return std::make_unique<RandomPolicy>(s); };
  }
  if (name == "zero") {
    return [](std::uint64_t) { return std::make_unique<ZeroPolicy>(); };
  }
  if (name.rfind("checkpoint:", 0) == 0) {
    auto model = std::make_shared<const PolicyModel>(load_checkpoint(name.substr(11)));
    return [model](std::uint64_t) { return std::make_unique<ModelPolicy>(model); };
  }
  if (name.rfind("remote:", 0) == 0) {
    const std::string addr = name.substr(7);
    wire::parse_endpoint(addr);
    return [addr](std::uint64_t) { return std::make_unique<wire::RemotePolicy>(addr); };
  }
  throw UsageError("unknown policy '" + name + "' (oracle, random, zero, checkpoint:F, remote:ADDR)");
}

int cmd_eval_insert(const EvalInsertArgs& a, std::ostream& out) {
  const auto factory = make_factory(a.policy);
  std::vector<CellSpec> cells;
  try {
    cells = grid_preset(a.grid);
  } catch (const std::invalid_argument& ex) {
    throw UsageError(ex.what());
  }
  const auto t0 = std::chrono::steady_clock::now();
  InsertionTable table = insertion_benchmark(factory, cells, a.trials, a.c.seed, a.c.workers,
                                             a.method.empty() ? a.policy : a.method);
  const double secs = seconds_since(t0);
  json table_json = to_json(table);
  table_json["seconds"] = secs;
  if (a.steps_over_all) {
    for (auto& cell : table.cells) cell.avg_steps = cell.avg_steps_all;
  }
  const json rc = run_config("eval-insert", a.c,
                             {{"policy", a.policy}, {"grid", a.grid}, {"trials", a.trials},
                              {"steps_over_all", a.steps_over_all}});
  const std::vector<InsertionTable> tables{table};
  emit_report(a.c, a.format, a.out, rc, json::array({table_json}),
              render_insertion_tables(tables, parse_report_format(a.format)), out);
  return kExitOk;
}

// ------------------------------------------------------------------ serve-policy

std::atomic<bool> g_stop_requested{false};
extern "C" void on_signal(int) { g_stop_requested = true; }

struct ServeArgs {
  Common c;
  std::string checkpoint;
  std::string policy;
  std::string listen;
};

int cmd_serve_policy(const ServeArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.policy.empty()) {
    throw UsageError("serve-policy needs exactly one of --checkpoint or --policy");
  }
  wire::Handler handler;
  if (!a.checkpoint.empty()) {
    auto model = std::make_shared<const PolicyModel>(load_checkpoint(a.checkpoint));
    handler = [model](const wire::Request& r) {
      const auto f = featurize(r.tactile_left, r.tactile_right, r.vision, r.shape, model->arch());
      return detokenize_action(greedy_tokens(*model, f));
    };
  } else if (a.policy == "zero") {
    handler = [](const wire::Request&) { return Action{}; };
  } else {
    throw UsageError("serve-policy --policy must be zero");
  }
  wire::Server server(a.listen, handler);
  if (a.c.json) {
    out << json{{"listening", a.listen}, {"port", server.port()}}.dump() << std::endl;
  } else {
    out << "listening on port " << server.port() << std::endl;
  }
  g_stop_requested = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&] {
    while (!g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
  });
  server.run();
  g_stop_requested = true;
  watcher.join();
  return kExitOk;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  Common c;
  std::vector<std::string> inputs;
  std::string format = "markdown";
  std::string out;
};

void collect(const json& j, std::vector<DatasetReport>& ds, std::vector<InsertionTable>& ins) {
  if (j.is_array()) {
    for (const auto& e : j) collect(e, ds, ins);
  } else if (j.is_object() && j.contains("reports")) {
    collect(j["reports"], ds, ins);
  } else if (j.is_object() && j.value("kind", "") == "dataset") {
    ds.push_back(dataset_report_from_json(j));
  } else if (j.is_object() && j.value("kind", "") == "insertion") {
    ins.push_back(insertion_table_from_json(j));
  } else {
    throw std::runtime_error("unrecognized report JSON");
  }
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<DatasetReport> ds;
  std::vector<InsertionTable> ins;
  for (const auto& in : a.inputs) collect(read_json_file(in), ds, ins);
  const auto fmt = parse_report_format(a.format);
  std::string rendered;
  json merged = json::array();
  if (!ds.empty()) {
    rendered += render_dataset_reports(ds, fmt);
    for (const auto& r : ds) merged.push_back(to_json(r));
  }
  if (!ins.empty()) {
    if (!rendered.empty() && fmt != ReportFormat::kJson) rendered += '\n';
    rendered += render_insertion_tables(ins, fmt);
    for (const auto& t : ins) merged.push_back(to_json(t));
  }
  if (fmt == ReportFormat::kJson) rendered = json{{"reports", merged}}.dump(2) + "\n";
  emit_report(a.c, a.format, a.out, run_config("report", a.c, {{"inputs", a.inputs}}), merged,
              rendered, out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visuotactile peg-in-hole benchmark, dataset generator and policy trainer", "vtla"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::uint64_t default_seed = 0;
  try {
    default_seed = env_seed();
  } catch (const UsageError& e) {
    err << "vtla: " << e.what() << '\n';
    return kExitUsage;
  }
  const Common base{default_seed, default_workers(), false};
  const auto formats = CLI::IsMember({"text", "markdown", "md", "csv", "json"});

  GenArgs gen;
  gen.c = base;
  auto* g = app.add_subcommand("gen-data", "Generate an instruction dataset");
  add_common(g, gen.c);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--preset", gen.preset, "Dataset scale")->check(CLI::IsMember({"full", "eval", "desk"}));
  g->add_option("--count", gen.count, "Total samples, split evenly across shapes")
      ->check(CLI::PositiveNumber);
  g->add_option("--shapes", gen.shapes, "Shapes to generate (requires --count)")->delimiter(',');
  g->add_option("--clearance-min", gen.clearance_min, "Lower clearance bound (mm)");
  g->add_option("--clearance-max", gen.clearance_max, "Upper clearance bound (mm)");

  SftArgs sft;
  sft.c = base;
  auto* s = app.add_subcommand("sft-train", "Supervised next-token training");
  add_common(s, sft.c);
  s->add_option("--manifest", sft.manifest, "Training manifest.jsonl")->required()->check(CLI::ExistingFile);
  s->add_option("--out", sft.out, "Checkpoint path")->required();
  s->add_option("--preset", sft.preset, "Hyperparameter preset")->check(CLI::IsMember({"desk", "reference"}));
  s->add_option("--lr", sft.lr, "Learning rate")->check(CLI::PositiveNumber);
  s->add_option("--batch", sft.batch, "Batch size")->check(CLI::PositiveNumber);
  s->add_option("--epochs", sft.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  s->add_option("--hidden1", sft.hidden1, "First trunk width")->check(CLI::PositiveNumber);
  s->add_option("--hidden2", sft.hidden2, "Second trunk width")->check(CLI::PositiveNumber);
  s->add_flag("--vision-first", sft.vision_first, "Put vision features before tactile");
  s->add_option("--curve", sft.curve, "Write the loss curve as CSV");

  PrefArgs pref;
  pref.c = base;
  auto* p = app.add_subcommand("build-prefs", "Build preference pairs from a checkpoint");
  add_common(p, pref.c);
  p->add_option("--checkpoint", pref.checkpoint, "Policy checkpoint")->required()->check(CLI::ExistingFile);
  p->add_option("--manifest", pref.manifest, "Manifest to sample on")->required()->check(CLI::ExistingFile);
  p->add_option("--out", pref.out, "Output preferences.jsonl")->required();
  p->add_option("--preset", pref.preset, "Pair budget")->check(CLI::IsMember({"dpo-1k", "dpo-2.4k"}));
  p->add_option("--max-pairs", pref.max_pairs, "Override the pair budget")->check(CLI::PositiveNumber);
  p->add_option("--draws", pref.draws, "Draws per generation configuration")->check(CLI::PositiveNumber);

  DpoArgs dpo;
  dpo.c = base;
  auto* d = app.add_subcommand("dpo-train", "Preference optimization against a frozen reference");
  add_common(d, dpo.c);
  d->add_option("--checkpoint", dpo.checkpoint, "Reference (and initial) checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  d->add_option("--manifest", dpo.manifest, "Manifest holding the pair samples")
      ->required()
      ->check(CLI::ExistingFile);
  d->add_option("--prefs", dpo.prefs, "preferences.jsonl")->required()->check(CLI::ExistingFile);
  d->add_option("--out", dpo.out, "Output checkpoint")->required();
  d->add_option("--preset", dpo.preset, "Hyperparameter preset")->check(CLI::IsMember({"desk", "reference"}));
  d->add_option("--beta", dpo.beta, "Preference temperature")->check(CLI::PositiveNumber);
  d->add_option("--lr", dpo.lr, "Learning rate")->check(CLI::PositiveNumber);
  d->add_option("--batch", dpo.batch, "Batch size")->check(CLI::PositiveNumber);
  d->add_option("--epochs", dpo.epochs, "Epochs")->check(CLI::NonNegativeNumber);

  EvalDataArgs ed;
  ed.c = base;
  auto* e = app.add_subcommand("eval-dataset", "Dataset metrics (GCR, per-axis L1) by split");
  add_common(e, ed.c);
  e->add_option("--checkpoint", ed.checkpoint, "Policy checkpoint")->check(CLI::ExistingFile);
  e->add_option("--policy", ed.policy, "Model-free baseline: random or zero");
  e->add_option("--manifest", ed.manifest, "Evaluation manifest")->required()->check(CLI::ExistingFile);
  e->add_option("--method", ed.method, "Row label");
  e->add_option("--format", ed.format, "Report format")->check(formats);
  e->add_option("--out", ed.out, "Write the report here");

  EvalInsertArgs ei;
  ei.c = base;
  auto* i = app.add_subcommand("eval-insert", "Closed-loop insertion benchmark");
  add_common(i, ei.c);
  i->add_option("--policy", ei.policy, "oracle, random, zero, checkpoint:F or remote:ADDR")->required();
  i->add_option("--grid", ei.grid, "Evaluation grid: full, square, shapes or SHAPE@MM");
  i->add_option("--trials", ei.trials, "Trials per cell")->check(CLI::PositiveNumber);
  i->add_option("--method", ei.method, "Row label");
  i->add_option("--format", ei.format, "Report format")->check(formats);
  i->add_option("--out", ei.out, "Write the report here");
  i->add_flag("--steps-over-all", ei.steps_over_all, "Average steps over failures too");

  ServeArgs sv;
  sv.c = base;
  auto* v = app.add_subcommand("serve-policy", "Serve a policy over the NDJSON wire protocol");
  add_common(v, sv.c);
  v->add_option("--checkpoint", sv.checkpoint, "Policy checkpoint")->check(CLI::ExistingFile);
  v->add_option("--policy", sv.policy, "Built-in policy instead of a checkpoint: zero");
  v->add_option("--listen", sv.listen, "host:port")->required();

  ReportArgs rp;
  rp.c = base;
  auto* r = app.add_subcommand("report", "Render saved JSON reports");
  add_common(r, rp.c);
  r->add_option("--input", rp.inputs, "Report JSON files")->required()->check(CLI::ExistingFile);
  r->add_option("--format", rp.format, "Report format")->check(formats);
  r->add_option("--out", rp.out, "Write the report here");

  std::vector<std::string> argv_storage{"vtla"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "vtla: " << pe.what() << "\n";
    err << "run 'vtla --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, out);
    if (s->parsed()) return cmd_sft_train(sft, out, err);
    if (p->parsed()) return cmd_build_prefs(pref, out);
    if (d->parsed()) return cmd_dpo_train(dpo, out);
    if (e->parsed()) return cmd_eval_dataset(ed, out);
    if (i->parsed()) return cmd_eval_insert(ei, out);
    if (v->parsed()) return cmd_serve_policy(sv, out);
    if (r->parsed()) return cmd_report(rp, out);
  } catch (const UsageError& ue) {
    err << "vtla: " << ue.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "vtla: error: " << ex.what() << '\n';
    return kExitDomainError;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace vtla::cli
