// Command-line entry point: wires config files to the dataset builder, the
// training pipelines, checkpoint evaluation, experiment suites, and report
// rendering. Exit codes: 0 success, 1 runtime failure, 2 user/config error.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "carl/common.hpp"
#include "carl/config.hpp"
#include "carl/metrics.hpp"
#include "carl/pipelines.hpp"
#include "carl/report.hpp"

namespace fs = std::filesystem;

namespace {

struct Args {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;  // run/output root; empty = "runs"
  bool force = false;
  std::string checkpoint;
  std::string dataset;
  std::string kind = "stage2";
  std::string suite_id;
  int silhouette_cap = 10000;
};

void add_common(CLI::App* sub, Args* a) {
  sub->add_option("--config", a->config, "config file (JSON)");
  sub->add_option("--seed", a->seed, "override the config's root seed");
  sub->add_option("--out", a->out, "output directory");
  sub->add_flag("--force", a->force, "overwrite existing outputs");
}

carl::Config load_config_for(const Args& a, const std::string& dataset_dir_override = "") {
  if (a.config.empty()) throw carl::ConfigError("--config is required for this command");
  std::ifstream in(a.config);
  if (!in) throw carl::ConfigError("cannot open config file: " + a.config);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw carl::ConfigError("config parse error in " + a.config + ": " + e.what());
  }
  if (!dataset_dir_override.empty()) {
    doc["dataset"]["dir"] = fs::absolute(dataset_dir_override).lexically_normal().string();
  }
  return carl::config_from_json(doc, fs::path(a.config).parent_path().string(), a.seed);
}

fs::path out_root(const Args& a) { return a.out.empty() ? fs::path("runs") : fs::path(a.out); }

void print_run(const carl::RunRecord& rec) {
  std::cout << "run " << rec.id << " -> " << rec.dir << "\n" << rec.eval.to_table();
  for (const auto& [name, extra] : rec.extra_evals) {
    std::cout << name << ":\n" << extra.to_table();
  }
}

// One loss-curve SVG per run (series that never leave zero are omitted), a
// cross-run mAP-by-polyphony bar chart when there is more than one run, and an
// aligned table plus CSV with one row per run.
void cmd_report(const fs::path& root) {
  struct Run {
    std::string id;
    std::string kind;
    fs::path dir;
    nlohmann::json eval;
    double wall = 0.0;
  };
  std::vector<Run> runs;
  if (!fs::exists(root)) throw carl::PipelineError("run directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "run.json")) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    std::ifstream in(dir / "run.json");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw carl::PipelineError("cannot parse " + (dir / "run.json").string() + ": " +
                                e.what());
    }
    Run r;
    r.id = j.value("id", dir.filename().string());
    r.kind = j.value("kind", "?");
    r.dir = dir;
    r.eval = j["evals"]["eval"];
    r.wall = j.value("wall_seconds", 0.0);
    runs.push_back(std::move(r));
  }
  if (runs.empty()) throw carl::PipelineError("no runs found under " + root.string());

  // Loss curves from each run's losses.csv.
  for (const Run& r : runs) {
    std::ifstream csv(r.dir / "losses.csv");
    if (!csv) continue;
    std::string line;
    std::getline(csv, line);  // header: step,ce,recon,sparsity,disjoint,total
    std::vector<std::string> names;
    {
      std::stringstream ss(line);
      std::string field;
      while (std::getline(ss, field, ',')) names.push_back(field);
    }
    std::vector<carl::CurveSeries> series(names.size() > 1 ? names.size() - 1 : 0);
    for (std::size_t i = 1; i < names.size(); ++i) series[i - 1].name = names[i];
    while (std::getline(csv, line)) {
      std::stringstream ss(line);
      std::string field;
      std::vector<double> row;
      while (std::getline(ss, field, ',')) row.push_back(std::strtod(field.c_str(), nullptr));
      if (row.size() != names.size()) continue;
      for (std::size_t i = 1; i < row.size(); ++i) {
        series[i - 1].points.emplace_back(row[0], row[i]);
      }
    }
    std::vector<carl::CurveSeries> active;
    for (auto& s : series) {
      bool nonzero = false;
      for (const auto& [_, v] : s.points) {
        if (v != 0.0) nonzero = true;
      }
      if (nonzero) active.push_back(std::move(s));
    }
    if (active.empty()) continue;
    std::ofstream svg(r.dir / "losses.svg", std::ios::binary);
    svg << carl::render_loss_curves_svg(active, r.id + " loss");
  }

  auto cell_of = [](const nlohmann::json& j, const char* key) -> std::string {
    if (!j.contains(key) || j[key].is_null()) return "--";
    return carl::format_double(j[key].get<double>(), 4);
  };
  auto opt_of = [](const nlohmann::json& j, const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
  };

  const std::vector<std::string> header = {"run", "kind",       "mAP", "p1",    "p2",
                                           "p3",  "silhouette", "wall_s"};
  std::vector<std::vector<std::string>> rows;
  std::vector<carl::BarGroup> groups;
  for (const Run& r : runs) {
    const nlohmann::json& m = r.eval["map"];
    rows.push_back({r.id, r.kind, cell_of(m, "all"), cell_of(m, "p1"), cell_of(m, "p2"),
                    cell_of(m, "p3"), cell_of(r.eval, "silhouette"),
                    carl::format_double(r.wall, 1)});
    groups.push_back(
        {r.id, {opt_of(m, "all"), opt_of(m, "p1"), opt_of(m, "p2"), opt_of(m, "p3")}});
  }
  const std::string table = carl::render_text_table(header, rows);
  {
    std::ofstream out(root / "report.txt", std::ios::binary);
    out << table;
  }
  {
    std::ofstream out(root / "report.csv", std::ios::binary);
    out << carl::render_csv(header, rows);
  }
  if (runs.size() > 1) {
    std::ofstream out(root / "map_by_polyphony.svg", std::ios::binary);
    out << carl::render_grouped_bars_svg({"all", "p1", "p2", "p3"}, groups,
                                         "mAP by polyphony");
  }
  std::cout << table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional audio representation learning workbench"};
  app.require_subcommand(1);
  Args a;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, &a);

  CLI::App* pretrain =
      app.add_subcommand("pretrain-encoder", "masked-patch pretraining of the encoder");
  add_common(pretrain, &a);

  CLI::App* train = app.add_subcommand(
      "train", "train a model (train.mode selects supervised or unsupervised stage 1)");
  add_common(train, &a);

  CLI::App* probe = app.add_subcommand("probe", "train a linear probe on frozen slots");
  add_common(probe, &a);
  probe->add_option("--checkpoint", a.checkpoint, "model checkpoint to probe")->required();
  probe->add_option("--kind", a.kind, "stage2 (default) or generalization");

  CLI::App* baseline = app.add_subcommand("baseline", "mixture-copy baseline");
  add_common(baseline, &a);

  CLI::App* eval = app.add_subcommand("eval", "recompute an EvalReport from a checkpoint");
  add_common(eval, &a);
  eval->add_option("--checkpoint", a.checkpoint, "model checkpoint")->required();
  eval->add_option("--dataset", a.dataset, "dataset directory")->required();
  eval->add_option("--silhouette-cap", a.silhouette_cap, "max points for the silhouette");

  CLI::App* suite = app.add_subcommand("suite", "run an experiment suite");
  add_common(suite, &a);
  suite->add_option("suite_id", a.suite_id, "exp1 | exp2 | exp3 | exp4")->required();

  CLI::App* report = app.add_subcommand("report", "render tables and plots for runs");
  add_common(report, &a);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      const carl::Config cfg = load_config_for(a, a.out);
      const std::string fp = carl::synth_dataset(cfg, a.force);
      std::cout << "dataset " << cfg.dataset_dir() << " fingerprint " << fp << "\n";
    } else if (pretrain->parsed()) {
      const carl::Config cfg = load_config_for(a);
      const fs::path path = out_root(a) / "encoder.ckpt";
      const carl::PretrainResult res = carl::pretrain_encoder(cfg, path);
      std::cout << "encoder " << path.string() << " loss " << res.initial_loss << " -> "
                << res.final_loss << "\n";
    } else if (train->parsed()) {
      const carl::Config cfg = load_config_for(a);
      const carl::RunRecord rec = cfg.train.mode == "supervised"
                                      ? carl::train_supervised(cfg, out_root(a))
                                      : carl::train_unsupervised_stage1(cfg, out_root(a));
      print_run(rec);
    } else if (probe->parsed()) {
      const carl::Config cfg = load_config_for(a);
      if (a.kind == "stage2") {
        print_run(carl::train_probe_stage2(a.checkpoint, cfg, out_root(a)));
      } else if (a.kind == "generalization") {
        print_run(carl::generalization_probe(a.checkpoint, cfg, out_root(a)));
      } else {
        throw carl::ConfigError("--kind must be stage2 or generalization, got '" + a.kind +
                                "'");
      }
    } else if (baseline->parsed()) {
      const carl::Config cfg = load_config_for(a);
      print_run(carl::baseline_mixture_copy(cfg, out_root(a)));
    } else if (eval->parsed()) {
      const carl::EvalReport report_out = carl::evaluate_checkpoint(
          a.checkpoint, a.dataset, a.silhouette_cap, a.seed.value_or(0), "");
      std::cout << report_out.to_json();
    } else if (suite->parsed()) {
      const carl::Config cfg = load_config_for(a);
      const carl::SuiteResult res = carl::run_experiment_suite(a.suite_id, cfg, out_root(a));
      std::cout << res.table_text;
    } else if (report->parsed()) {
      cmd_report(out_root(a));
    }
  } catch (const carl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
