#include "ofa_cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ofa/diagnostics.hpp"
#include "ofa/error.hpp"
#include "ofa/objectives.hpp"
#include "ofa/oracle.hpp"
#include "ofa/serialization.hpp"
#include "ofa/training.hpp"
#include "ofa_cli/config.hpp"

#ifndef OFA_VERSION
#define OFA_VERSION "0.0.0"
#endif

namespace ofa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream layout shared by every subcommand, rooted at RngStream(seed). Slots
// 1..5 belong to train().
constexpr std::uint64_t kProbeFitSuite = 6;
constexpr std::uint64_t kProfileSuite = 7;
constexpr std::uint64_t kProfileProbes = 8;
constexpr std::uint64_t kOracleCheck = 9;

RunConfig load(const CommandArgs& a) {
  RunConfig c = a.config_path.empty() ? default_config() : parse_config(a.config_path);
  if (a.seed) {
    c.seed = *a.seed;
    c.train_cfg.seed = *a.seed;
  }
  if (!a.out_dir.empty()) c.out_dir = a.out_dir;
  validate(c);
  return c;
}

std::string prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::missing_file, "cannot create '" + dir + "': " + ec.message());
  return dir;
}

std::string join(const std::string& dir, const std::string& file) {
  return (fs::path(dir) / file).string();
}

// Auxiliary subcommands pointed at an existing run directory keep the run's
// own manifest and config intact and write prefixed copies instead.
std::string own_file(const std::string& dir, const std::string& subcommand,
                     const std::string& file) {
  if (subcommand == "train" || !fs::exists(join(dir, file))) return file;
  return subcommand + "_" + file;
}

void write_manifest(const std::string& dir, const std::string& subcommand, const RunConfig& c,
                    std::size_t threads, const std::vector<std::string>& files,
                    const json& extra = json::object()) {
  json m = {{"artifact_version", OFA_VERSION},
            {"subcommand", subcommand},
            {"seed", c.seed},
            {"threads", threads},
            {"files", files}};
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_text_file(join(dir, own_file(dir, subcommand, "manifest.json")), m.dump(2) + "\n");
}

std::vector<TaskInstance> train_suite(const RunConfig& c) {
  return sample_suite(c.train_task, c.train_cfg.train_tasks, RngStream(c.seed).derive({1}));
}

std::vector<TaskInstance> eval_suite(const RunConfig& c) {
  return sample_suite(c.eval_task, c.train_cfg.eval_tasks, RngStream(c.seed).derive({2}));
}

PreconditionerSet load_gains(const RunConfig& c) {
  std::string path = c.diagnostics.checkpoint;
  if (path.empty()) {
    const std::string local = join(c.out_dir, "checkpoint.json");
    if (!fs::exists(local)) return PreconditionerSet::ones(c.model_cfg);
    path = local;
  }
  const Checkpoint ck = parse_checkpoint(read_text_file(path));
  const ModelConfig& a = ck.model_cfg;
  const ModelConfig& b = c.model_cfg;
  if (a.d != b.d || a.n_demos != b.n_demos || a.layers != b.layers || a.eta != b.eta ||
      a.precond_mode != b.precond_mode || a.mean_subtract != b.mean_subtract ||
      a.kind != b.kind || a.n_classes != b.n_classes || a.sigma_floor != b.sigma_floor) {
    throw Error(Errc::validation_error,
                "diagnostics.checkpoint: model settings differ from model_cfg in the config");
  }
  return ck.precond;
}

std::string bound_json(const BoundReport& b, double lambda2) {
  std::string s = "{\n";
  s += "  \"lambda2\": " + format_double(lambda2) + ",\n";
  s += "  \"curvature_sum\": " + format_double(b.curvature_sum) + ",\n";
  s += "  \"bound_value\": " + format_double(b.bound_value) + ",\n";
  s += "  \"grad_bound\": " + format_double(b.grad_bound) + ",\n";
  s += "  \"smooth_bound\": " + format_double(b.smooth_bound) + ",\n";
  s += "  \"measured_gap\": " + format_double(b.measured_gap) + "\n}\n";
  return s;
}

int cmd_train(const CommandArgs& a) {
  const RunConfig c = load(a);
  const std::string dir = prepare_out(c.out_dir);
  write_text_file(join(dir, "resolved_config.json"), resolved_json(c));
  TrainReport report;
  int code = kExitOk;
  try {
    report = train(c.model_cfg, c.train_task, c.eval_task, c.train_cfg, a.threads);
  } catch (const DivergedError& e) {
    std::cerr << "train: " << e.what() << "\n";
    report = e.partial();
    code = kExitRuntime;
  }
  for (std::size_t e = 0; e < report.train.size(); ++e) {
    std::printf("epoch %zu task %.6g step_ratio %.6g sharpness %.6g total %.6g eval_task %.6g\n",
                e + 1, report.train[e].task_loss, report.train[e].step_ratio,
                report.train[e].sharpness, report.train[e].total, report.eval[e].task_loss);
  }
  write_text_file(join(dir, "metrics.csv"), metrics_csv(report));
  write_text_file(join(dir, "checkpoint.json"), checkpoint_json(c.model_cfg, report.final_precond));
  std::vector<std::string> files{"resolved_config.json", "metrics.csv", "checkpoint.json"};
  if (code == kExitOk) {
    std::vector<Mat> prompts;
    for (const TaskInstance& t : train_suite(c)) prompts.push_back(embed_prompt(t));
    BoundReport b = model_bound(Model(c.model_cfg), report.final_precond, prompts,
                                c.train_cfg.train_tasks, a.threads);
    b.measured_gap = report.eval.back().task_loss - report.train.back().task_loss;
    write_text_file(join(dir, "bound.json"), bound_json(b, c.train_cfg.lambda2));
    files.push_back("bound.json");
  }
  write_manifest(dir, "train", c, a.threads, files,
                 {{"optimizer_steps", report.optimizer_steps}});
  return code;
}

int cmd_eval(const CommandArgs& a) {
  const RunConfig c = load(a);
  const std::string dir = prepare_out(c.out_dir);
  const Model model(c.model_cfg);
  const PreconditionerSet gains = load_gains(c);
  std::string csv = "suite,task_loss,step_ratio,sharpness,total\n";
  const std::pair<const char*, std::vector<TaskInstance>> suites[] = {{"train", train_suite(c)},
                                                                      {"eval", eval_suite(c)}};
  for (const auto& [name, suite] : suites) {
    const std::vector<Example> ex = make_examples(suite);
    const ObjectiveBreakdown b = evaluate_suite(model, gains, ex, c.train_cfg, a.threads);
    std::printf("%s task %.6g step_ratio %.6g sharpness %.6g total %.6g\n", name, b.task_loss,
                b.step_ratio, b.sharpness, b.total);
    csv += std::string(name) + ',' + format_double(b.task_loss) + ',' +
           format_double(b.step_ratio) + ',' + format_double(b.sharpness) + ',' +
           format_double(b.total) + '\n';
  }
  write_text_file(join(dir, "eval.csv"), csv);
  const std::string cfg_file = own_file(dir, "eval", "resolved_config.json");
  write_text_file(join(dir, cfg_file), resolved_json(c));
  write_manifest(dir, "eval", c, a.threads, {"eval.csv", cfg_file});
  return kExitOk;
}

std::string cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

int cmd_gap(const RunConfig& c, const CommandArgs& a, const std::string& dir) {
  std::vector<GapRun> runs;
  for (const std::string& run : c.diagnostics.runs) {
    const json j = [&] {
      try {
        return json::parse(read_text_file(join(run, "bound.json")));
      } catch (const json::exception& e) {
        throw Error(Errc::parse_error, run + "/bound.json: " + e.what());
      }
    }();
    GapRun g;
    g.run_id = fs::path(run).filename().string();
    g.lambda2 = j.at("lambda2").get<double>();
    g.bound.curvature_sum = j.at("curvature_sum").get<double>();
    g.bound.bound_value = j.at("bound_value").get<double>();
    g.bound.grad_bound = j.at("grad_bound").get<double>();
    g.bound.smooth_bound = j.at("smooth_bound").get<double>();
    g.bound.measured_gap = j.at("measured_gap").get<double>();
    runs.push_back(g);
  }
  if (runs.size() < 2) {
    throw Error(Errc::validation_error, "diagnostics.runs: the gap report needs at least 2 runs");
  }
  const GapReport r = gap_report(runs);
  write_text_file(join(dir, "gap.csv"), r.csv);
  std::printf("gap runs %zu spearman %s\n", runs.size(),
              r.rank_correlation ? format_double(*r.rank_correlation).c_str() : "n/a");
  write_manifest(dir, "diagnose", c, a.threads, {"gap.csv"}, {{"report", "gap"}});
  return kExitOk;
}

int cmd_diagnose(const CommandArgs& a) {
  const RunConfig c = load(a);
  const std::string dir = prepare_out(c.out_dir);
  if (a.report == "gap") return cmd_gap(c, a, dir);

  const Model model(c.model_cfg);
  const PreconditionerSet gains = load_gains(c);
  const RngStream root(c.seed);
  const auto fit = sample_suite(c.train_task, c.diagnostics.probe_tasks, root.derive({kProbeFitSuite}));
  const auto eval = sample_suite(c.eval_task, c.diagnostics.eval_tasks, root.derive({kProfileSuite}));
  SharpnessConfig sc = c.train_cfg.sharpness_cfg;
  sc.n_probes = c.diagnostics.n_probes;
  const LayerProfile p =
      layer_profiles(model, gains, fit, eval, sc, root.derive({kProfileProbes}), a.threads);
  write_text_file(join(dir, "profile.csv"), profile_csv(p));

  std::string csv;
  if (a.report == "sharpness") csv = "layer,mean_sharpness,sharpness_std_error\n";
  if (a.report == "stepratio") csv = "layer,mean_step_ratio,guarded_fraction\n";
  if (a.report == "probe") csv = "layer,probe_acc,probe_ce\n";
  for (const LayerProfileRow& r : p.rows) {
    double x = r.probe_acc, y = r.probe_ce;
    if (a.report == "sharpness") {
      x = r.mean_sharpness;
      y = r.sharpness_std_error;
    } else if (a.report == "stepratio") {
      x = r.mean_step_ratio;
      y = r.guarded_fraction;
    }
    csv += std::to_string(r.layer) + ',' + cell(x) + ',' + cell(y) + '\n';
    std::printf("layer %zu %s %s %s\n", r.layer, a.report.c_str(),
                std::isnan(x) ? "-" : format_double(x).c_str(),
                std::isnan(y) ? "-" : format_double(y).c_str());
  }
  write_text_file(join(dir, a.report + ".csv"), csv);
  const std::string cfg_file = own_file(dir, "diagnose", "resolved_config.json");
  write_text_file(join(dir, cfg_file), resolved_json(c));
  write_manifest(dir, "diagnose", c, a.threads, {"profile.csv", a.report + ".csv", cfg_file},
                 {{"report", a.report}, {"probe_ridge", kProbeRidge}});
  return kExitOk;
}

struct CheckRow {
  std::string check, name;
  double value, reference, error, tolerance;
  bool pass;
};

int cmd_oracle_check(const CommandArgs& a) {
  const RunConfig c = load(a);
  const std::string dir = prepare_out(c.out_dir);
  const RngStream root = RngStream(c.seed).derive({kOracleCheck});
  std::vector<CheckRow> rows;

  // Model forward against explicit gradient descent.
  for (std::uint64_t i = 0; i < 20; ++i) {
    RngStream rng = root.derive({1, i});
    ModelConfig m;
    m.d = 1 + rng.below(8);
    m.n_demos = 1 + rng.below(16);
    m.layers = 1 + rng.below(6);
    m.precond_mode = PrecondMode::identity;
    TaskSpec s;
    s.d = m.d;
    s.n_demos = m.n_demos;
    s.cov_spectrum = Vec(m.d, 1.0);
    s.noise_std = 0.1;
    const TaskInstance task = sample_task(s, rng);
    double gram = 0;
    for (const Vec& x : task.xs)
      for (double v : x) gram += v * v;
    m.eta = 0.5 / gram;
    const double pred = predict(forward(embed_prompt(task), Model(m), PreconditionerSet::ones(m)), m)[0];
    const double ref = gd_iterates_ls(task, m.eta, m.layers).predictions.back()[0];
    const double err = std::abs(pred - ref) / std::max(std::abs(ref), 1e-12);
    rows.push_back({"gd_equivalence", "task" + std::to_string(i), pred, ref, err, 1e-10, err <= 1e-10});
  }

  // Hutchinson against the exact trace.
  for (std::uint64_t i = 0; i < 10; ++i) {
    RngStream rng = root.derive({2, i});
    const std::size_t dim = 2 + rng.below(15);
    const QuadraticProblem q = random_quadratic(dim, 1.0 + 99.0 * rng.uniform(), true, rng);
    Vec p(dim);
    for (double& x : p) x = 0.25 + 1.5 * rng.uniform();
    SharpnessConfig sc;
    sc.n_probes = 4096;
    RngStream probes = rng.derive({0});
    const TraceEstimate e = hutchinson_trace(QuadraticStep(q.hessian, q.linear, p),
                                             Mat::column(rng.normal_vec(dim)), sc, probes);
    const double ref = exact_trace(p, q.hessian);
    const double se = hutchinson_exact_std_error(p, q.hessian, sc.n_probes);
    const double err = std::abs(e.value - ref);
    rows.push_back({"hutchinson", "pair" + std::to_string(i), e.value, ref, err, 3 * se, err <= 3 * se});
  }

  // Step-ratio scale invariance.
  {
    RngStream rng = root.derive({3});
    std::vector<Mat> states;
    for (int t = 0; t < 6; ++t) states.push_back(rng.normal_mat(5, 9));
    const double ref = step_ratio_loss(states);
    for (double s : {1e-3, 1.0, 1e3}) {
      std::vector<Mat> scaled;
      for (const Mat& m : states) scaled.push_back(m * s);
      const double v = step_ratio_loss(scaled);
      const double err = std::abs(v - ref);
      rows.push_back({"step_ratio_scale", "c=" + format_double(s), v, ref, err, 1e-12, err <= 1e-12});
    }
  }

  std::string csv = "check,case,value,reference,error,tolerance,pass\n";
  bool all = true;
  for (const CheckRow& r : rows) {
    all = all && r.pass;
    csv += r.check + ',' + csv_field(r.name) + ',' + format_double(r.value) + ',' +
           format_double(r.reference) + ',' + format_double(r.error) + ',' +
           format_double(r.tolerance) + ',' + (r.pass ? "1" : "0") + '\n';
    std::printf("%s %s %s err %.3g\n", r.pass ? "PASS" : "FAIL", r.check.c_str(), r.name.c_str(),
                r.error);
  }
  write_text_file(join(dir, "oracle_check.csv"), csv);
  const std::string cfg_file = own_file(dir, "oracle-check", "resolved_config.json");
  write_text_file(join(dir, cfg_file), resolved_json(c));
  write_manifest(dir, "oracle-check", c, a.threads, {"oracle_check.csv", cfg_file});
  return all ? kExitOk : kExitRuntime;
}

int cmd_gradcheck(const CommandArgs& a) {
  const RunConfig c = load(a);
  const std::string dir = prepare_out(c.out_dir);
  const GradcheckReport r = gradcheck(c.train_cfg, a.trials, c.seed);
  std::string csv = "trial,d,n_demos,layers,task_err,step_ratio_err,sharpness_err,total_err\n";
  std::size_t worst_idx = 0;
  double worst = -1.0;
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    const GradcheckTrial& t = r.trials[i];
    const double w = std::max({t.task_err, t.step_ratio_err, t.sharpness_err, t.total_err});
    if (w > worst) {
      worst = w;
      worst_idx = i;
    }
    csv += std::to_string(i) + ',' + std::to_string(t.d) + ',' + std::to_string(t.n_demos) + ',' +
           std::to_string(t.layers) + ',' + format_double(t.task_err) + ',' +
           format_double(t.step_ratio_err) + ',' + format_double(t.sharpness_err) + ',' +
           format_double(t.total_err) + '\n';
    std::printf("trial %zu d %zu n %zu layers %zu max_rel_err %.3g\n", i, t.d, t.n_demos,
                t.layers, w);
  }
  write_text_file(join(dir, "gradcheck.csv"), csv);
  const std::string cfg_file = own_file(dir, "gradcheck", "resolved_config.json");
  write_text_file(join(dir, cfg_file), resolved_json(c));
  std::vector<std::string> files{"gradcheck.csv", cfg_file};
  const bool ok = r.worst() <= 1e-4;
  if (!ok) {
    const GradcheckTrial& t = r.trials[worst_idx];
    const json dump = {{"trial", worst_idx},
                       {"d", t.d},
                       {"n_demos", t.n_demos},
                       {"layers", t.layers},
                       {"precond_mode", to_string(t.mode)},
                       {"lambda1", c.train_cfg.lambda1},
                       {"lambda2", c.train_cfg.lambda2},
                       {"seed", c.seed},
                       {"task_err", t.task_err},
                       {"step_ratio_err", t.step_ratio_err},
                       {"sharpness_err", t.sharpness_err},
                       {"total_err", t.total_err}};
    write_text_file(join(dir, "failing_config.json"), dump.dump(2) + "\n");
    std::cerr << "gradcheck failed:\n" << dump.dump(2) << "\n";
    files.push_back("failing_config.json");
  }
  std::printf("gradcheck worst %.3g %s\n", r.worst(), ok ? "PASS" : "FAIL");
  write_manifest(dir, "gradcheck", c, a.threads, files, {{"trials", a.trials}});
  return ok ? kExitOk : kExitRuntime;
}

// Minimal reader for the CSV files this tool writes (no quoted fields).
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cellv;
    std::istringstream ls(line);
    while (std::getline(ls, cellv, ',')) cells.push_back(cellv);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::size_t column_of(const std::vector<std::string>& header, const std::string& name,
                      const std::string& path) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw Error(Errc::parse_error, path + ": missing column " + name);
}

Series series_from(const std::string& path, const std::string& x, const std::string& y,
                   const std::string& name) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw Error(Errc::parse_error, path + ": empty file");
  const std::size_t xi = column_of(rows[0], x, path), yi = column_of(rows[0], y, path);
  Series s{name, {}, {}};
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() <= std::max(xi, yi) || rows[r][yi].empty()) continue;
    s.xs.push_back(std::stod(rows[r][xi]));
    s.ys.push_back(std::stod(rows[r][yi]));
  }
  return s;
}

int cmd_plot(const CommandArgs& a) {
  const RunConfig c = load(a);
  const std::string dir = prepare_out(c.out_dir);
  std::vector<std::string> runs = c.diagnostics.runs;
  if (runs.empty()) runs.push_back(c.out_dir);
  std::vector<Series> loss, step, sharp, profile;
  for (const std::string& run : runs) {
    const std::string name = fs::path(run).filename().string();
    const std::string metrics = join(run, "metrics.csv");
    if (fs::exists(metrics)) {
      loss.push_back(series_from(metrics, "epoch", "task_loss", name + " train"));
      loss.push_back(series_from(metrics, "epoch", "eval_task_loss", name + " eval"));
      step.push_back(series_from(metrics, "epoch", "step_ratio", name));
      sharp.push_back(series_from(metrics, "epoch", "sharpness", name));
    }
    const std::string prof = join(run, "profile.csv");
    if (fs::exists(prof)) profile.push_back(series_from(prof, "layer", "mean_sharpness", name));
  }
  std::vector<std::string> files;
  auto emit = [&](const std::string& file, const std::string& title, const std::string& xl,
                  const std::string& yl, const std::vector<Series>& s) {
    if (s.empty()) return;
    write_text_file(join(dir, file), svg_line_chart(title, xl, yl, s));
    files.push_back(file);
    std::printf("wrote %s\n", file.c_str());
  };
  emit("loss.svg", "Task loss", "epoch", "loss", loss);
  emit("step_ratio.svg", "Step-ratio penalty", "epoch", "step ratio", step);
  emit("sharpness.svg", "Sharpness penalty", "epoch", "sharpness", sharp);
  emit("profile_sharpness.svg", "Per-layer sharpness", "layer", "trace estimate", profile);
  if (files.empty()) {
    throw Error(Errc::missing_file, "no metrics.csv or profile.csv found in the run directories");
  }
  write_manifest(dir, "plot", c, a.threads, files);
  return kExitOk;
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::validation_error:
    case Errc::parse_error:
    case Errc::missing_file:
    case Errc::invalid_spec:
      return kExitValidation;
    default:
      return kExitRuntime;
  }
}

}  // namespace

int dispatch(const std::string& sub, const CommandArgs& args) {
  try {
    if (sub == "train") return cmd_train(args);
    if (sub == "eval") return cmd_eval(args);
    if (sub == "diagnose") return cmd_diagnose(args);
    if (sub == "oracle-check") return cmd_oracle_check(args);
    if (sub == "gradcheck") return cmd_gradcheck(args);
    if (sub == "plot") return cmd_plot(args);
    std::cerr << "unknown subcommand '" << sub << "'\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << sub << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << sub << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_main(int argc, char** argv) {
  CLI::App app{"Optimizer-inspired in-context learning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", OFA_VERSION);
  CommandArgs args;
  std::uint64_t seed = 0;
  const char* names[] = {"train", "eval", "diagnose", "oracle-check", "gradcheck", "plot"};
  const char* help[] = {"train the per-layer preconditioners",
                        "evaluate a checkpoint on the train and eval suites",
                        "layer profiles, probes and the generalization-gap report",
                        "compare the model and estimators against closed-form references",
                        "analytic vs finite-difference gradients",
                        "render SVG charts from run directories"};
  for (std::size_t i = 0; i < 6; ++i) {
    CLI::App* s = app.add_subcommand(names[i], help[i]);
    s->add_option("--config", args.config_path, "JSON config file")->check(CLI::ExistingFile);
    s->add_option("--out", args.out_dir, "output directory");
    s->add_option("--seed", seed, "root seed (overrides the config)");
    s->add_option("--threads", args.threads, "worker threads")->check(CLI::PositiveNumber);
    if (std::string(names[i]) == "gradcheck") {
      s->add_option("--trials", args.trials, "random configurations")->check(CLI::PositiveNumber);
    }
    if (std::string(names[i]) == "diagnose") {
      s->add_option("--report", args.report, "report kind")
          ->check(CLI::IsMember({"sharpness", "stepratio", "probe", "gap"}));
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }
  CLI::App* chosen = app.get_subcommands().front();
  if (chosen->count("--seed")) args.seed = seed;
  return dispatch(chosen->get_name(), args);
}

}  // namespace ofa::cli
