#include "ofa_cli/config.hpp"

#include <set>

#include "json.hpp"
#include "ofa/error.hpp"
#include "ofa/serialization.hpp"

namespace ofa::cli {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& path, const std::string& reason) {
  throw Error(Errc::validation_error, path + ": " + reason);
}

// Reads fields of one JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) invalid(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) invalid(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) invalid(at(key), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::uint64_t& out, int) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        invalid(at(key), "expected an unsigned integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) invalid(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) invalid(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, Vec& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) invalid(at(key), "expected an array of numbers");
      out.clear();
      for (const json& x : *v) {
        if (!x.is_number()) invalid(at(key), "expected an array of numbers");
        out.push_back(x.get<double>());
      }
    }
  }
  template <class Enum, class Conv>
  void read_enum(const std::string& key, Enum& out, Conv conv) {
    std::string s;
    read(key, s);
    if (!s.empty()) {
      try {
        out = conv(s);
      } catch (const Error& e) {
        invalid(at(key), e.what());
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) invalid(at(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_task(Fields f, TaskSpec& t) {
  f.read("cov_spectrum", t.cov_spectrum);
  f.read("noise_std", t.noise_std);
  f.finish();
}

// Task shape follows the model; only the distribution is configurable.
void sync_task(const ModelConfig& m, TaskSpec& t, bool spectrum_given) {
  t.d = m.d;
  t.n_demos = m.n_demos;
  t.kind = m.kind;
  t.n_classes = m.n_classes;
  if (!spectrum_given) t.cov_spectrum = Vec(m.d, 1.0);
}

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

template <class Fn>
void check(const std::string& path, Fn fn) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() == Errc::validation_error) throw;
    invalid(path, e.what());
  }
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  sync_task(c.model_cfg, c.train_task, false);
  sync_task(c.model_cfg, c.eval_task, false);
  return c;
}

void validate(const RunConfig& c) {
  const TrainConfig& t = c.train_cfg;
  if (!(t.lambda1 >= 0.0)) invalid("train_cfg.lambda1", "must be >= 0");
  if (!(t.lambda2 >= 0.0)) invalid("train_cfg.lambda2", "must be >= 0");
  if (!(t.lr >= 0.0)) invalid("train_cfg.lr", "must be >= 0");
  if (!(t.weight_decay >= 0.0)) invalid("train_cfg.weight_decay", "must be >= 0");
  if (t.lambda1 > 0.0 && c.model_cfg.layers < 2) {
    invalid("train_cfg.lambda1", "needs model_cfg.layers >= 2");
  }
  check("model_cfg", [&] { c.model_cfg.validate(); });
  check("train_task", [&] { c.train_task.validate(); });
  check("eval_task", [&] { c.eval_task.validate(); });
  check("train_cfg", [&] { c.train_cfg.validate(); });
  if (c.diagnostics.probe_tasks < 2) invalid("diagnostics.probe_tasks", "must be >= 2");
  if (c.diagnostics.eval_tasks < 1) invalid("diagnostics.eval_tasks", "must be >= 1");
  if (c.diagnostics.n_probes < 1) invalid("diagnostics.n_probes", "must be >= 1");
}

RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte);
    throw Error(Errc::parse_error, "line " + std::to_string(line) + ", column " +
                                       std::to_string(col) + ": " + e.what());
  }
  RunConfig c = default_config();
  Fields root(j, "");
  root.read("seed", c.seed, 0);
  root.read("out_dir", c.out_dir);

  if (const json* m = root.find("model_cfg")) {
    Fields f(*m, "model_cfg");
    ModelConfig& mc = c.model_cfg;
    f.read("d", mc.d);
    f.read("n_demos", mc.n_demos);
    f.read("layers", mc.layers);
    f.read("eta", mc.eta);
    f.read_enum("precond_mode", mc.precond_mode, precond_mode_from_string);
    f.read("mean_subtract", mc.mean_subtract);
    f.read_enum("kind", mc.kind, task_kind_from_string);
    f.read("n_classes", mc.n_classes);
    f.read("sigma_floor", mc.sigma_floor);
    f.finish();
  }
  const json* train_task = root.find("train_task");
  const json* eval_task = root.find("eval_task");
  if (train_task) read_task(Fields(*train_task, "train_task"), c.train_task);
  if (eval_task) read_task(Fields(*eval_task, "eval_task"), c.eval_task);
  sync_task(c.model_cfg, c.train_task, train_task && train_task->contains("cov_spectrum"));
  sync_task(c.model_cfg, c.eval_task, eval_task && eval_task->contains("cov_spectrum"));

  if (const json* t = root.find("train_cfg")) {
    Fields f(*t, "train_cfg");
    TrainConfig& tc = c.train_cfg;
    f.read("lambda1", tc.lambda1);
    f.read("lambda2", tc.lambda2);
    f.read("lr", tc.lr);
    f.read("epochs", tc.epochs);
    f.read("batch_size", tc.batch_size);
    f.read_enum("optimizer", tc.optimizer, optimizer_from_string);
    f.read("weight_decay", tc.weight_decay);
    f.read_enum("grad_mode", tc.grad_mode, grad_mode_from_string);
    f.read("train_tasks", tc.train_tasks);
    f.read("eval_tasks", tc.eval_tasks);
    if (const json* s = f.find("sharpness")) {
      Fields sf(*s, "train_cfg.sharpness");
      sf.read("epsilon", tc.sharpness_cfg.epsilon);
      sf.read("n_probes", tc.sharpness_cfg.n_probes);
      sf.read("rel_scale", tc.sharpness_cfg.rel_scale);
      sf.finish();
    }
    f.finish();
  }
  if (const json* d = root.find("diagnostics")) {
    Fields f(*d, "diagnostics");
    DiagnosticsOptions& o = c.diagnostics;
    f.read("probe_tasks", o.probe_tasks);
    f.read("eval_tasks", o.eval_tasks);
    f.read("n_probes", o.n_probes);
    f.read("checkpoint", o.checkpoint);
    if (const json* r = f.find("runs")) {
      if (!r->is_array()) invalid("diagnostics.runs", "expected an array of paths");
      for (const json& x : *r) {
        if (!x.is_string()) invalid("diagnostics.runs", "expected an array of paths");
        o.runs.push_back(x.get<std::string>());
      }
    }
    f.finish();
  }
  root.finish();
  c.train_cfg.seed = c.seed;
  validate(c);
  return c;
}

RunConfig parse_config(const std::string& path) { return parse_config_text(read_text_file(path)); }

std::string resolved_json(const RunConfig& c) {
  const ModelConfig& m = c.model_cfg;
  const TrainConfig& t = c.train_cfg;
  json j = json::object();
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["model_cfg"] = {{"d", m.d},
                    {"n_demos", m.n_demos},
                    {"layers", m.layers},
                    {"eta", m.eta},
                    {"precond_mode", to_string(m.precond_mode)},
                    {"mean_subtract", m.mean_subtract},
                    {"kind", to_string(m.kind)},
                    {"n_classes", m.n_classes},
                    {"sigma_floor", m.sigma_floor}};
  j["train_task"] = {{"cov_spectrum", c.train_task.cov_spectrum},
                     {"noise_std", c.train_task.noise_std}};
  j["eval_task"] = {{"cov_spectrum", c.eval_task.cov_spectrum},
                    {"noise_std", c.eval_task.noise_std}};
  j["train_cfg"] = {{"lambda1", t.lambda1},
                    {"lambda2", t.lambda2},
                    {"lr", t.lr},
                    {"epochs", t.epochs},
                    {"batch_size", t.batch_size},
                    {"optimizer", to_string(t.optimizer)},
                    {"weight_decay", t.weight_decay},
                    {"grad_mode", to_string(t.grad_mode)},
                    {"train_tasks", t.train_tasks},
                    {"eval_tasks", t.eval_tasks},
                    {"sharpness",
                     {{"epsilon", t.sharpness_cfg.epsilon},
                      {"n_probes", t.sharpness_cfg.n_probes},
                      {"rel_scale", t.sharpness_cfg.rel_scale}}}};
  j["diagnostics"] = {{"probe_tasks", c.diagnostics.probe_tasks},
                      {"eval_tasks", c.diagnostics.eval_tasks},
                      {"n_probes", c.diagnostics.n_probes},
                      {"checkpoint", c.diagnostics.checkpoint},
                      {"runs", c.diagnostics.runs}};
  return j.dump(2) + "\n";
}

}  // namespace ofa::cli
