#include "ofa/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ofa/error.hpp"

namespace ofa {

using nlohmann::json;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::missing_file, "cannot write '" + path + "'");
  out << content;
  if (!out) throw Error(Errc::missing_file, "write failed for '" + path + "'");
}

namespace {

void append_array(std::string& s, const Vec& v) {
  s += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  s += ']';
}

void append_matrix(std::string& s, const Mat& m) {
  s += '[';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (r) s += ", ";
    Vec row(m.cols());
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    append_array(s, row);
  }
  s += ']';
}

json parse_or_throw(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse_error, e.what());
  }
}

Vec to_vec(const json& j) {
  Vec v;
  for (const json& x : j) v.push_back(x.get<double>());
  return v;
}

Mat to_mat(const json& j) {
  if (!j.is_array() || j.empty()) return Mat();
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Mat m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw Error(Errc::parse_error, "ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

std::string checkpoint_json(const ModelConfig& cfg, const PreconditionerSet& precond) {
  std::string s = "{\n";
  s += "  \"d\": " + std::to_string(cfg.d) + ",\n";
  s += "  \"n_demos\": " + std::to_string(cfg.n_demos) + ",\n";
  s += "  \"layers\": " + std::to_string(cfg.layers) + ",\n";
  s += "  \"eta\": " + format_double(cfg.eta) + ",\n";
  s += "  \"precond_mode\": \"" + to_string(cfg.precond_mode) + "\",\n";
  s += std::string("  \"mean_subtract\": ") + (cfg.mean_subtract ? "true" : "false") + ",\n";
  s += "  \"kind\": \"" + to_string(cfg.kind) + "\",\n";
  s += "  \"n_classes\": " + std::to_string(cfg.n_classes) + ",\n";
  s += "  \"sigma_floor\": " + format_double(cfg.sigma_floor) + ",\n";
  s += "  \"gains\": [";
  for (std::size_t t = 0; t < precond.gains.size(); ++t) {
    s += t ? ",\n    " : "\n    ";
    append_array(s, precond.gains[t]);
  }
  s += "\n  ]\n}\n";
  return s;
}

Checkpoint parse_checkpoint(const std::string& text) {
  const json j = parse_or_throw(text);
  Checkpoint ck;
  try {
    ModelConfig& c = ck.model_cfg;
    c.d = j.at("d").get<std::size_t>();
    c.n_demos = j.at("n_demos").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.eta = j.at("eta").get<double>();
    c.precond_mode = precond_mode_from_string(j.at("precond_mode").get<std::string>());
    c.mean_subtract = j.at("mean_subtract").get<bool>();
    c.kind = task_kind_from_string(j.at("kind").get<std::string>());
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.sigma_floor = j.at("sigma_floor").get<double>();
    for (const json& g : j.at("gains")) ck.precond.gains.push_back(to_vec(g));
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("checkpoint: ") + e.what());
  }
  ck.model_cfg.validate();
  ck.precond.validate(ck.model_cfg);
  return ck;
}

std::string suite_json(const std::vector<TaskInstance>& suite) {
  std::string s = "[";
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const TaskInstance& t = suite[i];
    s += i ? ",\n " : "\n ";
    s += "{\"kind\": \"" + to_string(t.spec.kind) + "\", \"d\": " + std::to_string(t.spec.d);
    s += ", \"n_demos\": " + std::to_string(t.spec.n_demos);
    s += ", \"cov_spectrum\": ";
    append_array(s, t.spec.cov_spectrum);
    s += ", \"noise_std\": " + format_double(t.spec.noise_std);
    s += ", \"n_classes\": " + std::to_string(t.spec.n_classes);
    s += ", \"weights\": ";
    append_matrix(s, t.weights);
    s += ", \"xs\": [";
    for (std::size_t k = 0; k < t.xs.size(); ++k) {
      if (k) s += ", ";
      append_array(s, t.xs[k]);
    }
    s += "], \"ys\": ";
    append_array(s, t.ys);
    s += ", \"x_query\": ";
    append_array(s, t.x_query);
    s += ", \"y_star\": " + format_double(t.y_star) + "}";
  }
  s += "\n]\n";
  return s;
}

std::vector<TaskInstance> parse_suite(const std::string& text) {
  const json j = parse_or_throw(text);
  std::vector<TaskInstance> out;
  try {
    for (const json& e : j) {
      TaskInstance t;
      t.spec.kind = task_kind_from_string(e.at("kind").get<std::string>());
      t.spec.d = e.at("d").get<std::size_t>();
      t.spec.n_demos = e.at("n_demos").get<std::size_t>();
      t.spec.cov_spectrum = to_vec(e.at("cov_spectrum"));
      t.spec.noise_std = e.at("noise_std").get<double>();
      t.spec.n_classes = e.at("n_classes").get<std::size_t>();
      t.spec.validate();
      t.weights = to_mat(e.at("weights"));
      for (const json& x : e.at("xs")) t.xs.push_back(to_vec(x));
      t.ys = to_vec(e.at("ys"));
      t.x_query = to_vec(e.at("x_query"));
      t.y_star = e.at("y_star").get<double>();
      if (t.xs.size() != t.spec.n_demos || t.ys.size() != t.spec.n_demos ||
          t.x_query.size() != t.spec.d) {
        throw Error(Errc::shape_mismatch, "suite entry does not match its spec");
      }
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("suite: ") + e.what());
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace ofa
