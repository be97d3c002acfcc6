#include "ofa/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "ofa/error.hpp"
#include "ofa/parallel.hpp"
#include "ofa/serialization.hpp"

namespace ofa {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vec probe_scores(const LinearProbe& p, const Vec& x) {
  const Mat& w = p.weights;
  if (x.size() + 1 != w.cols()) throw Error(Errc::shape_mismatch, "probe feature size mismatch");
  Vec s(w.rows(), 0.0);
  for (std::size_t c = 0; c < w.rows(); ++c) {
    double v = w(c, x.size());
    for (std::size_t k = 0; k < x.size(); ++k) v += w(c, k) * x[k];
    s[c] = v;
  }
  return s;
}

}  // namespace

std::vector<LinearProbe> probe_fit(const std::vector<std::vector<Vec>>& features,
                                   const std::vector<std::size_t>& labels, std::size_t n_classes,
                                   double ridge) {
  std::set<std::size_t> present(labels.begin(), labels.end());
  if (present.size() < 2) throw Error(Errc::degenerate_labels, "probe needs >= 2 classes");
  for (std::size_t y : labels)
    if (y >= n_classes) throw Error(Errc::shape_mismatch, "label out of range");
  if (!(ridge > 0.0)) throw Error(Errc::invalid_spec, "probe ridge must be > 0");

  std::vector<LinearProbe> probes;
  for (const std::vector<Vec>& layer : features) {
    if (layer.size() != labels.size()) {
      throw Error(Errc::shape_mismatch, "feature count does not match label count");
    }
    const std::size_t f = layer.front().size();
    const std::size_t dim = f + 1;
    Mat gram(dim, dim);
    Mat rhs(dim, n_classes);
    for (std::size_t i = 0; i < layer.size(); ++i) {
      const Vec& x = layer[i];
      if (x.size() != f) throw Error(Errc::shape_mismatch, "ragged probe features");
      for (std::size_t a = 0; a < dim; ++a) {
        const double xa = a < f ? x[a] : 1.0;
        for (std::size_t b = 0; b < dim; ++b) gram(a, b) += xa * (b < f ? x[b] : 1.0);
        rhs(a, labels[i]) += xa;
      }
    }
    for (std::size_t a = 0; a < f; ++a) gram(a, a) += ridge;
    const Mat sol = solve_spd(gram, rhs);
    probes.push_back(LinearProbe{transpose(sol)});
  }
  return probes;
}

std::vector<ProbeScore> probe_eval(const std::vector<LinearProbe>& probes,
                                   const std::vector<std::vector<Vec>>& features,
                                   const std::vector<std::size_t>& labels) {
  if (probes.size() != features.size()) {
    throw Error(Errc::shape_mismatch, "one probe per layer expected");
  }
  std::vector<ProbeScore> out;
  for (std::size_t t = 0; t < probes.size(); ++t) {
    if (features[t].size() != labels.size() || labels.empty()) {
      throw Error(Errc::shape_mismatch, "feature count does not match label count");
    }
    ProbeScore score;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const Vec s = probe_scores(probes[t], features[t][i]);
      if (labels[i] >= s.size()) throw Error(Errc::shape_mismatch, "label out of range");
      const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
      if (best == labels[i]) score.accuracy += 1.0;
      const double m = s[best];
      double z = 0.0;
      for (double v : s) z += std::exp(v - m);
      score.ce += m + std::log(z) - s[labels[i]];
    }
    score.accuracy /= static_cast<double>(labels.size());
    score.ce /= static_cast<double>(labels.size());
    out.push_back(score);
  }
  return out;
}

std::vector<std::vector<Vec>> query_features(const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) return {};
  const std::size_t states = trajectories.front().states.size();
  std::vector<std::vector<Vec>> out(states);
  for (const Trajectory& tr : trajectories) {
    if (tr.states.size() != states) throw Error(Errc::shape_mismatch, "trajectory lengths differ");
    for (std::size_t t = 0; t < states; ++t) {
      const Mat& z = tr.states[t];
      Vec col(z.rows());
      for (std::size_t r = 0; r < z.rows(); ++r) col[r] = z(r, z.cols() - 1);
      out[t].push_back(std::move(col));
    }
  }
  return out;
}

std::vector<std::size_t> probe_labels(const std::vector<TaskInstance>& suite) {
  std::vector<std::size_t> labels;
  for (const TaskInstance& t : suite) {
    if (t.spec.kind == TaskKind::regression) {
      labels.push_back(t.y_star > 0.0 ? 1 : 0);
    } else {
      labels.push_back(static_cast<std::size_t>(t.y_star));
    }
  }
  return labels;
}

LayerProfile layer_profiles(const Model& model, const PreconditionerSet& precond,
                            const std::vector<TaskInstance>& probe_suite,
                            const std::vector<TaskInstance>& eval_suite,
                            const SharpnessConfig& cfg, const RngStream& probes,
                            std::size_t threads) {
  if (eval_suite.empty() || probe_suite.empty()) {
    throw Error(Errc::invalid_spec, "profile suites must be non-empty");
  }
  const ModelConfig& mc = model.config();
  const std::size_t layers = mc.layers;

  auto run_suite = [&](const std::vector<TaskInstance>& suite) {
    std::vector<Trajectory> trajs(suite.size());
    parallel_for(suite.size(), threads,
                 [&](std::size_t i) { trajs[i] = forward(embed_prompt(suite[i]), model, precond); });
    return trajs;
  };
  const std::vector<Trajectory> fit_trajs = run_suite(probe_suite);
  const std::vector<Trajectory> eval_trajs = run_suite(eval_suite);

  struct PerTask {
    std::vector<StepRatioTerm> ratios;
    std::vector<TraceEstimate> traces;
  };
  std::vector<PerTask> per(eval_suite.size());
  parallel_for(eval_suite.size(), threads, [&](std::size_t i) {
    if (layers >= 2) per[i].ratios = step_ratio_terms(eval_trajs[i].states);
    per[i].traces = interior_layer_traces(model, precond, eval_trajs[i], cfg, probes.derive({i}));
  });

  const std::size_t n_classes = mc.kind == TaskKind::regression ? 2 : mc.n_classes;
  const std::vector<LinearProbe> lin =
      probe_fit(query_features(fit_trajs), probe_labels(probe_suite), n_classes);
  const std::vector<ProbeScore> scores =
      probe_eval(lin, query_features(eval_trajs), probe_labels(eval_suite));

  LayerProfile profile;
  const double inv = 1.0 / static_cast<double>(eval_suite.size());
  for (std::size_t t = 0; t <= layers; ++t) {
    LayerProfileRow row;
    row.layer = t;
    row.probe_acc = scores[t].accuracy;
    row.probe_ce = scores[t].ce;
    if (t >= 1 && t + 1 <= layers) {
      double ratio = 0.0, guarded = 0.0, sharp = 0.0, var = 0.0;
      for (const PerTask& p : per) {
        ratio += p.ratios[t - 1].ratio;
        guarded += p.ratios[t - 1].guarded ? 1.0 : 0.0;
        sharp += p.traces[t - 1].value;
        var += p.traces[t - 1].std_error * p.traces[t - 1].std_error;
      }
      row.mean_step_ratio = ratio * inv;
      row.guarded_fraction = guarded * inv;
      row.mean_sharpness = sharp * inv;
      row.sharpness_std_error = std::sqrt(var) * inv;
    } else {
      row.mean_step_ratio = kNaN;
      row.mean_sharpness = kNaN;
      row.sharpness_std_error = kNaN;
      row.guarded_fraction = kNaN;
    }
    profile.rows.push_back(row);
  }
  return profile;
}

std::string profile_csv(const LayerProfile& profile) {
  auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  std::string s = "layer,mean_step_ratio,mean_sharpness,probe_acc,probe_ce\n";
  for (const LayerProfileRow& r : profile.rows) {
    s += std::to_string(r.layer) + ',' + cell(r.mean_step_ratio) + ',' + cell(r.mean_sharpness) +
         ',' + cell(r.probe_acc) + ',' + cell(r.probe_ce) + '\n';
  }
  return s;
}

BoundReport model_bound(const Model& model, const PreconditionerSet& precond,
                        const std::vector<Mat>& prompts, std::size_t n_train,
                        std::size_t threads) {
  if (prompts.empty()) throw Error(Errc::invalid_spec, "bound needs at least one prompt");
  const ModelConfig& mc = model.config();
  struct Part {
    double curvature = 0.0, grad = 0.0, smooth = 0.0;
  };
  std::vector<Part> parts(prompts.size());
  parallel_for(prompts.size(), threads, [&](std::size_t i) {
    const Trajectory traj = forward(prompts[i], model, precond);
    std::vector<Vec> p_seq;
    std::vector<Mat> h_seq;
    Part part;
    for (std::size_t t = 0; t < mc.layers; ++t) {
      Mat h = model.raw_update_jacobian(traj.states[t]) * -1.0;
      part.smooth = std::max(part.smooth, frob_norm(h));
      part.grad = std::max(part.grad, frob_norm(traj.stats[t].raw_update));
      p_seq.push_back(preconditioner_diagonal(precond.gains[t], traj.stats[t].sigma, mc));
      h_seq.push_back(std::move(h));
    }
    part.curvature = bound_quantity(p_seq, h_seq, 1).curvature_sum;
    parts[i] = part;
  });
  BoundReport r;
  for (const Part& p : parts) {
    r.curvature_sum += p.curvature;
    r.grad_bound = std::max(r.grad_bound, p.grad);
    r.smooth_bound = std::max(r.smooth_bound, p.smooth);
  }
  r.curvature_sum /= static_cast<double>(prompts.size());
  r.bound_value = std::sqrt(r.curvature_sum / static_cast<double>(std::max<std::size_t>(n_train, 1)));
  return r;
}

std::optional<double> spearman(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw Error(Errc::shape_mismatch, "spearman inputs differ in length");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  auto ranks = [n](const Vec& v) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    Vec r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const Vec ra = ranks(a), rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

GapReport gap_report(const std::vector<GapRun>& runs) {
  if (runs.size() < 2) throw Error(Errc::invalid_spec, "gap report needs at least two runs");
  GapReport rep;
  rep.csv = "run_id,lambda2,curvature_sum,bound_value,measured_gap\n";
  Vec bound, gap;
  for (const GapRun& r : runs) {
    rep.csv += csv_field(r.run_id) + ',' + format_double(r.lambda2) + ',' +
               format_double(r.bound.curvature_sum) + ',' + format_double(r.bound.bound_value) +
               ',' + format_double(r.bound.measured_gap) + '\n';
    bound.push_back(r.bound.bound_value);
    gap.push_back(r.bound.measured_gap);
  }
  rep.rank_correlation = spearman(bound, gap);
  rep.csv += "# spearman(bound_value, measured_gap) = " +
             (rep.rank_correlation ? format_double(*rep.rank_correlation) : std::string("n/a")) +
             '\n';
  return rep;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
  static const char* const palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                        "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  constexpr double W = 800, H = 480, left = 70, right = 160, top = 40, bottom = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const Series& s : series) {
    if (s.xs.size() != s.ys.size()) throw Error(Errc::shape_mismatch, "series x/y lengths differ");
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
      x0 = std::min(x0, s.xs[i]);
      x1 = std::max(x1, s.xs[i]);
      y0 = std::min(y0, s.ys[i]);
      y1 = std::max(y1, s.ys[i]);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 480\" "
                  "width=\"800\" height=\"480\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"800\" height=\"480\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
       xml_escape(title) + "</text>\n";
  s += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) +
       "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    s += "<text x=\"" + num(sx(fx)) + "\" y=\"" + num(top + ph + 18) +
         "\" text-anchor=\"middle\">" + tick(fx) + "</text>\n";
    s += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(fy) + 4) +
         "\" text-anchor=\"end\">" + tick(fy) + "</text>\n";
    s += "<line x1=\"" + num(left) + "\" x2=\"" + num(left + pw) + "\" y1=\"" + num(sy(fy)) +
         "\" y2=\"" + num(sy(fy)) + "\" stroke=\"#ddd\"/>\n";
  }
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(H - 16) +
       "\" text-anchor=\"middle\">" + xml_escape(x_label) + "</text>\n";
  s += "<text x=\"18\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num(top + ph / 2) + ")\">" + xml_escape(y_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& ser = series[k];
    const char* color = palette[k % (sizeof palette / sizeof palette[0])];
    std::string pts;
    for (std::size_t i = 0; i < ser.xs.size(); ++i) {
      if (!std::isfinite(ser.xs[i]) || !std::isfinite(ser.ys[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += num(sx(ser.xs[i])) + ',' + num(sy(ser.ys[i]));
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
         "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = top + 16 + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + num(W - right + 12) + "\" x2=\"" + num(W - right + 36) + "\" y1=\"" +
         num(ly) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(W - right + 42) + "\" y=\"" + num(ly + 4) + "\">" +
         xml_escape(ser.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace ofa
