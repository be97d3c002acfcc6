#include "ofa/model.hpp"

#include <cmath>

#include "ofa/error.hpp"

namespace ofa {

std::string to_string(PrecondMode mode) {
  return mode == PrecondMode::identity ? "identity" : "layernorm_gain";
}

PrecondMode precond_mode_from_string(const std::string& name) {
  if (name == "identity") return PrecondMode::identity;
  if (name == "layernorm_gain") return PrecondMode::layernorm_gain;
  throw Error(Errc::invalid_spec, "unknown precond_mode '" + name + "'");
}

std::size_t ModelConfig::out_dim() const {
  return kind == TaskKind::regression ? 1 : n_classes;
}

void ModelConfig::validate() const {
  if (d < 1) throw Error(Errc::invalid_spec, "model d must be >= 1");
  if (n_demos < 1) throw Error(Errc::invalid_spec, "model n_demos must be >= 1");
  if (layers < 1) throw Error(Errc::invalid_spec, "model layers must be >= 1");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw Error(Errc::invalid_spec, "eta must be >= 0");
  if (kind == TaskKind::classification && n_classes < 2) {
    throw Error(Errc::invalid_spec, "n_classes must be >= 2");
  }
  if (!(sigma_floor > 0.0)) throw Error(Errc::invalid_spec, "sigma_floor must be > 0");
}

AttentionWeights init_gd_construction(const ModelConfig& cfg) {
  cfg.validate();
  AttentionWeights w;
  w.value = Mat(cfg.rows(), cfg.rows());
  for (std::size_t r = cfg.d; r < cfg.rows(); ++r) w.value(r, r) = -cfg.eta;
  w.key_query = Mat(cfg.rows(), cfg.rows());
  for (std::size_t r = 0; r < cfg.d; ++r) w.key_query(r, r) = 1.0;
  w.demo_mask.assign(cfg.cols(), 1.0);
  w.demo_mask.back() = 0.0;
  return w;
}

Model::Model(ModelConfig cfg) : Model(cfg, init_gd_construction(cfg)) {}

Model::Model(ModelConfig cfg, AttentionWeights weights)
    : cfg_(cfg), weights_(std::move(weights)) {
  cfg_.validate();
  if (weights_.value.rows() != cfg_.rows() || weights_.value.cols() != cfg_.rows() ||
      weights_.key_query.rows() != cfg_.rows() || weights_.key_query.cols() != cfg_.rows() ||
      weights_.demo_mask.size() != cfg_.cols()) {
    throw Error(Errc::shape_mismatch, "attention weights do not match model config");
  }
}

namespace {

void require_state_shape(const Mat& z, const ModelConfig& cfg) {
  if (z.rows() != cfg.rows() || z.cols() != cfg.cols()) {
    throw Error(Errc::shape_mismatch,
                "state is " + std::to_string(z.rows()) + "x" + std::to_string(z.cols()) +
                    ", model expects " + std::to_string(cfg.rows()) + "x" +
                    std::to_string(cfg.cols()));
  }
}

Mat mask_columns(Mat m, const Vec& mask) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) *= mask[c];
  return m;
}

}  // namespace

Mat Model::raw_update(const Mat& z) const {
  require_state_shape(z, cfg_);
  const Mat vzm = mask_columns(matmul(weights_.value, z), weights_.demo_mask);
  const Mat kz = matmul(weights_.key_query, z);
  return matmul(matmul(vzm, transpose(z)), kz);
}

Mat Model::raw_update_jacobian(const Mat& z) const {
  require_state_shape(z, cfg_);
  const std::size_t rows = cfg_.rows();
  const std::size_t cols = cfg_.cols();
  const Mat& v = weights_.value;
  const Mat& k = weights_.key_query;
  const Mat kz = matmul(k, z);
  // R = V Z M Z^T K Z; differentiate each of the three Z factors.
  Mat m_a1 = matmul(transpose(z), kz);
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t j = 0; j < cols; ++j) m_a1(c, j) *= weights_.demo_mask[c];  // M Z^T K Z
  const Mat vzm = mask_columns(matmul(v, z), weights_.demo_mask);
  const Mat vzmztk = matmul(matmul(vzm, transpose(z)), k);

  const std::size_t n = rows * cols;
  Mat jac(n, n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t col = r * cols + c;
      for (std::size_t i = 0; i < rows; ++i) {
        const double v_ir = v(i, r);
        const double vzm_ic = vzm(i, c);
        const double t3 = vzmztk(i, r);
        for (std::size_t j = 0; j < cols; ++j) {
          double d = v_ir * m_a1(c, j) + vzm_ic * kz(r, j);
          if (j == c) d += t3;
          jac(i * cols + j, col) = d;
        }
      }
    }
  }
  return jac;
}

PreconditionerSet PreconditionerSet::ones(const ModelConfig& cfg) {
  PreconditionerSet p;
  p.gains.assign(cfg.layers, Vec(cfg.rows(), 1.0));
  return p;
}

std::size_t PreconditionerSet::parameter_count() const {
  std::size_t n = 0;
  for (const Vec& g : gains) n += g.size();
  return n;
}

Vec PreconditionerSet::flatten() const {
  Vec flat;
  flat.reserve(parameter_count());
  for (const Vec& g : gains) flat.insert(flat.end(), g.begin(), g.end());
  return flat;
}

PreconditionerSet PreconditionerSet::unflatten(std::span<const double> flat,
                                               const ModelConfig& cfg) {
  if (flat.size() != cfg.layers * cfg.rows()) {
    throw Error(Errc::shape_mismatch, "flat gain vector has wrong length");
  }
  PreconditionerSet p;
  p.gains.reserve(cfg.layers);
  for (std::size_t t = 0; t < cfg.layers; ++t) {
    auto first = flat.begin() + static_cast<std::ptrdiff_t>(t * cfg.rows());
    p.gains.emplace_back(first, first + static_cast<std::ptrdiff_t>(cfg.rows()));
  }
  return p;
}

void PreconditionerSet::validate(const ModelConfig& cfg) const {
  if (gains.size() != cfg.layers) {
    throw Error(Errc::shape_mismatch, "expected one gain vector per layer");
  }
  for (const Vec& g : gains) {
    if (g.size() != cfg.rows()) throw Error(Errc::shape_mismatch, "gain vector length != rows");
    if (!all_finite(g)) throw Error(Errc::non_finite, "gain vector has non-finite entries");
  }
}

LayerUpdateStats normalize_update(Mat raw, std::span<const double> gains,
                                  const ModelConfig& cfg) {
  LayerUpdateStats stats;
  if (cfg.precond_mode == PrecondMode::identity) {
    stats.applied_update = raw;
    stats.raw_update = std::move(raw);
    return stats;
  }
  const double mu = mean(raw);
  double var = 0.0;
  for (double x : raw.data()) var += (x - mu) * (x - mu);
  var /= static_cast<double>(raw.size());
  double sigma = std::sqrt(var);
  if (!(sigma > cfg.sigma_floor)) {
    sigma = cfg.sigma_floor;
    stats.sigma_floored = true;
  }
  const double shift = cfg.mean_subtract ? mu : 0.0;
  Mat applied = raw;
  for (std::size_t r = 0; r < applied.rows(); ++r)
    for (std::size_t c = 0; c < applied.cols(); ++c)
      applied(r, c) = gains[r] * (applied(r, c) - shift) / sigma;
  stats.raw_update = std::move(raw);
  stats.sigma = sigma;
  stats.mu = mu;
  stats.applied_update = std::move(applied);
  return stats;
}

LayerResult layer_update(const Mat& z, std::size_t t, const Model& model,
                         const PreconditionerSet& precond) {
  const ModelConfig& cfg = model.config();
  if (t >= cfg.layers) throw Error(Errc::shape_mismatch, "layer index out of range");
  if (precond.gains.size() != cfg.layers || precond.gains[t].size() != cfg.rows()) {
    throw Error(Errc::shape_mismatch, "preconditioner set does not match model");
  }
  LayerResult out;
  out.stats = normalize_update(model.raw_update(z), precond.gains[t], cfg);
  out.next = z + out.stats.applied_update;
  if (!all_finite(out.next)) throw Error(Errc::non_finite, "layer produced non-finite state");
  return out;
}

Trajectory forward(const Mat& z0, const Model& model, const PreconditionerSet& precond) {
  const ModelConfig& cfg = model.config();
  precond.validate(cfg);
  Trajectory traj;
  traj.states.reserve(cfg.layers + 1);
  traj.stats.reserve(cfg.layers);
  traj.states.push_back(z0);
  for (std::size_t t = 0; t < cfg.layers; ++t) {
    LayerResult step = layer_update(traj.states.back(), t, model, precond);
    traj.states.push_back(std::move(step.next));
    traj.stats.push_back(std::move(step.stats));
  }
  return traj;
}

Mat apply_preconditioner(const Mat& v, std::span<const double> gains, double sigma,
                         const ModelConfig& cfg) {
  if (cfg.precond_mode == PrecondMode::identity) return v;
  Mat out = v;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= gains[r] / sigma;
  return out;
}

Vec preconditioner_diagonal(std::span<const double> gains, double sigma,
                            const ModelConfig& cfg) {
  Vec p(cfg.rows() * cfg.cols(), 1.0);
  if (cfg.precond_mode == PrecondMode::identity) return p;
  for (std::size_t r = 0; r < cfg.rows(); ++r)
    for (std::size_t c = 0; c < cfg.cols(); ++c) p[r * cfg.cols() + c] = gains[r] / sigma;
  return p;
}

Vec read_prediction(const Mat& state, const ModelConfig& cfg) {
  require_state_shape(state, cfg);
  Vec out(cfg.out_dim());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = -state(cfg.d + o, cfg.n_demos);
  return out;
}

Vec predict(const Trajectory& traj, const ModelConfig& cfg) {
  if (traj.states.size() != cfg.layers + 1) {
    throw Error(Errc::shape_mismatch, "trajectory is incomplete");
  }
  return read_prediction(traj.states.back(), cfg);
}

}  // namespace ofa
