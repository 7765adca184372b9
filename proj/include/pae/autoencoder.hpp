#pragma once

// Polytopic autoencoder
//
//   (rho0, rho) = mu(v) = sftmx(F_enc(v) + e1)        encoder
//   c(rho)      = sftmx(F_clstr(rho) + e1)             clustering network
//   v~          = W (c(rho) (x) rho)                   decoder
//
// with sftmx(x)_i = x_i tanh(a x_i) / sum_j x_j tanh(a x_j). Both networks
// are bias-free with origin-crossing activations, so F_enc(0) = 0 and
// F_clstr(0) = 0, which pins mu(0) = (1, 0) and c(0) = e1.
//
// Training (Adam, combined reconstruction + cross-entropy loss, k-means
// labels) and a POD baseline live here as well.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pae/common.hpp"
#include "pae/json_io.hpp"
#include "pae/sdc_model.hpp"

namespace pae {

struct TrainingConfig {
  Index r = 5;
  Index q = 3;
  double sharpness = 10.0;
  double lambda = 100.0;
  double learning_rate = 0.005;
  int epochs = 3200;
  Index batch = 64;
  std::uint64_t seed = 0;
  /// Share of epochs trained on reconstruction only before k-means labels
  /// are computed and frozen.
  double warmup_fraction = 0.1;
};

inline Json training_config_to_json(const TrainingConfig& c) {
  return Json{{"r", c.r},           {"q", c.q},
              {"a", c.sharpness},   {"lambda", c.lambda},
              {"lr", c.learning_rate}, {"epochs", c.epochs},
              {"batch", c.batch},   {"seed", c.seed},
              {"warmup_fraction", c.warmup_fraction}};
}

struct PolytopicAutoencoder {
  Index n = 0;
  Index r = 0;
  Index q = 0;
  double sharpness = 10.0;
  /// Layer weights; tanh after every layer except the last (identity).
  std::vector<Matrix> encoder;
  /// Empty when q == 1 (then c == 1 identically).
  std::vector<Matrix> clustering;
  /// n x (q r); columns i*r .. i*r + r - 1 are the basis of cluster i.
  Matrix decoder;
  Json training = Json::object();
};

struct Encoding {
  double rho0;
  Vector rho;
};

// --- softmax variant ---------------------------------------------------------

namespace detail {

inline double sftmx_g(double t, double a) { return t * std::tanh(a * t); }

inline double sftmx_dg(double t, double a) {
  const double th = std::tanh(a * t);
  return th + a * t * (1.0 - th * th);
}

/// Column-wise softmax variant. Throws on a vanishing denominator.
inline Matrix sftmx_columns(const Matrix& x, double a) {
  Matrix out(x.rows(), x.cols());
  for (Index b = 0; b < x.cols(); ++b) {
    double s = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
      out(i, b) = sftmx_g(x(i, b), a);
      s += out(i, b);
    }
    if (!(s > 0.0)) throw NumericalError("softmax variant: degenerate input (zero denominator)");
    out.col(b) /= s;
  }
  return out;
}

/// Pullback of `ds` through the column-wise softmax variant:
///   ds/dx_k = g'(x_k) / S * (ds_k - sum_i ds_i s_i).
inline Matrix sftmx_columns_backward(const Matrix& x, const Matrix& s, const Matrix& ds, double a) {
  Matrix dx(x.rows(), x.cols());
  for (Index b = 0; b < x.cols(); ++b) {
    double denom = 0.0;
    for (Index i = 0; i < x.rows(); ++i) denom += sftmx_g(x(i, b), a);
    const double inner = ds.col(b).dot(s.col(b));
    for (Index k = 0; k < x.rows(); ++k) dx(k, b) = sftmx_dg(x(k, b), a) / denom * (ds(k, b) - inner);
  }
  return dx;
}

}  // namespace detail

/// x -> (x_i tanh(a x_i) / sum_j x_j tanh(a x_j))_i
inline Vector softmax_variant(const Vector& x, double a) {
  if (x.size() == 0) throw DimensionError("softmax_variant: empty input");
  return detail::sftmx_columns(x, a);
}

// --- model construction ------------------------------------------------------

/// Layer widths n -> 4r -> 2r -> r+1 (encoder) and r -> 2q -> q (clustering),
/// weights uniform in +-1/sqrt(fan_in).
inline PolytopicAutoencoder init_autoencoder(Index n, Index r, Index q, double sharpness, std::uint64_t seed) {
  if (n < 1 || r < 1 || q < 1) throw ConfigError("autoencoder: n, r and q must be positive");
  if (!(sharpness > 0.0)) throw ConfigError("autoencoder: sharpness a must be positive");
  Rng rng(seed);
  auto layer = [&](Index out, Index in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return rng.uniform_matrix(out, in, -bound, bound);
  };
  PolytopicAutoencoder m;
  m.n = n;
  m.r = r;
  m.q = q;
  m.sharpness = sharpness;
  m.encoder = {layer(4 * r, n), layer(2 * r, 4 * r), layer(r + 1, 2 * r)};
  if (q > 1) m.clustering = {layer(2 * q, r), layer(q, 2 * q)};
  m.decoder = layer(n, q * r);
  return m;
}

namespace detail {

inline Matrix run_layers(const std::vector<Matrix>& layers, Matrix act) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    act = layers[l] * act;
    if (l + 1 < layers.size()) act = act.array().tanh().matrix();
  }
  return act;
}

}  // namespace detail

/// F_enc(v), the raw encoder network output in R^{r+1}.
inline Vector encoder_features(const PolytopicAutoencoder& m, const Vector& v) {
  require_dims(v.size() == m.n, "encode: state has size " + std::to_string(v.size()) + ", expected " +
                                    std::to_string(m.n));
  return detail::run_layers(m.encoder, v);
}

inline Encoding encode(const PolytopicAutoencoder& m, const Vector& v) {
  Vector x = encoder_features(m, v);
  x(0) += 1.0;
  const Vector mu = softmax_variant(x, m.sharpness);
  return {mu(0), mu.tail(m.r)};
}

inline Vector cluster_weights(const PolytopicAutoencoder& m, const Vector& rho) {
  require_dims(rho.size() == m.r, "cluster_weights: rho has size " + std::to_string(rho.size()));
  if (m.q == 1) return Vector::Ones(1);
  Vector y = detail::run_layers(m.clustering, rho);
  y(0) += 1.0;
  return softmax_variant(y, m.sharpness);
}

inline Vector kron(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

inline Vector decode(const PolytopicAutoencoder& m, const Vector& rho) {
  require_dims(rho.size() == m.r, "decode: rho has size " + std::to_string(rho.size()));
  return m.decoder * kron(cluster_weights(m, rho), rho);
}

/// Surrogate W (e1 (x) rho) = sum_j rho_j w_j, exact to third order at 0.
inline Vector decode_first_order(const PolytopicAutoencoder& m, const Vector& rho) {
  require_dims(rho.size() == m.r, "decode_first_order: rho has size " + std::to_string(rho.size()));
  return m.decoder.leftCols(m.r) * rho;
}

inline Vector reconstruct(const PolytopicAutoencoder& m, const Vector& v) { return decode(m, encode(m, v).rho); }

// --- loss and gradient -------------------------------------------------------

/// Gradient with the parameter layout of PolytopicAutoencoder.
struct AutoencoderGradient {
  std::vector<Matrix> encoder;
  std::vector<Matrix> clustering;
  Matrix decoder;
};

struct LossOptions {
  double lambda = 100.0;
  bool cross_entropy = true;
};

inline constexpr double kCrossEntropyClamp = 1e-12;

namespace detail {

struct ForwardCache {
  std::vector<Matrix> enc;  // enc[0] = input, enc[l+1] = layer l output
  Matrix x, mu;
  std::vector<Matrix> cl;  // cl[0] = rho
  Matrix y, c;
  Matrix theta;
  Matrix recon;
};

inline ForwardCache forward(const PolytopicAutoencoder& m, const Matrix& v) {
  ForwardCache fc;
  fc.enc.push_back(v);
  for (std::size_t l = 0; l < m.encoder.size(); ++l) {
    Matrix z = m.encoder[l] * fc.enc.back();
    if (l + 1 < m.encoder.size()) z = z.array().tanh().matrix();
    fc.enc.push_back(std::move(z));
  }
  fc.x = fc.enc.back();
  fc.x.row(0).array() += 1.0;
  fc.mu = sftmx_columns(fc.x, m.sharpness);
  const Index batch = v.cols();
  const Matrix rho = fc.mu.bottomRows(m.r);
  fc.cl.push_back(rho);
  if (m.q > 1) {
    for (std::size_t l = 0; l < m.clustering.size(); ++l) {
      Matrix z = m.clustering[l] * fc.cl.back();
      if (l + 1 < m.clustering.size()) z = z.array().tanh().matrix();
      fc.cl.push_back(std::move(z));
    }
    fc.y = fc.cl.back();
    fc.y.row(0).array() += 1.0;
    fc.c = sftmx_columns(fc.y, m.sharpness);
  } else {
    fc.c = Matrix::Ones(1, batch);
  }
  fc.theta.resize(m.q * m.r, batch);
  for (Index i = 0; i < m.q; ++i)
    fc.theta.middleRows(i * m.r, m.r) = rho.array().rowwise() * fc.c.row(i).array();
  fc.recon = m.decoder * fc.theta;
  return fc;
}

inline void backward_layers(const std::vector<Matrix>& layers, const std::vector<Matrix>& acts, Matrix grad_out,
                            std::vector<Matrix>& grads, Matrix* grad_in) {
  grads.resize(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 < layers.size()) grad_out = (grad_out.array() * (1.0 - acts[l + 1].array().square())).matrix();
    grads[l] = grad_out * acts[l].transpose();
    if (l > 0 || grad_in) grad_out = layers[l].transpose() * grad_out;
  }
  if (grad_in) *grad_in = std::move(grad_out);
}

}  // namespace detail

struct LossAndGradient {
  double loss;
  AutoencoderGradient gradient;
};

/// Batch-averaged combined loss
///   lambda ||v~ - v||_M - l . log(max(c(rho), 1e-12))
/// for states given as columns of `v` and one-hot `labels` (q x batch).
inline LossAndGradient loss_and_gradient(const PolytopicAutoencoder& m, const Matrix& v, const Matrix& labels,
                                         const Matrix& mass, const LossOptions& opt, bool want_gradient = true) {
  require_dims(v.rows() == m.n, "loss: states have " + std::to_string(v.rows()) + " rows");
  require_dims(labels.rows() == m.q && labels.cols() == v.cols(), "loss: labels have shape " + shape(labels));
  require_dims(mass.rows() == m.n && mass.cols() == m.n, "loss: mass matrix has shape " + shape(mass));
  const Index batch = v.cols();
  if (batch == 0) throw DimensionError("loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch);

  const detail::ForwardCache fc = detail::forward(m, v);
  const Matrix err = fc.recon - v;
  const Matrix merr = mass * err;

  double total = 0.0;
  Matrix d_recon(m.n, batch);
  Matrix d_c = Matrix::Zero(m.q, batch);
  for (Index b = 0; b < batch; ++b) {
    const double nrm = std::sqrt(std::max(0.0, err.col(b).dot(merr.col(b))));
    total += opt.lambda * nrm;
    if (nrm > 0.0)
      d_recon.col(b) = (opt.lambda * inv_b / nrm) * merr.col(b);
    else
      d_recon.col(b).setZero();
    if (opt.cross_entropy) {
      for (Index k = 0; k < m.q; ++k) {
        if (labels(k, b) == 0.0) continue;
        const double ck = fc.c(k, b);
        if (ck > kCrossEntropyClamp) {
          total -= labels(k, b) * std::log(ck);
          d_c(k, b) = -labels(k, b) * inv_b / ck;
        } else {
          total -= labels(k, b) * std::log(kCrossEntropyClamp);
        }
      }
    }
  }

  LossAndGradient out{total * inv_b, {}};
  if (!want_gradient) return out;

  AutoencoderGradient& g = out.gradient;
  g.decoder = d_recon * fc.theta.transpose();
  const Matrix d_theta = m.decoder.transpose() * d_recon;
  const Matrix& rho = fc.cl.front();
  Matrix d_rho = Matrix::Zero(m.r, batch);
  for (Index i = 0; i < m.q; ++i) {
    const auto blk = d_theta.middleRows(i * m.r, m.r);
    d_c.row(i) += (blk.array() * rho.array()).colwise().sum().matrix();
    d_rho += (blk.array().rowwise() * fc.c.row(i).array()).matrix();
  }
  if (m.q > 1) {
    const Matrix d_y = detail::sftmx_columns_backward(fc.y, fc.c, d_c, m.sharpness);
    Matrix d_rho_cl;
    detail::backward_layers(m.clustering, fc.cl, d_y, g.clustering, &d_rho_cl);
    d_rho += d_rho_cl;
  }
  Matrix d_mu = Matrix::Zero(m.r + 1, batch);
  d_mu.bottomRows(m.r) = d_rho;
  const Matrix d_x = detail::sftmx_columns_backward(fc.x, fc.mu, d_mu, m.sharpness);
  detail::backward_layers(m.encoder, fc.enc, d_x, g.encoder, nullptr);
  return out;
}

inline double compute_loss(const PolytopicAutoencoder& m, const Matrix& v, const Matrix& labels, double lambda,
                           const Matrix& mass) {
  return loss_and_gradient(m, v, labels, mass, {lambda, true}, false).loss;
}

/// One-hot q x N matrix from integer labels.
inline Matrix one_hot(const std::vector<int>& labels, Index q) {
  Matrix out = Matrix::Zero(q, static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require_dims(labels[i] >= 0 && labels[i] < q, "one_hot: label out of range");
    out(labels[i], static_cast<Index>(i)) = 1.0;
  }
  return out;
}

// --- k-means -------------------------------------------------------------------

struct KMeansResult {
  /// Cluster index per point; cluster 0 has the centroid nearest the origin.
  std::vector<int> labels;
  Matrix centroids;  // r x q
  int iterations = 0;
};

/// Lloyd iterations (at most `max_iter`) from k-means++ seeding on the
/// columns of `codes`, relabelled by increasing centroid norm.
inline KMeansResult kmeans_labels(const Matrix& codes, Index q, std::uint64_t seed, int max_iter = 300) {
  const Index dim = codes.rows();
  const Index count = codes.cols();
  if (q < 1) throw ConfigError("kmeans: q must be positive");
  if (count < q) throw ConfigError("kmeans: fewer points than clusters");
  {
    std::vector<std::vector<double>> pts(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) pts[static_cast<std::size_t>(i)].assign(codes.col(i).data(), codes.col(i).data() + dim);
    std::sort(pts.begin(), pts.end());
    const auto distinct = std::unique(pts.begin(), pts.end()) - pts.begin();
    if (distinct < q)
      throw ConfigError("kmeans: q = " + std::to_string(q) + " exceeds the " + std::to_string(distinct) +
                        " distinct codes");
  }

  Rng rng(seed);
  Matrix centers(dim, q);
  centers.col(0) = codes.col(static_cast<Index>(rng.below(static_cast<std::uint64_t>(count))));
  Vector d2(count);
  for (Index i = 0; i < count; ++i) d2(i) = (codes.col(i) - centers.col(0)).squaredNorm();
  for (Index k = 1; k < q; ++k) {
    const double total = d2.sum();
    Index pick = 0;
    double target = rng.uniform() * total;
    for (Index i = 0; i < count; ++i) {
      if (d2(i) <= 0.0) continue;
      pick = i;
      target -= d2(i);
      if (target < 0.0) break;
    }
    centers.col(k) = codes.col(pick);
    for (Index i = 0; i < count; ++i) d2(i) = std::min(d2(i), (codes.col(i) - centers.col(k)).squaredNorm());
  }

  std::vector<int> assign(static_cast<std::size_t>(count), -1);
  int it = 0;
  for (; it < max_iter; ++it) {
    bool changed = false;
    for (Index i = 0; i < count; ++i) {
      int best = 0;
      double best_d = (codes.col(i) - centers.col(0)).squaredNorm();
      for (Index k = 1; k < q; ++k) {
        const double d = (codes.col(i) - centers.col(k)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(k);
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed && it > 0) break;
    Matrix sums = Matrix::Zero(dim, q);
    std::vector<Index> sizes(static_cast<std::size_t>(q), 0);
    for (Index i = 0; i < count; ++i) {
      sums.col(assign[static_cast<std::size_t>(i)]) += codes.col(i);
      ++sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (Index k = 0; k < q; ++k) {
      if (sizes[static_cast<std::size_t>(k)] > 0) {
        centers.col(k) = sums.col(k) / static_cast<double>(sizes[static_cast<std::size_t>(k)]);
      } else {
        // empty cluster: move it onto the point worst served by its center
        Index far = 0;
        double far_d = -1.0;
        for (Index i = 0; i < count; ++i) {
          const double d = (codes.col(i) - centers.col(assign[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers.col(k) = codes.col(far);
        assign[static_cast<std::size_t>(far)] = static_cast<int>(k);
      }
    }
  }

  std::vector<int> order(static_cast<std::size_t>(q));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return centers.col(a).norm() < centers.col(b).norm(); });
  std::vector<int> relabel(static_cast<std::size_t>(q));
  KMeansResult out;
  out.centroids.resize(dim, q);
  for (Index k = 0; k < q; ++k) {
    relabel[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = static_cast<int>(k);
    out.centroids.col(k) = centers.col(order[static_cast<std::size_t>(k)]);
  }
  out.labels.resize(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i)
    out.labels[static_cast<std::size_t>(i)] = relabel[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
  out.iterations = it;
  return out;
}

// --- training ------------------------------------------------------------------

class TrainingDivergence : public NumericalError {
 public:
  explicit TrainingDivergence(int epoch)
      : NumericalError("training diverged (loss is not finite) at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TrainingResult {
  PolytopicAutoencoder model;
  /// Loss over the full data set before training, then the mean batch loss
  /// of every epoch.
  std::vector<double> loss_history;
  std::vector<int> labels;
};

namespace detail {

class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(std::vector<Matrix*> params, const std::vector<const Matrix*>& grads) {
    if (m_.empty()) {
      for (Matrix* p : params) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        v_.push_back(Matrix::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * *grads[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grads[i]->cwiseAbs2();
      params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

inline std::vector<Matrix*> parameters(PolytopicAutoencoder& m) {
  std::vector<Matrix*> out;
  for (Matrix& w : m.encoder) out.push_back(&w);
  for (Matrix& w : m.clustering) out.push_back(&w);
  out.push_back(&m.decoder);
  return out;
}

inline std::vector<const Matrix*> parameters(const AutoencoderGradient& g) {
  std::vector<const Matrix*> out;
  for (const Matrix& w : g.encoder) out.push_back(&w);
  for (const Matrix& w : g.clustering) out.push_back(&w);
  out.push_back(&g.decoder);
  return out;
}

inline Matrix columns(const Matrix& m, const std::vector<Index>& idx, std::size_t begin, std::size_t end) {
  Matrix out(m.rows(), static_cast<Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Index>(k - begin)) = m.col(idx[k]);
  return out;
}

}  // namespace detail

inline Matrix encode_all(const PolytopicAutoencoder& m, const Matrix& snapshots) {
  return detail::forward(m, snapshots).mu.bottomRows(m.r);
}

/// Semi-supervised training: a reconstruction-only warm-up, k-means labels
/// from the warm-up codes (frozen afterwards), then the combined loss.
/// Deterministic for a given seed. Throws TrainingDivergence on a non-finite
/// epoch loss.
inline TrainingResult train(const Matrix& snapshots, const Matrix& mass, const TrainingConfig& cfg) {
  const Index n = snapshots.rows();
  const Index count = snapshots.cols();
  if (cfg.batch < 1) throw ConfigError("train: batch size must be positive");
  if (count < cfg.batch) throw ConfigError("train: fewer snapshots than the batch size");
  if (cfg.epochs < 0) throw ConfigError("train: negative epoch count");
  if (!(cfg.lambda > 0.0)) throw ConfigError("train: lambda must be positive");
  require_dims(mass.rows() == n && mass.cols() == n, "train: mass matrix has shape " + shape(mass));

  TrainingResult res;
  res.model = init_autoencoder(n, cfg.r, cfg.q, cfg.sharpness, cfg.seed);
  res.model.training = training_config_to_json(cfg);
  res.labels.assign(static_cast<std::size_t>(count), 0);
  Matrix labels = one_hot(res.labels, cfg.q);
  res.loss_history.push_back(loss_and_gradient(res.model, snapshots, labels, mass, {cfg.lambda, false}, false).loss);
  if (cfg.epochs == 0) return res;

  const int warmup =
      cfg.q > 1 ? std::max(1, static_cast<int>(std::lround(cfg.warmup_fraction * cfg.epochs))) : 0;
  Rng rng(cfg.seed + 0x9E3779B97F4A7C15ULL);
  detail::Adam adam(cfg.learning_rate);
  std::vector<Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.q > 1 && epoch == warmup) {
      res.labels = kmeans_labels(encode_all(res.model, snapshots), cfg.q, cfg.seed).labels;
      labels = one_hot(res.labels, cfg.q);
    }
    const LossOptions opt{cfg.lambda, cfg.q > 1 && epoch >= warmup};
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const Matrix vb = detail::columns(snapshots, order, start, end);
      const Matrix lb = detail::columns(labels, order, start, end);
      const LossAndGradient lg = loss_and_gradient(res.model, vb, lb, mass, opt);
      if (!std::isfinite(lg.loss)) throw TrainingDivergence(epoch);
      epoch_loss += lg.loss * static_cast<double>(end - start);
      adam.step(detail::parameters(res.model), detail::parameters(lg.gradient));
    }
    epoch_loss /= static_cast<double>(count);
    if (!std::isfinite(epoch_loss)) throw TrainingDivergence(epoch);
    res.loss_history.push_back(epoch_loss);
  }
  return res;
}

// --- POD baseline --------------------------------------------------------------

struct PodBasis {
  /// n x r, columns orthonormal in the M inner product.
  Matrix basis;
  /// All singular values of the M-weighted snapshot matrix.
  Vector singular_values;
  Matrix mass;

  Index n() const { return basis.rows(); }
  Index r() const { return basis.cols(); }

  Vector reconstruct(const Vector& v) const { return basis * (basis.transpose() * (mass * v)); }
};

/// Leading r left singular directions of L^T S with M = L L^T, mapped back
/// by L^{-T}.
inline PodBasis pod_basis(const Matrix& snapshots, Index r, const Matrix& mass) {
  const Index n = snapshots.rows();
  require_dims(mass.rows() == n && mass.cols() == n, "pod_basis: mass matrix has shape " + shape(mass));
  if (r < 1 || r > std::min(n, snapshots.cols()))
    throw ConfigError("pod_basis: r = " + std::to_string(r) + " exceeds min(n, N)");
  Eigen::LLT<Matrix> llt(mass);
  if (llt.info() != Eigen::Success) throw NumericalError("pod_basis: mass matrix is not positive definite");
  const Matrix lt = llt.matrixU();
  Eigen::BDCSVD<Matrix> svd(lt * snapshots, Eigen::ComputeThinU);
  PodBasis out;
  out.singular_values = svd.singularValues();
  out.basis = llt.matrixU().solve(svd.matrixU().leftCols(r));
  out.mass = mass;
  return out;
}

// --- model complexity ------------------------------------------------------------

struct ComplexityRow {
  std::string scheme;
  Index r = 0;
  Index q = 1;
  Index encoding_params = 0;
  Index encoding_layers = 0;
  bool encoding_nonlinear = false;
  /// Parameters of the clustering network (0 for POD and q = 1).
  Index clustering_params = 0;
  /// Entries of the linear decoder map.
  Index decoder_params = 0;
  Index decoding_nonlinear_layers = 0;
  Index decoding_linear_layers = 1;

  Index decoding_params() const { return clustering_params + decoder_params; }
};

inline ComplexityRow count_parameters(const PolytopicAutoencoder& m) {
  ComplexityRow row;
  row.scheme = "PAE " + std::to_string(m.q) + " " + std::to_string(m.r);
  row.r = m.r;
  row.q = m.q;
  for (const Matrix& w : m.encoder) row.encoding_params += w.size();
  row.encoding_layers = static_cast<Index>(m.encoder.size());
  row.encoding_nonlinear = true;
  for (const Matrix& w : m.clustering) row.clustering_params += w.size();
  row.decoder_params = m.decoder.size();
  row.decoding_nonlinear_layers = static_cast<Index>(m.clustering.size());
  return row;
}

inline ComplexityRow count_parameters(const PodBasis& pod) {
  ComplexityRow row;
  row.scheme = "POD " + std::to_string(pod.r());
  row.r = pod.r();
  row.encoding_params = pod.basis.size();
  row.encoding_layers = 1;
  row.decoder_params = pod.basis.size();
  return row;
}

// --- serialization ---------------------------------------------------------------

inline Json model_to_json(const PolytopicAutoencoder& m) {
  Json j;
  j["kind"] = "pae";
  j["n"] = m.n;
  j["r"] = m.r;
  j["q"] = m.q;
  j["a"] = m.sharpness;
  j["encoder"] = Json::array();
  for (const Matrix& w : m.encoder) j["encoder"].push_back(matrix_to_json(w));
  j["clustering"] = Json::array();
  for (const Matrix& w : m.clustering) j["clustering"].push_back(matrix_to_json(w));
  j["W"] = matrix_to_json(m.decoder);
  j["training"] = m.training;
  return j;
}

inline PolytopicAutoencoder model_from_json(const Json& j) {
  PolytopicAutoencoder m;
  try {
    m.n = j.at("n").get<Index>();
    m.r = j.at("r").get<Index>();
    m.q = j.at("q").get<Index>();
    m.sharpness = j.at("a").get<double>();
    for (const Json& w : j.at("encoder")) m.encoder.push_back(matrix_from_json(w));
    for (const Json& w : j.at("clustering")) m.clustering.push_back(matrix_from_json(w));
    m.decoder = matrix_from_json(j.at("W"), m.q * m.r);
    m.training = j.value("training", Json::object());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("model JSON: ") + e.what());
  }
  require_dims(m.encoder.size() == 3 && m.encoder.front().cols() == m.n && m.encoder.back().rows() == m.r + 1,
               "model JSON: encoder layer shapes inconsistent with n, r");
  require_dims(m.q == 1 ? m.clustering.empty()
                        : (m.clustering.size() == 2 && m.clustering.front().cols() == m.r &&
                           m.clustering.back().rows() == m.q),
               "model JSON: clustering layer shapes inconsistent with r, q");
  require_dims(m.decoder.rows() == m.n && m.decoder.cols() == m.q * m.r, "model JSON: W has shape " +
                                                                             shape(m.decoder));
  return m;
}

inline Json pod_to_json(const PodBasis& pod) {
  return Json{{"kind", "pod"},
              {"n", pod.n()},
              {"r", pod.r()},
              {"basis", matrix_to_json(pod.basis)},
              {"singular_values", vector_to_json(pod.singular_values)},
              {"mass", matrix_to_json(pod.mass)}};
}

inline PodBasis pod_from_json(const Json& j) {
  PodBasis pod;
  try {
    pod.basis = matrix_from_json(j.at("basis"), j.at("r").get<Index>());
    pod.singular_values = vector_from_json(j.at("singular_values"));
    pod.mass = matrix_from_json(j.at("mass"));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("POD JSON: ") + e.what());
  }
  return pod;
}

}  // namespace pae
