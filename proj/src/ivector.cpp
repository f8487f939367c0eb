#include "spoofnet/ivector.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace spoofnet::ivector {

namespace {

constexpr double kVarFloorFraction = 1e-4;

// log N(x | mu_c, diag var_c) for all components, one frame per row of out
Eigen::MatrixXd log_gaussians(const Eigen::MatrixXd& frames,
                              const GmmModel& gmm) {
  const Eigen::Index n = frames.rows(), c = gmm.components(), d = gmm.dim();
  Eigen::VectorXd log_norm(c);
  for (Eigen::Index k = 0; k < c; ++k)
    log_norm[k] = -0.5 * (d * std::log(2.0 * M_PI) +
                          gmm.variances.row(k).array().log().sum());
  Eigen::MatrixXd out(n, c);
  for (Eigen::Index k = 0; k < c; ++k) {
    const auto mu = gmm.means.row(k).array();
    const auto inv_var = gmm.variances.row(k).array().inverse();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto diff = frames.row(i).array() - mu;
      out(i, k) = log_norm[k] - 0.5 * (diff.square() * inv_var).sum();
    }
  }
  return out;
}

// responsibilities + per-frame log-likelihood
std::pair<Eigen::MatrixXd, double> posteriors(const Eigen::MatrixXd& frames,
                                              const GmmModel& gmm) {
  Eigen::MatrixXd lg = log_gaussians(frames, gmm);
  lg.rowwise() += gmm.weights.array().log().matrix().transpose();
  double total_ll = 0.0;
  for (Eigen::Index i = 0; i < lg.rows(); ++i) {
    const double mx = lg.row(i).maxCoeff();
    const double lse = mx + std::log((lg.row(i).array() - mx).exp().sum());
    total_ll += lse;
    lg.row(i) = (lg.row(i).array() - lse).exp();
  }
  return {std::move(lg), total_ll};
}

}  // namespace

double gmm_log_likelihood(const Eigen::MatrixXd& frames, const GmmModel& ubm) {
  return posteriors(frames, ubm).second;
}

GmmModel train_ubm(const Eigen::MatrixXd& frames, Eigen::Index n_components,
                   int n_iters, ad::RandomStream& rng, TrainTrace* trace) {
  const Eigen::Index n = frames.rows(), d = frames.cols();
  if (n < n_components)
    throw std::invalid_argument("train_ubm: fewer frames than components");

  const Eigen::RowVectorXd global_mean = frames.colwise().mean();
  Eigen::RowVectorXd global_var =
      (frames.rowwise() - global_mean).array().square().colwise().mean();
  const Eigen::RowVectorXd var_floor =
      (global_var.array() * kVarFloorFraction).max(1e-10);

  GmmModel gmm;
  gmm.weights = Eigen::VectorXd::Constant(n_components, 1.0 / n_components);
  gmm.means.resize(n_components, d);
  gmm.variances.resize(n_components, d);

  // k-means++ style seeding
  std::vector<Eigen::Index> centers;
  centers.push_back(rng.uniform_int(0, n - 1));
  Eigen::VectorXd d2 =
      (frames.rowwise() - frames.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<Eigen::Index>(centers.size()) < n_components) {
    const double total = d2.sum();
    double target = rng.uniform() * total;
    Eigen::Index pick = 0;
    for (; pick < n - 1; ++pick) {
      target -= d2[pick];
      if (target <= 0) break;
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin(
        (frames.rowwise() - frames.row(pick)).rowwise().squaredNorm());
  }
  for (Eigen::Index k = 0; k < n_components; ++k) {
    gmm.means.row(k) = frames.row(centers[k]);
    gmm.variances.row(k) = global_var.cwiseMax(var_floor);
  }

  for (int iter = 0; iter < n_iters; ++iter) {
    auto [gamma, ll] = posteriors(frames, gmm);
    if (trace) trace->objective.push_back(ll);

    Eigen::VectorXd occupancy = gamma.colwise().sum();
    for (Eigen::Index k = 0; k < n_components; ++k) {
      if (occupancy[k] < 1e-8) {
        // re-seed a dead component from the busiest one, slightly perturbed
        Eigen::Index busiest;
        occupancy.maxCoeff(&busiest);
        for (Eigen::Index j = 0; j < d; ++j)
          gmm.means(k, j) = gmm.means(busiest, j) +
                            0.1 * std::sqrt(gmm.variances(busiest, j)) *
                                rng.normal();
        gmm.variances.row(k) = gmm.variances.row(busiest);
        gmm.weights[k] = gmm.weights[busiest] * 0.5;
        gmm.weights[busiest] *= 0.5;
        continue;
      }
      const Eigen::RowVectorXd mean_k =
          (gamma.col(k).transpose() * frames) / occupancy[k];
      Eigen::RowVectorXd ex2 =
          (gamma.col(k).transpose() * frames.array().square().matrix()) /
          occupancy[k];
      gmm.means.row(k) = mean_k;
      gmm.variances.row(k) =
          (ex2.array() - mean_k.array().square()).max(var_floor.array());
      gmm.weights[k] = occupancy[k] / n;
    }
    gmm.weights /= gmm.weights.sum();
  }
  return gmm;
}

BwStats accumulate_stats(const Eigen::MatrixXd& frames, const GmmModel& ubm) {
  BwStats s;
  const Eigen::Index c = ubm.components(), d = ubm.dim();
  s.zeroth = Eigen::VectorXd::Zero(c);
  s.first_centered = Eigen::MatrixXd::Zero(c, d);
  if (frames.rows() == 0) {
    s.empty = true;
    return s;
  }
  auto [gamma, ll] = posteriors(frames, ubm);
  (void)ll;
  s.zeroth = gamma.colwise().sum();
  for (Eigen::Index k = 0; k < c; ++k)
    s.first_centered.row(k) =
        gamma.col(k).transpose() * frames -
        s.zeroth[k] * ubm.means.row(k);
  return s;
}

namespace {

struct Posterior {
  Eigen::VectorXd mean;   // R
  Eigen::MatrixXd covar;  // R x R, L^-1
  double evidence;        // -0.5 ln|L| + 0.5 wbar' L wbar
};

Posterior tv_posterior(const BwStats& stats, const Eigen::MatrixXd& T,
                       const GmmModel& ubm) {
  const Eigen::Index c = ubm.components(), d = ubm.dim(), r = T.cols();
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(r, r);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(r);
  for (Eigen::Index k = 0; k < c; ++k) {
    const auto Tk = T.middleRows(k * d, d);  // d x R
    const auto inv_var =
        ubm.variances.row(k).transpose().array().inverse().matrix();
    L.noalias() +=
        stats.zeroth[k] * Tk.transpose() * inv_var.asDiagonal() * Tk;
    rhs.noalias() += Tk.transpose() *
                     (inv_var.array() *
                      stats.first_centered.row(k).transpose().array())
                         .matrix();
  }
  Posterior p;
  Eigen::LLT<Eigen::MatrixXd> llt(L);
  if (llt.info() != Eigen::Success) {
    std::cerr << "warning: singular total-variability normal equations, "
                 "adding ridge\n";
    llt.compute(L + 1e-6 * Eigen::MatrixXd::Identity(r, r));
  }
  p.covar = llt.solve(Eigen::MatrixXd::Identity(r, r));
  p.mean = llt.solve(rhs);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < r; ++i)
    log_det += 2.0 * std::log(llt.matrixL()(i, i));
  p.evidence = -0.5 * log_det + 0.5 * p.mean.dot(L * p.mean);
  return p;
}

}  // namespace

Eigen::MatrixXd train_tv(const std::vector<BwStats>& stats,
                         const GmmModel& ubm, Eigen::Index rank, int n_iters,
                         ad::RandomStream& rng, TrainTrace* trace) {
  const Eigen::Index c = ubm.components(), d = ubm.dim();
  Eigen::MatrixXd T(c * d, rank);
  for (Eigen::Index i = 0; i < T.rows(); ++i)
    for (Eigen::Index j = 0; j < rank; ++j) T(i, j) = 0.1 * rng.normal();

  for (int iter = 0; iter < n_iters; ++iter) {
    double objective = 0.0;
    // E-step
    std::vector<Posterior> post;
    post.reserve(stats.size());
    for (const auto& s : stats) {
      post.push_back(tv_posterior(s, T, ubm));
      objective += post.back().evidence;
    }
    if (trace) trace->objective.push_back(objective);

    // M-step: per component, solve T_k (sum_u N_uk E[ww']) = sum_u F~_uk E[w]'
    for (Eigen::Index k = 0; k < c; ++k) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rank, rank);
      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d, rank);
      for (size_t u = 0; u < stats.size(); ++u) {
        const auto& p = post[u];
        const Eigen::MatrixXd eww =
            p.covar + p.mean * p.mean.transpose();
        A.noalias() += stats[u].zeroth[k] * eww;
        B.noalias() +=
            stats[u].first_centered.row(k).transpose() * p.mean.transpose();
      }
      Eigen::LLT<Eigen::MatrixXd> llt(A);
      if (llt.info() != Eigen::Success) {
        std::cerr << "warning: singular normal equations in TV M-step, "
                     "adding ridge\n";
        llt.compute(A + 1e-6 * Eigen::MatrixXd::Identity(rank, rank));
      }
      T.middleRows(k * d, d) = llt.solve(B.transpose()).transpose();
    }
  }
  return T;
}

Eigen::VectorXd extract_ivector(const BwStats& stats, const Eigen::MatrixXd& T,
                                const GmmModel& ubm) {
  if (stats.empty || stats.zeroth.sum() == 0.0)
    return Eigen::VectorXd::Zero(T.cols());
  return tv_posterior(stats, T, ubm).mean;
}

}  // namespace spoofnet::ivector
