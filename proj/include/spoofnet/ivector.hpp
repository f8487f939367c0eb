#pragma once

// Diagonal-covariance GMM-UBM, Baum-Welch sufficient statistics, total
// variability training (EM on M = m + Tw, w ~ N(0, I)) and i-vector
// extraction. No LDA and no length normalization downstream.

#include <vector>

#include <Eigen/Dense>

#include "spoofnet/autodiff.hpp"

namespace spoofnet::ivector {

struct GmmModel {
  Eigen::VectorXd weights;       // C, sums to 1
  Eigen::MatrixXd means;         // C x D
  Eigen::MatrixXd variances;     // C x D, floored
  Eigen::Index components() const { return weights.size(); }
  Eigen::Index dim() const { return means.cols(); }
};

struct BwStats {
  Eigen::VectorXd zeroth;          // N_c, length C
  Eigen::MatrixXd first_centered;  // F~_c = sum_t gamma_t(c) (x_t - mu_c), C x D
  bool empty = false;              // zero frames seen
};

struct TrainTrace {
  std::vector<double> objective;  // per-iteration total log-likelihood / auxf
};

// k-means++-style seeded init then diagonal EM. Empty components re-seed
// from the highest-occupancy one.
GmmModel train_ubm(const Eigen::MatrixXd& frames, Eigen::Index n_components,
                   int n_iters, ad::RandomStream& rng,
                   TrainTrace* trace = nullptr);

// Frame posteriors against the UBM, accumulated to zeroth/centered-first
// order statistics.
BwStats accumulate_stats(const Eigen::MatrixXd& frames, const GmmModel& ubm);

// EM for T ((C*D) x R). Objective: per-utterance posterior evidence
// -0.5 ln|L_u| + 0.5 wbar' L_u wbar, summed.
Eigen::MatrixXd train_tv(const std::vector<BwStats>& stats,
                         const GmmModel& ubm, Eigen::Index rank, int n_iters,
                         ad::RandomStream& rng, TrainTrace* trace = nullptr);

// Posterior mean w = (I + T' Sigma^-1 N T)^-1 T' Sigma^-1 F~.
Eigen::VectorXd extract_ivector(const BwStats& stats, const Eigen::MatrixXd& T,
                                const GmmModel& ubm);

// Total log-likelihood of frames under the GMM (for tests / traces).
double gmm_log_likelihood(const Eigen::MatrixXd& frames, const GmmModel& ubm);

}  // namespace spoofnet::ivector
