#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "spoofnet/features.hpp"
#include "spoofnet/ivector.hpp"
#include "spoofnet/synth.hpp"

using namespace spoofnet;

namespace {

Eigen::MatrixXd random_frames(Eigen::Index n, Eigen::Index d,
                              std::uint64_t seed) {
  ad::RandomStream rng(seed);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

// largest principal angle (degrees) between the column spans of A and B
double principal_angle_deg(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qa(A), qb(B);
  Eigen::MatrixXd Qa =
      qa.householderQ() * Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd Qb =
      qb.householderQ() * Eigen::MatrixXd::Identity(B.rows(), B.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Qa.transpose() * Qb);
  const double c = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("C=1 UBM equals the sample mean and variance exactly") {
  const auto frames = random_frames(500, 6, 3);
  ad::RandomStream rng(1);
  auto ubm = ivector::train_ubm(frames, 1, 5, rng);
  REQUIRE(ubm.components() == 1);
  CHECK(ubm.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  const Eigen::RowVectorXd mean = frames.colwise().mean();
  CHECK((ubm.means.row(0) - mean).cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::RowVectorXd var =
      (frames.rowwise() - mean).array().square().colwise().mean();
  CHECK((ubm.variances.row(0) - var).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("EM log-likelihood is monotone and weights stay a simplex") {
  // mixture data: 3 separated blobs
  Eigen::MatrixXd frames(900, 4);
  ad::RandomStream gen(9);
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    const int c = static_cast<int>(i % 3);
    for (Eigen::Index j = 0; j < 4; ++j)
      frames(i, j) = 4.0 * c + 0.5 * gen.normal();
  }
  ad::RandomStream rng(2);
  ivector::TrainTrace trace;
  auto ubm = ivector::train_ubm(frames, 8, 12, rng, &trace);
  REQUIRE(trace.objective.size() >= 2);
  for (size_t i = 1; i < trace.objective.size(); ++i)
    CHECK(trace.objective[i] >= trace.objective[i - 1] - 1e-8);
  CHECK(ubm.weights.sum() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(ubm.weights.minCoeff() >= 0.0);
  CHECK(ubm.variances.minCoeff() > 0.0);
}

TEST_CASE("posteriors saturate on far-separated components") {
  Eigen::MatrixXd frames(200, 2);
  for (Eigen::Index i = 0; i < 200; ++i) {
    const double base = i < 100 ? 0.0 : 50.0;
    frames(i, 0) = base + 0.1 * std::sin(i * 0.7);
    frames(i, 1) = base + 0.1 * std::cos(i * 1.3);
  }
  ad::RandomStream rng(5);
  auto ubm = ivector::train_ubm(frames, 2, 10, rng);
  auto stats = ivector::accumulate_stats(frames, ubm);
  CHECK(stats.zeroth.sum() == doctest::Approx(200.0).epsilon(1e-8));
  // each component owns exactly one blob
  CHECK(std::abs(stats.zeroth[0] - 100.0) < 1e-6);
  CHECK(std::abs(stats.zeroth[1] - 100.0) < 1e-6);

  // frames at the component means: centered first-order stats vanish
  Eigen::MatrixXd at_means(2, 2);
  at_means.row(0) = ubm.means.row(0);
  at_means.row(1) = ubm.means.row(1);
  auto s2 = ivector::accumulate_stats(at_means, ubm);
  CHECK(s2.first_centered.cwiseAbs().maxCoeff() < 1e-6);

  auto empty = ivector::accumulate_stats(Eigen::MatrixXd(0, 2), ubm);
  CHECK(empty.empty);
  CHECK(empty.zeroth.sum() == 0.0);
}

TEST_CASE("scalar i-vector closed form: w = 3/(1+2) = 1") {
  ivector::GmmModel ubm;
  ubm.weights = Eigen::VectorXd::Ones(1);
  ubm.means = Eigen::MatrixXd::Zero(1, 1);
  ubm.variances = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd T(1, 1);
  T << 1.0;
  ivector::BwStats stats;
  stats.zeroth = Eigen::VectorXd::Constant(1, 2.0);
  stats.first_centered = Eigen::MatrixXd::Constant(1, 1, 3.0);
  const auto w = ivector::extract_ivector(stats, T, ubm);
  REQUIRE(w.size() == 1);
  CHECK(std::abs(w[0] - 1.0) <= 1e-12);

  // F~ = 0 -> w = 0
  stats.first_centered.setZero();
  CHECK(ivector::extract_ivector(stats, T, ubm).cwiseAbs().maxCoeff() == 0.0);

  // N = 0 -> w = 0
  stats.zeroth.setZero();
  stats.first_centered.setConstant(3.0);
  stats.empty = true;
  CHECK(ivector::extract_ivector(stats, T, ubm).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("TV training recovers a planted subspace within 5 degrees") {
  // C=4 components, dim 3, rank 2, data = m + T0 w + small noise
  const Eigen::Index C = 4, D = 3, R = 2, n_utts = 120;
  ad::RandomStream gen(21);
  ivector::GmmModel ubm;
  ubm.weights = Eigen::VectorXd::Constant(C, 1.0 / C);
  ubm.means = Eigen::MatrixXd::Zero(C, D);
  for (Eigen::Index i = 0; i < C * D; ++i) ubm.means.data()[i] = gen.normal();
  ubm.variances = Eigen::MatrixXd::Constant(C, D, 0.01);

  Eigen::MatrixXd T0(C * D, R);
  for (Eigen::Index i = 0; i < T0.size(); ++i) T0.data()[i] = gen.normal();

  std::vector<ivector::BwStats> stats(n_utts);
  for (auto& s : stats) {
    Eigen::VectorXd w(R);
    w << gen.normal(), gen.normal();
    const Eigen::VectorXd shift = T0 * w;  // per-component mean offsets
    s.zeroth = Eigen::VectorXd::Constant(C, 40.0);  // 40 frames per component
    s.first_centered.resize(C, D);
    for (Eigen::Index c = 0; c < C; ++c)
      for (Eigen::Index d = 0; d < D; ++d)
        s.first_centered(c, d) =
            s.zeroth[c] * (shift[c * D + d] + 0.005 * gen.normal());
  }

  ad::RandomStream rng(4);
  ivector::TrainTrace trace;
  auto T = ivector::train_tv(stats, ubm, R, 12, rng, &trace);
  REQUIRE(T.rows() == C * D);
  REQUIRE(T.cols() == R);
  for (size_t i = 1; i < trace.objective.size(); ++i)
    CHECK(trace.objective[i] >= trace.objective[i - 1] - 1e-6);
  CHECK(principal_angle_deg(T, T0) <= 5.0);
}

TEST_CASE("no length normalization: i-vector norms vary across utterances") {
  const Eigen::Index C = 2, D = 2, R = 2;
  ad::RandomStream gen(31);
  ivector::GmmModel ubm;
  ubm.weights = Eigen::VectorXd::Constant(C, 0.5);
  ubm.means = Eigen::MatrixXd::Zero(C, D);
  ubm.variances = Eigen::MatrixXd::Ones(C, D);
  Eigen::MatrixXd T(C * D, R);
  for (Eigen::Index i = 0; i < T.size(); ++i) T.data()[i] = gen.normal();

  std::vector<double> norms;
  for (int u = 0; u < 6; ++u) {
    ivector::BwStats s;
    s.zeroth = Eigen::VectorXd::Constant(C, 10.0 + u);
    s.first_centered.resize(C, D);
    for (Eigen::Index i = 0; i < s.first_centered.size(); ++i)
      s.first_centered.data()[i] = 3.0 * gen.normal();
    norms.push_back(ivector::extract_ivector(s, T, ubm).norm());
  }
  double lo = norms[0], hi = norms[0];
  for (double n : norms) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  CHECK(hi - lo > 1e-3);  // clearly not unit-normalized
}

TEST_CASE("desk-scale pipeline separates the synthetic classes") {
  synth::SynthConfig cfg;
  cfg.n_utts_per_class = 100;  // 200 utterances total
  cfg.duration_min_s = 2.0;
  cfg.duration_max_s = 3.0;
  cfg.rng_seed = 13;
  auto corpus = synth::synthesize_corpus(cfg);

  std::vector<Eigen::MatrixXd> mfccs;
  std::vector<int> labels;
  for (const auto& clip : corpus.clips) {
    mfccs.push_back(features::mfcc_with_deltas(clip));
    labels.push_back(clip.label == audio::Label::bonafide ? 0 : 1);
  }
  Eigen::Index total = 0;
  for (const auto& m : mfccs) total += m.rows();
  Eigen::MatrixXd pooled(total, 60);
  Eigen::Index row = 0;
  for (const auto& m : mfccs) {
    pooled.middleRows(row, m.rows()) = m;
    row += m.rows();
  }

  ad::RandomStream rng(6);
  auto ubm = ivector::train_ubm(pooled, 32, 8, rng);
  std::vector<ivector::BwStats> stats;
  for (const auto& m : mfccs)
    stats.push_back(ivector::accumulate_stats(m, ubm));
  auto T = ivector::train_tv(stats, ubm, 50, 5, rng);

  Eigen::MatrixXd ivecs(stats.size(), 50);
  for (size_t i = 0; i < stats.size(); ++i)
    ivecs.row(i) = ivector::extract_ivector(stats[i], T, ubm).transpose();

  // project on the class-mean difference direction, threshold at midpoint
  Eigen::VectorXd mean0 = Eigen::VectorXd::Zero(50),
                  mean1 = Eigen::VectorXd::Zero(50);
  int n0 = 0, n1 = 0;
  for (size_t i = 0; i < stats.size(); ++i) {
    if (labels[i] == 0) {
      mean0 += ivecs.row(i).transpose();
      ++n0;
    } else {
      mean1 += ivecs.row(i).transpose();
      ++n1;
    }
  }
  mean0 /= n0;
  mean1 /= n1;
  // Fisher discriminant: whiten by the within-class scatter
  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(50, 50);
  for (size_t i = 0; i < stats.size(); ++i) {
    const Eigen::VectorXd d =
        ivecs.row(i).transpose() - (labels[i] == 0 ? mean0 : mean1);
    sw += d * d.transpose();
  }
  sw /= static_cast<double>(stats.size());
  sw += 1e-6 * sw.trace() / 50 * Eigen::MatrixXd::Identity(50, 50);
  const Eigen::VectorXd dir = sw.ldlt().solve(mean1 - mean0);
  std::vector<double> proj(stats.size());
  for (size_t i = 0; i < stats.size(); ++i) proj[i] = ivecs.row(i).dot(dir);
  // best single threshold along the discriminant direction
  int best = 0;
  for (double t : proj) {
    int correct = 0;
    for (size_t i = 0; i < stats.size(); ++i)
      if ((proj[i] > t ? 1 : 0) == labels[i]) ++correct;
    best = std::max(best, correct);
  }
  CHECK(static_cast<double>(best) / labels.size() >= 0.90);
}
