#pragma once

// EER / minimum normalized t-DCF, score-level fusion, and the per
// replay-configuration breakdown grid.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spoofnet/audio.hpp"

namespace spoofnet::metrics {

using audio::ConfigClass;
using audio::Label;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScoreEntry {
  std::string utterance_id;
  double score = 0.0;
  Label label = Label::unknown;
  ConfigClass attacker_distance = ConfigClass::none;
  ConfigClass speaker_quality = ConfigClass::none;
};

struct ScoreSet {
  std::string system_id;
  std::vector<ScoreEntry> entries;
};

struct TdcfParams {
  double pi_tar = 0.9405;
  double pi_non = 0.0095;
  double pi_spoof = 0.05;
  double cost_miss = 1.0;
  double cost_fa = 10.0;
  // fixed ASV operating errors
  double p_miss_asv = 0.01;
  double p_fa_asv = 0.01;
  double p_miss_spoof_asv = 0.05;

  // countermeasure cost weights of the tandem model
  double c1() const {
    return pi_tar * cost_miss * (1.0 - p_miss_asv) -
           pi_non * cost_fa * p_fa_asv;
  }
  double c2() const { return cost_fa * pi_spoof * (1.0 - p_miss_spoof_asv); }
  void validate() const;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Threshold sweep over all distinct scores with linear interpolation at the
// FAR/FRR crossing. FRR = P(bona-fide < t), FAR = P(spoof >= t).
EerResult compute_eer(const ScoreSet& scores);

// min over thresholds of (C1 * Pmiss_cm + C2 * Pfa_cm) / min(C1, C2).
double compute_min_tdcf(const ScoreSet& scores, const TdcfParams& params);

// Unweighted per-utterance score summation; ids must match across sets.
// With z_normalize, each member's scores are standardized first.
ScoreSet fuse_scores(const std::vector<ScoreSet>& sets,
                     bool z_normalize = false);

struct CellMetrics {
  double eer = 0.0;
  double min_tdcf = 0.0;
  Eigen::Index n_bonafide = 0;
  Eigen::Index n_spoof = 0;
};

struct MetricsReport {
  CellMetrics pooled;
  // keyed "AA".."CC": all bona-fide entries vs spoofs of that cell
  std::map<std::string, CellMetrics> cells;
  Eigen::Index unconfigured_spoofs = 0;
};

MetricsReport breakdown_report(const ScoreSet& scores,
                               const TdcfParams& params);

// DET operating points (threshold, FRR, FAR) for external plotting.
struct DetPoint {
  double threshold, frr, far;
};
std::vector<DetPoint> det_curve(const ScoreSet& scores);

}  // namespace spoofnet::metrics
