#include "spoofnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

namespace spoofnet::metrics {

void TdcfParams::validate() const {
  if (pi_tar < 0 || pi_non < 0 || pi_spoof < 0 ||
      std::abs(pi_tar + pi_non + pi_spoof - 1.0) > 1e-9)
    throw ConfigError("t-DCF priors must be >= 0 and sum to 1");
  if (cost_miss <= 0 || cost_fa <= 0)
    throw ConfigError("t-DCF costs must be positive");
  if (std::min(c1(), c2()) <= 0)
    throw ConfigError("t-DCF normalizer min(C1,C2) must be positive");
}

namespace {

struct SplitScores {
  std::vector<double> bona, spoof;
};

SplitScores split(const ScoreSet& scores) {
  SplitScores s;
  for (const auto& e : scores.entries) {
    if (!std::isfinite(e.score))
      throw InputError("non-finite score for " + e.utterance_id);
    if (e.label == Label::bonafide)
      s.bona.push_back(e.score);
    else if (e.label == Label::spoof)
      s.spoof.push_back(e.score);
  }
  if (s.bona.empty() || s.spoof.empty())
    throw InputError("need at least one bona-fide and one spoof entry");
  std::sort(s.bona.begin(), s.bona.end());
  std::sort(s.spoof.begin(), s.spoof.end());
  return s;
}

double frr_at(const std::vector<double>& bona, double t) {
  // P(bona < t)
  const auto it = std::lower_bound(bona.begin(), bona.end(), t);
  return double(it - bona.begin()) / bona.size();
}

double far_at(const std::vector<double>& spoof, double t) {
  // P(spoof >= t)
  const auto it = std::lower_bound(spoof.begin(), spoof.end(), t);
  return double(spoof.end() - it) / spoof.size();
}

std::vector<double> candidate_thresholds(const SplitScores& s) {
  std::set<double> uniq(s.bona.begin(), s.bona.end());
  uniq.insert(s.spoof.begin(), s.spoof.end());
  std::vector<double> t(uniq.begin(), uniq.end());
  t.push_back(std::nexttoward(t.back(), std::numeric_limits<double>::max()) +
              1.0);  // above-max endpoint: FRR 1, FAR 0
  return t;
}

}  // namespace

std::vector<DetPoint> det_curve(const ScoreSet& scores) {
  const SplitScores s = split(scores);
  std::vector<DetPoint> pts;
  for (double t : candidate_thresholds(s))
    pts.push_back({t, frr_at(s.bona, t), far_at(s.spoof, t)});
  return pts;
}

EerResult compute_eer(const ScoreSet& scores) {
  const SplitScores s = split(scores);
  const auto thresholds = candidate_thresholds(s);

  double prev_t = -std::numeric_limits<double>::infinity();
  double prev_frr = 0.0, prev_far = 1.0;
  for (double t : thresholds) {
    const double frr = frr_at(s.bona, t);
    const double far = far_at(s.spoof, t);
    if (far <= frr) {
      const double d1 = prev_far - prev_frr;  // >= 0
      const double d2 = far - frr;            // <= 0
      if (d1 <= 0.0) return {prev_frr, prev_t};
      const double alpha = d1 / (d1 - d2);
      return {prev_frr + alpha * (frr - prev_frr),
              prev_t + alpha * (t - prev_t)};
    }
    prev_t = t;
    prev_frr = frr;
    prev_far = far;
  }
  return {prev_frr, prev_t};  // unreachable: endpoint has far 0 <= frr
}

double compute_min_tdcf(const ScoreSet& scores, const TdcfParams& params) {
  params.validate();
  const SplitScores s = split(scores);
  const double c1 = params.c1(), c2 = params.c2();
  const double norm = std::min(c1, c2);
  double best = std::numeric_limits<double>::infinity();
  // -inf boundary (accept everything): Pmiss 0, Pfa 1
  best = std::min(best, c2 / norm);
  for (double t : candidate_thresholds(s)) {
    const double cost =
        c1 * frr_at(s.bona, t) + c2 * far_at(s.spoof, t);
    best = std::min(best, cost / norm);
  }
  return best;
}

ScoreSet fuse_scores(const std::vector<ScoreSet>& sets, bool z_normalize) {
  if (sets.empty()) throw InputError("fuse_scores: no input sets");
  // id-set equality check with a symmetric-difference report
  std::set<std::string> ref_ids;
  for (const auto& e : sets[0].entries) ref_ids.insert(e.utterance_id);
  for (const auto& set : sets) {
    std::set<std::string> ids;
    for (const auto& e : set.entries) ids.insert(e.utterance_id);
    if (ids != ref_ids) {
      std::string diff;
      std::set<std::string> sym;
      std::set_symmetric_difference(ids.begin(), ids.end(), ref_ids.begin(),
                                    ref_ids.end(),
                                    std::inserter(sym, sym.begin()));
      for (const auto& id : sym) diff += " " + id;
      throw InputError("fuse_scores: utterance-id mismatch between '" +
                       sets[0].system_id + "' and '" + set.system_id +
                       "':" + diff);
    }
  }

  ScoreSet fused;
  fused.entries = sets[0].entries;
  fused.system_id = sets[0].system_id;
  for (size_t i = 1; i < sets.size(); ++i)
    fused.system_id += "+" + sets[i].system_id;
  for (auto& e : fused.entries) e.score = 0.0;

  std::unordered_map<std::string, size_t> index;
  for (size_t i = 0; i < fused.entries.size(); ++i)
    index[fused.entries[i].utterance_id] = i;

  for (const auto& set : sets) {
    double mu = 0.0, sd = 1.0;
    if (z_normalize) {
      mu = 0.0;
      for (const auto& e : set.entries) mu += e.score;
      mu /= set.entries.size();
      double var = 0.0;
      for (const auto& e : set.entries) var += (e.score - mu) * (e.score - mu);
      sd = std::sqrt(var / set.entries.size());
      if (sd == 0.0) sd = 1.0;
    }
    for (const auto& e : set.entries)
      fused.entries[index[e.utterance_id]].score += (e.score - mu) / sd;
  }
  return fused;
}

MetricsReport breakdown_report(const ScoreSet& scores,
                               const TdcfParams& params) {
  MetricsReport report;
  report.pooled.eer = compute_eer(scores).eer;
  report.pooled.min_tdcf = compute_min_tdcf(scores, params);
  for (const auto& e : scores.entries) {
    if (e.label == Label::bonafide) ++report.pooled.n_bonafide;
    if (e.label == Label::spoof) ++report.pooled.n_spoof;
  }

  const ConfigClass classes[3] = {ConfigClass::A, ConfigClass::B,
                                  ConfigClass::C};
  for (ConfigClass d : classes) {
    for (ConfigClass q : classes) {
      ScoreSet cell;
      cell.system_id = scores.system_id;
      for (const auto& e : scores.entries) {
        if (e.label == Label::bonafide)
          cell.entries.push_back(e);
        else if (e.label == Label::spoof && e.attacker_distance == d &&
                 e.speaker_quality == q)
          cell.entries.push_back(e);
      }
      const Eigen::Index n_spoof =
          static_cast<Eigen::Index>(cell.entries.size()) -
          report.pooled.n_bonafide;
      if (n_spoof == 0) continue;  // empty cell: absent, not zero
      CellMetrics m;
      m.eer = compute_eer(cell).eer;
      m.min_tdcf = compute_min_tdcf(cell, params);
      m.n_bonafide = report.pooled.n_bonafide;
      m.n_spoof = n_spoof;
      const std::string key = std::string(1, audio::config_class_name(d)) +
                              audio::config_class_name(q);
      report.cells[key] = m;
    }
  }
  for (const auto& e : scores.entries)
    if (e.label == Label::spoof && (e.attacker_distance == ConfigClass::none ||
                                    e.speaker_quality == ConfigClass::none))
      ++report.unconfigured_spoofs;
  return report;
}

}  // namespace spoofnet::metrics
