#pragma once

// Synthetic replay corpus: bona-fide clips are harmonic-plus-noise
// "speech-like" signals; spoof clips run the bona-fide generator output
// through a replay chain of lowpass (loudspeaker quality), exponential-decay
// reverberation (room), attenuation plus extra noise (recording distance).

#include <array>
#include <map>
#include <vector>

#include "spoofnet/audio.hpp"

namespace spoofnet::synth {

using audio::AudioClip;
using audio::ConfigClass;
using audio::ProtocolEntry;

struct SynthConfig {
  int n_speakers = 4;
  int n_utts_per_class = 20;
  double duration_min_s = 1.2;
  double duration_max_s = 2.0;
  int sample_rate = 16000;
  // loudspeaker quality: A perfect, B high, C low
  std::map<char, double> replay_lowpass_cutoff_hz = {
      {'A', 7600.0}, {'B', 7000.0}, {'C', 6200.0}};
  // room classes, reverberation decay time constant
  std::map<std::string, double> reverb_decay_s = {
      {"R1", 0.03}, {"R2", 0.08}, {"R3", 0.15}};
  // additional recording noise relative to the replayed signal; distance
  // classes B and C lose 5 / 10 dB of SNR on top of this
  double noise_snr_db = 48.0;
  std::uint64_t rng_seed = 1;

  void validate() const;  // throws std::invalid_argument
};

struct Corpus {
  std::vector<AudioClip> clips;
  std::vector<ProtocolEntry> protocol;
};

Corpus synthesize_corpus(const SynthConfig& cfg);

// Linear-phase windowed-sinc lowpass, then FFT convolution. Exposed for the
// corpus-generation tests.
Eigen::VectorXd lowpass(const Eigen::VectorXd& x, double cutoff_hz,
                        int sample_rate, int n_taps = 101);
Eigen::VectorXd fft_convolve(const Eigen::VectorXd& x,
                             const Eigen::VectorXd& kernel);

}  // namespace spoofnet::synth
