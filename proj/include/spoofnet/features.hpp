#pragma once

// High-resolution STFT front-end: magnitude / phase / PSD channels,
// train-time length fitting, MFCC+deltas for the i-vector branch.

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "spoofnet/audio.hpp"
#include "spoofnet/autodiff.hpp"

namespace spoofnet::features {

enum class Channel { magnitude, phase, psd };
enum class Mode { train, eval };

const char* channel_name(Channel c);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FeatureConfig {
  double window_ms = 50.0;
  double shift_ms = 20.0;
  int n_fft = 2048;  // 512 / 1024 / 2048
  std::vector<Channel> channels = {Channel::magnitude};
  Eigen::Index target_frames = 120;
  Eigen::Index wave_segment_samples = 26244;
  bool pre_emphasis = false;
  int sample_rate = 16000;

  Eigen::Index window_samples() const {
    return static_cast<Eigen::Index>(window_ms * sample_rate / 1000.0 + 0.5);
  }
  Eigen::Index hop_samples() const {
    return static_cast<Eigen::Index>(shift_ms * sample_rate / 1000.0 + 0.5);
  }
  Eigen::Index bins() const { return n_fft / 2 + 1; }
  void validate() const;
};

struct SpectroTensor {
  Eigen::Index frames = 0;
  Eigen::Index bins = 0;
  std::vector<Channel> channel_kinds;
  std::vector<Eigen::MatrixXd> channels;  // one (frames x bins) matrix each
};

// Hamming-windowed, zero-padded one-sided STFT; frames x (n_fft/2+1).
// frame count = floor((N - W)/H) + 1. Throws InputError when the clip is
// shorter than one window.
Eigen::MatrixXcd stft(const Eigen::VectorXd& samples, const FeatureConfig& cfg);

// magnitude = ln(|X| + eps); phase = principal arg with arg(0) := 0;
// psd = 10*log10(|X|^2 / (fs * U) + eps), U = sum w[n]^2.
inline constexpr double kLogEps = 1e-7;
SpectroTensor spectro_channels(const Eigen::MatrixXcd& spec,
                               const FeatureConfig& cfg);

SpectroTensor extract(const audio::AudioClip& clip, const FeatureConfig& cfg);

// Train mode: random contiguous crop when long, tile-then-crop when short.
// Eval mode: identity.
SpectroTensor fit_length(const SpectroTensor& t, const FeatureConfig& cfg,
                         Mode mode, ad::RandomStream& rng);

// Same crop/tile semantics on raw samples, target = wave_segment_samples.
Eigen::VectorXd segment_waveform(const audio::AudioClip& clip,
                                 const FeatureConfig& cfg, Mode mode,
                                 ad::RandomStream& rng);

// 20 static MFCCs (25 ms / 10 ms, 40 mel filters, DCT-II coeffs 0..19)
// + delta + delta-delta by 2-frame-window linear regression; frames x 60.
Eigen::MatrixXd mfcc_with_deltas(const audio::AudioClip& clip);

// Mel filterbank / DCT pieces, exposed for the oracle tests.
Eigen::MatrixXd mel_filterbank(int n_filters, int n_fft, int sample_rate);
Eigen::MatrixXd dct2_matrix(int n_out, int n_in);

// Binary feature container: magic, dims, channel list, little-endian f32.
void save_features(const std::filesystem::path& path, const SpectroTensor& t);
SpectroTensor load_features(const std::filesystem::path& path);

}  // namespace spoofnet::features
