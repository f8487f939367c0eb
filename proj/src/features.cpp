#include "spoofnet/features.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <cstring>
#include <fstream>

namespace spoofnet::features {

const char* channel_name(Channel c) {
  switch (c) {
    case Channel::magnitude:
      return "magnitude";
    case Channel::phase:
      return "phase";
    default:
      return "psd";
  }
}

void FeatureConfig::validate() const {
  if (n_fft != 512 && n_fft != 1024 && n_fft != 2048)
    throw ConfigError("n_fft must be 512, 1024 or 2048");
  if (channels.empty()) throw ConfigError("channel list is empty");
  if (target_frames < 1) throw ConfigError("target_frames must be >= 1");
  if (window_ms <= 0 || shift_ms <= 0)
    throw ConfigError("window/shift must be positive");
  if (window_samples() > n_fft)
    throw ConfigError("window of " + std::to_string(window_samples()) +
                      " samples exceeds n_fft " + std::to_string(n_fft) +
                      " (zero-padding only)");
}

namespace {

Eigen::VectorXd hamming(Eigen::Index n) {
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n - 1));
  return w;
}

Eigen::VectorXd pre_emphasize(const Eigen::VectorXd& x, double coef = 0.97) {
  Eigen::VectorXd y = x;
  for (Eigen::Index i = x.size() - 1; i > 0; --i) y[i] -= coef * x[i - 1];
  return y;
}

}  // namespace

Eigen::MatrixXcd stft(const Eigen::VectorXd& samples,
                      const FeatureConfig& cfg) {
  cfg.validate();
  const Eigen::Index w = cfg.window_samples();
  const Eigen::Index h = cfg.hop_samples();
  if (samples.size() < w)
    throw InputError("clip shorter than one analysis window (" +
                     std::to_string(samples.size()) + " < " +
                     std::to_string(w) + " samples)");
  const Eigen::VectorXd x =
      cfg.pre_emphasis ? pre_emphasize(samples) : samples;
  const Eigen::Index frames = (x.size() - w) / h + 1;
  const Eigen::Index bins = cfg.bins();
  const Eigen::VectorXd win = hamming(w);
  // when n_fft < window, the tail is folded off by plain truncation; the
  // supported configs keep n_fft >= window except the 30ms/512 regime,
  // where truncation to n_fft matches the fixed transform size
  const Eigen::Index m = std::min<Eigen::Index>(w, cfg.n_fft);

  Eigen::FFT<double> fft;
  Eigen::MatrixXcd out(frames, bins);
  Eigen::VectorXd frame = Eigen::VectorXd::Zero(cfg.n_fft);
  Eigen::VectorXcd spec;
  for (Eigen::Index f = 0; f < frames; ++f) {
    frame.setZero();
    frame.head(m) =
        x.segment(f * h, w).cwiseProduct(win).head(m);
    fft.fwd(spec, frame);
    out.row(f) = spec.head(bins);
  }
  return out;
}

SpectroTensor spectro_channels(const Eigen::MatrixXcd& spec,
                               const FeatureConfig& cfg) {
  cfg.validate();
  SpectroTensor t;
  t.frames = spec.rows();
  t.bins = spec.cols();
  t.channel_kinds = cfg.channels;
  const Eigen::Index w = cfg.window_samples();
  const double window_energy = hamming(w).squaredNorm();
  const double psd_norm = cfg.sample_rate * window_energy;
  for (Channel c : cfg.channels) {
    Eigen::MatrixXd m(t.frames, t.bins);
    switch (c) {
      case Channel::magnitude:
        m = (spec.cwiseAbs().array() + kLogEps).log();
        break;
      case Channel::phase:
        for (Eigen::Index i = 0; i < t.frames; ++i)
          for (Eigen::Index j = 0; j < t.bins; ++j) {
            const auto z = spec(i, j);
            m(i, j) = (z == std::complex<double>(0.0, 0.0))
                          ? 0.0
                          : std::arg(z);
          }
        break;
      case Channel::psd:
        m = (spec.cwiseAbs2().array() / psd_norm + kLogEps).log10() * 10.0;
        break;
    }
    t.channels.push_back(std::move(m));
  }
  return t;
}

SpectroTensor extract(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  return spectro_channels(stft(clip.samples, cfg), cfg);
}

namespace {

// crop or tile row indices to reach `target` entries
std::vector<Eigen::Index> fit_indices(Eigen::Index n, Eigen::Index target,
                                      Mode mode, ad::RandomStream& rng) {
  std::vector<Eigen::Index> idx;
  if (mode == Mode::eval || n == target) {
    idx.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  idx.reserve(target);
  if (n > target) {
    const Eigen::Index start = rng.uniform_int(0, n - target);
    for (Eigen::Index i = 0; i < target; ++i) idx.push_back(start + i);
  } else {
    while (static_cast<Eigen::Index>(idx.size()) < target)
      for (Eigen::Index i = 0;
           i < n && static_cast<Eigen::Index>(idx.size()) < target; ++i)
        idx.push_back(i);
  }
  return idx;
}

}  // namespace

SpectroTensor fit_length(const SpectroTensor& t, const FeatureConfig& cfg,
                         Mode mode, ad::RandomStream& rng) {
  if (mode == Mode::eval || t.frames == cfg.target_frames) return t;
  const auto idx = fit_indices(t.frames, cfg.target_frames, mode, rng);
  SpectroTensor out;
  out.frames = cfg.target_frames;
  out.bins = t.bins;
  out.channel_kinds = t.channel_kinds;
  for (const auto& ch : t.channels) {
    Eigen::MatrixXd m(out.frames, out.bins);
    for (Eigen::Index i = 0; i < out.frames; ++i) m.row(i) = ch.row(idx[i]);
    out.channels.push_back(std::move(m));
  }
  return out;
}

Eigen::VectorXd segment_waveform(const audio::AudioClip& clip,
                                 const FeatureConfig& cfg, Mode mode,
                                 ad::RandomStream& rng) {
  if (clip.samples.size() == 0) throw InputError("empty clip");
  if (mode == Mode::eval) return clip.samples;
  const auto idx =
      fit_indices(clip.samples.size(), cfg.wave_segment_samples, mode, rng);
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = clip.samples[idx[i]];
  return out;
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace

Eigen::MatrixXd mel_filterbank(int n_filters, int n_fft, int sample_rate) {
  const int bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  Eigen::VectorXd centers(n_filters + 2);
  for (int i = 0; i < n_filters + 2; ++i)
    centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_filters + 1));
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_filters, bins);
  for (int f = 0; f < n_filters; ++f) {
    const double lo = centers[f], mid = centers[f + 1], hi = centers[f + 2];
    for (int b = 0; b < bins; ++b) {
      const double hz = b * double(sample_rate) / n_fft;
      if (hz > lo && hz < mid)
        fb(f, b) = (hz - lo) / (mid - lo);
      else if (hz >= mid && hz < hi)
        fb(f, b) = (hi - hz) / (hi - mid);
    }
  }
  return fb;
}

Eigen::MatrixXd dct2_matrix(int n_out, int n_in) {
  // orthonormal DCT-II
  Eigen::MatrixXd d(n_out, n_in);
  for (int k = 0; k < n_out; ++k) {
    const double s =
        std::sqrt((k == 0 ? 1.0 : 2.0) / n_in);
    for (int n = 0; n < n_in; ++n)
      d(k, n) = s * std::cos(M_PI * k * (2 * n + 1) / (2.0 * n_in));
  }
  return d;
}

namespace {

// delta by 2-frame-window linear regression, replicated edges
Eigen::MatrixXd deltas(const Eigen::MatrixXd& x) {
  constexpr int kWin = 2;
  double denom = 0;
  for (int n = 1; n <= kWin; ++n) denom += 2.0 * n * n;
  Eigen::MatrixXd d(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x.cols());
    for (int n = 1; n <= kWin; ++n) {
      const Eigen::Index tp = std::min<Eigen::Index>(t + n, x.rows() - 1);
      const Eigen::Index tm = std::max<Eigen::Index>(t - n, 0);
      acc += n * (x.row(tp) - x.row(tm));
    }
    d.row(t) = acc / denom;
  }
  return d;
}

}  // namespace

Eigen::MatrixXd mfcc_with_deltas(const audio::AudioClip& clip) {
  constexpr int kNumCeps = 20;
  constexpr int kNumFilters = 40;
  constexpr int kNfft = 512;
  FeatureConfig cfg;
  cfg.window_ms = 25.0;
  cfg.shift_ms = 10.0;
  cfg.n_fft = kNfft;
  cfg.sample_rate = clip.sample_rate;
  Eigen::MatrixXcd spec;
  try {
    spec = stft(clip.samples, cfg);
  } catch (const InputError&) {
    throw InputError("clip too short for MFCC analysis (" +
                     std::to_string(clip.samples.size()) + " samples)");
  }
  const Eigen::MatrixXd fb =
      mel_filterbank(kNumFilters, kNfft, clip.sample_rate);
  const Eigen::MatrixXd dct = dct2_matrix(kNumCeps, kNumFilters);
  Eigen::MatrixXd energies =
      (spec.cwiseAbs2() * fb.transpose()).array() + 1e-10;
  Eigen::MatrixXd statics = energies.array().log().matrix() * dct.transpose();
  Eigen::MatrixXd d1 = deltas(statics);
  Eigen::MatrixXd d2 = deltas(d1);
  Eigen::MatrixXd out(statics.rows(), 3 * kNumCeps);
  out << statics, d1, d2;
  return out;
}

namespace {

constexpr char kFeatMagic[8] = {'S', 'N', 'F', 'E', 'A', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_features(const std::filesystem::path& path, const SpectroTensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw audio::IoError("cannot write " + path.string());
  out.write(kFeatMagic, 8);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.frames));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.bins));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.channel_kinds.size()));
  for (Channel c : t.channel_kinds)
    put<std::uint8_t>(out, static_cast<std::uint8_t>(c));
  for (const auto& ch : t.channels)
    for (Eigen::Index f = 0; f < t.frames; ++f)
      for (Eigen::Index b = 0; b < t.bins; ++b)
        put<float>(out, static_cast<float>(ch(f, b)));
  if (!out) throw audio::IoError("write failed: " + path.string());
}

SpectroTensor load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw audio::IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kFeatMagic, 8) != 0)
    throw audio::FormatError("bad feature container: " + path.string());
  SpectroTensor t;
  t.frames = get<std::uint32_t>(in);
  t.bins = get<std::uint32_t>(in);
  const auto n_ch = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_ch; ++i)
    t.channel_kinds.push_back(static_cast<Channel>(get<std::uint8_t>(in)));
  for (std::uint32_t i = 0; i < n_ch; ++i) {
    Eigen::MatrixXd ch(t.frames, t.bins);
    for (Eigen::Index f = 0; f < t.frames; ++f)
      for (Eigen::Index b = 0; b < t.bins; ++b) ch(f, b) = get<float>(in);
    t.channels.push_back(std::move(ch));
  }
  if (!in) throw audio::FormatError("truncated feature container: " +
                                    path.string());
  return t;
}

}  // namespace spoofnet::features
