#include "spoofnet/synth.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <stdexcept>

#include "spoofnet/autodiff.hpp"  // RandomStream

namespace spoofnet::synth {

using ad::RandomStream;

void SynthConfig::validate() const {
  if (n_speakers < 1 || n_utts_per_class < 1)
    throw std::invalid_argument("synth: counts must be >= 1");
  if (duration_min_s <= 0 || duration_max_s < duration_min_s)
    throw std::invalid_argument("synth: bad duration range");
  for (const auto& [cls, cutoff] : replay_lowpass_cutoff_hz)
    if (cutoff <= 0 || cutoff >= sample_rate / 2.0)
      throw std::invalid_argument("synth: cutoff must be < sample_rate/2");
  if (!std::isfinite(noise_snr_db))
    throw std::invalid_argument("synth: snr must be finite");
  if (reverb_decay_s.empty())
    throw std::invalid_argument("synth: need at least one room class");
}

Eigen::VectorXd fft_convolve(const Eigen::VectorXd& x,
                             const Eigen::VectorXd& kernel) {
  const Eigen::Index n = x.size() + kernel.size() - 1;
  Eigen::Index nfft = 1;
  while (nfft < n) nfft <<= 1;
  Eigen::VectorXd xp = Eigen::VectorXd::Zero(nfft);
  Eigen::VectorXd kp = Eigen::VectorXd::Zero(nfft);
  xp.head(x.size()) = x;
  kp.head(kernel.size()) = kernel;
  Eigen::FFT<double> fft;
  Eigen::VectorXcd xf, kf;
  fft.fwd(xf, xp);
  fft.fwd(kf, kp);
  xf = xf.cwiseProduct(kf);
  Eigen::VectorXd y;
  fft.inv(y, xf);
  return y.head(n);
}

Eigen::VectorXd lowpass(const Eigen::VectorXd& x, double cutoff_hz,
                        int sample_rate, int n_taps) {
  const double fc = cutoff_hz / sample_rate;  // cycles per sample
  const int m = n_taps - 1;
  Eigen::VectorXd h(n_taps);
  for (int i = 0; i < n_taps; ++i) {
    const double k = i - m / 2.0;
    const double sinc =
        k == 0.0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * k) / (M_PI * k);
    const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / m);
    h[i] = sinc * w;
  }
  h /= h.sum();
  Eigen::VectorXd y = fft_convolve(x, h);
  return y.segment(m / 2, x.size());  // compensate group delay
}

namespace {

struct SpeakerVoice {
  double f0;          // fundamental, Hz
  double rolloff;     // harmonic amplitude exponent
  double formant_hz;  // single resonance peak position
};

// Syllable-structured harmonic-plus-noise signal. Most syllables are voiced
// (harmonic stack with a wandering resonance, almost no high-band noise, so
// voiced frames from live and replayed clips stay spectrally close); a
// fraction are fricative bursts of high-band-emphasised noise, which carry
// the energy above the replay lowpass cutoffs.
Eigen::VectorXd make_speech_like(const SpeakerVoice& voice, Eigen::Index n,
                                 int sr, RandomStream& rng) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  const double vibrato_hz = 4.0 + 2.0 * rng.uniform();
  const double vibrato_depth = 0.01 + 0.02 * rng.uniform();
  const int n_harm = static_cast<int>((0.45 * sr) / voice.f0);
  std::vector<double> amp(n_harm), phase(n_harm);
  for (int k = 0; k < n_harm; ++k) phase[k] = 2.0 * M_PI * rng.uniform();

  double inst_phase = 0.0;
  double prev_noise = 0.0;
  Eigen::Index pos = 0;
  while (pos < n) {
    const Eigen::Index len = std::min<Eigen::Index>(
        n - pos,
        static_cast<Eigen::Index>((0.12 + 0.13 * rng.uniform()) * sr));
    const bool fricative = rng.uniform() < 0.15;
    // per-syllable articulation: the resonance wanders around the speaker's
    // characteristic formant
    const double formant = voice.formant_hz * (0.75 + 0.5 * rng.uniform());
    for (int k = 0; k < n_harm; ++k) {
      const double f = (k + 1) * voice.f0;
      const double res =
          1.0 + 2.0 * std::exp(-std::pow((f - formant) / 400.0, 2));
      amp[k] = res / std::pow(k + 1, voice.rolloff);
    }
    double harm_ms = 0.0;
    for (int k = 0; k < n_harm; ++k) harm_ms += 0.5 * amp[k] * amp[k];
    const double harm_rms = std::sqrt(harm_ms);
    const double voiced_gain = fricative ? 0.15 : 1.0;
    const double noise_gain = (fricative ? 0.35 : 0.003) * harm_rms;
    for (Eigen::Index j = 0; j < len; ++j) {
      const double t = static_cast<double>(pos + j) / sr;
      const double f0_t =
          voice.f0 *
          (1.0 + vibrato_depth * std::sin(2.0 * M_PI * vibrato_hz * t));
      inst_phase += 2.0 * M_PI * f0_t / sr;
      double s = 0.0;
      for (int k = 0; k < n_harm; ++k)
        s += amp[k] * std::sin((k + 1) * inst_phase + phase[k]);
      const double w = rng.normal();
      const double fric = (w - prev_noise) * M_SQRT1_2;  // +6 dB/oct emphasis
      prev_noise = w;
      const double env =
          0.3 + 0.7 * std::pow(std::sin(M_PI * static_cast<double>(j) / len), 2);
      x[pos + j] = env * (voiced_gain * s + noise_gain * fric);
    }
    pos += len;
  }
  x /= x.cwiseAbs().maxCoeff() * 1.05;
  return x;
}

Eigen::VectorXd reverb_ir(double decay_s, int sr, RandomStream& rng) {
  const Eigen::Index n =
      std::max<Eigen::Index>(static_cast<Eigen::Index>(3.0 * decay_s * sr), 8);
  Eigen::VectorXd ir(n);
  ir[0] = 1.0;
  for (Eigen::Index i = 1; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    ir[i] = 0.15 * rng.normal() * std::exp(-t / decay_s);
  }
  return ir;
}

double attenuation_for(ConfigClass distance) {
  switch (distance) {
    case ConfigClass::A:
      return 0.9;  // 10-50 cm
    case ConfigClass::B:
      return 0.65;
    default:
      return 0.45;  // > 100 cm
  }
}

double snr_penalty_for(ConfigClass distance) {
  switch (distance) {
    case ConfigClass::A:
      return 0.0;
    case ConfigClass::B:
      return 5.0;
    default:
      return 10.0;
  }
}

}  // namespace

Corpus synthesize_corpus(const SynthConfig& cfg) {
  cfg.validate();
  RandomStream rng(cfg.rng_seed);
  const int sr = cfg.sample_rate;

  std::vector<SpeakerVoice> voices(cfg.n_speakers);
  for (auto& v : voices) {
    v.f0 = 95.0 + 140.0 * rng.uniform();
    v.rolloff = 0.7 + 0.5 * rng.uniform();
    v.formant_hz = 500.0 + 1700.0 * rng.uniform();
  }

  std::vector<std::string> rooms;
  for (const auto& [room, decay] : cfg.reverb_decay_s) rooms.push_back(room);
  const std::array<ConfigClass, 3> classes = {ConfigClass::A, ConfigClass::B,
                                              ConfigClass::C};

  Corpus corpus;
  auto next_duration = [&] {
    const double d =
        cfg.duration_min_s +
        (cfg.duration_max_s - cfg.duration_min_s) * rng.uniform();
    return static_cast<Eigen::Index>(d * sr);
  };

  for (int i = 0; i < cfg.n_utts_per_class; ++i) {
    AudioClip clip;
    clip.utterance_id = "B" + std::to_string(1000 + i);
    clip.sample_rate = sr;
    clip.label = audio::Label::bonafide;
    Eigen::VectorXd x =
        make_speech_like(voices[i % cfg.n_speakers], next_duration(), sr, rng);
    // microphone noise at the reference SNR, then recorder gain
    const double sig_rms = std::sqrt(x.squaredNorm() / x.size());
    const double noise_rms = sig_rms / std::pow(10.0, cfg.noise_snr_db / 20.0);
    for (Eigen::Index t = 0; t < x.size(); ++t) x[t] += noise_rms * rng.normal();
    x /= x.cwiseAbs().maxCoeff() * 1.05;
    clip.samples = std::move(x);
    ProtocolEntry e;
    e.utterance_id = clip.utterance_id;
    e.label = audio::Label::bonafide;
    corpus.protocol.push_back(e);
    corpus.clips.push_back(std::move(clip));
  }

  for (int i = 0; i < cfg.n_utts_per_class; ++i) {
    const ConfigClass distance = classes[(i / 3) % 3];
    const ConfigClass quality = classes[i % 3];
    const std::string& room = rooms[i % rooms.size()];

    Eigen::VectorXd x =
        make_speech_like(voices[i % cfg.n_speakers], next_duration(), sr, rng);
    // replay chain: loudspeaker lowpass -> room reverb -> distance
    x = lowpass(x, cfg.replay_lowpass_cutoff_hz.at(
                       audio::config_class_name(quality)),
                sr);
    Eigen::VectorXd ir = reverb_ir(cfg.reverb_decay_s.at(room), sr, rng);
    x = fft_convolve(x, ir).head(x.size());
    x *= attenuation_for(distance);

    const double snr_db = cfg.noise_snr_db - snr_penalty_for(distance);
    const double sig_rms = std::sqrt(x.squaredNorm() / x.size());
    const double noise_rms = sig_rms / std::pow(10.0, snr_db / 20.0);
    for (Eigen::Index t = 0; t < x.size(); ++t)
      x[t] += noise_rms * rng.normal();
    // recorder gain normalization, same convention as the live clips
    x /= x.cwiseAbs().maxCoeff() * 1.05;

    AudioClip clip;
    clip.utterance_id = "S" + std::to_string(1000 + i);
    clip.sample_rate = sr;
    clip.label = audio::Label::spoof;
    clip.attacker_distance = distance;
    clip.speaker_quality = quality;
    clip.env_id = room;
    clip.samples = std::move(x);

    ProtocolEntry e;
    e.utterance_id = clip.utterance_id;
    e.label = audio::Label::spoof;
    e.attacker_distance = distance;
    e.speaker_quality = quality;
    e.env_id = room;
    corpus.protocol.push_back(e);
    corpus.clips.push_back(std::move(clip));
  }
  return corpus;
}

}  // namespace spoofnet::synth
