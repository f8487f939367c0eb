#include "spoofnet/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace spoofnet::audio {

const char* label_name(Label l) {
  switch (l) {
    case Label::bonafide:
      return "bonafide";
    case Label::spoof:
      return "spoof";
    default:
      return "unknown";
  }
}

char config_class_name(ConfigClass c) {
  switch (c) {
    case ConfigClass::A:
      return 'A';
    case ConfigClass::B:
      return 'B';
    case ConfigClass::C:
      return 'C';
    default:
      return '-';
  }
}

namespace {

std::uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint16_t read_u16le(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return b[0] | (b[1] << 8);
}

void write_u32le(std::ostream& out, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16le(std::ostream& out, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  out.write(b, 2);
}

Eigen::VectorXd linear_resample(const Eigen::VectorXd& x, int from_rate,
                                int to_rate) {
  if (from_rate == to_rate) return x;
  const double ratio = double(from_rate) / double(to_rate);
  const Eigen::Index n_out = static_cast<Eigen::Index>(
      std::llround(double(x.size()) * to_rate / from_rate));
  Eigen::VectorXd out(n_out);
  for (Eigen::Index i = 0; i < n_out; ++i) {
    const double pos = std::min(i * ratio, double(x.size() - 1));
    const Eigen::Index i0 = static_cast<Eigen::Index>(pos);
    const double frac = pos - i0;
    const Eigen::Index i1 = std::min(i0 + 1, x.size() - 1);
    out[i] = (1.0 - frac) * x[i0] + frac * x[i1];
  }
  return out;
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char riff[4], wave[4];
  in.read(riff, 4);
  read_u32le(in);
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(wave, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file: " + path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<char> data;
  while (in) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    std::uint32_t size = read_u32le(in);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_u16le(in);
      channels = read_u16le(in);
      rate = read_u32le(in);
      read_u32le(in);  // byte rate
      read_u16le(in);  // block align
      bits = read_u16le(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (format == 0 || data.empty())
    throw FormatError("missing fmt/data chunk: " + path.string());
  if (channels != 1)
    throw FormatError("multi-channel audio not supported: " + path.string());

  AudioClip clip;
  clip.utterance_id = path.stem().string();
  clip.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const Eigen::Index n = static_cast<Eigen::Index>(data.size() / 2);
    clip.samples.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::int16_t s;
      std::memcpy(&s, data.data() + 2 * i, 2);
      clip.samples[i] = s / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const Eigen::Index n = static_cast<Eigen::Index>(data.size() / 4);
    clip.samples.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, data.data() + 4 * i, 4);
      clip.samples[i] = f;
    }
  } else {
    throw FormatError("unsupported WAV encoding (format " +
                      std::to_string(format) + ", " + std::to_string(bits) +
                      " bit): " + path.string());
  }
  if (clip.samples.size() == 0)
    throw FormatError("empty audio: " + path.string());
  clip.samples = clip.samples.cwiseMax(-1.0).cwiseMin(1.0);
  return clip;
}

}  // namespace

AudioClip read_audio(const std::filesystem::path& path, bool resample,
                     int target_rate) {
  if (!std::filesystem::exists(path))
    throw IoError("no such file: " + path.string());
  AudioClip clip = detail::looks_like_flac(path) ? detail::read_flac(path)
                                                 : read_wav(path);
  if (clip.sample_rate != target_rate) {
    if (!resample)
      throw FormatError("sample rate " + std::to_string(clip.sample_rate) +
                        " != " + std::to_string(target_rate) +
                        " and --resample not set: " + path.string());
    clip.samples = linear_resample(clip.samples, clip.sample_rate, target_rate);
    clip.sample_rate = target_rate;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * 2;
  out.write("RIFF", 4);
  write_u32le(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32le(out, 16);
  write_u16le(out, 1);  // PCM
  write_u16le(out, 1);  // mono
  write_u32le(out, clip.sample_rate);
  write_u32le(out, clip.sample_rate * 2);
  write_u16le(out, 2);
  write_u16le(out, 16);
  out.write("data", 4);
  write_u32le(out, data_bytes);
  for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
    const double s = std::clamp(clip.samples[i], -1.0, 1.0);
    // inverse of the read-side s/32768 scaling, clamped into int16 range
    const std::int16_t q = static_cast<std::int16_t>(
        std::clamp<long>(std::lround(s * 32768.0), -32768, 32767));
    write_u16le(out, static_cast<std::uint16_t>(q));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

ConfigClass parse_config_char(char c, int line_no) {
  switch (c) {
    case 'A':
      return ConfigClass::A;
    case 'B':
      return ConfigClass::B;
    case 'C':
      return ConfigClass::C;
    case '-':
      return ConfigClass::none;
    default:
      throw ParseError("line " + std::to_string(line_no) +
                       ": unknown config class '" + std::string(1, c) + "'");
  }
}

}  // namespace

std::vector<ProtocolEntry> parse_protocol(const std::string& text) {
  std::vector<ProtocolEntry> entries;
  std::unordered_set<std::string> seen;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string id, label_tok;
    if (!(fields >> id)) continue;  // blank line
    if (!(fields >> label_tok))
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected 'id label ...'");
    if (!seen.insert(id).second)
      throw ParseError("line " + std::to_string(line_no) +
                       ": duplicate utterance_id '" + id + "'");
    ProtocolEntry e;
    e.utterance_id = id;
    if (label_tok == "bonafide") {
      e.label = Label::bonafide;
    } else if (label_tok == "spoof" || label_tok == "replay") {
      e.label = Label::spoof;
    } else {
      throw ParseError("line " + std::to_string(line_no) +
                       ": unknown label token '" + label_tok + "'");
    }
    std::string config_tok;
    if (fields >> config_tok) {
      if (config_tok == "-") {
        // no replay configuration
      } else if (config_tok.size() == 2) {
        e.attacker_distance = parse_config_char(config_tok[0], line_no);
        e.speaker_quality = parse_config_char(config_tok[1], line_no);
      } else {
        throw ParseError("line " + std::to_string(line_no) +
                         ": config token must be two classes or '-', got '" +
                         config_tok + "'");
      }
    }
    fields >> e.env_id;
    if (e.env_id == "-") e.env_id.clear();
    entries.push_back(std::move(e));
  }
  return entries;
}

void join_protocol(const std::vector<ProtocolEntry>& entries,
                   std::vector<AudioClip>& clips) {
  std::unordered_map<std::string, AudioClip*> by_id;
  for (auto& c : clips) by_id[c.utterance_id] = &c;
  for (const auto& e : entries) {
    auto it = by_id.find(e.utterance_id);
    if (it == by_id.end())
      throw ParseError("protocol id '" + e.utterance_id + "' has no clip");
    it->second->label = e.label;
    it->second->attacker_distance = e.attacker_distance;
    it->second->speaker_quality = e.speaker_quality;
    it->second->env_id = e.env_id;
  }
}

}  // namespace spoofnet::audio
