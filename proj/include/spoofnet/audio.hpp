#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spoofnet::audio {

enum class Label { bonafide, spoof, unknown };
enum class ConfigClass { A, B, C, none };

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AudioClip {
  std::string utterance_id;
  Eigen::VectorXd samples;  // in [-1, 1]
  int sample_rate = 16000;
  Label label = Label::unknown;
  ConfigClass attacker_distance = ConfigClass::none;
  ConfigClass speaker_quality = ConfigClass::none;
  std::string env_id;
};

struct ProtocolEntry {
  std::string utterance_id;
  Label label = Label::unknown;
  ConfigClass attacker_distance = ConfigClass::none;
  ConfigClass speaker_quality = ConfigClass::none;
  std::string env_id;
};

const char* label_name(Label l);
char config_class_name(ConfigClass c);

// WAV (RIFF PCM16 / IEEE float) and FLAC (16-bit) input. Integer samples
// scale by 1/32768. Multi-channel or non-target-rate input is rejected
// unless resample=true, which applies linear resampling to target_rate.
AudioClip read_audio(const std::filesystem::path& path, bool resample = false,
                     int target_rate = 16000);

// 16-bit PCM WAV output; samples clipped to [-1, 1] and quantized by
// round(s * 32768), saturated to the int16 range.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

// Whitespace-separated lines: utterance_id label [config] [env_id].
// label: "bonafide" or a spoof token ("spoof"/"replay"). config: two
// characters from {A,B,C} (distance, quality) or "-" for none.
std::vector<ProtocolEntry> parse_protocol(const std::string& text);

// Applies each protocol entry's fields to the clip with matching id.
// Throws ParseError naming the first protocol id with no clip.
void join_protocol(const std::vector<ProtocolEntry>& entries,
                   std::vector<AudioClip>& clips);

namespace detail {
// FLAC stream decoder (subset: mono, 16-bit). Used by read_audio.
AudioClip read_flac(const std::filesystem::path& path);
bool looks_like_flac(const std::filesystem::path& path);
}  // namespace detail

}  // namespace spoofnet::audio
