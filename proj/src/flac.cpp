// Minimal FLAC stream decoder covering the subset this project ingests:
// mono, 16-bit, constant/verbatim/fixed/LPC subframes with rice-coded
// residuals. CRCs are parsed but not verified.

#include "spoofnet/audio.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace spoofnet::audio::detail {

namespace {

class BitReader {
 public:
  explicit BitReader(std::vector<unsigned char> bytes)
      : bytes_(std::move(bytes)) {}

  std::uint64_t read_bits(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | read_bit();
    return v;
  }

  std::int64_t read_signed(int n) {
    std::uint64_t v = read_bits(n);
    if (n > 0 && (v >> (n - 1)) & 1) v |= ~((std::uint64_t(1) << n) - 1);
    return static_cast<std::int64_t>(v);
  }

  std::uint64_t read_unary() {
    std::uint64_t q = 0;
    while (read_bit() == 0) ++q;
    return q;
  }

  void align_byte() {
    if (bit_pos_) {
      ++byte_;
      bit_pos_ = 0;
    }
  }

  bool eof() const { return byte_ >= bytes_.size(); }
  size_t byte_pos() const { return byte_; }
  void seek_byte(size_t p) { byte_ = p; bit_pos_ = 0; }

 private:
  int read_bit() {
    if (byte_ >= bytes_.size())
      throw FormatError("flac: unexpected end of stream");
    const int b = (bytes_[byte_] >> (7 - bit_pos_)) & 1;
    if (++bit_pos_ == 8) {
      bit_pos_ = 0;
      ++byte_;
    }
    return b;
  }

  std::vector<unsigned char> bytes_;
  size_t byte_ = 0;
  int bit_pos_ = 0;
};

std::uint64_t read_utf8_number(BitReader& br) {
  const std::uint64_t first = br.read_bits(8);
  int extra = 0;
  std::uint64_t v = 0;
  if ((first & 0x80) == 0) return first;
  for (int mask = 0x40; first & mask; mask >>= 1) ++extra;
  v = first & ((1u << (6 - extra)) - 1);
  for (int i = 0; i < extra; ++i) v = (v << 6) | (br.read_bits(8) & 0x3f);
  return v;
}

const int kFixedCoeffs[5][4] = {
    {}, {1}, {2, -1}, {3, -3, 1}, {4, -6, 4, -1}};

void decode_residual(BitReader& br, int order, int block_size,
                     std::vector<std::int64_t>& out) {
  const int method = static_cast<int>(br.read_bits(2));
  if (method > 1) throw FormatError("flac: reserved residual method");
  const int param_bits = method == 0 ? 4 : 5;
  const int escape = method == 0 ? 15 : 31;
  const int partition_order = static_cast<int>(br.read_bits(4));
  const int partitions = 1 << partition_order;
  int sample = order;
  for (int p = 0; p < partitions; ++p) {
    int count = block_size >> partition_order;
    if (p == 0) count -= order;
    const int param = static_cast<int>(br.read_bits(param_bits));
    if (param == escape) {
      const int raw_bits = static_cast<int>(br.read_bits(5));
      for (int i = 0; i < count; ++i)
        out[sample++] = raw_bits ? br.read_signed(raw_bits) : 0;
    } else {
      for (int i = 0; i < count; ++i) {
        const std::uint64_t q = br.read_unary();
        const std::uint64_t r = br.read_bits(param);
        const std::uint64_t zz = (q << param) | r;
        out[sample++] = (zz >> 1) ^ -static_cast<std::int64_t>(zz & 1);
      }
    }
  }
}

void decode_subframe(BitReader& br, int block_size, int bps,
                     std::vector<std::int64_t>& samples) {
  if (br.read_bits(1) != 0) throw FormatError("flac: bad subframe padding bit");
  const int type = static_cast<int>(br.read_bits(6));
  int wasted = 0;
  if (br.read_bits(1) == 1) wasted = 1 + static_cast<int>(br.read_unary());
  const int eff_bps = bps - wasted;
  samples.assign(block_size, 0);

  if (type == 0) {
    const std::int64_t v = br.read_signed(eff_bps);
    std::fill(samples.begin(), samples.end(), v);
  } else if (type == 1) {
    for (int i = 0; i < block_size; ++i) samples[i] = br.read_signed(eff_bps);
  } else if (type >= 8 && type <= 12) {
    const int order = type - 8;
    for (int i = 0; i < order; ++i) samples[i] = br.read_signed(eff_bps);
    decode_residual(br, order, block_size, samples);
    for (int i = order; i < block_size; ++i) {
      std::int64_t pred = 0;
      for (int j = 0; j < order; ++j)
        pred += kFixedCoeffs[order][j] * samples[i - 1 - j];
      samples[i] += pred;
    }
  } else if (type >= 32) {
    const int order = type - 31;
    for (int i = 0; i < order; ++i) samples[i] = br.read_signed(eff_bps);
    const int precision = static_cast<int>(br.read_bits(4)) + 1;
    if (precision == 16) throw FormatError("flac: invalid lpc precision");
    const int shift = static_cast<int>(br.read_signed(5));
    std::vector<std::int64_t> coeffs(order);
    for (int j = 0; j < order; ++j) coeffs[j] = br.read_signed(precision);
    decode_residual(br, order, block_size, samples);
    for (int i = order; i < block_size; ++i) {
      std::int64_t pred = 0;
      for (int j = 0; j < order; ++j) pred += coeffs[j] * samples[i - 1 - j];
      samples[i] += pred >> shift;
    }
  } else {
    throw FormatError("flac: reserved subframe type");
  }
  if (wasted)
    for (auto& s : samples) s <<= wasted;
}

int block_size_from_code(int code, BitReader& br) {
  switch (code) {
    case 1:
      return 192;
    case 2:
    case 3:
    case 4:
    case 5:
      return 576 << (code - 2);
    case 6:
      return static_cast<int>(br.read_bits(8)) + 1;
    case 7:
      return static_cast<int>(br.read_bits(16)) + 1;
    default:
      if (code >= 8 && code <= 15) return 256 << (code - 8);
      throw FormatError("flac: reserved block size code");
  }
}

}  // namespace

bool looks_like_flac(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in && std::memcmp(magic, "fLaC", 4) == 0;
}

AudioClip read_flac(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  if (bytes.size() < 42 || std::memcmp(bytes.data(), "fLaC", 4) != 0)
    throw FormatError("not a FLAC file: " + path.string());
  BitReader br(std::move(bytes));
  br.seek_byte(4);

  int sample_rate = 0, channels = 0, bps = 0;
  std::uint64_t total_samples = 0;
  bool last = false;
  while (!last) {
    last = br.read_bits(1) != 0;
    const int type = static_cast<int>(br.read_bits(7));
    const std::uint64_t len = br.read_bits(24);
    if (type == 0) {  // STREAMINFO
      br.read_bits(16);  // min block
      br.read_bits(16);  // max block
      br.read_bits(24);  // min frame
      br.read_bits(24);  // max frame
      sample_rate = static_cast<int>(br.read_bits(20));
      channels = static_cast<int>(br.read_bits(3)) + 1;
      bps = static_cast<int>(br.read_bits(5)) + 1;
      total_samples = br.read_bits(36);
      for (int i = 0; i < 16; ++i) br.read_bits(8);  // md5
    } else {
      for (std::uint64_t i = 0; i < len; ++i) br.read_bits(8);
    }
  }
  if (channels != 1)
    throw FormatError("multi-channel FLAC not supported: " + path.string());
  if (bps != 16)
    throw FormatError("only 16-bit FLAC supported: " + path.string());

  std::vector<std::int64_t> pcm;
  pcm.reserve(total_samples);
  std::vector<std::int64_t> block;
  while (pcm.size() < total_samples) {
    if (br.read_bits(14) != 0x3ffe) throw FormatError("flac: lost frame sync");
    br.read_bits(1);  // reserved
    br.read_bits(1);  // blocking strategy
    const int bs_code = static_cast<int>(br.read_bits(4));
    const int sr_code = static_cast<int>(br.read_bits(4));
    br.read_bits(4);  // channel assignment
    br.read_bits(3);  // sample size code
    br.read_bits(1);  // reserved
    read_utf8_number(br);
    const int block_size = block_size_from_code(bs_code, br);
    if (sr_code == 12) br.read_bits(8);
    if (sr_code == 13 || sr_code == 14) br.read_bits(16);
    br.read_bits(8);  // CRC-8
    decode_subframe(br, block_size, bps, block);
    br.align_byte();
    br.read_bits(16);  // CRC-16
    pcm.insert(pcm.end(), block.begin(), block.end());
  }
  pcm.resize(total_samples);

  AudioClip clip;
  clip.utterance_id = path.stem().string();
  clip.sample_rate = sample_rate;
  clip.samples.resize(static_cast<Eigen::Index>(pcm.size()));
  for (size_t i = 0; i < pcm.size(); ++i)
    clip.samples[static_cast<Eigen::Index>(i)] = pcm[i] / 32768.0;
  if (clip.samples.size() == 0)
    throw FormatError("empty FLAC stream: " + path.string());
  clip.samples = clip.samples.cwiseMax(-1.0).cwiseMin(1.0);
  return clip;
}

}  // namespace spoofnet::audio::detail
