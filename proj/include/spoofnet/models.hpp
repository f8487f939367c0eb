#pragma once

// Graph builders for the three model families: spectrogram CNN-GRU,
// raw-waveform CNN-GRU, and the i-vector fully-connected classifier.
// Output node 0 is the bona-fide node; its softmax probability is the score.

#include <memory>
#include <string>

#include "spoofnet/features.hpp"
#include "spoofnet/layers.hpp"

namespace spoofnet::models {

using ad::Var;
using features::SpectroTensor;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ForwardResult {
  Var logits;     // {1, 2}
  Var embedding;  // input to the center loss
};

class Model {
 public:
  virtual ~Model() = default;
  virtual ForwardResult forward(const Var& input, bool training) = 0;
  virtual std::string kind() const = 0;

  std::vector<ad::NamedParam>& params() { return params_; }
  std::vector<std::pair<std::string, ad::Array*>>& buffers() {
    return buffers_;
  }

  // per-input-channel normalization, applied by the tensor adapters below
  ad::Array norm_mean, norm_std;

  // stage-name -> output-shape trace of the most recent forward pass
  std::vector<std::pair<std::string, ad::Shape>> last_trace;

 protected:
  std::vector<ad::NamedParam> params_;
  std::vector<std::pair<std::string, ad::Array*>> buffers_;
};

struct SpecCnnGruConfig {
  Eigen::Index input_bins = 1025;
  Eigen::Index input_channels = 1;
  Eigen::Index conv1_maps = 16;
  std::array<Eigen::Index, 3> block_maps = {32, 64, 128};
  int conv1_kh = 3, conv1_kw = 7;
  int block_kh = 3, block_kw = 5, block_sh = 2, block_sw = 4;
  int freq_pool = 17;
  Eigen::Index gru_units = 512;
  Eigen::Index embed_dim = 64;

  // reduced widths for CPU-budget experiments; architecture unchanged
  static SpecCnnGruConfig desk(Eigen::Index bins, Eigen::Index channels);
};

struct WaveCnnGruConfig {
  int frame_kernel = 3, frame_stride = 3;
  Eigen::Index frame_maps = 16;
  std::array<Eigen::Index, 4> block_maps = {32, 64, 128, 128};
  int block_kernel = 3, pool = 3;
  Eigen::Index gru_units = 512;
  Eigen::Index embed_dim = 64;

  static WaveCnnGruConfig desk();
};

struct IvecDnnConfig {
  Eigen::Index input_dim = 200;
  Eigen::Index hidden_dim = 1024;
  int hidden_layers = 3;

  static IvecDnnConfig desk(Eigen::Index input_dim);
};

std::unique_ptr<Model> build_spec_cnngru(const SpecCnnGruConfig& cfg,
                                         ad::RandomStream& rng);
std::unique_ptr<Model> build_wave_cnngru(const WaveCnnGruConfig& cfg,
                                         ad::RandomStream& rng);
std::unique_ptr<Model> build_ivec_dnn(const IvecDnnConfig& cfg,
                                      ad::RandomStream& rng);

// Channel concatenation; inputs must agree on frames and bins.
SpectroTensor stack_channels(const std::vector<SpectroTensor>& tensors);

// Adapters from data to graph leaves, applying the model's channel
// normalization when it has been fitted.
Var spectro_input(const Model& model, const SpectroTensor& t);
Var wave_input(const Eigen::VectorXd& samples);
Var ivector_input(const Eigen::VectorXd& ivec);

// Softmax over the two output nodes; bona-fide probability.
double infer_score(Model& model, const Var& input);

// Model config serialization (JSON text) so `infer` can rebuild the graph.
std::string describe_spec(const SpecCnnGruConfig& cfg);
std::string describe_wave(const WaveCnnGruConfig& cfg);
std::string describe_ivec(const IvecDnnConfig& cfg);
std::unique_ptr<Model> build_from_description(const std::string& json_text,
                                              ad::RandomStream& rng);

}  // namespace spoofnet::models
