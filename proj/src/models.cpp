#include "spoofnet/models.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace spoofnet::models {

using namespace ad;
using namespace layers;
using json = nlohmann::json;

SpecCnnGruConfig SpecCnnGruConfig::desk(Eigen::Index bins,
                                        Eigen::Index channels) {
  SpecCnnGruConfig cfg;
  cfg.input_bins = bins;
  cfg.input_channels = channels;
  cfg.conv1_maps = 4;
  cfg.block_maps = {8, 8, 16};
  cfg.gru_units = 32;
  cfg.embed_dim = 16;
  return cfg;
}

WaveCnnGruConfig WaveCnnGruConfig::desk() {
  WaveCnnGruConfig cfg;
  cfg.frame_maps = 4;
  cfg.block_maps = {8, 8, 16, 16};
  cfg.gru_units = 32;
  cfg.embed_dim = 16;
  return cfg;
}

IvecDnnConfig IvecDnnConfig::desk(Eigen::Index input_dim) {
  IvecDnnConfig cfg;
  cfg.input_dim = input_dim;
  cfg.hidden_dim = 64;
  return cfg;
}

namespace {

class SpecCnnGru : public Model {
 public:
  SpecCnnGru(const SpecCnnGruConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    if (cfg.input_channels < 1 || cfg.input_channels > 3)
      throw ConfigError("spec model: input_channels must be 1..3");
    conv1_ = Conv2d(cfg.input_channels, cfg.conv1_maps, cfg.conv1_kh,
                    cfg.conv1_kw, 1, 1, rng);
    Eigen::Index c = cfg.conv1_maps;
    for (int i = 0; i < 3; ++i) {
      blocks_[i] = ResBlock2d(c, cfg.block_maps[i], cfg.block_kh, cfg.block_kw,
                              cfg.block_sh, cfg.block_sw, rng);
      c = cfg.block_maps[i];
    }
    gru_ = Gru(c, cfg.gru_units, rng);
    dense1_ = Dense(cfg.gru_units, cfg.embed_dim, rng);
    output_ = Dense(cfg.embed_dim, 2, rng);
    output_.weight->value *= 0.1;  // near-uniform untrained softmax

    conv1_.collect("conv1", params_);
    for (int i = 0; i < 3; ++i) {
      blocks_[i].collect("res" + std::to_string(i + 1), params_);
      blocks_[i].collect_buffers("res" + std::to_string(i + 1), buffers_);
    }
    gru_.collect("gru", params_);
    dense1_.collect("dense1", params_);
    output_.collect("output", params_);
  }

  ForwardResult forward(const Var& input, bool training) override {
    if (input->shape.size() != 3 || input->shape[0] != cfg_.input_channels ||
        input->shape[2] != cfg_.input_bins)
      throw ShapeError("spec model: expected {" +
                       std::to_string(cfg_.input_channels) + ",l," +
                       std::to_string(cfg_.input_bins) + "}, got " +
                       shape_str(input->shape));
    last_trace.clear();
    Var h = conv1_.forward(input);
    last_trace.emplace_back("conv1", h->shape);
    for (int i = 0; i < 3; ++i) {
      h = blocks_[i].forward(h, training);
      last_trace.emplace_back("res" + std::to_string(i + 1), h->shape);
    }
    h = maxpool2d(h, 1, cfg_.freq_pool);  // {C, l/8, 1}
    last_trace.emplace_back("pool", h->shape);
    // sequence of frame embeddings: {C, T} -> {T, C}
    Var seq = transpose2d(reshape(h, {h->shape[0], h->shape[1]}));
    Var state = gru_.forward(seq);
    last_trace.emplace_back("gru", state->shape);
    Var embed = relu(dense1_.forward(state));
    last_trace.emplace_back("dense1", embed->shape);
    Var logits = output_.forward(embed);
    last_trace.emplace_back("output", logits->shape);
    return {logits, embed};
  }

  std::string kind() const override { return "spec_cnngru"; }

  SpecCnnGruConfig cfg_;
  Conv2d conv1_;
  std::array<ResBlock2d, 3> blocks_;
  Gru gru_;
  Dense dense1_, output_;
};

class WaveCnnGru : public Model {
 public:
  WaveCnnGru(const WaveCnnGruConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    frame_conv_ = Conv2d(1, cfg.frame_maps, 1, cfg.frame_kernel, 1,
                         cfg.frame_stride, rng);
    Eigen::Index c = cfg.frame_maps;
    for (int i = 0; i < 4; ++i) {
      blocks_[i] =
          ResBlock2d(c, cfg.block_maps[i], 1, cfg.block_kernel, 1, 1, rng);
      c = cfg.block_maps[i];
    }
    gru_ = Gru(c, cfg.gru_units, rng);
    dense1_ = Dense(cfg.gru_units, cfg.embed_dim, rng);
    output_ = Dense(cfg.embed_dim, 2, rng);
    output_.weight->value *= 0.1;  // near-uniform untrained softmax

    frame_conv_.collect("frame_conv", params_);
    for (int i = 0; i < 4; ++i) {
      blocks_[i].collect("res" + std::to_string(i + 1), params_);
      blocks_[i].collect_buffers("res" + std::to_string(i + 1), buffers_);
    }
    gru_.collect("gru", params_);
    dense1_.collect("dense1", params_);
    output_.collect("output", params_);
  }

  ForwardResult forward(const Var& input, bool training) override {
    if (input->shape.size() != 2 || input->shape[0] != 1)
      throw ShapeError("wave model: expected {1,N}, got " +
                       shape_str(input->shape));
    const Eigen::Index receptive =
        cfg_.frame_stride *
        static_cast<Eigen::Index>(std::pow(cfg_.pool, 4));
    if (training && input->shape[1] < receptive)
      throw features::InputError("wave model: input shorter than receptive field");
    last_trace.clear();
    Var h = reshape(input, {1, Eigen::Index(1), input->shape[1]});
    h = frame_conv_.forward(h);
    last_trace.emplace_back("frame_conv", h->shape);
    for (int i = 0; i < 4; ++i) {
      h = blocks_[i].forward(h, training);
      h = maxpool2d(h, 1, cfg_.pool);
      last_trace.emplace_back("res" + std::to_string(i + 1), h->shape);
    }
    Var seq = transpose2d(reshape(h, {h->shape[0], h->shape[2]}));
    last_trace.emplace_back("sequence", seq->shape);
    Var state = gru_.forward(seq);
    Var embed = relu(dense1_.forward(state));
    return {output_.forward(embed), embed};
  }

  std::string kind() const override { return "wave_cnngru"; }

  WaveCnnGruConfig cfg_;
  Conv2d frame_conv_;
  std::array<ResBlock2d, 4> blocks_;
  Gru gru_;
  Dense dense1_, output_;
};

class IvecDnn : public Model {
 public:
  IvecDnn(const IvecDnnConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    Eigen::Index in = cfg.input_dim;
    for (int i = 0; i < cfg.hidden_layers; ++i) {
      hidden_.emplace_back(in, cfg.hidden_dim, rng);
      in = cfg.hidden_dim;
    }
    output_ = Dense(in, 2, rng);
    output_.weight->value *= 0.1;  // near-uniform untrained softmax
    for (int i = 0; i < cfg.hidden_layers; ++i)
      hidden_[i].collect("hidden" + std::to_string(i + 1), params_);
    output_.collect("output", params_);
  }

  ForwardResult forward(const Var& input, bool) override {
    if (input->shape.size() != 2 || input->shape[1] != cfg_.input_dim)
      throw ShapeError("ivec model: expected {n," +
                       std::to_string(cfg_.input_dim) + "}, got " +
                       shape_str(input->shape));
    Var h = input;
    for (auto& layer : hidden_) h = relu(layer.forward(h));
    return {output_.forward(h), h};
  }

  std::string kind() const override { return "ivec_dnn"; }

  IvecDnnConfig cfg_;
  std::vector<Dense> hidden_;
  Dense output_;
};

}  // namespace

std::unique_ptr<Model> build_spec_cnngru(const SpecCnnGruConfig& cfg,
                                         RandomStream& rng) {
  return std::make_unique<SpecCnnGru>(cfg, rng);
}

std::unique_ptr<Model> build_wave_cnngru(const WaveCnnGruConfig& cfg,
                                         RandomStream& rng) {
  return std::make_unique<WaveCnnGru>(cfg, rng);
}

std::unique_ptr<Model> build_ivec_dnn(const IvecDnnConfig& cfg,
                                      RandomStream& rng) {
  return std::make_unique<IvecDnn>(cfg, rng);
}

SpectroTensor stack_channels(const std::vector<SpectroTensor>& tensors) {
  if (tensors.empty()) throw ShapeError("stack_channels: empty input");
  SpectroTensor out;
  out.frames = tensors[0].frames;
  out.bins = tensors[0].bins;
  for (const auto& t : tensors) {
    if (t.frames != out.frames || t.bins != out.bins)
      throw ShapeError("stack_channels: mismatched frames/bins");
    for (size_t i = 0; i < t.channels.size(); ++i) {
      out.channel_kinds.push_back(t.channel_kinds[i]);
      out.channels.push_back(t.channels[i]);
    }
  }
  return out;
}

Var spectro_input(const Model& model, const SpectroTensor& t) {
  const Eigen::Index n_ch = static_cast<Eigen::Index>(t.channels.size());
  const bool normalized = model.norm_mean.size() == n_ch;
  Array data(n_ch * t.frames * t.bins);
  Eigen::Index off = 0;
  for (Eigen::Index c = 0; c < n_ch; ++c) {
    const double mu = normalized ? model.norm_mean[c] : 0.0;
    const double sd = normalized ? model.norm_std[c] : 1.0;
    for (Eigen::Index f = 0; f < t.frames; ++f)
      for (Eigen::Index b = 0; b < t.bins; ++b)
        data[off++] = (t.channels[c](f, b) - mu) / sd;
  }
  return constant({n_ch, t.frames, t.bins}, std::move(data));
}

Var wave_input(const Eigen::VectorXd& samples) {
  return constant({1, samples.size()},
                  Array::Map(samples.data(), samples.size()));
}

Var ivector_input(const Eigen::VectorXd& ivec) {
  return constant({1, ivec.size()}, Array::Map(ivec.data(), ivec.size()));
}

double infer_score(Model& model, const Var& input) {
  auto out = model.forward(input, /*training=*/false);
  Var probs = softmax_rows(out.logits);
  return probs->value[0];  // node 0: bona-fide
}

std::string describe_spec(const SpecCnnGruConfig& c) {
  json j;
  j["kind"] = "spec_cnngru";
  j["input_bins"] = c.input_bins;
  j["input_channels"] = c.input_channels;
  j["conv1_maps"] = c.conv1_maps;
  j["block_maps"] = c.block_maps;
  j["gru_units"] = c.gru_units;
  j["embed_dim"] = c.embed_dim;
  return j.dump();
}

std::string describe_wave(const WaveCnnGruConfig& c) {
  json j;
  j["kind"] = "wave_cnngru";
  j["frame_maps"] = c.frame_maps;
  j["block_maps"] = c.block_maps;
  j["gru_units"] = c.gru_units;
  j["embed_dim"] = c.embed_dim;
  return j.dump();
}

std::string describe_ivec(const IvecDnnConfig& c) {
  json j;
  j["kind"] = "ivec_dnn";
  j["input_dim"] = c.input_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["hidden_layers"] = c.hidden_layers;
  return j.dump();
}

std::unique_ptr<Model> build_from_description(const std::string& text,
                                              RandomStream& rng) {
  json j = json::parse(text);
  const std::string kind = j.at("kind");
  if (kind == "spec_cnngru") {
    SpecCnnGruConfig c;
    c.input_bins = j.at("input_bins");
    c.input_channels = j.at("input_channels");
    c.conv1_maps = j.at("conv1_maps");
    c.block_maps = j.at("block_maps");
    c.gru_units = j.at("gru_units");
    c.embed_dim = j.at("embed_dim");
    return build_spec_cnngru(c, rng);
  }
  if (kind == "wave_cnngru") {
    WaveCnnGruConfig c;
    c.frame_maps = j.at("frame_maps");
    c.block_maps = j.at("block_maps");
    c.gru_units = j.at("gru_units");
    c.embed_dim = j.at("embed_dim");
    return build_wave_cnngru(c, rng);
  }
  if (kind == "ivec_dnn") {
    IvecDnnConfig c;
    c.input_dim = j.at("input_dim");
    c.hidden_dim = j.at("hidden_dim");
    c.hidden_layers = j.at("hidden_layers");
    return build_ivec_dnn(c, rng);
  }
  throw ConfigError("unknown model kind: " + kind);
}

}  // namespace spoofnet::models
