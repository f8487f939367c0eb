#include "spoofnet/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "spoofnet/checkpoint.hpp"
#include "spoofnet/ivector.hpp"
#include "spoofnet/metrics.hpp"
#include "spoofnet/synth.hpp"
#include "spoofnet/training.hpp"

namespace spoofnet::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliError : std::runtime_error {
  int code;
  CliError(int code_, const std::string& what) : std::runtime_error(what), code(code_) {}
};

// ---------- config handling ----------

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw CliError(kExitConfig, "config: cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CliError(kExitConfig, std::string("config: ") + e.what());
  }
}

features::FeatureConfig feature_config_from(const json& j) {
  features::FeatureConfig cfg;
  const json f = j.value("features", json::object());
  cfg.window_ms = f.value("window_ms", cfg.window_ms);
  cfg.shift_ms = f.value("shift_ms", cfg.shift_ms);
  cfg.n_fft = f.value("n_fft", cfg.n_fft);
  cfg.target_frames = f.value("target_frames", cfg.target_frames);
  cfg.wave_segment_samples =
      f.value("wave_segment_samples", cfg.wave_segment_samples);
  cfg.pre_emphasis = f.value("pre_emphasis", cfg.pre_emphasis);
  if (f.contains("channels")) {
    cfg.channels.clear();
    for (const auto& name : f.at("channels")) {
      if (name == "magnitude")
        cfg.channels.push_back(features::Channel::magnitude);
      else if (name == "phase")
        cfg.channels.push_back(features::Channel::phase);
      else if (name == "psd")
        cfg.channels.push_back(features::Channel::psd);
      else
        throw CliError(kExitConfig,
                       "config: unknown channel '" + name.get<std::string>() + "'");
    }
  }
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw CliError(kExitConfig, std::string("config: ") + e.what());
  }
  return cfg;
}

synth::SynthConfig synth_config_from(const json& j) {
  synth::SynthConfig cfg;
  const json s = j.value("synth", json::object());
  cfg.n_speakers = s.value("n_speakers", cfg.n_speakers);
  cfg.n_utts_per_class = s.value("n_utts_per_class", cfg.n_utts_per_class);
  cfg.duration_min_s = s.value("duration_min_s", cfg.duration_min_s);
  cfg.duration_max_s = s.value("duration_max_s", cfg.duration_max_s);
  cfg.noise_snr_db = s.value("noise_snr_db", cfg.noise_snr_db);
  cfg.rng_seed = s.value("seed", cfg.rng_seed);
  return cfg;
}

training::TrainConfig train_config_from(const json& j) {
  training::TrainConfig cfg;
  const json t = j.value("train", json::object());
  cfg.batch_size = t.value("batch_size", cfg.batch_size);
  cfg.epochs = t.value("epochs", cfg.epochs);
  cfg.lr = t.value("lr", cfg.lr);
  cfg.weight_decay = t.value("weight_decay", cfg.weight_decay);
  cfg.lambda_center = t.value("lambda_center", cfg.lambda_center);
  cfg.center_alpha = t.value("center_alpha", cfg.center_alpha);
  cfg.seed = t.value("seed", cfg.seed);
  cfg.eval_every = t.value("eval_every", cfg.eval_every);
  return cfg;
}

metrics::TdcfParams tdcf_params_from(const json& j) {
  metrics::TdcfParams p;
  const json t = j.value("tdcf", json::object());
  p.pi_tar = t.value("pi_tar", p.pi_tar);
  p.pi_non = t.value("pi_non", p.pi_non);
  p.pi_spoof = t.value("pi_spoof", p.pi_spoof);
  p.cost_miss = t.value("cost_miss", p.cost_miss);
  p.cost_fa = t.value("cost_fa", p.cost_fa);
  p.p_miss_asv = t.value("p_miss_asv", p.p_miss_asv);
  p.p_fa_asv = t.value("p_fa_asv", p.p_fa_asv);
  p.p_miss_spoof_asv = t.value("p_miss_spoof_asv", p.p_miss_spoof_asv);
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw CliError(kExitConfig, std::string("config: ") + e.what());
  }
  return p;
}

// ---------- atomic file helpers ----------

void atomic_write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CliError(kExitInput, "cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

// ---------- corpus loading ----------

struct Corpus {
  std::vector<audio::AudioClip> clips;
  std::vector<audio::ProtocolEntry> protocol;
};

Corpus load_corpus(const fs::path& dir, bool resample) {
  Corpus corpus;
  const fs::path proto_path = dir / "protocol.txt";
  std::ifstream in(proto_path);
  if (!in)
    throw CliError(kExitInput, "cannot open " + proto_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  corpus.protocol = audio::parse_protocol(buf.str());
  for (const auto& e : corpus.protocol) {
    fs::path wav = dir / "wav" / (e.utterance_id + ".wav");
    if (!fs::exists(wav)) wav = dir / "wav" / (e.utterance_id + ".flac");
    corpus.clips.push_back(audio::read_audio(wav, resample));
    corpus.clips.back().utterance_id = e.utterance_id;
  }
  audio::join_protocol(corpus.protocol, corpus.clips);
  return corpus;
}

// deterministic 80/20 split on protocol order, per class
void split_corpus(const Corpus& corpus, std::vector<size_t>& train_idx,
                  std::vector<size_t>& dev_idx) {
  size_t seen[2] = {0, 0};
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    const int cls = corpus.clips[i].label == audio::Label::bonafide ? 0 : 1;
    if (seen[cls]++ % 5 == 4)
      dev_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
}

// ---------- score files ----------

void write_scores(const fs::path& path, const metrics::ScoreSet& set) {
  std::ostringstream out;
  out << std::setprecision(12);
  for (const auto& e : set.entries)
    out << e.utterance_id << " " << e.score << "\n";
  atomic_write_text(path, out.str());
}

metrics::ScoreSet read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CliError(kExitInput, "cannot open " + path.string());
  metrics::ScoreSet set;
  set.system_id = path.stem().string();
  std::string id;
  double score;
  while (in >> id >> score) set.entries.push_back({id, score});
  return set;
}

void attach_labels(metrics::ScoreSet& set,
                   const std::vector<audio::ProtocolEntry>& protocol) {
  std::map<std::string, const audio::ProtocolEntry*> by_id;
  for (const auto& e : protocol) by_id[e.utterance_id] = &e;
  for (auto& s : set.entries) {
    auto it = by_id.find(s.utterance_id);
    if (it == by_id.end())
      throw CliError(kExitInput,
                     "score id '" + s.utterance_id + "' not in protocol");
    s.label = it->second->label;
    s.attacker_distance = it->second->attacker_distance;
    s.speaker_quality = it->second->speaker_quality;
  }
}

// ---------- model training helpers ----------

struct ModelBundle {
  std::unique_ptr<models::Model> model;
  std::string family;  // spec | wave | ivec
  features::FeatureConfig feat_cfg;
  // i-vector branch state
  ivector::GmmModel ubm;
  Eigen::MatrixXd tv;
};

json model_section(const json& config) {
  return config.value("model", json::object());
}

int cmd_synth(const json& config, const std::string& out_dir,
              std::uint64_t seed_override) {
  synth::SynthConfig cfg = synth_config_from(config);
  if (seed_override) cfg.rng_seed = seed_override;
  const auto corpus = synth::synthesize_corpus(cfg);
  const fs::path root(out_dir);
  fs::create_directories(root / "wav");
  std::ostringstream proto;
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    const auto& clip = corpus.clips[i];
    audio::write_wav(root / "wav" / (clip.utterance_id + ".wav"), clip);
    const auto& e = corpus.protocol[i];
    proto << e.utterance_id << " " << audio::label_name(e.label) << " ";
    if (e.attacker_distance == audio::ConfigClass::none)
      proto << "-";
    else
      proto << audio::config_class_name(e.attacker_distance)
            << audio::config_class_name(e.speaker_quality);
    proto << " " << (e.env_id.empty() ? "-" : e.env_id) << "\n";
  }
  atomic_write_text(root / "protocol.txt", proto.str());
  std::cout << "synth: wrote " << corpus.clips.size() << " clips to "
            << out_dir << "\n";
  return kExitOk;
}

int cmd_extract(const json& config, const std::string& corpus_dir,
                const std::string& out_dir, bool resample) {
  const auto feat_cfg = feature_config_from(config);
  const auto corpus = load_corpus(corpus_dir, resample);
  fs::create_directories(out_dir);
  for (const auto& clip : corpus.clips) {
    const auto tensor = features::extract(clip, feat_cfg);
    const fs::path out = fs::path(out_dir) / (clip.utterance_id + ".feat");
    const fs::path tmp = out.string() + ".tmp";
    features::save_features(tmp, tensor);
    fs::rename(tmp, out);
  }
  std::cout << "extract: wrote " << corpus.clips.size() << " feature files\n";
  return kExitOk;
}

ModelBundle build_bundle(const json& config, const std::string& family,
                         ad::RandomStream& rng) {
  ModelBundle bundle;
  bundle.family = family;
  bundle.feat_cfg = feature_config_from(config);
  const json m = model_section(config);
  const bool desk = m.value("scale", std::string("desk")) == "desk";
  if (family == "spec") {
    auto cfg = desk ? models::SpecCnnGruConfig::desk(
                          bundle.feat_cfg.bins(),
                          static_cast<Eigen::Index>(
                              bundle.feat_cfg.channels.size()))
                    : models::SpecCnnGruConfig{};
    if (!desk) {
      cfg.input_bins = bundle.feat_cfg.bins();
      cfg.input_channels =
          static_cast<Eigen::Index>(bundle.feat_cfg.channels.size());
    }
    bundle.model = models::build_spec_cnngru(cfg, rng);
  } else if (family == "wave") {
    auto cfg = desk ? models::WaveCnnGruConfig::desk()
                    : models::WaveCnnGruConfig{};
    bundle.model = models::build_wave_cnngru(cfg, rng);
  } else if (family == "ivec") {
    auto cfg = desk ? models::IvecDnnConfig::desk(
                          m.value("tv_rank", 50))
                    : models::IvecDnnConfig{};
    if (!desk) cfg.input_dim = m.value("tv_rank", 200);
    bundle.model = models::build_ivec_dnn(cfg, rng);
  } else {
    throw CliError(kExitConfig, "unknown model family '" + family + "'");
  }
  return bundle;
}

void register_norm_buffers(ModelBundle& bundle) {
  bundle.model->buffers().push_back({"norm.mean", &bundle.model->norm_mean});
  bundle.model->buffers().push_back({"norm.std", &bundle.model->norm_std});
}

json model_meta(const ModelBundle& bundle) {
  json meta;
  meta["family"] = bundle.family;
  const auto& f = bundle.feat_cfg;
  meta["features"] = {
      {"window_ms", f.window_ms},
      {"shift_ms", f.shift_ms},
      {"n_fft", f.n_fft},
      {"target_frames", f.target_frames},
      {"wave_segment_samples", f.wave_segment_samples},
      {"pre_emphasis", f.pre_emphasis},
  };
  json channels = json::array();
  for (auto c : f.channels) channels.push_back(features::channel_name(c));
  meta["features"]["channels"] = channels;
  return meta;
}

int cmd_train(const json& config, const std::string& corpus_dir,
              const std::string& family, const std::string& out_path,
              std::uint64_t seed_override, bool resample) {
  auto train_cfg = train_config_from(config);
  if (seed_override) train_cfg.seed = seed_override;
  ad::RandomStream init_rng(train_cfg.seed);

  ModelBundle bundle = build_bundle(config, family, init_rng);
  register_norm_buffers(bundle);
  const auto corpus = load_corpus(corpus_dir, resample);
  std::vector<size_t> train_idx, dev_idx;
  split_corpus(corpus, train_idx, dev_idx);
  if (train_idx.empty() || dev_idx.empty())
    throw CliError(kExitInput, "corpus too small to split into train/dev");

  auto label_of = [&](size_t i) {
    return corpus.clips[i].label == audio::Label::bonafide ? 0 : 1;
  };
  std::vector<int> train_labels, dev_labels;
  for (size_t i : train_idx) train_labels.push_back(label_of(i));
  for (size_t i : dev_idx) dev_labels.push_back(label_of(i));

  training::InputFn train_input, dev_input;
  std::string extra_meta;

  if (family == "spec") {
    auto tensors = std::make_shared<std::vector<features::SpectroTensor>>();
    for (const auto& clip : corpus.clips)
      tensors->push_back(features::extract(clip, bundle.feat_cfg));
    std::vector<features::SpectroTensor> train_tensors;
    for (size_t i : train_idx) train_tensors.push_back((*tensors)[i]);
    training::fit_channel_norm(*bundle.model, train_tensors);
    auto* model_ptr = bundle.model.get();
    auto feat_cfg = bundle.feat_cfg;
    train_input = [tensors, &train_idx, model_ptr, feat_cfg](
                      size_t i, features::Mode mode, ad::RandomStream& rng) {
      const auto t =
          features::fit_length((*tensors)[train_idx[i]], feat_cfg, mode, rng);
      return models::spectro_input(*model_ptr, t);
    };
    dev_input = [tensors, &dev_idx, model_ptr, feat_cfg](
                    size_t i, features::Mode mode, ad::RandomStream& rng) {
      const auto t =
          features::fit_length((*tensors)[dev_idx[i]], feat_cfg, mode, rng);
      return models::spectro_input(*model_ptr, t);
    };
  } else if (family == "wave") {
    auto clips = std::make_shared<std::vector<audio::AudioClip>>(corpus.clips);
    auto feat_cfg = bundle.feat_cfg;
    train_input = [clips, &train_idx, feat_cfg](size_t i, features::Mode mode,
                                                ad::RandomStream& rng) {
      return models::wave_input(
          features::segment_waveform((*clips)[train_idx[i]], feat_cfg, mode, rng));
    };
    dev_input = [clips, &dev_idx, feat_cfg](size_t i, features::Mode mode,
                                            ad::RandomStream& rng) {
      return models::wave_input(
          features::segment_waveform((*clips)[dev_idx[i]], feat_cfg, mode, rng));
    };
  } else {  // ivec
    const json m = model_section(config);
    const Eigen::Index ubm_c = m.value("ubm_components", 32);
    const Eigen::Index rank = m.value("tv_rank", 50);
    const int ubm_iters = m.value("ubm_iters", 10);
    const int tv_iters = m.value("tv_iters", 5);

    std::vector<Eigen::MatrixXd> mfccs;
    for (const auto& clip : corpus.clips)
      mfccs.push_back(features::mfcc_with_deltas(clip));
    Eigen::Index total = 0;
    for (size_t i : train_idx) total += mfccs[i].rows();
    Eigen::MatrixXd pooled(total, 60);
    Eigen::Index row = 0;
    for (size_t i : train_idx) {
      pooled.middleRows(row, mfccs[i].rows()) = mfccs[i];
      row += mfccs[i].rows();
    }
    bundle.ubm = ivector::train_ubm(pooled, ubm_c, ubm_iters, init_rng);
    std::vector<ivector::BwStats> train_stats;
    for (size_t i : train_idx)
      train_stats.push_back(ivector::accumulate_stats(mfccs[i], bundle.ubm));
    bundle.tv =
        ivector::train_tv(train_stats, bundle.ubm, rank, tv_iters, init_rng);

    auto ivecs = std::make_shared<std::vector<Eigen::VectorXd>>();
    for (const auto& m2 : mfccs)
      ivecs->push_back(ivector::extract_ivector(
          ivector::accumulate_stats(m2, bundle.ubm), bundle.tv, bundle.ubm));
    train_input = [ivecs, &train_idx](size_t i, features::Mode,
                                      ad::RandomStream&) {
      return models::ivector_input((*ivecs)[train_idx[i]]);
    };
    dev_input = [ivecs, &dev_idx](size_t i, features::Mode,
                                  ad::RandomStream&) {
      return models::ivector_input((*ivecs)[dev_idx[i]]);
    };
  }

  training::DevSet dev{dev_input, dev_labels, dev_idx.size()};
  training::TrainLog log;
  try {
    log = training::train_model(*bundle.model, train_input, train_labels,
                                train_cfg, &dev);
  } catch (const training::NumericError& e) {
    throw CliError(kExitNumeric, e.what());
  }

  // checkpoint: params + buffers (+ ivector branch tensors)
  auto tensors = checkpoint::pack(bundle.model->params(),
                                  bundle.model->buffers(), nullptr);
  if (bundle.family == "ivec") {
    const auto& ubm = bundle.ubm;
    tensors["ivec/ubm.weights"] = {{ubm.weights.size()},
                                   ad::Array::Map(ubm.weights.data(),
                                                  ubm.weights.size())};
    tensors["ivec/ubm.means"] = {
        {ubm.means.rows(), ubm.means.cols()},
        ad::Array::Map(Eigen::MatrixXd(ubm.means.transpose()).data(),
                       ubm.means.size())};
    tensors["ivec/ubm.variances"] = {
        {ubm.variances.rows(), ubm.variances.cols()},
        ad::Array::Map(Eigen::MatrixXd(ubm.variances.transpose()).data(),
                       ubm.variances.size())};
    tensors["ivec/tv"] = {
        {bundle.tv.rows(), bundle.tv.cols()},
        ad::Array::Map(Eigen::MatrixXd(bundle.tv.transpose()).data(),
                       bundle.tv.size())};
  }
  json meta = model_meta(bundle);
  meta["dev_eer"] = log.best_dev_eer;
  const fs::path out(out_path);
  const fs::path tmp = out.string() + ".tmp";
  checkpoint::save(tmp, tensors, meta.dump());
  fs::rename(tmp, out);

  // append-only structured training log
  {
    std::ofstream lg(out_path + ".log", std::ios::app);
    for (size_t i = 0; i < log.step_loss.size(); ++i)
      lg << "step " << i << " loss " << log.step_loss[i] << " center "
         << log.step_center_loss[i] << "\n";
    for (const auto& [epoch, eer] : log.dev_eer)
      lg << "eval epoch " << epoch << " dev_eer " << eer << "\n";
    lg << "done best_epoch " << log.best_epoch << " best_dev_eer "
       << log.best_dev_eer << " wall_s " << log.wall_seconds << "\n";
  }
  std::cout << "train: best dev EER " << 100.0 * log.best_dev_eer
            << "% (epoch " << log.best_epoch << "), checkpoint " << out_path
            << "\n";
  return kExitOk;
}

ModelBundle load_bundle(const fs::path& ckpt_path, std::uint64_t seed) {
  std::string meta_text;
  auto tensors = checkpoint::load(ckpt_path, &meta_text);
  json meta = json::parse(meta_text);
  json config;
  config["features"] = meta.at("features");
  config["model"] = {{"scale", "desk"}};  // sizes come from the tensors below

  ad::RandomStream rng(seed);
  ModelBundle bundle;
  bundle.family = meta.at("family");
  bundle.feat_cfg = feature_config_from(config);

  // rebuild with the exact widths recorded in the checkpoint
  if (bundle.family == "spec") {
    models::SpecCnnGruConfig cfg;
    cfg.input_bins = bundle.feat_cfg.bins();
    cfg.input_channels =
        static_cast<Eigen::Index>(bundle.feat_cfg.channels.size());
    cfg.conv1_maps = tensors.at("param/conv1.bias").shape[0];
    for (int i = 0; i < 3; ++i)
      cfg.block_maps[i] =
          tensors.at("param/res" + std::to_string(i + 1) + ".conv1.bias")
              .shape[0];
    cfg.gru_units = tensors.at("param/gru.bz").shape[1];
    cfg.embed_dim = tensors.at("param/dense1.bias").shape[1];
    bundle.model = models::build_spec_cnngru(cfg, rng);
  } else if (bundle.family == "wave") {
    models::WaveCnnGruConfig cfg;
    cfg.frame_maps = tensors.at("param/frame_conv.bias").shape[0];
    for (int i = 0; i < 4; ++i)
      cfg.block_maps[i] =
          tensors.at("param/res" + std::to_string(i + 1) + ".conv1.bias")
              .shape[0];
    cfg.gru_units = tensors.at("param/gru.bz").shape[1];
    cfg.embed_dim = tensors.at("param/dense1.bias").shape[1];
    bundle.model = models::build_wave_cnngru(cfg, rng);
  } else if (bundle.family == "ivec") {
    models::IvecDnnConfig cfg;
    cfg.input_dim = tensors.at("param/hidden1.weight").shape[0];
    cfg.hidden_dim = tensors.at("param/hidden1.bias").shape[1];
    bundle.model = models::build_ivec_dnn(cfg, rng);
    const auto& w = tensors.at("ivec/ubm.weights");
    const auto& mn = tensors.at("ivec/ubm.means");
    const auto& vr = tensors.at("ivec/ubm.variances");
    const auto& tv = tensors.at("ivec/tv");
    bundle.ubm.weights = Eigen::VectorXd::Map(w.data.data(), w.data.size());
    bundle.ubm.means = Eigen::Map<const Eigen::Matrix<
        double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        mn.data.data(), mn.shape[0], mn.shape[1]);
    bundle.ubm.variances = Eigen::Map<const Eigen::Matrix<
        double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        vr.data.data(), vr.shape[0], vr.shape[1]);
    bundle.tv = Eigen::Map<const Eigen::Matrix<
        double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        tv.data.data(), tv.shape[0], tv.shape[1]);
  } else {
    throw CliError(kExitConfig, "checkpoint: unknown family");
  }
  register_norm_buffers(bundle);
  checkpoint::unpack(tensors, bundle.model->params(),
                     bundle.model->buffers(), nullptr);
  return bundle;
}

int cmd_score(const std::string& corpus_dir, const std::string& ckpt_path,
              const std::string& out_path, bool resample) {
  ModelBundle bundle = load_bundle(ckpt_path, /*seed=*/1);
  const auto corpus = load_corpus(corpus_dir, resample);
  metrics::ScoreSet set;
  set.system_id = fs::path(ckpt_path).stem().string();
  ad::RandomStream dummy(0);
  for (const auto& clip : corpus.clips) {
    double score;
    if (bundle.family == "spec") {
      const auto t = features::extract(clip, bundle.feat_cfg);
      score = models::infer_score(*bundle.model,
                                  models::spectro_input(*bundle.model, t));
    } else if (bundle.family == "wave") {
      score = models::infer_score(
          *bundle.model,
          models::wave_input(features::segment_waveform(
              clip, bundle.feat_cfg, features::Mode::eval, dummy)));
    } else {
      const auto mfcc = features::mfcc_with_deltas(clip);
      const auto ivec = ivector::extract_ivector(
          ivector::accumulate_stats(mfcc, bundle.ubm), bundle.tv, bundle.ubm);
      score = models::infer_score(*bundle.model, models::ivector_input(ivec));
    }
    set.entries.push_back({clip.utterance_id, score, clip.label,
                           clip.attacker_distance, clip.speaker_quality});
  }
  write_scores(out_path, set);
  std::cout << "score: wrote " << set.entries.size() << " scores to "
            << out_path << "\n";
  return kExitOk;
}

int cmd_fuse(const std::vector<std::string>& inputs,
             const std::string& out_path, bool znorm) {
  std::vector<metrics::ScoreSet> sets;
  for (const auto& p : inputs) sets.push_back(read_scores(p));
  metrics::ScoreSet fused;
  try {
    fused = metrics::fuse_scores(sets, znorm);
  } catch (const metrics::InputError& e) {
    throw CliError(kExitInput, e.what());
  }
  write_scores(out_path, fused);
  std::cout << "fuse: " << sets.size() << " systems -> " << out_path << "\n";
  return kExitOk;
}

std::string format_cell(const metrics::MetricsReport& r,
                        const std::string& key, bool tdcf) {
  auto it = r.cells.find(key);
  if (it == r.cells.end()) return "   -  ";
  std::ostringstream s;
  s << std::fixed << std::setprecision(tdcf ? 4 : 2)
    << (tdcf ? it->second.min_tdcf : 100.0 * it->second.eer);
  return s.str();
}

int cmd_eval(const json& config, const std::vector<std::string>& score_files,
             const std::string& protocol_path, const std::string& out_path) {
  const auto params = tdcf_params_from(config);
  std::ifstream in(protocol_path);
  if (!in) throw CliError(kExitInput, "cannot open " + protocol_path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto protocol = audio::parse_protocol(buf.str());

  static const std::vector<std::string> kGrid = {"AA", "AB", "AC", "BA", "BB",
                                                 "BC", "CA", "CB", "CC"};
  json out_json = json::array();
  for (const auto& file : score_files) {
    auto set = read_scores(file);
    attach_labels(set, protocol);
    metrics::MetricsReport report;
    try {
      report = metrics::breakdown_report(set, params);
    } catch (const metrics::InputError& e) {
      throw CliError(kExitInput, e.what());
    }

    std::cout << "system " << set.system_id << "\n";
    std::cout << "  Pooled EER " << std::fixed << std::setprecision(2)
              << 100.0 * report.pooled.eer << "%  min t-DCF "
              << std::setprecision(4) << report.pooled.min_tdcf << "\n";
    std::cout << "  cell     ";
    for (const auto& k : kGrid) std::cout << std::setw(8) << k;
    std::cout << "\n  EER(%)   ";
    for (const auto& k : kGrid)
      std::cout << std::setw(8) << format_cell(report, k, false);
    std::cout << "\n  t-DCF    ";
    for (const auto& k : kGrid)
      std::cout << std::setw(8) << format_cell(report, k, true);
    std::cout << "\n";

    json j;
    j["system"] = set.system_id;
    j["pooled"] = {{"eer", report.pooled.eer},
                   {"min_tdcf", report.pooled.min_tdcf},
                   {"n_bonafide", report.pooled.n_bonafide},
                   {"n_spoof", report.pooled.n_spoof}};
    for (const auto& [key, cell] : report.cells)
      j["cells"][key] = {{"eer", cell.eer},
                         {"min_tdcf", cell.min_tdcf},
                         {"n_spoof", cell.n_spoof}};
    out_json.push_back(j);
  }
  if (!out_path.empty()) atomic_write_text(out_path, out_json.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"replay-spoofing detection pipeline"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, out_path, ckpt_path, family = "spec",
              protocol_path;
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
  bool resample = false, znorm = false;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_cmd->add_option("--config", config_path, "JSON config");
  synth_cmd->add_option("--out", out_path, "output directory")->required();
  synth_cmd->add_option("--seed", seed, "override synth seed");

  auto* extract_cmd = app.add_subcommand("extract", "write feature containers");
  extract_cmd->add_option("--config", config_path, "JSON config");
  extract_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  extract_cmd->add_option("--out", out_path, "output directory")->required();
  extract_cmd->add_flag("--resample", resample, "linear-resample to 16 kHz");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path, "JSON config");
  train_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train_cmd->add_option("--model", family, "spec | wave | ivec");
  train_cmd->add_option("--out", out_path, "checkpoint path")->required();
  train_cmd->add_option("--seed", seed, "override train seed");
  train_cmd->add_flag("--resample", resample, "linear-resample to 16 kHz");

  auto* score_cmd = app.add_subcommand("score", "score a corpus");
  score_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  score_cmd->add_option("--model", ckpt_path, "checkpoint path")->required();
  score_cmd->add_option("--out", out_path, "score file")->required();
  score_cmd->add_flag("--resample", resample, "linear-resample to 16 kHz");

  auto* fuse_cmd = app.add_subcommand("fuse", "sum score files");
  fuse_cmd->add_option("--out", out_path, "fused score file")->required();
  fuse_cmd->add_option("inputs", inputs, "member score files")->required();
  fuse_cmd->add_flag("--znorm", znorm, "z-normalize member scores first");

  auto* eval_cmd = app.add_subcommand("eval", "EER / t-DCF report");
  eval_cmd->add_option("--config", config_path, "JSON config (tdcf section)");
  eval_cmd->add_option("--protocol", protocol_path, "protocol file")->required();
  eval_cmd->add_option("--scores", inputs, "score file(s)")->required();
  eval_cmd->add_option("--out", out_path, "JSON report path");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error config: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    const json config = load_config(config_path);
    if (synth_cmd->parsed()) return cmd_synth(config, out_path, seed);
    if (extract_cmd->parsed())
      return cmd_extract(config, corpus_dir, out_path, resample);
    if (train_cmd->parsed())
      return cmd_train(config, corpus_dir, family, out_path, seed, resample);
    if (score_cmd->parsed()) return cmd_score(corpus_dir, ckpt_path, out_path, resample);
    if (fuse_cmd->parsed()) return cmd_fuse(inputs, out_path, znorm);
    if (eval_cmd->parsed())
      return cmd_eval(config, inputs, protocol_path, out_path);
  } catch (const CliError& e) {
    const char* category = e.code == kExitConfig  ? "config"
                           : e.code == kExitInput ? "input"
                                                  : "numeric";
    std::cerr << "error " << category << ": " << e.what() << "\n";
    return e.code;
  } catch (const audio::ParseError& e) {
    std::cerr << "error input: " << e.what() << "\n";
    return kExitInput;
  } catch (const audio::FormatError& e) {
    std::cerr << "error input: " << e.what() << "\n";
    return kExitInput;
  } catch (const audio::IoError& e) {
    std::cerr << "error input: " << e.what() << "\n";
    return kExitInput;
  } catch (const features::ConfigError& e) {
    std::cerr << "error config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error numeric: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace spoofnet::cli
