#include "spoofnet/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace spoofnet::training {

using namespace ad;

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (lr < 0 || weight_decay < 0 || lambda_center < 0)
    throw std::invalid_argument("negative hyperparameter");
}

std::vector<std::vector<size_t>> make_batches(size_t n, int batch_size,
                                              RandomStream& rng) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t i = n; i > 1; --i) {  // Fisher-Yates
    const size_t j = static_cast<size_t>(rng.uniform_int(0, i - 1));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < n; start += batch_size) {
    const size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

std::vector<double> score_all(models::Model& model, const InputFn& input,
                              size_t n) {
  RandomStream dummy(0);
  std::vector<double> scores(n);
  for (size_t i = 0; i < n; ++i)
    scores[i] =
        models::infer_score(model, input(i, features::Mode::eval, dummy));
  return scores;
}

void fit_channel_norm(models::Model& model,
                      const std::vector<features::SpectroTensor>& tensors) {
  if (tensors.empty()) return;
  const size_t n_ch = tensors[0].channels.size();
  Array mean = Array::Zero(n_ch), sq = Array::Zero(n_ch);
  double count = 0;
  for (const auto& t : tensors) {
    for (size_t c = 0; c < n_ch; ++c) {
      mean[c] += t.channels[c].sum();
      sq[c] += t.channels[c].squaredNorm();
    }
    count += static_cast<double>(t.frames * t.bins);
  }
  mean /= count;
  model.norm_mean = mean;
  model.norm_std = ((sq / count) - mean.square()).max(1e-12).sqrt();
}

namespace {

double grad_norm_summary(const std::vector<NamedParam>& params) {
  double total = 0;
  for (const auto& p : params)
    if (p.var->grad.size()) total += p.var->grad.square().sum();
  return std::sqrt(total);
}

}  // namespace

TrainLog train_model(models::Model& model, const InputFn& input,
                     const std::vector<int>& labels, const TrainConfig& cfg,
                     const DevSet* dev) {
  cfg.validate();
  const auto start_time = std::chrono::steady_clock::now();
  const size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("empty corpus");

  RandomStream rng(cfg.seed);
  AmsGrad opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;

  Matrix centers;  // lazily sized from the first embedding batch
  TrainLog log;
  std::vector<Array> best_params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(n, cfg.batch_size, rng);
    size_t correct = 0;
    for (const auto& batch : batches) {
      std::vector<Var> logit_rows, embed_rows;
      std::vector<int> batch_labels;
      for (size_t idx : batch) {
        Var x = input(idx, features::Mode::train, rng);
        auto out = model.forward(x, /*training=*/true);
        logit_rows.push_back(out.logits);
        embed_rows.push_back(out.embedding);
        batch_labels.push_back(labels[idx]);
      }
      Var logits = concat_rows(logit_rows);
      Var embeds = concat_rows(embed_rows);
      if (centers.size() == 0)
        centers = Matrix::Zero(2, embeds->shape[1]);

      Var ce = cross_entropy(logits, batch_labels);
      Var cl = center_loss(embeds, batch_labels, centers);
      Var loss =
          cfg.lambda_center > 0
              ? add(ce, scale(cl, cfg.lambda_center))
              : ce;

      zero_grad([&] {
        std::vector<Var> vars;
        for (const auto& p : model.params()) vars.push_back(p.var);
        return vars;
      }());
      backward(loss);

      if (!std::isfinite(loss->value[0]))
        throw NumericError(
            "NaN/inf loss at step " + std::to_string(log.step_loss.size()) +
            " (lr " + std::to_string(opt.lr) + ", grad norm " +
            std::to_string(grad_norm_summary(model.params())) + ")");

      opt.step(model.params());

      // center EMA update from the batch embeddings
      Matrix emb(batch_labels.size(), embeds->shape[1]);
      for (Eigen::Index r = 0; r < emb.rows(); ++r)
        emb.row(r) = Eigen::RowVectorXd::Map(
            embeds->value.data() + r * emb.cols(), emb.cols());
      update_centers(emb, batch_labels, centers, cfg.center_alpha);

      log.step_loss.push_back(loss->value[0]);
      log.step_center_loss.push_back(cl->value[0]);

      for (size_t i = 0; i < batch.size(); ++i) {
        const double bona = logits->value[2 * i];
        const double spoof = logits->value[2 * i + 1];
        const int pred = bona >= spoof ? 0 : 1;
        if (pred == batch_labels[i]) ++correct;
      }
    }
    log.epoch_accuracy.push_back(static_cast<double>(correct) / n);

    const bool hit_target = cfg.stop_train_accuracy >= 0 &&
                            log.epoch_accuracy.back() >= cfg.stop_train_accuracy;
    const bool last_epoch = epoch + 1 == cfg.epochs || hit_target;
    if (dev && (epoch % cfg.eval_every == 0 || last_epoch)) {
      const auto scores = score_all(model, dev->input, dev->size);
      metrics::ScoreSet set;
      set.system_id = "dev";
      for (size_t i = 0; i < dev->size; ++i)
        set.entries.push_back({std::to_string(i), scores[i],
                               dev->labels[i] == 0 ? audio::Label::bonafide
                                                   : audio::Label::spoof,
                               audio::ConfigClass::none,
                               audio::ConfigClass::none});
      const double eer = metrics::compute_eer(set).eer;
      log.dev_eer.push_back({epoch, eer});
      if (eer < log.best_dev_eer || best_params.empty()) {
        log.best_dev_eer = eer;
        log.best_epoch = epoch;
        best_params.clear();
        for (const auto& p : model.params())
          best_params.push_back(p.var->value);
      }
    }
    if (hit_target) break;
  }

  if (dev && !best_params.empty())
    for (size_t i = 0; i < model.params().size(); ++i)
      model.params()[i].var->value = best_params[i];

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    start_time)
          .count();
  return log;
}

}  // namespace spoofnet::training
