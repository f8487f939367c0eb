#pragma once

// Batch construction and the training loop: cross-entropy + weighted center
// loss, AMSGrad steps, dev-EER model selection.

#include <functional>

#include "spoofnet/metrics.hpp"
#include "spoofnet/models.hpp"

namespace spoofnet::training {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch_size = 32;
  int epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double lambda_center = 0.01;
  double center_alpha = 0.5;
  std::uint64_t seed = 1;
  int eval_every = 5;
  // stop once an epoch's training accuracy reaches this level (<0: never)
  double stop_train_accuracy = -1.0;

  void validate() const;
};

struct TrainLog {
  std::vector<double> step_loss;
  std::vector<double> step_center_loss;
  std::vector<double> epoch_accuracy;
  std::vector<std::pair<int, double>> dev_eer;  // (epoch, eer)
  double best_dev_eer = 1.0;
  int best_epoch = -1;
  double wall_seconds = 0.0;
  Eigen::Index skipped_utterances = 0;
};

// Produces the graph input for one example; train mode may crop/tile with
// the provided rng stream.
using InputFn =
    std::function<ad::Var(size_t index, features::Mode mode,
                          ad::RandomStream& rng)>;

struct DevSet {
  InputFn input;
  std::vector<int> labels;  // 0 bona-fide, 1 spoof
  size_t size = 0;
};

// Epoch's batch index lists, shuffled through the rng.
std::vector<std::vector<size_t>> make_batches(size_t n, int batch_size,
                                              ad::RandomStream& rng);

// Labels: 0 bona-fide, 1 spoof. When dev is given, the best-dev-EER
// parameters are restored into the model before returning.
TrainLog train_model(models::Model& model, const InputFn& input,
                     const std::vector<int>& labels, const TrainConfig& cfg,
                     const DevSet* dev = nullptr);

// Dev-set bona-fide probabilities in index order.
std::vector<double> score_all(models::Model& model, const InputFn& input,
                              size_t n);

// Per-channel mean/std over a list of tensors; writes model.norm_mean/std.
void fit_channel_norm(models::Model& model,
                      const std::vector<features::SpectroTensor>& tensors);

}  // namespace spoofnet::training
