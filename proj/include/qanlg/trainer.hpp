#pragma once

// Mini-batch training with Adam, early stopping on dev loss, and the
// round-robin multi-task schedule; plus checkpoints and run manifests.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qanlg/model.hpp"

namespace qanlg {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 1000;
  double learning_rate = 0.001;
  std::size_t patience = 20;
  double min_delta = 1e-5;
  double clip_norm = 5.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TaskData {
  std::vector<Example> train;
  std::vector<Example> dev;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::map<std::string, double> train_loss;
  std::map<std::string, double> train_accuracy;
  std::map<std::string, double> dev_loss;
  std::map<std::string, std::size_t> batches;
  double val_loss = 0.0;  // unweighted mean of dev_loss
  std::vector<std::string> schedule;  // task of every batch in order (kept in memory only)
  double wall_seconds = 0.0;           // kept out of checkpoints
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
};

// Shuffled index batches for one pass; seeded by (seed, epoch, stream).
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch, std::uint64_t stream = 0);
std::vector<Batch> make_batches(const NlgModel& model, const std::string& task, const std::vector<Example>& data,
                                std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

// Token-weighted mean cross-entropy, no gradients.
double evaluate_loss(const NlgModel& model, const std::vector<Example>& data, const std::string& task,
                     std::size_t batch_size = 32);

// Return false to stop training after this epoch.
using EpochCallback = std::function<bool(const EpochRecord&)>;

// Leaves the best-dev-loss parameters in the model.
TrainHistory train(NlgModel& model, const std::map<std::string, TaskData>& data, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

struct LoadedModel {
  NlgModel model;
  TrainHistory history;
};

void save_checkpoint(const NlgModel& model, const TrainHistory& history, const std::string& path);
LoadedModel load_checkpoint(const std::string& path);
void write_checkpoint(const NlgModel& model, const TrainHistory& history, std::ostream& out);
LoadedModel read_checkpoint(std::istream& in);

// Tab-separated per-epoch history, wall times included.
void write_history(const TrainHistory& history, std::ostream& out);

std::string fingerprint_file(const std::string& path);

}  // namespace qanlg
