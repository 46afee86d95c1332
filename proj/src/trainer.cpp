#include "qanlg/trainer.hpp"

#include <chrono>
#include <limits>
#include <numeric>
#include <random>

namespace qanlg {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (max_epochs == 0) throw ContractError("max_epochs must be positive");
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (patience == 0) throw ContractError("patience must be positive");
  if (min_delta < 0.0) throw ContractError("min_delta must be non-negative");
  if (clip_norm < 0.0) throw ContractError("clip_norm must be non-negative");
  if (eval_every == 0) throw ContractError("eval_every must be positive");
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch, std::uint64_t stream) {
  if (batch_size == 0) throw ContractError("batch_indices: batch_size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

std::vector<Batch> make_batches(const NlgModel& model, const std::string& task, const std::vector<Example>& data,
                                std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (data.empty()) throw ContractError("make_batches: empty dataset for task " + task);
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(data.size(), batch_size, seed, epoch)) {
    std::vector<const Example*> ex;
    for (auto i : idx) ex.push_back(&data[i]);
    out.push_back(model.make_batch(task, ex));
  }
  return out;
}

double evaluate_loss(const NlgModel& model, const std::vector<Example>& data, const std::string& task,
                     std::size_t batch_size) {
  if (data.empty()) throw ContractError("evaluate_loss: empty dataset for task " + task);
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    std::vector<const Example*> ex;
    for (std::size_t j = i; j < std::min(data.size(), i + batch_size); ++j) ex.push_back(&data[j]);
    Graph g(false);
    ForwardResult r = model.forward_loss(g, model.make_batch(task, ex));
    total += g.value(r.loss).item() * static_cast<double>(r.tokens);
    tokens += r.tokens;
  }
  return total / static_cast<double>(tokens);
}

namespace {

// Serves one task's batches in shuffled order, reshuffling when exhausted.
class BatchCycle {
 public:
  BatchCycle(const NlgModel& model, const std::string& task, const std::vector<Example>& data,
             const TrainConfig& cfg, std::uint64_t epoch, std::uint64_t task_index)
      : model_(model), task_(task), data_(data), cfg_(cfg), epoch_(epoch), task_index_(task_index) {
    refill();
  }

  std::size_t size() const { return indices_.size(); }

  Batch next() {
    if (pos_ == indices_.size()) {
      ++cycle_;
      refill();
    }
    std::vector<const Example*> ex;
    for (auto i : indices_[pos_++]) ex.push_back(&data_[i]);
    return model_.make_batch(task_, ex);
  }

 private:
  void refill() {
    indices_ = batch_indices(data_.size(), cfg_.batch_size, cfg_.seed, epoch_, task_index_ * 1000003 + cycle_);
    pos_ = 0;
  }

  const NlgModel& model_;
  const std::string& task_;
  const std::vector<Example>& data_;
  const TrainConfig& cfg_;
  std::uint64_t epoch_, task_index_;
  std::uint64_t cycle_ = 0;
  std::vector<std::vector<std::size_t>> indices_;
  std::size_t pos_ = 0;
};

}  // namespace

TrainHistory train(NlgModel& model, const std::map<std::string, TaskData>& data, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  config.validate();
  const auto& tasks = model.config().tasks;
  for (const auto& task : tasks) {
    auto it = data.find(task);
    if (it == data.end()) throw ContractError("no data for task " + task);
    if (it->second.train.empty()) throw ContractError("empty training set for task " + task);
    if (it->second.dev.empty()) throw ContractError("empty dev set for task " + task);
  }

  ParameterStore& store = model.parameters();
  std::map<std::string, std::vector<std::string>> task_paths;
  for (const auto& task : tasks) task_paths[task] = model.task_parameter_paths(task);

  Adam adam(AdamConfig{config.learning_rate});
  TrainHistory history;
  history.best_val_loss = std::numeric_limits<double>::infinity();
  auto best = store.snapshot();
  std::size_t since_best = 0;
  history.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;

    std::vector<BatchCycle> cycles;
    std::size_t rounds = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      cycles.emplace_back(model, tasks[i], data.at(tasks[i]).train, config, epoch, i);
      rounds = std::max(rounds, cycles.back().size());
    }

    std::map<std::string, double> loss_sum;
    std::map<std::string, std::size_t> tokens, correct;
    for (std::size_t r = 0; r < rounds; ++r) {
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const std::string& task = tasks[i];
        Batch batch = cycles[i].next();
        const auto& paths = task_paths[task];
        for (const auto& p : paths) store.get(p).zero_grad();
        Graph g;
        ForwardResult res = model.forward_loss(g, batch);
        g.backward(res.loss);
        if (config.clip_norm > 0.0) clip_grad_norm(store, paths, config.clip_norm);
        adam.step(store, paths);

        loss_sum[task] += g.value(res.loss).item() * static_cast<double>(res.tokens);
        tokens[task] += res.tokens;
        correct[task] += res.correct;
        rec.batches[task] += 1;
        rec.schedule.push_back(task);
      }
    }

    if (epoch % config.eval_every == 0 || epoch == config.max_epochs) {
      double val = 0.0;
      for (const auto& task : tasks) {
        rec.train_loss[task] = loss_sum[task] / static_cast<double>(tokens[task]);
        rec.train_accuracy[task] = static_cast<double>(correct[task]) / static_cast<double>(tokens[task]);
        rec.dev_loss[task] = evaluate_loss(model, data.at(task).dev, task, config.batch_size);
        val += rec.dev_loss[task];
      }
      rec.val_loss = val / static_cast<double>(tasks.size());
      if (rec.val_loss < history.best_val_loss - config.min_delta) {
        history.best_val_loss = rec.val_loss;
        history.best_epoch = epoch;
        best = store.snapshot();
        since_best = 0;
      } else {
        since_best += config.eval_every;
      }
    } else {
      for (const auto& task : tasks) {
        rec.train_loss[task] = loss_sum[task] / static_cast<double>(tokens[task]);
        rec.train_accuracy[task] = static_cast<double>(correct[task]) / static_cast<double>(tokens[task]);
      }
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(rec);

    if (on_epoch && !on_epoch(history.epochs.back())) {
      history.stop_reason = "callback";
      break;
    }
    if (since_best >= config.patience) {
      history.stop_reason = "early_stopping";
      break;
    }
  }
  store.restore(best);
  for (const auto& p : store.paths()) store.get(p).clear_grad();
  return history;
}

}  // namespace qanlg
