#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlgforge/corpus.hpp"
#include "dlgforge/model.hpp"

namespace dlg {

struct TrainConfig {
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 2;
  int accumulation_steps = 5;  // effective batch = batch_size * accumulation_steps
  i64 max_steps = 1000;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  i64 checkpoint_every = 0;     // 0: only the final checkpoint
  i64 eval_every = 50;          // 0: never evaluate
  int patience = 5;             // evals without >min_improvement relative gain
  double min_improvement = 0.001;
  int warmup_steps = 0;  // linear LR warmup; off by default
  u64 seed = 1;

  void validate() const;
};

template <class T>
struct AdamState {
  std::vector<T> m, v;
  int step = 0;

  explicit AdamState(size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// Append-only CSV log: step,split,loss_nats,perplexity.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void record(i64 step, const std::string& split, double loss_nats);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct TrainResult {
  i64 steps_done = 0;
  double final_train_loss = 0.0;
  double best_valid_loss = 0.0;
  bool early_stopped = false;
  std::filesystem::path final_checkpoint;
};

/// Adam loop with token-count-weighted gradient accumulation: micro-batch
/// gradients of the nll sum are added up and divided once by the total masked
/// token count, so an accumulated step equals the combined-batch step.
/// Deterministic end-to-end for a fixed seed. A non-finite loss aborts by
/// throwing; previously written checkpoints stay on disk.
template <class T>
TrainResult train_model(Parameters<T>& params, AdamState<T>& adam, i64 start_step,
                        const ExampleStream& train_stream, const std::vector<Batch>& valid_batches,
                        const TrainConfig& tc, const std::filesystem::path& checkpoint_dir,
                        u64 vocab_hash, MetricsLog* log);

/// Mean masked loss over a list of batches (no dropout).
template <class T>
double evaluate_loss(const Parameters<T>& params, const std::vector<Batch>& batches);

/// Teacher-forced greedy next-token accuracy over RESPONSE-masked positions.
template <class T>
double response_token_accuracy(const Parameters<T>& params, const std::vector<Batch>& batches);

}  // namespace dlg
