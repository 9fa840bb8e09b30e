#include "dlgforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dlgforge/kernels.hpp"

namespace dlg {

void TrainConfig::validate() const {
  if (learning_rate <= 0) fail("learning_rate must be positive");
  if (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1)
    fail("adam betas must be in (0,1)");
  if (adam_eps <= 0) fail("adam_eps must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (accumulation_steps < 1) fail("accumulation_steps must be >= 1");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (grad_clip_norm < 0) fail("grad_clip_norm must be >= 0");
  if (patience < 1) fail("patience must be >= 1");
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary);
  if (!out_) fail("cannot write file: " + path.string());
  out_ << "step,split,loss_nats,perplexity\n";
}

void MetricsLog::record(i64 step, const std::string& split, double loss_nats) {
  out_ << step << ',' << split << ',' << fmt_double(loss_nats) << ','
       << fmt_double(std::exp(loss_nats)) << '\n';
  out_.flush();
}

template <class T>
double evaluate_loss(const Parameters<T>& params, const std::vector<Batch>& batches) {
  Activations<T> acts;
  double nll_sum = 0;
  u64 count = 0;
  for (const Batch& b : batches) {
    model_forward(params, b.ids.data(), b.batch_size, b.seq_len, false, 0, acts);
    LossSums s = masked_loss(params, acts, b.ids.data(), b.loss_mask.data(), b.batch_size, b.seq_len);
    nll_sum += s.nll_sum;
    count += s.token_count;
  }
  if (count == 0) fail("nothing to predict");
  return nll_sum / static_cast<double>(count);
}

template <class T>
double response_token_accuracy(const Parameters<T>& params, const std::vector<Batch>& batches) {
  Activations<T> acts;
  u64 correct = 0, total = 0;
  const int V = params.cfg.vocab_size;
  for (const Batch& b : batches) {
    model_forward(params, b.ids.data(), b.batch_size, b.seq_len, false, 0, acts);
    for (int r = 0; r < b.batch_size; ++r) {
      for (int t = 1; t < b.seq_len; ++t) {
        size_t m = static_cast<size_t>(r) * b.seq_len + t;
        if (b.segments[m] != static_cast<u8>(Segment::response)) continue;
        const T* row = acts.logits.data() + (m - 1) * static_cast<size_t>(V);
        int argmax = 0;
        for (int v = 1; v < V; ++v)
          if (row[v] > row[argmax]) argmax = v;
        if (argmax == b.ids[m]) ++correct;
        ++total;
      }
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

template <class T>
TrainResult train_model(Parameters<T>& params, AdamState<T>& adam, i64 start_step,
                        const ExampleStream& train_stream, const std::vector<Batch>& valid_batches,
                        const TrainConfig& tc, const std::filesystem::path& checkpoint_dir,
                        u64 vocab_hash, MetricsLog* log) {
  tc.validate();
  const size_t P = params.flat.size();
  if (adam.m.size() != P) adam = AdamState<T>(P);

  Activations<T> acts;
  std::vector<T> grad(P, T(0));
  TrainResult result;
  result.best_valid_loss = std::numeric_limits<double>::infinity();
  int stale_evals = 0;

  auto save_to = [&](const std::string& name, i64 step) -> std::filesystem::path {
    if (checkpoint_dir.empty()) return {};
    std::filesystem::path p = checkpoint_dir / name;
    save_checkpoint(p, params, vocab_hash, step, &adam.m, &adam.v, adam.step);
    return p;
  };

  i64 micro_index = start_step * tc.accumulation_steps;
  double train_loss = 0;
  for (i64 step = start_step + 1; step <= tc.max_steps; ++step) {
    std::fill(grad.begin(), grad.end(), T(0));
    double nll_sum = 0;
    u64 token_count = 0;
    for (int micro = 0; micro < tc.accumulation_steps; ++micro) {
      Batch b = train_stream.batch(static_cast<size_t>(micro_index++));
      u64 dropout_seed = hash_mix({tc.seed, 0xD409ull, static_cast<u64>(step), static_cast<u64>(micro)});
      LossSums s = model_loss_and_grad(params, acts, b.ids.data(), b.loss_mask.data(),
                                       b.batch_size, b.seq_len, true, dropout_seed, grad);
      nll_sum += s.nll_sum;
      token_count += s.token_count;
    }
    kern::scale_inplace(grad.data(), P, static_cast<T>(1.0 / static_cast<double>(token_count)));

    if (tc.grad_clip_norm > 0) {
      double norm = std::sqrt(kern::sum_squares(grad.data(), P));
      if (norm > tc.grad_clip_norm)
        kern::scale_inplace(grad.data(), P, static_cast<T>(tc.grad_clip_norm / norm));
    }

    double lr = tc.learning_rate;
    if (tc.warmup_steps > 0 && step <= tc.warmup_steps)
      lr *= static_cast<double>(step) / static_cast<double>(tc.warmup_steps);

    adam.step += 1;
    kern::adam_update(params.flat.data(), grad.data(), adam.m.data(), adam.v.data(), P, lr,
                      tc.adam_beta1, tc.adam_beta2, tc.adam_eps, adam.step);

    train_loss = nll_sum / static_cast<double>(token_count);
    result.steps_done = step;
    result.final_train_loss = train_loss;
    if (log) log->record(step, "train", train_loss);

    if (tc.eval_every > 0 && step % tc.eval_every == 0 && !valid_batches.empty()) {
      double vloss = evaluate_loss(params, valid_batches);
      if (log) log->record(step, "valid", vloss);
      if (vloss < result.best_valid_loss * (1.0 - tc.min_improvement)) {
        result.best_valid_loss = vloss;
        stale_evals = 0;
      } else {
        result.best_valid_loss = std::min(result.best_valid_loss, vloss);
        ++stale_evals;
      }
      if (stale_evals >= tc.patience) {
        result.early_stopped = true;
        char name[64];
        std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(step));
        if (tc.checkpoint_every > 0) save_to(name, step);
        break;
      }
    }

    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(step));
      save_to(name, step);
    }
  }

  result.final_checkpoint = save_to("last.ckpt", result.steps_done == 0 ? start_step : result.steps_done);
  return result;
}

template double evaluate_loss<float>(const Parameters<float>&, const std::vector<Batch>&);
template double evaluate_loss<double>(const Parameters<double>&, const std::vector<Batch>&);
template double response_token_accuracy<float>(const Parameters<float>&, const std::vector<Batch>&);
template double response_token_accuracy<double>(const Parameters<double>&, const std::vector<Batch>&);
template TrainResult train_model<float>(Parameters<float>&, AdamState<float>&, i64,
                                        const ExampleStream&, const std::vector<Batch>&,
                                        const TrainConfig&, const std::filesystem::path&, u64,
                                        MetricsLog*);
template TrainResult train_model<double>(Parameters<double>&, AdamState<double>&, i64,
                                         const ExampleStream&, const std::vector<Batch>&,
                                         const TrainConfig&, const std::filesystem::path&, u64,
                                         MetricsLog*);

}  // namespace dlg
