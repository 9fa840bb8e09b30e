#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlgforge/common.hpp"

namespace dlg {

enum class Precision : u8 { f32 = 0, f64 = 1 };

Precision precision_from_string(const std::string& s);
std::string precision_to_string(Precision p);

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 0;
  int max_seq_len = 64;
  double dropout = 0.1;
  Precision precision = Precision::f64;

  void validate() const;
};

/// Architecture presets. "tiny" and "small" are the desk-scale trainable
/// shapes; "117M-shape" and "345M-shape" mirror the published GPT-2 sizes as
/// config records (12 layers/768 hidden and 24 layers/1024 hidden).
ModelConfig preset_config(const std::string& name);

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;
  size_t size = 0;
};

/// Flat parameter layout in declaration order: wte, wpe, per-layer blocks,
/// final layer norm. The output head is tied to wte.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  size_t total_size() const { return total_; }

  struct Block {
    size_t ln1_g, ln1_b, qkv_w, qkv_b, attn_w, attn_b;
    size_t ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
  };
  size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0;
  std::vector<Block> blocks;

 private:
  std::vector<TensorSpec> tensors_;
  size_t total_ = 0;
};

/// Closed-form parameter count; equals ParamLayout::total_size().
size_t parameter_count(const ModelConfig& cfg);

template <class T>
struct Parameters {
  ModelConfig cfg;
  ParamLayout layout;
  std::vector<T> flat;

  explicit Parameters(const ModelConfig& c) : cfg(c), layout(c), flat(layout.total_size(), T(0)) {}
};

/// Weights ~ N(0, 0.02^2), biases 0, layer-norm gains 1; deterministic per
/// (config, seed).
template <class T>
Parameters<T> init_parameters(const ModelConfig& cfg, u64 seed);

template <class T>
struct LayerActs {
  std::vector<T> ln1_out, ln1_mean, ln1_rstd, qkv, att, att_ctx, att_proj, att_drop;
  std::vector<T> res1, ln2_out, ln2_mean, ln2_rstd, fc, gelu, mlp_proj, mlp_drop, res2;
};

/// Forward/backward workspace. Reused across calls; ensure() resizes.
template <class T>
struct Activations {
  int B = 0, T_ = 0;
  std::vector<i32> pos;
  std::vector<T> emb, emb_drop;
  std::vector<LayerActs<T>> layers;
  std::vector<T> lnf_out, lnf_mean, lnf_rstd, logits, nll, lse;
  std::vector<i32> targets;
  std::vector<T> weights;
  // backward scratch
  std::vector<T> dlogits, d_res, d_a, d_b, d_fc, d_gelu, d_qkv, d_att;

  void ensure(const ModelConfig& cfg, int batch, int seq);
};

/// Runs the transformer; logits land in acts.logits ([B*T, vocab]). Dropout
/// is active only in train mode and is a pure function of dropout_seed.
template <class T>
void model_forward(const Parameters<T>& params, const i32* ids, int B, int T_,
                   bool train_mode, u64 dropout_seed, Activations<T>& acts);

struct LossSums {
  double nll_sum = 0.0;  // nats
  u64 token_count = 0;

  double mean() const { return token_count ? nll_sum / static_cast<double>(token_count) : 0.0; }
};

/// Masked next-token loss on an already-run forward pass: position t is
/// predicted from logits at t-1, weighted by loss_mask[t]; the first position
/// of each row never contributes.
template <class T>
LossSums masked_loss(const Parameters<T>& params, Activations<T>& acts, const i32* ids,
                     const u8* loss_mask, int B, int T_);

/// forward + masked_loss + exact reverse-mode gradients of nll_sum,
/// accumulated (+=) into grad (size = parameter count).
template <class T>
LossSums model_loss_and_grad(const Parameters<T>& params, Activations<T>& acts, const i32* ids,
                             const u8* loss_mask, int B, int T_, bool train_mode,
                             u64 dropout_seed, std::vector<T>& grad);

/// Mean masked loss (nats per masked token). Errors with "nothing to predict"
/// on an all-zero mask.
template <class T>
double batch_mean_loss(const Parameters<T>& params, Activations<T>& acts, const i32* ids,
                       const u8* loss_mask, int B, int T_, bool train_mode = false,
                       u64 dropout_seed = 0);

// ---------------------------------------------------------------------------
// Checkpoints: [u64 header length][JSON header][raw little-endian arrays].
// The header records config, tensor names/shapes/offsets, vocab hash and the
// training step; optimizer moments ride along as adam.m / adam.v tensors.
// ---------------------------------------------------------------------------

struct CheckpointInfo {
  ModelConfig config;
  u64 vocab_hash = 0;
  i64 step = 0;
  bool has_optimizer = false;
  int adam_step = 0;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Parameters<T>& params,
                     u64 vocab_hash, i64 step, const std::vector<T>* adam_m = nullptr,
                     const std::vector<T>* adam_v = nullptr, int adam_step = 0);

CheckpointInfo read_checkpoint_header(const std::filesystem::path& path);

/// expected_vocab_hash == 0 skips the vocabulary guard.
template <class T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, Parameters<T>& params_out,
                               u64 expected_vocab_hash, std::vector<T>* adam_m = nullptr,
                               std::vector<T>* adam_v = nullptr);

/// Single-position decoder with per-layer K/V caches. step() consumes one
/// token and returns the logits row for that position, bit-identical to the
/// corresponding row of a full-sequence eval forward pass.
template <class T>
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const Parameters<T>& params);

  const std::vector<T>& step(i32 token);
  int position() const { return t_; }
  int capacity() const { return p_.cfg.max_seq_len; }
  void reset() { t_ = 0; }

 private:
  const Parameters<T>& p_;
  int t_ = 0;
  std::vector<T> k_cache_, v_cache_;  // [L, max_seq_len, C]
  std::vector<T> x_, branch_, ln_, qkv_, att_, ctx_, fc_, gelu_, logits_;
  std::vector<T> mean1_, rstd1_;
};

}  // namespace dlg
