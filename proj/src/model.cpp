#include "dlgforge/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "dlgforge/kernels.hpp"

namespace dlg {

using json = nlohmann::json;

Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  fail("unknown precision: " + s);
}

std::string precision_to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1) fail("bad model dimensions");
  if (d_model % n_heads != 0) fail("d_model not divisible by n_heads");
  if (max_seq_len < 1) fail("max_seq_len must be >= 1");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
}

ModelConfig preset_config(const std::string& name) {
  ModelConfig c;
  if (name == "tiny") {
    c.n_layers = 2; c.n_heads = 2; c.d_model = 64; c.d_ff = 256;
  } else if (name == "small") {
    c.n_layers = 4; c.n_heads = 4; c.d_model = 128; c.d_ff = 512;
  } else if (name == "117M-shape") {
    c.n_layers = 12; c.n_heads = 12; c.d_model = 768; c.d_ff = 3072;
    c.max_seq_len = 1024;
  } else if (name == "345M-shape") {
    c.n_layers = 24; c.n_heads = 16; c.d_model = 1024; c.d_ff = 4096;
    c.max_seq_len = 1024;
  } else {
    fail("unknown model preset: " + name);
  }
  return c;
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  const int C = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, S = cfg.max_seq_len;
  auto add = [&](const std::string& name, std::vector<int> shape) -> size_t {
    size_t size = 1;
    for (int d : shape) size *= static_cast<size_t>(d);
    size_t offset = total_;
    tensors_.push_back({name, std::move(shape), offset, size});
    total_ += size;
    return offset;
  };
  wte = add("wte", {V, C});
  wpe = add("wpe", {S, C});
  blocks.resize(static_cast<size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string h = "h" + std::to_string(l) + ".";
    Block& b = blocks[static_cast<size_t>(l)];
    b.ln1_g = add(h + "ln1.g", {C});
    b.ln1_b = add(h + "ln1.b", {C});
    b.qkv_w = add(h + "qkv.w", {3 * C, C});
    b.qkv_b = add(h + "qkv.b", {3 * C});
    b.attn_w = add(h + "attn.w", {C, C});
    b.attn_b = add(h + "attn.b", {C});
    b.ln2_g = add(h + "ln2.g", {C});
    b.ln2_b = add(h + "ln2.b", {C});
    b.fc_w = add(h + "fc.w", {F, C});
    b.fc_b = add(h + "fc.b", {F});
    b.proj_w = add(h + "proj.w", {C, F});
    b.proj_b = add(h + "proj.b", {C});
  }
  lnf_g = add("lnf.g", {C});
  lnf_b = add("lnf.b", {C});
}

size_t parameter_count(const ModelConfig& cfg) {
  const size_t C = static_cast<size_t>(cfg.d_model), F = static_cast<size_t>(cfg.d_ff);
  const size_t V = static_cast<size_t>(cfg.vocab_size), S = static_cast<size_t>(cfg.max_seq_len);
  const size_t L = static_cast<size_t>(cfg.n_layers);
  size_t per_layer = 2 * C + (3 * C * C + 3 * C) + (C * C + C) + 2 * C + (C * F + F) + (F * C + C);
  return V * C + S * C + L * per_layer + 2 * C;
}

template <class T>
Parameters<T> init_parameters(const ModelConfig& cfg, u64 seed) {
  cfg.validate();
  Parameters<T> p(cfg);
  Rng rng(hash_mix({seed, 0x1717ull}));
  for (const TensorSpec& t : p.layout.tensors()) {
    T* data = p.flat.data() + t.offset;
    if (t.name.size() >= 2 && t.name.compare(t.name.size() - 2, 2, ".g") == 0) {
      std::fill(data, data + t.size, T(1));
    } else if (t.name.size() >= 2 && t.name.compare(t.name.size() - 2, 2, ".b") == 0) {
      std::fill(data, data + t.size, T(0));
    } else {
      for (size_t i = 0; i < t.size; ++i) data[i] = static_cast<T>(rng.normal() * 0.02);
    }
  }
  return p;
}

template <class T>
void Activations<T>::ensure(const ModelConfig& cfg, int batch, int seq) {
  B = batch;
  T_ = seq;
  const size_t M = static_cast<size_t>(batch) * static_cast<size_t>(seq);
  const size_t C = static_cast<size_t>(cfg.d_model);
  const size_t F = static_cast<size_t>(cfg.d_ff);
  const size_t V = static_cast<size_t>(cfg.vocab_size);
  const size_t A = static_cast<size_t>(batch) * cfg.n_heads * seq * static_cast<size_t>(seq);

  pos.resize(M);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < seq; ++t) pos[static_cast<size_t>(b) * seq + t] = t;

  emb.resize(M * C);
  emb_drop.resize(M * C);
  layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : layers) {
    l.ln1_out.resize(M * C);
    l.ln1_mean.resize(M);
    l.ln1_rstd.resize(M);
    l.qkv.resize(M * 3 * C);
    l.att.resize(A);
    l.att_ctx.resize(M * C);
    l.att_proj.resize(M * C);
    l.att_drop.resize(M * C);
    l.res1.resize(M * C);
    l.ln2_out.resize(M * C);
    l.ln2_mean.resize(M);
    l.ln2_rstd.resize(M);
    l.fc.resize(M * F);
    l.gelu.resize(M * F);
    l.mlp_proj.resize(M * C);
    l.mlp_drop.resize(M * C);
    l.res2.resize(M * C);
  }
  lnf_out.resize(M * C);
  lnf_mean.resize(M);
  lnf_rstd.resize(M);
  logits.resize(M * V);
  nll.resize(M);
  lse.resize(M);
  targets.resize(M);
  weights.resize(M);

  dlogits.resize(M * V);
  d_res.resize(M * C);
  d_a.resize(M * C);
  d_b.resize(M * C);
  d_fc.resize(M * F);
  d_gelu.resize(M * F);
  d_qkv.resize(M * 3 * C);
  d_att.resize(A);
}

namespace {

template <class T>
struct ParamView {
  const T* wte;
  const T* wpe;
  const T* lnf_g;
  const T* lnf_b;
  struct Block {
    const T *ln1_g, *ln1_b, *qkv_w, *qkv_b, *attn_w, *attn_b;
    const T *ln2_g, *ln2_b, *fc_w, *fc_b, *proj_w, *proj_b;
  };
  std::vector<Block> blocks;
};

template <class T>
struct GradView {
  T* wte;
  T* wpe;
  T* lnf_g;
  T* lnf_b;
  struct Block {
    T *ln1_g, *ln1_b, *qkv_w, *qkv_b, *attn_w, *attn_b;
    T *ln2_g, *ln2_b, *fc_w, *fc_b, *proj_w, *proj_b;
  };
  std::vector<Block> blocks;
};

template <class T>
ParamView<T> make_view(const ParamLayout& lay, const T* d) {
  ParamView<T> v;
  v.wte = d + lay.wte;
  v.wpe = d + lay.wpe;
  v.lnf_g = d + lay.lnf_g;
  v.lnf_b = d + lay.lnf_b;
  v.blocks.resize(lay.blocks.size());
  for (size_t l = 0; l < lay.blocks.size(); ++l) {
    const auto& b = lay.blocks[l];
    v.blocks[l] = {d + b.ln1_g, d + b.ln1_b, d + b.qkv_w, d + b.qkv_b, d + b.attn_w,
                   d + b.attn_b, d + b.ln2_g, d + b.ln2_b, d + b.fc_w, d + b.fc_b,
                   d + b.proj_w, d + b.proj_b};
  }
  return v;
}

template <class T>
GradView<T> make_grad_view(const ParamLayout& lay, T* d) {
  GradView<T> v;
  v.wte = d + lay.wte;
  v.wpe = d + lay.wpe;
  v.lnf_g = d + lay.lnf_g;
  v.lnf_b = d + lay.lnf_b;
  v.blocks.resize(lay.blocks.size());
  for (size_t l = 0; l < lay.blocks.size(); ++l) {
    const auto& b = lay.blocks[l];
    v.blocks[l] = {d + b.ln1_g, d + b.ln1_b, d + b.qkv_w, d + b.qkv_b, d + b.attn_w,
                   d + b.attn_b, d + b.ln2_g, d + b.ln2_b, d + b.fc_w, d + b.fc_b,
                   d + b.proj_w, d + b.proj_b};
  }
  return v;
}

// Dropout site tags: 0 = embeddings, then 2 per layer (attn, mlp).
constexpr u64 kSiteEmb = 0;
u64 site_attn(int layer) { return 1 + 2 * static_cast<u64>(layer); }
u64 site_mlp(int layer) { return 2 + 2 * static_cast<u64>(layer); }

}  // namespace

template <class T>
void model_forward(const Parameters<T>& params, const i32* ids, int B, int T_,
                   bool train_mode, u64 dropout_seed, Activations<T>& acts) {
  const ModelConfig& cfg = params.cfg;
  if (T_ < 1 || T_ > cfg.max_seq_len) fail("sequence length out of range");
  const int M = B * T_;
  for (int m = 0; m < M; ++m)
    if (ids[m] < 0 || ids[m] >= cfg.vocab_size) fail("token id out of range");

  acts.ensure(cfg, B, T_);
  const int C = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, NH = cfg.n_heads;
  const size_t MC = static_cast<size_t>(M) * C;
  const bool drop = train_mode && cfg.dropout > 0.0;
  ParamView<T> p = make_view(params.layout, params.flat.data());

  kern::embedding_fwd(acts.emb.data(), p.wte, p.wpe, ids, acts.pos.data(), M, C);
  if (drop)
    kern::dropout_fwd(acts.emb_drop.data(), acts.emb.data(), MC, cfg.dropout, dropout_seed, kSiteEmb);
  else
    std::copy(acts.emb.begin(), acts.emb.end(), acts.emb_drop.begin());

  const T* cur = acts.emb_drop.data();
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& a = acts.layers[static_cast<size_t>(l)];
    const auto& w = p.blocks[static_cast<size_t>(l)];
    kern::layernorm_fwd(a.ln1_out.data(), a.ln1_mean.data(), a.ln1_rstd.data(), cur, w.ln1_g,
                        w.ln1_b, M, C);
    kern::linear_fwd(a.qkv.data(), a.ln1_out.data(), w.qkv_w, w.qkv_b, M, C, 3 * C);
    kern::attention_fwd(a.att_ctx.data(), a.att.data(), a.qkv.data(), B, T_, C, NH);
    kern::linear_fwd(a.att_proj.data(), a.att_ctx.data(), w.attn_w, w.attn_b, M, C, C);
    if (drop)
      kern::dropout_fwd(a.att_drop.data(), a.att_proj.data(), MC, cfg.dropout, dropout_seed,
                        site_attn(l));
    else
      std::copy(a.att_proj.begin(), a.att_proj.end(), a.att_drop.begin());
    std::copy(a.att_drop.begin(), a.att_drop.end(), a.res1.begin());
    kern::add_inplace(a.res1.data(), cur, MC);

    kern::layernorm_fwd(a.ln2_out.data(), a.ln2_mean.data(), a.ln2_rstd.data(), a.res1.data(),
                        w.ln2_g, w.ln2_b, M, C);
    kern::linear_fwd(a.fc.data(), a.ln2_out.data(), w.fc_w, w.fc_b, M, C, F);
    kern::gelu_fwd(a.gelu.data(), a.fc.data(), static_cast<size_t>(M) * F);
    kern::linear_fwd(a.mlp_proj.data(), a.gelu.data(), w.proj_w, w.proj_b, M, F, C);
    if (drop)
      kern::dropout_fwd(a.mlp_drop.data(), a.mlp_proj.data(), MC, cfg.dropout, dropout_seed,
                        site_mlp(l));
    else
      std::copy(a.mlp_proj.begin(), a.mlp_proj.end(), a.mlp_drop.begin());
    std::copy(a.mlp_drop.begin(), a.mlp_drop.end(), a.res2.begin());
    kern::add_inplace(a.res2.data(), a.res1.data(), MC);
    cur = a.res2.data();
  }

  kern::layernorm_fwd(acts.lnf_out.data(), acts.lnf_mean.data(), acts.lnf_rstd.data(), cur,
                      p.lnf_g, p.lnf_b, M, C);
  kern::linear_fwd(acts.logits.data(), acts.lnf_out.data(), p.wte, static_cast<const T*>(nullptr),
                   M, C, V);
}

template <class T>
LossSums masked_loss(const Parameters<T>& params, Activations<T>& acts, const i32* ids,
                     const u8* loss_mask, int B, int T_) {
  const int M = B * T_;
  const int V = params.cfg.vocab_size;
  // Row m = (b, t) carries the prediction of ids[b, t+1]; the last position
  // of each row and every position with mask 0 get weight 0. Position 0 of
  // each row is a target only through its predecessor, so it never
  // contributes as a prediction row; its own mask applies at row (b, -1)
  // which does not exist.
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T_; ++t) {
      size_t m = static_cast<size_t>(b) * T_ + t;
      if (t + 1 < T_) {
        acts.targets[m] = ids[m + 1];
        acts.weights[m] = static_cast<T>(loss_mask[m + 1]);
      } else {
        acts.targets[m] = 0;
        acts.weights[m] = T(0);
      }
    }
  }
  kern::ce_fwd(acts.nll.data(), acts.lse.data(), acts.logits.data(), acts.targets.data(), M, V);
  LossSums sums;
  for (int m = 0; m < M; ++m) {
    if (acts.weights[static_cast<size_t>(m)] != T(0)) {
      sums.nll_sum += static_cast<double>(acts.nll[static_cast<size_t>(m)]);
      sums.token_count += 1;
    }
  }
  if (sums.token_count == 0) fail("nothing to predict");
  return sums;
}

namespace {

/// Finds the first layer whose residual output contains a non-finite value.
template <class T>
[[noreturn]] void report_nonfinite(const Activations<T>& acts) {
  auto finite = [](const std::vector<T>& v) {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  };
  if (!finite(acts.emb_drop)) fail("non-finite loss at layer 0 (embeddings)");
  for (size_t l = 0; l < acts.layers.size(); ++l)
    if (!finite(acts.layers[l].res2))
      fail("non-finite loss at layer " + std::to_string(l));
  fail("non-finite loss at output head");
}

}  // namespace

template <class T>
LossSums model_loss_and_grad(const Parameters<T>& params, Activations<T>& acts, const i32* ids,
                             const u8* loss_mask, int B, int T_, bool train_mode,
                             u64 dropout_seed, std::vector<T>& grad) {
  const ModelConfig& cfg = params.cfg;
  if (grad.size() != params.flat.size()) fail("gradient buffer size mismatch");

  model_forward(params, ids, B, T_, train_mode, dropout_seed, acts);
  LossSums sums = masked_loss(params, acts, ids, loss_mask, B, T_);
  if (!std::isfinite(sums.nll_sum)) report_nonfinite(acts);

  const int M = B * T_, C = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, NH = cfg.n_heads;
  const size_t MC = static_cast<size_t>(M) * C;
  const size_t MF = static_cast<size_t>(M) * F;
  const bool drop = train_mode && cfg.dropout > 0.0;
  ParamView<T> p = make_view(params.layout, params.flat.data());
  GradView<T> g = make_grad_view(params.layout, grad.data());

  kern::ce_bwd(acts.dlogits.data(), acts.logits.data(), acts.lse.data(), acts.targets.data(),
               acts.weights.data(), M, V);

  // Tied head: gradient flows both into lnf_out and into wte.
  std::fill(acts.d_res.begin(), acts.d_res.end(), T(0));
  kern::linear_bwd_input(acts.d_res.data(), acts.dlogits.data(), p.wte, M, C, V);
  kern::linear_bwd_params(g.wte, static_cast<T*>(nullptr), acts.dlogits.data(),
                          acts.lnf_out.data(), M, C, V);

  const T* last = cfg.n_layers > 0 ? acts.layers[static_cast<size_t>(cfg.n_layers - 1)].res2.data()
                                   : acts.emb_drop.data();
  kern::layernorm_bwd_params(g.lnf_g, g.lnf_b, acts.d_res.data(), last, acts.lnf_mean.data(),
                             acts.lnf_rstd.data(), M, C);
  std::fill(acts.d_a.begin(), acts.d_a.end(), T(0));
  kern::layernorm_bwd_input(acts.d_a.data(), acts.d_res.data(), last, acts.lnf_mean.data(),
                            acts.lnf_rstd.data(), p.lnf_g, M, C);
  std::copy(acts.d_a.begin(), acts.d_a.end(), acts.d_res.begin());

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    auto& a = acts.layers[static_cast<size_t>(l)];
    const auto& w = p.blocks[static_cast<size_t>(l)];
    const auto& gw = g.blocks[static_cast<size_t>(l)];
    const T* x_in = l > 0 ? acts.layers[static_cast<size_t>(l - 1)].res2.data()
                          : acts.emb_drop.data();

    // MLP branch: res2 = res1 + dropout(proj(gelu(fc(ln2(res1)))))
    if (drop)
      kern::dropout_bwd(acts.d_a.data(), acts.d_res.data(), MC, cfg.dropout, dropout_seed,
                        site_mlp(l));
    else
      std::copy(acts.d_res.begin(), acts.d_res.end(), acts.d_a.begin());
    kern::linear_bwd_params(gw.proj_w, gw.proj_b, acts.d_a.data(), a.gelu.data(), M, F, C);
    std::fill(acts.d_gelu.begin(), acts.d_gelu.end(), T(0));
    kern::linear_bwd_input(acts.d_gelu.data(), acts.d_a.data(), w.proj_w, M, F, C);
    std::fill(acts.d_fc.begin(), acts.d_fc.end(), T(0));
    kern::gelu_bwd(acts.d_fc.data(), a.fc.data(), acts.d_gelu.data(), MF);
    kern::linear_bwd_params(gw.fc_w, gw.fc_b, acts.d_fc.data(), a.ln2_out.data(), M, C, F);
    std::fill(acts.d_a.begin(), acts.d_a.end(), T(0));
    kern::linear_bwd_input(acts.d_a.data(), acts.d_fc.data(), w.fc_w, M, C, F);
    kern::layernorm_bwd_params(gw.ln2_g, gw.ln2_b, acts.d_a.data(), a.res1.data(),
                               a.ln2_mean.data(), a.ln2_rstd.data(), M, C);
    kern::layernorm_bwd_input(acts.d_res.data(), acts.d_a.data(), a.res1.data(),
                              a.ln2_mean.data(), a.ln2_rstd.data(), w.ln2_g, M, C);

    // Attention branch: res1 = x + dropout(proj(attn(qkv(ln1(x)))))
    if (drop)
      kern::dropout_bwd(acts.d_a.data(), acts.d_res.data(), MC, cfg.dropout, dropout_seed,
                        site_attn(l));
    else
      std::copy(acts.d_res.begin(), acts.d_res.end(), acts.d_a.begin());
    kern::linear_bwd_params(gw.attn_w, gw.attn_b, acts.d_a.data(), a.att_ctx.data(), M, C, C);
    std::fill(acts.d_b.begin(), acts.d_b.end(), T(0));
    kern::linear_bwd_input(acts.d_b.data(), acts.d_a.data(), w.attn_w, M, C, C);
    std::fill(acts.d_qkv.begin(), acts.d_qkv.end(), T(0));
    kern::attention_bwd(acts.d_qkv.data(), acts.d_att.data(), acts.d_b.data(), a.qkv.data(),
                        a.att.data(), B, T_, C, NH);
    kern::linear_bwd_params(gw.qkv_w, gw.qkv_b, acts.d_qkv.data(), a.ln1_out.data(), M, C, 3 * C);
    std::fill(acts.d_a.begin(), acts.d_a.end(), T(0));
    kern::linear_bwd_input(acts.d_a.data(), acts.d_qkv.data(), w.qkv_w, M, C, 3 * C);
    kern::layernorm_bwd_params(gw.ln1_g, gw.ln1_b, acts.d_a.data(), x_in, a.ln1_mean.data(),
                               a.ln1_rstd.data(), M, C);
    kern::layernorm_bwd_input(acts.d_res.data(), acts.d_a.data(), x_in, a.ln1_mean.data(),
                              a.ln1_rstd.data(), w.ln1_g, M, C);
  }

  if (drop) {
    kern::dropout_bwd(acts.d_a.data(), acts.d_res.data(), MC, cfg.dropout, dropout_seed, kSiteEmb);
    kern::embedding_bwd(g.wte, g.wpe, acts.d_a.data(), ids, acts.pos.data(), M, C);
  } else {
    kern::embedding_bwd(g.wte, g.wpe, acts.d_res.data(), ids, acts.pos.data(), M, C);
  }
  return sums;
}

template <class T>
double batch_mean_loss(const Parameters<T>& params, Activations<T>& acts, const i32* ids,
                       const u8* loss_mask, int B, int T_, bool train_mode, u64 dropout_seed) {
  model_forward(params, ids, B, T_, train_mode, dropout_seed, acts);
  return masked_loss(params, acts, ids, loss_mask, B, T_).mean();
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format requires a little-endian host");

json config_to_json(const ModelConfig& c) {
  json j;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["dropout"] = c.dropout;
  j["precision"] = precision_to_string(c.precision);
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.precision = precision_from_string(j.at("precision").get<std::string>());
  return c;
}

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Parameters<T>& params,
                     u64 vocab_hash, i64 step, const std::vector<T>* adam_m,
                     const std::vector<T>* adam_v, int adam_step) {
  json header;
  header["format"] = "dlgforge.ckpt";
  header["version"] = 1;
  header["config"] = config_to_json(params.cfg);
  header["vocab_hash"] = to_hex64(vocab_hash);
  header["step"] = step;

  json tensors = json::array();
  size_t data_bytes = 0;
  for (const TensorSpec& t : params.layout.tensors()) {
    json jt;
    jt["name"] = t.name;
    jt["shape"] = t.shape;
    jt["offset"] = data_bytes;
    jt["dtype"] = dtype_name<T>();
    tensors.push_back(jt);
    data_bytes += t.size * sizeof(T);
  }
  const bool with_optimizer = adam_m != nullptr && adam_v != nullptr;
  if (with_optimizer) {
    for (const char* name : {"adam.m", "adam.v"}) {
      json jt;
      jt["name"] = name;
      jt["shape"] = {static_cast<i64>(params.flat.size())};
      jt["offset"] = data_bytes;
      jt["dtype"] = dtype_name<T>();
      tensors.push_back(jt);
      data_bytes += params.flat.size() * sizeof(T);
    }
    header["optimizer"] = {{"adam_step", adam_step}};
  }
  header["tensors"] = tensors;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file: " + path.string());
  std::string h = header.dump();
  u64 hlen = h.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(params.flat.data()),
            static_cast<std::streamsize>(params.flat.size() * sizeof(T)));
  if (with_optimizer) {
    out.write(reinterpret_cast<const char*>(adam_m->data()),
              static_cast<std::streamsize>(adam_m->size() * sizeof(T)));
    out.write(reinterpret_cast<const char*>(adam_v->data()),
              static_cast<std::streamsize>(adam_v->size() * sizeof(T)));
  }
  if (!out) fail("write failed: " + path.string());
}

CheckpointInfo read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file: " + path.string());
  u64 hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail("truncated checkpoint header: " + path.string());
  json header = json::parse(h);
  CheckpointInfo info;
  info.config = config_from_json(header.at("config"));
  info.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
  info.step = header.at("step").get<i64>();
  info.has_optimizer = header.contains("optimizer");
  if (info.has_optimizer) info.adam_step = header.at("optimizer").at("adam_step").get<int>();
  return info;
}

template <class T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, Parameters<T>& params_out,
                               u64 expected_vocab_hash, std::vector<T>* adam_m,
                               std::vector<T>* adam_v) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file: " + path.string());
  u64 hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail("truncated checkpoint header: " + path.string());
  json header = json::parse(h);

  CheckpointInfo info;
  info.config = config_from_json(header.at("config"));
  info.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
  info.step = header.at("step").get<i64>();
  info.has_optimizer = header.contains("optimizer");
  if (info.has_optimizer) info.adam_step = header.at("optimizer").at("adam_step").get<int>();

  if (expected_vocab_hash != 0 && info.vocab_hash != expected_vocab_hash) fail("vocab mismatch");
  if ((info.config.precision == Precision::f32) != (sizeof(T) == 4))
    fail("checkpoint precision mismatch");

  Parameters<T> params(info.config);
  const std::streampos data_start = in.tellg();
  size_t expect = 0;
  for (const auto& jt : header.at("tensors")) {
    std::string name = jt.at("name").get<std::string>();
    size_t offset = jt.at("offset").get<size_t>();
    if (name == "adam.m" || name == "adam.v") {
      std::vector<T>* dst = name == "adam.m" ? adam_m : adam_v;
      if (!dst) continue;
      dst->resize(params.flat.size());
      in.seekg(data_start + static_cast<std::streamoff>(offset));
      in.read(reinterpret_cast<char*>(dst->data()),
              static_cast<std::streamsize>(dst->size() * sizeof(T)));
    } else {
      if (offset != expect * sizeof(T)) fail("unexpected tensor offset in checkpoint");
      size_t size = 1;
      for (i64 d : jt.at("shape").get<std::vector<i64>>()) size *= static_cast<size_t>(d);
      in.seekg(data_start + static_cast<std::streamoff>(offset));
      in.read(reinterpret_cast<char*>(params.flat.data() + expect),
              static_cast<std::streamsize>(size * sizeof(T)));
      expect += size;
    }
    if (!in) fail("truncated checkpoint data: " + path.string());
  }
  if (expect != params.flat.size()) fail("checkpoint tensor set incomplete");
  params_out = std::move(params);
  return info;
}

// ---------------------------------------------------------------------------
// Incremental decoder
// ---------------------------------------------------------------------------

template <class T>
IncrementalDecoder<T>::IncrementalDecoder(const Parameters<T>& params) : p_(params) {
  const size_t L = static_cast<size_t>(p_.cfg.n_layers);
  const size_t S = static_cast<size_t>(p_.cfg.max_seq_len);
  const size_t C = static_cast<size_t>(p_.cfg.d_model);
  k_cache_.assign(L * S * C, T(0));
  v_cache_.assign(L * S * C, T(0));
  x_.resize(C);
  branch_.resize(C);
  ln_.resize(C);
  qkv_.resize(3 * C);
  att_.resize(S);
  ctx_.resize(C);
  fc_.resize(static_cast<size_t>(p_.cfg.d_ff));
  gelu_.resize(static_cast<size_t>(p_.cfg.d_ff));
  logits_.resize(static_cast<size_t>(p_.cfg.vocab_size));
  mean1_.resize(1);
  rstd1_.resize(1);
}

template <class T>
const std::vector<T>& IncrementalDecoder<T>::step(i32 token) {
  const ModelConfig& cfg = p_.cfg;
  if (t_ >= cfg.max_seq_len) fail("decoder past max sequence length");
  if (token < 0 || token >= cfg.vocab_size) fail("token id out of range");
  const int C = cfg.d_model, F = cfg.d_ff, NH = cfg.n_heads;
  const int HS = C / NH;
  const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(HS));
  const size_t S = static_cast<size_t>(cfg.max_seq_len);
  ParamView<T> p = make_view(p_.layout, p_.flat.data());

  const i32 pos = t_;
  kern_ref::embedding_fwd(x_.data(), p.wte, p.wpe, &token, &pos, 1, C);

  T* ln = ln_.data();
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = p.blocks[static_cast<size_t>(l)];
    T* kc = k_cache_.data() + (static_cast<size_t>(l) * S + static_cast<size_t>(t_)) * C;
    T* vc = v_cache_.data() + (static_cast<size_t>(l) * S + static_cast<size_t>(t_)) * C;

    kern_ref::layernorm_fwd(ln, mean1_.data(), rstd1_.data(), x_.data(), w.ln1_g, w.ln1_b, 1, C);
    kern_ref::linear_fwd(qkv_.data(), ln, w.qkv_w, w.qkv_b, 1, C, 3 * C);
    std::copy(qkv_.begin() + C, qkv_.begin() + 2 * C, kc);
    std::copy(qkv_.begin() + 2 * C, qkv_.begin() + 3 * C, vc);

    // Mirrors kern::attention_fwd row (b, h, t) exactly.
    for (int h = 0; h < NH; ++h) {
      const T* q = qkv_.data() + h * HS;
      T maxv = static_cast<T>(-1e30);
      for (int j = 0; j <= t_; ++j) {
        const T* kj = k_cache_.data() + (static_cast<size_t>(l) * S + static_cast<size_t>(j)) * C + h * HS;
        T dot = 0;
        for (int c = 0; c < HS; ++c) dot += q[c] * kj[c];
        dot *= scale;
        att_[static_cast<size_t>(j)] = dot;
        if (dot > maxv) maxv = dot;
      }
      T sum = 0;
      for (int j = 0; j <= t_; ++j) {
        T e = std::exp(att_[static_cast<size_t>(j)] - maxv);
        att_[static_cast<size_t>(j)] = e;
        sum += e;
      }
      T inv = static_cast<T>(1) / sum;
      for (int j = 0; j <= t_; ++j) att_[static_cast<size_t>(j)] *= inv;
      T* o = ctx_.data() + h * HS;
      for (int c = 0; c < HS; ++c) {
        T acc = 0;
        for (int j = 0; j <= t_; ++j) {
          const T* vj = v_cache_.data() + (static_cast<size_t>(l) * S + static_cast<size_t>(j)) * C + h * HS;
          acc += att_[static_cast<size_t>(j)] * vj[c];
        }
        o[c] = acc;
      }
    }
    kern_ref::linear_fwd(branch_.data(), ctx_.data(), w.attn_w, w.attn_b, 1, C, C);
    kern_ref::add_inplace(x_.data(), branch_.data(), static_cast<size_t>(C));

    kern_ref::layernorm_fwd(ln, mean1_.data(), rstd1_.data(), x_.data(), w.ln2_g, w.ln2_b, 1, C);
    kern_ref::linear_fwd(fc_.data(), ln, w.fc_w, w.fc_b, 1, C, F);
    kern_ref::gelu_fwd(gelu_.data(), fc_.data(), static_cast<size_t>(F));
    kern_ref::linear_fwd(branch_.data(), gelu_.data(), w.proj_w, w.proj_b, 1, F, C);
    kern_ref::add_inplace(x_.data(), branch_.data(), static_cast<size_t>(C));
  }

  kern_ref::layernorm_fwd(ln, mean1_.data(), rstd1_.data(), x_.data(), p.lnf_g, p.lnf_b, 1, C);
  kern_ref::linear_fwd(logits_.data(), ln, p.wte, static_cast<const T*>(nullptr), 1, C,
                       cfg.vocab_size);
  ++t_;
  return logits_;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template Parameters<float> init_parameters<float>(const ModelConfig&, u64);
template Parameters<double> init_parameters<double>(const ModelConfig&, u64);
template struct Activations<float>;
template struct Activations<double>;
template void model_forward<float>(const Parameters<float>&, const i32*, int, int, bool, u64,
                                   Activations<float>&);
template void model_forward<double>(const Parameters<double>&, const i32*, int, int, bool, u64,
                                    Activations<double>&);
template LossSums masked_loss<float>(const Parameters<float>&, Activations<float>&, const i32*,
                                     const u8*, int, int);
template LossSums masked_loss<double>(const Parameters<double>&, Activations<double>&, const i32*,
                                      const u8*, int, int);
template LossSums model_loss_and_grad<float>(const Parameters<float>&, Activations<float>&,
                                             const i32*, const u8*, int, int, bool, u64,
                                             std::vector<float>&);
template LossSums model_loss_and_grad<double>(const Parameters<double>&, Activations<double>&,
                                              const i32*, const u8*, int, int, bool, u64,
                                              std::vector<double>&);
template double batch_mean_loss<float>(const Parameters<float>&, Activations<float>&, const i32*,
                                       const u8*, int, int, bool, u64);
template double batch_mean_loss<double>(const Parameters<double>&, Activations<double>&,
                                        const i32*, const u8*, int, int, bool, u64);
template void save_checkpoint<float>(const std::filesystem::path&, const Parameters<float>&, u64,
                                     i64, const std::vector<float>*, const std::vector<float>*,
                                     int);
template void save_checkpoint<double>(const std::filesystem::path&, const Parameters<double>&,
                                      u64, i64, const std::vector<double>*,
                                      const std::vector<double>*, int);
template CheckpointInfo load_checkpoint<float>(const std::filesystem::path&, Parameters<float>&,
                                               u64, std::vector<float>*, std::vector<float>*);
template CheckpointInfo load_checkpoint<double>(const std::filesystem::path&, Parameters<double>&,
                                                u64, std::vector<double>*, std::vector<double>*);
template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;

}  // namespace dlg
