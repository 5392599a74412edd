#pragma once

#include <string>
#include <utility>
#include <vector>

#include "csvt/ops.hpp"
#include "csvt/random.hpp"
#include "csvt/tensor.hpp"

namespace csvt {

struct CsvtConfig {
  int image_size = 224;
  int patch_size = 8;
  int embed_dim = 384;
  int num_layers = 12;
  int num_heads = 4;
  double mlp_ratio = 4.0;
  int num_classes = 4;
  bool class_token_last_block = true;

  double ln_eps = 1e-5;
  double bn_eps = 1e-5;
  double l2_eps = 1e-12;

  int grid(int size) const { return size / patch_size; }
  int tokens(int size) const { return grid(size) * grid(size); }
  int head_dim() const { return embed_dim / num_heads; }
  int mlp_hidden() const { return int(mlp_ratio * embed_dim); }

  void validate() const {
    if (patch_size < 1 || image_size < patch_size || image_size % patch_size != 0)
      throw std::invalid_argument("csvt: image_size must be a positive multiple of patch_size");
    if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
      throw std::invalid_argument("csvt: embed_dim must be divisible by num_heads");
    if (num_layers < 1) throw std::invalid_argument("csvt: num_layers must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("csvt: num_classes must be >= 2");
    if (mlp_hidden() < 1) throw std::invalid_argument("csvt: mlp_ratio too small");
  }
};

template <class T>
struct LayerNormParams {
  Tensor<T> gamma, beta;
};

template <class T>
struct CsvtBlock {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // d x d projections + biases
  Tensor<T> log_tau;                         // per-head temperature, exp() on use
  LayerNormParams<T> ln_attn;
  Tensor<T> sib_conv1, sib_conv2;            // 3 x 3 x d depthwise kernels
  Tensor<T> bn_gamma, bn_beta;
  Tensor<T> bn_running_mean, bn_running_var;  // buffers
  LayerNormParams<T> ln_sib;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
  LayerNormParams<T> ln_mlp;
};

// Per-sample batch statistics reported out of a training forward; the caller
// folds them into the running buffers in a deterministic order.
template <class T>
struct BnBatchStats {
  std::vector<std::vector<T>> means, vars;  // one entry per block, biased var
};

template <class T>
struct ForwardResult {
  Tensor<T> logits;       // [num_classes]
  Tensor<T> last_tokens;  // patch tokens after the final block, [n x d]
};

enum class AttentionVariant { kChannel, kGram };

template <class T>
class CsvtModel {
 public:
  CsvtModel() = default;

  CsvtModel(const CsvtConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.embed_dim;
    const int hid = cfg_.mlp_hidden();
    patch_w_ = init_weight({cfg_.patch_size * cfg_.patch_size * 3, d}, rng);
    patch_b_ = Tensor<T>({d});
    blocks_.resize(size_t(cfg_.num_layers));
    for (auto& blk : blocks_) {
      blk.wq = init_weight({d, d}, rng);
      blk.bq = Tensor<T>({d});
      blk.wk = init_weight({d, d}, rng);
      blk.bk = Tensor<T>({d});
      blk.wv = init_weight({d, d}, rng);
      blk.bv = Tensor<T>({d});
      blk.wo = init_weight({d, d}, rng);
      blk.bo = Tensor<T>({d});
      blk.log_tau = Tensor<T>({cfg_.num_heads});  // tau = 1 at init
      blk.ln_attn = {Tensor<T>::full({d}, T(1)), Tensor<T>({d})};
      blk.sib_conv1 = init_weight({3, 3, d}, rng);
      blk.sib_conv2 = init_weight({3, 3, d}, rng);
      blk.bn_gamma = Tensor<T>::full({d}, T(1));
      blk.bn_beta = Tensor<T>({d});
      blk.bn_running_mean = Tensor<T>({d});
      blk.bn_running_var = Tensor<T>::full({d}, T(1));
      blk.ln_sib = {Tensor<T>::full({d}, T(1)), Tensor<T>({d})};
      blk.fc1_w = init_weight({d, hid}, rng);
      blk.fc1_b = Tensor<T>({hid});
      blk.fc2_w = init_weight({hid, d}, rng);
      blk.fc2_b = Tensor<T>({d});
      blk.ln_mlp = {Tensor<T>::full({d}, T(1)), Tensor<T>({d})};
    }
    class_token_ = init_weight({d}, rng);
    head_w_ = init_weight({d, cfg_.num_classes}, rng);
    head_b_ = Tensor<T>({cfg_.num_classes});
  }

  const CsvtConfig& config() const { return cfg_; }
  std::vector<CsvtBlock<T>>& blocks() { return blocks_; }
  const std::vector<CsvtBlock<T>>& blocks() const { return blocks_; }
  Tensor<T>& patch_weight() { return patch_w_; }
  Tensor<T>& patch_bias() { return patch_b_; }
  Tensor<T>& class_token() { return class_token_; }
  Tensor<T>& head_weight() { return head_w_; }
  Tensor<T>& head_bias() { return head_b_; }

  std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    visit(*this, [&out](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
    return out;
  }
  std::vector<std::pair<std::string, const Tensor<T>*>> named_params() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    visit(const_cast<CsvtModel&>(*this),
          [&out](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
    return out;
  }
  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (size_t i = 0; i < blocks_.size(); ++i) {
      out.emplace_back(block_prefix(i) + ".sib.bn.running_mean", &blocks_[i].bn_running_mean);
      out.emplace_back(block_prefix(i) + ".sib.bn.running_var", &blocks_[i].bn_running_var);
    }
    return out;
  }
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() {
    auto out = named_params();
    for (auto& [name, t] : named_buffers()) out.emplace_back(name, t);
    return out;
  }

  size_t num_params() const {
    size_t n = 0;
    for (const auto& [name, t] : named_params()) n += t->numel();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : named_params()) t->set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& [name, t] : named_params()) t->zero_grad();
  }

  CsvtModel deep_copy() const {
    CsvtModel m = *this;
    auto src = const_cast<CsvtModel&>(*this).named_state();
    auto dst = m.named_state();
    for (size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->deep_copy();
    return m;
  }

  // Same storage, worker-private grads; BN buffers stay shared (training
  // forwards never touch them).
  CsvtModel shared_copy_fresh_grads() const {
    CsvtModel m = *this;
    auto src = const_cast<CsvtModel&>(*this).named_params();
    auto dst = m.named_params();
    for (size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->shared_data_fresh_grad();
    return m;
  }

  ForwardResult<T> forward(const Tensor<T>& image, bool train, BnBatchStats<T>* stats = nullptr,
                           AttentionVariant variant = AttentionVariant::kChannel) const;

 private:
  static std::string block_prefix(size_t i) { return "block" + std::to_string(i); }

  Tensor<T> init_weight(Shape shape, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values_mut()) v = static_cast<T>(rng.truncated_normal(0.02));
    return t;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("patch_embed.weight", self.patch_w_);
    f("patch_embed.bias", self.patch_b_);
    for (size_t i = 0; i < self.blocks_.size(); ++i) {
      auto& blk = self.blocks_[i];
      const std::string p = block_prefix(i);
      f(p + ".wq", blk.wq);
      f(p + ".bq", blk.bq);
      f(p + ".wk", blk.wk);
      f(p + ".bk", blk.bk);
      f(p + ".wv", blk.wv);
      f(p + ".bv", blk.bv);
      f(p + ".wo", blk.wo);
      f(p + ".bo", blk.bo);
      f(p + ".log_tau", blk.log_tau);
      f(p + ".ln_attn.gamma", blk.ln_attn.gamma);
      f(p + ".ln_attn.beta", blk.ln_attn.beta);
      f(p + ".sib.conv1", blk.sib_conv1);
      f(p + ".sib.conv2", blk.sib_conv2);
      f(p + ".sib.bn.gamma", blk.bn_gamma);
      f(p + ".sib.bn.beta", blk.bn_beta);
      f(p + ".ln_sib.gamma", blk.ln_sib.gamma);
      f(p + ".ln_sib.beta", blk.ln_sib.beta);
      f(p + ".mlp.fc1.weight", blk.fc1_w);
      f(p + ".mlp.fc1.bias", blk.fc1_b);
      f(p + ".mlp.fc2.weight", blk.fc2_w);
      f(p + ".mlp.fc2.bias", blk.fc2_b);
      f(p + ".ln_mlp.gamma", blk.ln_mlp.gamma);
      f(p + ".ln_mlp.beta", blk.ln_mlp.beta);
    }
    f("class_token", self.class_token_);
    f("head.weight", self.head_w_);
    f("head.bias", self.head_b_);
  }

  CsvtConfig cfg_;
  Tensor<T> patch_w_, patch_b_;
  std::vector<CsvtBlock<T>> blocks_;
  Tensor<T> class_token_;
  Tensor<T> head_w_, head_b_;
};

// ------------------------------------------------------------ components

// Row i is the flattened patch i (row-major patches, row-major pixels,
// channel-last) through the shared linear projection. No positional
// embedding is added anywhere; token count may vary between calls.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& image, const Tensor<T>& proj_w, const Tensor<T>& proj_b, int patch) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw std::invalid_argument("patch_embed: image must be h x w x 3");
  const int h = image.dim(0), w = image.dim(1);
  if (h % patch != 0 || w % patch != 0)
    throw std::invalid_argument("patch_embed: image " + std::to_string(w) + "x" + std::to_string(h) +
                                " not divisible by patch size " + std::to_string(patch));
  const int gh = h / patch, gw = w / patch;
  const int n = gh * gw, pd = patch * patch * 3;
  Tensor<T> patches({n, pd});
  auto& out = patches.values_mut();
  for (int pi = 0; pi < gh; ++pi)
    for (int pj = 0; pj < gw; ++pj) {
      T* row = out.data() + (size_t(pi) * gw + pj) * pd;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c)
            row[(size_t(y) * patch + x) * 3 + c] =
                image[(size_t(pi * patch + y) * w + (pj * patch + x)) * 3 + c];
    }
  return add_row_bias(matmul(patches, proj_w), proj_b);
}

// Channel attention: per head, the d/h x d/h cross-covariance of the
// column-normalized K and Q slices gates a convex mix of V's channels.
template <class T>
Tensor<T> cba_attention(const Tensor<T>& x, const CsvtBlock<T>& blk, int num_heads, T l2_eps) {
  const int d = x.dim(1);
  if (num_heads < 1 || d % num_heads != 0)
    throw std::invalid_argument("cba_attention: width not divisible into heads");
  const int dh = d / num_heads;
  auto q = add_row_bias(matmul(x, blk.wq), blk.bq);
  auto k = add_row_bias(matmul(x, blk.wk), blk.bk);
  auto v = add_row_bias(matmul(x, blk.wv), blk.bv);
  std::vector<Tensor<T>> heads;
  heads.reserve(size_t(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    auto qh = l2_normalize_cols(slice_cols(q, h * dh, (h + 1) * dh), l2_eps);
    auto kh = l2_normalize_cols(slice_cols(k, h * dh, (h + 1) * dh), l2_eps);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto cov = matmul(transpose(kh), qh);                           // dh x dh cosines
    auto attn = softmax_rows(scale_by_exp_neg(cov, blk.log_tau, h));  // row-stochastic
    heads.push_back(matmul(vh, transpose(attn)));
  }
  return add_row_bias(matmul(concat_cols(heads), blk.wo), blk.bo);
}

// Quadratic-baseline kernel: token-by-token scaled dot-product attention on
// the same projections. Used only by the scaling harness.
template <class T>
Tensor<T> gram_attention(const Tensor<T>& x, const CsvtBlock<T>& blk, int num_heads) {
  const int d = x.dim(1);
  if (num_heads < 1 || d % num_heads != 0)
    throw std::invalid_argument("gram_attention: width not divisible into heads");
  const int dh = d / num_heads;
  auto q = add_row_bias(matmul(x, blk.wq), blk.bq);
  auto k = add_row_bias(matmul(x, blk.wk), blk.bk);
  auto v = add_row_bias(matmul(x, blk.wv), blk.bv);
  std::vector<Tensor<T>> heads;
  heads.reserve(size_t(num_heads));
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  for (int h = 0; h < num_heads; ++h) {
    auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));  // n x n
    heads.push_back(matmul(attn, vh));
  }
  return add_row_bias(matmul(concat_cols(heads), blk.wo), blk.bo);
}

template <class T>
Tensor<T> cba_forward(const Tensor<T>& x, const CsvtBlock<T>& blk, int num_heads, T l2_eps, T ln_eps) {
  return layer_norm(add(cba_attention(x, blk, num_heads, l2_eps), x), blk.ln_attn.gamma, blk.ln_attn.beta, ln_eps);
}

// conv_dw -> BN -> ReLU -> conv_dw on the gh x gw token grid, residual, LN.
// The caller excludes a class token before the reshape.
template <class T>
Tensor<T> sib_forward(const Tensor<T>& x, const CsvtBlock<T>& blk, int gh, int gw, bool train,
                      std::vector<T>* stat_mean, std::vector<T>* stat_var, T bn_eps, T ln_eps) {
  const int d = x.dim(1);
  if (x.dim(0) != gh * gw)
    throw std::invalid_argument("sib_forward: " + std::to_string(x.dim(0)) + " tokens do not fill a " +
                                std::to_string(gh) + "x" + std::to_string(gw) + " grid");
  auto grid = reshape(x, {gh, gw, d});
  auto c1 = reshape(depthwise_conv3x3(grid, blk.sib_conv1), {gh * gw, d});
  Tensor<T> bn = train ? batch_norm_train(c1, blk.bn_gamma, blk.bn_beta, bn_eps, stat_mean, stat_var)
                       : batch_norm_eval(c1, blk.bn_gamma, blk.bn_beta, blk.bn_running_mean, blk.bn_running_var,
                                         bn_eps);
  auto c2 = depthwise_conv3x3(reshape(relu(bn), {gh, gw, d}), blk.sib_conv2);
  auto pipeline = reshape(c2, {gh * gw, d});
  return layer_norm(add(x, pipeline), blk.ln_sib.gamma, blk.ln_sib.beta, ln_eps);
}

template <class T>
Tensor<T> mlp_forward(const Tensor<T>& s, const CsvtBlock<T>& blk, T ln_eps) {
  auto hidden = relu(add_row_bias(matmul(s, blk.fc1_w), blk.fc1_b));
  auto out = add_row_bias(matmul(hidden, blk.fc2_w), blk.fc2_b);
  return layer_norm(add(s, out), blk.ln_mlp.gamma, blk.ln_mlp.beta, ln_eps);
}

template <class T>
ForwardResult<T> CsvtModel<T>::forward(const Tensor<T>& image, bool train, BnBatchStats<T>* stats,
                                       AttentionVariant variant) const {
  const int h = image.dim(0), w = image.dim(1);
  const int gh = h / cfg_.patch_size, gw = w / cfg_.patch_size;
  const T l2e = T(cfg_.l2_eps), lne = T(cfg_.ln_eps), bne = T(cfg_.bn_eps);

  auto attention = [&](const Tensor<T>& x, const CsvtBlock<T>& blk) {
    return variant == AttentionVariant::kChannel ? cba_attention(x, blk, cfg_.num_heads, l2e)
                                                 : gram_attention(x, blk, cfg_.num_heads);
  };
  auto block_stats = [&](std::vector<T>** m, std::vector<T>** v) {
    if (!stats) {
      *m = nullptr;
      *v = nullptr;
      return;
    }
    stats->means.emplace_back();
    stats->vars.emplace_back();
    *m = &stats->means.back();
    *v = &stats->vars.back();
  };

  Tensor<T> x = patch_embed(image, patch_w_, patch_b_, cfg_.patch_size);
  const int n = x.dim(0);
  const int last = cfg_.num_layers - 1;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const auto& blk = blocks_[size_t(l)];
    const bool with_cls = cfg_.class_token_last_block && l == last;
    if (with_cls) x = concat_rows(reshape(class_token_, {1, cfg_.embed_dim}), x);

    x = layer_norm(add(attention(x, blk), x), blk.ln_attn.gamma, blk.ln_attn.beta, lne);

    std::vector<T>*sm, *sv;
    block_stats(&sm, &sv);
    if (with_cls) {
      // class token bypasses the spatial grid untouched
      auto cls_row = slice_rows(x, 0, 1);
      auto toks = sib_forward(slice_rows(x, 1, n + 1), blk, gh, gw, train, sm, sv, bne, lne);
      x = concat_rows(cls_row, toks);
    } else {
      x = sib_forward(x, blk, gh, gw, train, sm, sv, bne, lne);
    }

    x = mlp_forward(x, blk, lne);
  }

  ForwardResult<T> result;
  const bool has_cls = cfg_.class_token_last_block;
  result.last_tokens = has_cls ? slice_rows(x, 1, n + 1) : x;
  Tensor<T> pooled;
  if (has_cls) {
    pooled = slice_rows(x, 0, 1);
  } else {
    pooled = scale(matmul(transpose(Tensor<T>::full({n, 1}, T(1))), x), T(1) / T(n));  // mean over tokens
  }
  result.logits = reshape(add_row_bias(matmul(pooled, head_w_), head_b_), {cfg_.num_classes});
  return result;
}

// Deterministic fold of per-sample batch statistics into running buffers;
// running var uses the unbiased estimate, matching eval-mode expectations.
template <class T>
void fold_bn_stats(CsvtModel<T>& model, const BnBatchStats<T>& stats, int positions, T momentum = T(0.1)) {
  auto& blocks = model.blocks();
  if (stats.means.size() != blocks.size()) throw std::invalid_argument("fold_bn_stats: block count mismatch");
  const T unbias = positions > 1 ? T(positions) / T(positions - 1) : T(1);
  for (size_t b = 0; b < blocks.size(); ++b) {
    auto& rm = blocks[b].bn_running_mean.values_mut();
    auto& rv = blocks[b].bn_running_var.values_mut();
    for (size_t j = 0; j < rm.size(); ++j) {
      rm[j] = (T(1) - momentum) * rm[j] + momentum * stats.means[b][j];
      rv[j] = (T(1) - momentum) * rv[j] + momentum * stats.vars[b][j] * unbias;
    }
  }
}

// Closed-form trainable-parameter count, kept next to the model so the two
// are reviewed together; the acceptance suite re-derives it independently.
inline size_t csvt_param_count(const CsvtConfig& cfg) {
  const size_t d = size_t(cfg.embed_dim);
  const size_t hid = size_t(cfg.mlp_hidden());
  size_t patch = size_t(cfg.patch_size) * cfg.patch_size * 3 * d + d;
  size_t blk = 4 * (d * d + d);              // qkv + out projections
  blk += size_t(cfg.num_heads);              // log tau
  blk += 3 * 2 * d;                          // three layer norms
  blk += 2 * 9 * d;                          // depthwise kernels
  blk += 2 * d;                              // bn gamma/beta
  blk += d * hid + hid + hid * d + d;        // mlp
  return patch + size_t(cfg.num_layers) * blk + d + d * cfg.num_classes + size_t(cfg.num_classes);
}

}  // namespace csvt
