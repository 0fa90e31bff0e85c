#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hylite/dataset.hpp"
#include "hylite/tensor.hpp"

namespace hylite {

enum class PosMode { learned, fixed, none };
enum class AttnOrder { spectral_first, local_first };
enum class TokenAxis { spectral, local };
enum class FusionMode { feature_level, class_level };

struct ModelConfig {
  std::size_t m = 200;        // spectral bands
  std::size_t p = 7;          // patch side
  std::size_t d = 64;         // hidden dim
  std::size_t blocks = 5;
  std::size_t heads = 4;
  std::size_t heads_local = 1;
  std::size_t classes = 16;
  std::size_t ff_hidden = 4;  // hidden multiplier of the feed-forward
  PosMode pos_mode = PosMode::learned;
  AttnOrder attn_order = AttnOrder::spectral_first;
  TokenAxis token_axis = TokenAxis::spectral;
  FusionMode fusion = FusionMode::feature_level;
  bool caf = true;
  bool local_att = true;
  bool post_norm = false;

  /// Token-sequence length including the class token. With token_axis=local
  /// the sequence/feature roles of (m, d) are swapped after embedding.
  std::size_t seq_len() const { return (token_axis == TokenAxis::spectral ? m : d) + 1; }
  std::size_t feat() const { return token_axis == TokenAxis::spectral ? d : m; }

  void validate() const;

  /// CAF fusion sites: odd block indices from 3 up to blocks (1-based).
  std::vector<std::size_t> caf_sites() const;
};

/// One transformer block's parameters. Unused members (e.g. the local trio
/// when local attention is disabled) are left as invalid handles.
struct BlockParams {
  Tensor wq_s, wk_s, wv_s;  // feat x feat
  Tensor wq_l, wk_l, wv_l;  // seq x seq
  Tensor ff1, ff2;
  Tensor ln1_g, ln1_b;  // before spectral attention
  Tensor ln2_g, ln2_b;  // before local attention
  Tensor ln3_g, ln3_b;  // before feed-forward
};

struct ModelParams {
  Tensor W;   // p^2 x d embedding
  Tensor z0;  // 1 x feat class token
  Tensor P;   // seq x feat positional tensor (absent for pos_mode=none)
  std::vector<BlockParams> blocks;        // feature-level blocks, or the spectral branch
  std::vector<BlockParams> blocks_local;  // class-level fusion: local branch
  std::vector<Tensor> caf_k;              // one [2] kernel per caf site
  std::vector<Tensor> caf_k_local;        // local branch kernels (class-level fusion)
  Tensor C;  // feat x classes

  /// Visits every parameter tensor with its checkpoint name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  /// Trainable tensors only (excludes a fixed sinusoidal P).
  std::vector<Tensor> trainable() const;

  std::size_t count() const;  // total scalar parameters
};

/// Weights ~ truncated normal (sigma 0.02, clipped at 2 sigma), LayerNorm
/// gamma=1 beta=0, z0=0, P=0 (learned) or a sinusoidal table (fixed), CAF
/// kernels [0.5, 0.5]. Deterministic per seed.
ModelParams init_params(Graph& g, const ModelConfig& config, std::uint64_t seed);

/// Embeds an m x p^2 instance and prepends the class token (with positional
/// rows when enabled).
Tensor preprocess(Tensor instance, const ModelParams& params, const ModelConfig& config);

Tensor spectral_attention(Tensor x, const BlockParams& bp, std::size_t heads);
Tensor local_attention(Tensor x, const BlockParams& bp, std::size_t heads_local,
                       std::size_t scale_dim);
Tensor block_forward(Tensor x, const BlockParams& bp, const ModelConfig& config,
                     bool use_spectral = true, bool use_local = true);

struct InstanceOutput {
  Tensor logits;   // 1 x classes
  Tensor x_final;  // seq x feat token matrix feeding the regularizer
};

InstanceOutput forward_instance(Tensor instance, const ModelParams& params,
                                const ModelConfig& config);

struct Model {
  ModelConfig config;
  std::unique_ptr<Graph> graph;
  ModelParams params;
  std::size_t base_size = 0;  // tape mark right after the parameters

  static Model init(const ModelConfig& config, std::uint64_t seed);

  /// Rolls the tape back to the parameters.
  void reset_tape() { graph->truncate(base_size); }
};

struct BatchOutput {
  std::size_t classes = 0;
  std::vector<double> logits;                   // size() x classes
  std::vector<std::vector<double>> x_final;     // per-instance token matrices
  std::size_t size() const { return classes == 0 ? 0 : logits.size() / classes; }
};

/// Value-only forward over a batch; the tape is rolled back after each
/// instance. Throws ConfigMismatch if the batch geometry disagrees.
BatchOutput forward_batch(Model& model, const PatchBatch& batch);

void save_checkpoint(const ModelParams& params, const std::string& path);
void load_checkpoint(ModelParams& params, const std::string& path);

}  // namespace hylite
