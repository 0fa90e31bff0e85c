#include "hylite/model.hpp"

#include <cmath>

#include "hylite/rng.hpp"

namespace hylite {

namespace {

Tensor trunc_normal_leaf(Graph& g, Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.truncated_normal(0.02, 2.0);
  return g.leaf(std::move(shape), std::move(v), true);
}

std::vector<double> sinusoidal_table(std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t j = 0; j < cols; ++j) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(j / 2) / static_cast<double>(cols));
      t[pos * cols + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return t;
}

BlockParams init_block(Graph& g, Rng& rng, std::size_t seq, std::size_t feat, std::size_t ff,
                       bool spectral, bool local) {
  BlockParams bp;
  if (spectral) {
    bp.wq_s = trunc_normal_leaf(g, rng, {feat, feat});
    bp.wk_s = trunc_normal_leaf(g, rng, {feat, feat});
    bp.wv_s = trunc_normal_leaf(g, rng, {feat, feat});
    bp.ln1_g = g.full({feat}, 1.0, true);
    bp.ln1_b = g.zeros({feat}, true);
  }
  if (local) {
    bp.wq_l = trunc_normal_leaf(g, rng, {seq, seq});
    bp.wk_l = trunc_normal_leaf(g, rng, {seq, seq});
    bp.wv_l = trunc_normal_leaf(g, rng, {seq, seq});
    bp.ln2_g = g.full({feat}, 1.0, true);
    bp.ln2_b = g.zeros({feat}, true);
  }
  bp.ff1 = trunc_normal_leaf(g, rng, {feat, ff * feat});
  bp.ff2 = trunc_normal_leaf(g, rng, {ff * feat, feat});
  bp.ln3_g = g.full({feat}, 1.0, true);
  bp.ln3_b = g.zeros({feat}, true);
  return bp;
}

void visit_block(BlockParams& bp, const std::string& prefix, bool local_suffix,
                 const std::function<void(const std::string&, Tensor&)>& fn) {
  // attention trios carry distinct names already; ff/ln need a branch suffix
  if (bp.wq_s.valid()) fn(prefix + "wq_s", bp.wq_s);
  if (bp.wk_s.valid()) fn(prefix + "wk_s", bp.wk_s);
  if (bp.wv_s.valid()) fn(prefix + "wv_s", bp.wv_s);
  if (bp.wq_l.valid()) fn(prefix + "wq_l", bp.wq_l);
  if (bp.wk_l.valid()) fn(prefix + "wk_l", bp.wk_l);
  if (bp.wv_l.valid()) fn(prefix + "wv_l", bp.wv_l);
  if (bp.ff1.valid()) fn(prefix + "ff1" + (local_suffix ? "_l" : ""), bp.ff1);
  if (bp.ff2.valid()) fn(prefix + "ff2" + (local_suffix ? "_l" : ""), bp.ff2);
  if (bp.ln1_g.valid()) fn(prefix + "ln1_g", bp.ln1_g);
  if (bp.ln1_b.valid()) fn(prefix + "ln1_b", bp.ln1_b);
  if (bp.ln2_g.valid()) fn(prefix + "ln2_g" + (local_suffix ? "_l" : ""), bp.ln2_g);
  if (bp.ln2_b.valid()) fn(prefix + "ln2_b" + (local_suffix ? "_l" : ""), bp.ln2_b);
  if (bp.ln3_g.valid()) fn(prefix + "ln3_g" + (local_suffix ? "_l" : ""), bp.ln3_g);
  if (bp.ln3_b.valid()) fn(prefix + "ln3_b" + (local_suffix ? "_l" : ""), bp.ln3_b);
}

}  // namespace

void ModelConfig::validate() const {
  if (m == 0 || d == 0 || classes < 2 || blocks < 1 || ff_hidden < 1)
    fail(Err::InvalidConfig, "model dims must be positive and classes >= 2");
  if (p % 2 == 0) fail(Err::InvalidConfig, "patch side must be odd");
  if (heads == 0 || feat() % heads != 0)
    fail(Err::InvalidConfig, "hidden dim " + std::to_string(feat()) + " not divisible by " +
                                 std::to_string(heads) + " heads");
  if (heads_local == 0 || (heads_local > 1 && seq_len() % heads_local != 0))
    fail(Err::InvalidConfig, "sequence length " + std::to_string(seq_len()) +
                                 " not divisible by heads_local " + std::to_string(heads_local));
}

std::vector<std::size_t> ModelConfig::caf_sites() const {
  std::vector<std::size_t> sites;
  if (caf)
    for (std::size_t l = 3; l <= blocks; l += 2) sites.push_back(l);
  return sites;
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("embed.W", W);
  if (P.valid()) fn("embed.P", P);
  fn("embed.z0", z0);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    visit_block(blocks[b], "block" + std::to_string(b + 1) + ".", false, fn);
  for (std::size_t b = 0; b < blocks_local.size(); ++b)
    visit_block(blocks_local[b], "block" + std::to_string(b + 1) + ".", true, fn);
  for (std::size_t i = 0; i < caf_k.size(); ++i)
    fn("caf" + std::to_string(3 + 2 * i) + ".k", caf_k[i]);
  for (std::size_t i = 0; i < caf_k_local.size(); ++i)
    fn("caf" + std::to_string(3 + 2 * i) + ".k_l", caf_k_local[i]);
  fn("head.C", C);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

std::vector<Tensor> ModelParams::trainable() const {
  std::vector<Tensor> out;
  for_each([&out](const std::string&, const Tensor& t) {
    if (t.requires_grad()) out.push_back(t);
  });
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ModelParams init_params(Graph& g, const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t seq = config.seq_len(), feat = config.feat();
  ModelParams mp;
  mp.W = trunc_normal_leaf(g, rng, {config.p * config.p, config.d});
  mp.z0 = g.zeros({1, feat}, true);
  if (config.pos_mode == PosMode::learned) {
    mp.P = g.zeros({seq, feat}, true);
  } else if (config.pos_mode == PosMode::fixed) {
    mp.P = g.leaf({seq, feat}, sinusoidal_table(seq, feat), false);
  }

  const bool feature_level = config.fusion == FusionMode::feature_level;
  for (std::size_t b = 0; b < config.blocks; ++b)
    mp.blocks.push_back(init_block(g, rng, seq, feat, config.ff_hidden, true,
                                   feature_level && config.local_att));
  if (!feature_level && config.local_att)
    for (std::size_t b = 0; b < config.blocks; ++b)
      mp.blocks_local.push_back(init_block(g, rng, seq, feat, config.ff_hidden, false, true));

  for (std::size_t l : config.caf_sites()) {
    (void)l;
    mp.caf_k.push_back(g.leaf({2}, {0.5, 0.5}, true));
    if (!feature_level && config.local_att)
      mp.caf_k_local.push_back(g.leaf({2}, {0.5, 0.5}, true));
  }

  mp.C = trunc_normal_leaf(g, rng, {feat, config.classes});
  return mp;
}

Tensor preprocess(Tensor instance, const ModelParams& params, const ModelConfig& config) {
  if (instance.shape() != Shape{config.m, config.p * config.p})
    fail(Err::ShapeMismatch, "instance must be m x p^2");
  Tensor embedded = matmul(instance, params.W);  // m x d
  if (config.token_axis == TokenAxis::local) embedded = transpose2d(embedded);  // d x m
  std::vector<Tensor> rows = {params.z0, embedded};
  Tensor x0 = concat_rows(rows);
  if (config.pos_mode != PosMode::none) x0 = add(x0, params.P);
  return x0;
}

Tensor spectral_attention(Tensor x, const BlockParams& bp, std::size_t heads) {
  Tensor q = matmul(x, bp.wq_s);
  Tensor k = matmul(x, bp.wk_s);
  Tensor v = matmul(x, bp.wv_s);
  const std::size_t feat = x.cols();
  const std::size_t dh = feat / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Tensor attn = softmax_rows(mul_scalar(matmul(qh, transpose2d(kh)), scale));
    outs.push_back(matmul(attn, vh));
  }
  return outs.size() == 1 ? outs[0] : concat_cols(outs);
}

Tensor local_attention(Tensor x, const BlockParams& bp, std::size_t heads_local,
                       std::size_t scale_dim) {
  Tensor xt = transpose2d(x);  // feat x seq
  Tensor q = matmul(xt, bp.wq_l);
  Tensor k = matmul(xt, bp.wk_l);
  Tensor v = matmul(xt, bp.wv_l);
  const std::size_t seq = x.rows();
  const std::size_t wh = seq / heads_local;
  // scale follows the spectral-formula sqrt(d) verbatim, not the slice width
  const double scale = 1.0 / std::sqrt(static_cast<double>(scale_dim));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads_local; ++h) {
    Tensor qh = heads_local == 1 ? q : slice_cols(q, h * wh, (h + 1) * wh);
    Tensor kh = heads_local == 1 ? k : slice_cols(k, h * wh, (h + 1) * wh);
    Tensor vh = heads_local == 1 ? v : slice_cols(v, h * wh, (h + 1) * wh);
    Tensor attn = softmax_rows(mul_scalar(matmul(qh, transpose2d(kh)), scale));
    outs.push_back(matmul(attn, vh));
  }
  Tensor merged = outs.size() == 1 ? outs[0] : concat_cols(outs);
  return transpose2d(merged);
}

Tensor block_forward(Tensor x, const BlockParams& bp, const ModelConfig& config,
                     bool use_spectral, bool use_local) {
  use_local = use_local && bp.wq_l.valid();
  use_spectral = use_spectral && bp.wq_s.valid();

  auto apply = [&](Tensor in, const Tensor& lg, const Tensor& lb,
                   const std::function<Tensor(Tensor)>& sublayer) {
    if (!config.post_norm) return add(in, sublayer(layer_norm(in, lg, lb)));
    return layer_norm(add(in, sublayer(in)), lg, lb);
  };
  auto spectral = [&](Tensor in) {
    return apply(in, bp.ln1_g, bp.ln1_b,
                 [&](Tensor n) { return spectral_attention(n, bp, config.heads); });
  };
  auto local = [&](Tensor in) {
    return apply(in, bp.ln2_g, bp.ln2_b, [&](Tensor n) {
      return local_attention(n, bp, config.heads_local, config.feat());
    });
  };

  if (config.attn_order == AttnOrder::spectral_first) {
    if (use_spectral) x = spectral(x);
    if (use_local) x = local(x);
  } else {
    if (use_local) x = local(x);
    if (use_spectral) x = spectral(x);
  }
  x = apply(x, bp.ln3_g, bp.ln3_b,
            [&](Tensor n) { return matmul(gelu(matmul(n, bp.ff1)), bp.ff2); });
  return x;
}

namespace {

Tensor run_blocks(Tensor x0, const std::vector<BlockParams>& blocks,
                  const std::vector<Tensor>& caf_kernels, const ModelConfig& config,
                  bool use_spectral, bool use_local) {
  const auto sites = config.caf_sites();
  std::vector<Tensor> history = {x0};  // history[i] is the output of block i
  Tensor x = x0;
  for (std::size_t b = 1; b <= blocks.size(); ++b) {
    Tensor input = x;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      if (sites[s] == b)
        input = conv_pair(history[b - 2], history[b - 1], caf_kernels[s]);
    }
    x = block_forward(input, blocks[b - 1], config, use_spectral, use_local);
    history.push_back(x);
  }
  return x;
}

}  // namespace

InstanceOutput forward_instance(Tensor instance, const ModelParams& params,
                                const ModelConfig& config) {
  Tensor x0 = preprocess(instance, params, config);
  InstanceOutput out;
  if (config.fusion == FusionMode::feature_level) {
    Tensor xb = run_blocks(x0, params.blocks, params.caf_k, config, true, config.local_att);
    out.x_final = xb;
    out.logits = matmul(slice_rows(xb, 0, 1), params.C);
  } else {
    Tensor xa = run_blocks(x0, params.blocks, params.caf_k, config, true, false);
    if (config.local_att) {
      Tensor xb = run_blocks(x0, params.blocks_local, params.caf_k_local, config, false, true);
      out.x_final = add(xa, xb);
      out.logits = matmul(add(slice_rows(xa, 0, 1), slice_rows(xb, 0, 1)), params.C);
    } else {
      out.x_final = xa;
      out.logits = matmul(slice_rows(xa, 0, 1), params.C);
    }
  }
  return out;
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.graph = std::make_unique<Graph>();
  m.params = init_params(*m.graph, config, seed);
  m.base_size = m.graph->size();
  return m;
}

BatchOutput forward_batch(Model& model, const PatchBatch& batch) {
  if (batch.m != model.config.m || batch.p != model.config.p)
    fail(Err::ConfigMismatch, "batch geometry m=" + std::to_string(batch.m) +
                                  " p=" + std::to_string(batch.p) + " does not match config");
  BatchOutput out;
  out.classes = model.config.classes;
  out.logits.reserve(batch.size() * out.classes);
  Graph& g = *model.graph;
  const std::size_t mark = g.size();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto inst = batch.instance(i);
    Tensor leaf = g.leaf({batch.m, batch.p * batch.p},
                         std::vector<double>(inst.begin(), inst.end()), false);
    InstanceOutput io = forward_instance(leaf, model.params, model.config);
    out.logits.insert(out.logits.end(), io.logits.value().begin(), io.logits.value().end());
    out.x_final.emplace_back(io.x_final.value().begin(), io.x_final.value().end());
    g.truncate(mark);
  }
  return out;
}

}  // namespace hylite
