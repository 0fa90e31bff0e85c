#include "hylite/gradcheck_suite.hpp"

#include <cmath>

#include "hylite/losses.hpp"
#include "hylite/model.hpp"
#include "hylite/rng.hpp"
#include "hylite/tensor.hpp"

namespace hylite {

namespace {

constexpr double kStep = 1e-6;

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = (rng.uniform() * 2.0 - 1.0) * scale;
  return v;
}

double op_check(const std::function<Tensor(Graph&, Tensor)>& f, const Shape& shape,
                std::size_t seeds, std::uint64_t salt) {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    Rng rng(Rng::mix(salt, s));
    const auto x0 = random_vec(rng, shape_numel(shape));
    worst = std::max(worst, grad_check(f, shape, x0, kStep).max_rel_err);
  }
  return worst;
}

/// FD over every entry of every trainable parameter of a tiny model driven by
/// the full objective (CE + lambda * Reg) on a fixed instance set.
double model_objective_check(const ModelConfig& config, std::uint64_t seed, double lambda) {
  Model model = Model::init(config, seed);
  Graph& g = *model.graph;
  Rng rng(Rng::mix(seed, 101));
  const std::size_t n = 3;
  std::vector<double> inputs = random_vec(rng, n * config.m * config.p * config.p);
  std::vector<int> targets(n);
  for (std::size_t i = 0; i < n; ++i)
    targets[i] = static_cast<int>(rng.below(config.classes));

  auto eval_obj = [&]() {
    double total = 0.0;
    g.truncate(model.base_size);
    const std::size_t ilen = config.m * config.p * config.p;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor leaf = g.leaf({config.m, config.p * config.p},
                           std::vector<double>(inputs.begin() + i * ilen,
                                               inputs.begin() + (i + 1) * ilen),
                           false);
      InstanceOutput io = forward_instance(leaf, model.params, model.config);
      std::vector<Tensor> xf = {io.x_final};
      Tensor obj = objective(io.logits, std::span<const int>(&targets[i], 1), xf, lambda);
      total += obj.item() / static_cast<double>(n);
      g.truncate(model.base_size);
    }
    return total;
  };

  // analytic pass
  g.zero_grad();
  g.truncate(model.base_size);
  {
    const std::size_t ilen = config.m * config.p * config.p;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor leaf = g.leaf({config.m, config.p * config.p},
                           std::vector<double>(inputs.begin() + i * ilen,
                                               inputs.begin() + (i + 1) * ilen),
                           false);
      InstanceOutput io = forward_instance(leaf, model.params, model.config);
      std::vector<Tensor> xf = {io.x_final};
      Tensor obj = objective(io.logits, std::span<const int>(&targets[i], 1), xf, lambda);
      g.backward(mul_scalar(obj, 1.0 / static_cast<double>(n)));
      g.truncate(model.base_size);
    }
  }

  double worst = 0.0;
  model.params.for_each([&](const std::string&, Tensor& t) {
    if (!t.requires_grad()) return;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto vals = t.value_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + kStep;
      const double up = eval_obj();
      vals[i] = keep - kStep;
      const double dn = eval_obj();
      vals[i] = keep;
      const double numeric = (up - dn) / (2.0 * kStep);
      const double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), 1.0});
      worst = std::max(worst, rel);
    }
  });
  return worst;
}

}  // namespace

GradCheckSuite run_gradcheck_suite(bool inject_fault) {
  GradCheckSuite suite;
  auto entry = [&suite](std::string name, double err) {
    suite.entries.push_back({std::move(name), err});
  };

  const std::size_t seeds = 5;
  Rng aux_rng(1234);
  const auto aux16 = random_vec(aux_rng, 16);
  const auto aux4 = random_vec(aux_rng, 4);

  entry("matmul", op_check(
                      [&](Graph& g, Tensor x) {
                        return l2_sq(matmul(x, g.leaf({4, 4}, aux16, false)));
                      },
                      {4, 4}, seeds, 1));
  entry("softmax_rows", op_check(
                            [&](Graph& g, Tensor x) {
                              return l2_sq(add(softmax_rows(x), g.leaf({4, 4}, aux16, false)));
                            },
                            {4, 4}, seeds, 2));
  entry("layer_norm", op_check(
                          [&](Graph& g, Tensor x) {
                            Tensor gm = g.leaf({4}, aux4, false);
                            Tensor bt = g.leaf({4}, aux4, false);
                            return l2_sq(layer_norm(x, gm, bt));
                          },
                          {4, 4}, seeds, 3));
  entry("transpose2d",
        op_check([&](Graph& g, Tensor x) { return l2_sq(matmul(transpose2d(x),
                                                               g.leaf({4, 4}, aux16, false))); },
                 {4, 4}, seeds, 4));
  entry("add", op_check(
                   [&](Graph& g, Tensor x) {
                     return l2_sq(add(x, g.leaf({4, 4}, aux16, false)));
                   },
                   {4, 4}, seeds, 5));
  entry("add_row_broadcast", op_check(
                                 [&](Graph& g, Tensor x) {
                                   return l2_sq(add(g.leaf({4, 4}, aux16, false), x));
                                 },
                                 {1, 4}, seeds, 6));
  entry("sub", op_check(
                   [&](Graph& g, Tensor x) {
                     return l2_sq(sub(x, g.leaf({4, 4}, aux16, false)));
                   },
                   {4, 4}, seeds, 7));
  entry("mul_scalar",
        op_check([](Graph&, Tensor x) { return l2_sq(mul_scalar(x, -2.5)); }, {4, 4}, seeds, 8));
  entry("gelu", op_check([](Graph&, Tensor x) { return l2_sq(gelu(x)); }, {4, 4}, seeds, 9));
  entry("mean_axis0",
        op_check([](Graph&, Tensor x) { return l2_sq(mean_axis0(x)); }, {4, 4}, seeds, 10));
  entry("l2_sq", op_check([](Graph&, Tensor x) { return l2_sq(x); }, {4, 4}, seeds, 11));
  entry("conv_pair", op_check(
                         [&](Graph& g, Tensor x) {
                           Tensor b = g.leaf({4, 4}, aux16, false);
                           Tensor k = g.leaf({2}, {0.6, -0.3}, false);
                           return l2_sq(conv_pair(x, b, k));
                         },
                         {4, 4}, seeds, 12));
  entry("conv_pair_kernel", op_check(
                                [&](Graph& g, Tensor x) {
                                  Tensor a = g.leaf({4, 4}, aux16, false);
                                  Tensor b = g.leaf({4, 4}, aux16, false);
                                  return l2_sq(conv_pair(a, b, x));
                                },
                                {2}, seeds, 13));
  entry("slice_rows",
        op_check([](Graph&, Tensor x) { return l2_sq(slice_rows(x, 1, 3)); }, {4, 4}, seeds, 14));
  entry("slice_cols",
        op_check([](Graph&, Tensor x) { return l2_sq(slice_cols(x, 0, 2)); }, {4, 4}, seeds, 15));
  entry("concat_rows", op_check(
                           [&](Graph& g, Tensor x) {
                             std::vector<Tensor> parts = {x, g.leaf({4, 4}, aux16, false)};
                             return l2_sq(concat_rows(parts));
                           },
                           {4, 4}, seeds, 16));
  entry("concat_cols", op_check(
                           [&](Graph& g, Tensor x) {
                             std::vector<Tensor> parts = {g.leaf({4, 4}, aux16, false), x};
                             return l2_sq(concat_cols(parts));
                           },
                           {4, 4}, seeds, 17));
  entry("cross_entropy", op_check(
                             [](Graph&, Tensor x) {
                               static const std::vector<int> targets = {1, 0, 2, 1};
                               return cross_entropy(x, targets);
                             },
                             {4, 3}, seeds, 18));
  entry("softmax_of_matmul", op_check(
                                 [&](Graph& g, Tensor x) {
                                   Tensor w = g.leaf({4, 4}, aux16, false);
                                   return l2_sq(softmax_rows(matmul(x, w)));
                                 },
                                 {4, 4}, seeds, 19));
  entry("reg_loss",
        op_check([](Graph&, Tensor x) { return reg_loss(x); }, {4, 3}, seeds, 20));
  entry("reg_loss_per_token",
        op_check([](Graph&, Tensor x) { return reg_loss(x, RegMode::per_token); }, {4, 3}, seeds,
                 21));

  // full tiny-model objective, every parameter tensor
  ModelConfig tiny;
  tiny.m = 3;
  tiny.p = 1;
  tiny.d = 4;
  tiny.blocks = 2;
  tiny.heads = 1;
  tiny.classes = 2;
  tiny.caf = true;  // no site exists below three blocks; kept on regardless
  entry("objective_tiny_model", model_objective_check(tiny, 7, 1.0));

  ModelConfig tiny_caf = tiny;
  tiny_caf.blocks = 3;  // first real fusion site, exercises the caf kernels
  entry("objective_tiny_model_caf", model_objective_check(tiny_caf, 8, 1.0));

  ModelConfig tiny_variants = tiny_caf;
  tiny_variants.heads = 2;
  tiny_variants.attn_order = AttnOrder::local_first;
  tiny_variants.fusion = FusionMode::class_level;
  entry("objective_tiny_model_class_level", model_objective_check(tiny_variants, 9, 1.0));

  if (inject_fault) {
    // negative control: a node whose registered backward is off by 1 percent
    auto broken = [](Graph& g, Tensor x) {
      const auto xv = x.value();
      std::vector<double> out(xv.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * xv[i];
      const std::size_t id = x.id();
      Tensor y = g.make_node("broken_double", x.shape(), std::move(out), {id},
                             [id](Graph& gg, std::size_t self) {
                               auto& in = gg.node(id);
                               const auto& gout = gg.node(self).grad;
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 in.grad[i] += 2.02 * gout[i];  // should be 2.0
                             });
      return l2_sq(y);
    };
    entry("injected_fault", op_check(broken, {4, 4}, 1, 99));
  }
  return suite;
}

}  // namespace hylite
