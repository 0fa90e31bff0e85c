#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "hylite/model.hpp"
#include "hylite/rng.hpp"
#include "oracles/forward_oracle.hpp"

using namespace hylite;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.m = 3;
  c.p = 1;
  c.d = 4;
  c.blocks = 1;
  c.heads = 1;
  c.classes = 2;
  return c;
}

forward_oracle::Weights extract_weights(const ModelParams& p) {
  forward_oracle::Weights w;
  p.for_each([&w](const std::string& name, const Tensor& t) {
    forward_oracle::Mat m;
    if (t.shape().size() == 2) {
      m.r = t.shape()[0];
      m.c = t.shape()[1];
    } else {
      m.r = 1;
      m.c = t.numel();
    }
    m.v.assign(t.value().begin(), t.value().end());
    w.emplace(name, std::move(m));
  });
  return w;
}

forward_oracle::Config to_oracle(const ModelConfig& c) {
  forward_oracle::Config o;
  o.m = c.m;
  o.p = c.p;
  o.d = c.d;
  o.blocks = c.blocks;
  o.heads = c.heads;
  o.heads_local = c.heads_local;
  o.classes = c.classes;
  o.ff_hidden = c.ff_hidden;
  o.pos = c.pos_mode != PosMode::none;
  o.spectral_first = c.attn_order == AttnOrder::spectral_first;
  o.token_axis_local = c.token_axis == TokenAxis::local;
  o.class_level = c.fusion == FusionMode::class_level;
  o.caf = c.caf;
  o.local_att = c.local_att;
  o.post_norm = c.post_norm;
  return o;
}

std::vector<double> random_instance(Rng& rng, const ModelConfig& c) {
  std::vector<double> v(c.m * c.p * c.p);
  for (double& x : v) x = rng.uniform() * 2.0 - 1.0;
  return v;
}

void zero_params(ModelParams& p) {
  p.for_each([](const std::string& name, Tensor& t) {
    if (name.find("ln") != std::string::npos) return;  // keep gamma=1, beta=0
    std::fill(t.value_mut().begin(), t.value_mut().end(), 0.0);
  });
}

}  // namespace

TEST_CASE("init_params determinism and contracts") {
  SUBCASE("same seed, bit-identical params") {
    Model a = Model::init(tiny_config(), 42);
    Model b = Model::init(tiny_config(), 42);
    std::vector<double> va, vb;
    a.params.for_each([&va](const std::string&, const Tensor& t) {
      va.insert(va.end(), t.value().begin(), t.value().end());
    });
    b.params.for_each([&vb](const std::string&, const Tensor& t) {
      vb.insert(vb.end(), t.value().begin(), t.value().end());
    });
    CHECK(va == vb);
  }
  SUBCASE("head divisibility") {
    ModelConfig c = tiny_config();
    c.d = 64;
    c.heads = 4;
    CHECK_NOTHROW(c.validate());
    c.d = 62;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("InvalidConfig"), Error);
  }
  SUBCASE("truncation bound") {
    Model m = Model::init(tiny_config(), 7);
    m.params.for_each([](const std::string& name, const Tensor& t) {
      if (name.find("ln") != std::string::npos) return;
      for (double v : t.value()) CHECK(std::abs(v) < 0.1);
    });
  }
  SUBCASE("caf sites") {
    ModelConfig c = tiny_config();
    c.blocks = 5;
    c.caf = true;
    CHECK(c.caf_sites() == std::vector<std::size_t>{3, 5});
    c.blocks = 2;
    CHECK(c.caf_sites().empty());
    c.caf = false;
    c.blocks = 5;
    CHECK(c.caf_sites().empty());
  }
}

TEST_CASE("preprocess") {
  SUBCASE("all-zero params give a zero X0") {
    Model m = Model::init(tiny_config(), 3);
    zero_params(m.params);
    Tensor inst = m.graph->leaf({3, 1}, {1.0, 2.0, 3.0}, false);
    Tensor x0 = preprocess(inst, m.params, m.config);
    CHECK(x0.shape() == Shape{4, 4});
    for (double v : x0.value()) CHECK(v == 0.0);
  }
  SUBCASE("hand product with positional rows") {
    ModelConfig c = tiny_config();
    c.m = 1;
    c.d = 2;
    c.heads = 1;
    Model m = Model::init(c, 0);
    auto set = [&](Tensor& t, std::vector<double> v) {
      std::copy(v.begin(), v.end(), t.value_mut().begin());
    };
    set(m.params.W, {1.0, 0.0});
    set(m.params.P, {0.0, 0.0, 3.0, 0.0});
    set(m.params.z0, {0.0, 0.0});
    Tensor inst = m.graph->leaf({1, 1}, {2.0}, false);
    Tensor x0 = preprocess(inst, m.params, m.config);
    CHECK(x0.value()[0] == 0.0);
    CHECK(x0.value()[1] == 0.0);
    CHECK(x0.value()[2] == 5.0);
    CHECK(x0.value()[3] == 0.0);
  }
  SUBCASE("pos_mode none equals learned P=0") {
    ModelConfig c = tiny_config();
    Model learned = Model::init(c, 9);
    c.pos_mode = PosMode::none;
    Model none = Model::init(c, 9);
    Rng rng(4);
    auto data = random_instance(rng, c);
    Tensor il = learned.graph->leaf({c.m, 1}, data, false);
    Tensor in = none.graph->leaf({c.m, 1}, data, false);
    auto a = forward_instance(il, learned.params, learned.config);
    auto b = forward_instance(in, none.params, none.config);
    CHECK(std::equal(a.logits.value().begin(), a.logits.value().end(),
                     b.logits.value().begin()));
  }
}

TEST_CASE("spectral attention") {
  SUBCASE("zero weights give zero output") {
    Model m = Model::init(tiny_config(), 5);
    zero_params(m.params);
    Tensor x = m.graph->leaf({4, 4}, std::vector<double>(16, 0.3), false);
    Tensor y = spectral_attention(x, m.params.blocks[0], 1);
    for (double v : y.value()) CHECK(v == 0.0);
  }
  SUBCASE("two-token hand case matches the direct formula") {
    ModelConfig c = tiny_config();
    c.m = 1;
    c.d = 2;
    Model m = Model::init(c, 5);
    auto& bp = m.params.blocks[0];
    std::vector<double> wq = {0.3, -0.1, 0.2, 0.5}, wk = {0.1, 0.4, -0.3, 0.2},
                        wv = {1.0, 0.0, 0.0, -1.0};
    std::copy(wq.begin(), wq.end(), bp.wq_s.value_mut().begin());
    std::copy(wk.begin(), wk.end(), bp.wk_s.value_mut().begin());
    std::copy(wv.begin(), wv.end(), bp.wv_s.value_mut().begin());
    std::vector<double> xv = {0.7, -0.2, 0.1, 0.9};
    Tensor x = m.graph->leaf({2, 2}, xv, false);
    Tensor y = spectral_attention(x, bp, 1);

    forward_oracle::Mat xm(2, 2), q(2, 2), k(2, 2), v(2, 2);
    xm.v = xv;
    q.v = wq;
    k.v = wk;
    v.v = wv;
    auto ym = forward_oracle::spectral_attn(xm, q, k, v, 1, nullptr);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(y.value()[i] == doctest::Approx(ym.v[i]).epsilon(1e-12));
  }
  SUBCASE("permutation equivariance over spectral tokens") {
    ModelConfig c = tiny_config();
    c.m = 5;
    Model m = Model::init(c, 6);
    Rng rng(8);
    std::vector<double> base((c.m + 1) * c.d);
    for (double& v : base) v = rng.uniform() - 0.5;
    std::vector<double> permuted = base;
    // swap token rows 2 and 4 (class token row 0 stays)
    for (std::size_t j = 0; j < c.d; ++j)
      std::swap(permuted[2 * c.d + j], permuted[4 * c.d + j]);
    Tensor xa = m.graph->leaf({c.m + 1, c.d}, base, false);
    Tensor xb = m.graph->leaf({c.m + 1, c.d}, permuted, false);
    Tensor ya = spectral_attention(xa, m.params.blocks[0], 1);
    Tensor yb = spectral_attention(xb, m.params.blocks[0], 1);
    for (std::size_t j = 0; j < c.d; ++j) {
      CHECK(ya.value()[2 * c.d + j] == doctest::Approx(yb.value()[4 * c.d + j]).epsilon(1e-12));
      CHECK(ya.value()[0 * c.d + j] == doctest::Approx(yb.value()[0 * c.d + j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("local attention") {
  SUBCASE("zero weights give zero output") {
    Model m = Model::init(tiny_config(), 5);
    zero_params(m.params);
    Tensor x = m.graph->leaf({4, 4}, std::vector<double>(16, 0.3), false);
    Tensor y = local_attention(x, m.params.blocks[0], 1, 4);
    CHECK(y.shape() == Shape{4, 4});
    for (double v : y.value()) CHECK(v == 0.0);
  }
  SUBCASE("tiny hand case matches the direct formula") {
    ModelConfig c = tiny_config();
    c.m = 1;
    c.d = 2;
    Model m = Model::init(c, 5);
    auto& bp = m.params.blocks[0];
    std::vector<double> wq = {0.2, -0.4, 0.1, 0.3}, wk = {0.5, 0.2, -0.2, 0.1},
                        wv = {0.0, 1.0, 1.0, 0.0};
    std::copy(wq.begin(), wq.end(), bp.wq_l.value_mut().begin());
    std::copy(wk.begin(), wk.end(), bp.wk_l.value_mut().begin());
    std::copy(wv.begin(), wv.end(), bp.wv_l.value_mut().begin());
    std::vector<double> xv = {0.7, -0.2, 0.1, 0.9};
    Tensor x = m.graph->leaf({2, 2}, xv, false);
    Tensor y = local_attention(x, bp, 1, c.d);

    forward_oracle::Mat xm(2, 2), q(2, 2), k(2, 2), v(2, 2);
    xm.v = xv;
    q.v = wq;
    k.v = wk;
    v.v = wv;
    auto ym = forward_oracle::local_attn(xm, q, k, v, 1, c.d, nullptr);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(y.value()[i] == doctest::Approx(ym.v[i]).epsilon(1e-12));
  }
  SUBCASE("shape contract over random configs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      ModelConfig c = tiny_config();
      c.m = 2 + rng.below(4);
      c.d = 2 * (1 + rng.below(3));
      Model m = Model::init(c, seed);
      std::vector<double> xv((c.m + 1) * c.d);
      for (double& v : xv) v = rng.uniform();
      Tensor x = m.graph->leaf({c.m + 1, c.d}, xv, false);
      Tensor y = local_attention(x, m.params.blocks[0], 1, c.d);
      CHECK(y.shape() == Shape{c.m + 1, c.d});
    }
  }
}

TEST_CASE("block_forward") {
  SUBCASE("all weights zero is the identity") {
    Model m = Model::init(tiny_config(), 5);
    zero_params(m.params);
    Rng rng(3);
    std::vector<double> xv(4 * 4);
    for (double& v : xv) v = rng.uniform() * 4 - 2;
    Tensor x = m.graph->leaf({4, 4}, xv, false);
    Tensor y = block_forward(x, m.params.blocks[0], m.config);
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(y.value()[i] == xv[i]);
  }
  SUBCASE("one block matches the composition oracle") {
    Model m = Model::init(tiny_config(), 11);
    Rng rng(12);
    auto inst = random_instance(rng, m.config);
    Tensor leaf = m.graph->leaf({3, 1}, inst, false);
    Tensor x0 = preprocess(leaf, m.params, m.config);
    Tensor y = block_forward(x0, m.params.blocks[0], m.config);

    auto w = extract_weights(m.params);
    forward_oracle::Mat xm(4, 4);
    xm.v.assign(x0.value().begin(), x0.value().end());
    auto ym = forward_oracle::block(xm, w, to_oracle(m.config), 1, true, true, false, nullptr);
    for (std::size_t i = 0; i < ym.v.size(); ++i)
      CHECK(y.value()[i] == doctest::Approx(ym.v[i]).epsilon(1e-10));
  }
  SUBCASE("attention order is a real choice") {
    ModelConfig c = tiny_config();
    Model m = Model::init(c, 21);
    Rng rng(22);
    auto inst = random_instance(rng, c);
    Tensor leaf = m.graph->leaf({3, 1}, inst, false);
    Tensor x0 = preprocess(leaf, m.params, m.config);
    Tensor a = block_forward(x0, m.params.blocks[0], m.config);
    ModelConfig swapped = c;
    swapped.attn_order = AttnOrder::local_first;
    Tensor b = block_forward(x0, m.params.blocks[0], swapped);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
      diff = std::max(diff, std::abs(a.value()[i] - b.value()[i]));
    CHECK(diff > 1e-12);
  }
}

TEST_CASE("caf wiring") {
  ModelConfig c = tiny_config();
  c.blocks = 3;
  c.caf = true;
  SUBCASE("kernel [0,1] is neutral") {
    Model on = Model::init(c, 31);
    ModelConfig coff = c;
    coff.caf = false;
    Model off = Model::init(coff, 31);  // same rng draws: kernels consume none
    on.params.caf_k[0].value_mut()[0] = 0.0;
    on.params.caf_k[0].value_mut()[1] = 1.0;
    Rng rng(32);
    auto inst = random_instance(rng, c);
    Tensor li = on.graph->leaf({3, 1}, inst, false);
    Tensor lo = off.graph->leaf({3, 1}, inst, false);
    auto a = forward_instance(li, on.params, on.config);
    auto b = forward_instance(lo, off.params, off.config);
    for (std::size_t i = 0; i < a.logits.numel(); ++i)
      CHECK(a.logits.value()[i] == b.logits.value()[i]);
  }
  SUBCASE("kernel [1,0] replays the block-1 output") {
    Model m = Model::init(c, 33);
    m.params.caf_k[0].value_mut()[0] = 1.0;
    m.params.caf_k[0].value_mut()[1] = 0.0;
    Rng rng(34);
    auto inst = random_instance(rng, c);
    Tensor leaf = m.graph->leaf({3, 1}, inst, false);
    Tensor x0 = preprocess(leaf, m.params, m.config);
    Tensor x1 = block_forward(x0, m.params.blocks[0], m.config);
    Tensor x3in_expected = x1;  // conv_pair([1,0]) selects the (l-2) output
    Tensor x2 = block_forward(x1, m.params.blocks[1], m.config);
    Tensor x3 = block_forward(x3in_expected, m.params.blocks[2], m.config);
    (void)x2;
    auto full = forward_instance(leaf, m.params, m.config);
    Tensor expect_logits = matmul(slice_rows(x3, 0, 1), m.params.C);
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(full.logits.value()[i] == doctest::Approx(expect_logits.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward") {
  SUBCASE("zero classifier gives zero logits") {
    Model m = Model::init(tiny_config(), 41);
    std::fill(m.params.C.value_mut().begin(), m.params.C.value_mut().end(), 0.0);
    Rng rng(42);
    auto inst = random_instance(rng, m.config);
    Tensor leaf = m.graph->leaf({3, 1}, inst, false);
    auto out = forward_instance(leaf, m.params, m.config);
    for (double v : out.logits.value()) CHECK(v == 0.0);
  }
  SUBCASE("duplicated instances produce identical logits") {
    Model m = Model::init(tiny_config(), 43);
    Rng rng(44);
    auto inst = random_instance(rng, m.config);
    PatchBatch batch;
    batch.m = 3;
    batch.p = 1;
    batch.targets = {0, 0, 0};
    batch.inputs.reserve(3 * inst.size());
    for (int i = 0; i < 3; ++i)
      batch.inputs.insert(batch.inputs.end(), inst.begin(), inst.end());
    auto out = forward_batch(m, batch);
    for (std::size_t i = 1; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(out.logits[i * 2 + j] == out.logits[j]);
  }
  SUBCASE("forward is pure") {
    Model m = Model::init(tiny_config(), 45);
    Rng rng(46);
    PatchBatch batch;
    batch.m = 3;
    batch.p = 1;
    batch.targets = {0};
    batch.inputs = random_instance(rng, m.config);
    auto a = forward_batch(m, batch);
    auto b = forward_batch(m, batch);
    CHECK(a.logits == b.logits);
    CHECK(a.x_final == b.x_final);
  }
  SUBCASE("config mismatch rejected") {
    Model m = Model::init(tiny_config(), 47);
    PatchBatch batch;
    batch.m = 5;
    batch.p = 1;
    batch.targets = {0};
    batch.inputs.assign(5, 0.0);
    CHECK_THROWS_WITH_AS(forward_batch(m, batch), doctest::Contains("ConfigMismatch"), Error);
  }
}

TEST_CASE("forward matches the equation oracle across variants") {
  std::vector<ModelConfig> variants;
  {
    ModelConfig c = tiny_config();  // single block, plain
    variants.push_back(c);
    c.blocks = 2;  // no caf site exists yet
    c.caf = true;
    variants.push_back(c);
    c.blocks = 3;  // caf site at 3
    variants.push_back(c);
    c.heads = 2;
    c.attn_order = AttnOrder::local_first;
    variants.push_back(c);
    c.pos_mode = PosMode::fixed;
    c.heads = 1;
    variants.push_back(c);
    c.pos_mode = PosMode::learned;
    c.fusion = FusionMode::class_level;
    variants.push_back(c);
    c.fusion = FusionMode::feature_level;
    c.token_axis = TokenAxis::local;
    c.m = 4;  // feat() = m must divide heads
    variants.push_back(c);
    c.token_axis = TokenAxis::spectral;
    c.local_att = false;
    variants.push_back(c);
    c.local_att = true;
    c.post_norm = true;
    variants.push_back(c);
  }
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const ModelConfig& c = variants[vi];
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      CAPTURE(vi);
      CAPTURE(seed);
      Model m = Model::init(c, Rng::mix(1000, seed * 10 + vi));
      Rng rng(Rng::mix(2000, seed * 10 + vi));
      // spread the weights a bit so several blocks produce nontrivial values
      m.params.for_each([&rng](const std::string& name, Tensor& t) {
        if (name.find("ln") != std::string::npos) return;
        if (name.find("caf") != std::string::npos) return;
        for (double& v : t.value_mut()) v += 0.2 * (rng.uniform() - 0.5);
      });
      auto inst = random_instance(rng, c);
      Tensor leaf = m.graph->leaf({c.m, c.p * c.p}, inst, false);
      auto out = forward_instance(leaf, m.params, m.config);

      forward_oracle::Mat im(c.m, c.p * c.p);
      im.v = inst;
      auto ow = extract_weights(m.params);
      auto oo = forward_oracle::forward(im, ow, to_oracle(c));
      REQUIRE(oo.logits.size() == out.logits.numel());
      for (std::size_t i = 0; i < oo.logits.size(); ++i)
        CHECK(out.logits.value()[i] == doctest::Approx(oo.logits[i]).epsilon(1e-8));
      for (std::size_t i = 0; i < oo.x_final.v.size(); ++i)
        CHECK(out.x_final.value()[i] == doctest::Approx(oo.x_final.v[i]).epsilon(1e-8));
      // every attention row sums to 1
      for (const auto& a : oo.attn)
        for (std::size_t r = 0; r < a.r; ++r) {
          double s = 0.0;
          for (std::size_t j = 0; j < a.c; ++j) s += a.at(r, j);
          CHECK(std::abs(s - 1.0) <= 1e-10);
        }
    }
  }
}

TEST_CASE("permutation invariance without positions and local attention") {
  ModelConfig c = tiny_config();
  c.m = 5;
  c.pos_mode = PosMode::none;
  Model m = Model::init(c, 51);
  // W_l == 0: local attention cannot pass information
  for (auto& bp : m.params.blocks) {
    std::fill(bp.wq_l.value_mut().begin(), bp.wq_l.value_mut().end(), 0.0);
    std::fill(bp.wk_l.value_mut().begin(), bp.wk_l.value_mut().end(), 0.0);
    std::fill(bp.wv_l.value_mut().begin(), bp.wv_l.value_mut().end(), 0.0);
  }
  Rng rng(52);
  auto inst = random_instance(rng, c);
  auto permuted = inst;
  std::swap_ranges(permuted.begin(), permuted.begin() + 1, permuted.begin() + 3);
  std::swap_ranges(permuted.begin() + 1, permuted.begin() + 2, permuted.begin() + 4);
  Tensor la = m.graph->leaf({c.m, 1}, inst, false);
  Tensor lb = m.graph->leaf({c.m, 1}, permuted, false);
  auto a = forward_instance(la, m.params, m.config);
  auto b = forward_instance(lb, m.params, m.config);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(a.logits.value()[i] == doctest::Approx(b.logits.value()[i]).epsilon(1e-12));
}

TEST_CASE("parameter count regression") {
  ModelConfig c;
  c.m = 200;
  c.p = 7;
  c.d = 64;
  c.blocks = 5;
  c.heads = 4;
  c.classes = 16;
  c.ff_hidden = 4;
  c.caf = true;
  c.pos_mode = PosMode::learned;
  Model m = Model::init(c, 1);
  // shape-sum oracle, frozen: W + z0 + P + 5 blocks + 2 caf kernels + C
  std::size_t expect = 49 * 64 + 64 + 201 * 64;
  expect += 5 * (3 * 64 * 64 + 3 * 201 * 201 + 64 * 256 + 256 * 64 + 3 * (64 + 64));
  expect += 2 * 2 + 64 * 16;
  CHECK(expect == 850307);
  CHECK(m.params.count() == 850307);
}

TEST_CASE("checkpoint round-trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "hylite_model_test";
  fs::create_directories(dir);
  const auto path = (dir / "m.hyck").string();

  ModelConfig c = tiny_config();
  c.blocks = 3;
  c.caf = true;
  Model a = Model::init(c, 61);
  save_checkpoint(a.params, path);

  Model b = Model::init(c, 62);  // different init
  load_checkpoint(b.params, path);
  bool all_close = true;
  std::vector<double> va, vb;
  a.params.for_each([&va](const std::string&, const Tensor& t) {
    va.insert(va.end(), t.value().begin(), t.value().end());
  });
  b.params.for_each([&vb](const std::string&, const Tensor& t) {
    vb.insert(vb.end(), t.value().begin(), t.value().end());
  });
  REQUIRE(va.size() == vb.size());
  for (std::size_t i = 0; i < va.size(); ++i)
    all_close = all_close && std::abs(va[i] - vb[i]) <=
                                 1e-7 * std::max(1.0, std::abs(va[i]));  // f32 payload
  CHECK(all_close);

  SUBCASE("wrong geometry rejected") {
    ModelConfig c2 = tiny_config();
    c2.d = 8;
    Model w = Model::init(c2, 63);
    CHECK_THROWS_WITH_AS(load_checkpoint(w.params, path),
                         doctest::Contains("CheckpointMismatch"), Error);
  }
  SUBCASE("missing file") {
    Model w = Model::init(c, 64);
    CHECK_THROWS_AS(load_checkpoint(w.params, (dir / "absent.hyck").string()), Error);
  }
}
