#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adfseg/alignment.hpp"
#include "adfseg/disentangle.hpp"
#include "adfseg/encoder.hpp"
#include "adfseg/errors.hpp"
#include "adfseg/fusion.hpp"
#include "adfseg/model.hpp"
#include "testutil.hpp"

using namespace adfseg;
using nn::Tensor;
using nn::Var;
using testutil::rand_tensor;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.patch_size = 4;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.shallow_taps = 1;
  cfg.heads = 2;
  return cfg;
}

ModelConfig tiny_model(Mode mode = Mode::multimodal) {
  ModelConfig cfg;
  cfg.encoder = tiny_encoder();
  cfg.image_size = 16;
  cfg.mode = mode;
  return cfg;
}

}  // namespace

TEST_CASE("encoder config validation") {
  auto cfg = tiny_encoder();
  cfg.patch_size = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_encoder();
  cfg.shallow_taps = 2;  // must stay below depth
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_encoder();
  cfg.heads = 3;  // dim 8 not divisible
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(tiny_encoder().validate());
}

TEST_CASE("encoder keeps (B, N, D) at every stage") {
  auto cfg = tiny_encoder();
  nn::ParamStore ps;
  Rng rng(1), drng(2);
  TwoBranchEncoder enc(cfg, 16, ps, rng);
  CHECK(enc.tokens() == 16);  // (16/4)^2

  auto xw = nn::constant(rand_tensor(drng, {3, 1, 16, 16}));
  auto xn = nn::constant(rand_tensor(drng, {3, 1, 16, 16}));
  auto out = enc.encode(xw, xn);
  REQUIRE(out.shallow_w.size() == 1);
  REQUIRE(out.shallow_n.size() == 1);
  CHECK(out.shallow_w[0].shape() == nn::Shape{3, 16, 8});
  CHECK(out.shallow_n[0].shape() == nn::Shape{3, 16, 8});
  CHECK(out.deep_w.shape() == nn::Shape{3, 16, 8});
  CHECK(out.deep_n.shape() == nn::Shape{3, 16, 8});

  // encode_single replays exactly one branch of the pair forward
  auto [shallow, deep] = enc.encode_single(xw, 0);
  CHECK(deep.value().vec() == out.deep_w.value().vec());
  CHECK(shallow[0].value().vec() == out.shallow_w[0].value().vec());
  auto [shallow_n, deep_n] = enc.encode_single(xn, 1);
  CHECK(deep_n.value().vec() == out.deep_n.value().vec());
  CHECK(shallow_n[0].value().vec() == out.shallow_n[0].value().vec());
}

TEST_CASE("branch weights are separate unless share_weights") {
  Rng drng(3);
  auto x = nn::constant(rand_tensor(drng, {2, 1, 16, 16}));

  auto cfg = tiny_encoder();
  nn::ParamStore ps1;
  Rng r1(5);
  TwoBranchEncoder separate(cfg, 16, ps1, r1);
  auto out1 = separate.encode(x, x);
  CHECK(out1.deep_w.value().vec() != out1.deep_n.value().vec());

  cfg.share_weights = true;
  nn::ParamStore ps2;
  Rng r2(5);
  TwoBranchEncoder shared(cfg, 16, ps2, r2);
  auto out2 = shared.encode(x, x);
  CHECK(out2.deep_w.value().vec() == out2.deep_n.value().vec());
  CHECK(ps2.count() < ps1.count());  // one branch's parameters dropped
}

TEST_CASE("concat_multiscale stacks features along the last axis") {
  Rng rng(4);
  Tensor a = rand_tensor(rng, {2, 3, 4});
  Tensor b = rand_tensor(rng, {2, 3, 4});
  auto cat = concat_multiscale({nn::constant(a), nn::constant(b)});
  REQUIRE(cat.shape() == nn::Shape{2, 3, 8});
  for (int64_t bi = 0; bi < 2; ++bi) {
    for (int64_t t = 0; t < 3; ++t) {
      for (int64_t d = 0; d < 4; ++d) {
        CHECK(cat.value().at(bi, t, d) == a.at(bi, t, d));
        CHECK(cat.value().at(bi, t, d + 4) == b.at(bi, t, d));
      }
    }
  }
}

TEST_CASE("global descriptor: attention rows are a distribution") {
  Rng rng(6), drng(7);
  nn::ParamStore ps;
  nn::Linear scorer(ps, rng, "scorer", 6, 1);
  auto f = nn::constant(rand_tensor(drng, {3, 5, 6}));

  auto gd = global_descriptor(f, scorer);
  CHECK(gd.avg.shape() == nn::Shape{3, 6});
  CHECK(gd.weighted.shape() == nn::Shape{3, 6});
  CHECK(gd.global.shape() == nn::Shape{3, 6});
  REQUIRE(gd.attention.shape() == nn::Shape{3, 5});

  for (int64_t b = 0; b < 3; ++b) {
    double total = 0;
    for (int64_t t = 0; t < 5; ++t) {
      CHECK(gd.attention.value().at(b, t) >= 0.0);
      total += gd.attention.value().at(b, t);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }

  // avg is the plain token mean; global recombines the two pooling routes
  auto avg = global_average(f);
  CHECK(gd.avg.value().vec() == avg.value().vec());
  for (int64_t i = 0; i < gd.global.numel(); ++i) {
    CHECK(gd.global.value()[i] == gd.avg.value()[i] + gd.weighted.value()[i]);
  }

  // weighted pooling matches the attention-times-token loop
  for (int64_t b = 0; b < 3; ++b) {
    for (int64_t d = 0; d < 6; ++d) {
      double acc = 0;
      for (int64_t t = 0; t < 5; ++t) {
        acc += gd.attention.value().at(b, t) * f.value().at(b, t, d);
      }
      CHECK(gd.weighted.value().at(b, d) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("projectors start as the identity") {
  Rng rng(8), drng(9);
  nn::ParamStore ps;
  Projectors proj(ps, rng, "proj", 8);
  auto fw = nn::constant(rand_tensor(drng, {2, 4, 8}));
  auto fn = nn::constant(rand_tensor(drng, {2, 4, 8}));

  auto bundle = project(fw, fn, proj);
  CHECK(bundle.Z_ws.value().vec() == fw.value().vec());
  CHECK(bundle.Z_wp.value().vec() == fw.value().vec());
  CHECK(bundle.Z_ns.value().vec() == fn.value().vec());
  CHECK(bundle.Z_np.value().vec() == fn.value().vec());

  // pooled vectors are token means
  CHECK(bundle.z_ws.shape() == nn::Shape{2, 8});
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t d = 0; d < 8; ++d) {
      double acc = 0;
      for (int64_t t = 0; t < 4; ++t) acc += fw.value().at(b, t, d);
      CHECK(bundle.z_ws.value().at(b, d) == doctest::Approx(acc / 4).epsilon(1e-12));
    }
  }

  auto flat = project(fw, fn, proj, /*flatten_tokens=*/true);
  CHECK(flat.z_ws.shape() == nn::Shape{2, 32});
  CHECK(flat.z_ws.value().vec() == fw.value().vec());
}

TEST_CASE("aggregate_shared and fuse shapes and contracts") {
  Rng rng(10), drng(11);
  nn::ParamStore ps;
  nn::Linear agg(ps, rng, "agg", 16, 8);
  FusionMaps maps(ps, rng, "map", 8);

  auto zws = nn::constant(rand_tensor(drng, {2, 4, 8}));
  auto zns = nn::constant(rand_tensor(drng, {2, 4, 8}));
  auto zsh = aggregate_shared(zws, zns, agg);
  CHECK(zsh.shape() == nn::Shape{2, 4, 8});

  auto zwp = nn::constant(rand_tensor(drng, {2, 4, 8}));
  auto znp = nn::constant(rand_tensor(drng, {2, 4, 8}));
  auto fused = fuse(zsh, zwp, znp, maps);
  CHECK(fused.shape() == nn::Shape{2, 4, 8});

  auto bad = nn::constant(rand_tensor(drng, {2, 5, 8}));
  CHECK_THROWS_AS(aggregate_shared(zws, bad, agg), ContractError);
  CHECK_THROWS_AS(fuse(zsh, bad, znp, maps), ContractError);
}

TEST_CASE("decoder maps tokens back to pixel logits") {
  Rng rng(12), drng(13);
  nn::ParamStore ps;
  Decoder dec(ps, rng, "dec", 8, 4, 8);
  auto z = nn::constant(rand_tensor(drng, {2, 16, 8}));
  auto logits = dec(z);
  CHECK(logits.shape() == nn::Shape{2, 2, 16, 16});

  auto wrong_dim = nn::constant(rand_tensor(drng, {2, 16, 4}));
  CHECK_THROWS_AS(dec(wrong_dim), ContractError);
}

TEST_CASE("model construction is seed-deterministic") {
  Model a(tiny_model(), 5), b(tiny_model(), 5), c(tiny_model(), 6);
  REQUIRE(a.params().count() == b.params().count());
  bool equal = true, differ = false;
  for (int64_t i = 0; i < a.params().count(); ++i) {
    const auto& pa = a.params().params()[static_cast<size_t>(i)];
    const auto& pb = b.params().params()[static_cast<size_t>(i)];
    const auto& pc = c.params().params()[static_cast<size_t>(i)];
    equal = equal && (pa.value().vec() == pb.value().vec());
    differ = differ || (pa.value().vec() != pc.value().vec());
  }
  CHECK(equal);
  CHECK(differ);
}

TEST_CASE("model forward shapes and prediction binariness") {
  Model model(tiny_model(), 1);
  Rng drng(14);
  Tensor xw = rand_tensor(drng, {2, 1, 16, 16}, 0.5, 0.1);
  Tensor xn = rand_tensor(drng, {2, 1, 16, 16}, 0.5, 0.1);

  auto out = model.forward(xw, xn);
  CHECK(out.logits.shape() == nn::Shape{2, 2, 16, 16});
  CHECK(out.desc_w.global.defined());
  CHECK(out.bundle.z_ws.shape() == nn::Shape{2, 8});

  Tensor pred = model.predict(xw, xn);
  REQUIRE(pred.shape() == nn::Shape{2, 16, 16});
  for (int64_t i = 0; i < pred.numel(); ++i) CHECK((pred[i] == 0.0 || pred[i] == 1.0));
}

TEST_CASE("single-modality modes ignore the other input") {
  Model model(tiny_model(Mode::single_w), 2);
  Rng drng(15);
  Tensor xw = rand_tensor(drng, {2, 1, 16, 16}, 0.5, 0.1);
  Tensor xn1 = rand_tensor(drng, {2, 1, 16, 16}, 0.5, 0.1);
  Tensor xn2 = rand_tensor(drng, {2, 1, 16, 16}, 0.5, 0.1);

  auto a = model.forward(xw, xn1);
  auto b = model.forward(xw, xn2);
  CHECK(a.logits.value().vec() == b.logits.value().vec());
  CHECK(!a.bundle.z_ws.defined());  // no disentangling path in single mode

  Model mn(tiny_model(Mode::single_n), 2);
  auto c = mn.forward(xw, xn1);
  auto d = mn.forward(xn1, xn1);  // x_w ignored
  CHECK(c.logits.value().vec() == d.logits.value().vec());

  // fewer parameters than the full pipeline
  Model full(tiny_model(), 2);
  CHECK(model.params().count() < full.params().count());
}

TEST_CASE("gradient reaches every pipeline stage from the logits") {
  Model model(tiny_model(), 3);
  Rng drng(16);
  Tensor xw = rand_tensor(drng, {2, 1, 16, 16}, 0.5, 0.1);
  Tensor xn = rand_tensor(drng, {2, 1, 16, 16}, 0.5, 0.1);

  auto out = model.forward(xw, xn);
  // squaring makes the loss curvature nonzero in every logit
  auto loss = nn::mean_all(nn::mul(out.logits, out.logits));
  nn::backward(loss);

  auto grad_norm_of = [&](const std::string& needle) {
    double norm = 0;
    bool found = false;
    for (const auto& p : model.params().params()) {
      if (p.node()->name.find(needle) == std::string::npos) continue;
      found = true;
      if (!p.node()->has_grad()) continue;
      for (int64_t i = 0; i < p.node()->grad.numel(); ++i) {
        norm += p.node()->grad[i] * p.node()->grad[i];
      }
    }
    REQUIRE(found);
    return norm;
  };

  CHECK(grad_norm_of(".embed") > 0);  // patch embedding, so the chain spans the input end
  CHECK(grad_norm_of("proj.") > 0);
  CHECK(grad_norm_of("fusion.agg") > 0);
  CHECK(grad_norm_of("fusion.map") > 0);
  CHECK(grad_norm_of("dec.") > 0);
}
