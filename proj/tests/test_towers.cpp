#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "fd_check.hpp"
#include "units/model.hpp"

using namespace units;

namespace {

SegmentedTokens make_tokens(Rng& rng, Index p, Index s, Index f, Index c, Index v, Index d) {
  SegmentedTokens z;
  z.data = randn_tensor(rng, {p + s + f + c, v, d}, 1.0);
  z.p = p;
  z.s = s;
  z.f = f;
  z.c = c;
  return z;
}

}  // namespace

TEST_CASE("gen tower: residual collapse and horizon shapes") {
  Rng rng(81);
  ParameterRegistry reg;
  const Index d = 6, k = 4;
  auto emb = PatchEmbedding::create(reg, "embedding", k, d, 64, rng);
  auto tower = GenTower::create(reg, "towers.gen", d, 8, rng);
  auto z = make_tokens(rng, 2, 3, 3, 0, 2, d);

  SUBCASE("zero DyLinear and zero MLP second layer reduce to unpatchify") {
    tower.dyl.w->value.setZero();
    tower.dyl.b->value.setZero();
    tower.mlp_w2->value.setZero();
    tower.mlp_b2->value.setZero();
    auto out = gen_tower_forward(z, tower, emb, GenTarget::kGen);
    auto expect = unpatchify(z.gen_rows(), emb);
    CHECK(out->shape == expect->shape);
    for (Index i = 0; i < out->numel(); ++i) {
      CHECK(out->value[i] == doctest::Approx(expect->value[i]).epsilon(1e-12));
    }
  }

  SUBCASE("forecast horizon is f*k timesteps") {
    auto out = gen_tower_forward(z, tower, emb, GenTarget::kGen);
    CHECK(out->shape == Shape{12, 2});
    auto sample_out = gen_tower_forward(z, tower, emb, GenTarget::kSample);
    CHECK(sample_out->shape == Shape{12, 2});
  }

  SUBCASE("empty target segment is a contract error") {
    auto no_gen = make_tokens(rng, 2, 3, 0, 0, 2, d);
    CHECK_THROWS_AS(gen_tower_forward(no_gen, tower, emb, GenTarget::kGen), ContractError);
  }
}

TEST_CASE("gen tower gradients match finite differences") {
  Rng rng(83);
  ParameterRegistry reg;
  const Index d = 4, k = 2;
  auto emb = PatchEmbedding::create(reg, "embedding", k, d, 64, rng);
  auto tower = GenTower::create(reg, "towers.gen", d, 4, rng);
  auto z = make_tokens(rng, 1, 2, 2, 0, 2, d);
  auto target = randn_tensor(rng, {4, 2}, 1.0);
  auto loss_fn = [&] { return mse(gen_tower_forward(z, tower, emb, GenTarget::kGen), target); };
  CHECK(testing::max_rel_grad_error(reg, loss_fn) < 1e-4);
}

TEST_CASE("cls tower: residual collapse, single-token sequence, gradients") {
  Rng rng(87);
  ParameterRegistry reg;
  const Index d = 6;
  auto tower = ClsTower::create(reg, "towers.cls", d, 2, rng);
  auto z = make_tokens(rng, 2, 3, 0, 1, 2, d);

  SUBCASE("zero cross output projection and zero MLP leave the cls token") {
    tower.cross.wo->value.setZero();
    tower.cross.bo->value.setZero();
    tower.mlp_w2->value.setZero();
    tower.mlp_b2->value.setZero();
    auto out = cls_tower_forward(z, tower);
    auto cls = z.cls_row();
    for (Index i = 0; i < cls->numel(); ++i) {
      CHECK(out->value[i] == doctest::Approx(cls->value[i]).epsilon(1e-12));
    }
  }

  SUBCASE("cls-only sequence attends to itself") {
    auto solo = make_tokens(rng, 0, 0, 0, 1, 3, d);
    auto out = cls_tower_forward(solo, tower);
    CHECK(out->shape == Shape{1, 3, d});
  }

  SUBCASE("missing cls segment is a contract error") {
    auto no_cls = make_tokens(rng, 2, 3, 0, 0, 2, d);
    CHECK_THROWS_AS(cls_tower_forward(no_cls, tower), ContractError);
  }

  SUBCASE("gradients match finite differences") {
    ParameterRegistry reg2;
    Rng rng2(89);
    auto tower2 = ClsTower::create(reg2, "towers.cls", 4, 2, rng2);
    tower2.cross.wo->value = xavier_tensor(rng2, {4, 4})->value;
    auto z2 = make_tokens(rng2, 1, 2, 0, 1, 2, 4);
    auto target = randn_tensor(rng2, {1, 2, 4}, 1.0);
    auto loss_fn = [&] { return mse(cls_tower_forward(z2, tower2), target); };
    CHECK(testing::max_rel_grad_error(reg2, loss_fn) < 1e-4);
  }
}

TEST_CASE("match_class: exact hit, invariances, brute-force scan") {
  Rng rng(91);
  const Index v = 2, d = 5;
  ClassEmbeddings emb{randn_tensor(rng, {4, v, d}, 1.0), ClassEmbeddingMode::kTrained};

  auto z_exact = Tensor::create({1, v, d}, emb.z_e->value.segment(2 * v * d, v * d));
  CHECK(match_class(z_exact, emb).first == 2);

  for (int trial = 0; trial < 50; ++trial) {
    auto z = randn_tensor(rng, {1, v, d}, 1.5);
    auto [idx, dist] = match_class(z, emb);
    CHECK(dist.size() == 4);
    // Exhaustive scan.
    Index best = 0;
    double best_d = dist[0];
    for (Index i = 1; i < 4; ++i) {
      if (dist[i] < best_d) {
        best_d = dist[i];
        best = i;
      }
      CHECK(dist[static_cast<std::size_t>(i)] >= 0.0);
    }
    CHECK(idx == best);

    // Common translation by a shared tensor preserves the argmin.
    auto shift = randn_tensor(rng, {1, v, d}, 3.0);
    auto z_t = add(z, shift);
    ClassEmbeddings emb_t{Tensor::zeros({4, v, d}), emb.mode};
    for (Index i = 0; i < 4; ++i) {
      emb_t.z_e->value.segment(i * v * d, v * d) =
          emb.z_e->value.segment(i * v * d, v * d) + shift->value;
    }
    CHECK(match_class(z_t, emb_t).first == idx);

    // Common positive scaling preserves the argmin.
    auto z_s = scale(z, 2.75);
    ClassEmbeddings emb_s{Tensor::create({4, v, d}, emb.z_e->value * 2.75), emb.mode};
    CHECK(match_class(z_s, emb_s).first == idx);
  }
}

TEST_CASE("match_class breaks ties toward the lowest index") {
  ClassEmbeddings emb{Tensor::zeros({3, 1, 2}), ClassEmbeddingMode::kTrained};
  auto z = Tensor::from_list({1, 1, 2}, {1.0, 1.0});
  CHECK(match_class(z, emb).first == 0);
}

TEST_CASE("class_logits: minimal distance has maximal logit, differentiable") {
  Rng rng(93);
  const Index v = 1, d = 4;
  ClassEmbeddings emb{randn_tensor(rng, {3, v, d}, 1.0), ClassEmbeddingMode::kTrained};
  auto z = randn_tensor(rng, {1, v, d}, 1.0);
  auto logits = class_logits(z, emb);
  auto [idx, dist] = match_class(z, emb);
  Index max_logit = 0;
  for (Index i = 1; i < 3; ++i) {
    if (logits->value[i] > logits->value[max_logit]) max_logit = i;
  }
  CHECK(max_logit == idx);
  for (Index i = 0; i < 3; ++i) {
    CHECK(logits->value[i] == doctest::Approx(-dist[static_cast<std::size_t>(i)]));
  }

  ParameterRegistry reg;
  reg.add("class_embeddings.task", emb.z_e);
  auto loss_fn = [&] { return cross_entropy(class_logits(z, emb), 1); };
  CHECK(testing::max_rel_grad_error(reg, loss_fn) < 1e-4);
}

TEST_CASE("average_class_embeddings") {
  Rng rng(95);
  const Index v = 2, d = 3;
  auto a = randn_tensor(rng, {1, v, d}, 1.0);
  auto b = randn_tensor(rng, {1, v, d}, 1.0);
  auto c = randn_tensor(rng, {1, v, d}, 1.0);

  SUBCASE("one sample per class reproduces the samples") {
    auto emb = average_class_embeddings({{a, 0}, {b, 1}}, 2);
    for (Index i = 0; i < v * d; ++i) {
      CHECK(emb.z_e->value[i] == doctest::Approx(a->value[i]));
      CHECK(emb.z_e->value[v * d + i] == doctest::Approx(b->value[i]));
    }
    CHECK(emb.mode == ClassEmbeddingMode::kAveraged);
  }

  SUBCASE("duplicated samples do not move the mean") {
    auto base = average_class_embeddings({{a, 0}, {b, 1}}, 2);
    auto dup = average_class_embeddings({{a, 0}, {a, 0}, {a, 0}, {b, 1}}, 2);
    for (Index i = 0; i < base.z_e->numel(); ++i) {
      CHECK(base.z_e->value[i] == doctest::Approx(dup.z_e->value[i]));
    }
  }

  SUBCASE("two-sample class is the midpoint") {
    auto emb = average_class_embeddings({{a, 0}, {c, 0}, {b, 1}}, 2);
    for (Index i = 0; i < v * d; ++i) {
      CHECK(emb.z_e->value[i] == doctest::Approx(0.5 * (a->value[i] + c->value[i])));
    }
  }

  SUBCASE("empty class names the class in the error") {
    try {
      average_class_embeddings({{a, 0}}, 2);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find('1') != std::string::npos);
    }
  }
}

TEST_CASE("tower sharing: one gen and one cls tower per model") {
  UnitsModel model({2, 8, 4, 2, 3, 8, 32}, 7);
  model.add_token_set("a", 1);
  model.add_token_set("b", 3);
  model.add_class_embeddings("clf", 2, 3);
  Index n_gen_dyl = 0, n_cls_mlp = 0;
  for (const auto& [name, t] : model.registry().items()) {
    if (name.rfind("towers.gen.dyl.w", 0) == 0) ++n_gen_dyl;
    if (name.rfind("towers.cls.mlp_w1", 0) == 0) ++n_cls_mlp;
    // No per-task head paths exist.
    CHECK(name.find("head") == std::string::npos);
  }
  CHECK(n_gen_dyl == 1);
  CHECK(n_cls_mlp == 1);
}
