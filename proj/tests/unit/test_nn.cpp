/*
 * Copyright (C) 2026 The dtformer authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dtformer/errors.hpp"
#include "dtformer/nn/model.hpp"
#include "dtformer/nn/patches.hpp"
#include "dtformer/nn/predict.hpp"
#include "dtformer/parallel.hpp"
#include "dtformer/random.hpp"
#include "dtformer/train/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace dtf;
using namespace dtf::nn;
using ad::Matrix;

namespace {

Matrix random_matrix(ad::Index r, ad::Index c, std::uint64_t sub, double scale = 1.0)
{
  RandomStream rng(9, stream_id(Stream::Test, sub));
  Matrix m(r, c);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

ModelConfig small_config()
{
  ModelConfig c;
  c.patch = 3;
  c.width = 8;
  c.head_width = 4;
  c.heads = 2;
  c.modules = 2;
  return c;
}

Volume4D ramp_volume(Dims d, std::size_t channels)
{
  Volume4D v(d, channels);
  for (std::size_t i = 0; i < v.data().size(); ++i) v.data()[i] = static_cast<double>(i) * 0.25;
  return v;
}

Matrix permute_rows(const Matrix& m, const std::vector<ad::Index>& perm)
{
  Matrix out(m.rows(), m.cols());
  for (ad::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

} // namespace

TEST_CASE("patch tiling")
{
  CHECK(patch_origins({5, 5, 5}, 5, 5).size() == 1);
  CHECK(extract_patches(ramp_volume({5, 5, 5}, 6), 5, 5).front().features.rows() == 125);
  CHECK(patch_origins({10, 5, 5}, 5, 5).size() == 2);
  CHECK(axis_origins(12, 5, 5) == std::vector<std::size_t>{0, 5, 7});
  CHECK(axis_origins(7, 5, 1) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(patch_origins({2, 2, 2}, 5, 5), Error);
  try {
    axis_origins(2, 5, 5);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Patching);
    CHECK(std::string(e.what()).find("--patch") != std::string::npos);
  }

  // Row-major order within the patch.
  const Volume4D v = ramp_volume({6, 6, 6}, 2);
  const PatchSequence p = extract_patch(v, {1, 0, 1}, 3);
  CHECK(p.features(5, 1) == v.at(v.voxel_index(1 + 0, 0 + 1, 1 + 2), 1));

  // Non-overlapping tiling reassembles bit-exactly.
  const Volume4D src = ramp_volume({10, 15, 5}, 3);
  Volume4D back(src.dims(), 3, -1.0);
  for (const auto& seq : extract_patches(src, 5, 5)) insert_patch(back, seq, 5);
  CHECK(back.data() == src.data());
}

TEST_CASE("model shapes and parameter layout")
{
  const ModelConfig cfg;
  Model s(ModelKind::S, cfg);
  CHECK(s.params().at("sig.embed.p").shape() == ad::Shape{125, 64});
  CHECK(s.params().at("sig.m1.Wo").shape() == ad::Shape{128, 64});
  CHECK(s.params().at("head.W").shape() == ad::Shape{64, 6});
  train::he_initialize(s.params(), 1);
  const PatchSequence x{random_matrix(125, 6, 1, 0.3).array() + 0.5, {0, 0, 0}};
  CHECK(s.forward(x).rows() == 125);
  CHECK(s.forward(x).cols() == 6);

  Model st = Model::stage_two(s);
  CHECK(st.params().at("head.W").shape() == ad::Shape{128, 6});
  CHECK_FALSE(st.params().at("s.head.W").trainable);
  train::he_initialize(st.params(), 2);
  CHECK(ad::parameter_hash(st.stage_one().params()) == ad::parameter_hash(s.params()));
  const PatchSequence t{random_matrix(125, 6, 2), {0, 0, 0}};
  CHECK(st.forward(x, t).rows() == 125);
  CHECK(st.forward(x, t).cols() == 6);

  const PatchSequence moved{t.features, {5, 0, 0}};
  CHECK_THROWS_AS(st.forward(x, moved), Error);
  CHECK_THROWS_AS(s.forward(PatchSequence{Matrix::Zero(125, 5), {}}), ShapeError);
}

TEST_CASE("uniform attention averages the values")
{
  ModelConfig cfg = small_config();
  cfg.heads = 1;
  cfg.stabilizers = false;
  ad::ParameterSet ps;
  add_trunk_parameters(ps, "", cfg, 6);
  train::he_initialize(ps, 3);
  ps.at("m0.h0.Wq").value.setZero();
  ps.at("m0.h0.Wk").value.setZero();
  ps.at("m0.bo").value = random_matrix(1, 8, 4);

  ad::Graph g;
  const auto x = g.input("x", 27, 8);
  const auto y = attention_module(g, ps, "m0.", cfg, x);
  const Matrix xin = random_matrix(27, 8, 5);
  g.forward({{x, &xin}});

  const Matrix v = xin * ps.at("m0.h0.Wv").value;
  const Matrix mean_v = v.colwise().mean();
  const Matrix expect = (mean_v * ps.at("m0.Wo").value + ps.at("m0.bo").value).cwiseMax(0.0);
  for (ad::Index r = 0; r < 27; ++r) CHECK((g.value(y).row(r) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a single-element sequence attends to itself")
{
  ModelConfig cfg = small_config();
  cfg.patch = 1;
  cfg.heads = 1;
  cfg.stabilizers = false;
  ad::ParameterSet ps;
  add_trunk_parameters(ps, "", cfg, 6);
  train::he_initialize(ps, 6);
  ps.at("m0.bo").value.setConstant(0.2);
  ad::Graph g;
  const auto x = g.input("x", 1, 8);
  const auto y = attention_module(g, ps, "m0.", cfg, x);
  const Matrix xin = random_matrix(1, 8, 7);
  g.forward({{x, &xin}});
  const Matrix expect = (xin * ps.at("m0.h0.Wv").value * ps.at("m0.Wo").value + ps.at("m0.bo").value).cwiseMax(0.0);
  CHECK((g.value(y) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("softmax attention rows sum to one")
{
  ModelConfig cfg;
  ad::ParameterSet ps;
  add_trunk_parameters(ps, "", cfg, 6);
  train::he_initialize(ps, 8);
  ad::Graph g;
  const auto x = g.input("x", 125, 64);
  const auto q = g.matmul(x, g.parameter(ps.at("m0.h0.Wq")));
  const auto k = g.matmul(x, g.parameter(ps.at("m0.h0.Wk")));
  const auto a = g.softmax_rows(g.scale(g.matmul_nt(q, k), 0.125));
  const Matrix xin = random_matrix(125, 64, 9, 2.0);
  g.forward({{x, &xin}});
  for (ad::Index r = 0; r < 125; ++r) CHECK(std::abs(g.value(a).row(r).sum() - 1.0) < 1e-12);
}

TEST_CASE("permutation equivariance without positional encoding")
{
  for (auto mode : {AttentionMode::Softmax, AttentionMode::Literal}) {
    ModelConfig cfg = small_config();
    cfg.stabilizers = false;
    cfg.attention = mode;
    Model s(ModelKind::S, cfg);
    train::he_initialize(s.params(), 10);
    for (auto& p : s.params())
      if (p.name.ends_with(".bo")) p.value.setConstant(0.1);
    s.params().at("sig.embed.p").value.setZero();

    std::vector<ad::Index> perm(27);
    std::iota(perm.begin(), perm.end(), 0);
    RandomStream rng(1, stream_id(Stream::Test, 11));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

    const Matrix x = random_matrix(27, 6, 12, 0.4).array() + 0.6;
    const Matrix out = s.forward(PatchSequence{x, {}});
    const Matrix out_perm = s.forward(PatchSequence{permute_rows(x, perm), {}});
    const double scale = out.cwiseAbs().maxCoeff();
    CHECK((out_perm - permute_rows(out, perm)).cwiseAbs().maxCoeff() <= 1e-12 * scale);

    // A nonzero positional encoding breaks the symmetry.
    s.params().at("sig.embed.p").value = random_matrix(27, 8, 13);
    const Matrix a = s.forward(PatchSequence{x, {}});
    const Matrix b = s.forward(PatchSequence{permute_rows(x, perm), {}});
    CHECK((b - permute_rows(a, perm)).cwiseAbs().maxCoeff() > 1e-3 * a.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("Model ST ignores the tensor branch when its head rows are zero")
{
  const ModelConfig cfg = small_config();
  Model s(ModelKind::S, cfg);
  train::he_initialize(s.params(), 14);
  Model st = Model::stage_two(s);
  train::he_initialize(st.params(), 15);
  st.params().at("head.W").value.bottomRows(8).setZero();
  const PatchSequence x{random_matrix(27, 6, 16), {}};
  const Matrix a = st.forward(x, PatchSequence{random_matrix(27, 6, 17), {}});
  const Matrix b = st.forward(x, PatchSequence{random_matrix(27, 6, 18), {}});
  CHECK(a == b);
}

TEST_CASE("checkpoint round trip of a model")
{
  ModelConfig cfg = small_config();
  cfg.attention = AttentionMode::Literal;
  Model s(ModelKind::S, cfg);
  train::he_initialize(s.params(), 19);
  Model st = Model::stage_two(s);
  train::he_initialize(st.params(), 20);
  const auto path = std::filesystem::temp_directory_path() / "dtf_model_rt.ckpt";
  st.save(path, {{"seed", 20}});
  nlohmann::json meta;
  const Model back = Model::load(path, &meta);
  CHECK(back.kind() == ModelKind::ST);
  CHECK(back.config().attention == AttentionMode::Literal);
  CHECK(meta["seed"] == 20);
  CHECK(meta["normalization"]["tensor_scale"] == 1000.0);
  CHECK(ad::parameter_hash(back.params()) == ad::parameter_hash(st.params()));
  std::filesystem::remove(path);
}

TEST_CASE("volume prediction")
{
  const ModelConfig cfg = small_config();
  Model s(ModelKind::S, cfg);
  train::he_initialize(s.params(), 21);
  s.params().at("head.b").value.setConstant(0.5);

  SUBCASE("shape and delegation to a single patch")
  {
    Volume4D sig({3, 3, 3}, 6);
    const Matrix x = random_matrix(27, 6, 22, 0.2).array() + 0.5;
    insert_patch(sig, {x, {0, 0, 0}}, 3);
    const Volume4D out = predict_volume(s, sig, nullptr);
    CHECK(out.channels() == 6);
    CHECK(out.dims() == sig.dims());
    const Matrix direct = s.forward(PatchSequence{x, {}}) / cfg.tensor_scale;
    CHECK((extract_patch(out, {0, 0, 0}, 3).features - direct).cwiseAbs().maxCoeff() < 1e-15);
  }

  SUBCASE("constant input gives a constant interior")
  {
    Volume4D sig({9, 9, 9}, 6, 0.4);
    const Volume4D out = predict_volume(s, sig, nullptr, 1);
    const auto centre = out.voxel(4, 4, 4);
    for (std::size_t x = 2; x < 7; ++x)
      for (std::size_t y = 2; y < 7; ++y)
        for (std::size_t z = 2; z < 7; ++z)
          for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(out.voxel(x, y, z)[c] - centre[c]) < 1e-15);
  }

  SUBCASE("background is zeroed and channel count is checked")
  {
    Volume4D sig({4, 4, 4}, 6, 0.4);
    Volume4D mask({4, 4, 4}, 1, 1.0);
    mask.at(0, 0) = 0.0;
    const Volume4D out = predict_volume(s, sig, &mask, 1);
    for (std::size_t c = 0; c < 6; ++c) CHECK(out.at(0, c) == 0.0);
    CHECK(out.at(1, 0) != 0.0);
    CHECK_THROWS_AS(predict_volume(s, Volume4D({4, 4, 4}, 7), nullptr), ShapeError);
  }

  SUBCASE("thread count does not change results")
  {
    Volume4D sig({6, 6, 6}, 6);
    RandomStream rng(4, stream_id(Stream::Test, 23));
    for (double& v : sig.data()) v = 0.3 + 0.5 * rng.uniform();
    set_thread_count(1);
    const Volume4D one = predict_volume(s, sig, nullptr, 1);
    set_thread_count(3);
    const Volume4D three = predict_volume(s, sig, nullptr, 1);
    set_thread_count(0);
    CHECK(one.data() == three.data());
  }
}

TEST_CASE("signal normalization")
{
  const GradientScheme scheme = skare6_scheme();
  Volume4D dwi({2, 1, 1}, 7);
  for (std::size_t c = 0; c < 7; ++c) dwi.at(0, c) = c == 0 ? 1000.0 : 500.0 + c;
  dwi.at(0, 3) = 50000.0;
  const Volume4D n = normalize_signals(dwi, scheme, ModelConfig{});
  CHECK(n.channels() == 6);
  CHECK(n.at(0, 0) == doctest::Approx(0.501));
  CHECK(n.at(0, 2) == 10.0);
  CHECK(n.at(1, 0) == 0.0);
  CHECK_THROWS_AS(normalize_signals(Volume4D({1, 1, 1}, 6), scheme, ModelConfig{}), ShapeError);
}
