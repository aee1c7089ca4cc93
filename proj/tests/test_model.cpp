#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "stepalign/model.hpp"
#include "stepalign/rng.hpp"
#include "stepalign/util.hpp"

using namespace stepalign;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.C_v = 6;
  cfg.C_t = 5;
  cfg.D = 8;
  cfg.d = 4;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.n_heads = 2;
  cfg.max_T = 32;
  cfg.max_K = 8;
  return cfg;
}

Tensor random_tensor(Rng& rng, int r, int c) {
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.data()) v = rng.gaussian();
  return t;
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("heads must divide D") {
    cfg.n_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("projection cannot widen") {
    cfg.d = 16;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("odd D breaks the positional encoding") {
    cfg.D = 9;
    cfg.n_heads = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("dropout below 1") {
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("init is deterministic in the seed") {
  ModelConfig cfg = tiny_config();
  Rng r1(5), r2(5), r3(6);
  ModelParams a = ModelParams::init(cfg, r1);
  ModelParams b = ModelParams::init(cfg, r2);
  ModelParams c = ModelParams::init(cfg, r3);

  auto na = a.named_params(), nb = b.named_params(), nc = c.named_params();
  REQUIRE(na.size() == nb.size());
  bool all_equal = true, any_diff_vs_c = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    all_equal = all_equal && na[i].second.data() == nb[i].second.data();
    any_diff_vs_c = any_diff_vs_c || na[i].second.data() != nc[i].second.data();
  }
  CHECK(all_equal);
  CHECK(any_diff_vs_c);

  // Biases start at zero, weights do not.
  for (const auto& [name, t] : na) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
      for (double v : t.data()) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("embedding respects capacity and shape limits") {
  ModelConfig cfg = tiny_config();
  Rng rng(1);
  ModelParams params = ModelParams::init(cfg, rng);
  Tensor x_v = random_tensor(rng, 10, cfg.C_v);
  Tensor x_j = random_tensor(rng, 3, cfg.C_t);

  Embedded e = embed(x_v, x_j, TrackMode::step, params);
  CHECK(e.h_v.rows() == 10);
  CHECK(e.h_v.cols() == cfg.D);
  CHECK(e.h_j.rows() == 3);
  CHECK(e.h_j.cols() == cfg.D);

  SUBCASE("video longer than max_T") {
    Tensor big = random_tensor(rng, cfg.max_T + 1, cfg.C_v);
    CHECK_THROWS_AS(embed(big, x_j, TrackMode::step, params), CapacityError);
  }
  SUBCASE("more sentences than max_K") {
    Tensor big = random_tensor(rng, cfg.max_K + 1, cfg.C_t);
    CHECK_THROWS_AS(embed(x_v, big, TrackMode::step, params), CapacityError);
  }
  SUBCASE("wrong video feature width") {
    Tensor bad = random_tensor(rng, 10, cfg.C_v + 1);
    CHECK_THROWS_AS(embed(bad, x_j, TrackMode::step, params), ShapeError);
  }
  SUBCASE("wrong text feature width") {
    Tensor bad = random_tensor(rng, 3, cfg.C_t + 2);
    CHECK_THROWS_AS(embed(x_v, bad, TrackMode::step, params), ShapeError);
  }
}

TEST_CASE("narration mode adds the learned position table, step mode does not") {
  ModelConfig cfg = tiny_config();
  Rng rng(2);
  ModelParams params = ModelParams::init(cfg, rng);
  Tensor x_v = random_tensor(rng, 6, cfg.C_v);
  Tensor x_j = random_tensor(rng, 4, cfg.C_t);

  Embedded narr = embed(x_v, x_j, TrackMode::narration, params);
  Embedded step = embed(x_v, x_j, TrackMode::step, params);

  // h_j difference is exactly the first K rows of p_j.
  for (int k = 0; k < 4; ++k) {
    for (int c = 0; c < cfg.D; ++c) {
      CHECK(narr.h_j.at(k, c) - step.h_j.at(k, c) ==
            doctest::Approx(params.p_j.at(k, c)).epsilon(1e-12));
    }
  }
  // Video embedding is mode-independent.
  CHECK(narr.h_v.data() == step.h_v.data());
}

TEST_CASE("forward yields bounded cosine scores and a two-column head") {
  ModelConfig cfg = tiny_config();
  Rng rng(3);
  ModelParams params = ModelParams::init(cfg, rng);
  Tensor x_v = random_tensor(rng, 12, cfg.C_v);
  Tensor x_j = random_tensor(rng, 5, cfg.C_t);

  ForwardResult out = forward(x_v, x_j, TrackMode::narration, params);
  CHECK(out.A.kind == MatrixKind::predicted_score);
  REQUIRE(out.A.K() == 5);
  REQUIRE(out.A.T() == 12);
  for (double v : out.A.values.data()) {
    CHECK(std::abs(v) <= 1.0 + 1e-9);
    CHECK(std::isfinite(v));
  }
  CHECK(out.y_hat.rows() == 5);
  CHECK(out.y_hat.cols() == 2);
}

TEST_CASE("step-mode scores are permutation-equivariant, narration-mode scores are not") {
  ModelConfig cfg = tiny_config();
  Rng rng(4);
  ModelParams params = ModelParams::init(cfg, rng);
  Tensor x_v = random_tensor(rng, 9, cfg.C_v);
  Tensor x_j = random_tensor(rng, 4, cfg.C_t);
  std::vector<int> perm = {2, 0, 3, 1};
  Tensor x_jp = Tensor::zeros(4, cfg.C_t);
  for (int k = 0; k < 4; ++k)
    for (int c = 0; c < cfg.C_t; ++c) x_jp.at(k, c) = x_j.at(perm[static_cast<size_t>(k)], c);

  ForwardResult base_step = forward(x_v, x_j, TrackMode::step, params);
  ForwardResult perm_step = forward(x_v, x_jp, TrackMode::step, params);
  double step_diff = 0.0;
  for (int k = 0; k < 4; ++k)
    for (int t = 0; t < 9; ++t)
      step_diff = std::max(step_diff,
                           std::abs(perm_step.A.values.at(k, t) -
                                    base_step.A.values.at(perm[static_cast<size_t>(k)], t)));
  CHECK(step_diff <= 1e-6);

  ForwardResult base_narr = forward(x_v, x_j, TrackMode::narration, params);
  ForwardResult perm_narr = forward(x_v, x_jp, TrackMode::narration, params);
  double narr_diff = 0.0;
  for (int k = 0; k < 4; ++k)
    for (int t = 0; t < 9; ++t)
      narr_diff = std::max(narr_diff,
                           std::abs(perm_narr.A.values.at(k, t) -
                                    base_narr.A.values.at(perm[static_cast<size_t>(k)], t)));
  CHECK(narr_diff > 1e-6);
}

TEST_CASE("predict_windows picks the earliest peak and clamps fixed windows") {
  AlignmentMatrix A;
  A.kind = MatrixKind::predicted_score;
  A.values = Tensor::from_rows({{0.1, 0.9, 0.9, 0.2, 0.0},    // tie: earliest wins
                                {0.5, 0.1, 0.1, 0.1, 0.6}});  // peak near the end

  auto argmax = predict_windows(A, WindowRule::argmax_only);
  REQUIRE(argmax.size() == 2);
  CHECK(argmax[0].peak_t == 1);
  CHECK(argmax[0].window == TimeWindow{1, 1});
  CHECK(argmax[0].peak_score == 0.9);
  CHECK(argmax[1].peak_t == 4);

  auto fixed = predict_windows(A, WindowRule::fixed_duration, 3);
  CHECK(fixed[0].window == TimeWindow{1, 3});
  CHECK(fixed[1].window == TimeWindow{4, 4});  // clamped at T-1

  SUBCASE("bad delta") {
    CHECK_THROWS_AS(predict_windows(A, WindowRule::fixed_duration, 0), ConfigError);
  }
  SUBCASE("wrong matrix kind") {
    A.kind = MatrixKind::ground_truth_binary;
    CHECK_THROWS_AS(predict_windows(A, WindowRule::argmax_only), UsageError);
  }
}

TEST_CASE("checkpoint round trip preserves every parameter bit") {
  fs::path path = fs::temp_directory_path() / "stepalign_model_ck.nasv";
  ModelConfig cfg = tiny_config();
  Rng rng(9);
  ModelParams params = ModelParams::init(cfg, rng);
  save_checkpoint(path, params);
  ModelParams back = load_checkpoint(path);

  CHECK(back.config == cfg);
  auto pa = params.named_params(), pb = back.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.data() == pb[i].second.data());
  }

  // Same input, same output.
  Tensor x_v = random_tensor(rng, 7, cfg.C_v);
  Tensor x_j = random_tensor(rng, 3, cfg.C_t);
  ForwardResult a = forward(x_v, x_j, TrackMode::narration, params);
  ForwardResult b = forward(x_v, x_j, TrackMode::narration, back);
  CHECK(a.A.values.data() == b.A.values.data());
  CHECK(a.y_hat.data() == b.y_hat.data());

  SUBCASE("corrupted magic is rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('Z');
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  }
  SUBCASE("trailing bytes are rejected") {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f << "x";
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  }
  SUBCASE("truncation is rejected") {
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  }
}

TEST_CASE("untrained alignability head stays at its random init under the default loss") {
  // lambda_alignability = 0 never routes gradient through align_head, so a
  // checkpoint of a default-trained model carries the head exactly as drawn.
  ModelConfig cfg = tiny_config();
  Rng r1(5), r2(5);
  ModelParams a = ModelParams::init(cfg, r1);
  ModelParams b = ModelParams::init(cfg, r2);
  CHECK(a.align_head.W.data() == b.align_head.W.data());
  CHECK(a.align_head.W.data() != std::vector<double>(a.align_head.W.data().size(), 0.0));
}
