#include "test_util.hpp"

#include <cstring>

using namespace relic;

namespace {

Checkpoint<float> sample_checkpoint(uint64_t seed) {
  ExperimentConfig cfg;
  cfg.model = test_util::small_model(SinkVariant::kSinkKV0, 2);
  finalize_config(cfg);

  Policy<float> p(cfg.model);
  p.init(seed);

  Checkpoint<float> ck;
  ck.config = to_json(cfg);
  ck.params = p.params;
  ck.has_adam = true;
  ck.adam_m = p.params.zeros_like();
  ck.adam_v = p.params.zeros_like();
  Rng rng(seed + 1);
  for (auto& e : ck.adam_m.entries)
    for (int r = 0; r < e.value.rows(); ++r)
      for (int c = 0; c < e.value.cols(); ++c) e.value(r, c) = float(rng.normal());
  for (auto& e : ck.adam_v.entries)
    for (int r = 0; r < e.value.rows(); ++r)
      for (int c = 0; c < e.value.cols(); ++c) e.value(r, c) = float(rng.uniform());
  ck.adam_t = 321;
  ck.env_steps = 1234567;
  ck.rollout_index = 42;
  return ck;
}

void check_paramsets_bitwise(const ParamSet<float>& a, const ParamSet<float>& b) {
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    const auto& x = a.entries[i];
    const auto& y = b.entries[i];
    REQUIRE(x.name == y.name);
    REQUIRE(x.learnable == y.learnable);
    REQUIRE(x.value.rows() == y.value.rows());
    REQUIRE(x.value.cols() == y.value.cols());
    REQUIRE(std::memcmp(x.value.data(), y.value.data(), sizeof(float) * x.value.size()) == 0);
  }
}

}  // namespace

TEST_CASE("checkpoints round-trip bitwise including optimizer state", "[checkpoint]") {
  test_util::TempDir dir("ckpt_test_tmp");
  const auto path = dir.file("model.bin");
  const auto ck = sample_checkpoint(5);
  save_checkpoint(path, ck);

  const auto back = load_checkpoint<float>(path);
  CHECK(back.config == ck.config);
  check_paramsets_bitwise(back.params, ck.params);
  REQUIRE(back.has_adam);
  check_paramsets_bitwise(back.adam_m, ck.adam_m);
  check_paramsets_bitwise(back.adam_v, ck.adam_v);
  CHECK(back.adam_t == 321);
  CHECK(back.env_steps == 1234567);
  CHECK(back.rollout_index == 42);

  // a second save of the loaded state produces an identical file
  const auto path2 = dir.file("model2.bin");
  save_checkpoint(path2, back);
  CHECK(test_util::slurp(path) == test_util::slurp(path2));
}

TEST_CASE("checkpoints without optimizer state round-trip too", "[checkpoint]") {
  test_util::TempDir dir("ckpt_test_tmp2");
  auto ck = sample_checkpoint(6);
  ck.has_adam = false;
  ck.adam_m = ParamSet<float>{};
  ck.adam_v = ParamSet<float>{};
  const auto path = dir.file("noadam.bin");
  save_checkpoint(path, ck);
  const auto back = load_checkpoint<float>(path);
  CHECK_FALSE(back.has_adam);
  check_paramsets_bitwise(back.params, ck.params);
}

TEST_CASE("corrupt checkpoints are rejected with precise errors", "[checkpoint]") {
  test_util::TempDir dir("ckpt_test_tmp3");
  const auto path = dir.file("good.bin");
  save_checkpoint(path, sample_checkpoint(7));
  const std::string good = test_util::slurp(path);

  SECTION("missing file") {
    test_util::expect_error([&] { load_checkpoint<float>(dir.file("absent.bin")); },
                            "checkpoint/io");
  }
  SECTION("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    test_util::spit(dir.file("magic.bin"), bad);
    test_util::expect_error([&] { load_checkpoint<float>(dir.file("magic.bin")); },
                            "checkpoint/bad_magic");
  }
  SECTION("unsupported version") {
    std::string bad = good;
    bad[8] = char(99);  // little-endian u32 version right after the magic
    test_util::spit(dir.file("version.bin"), bad);
    test_util::expect_error([&] { load_checkpoint<float>(dir.file("version.bin")); },
                            "checkpoint/bad_version");
  }
  SECTION("truncated payload") {
    test_util::spit(dir.file("trunc.bin"), good.substr(0, good.size() / 2));
    test_util::expect_error([&] { load_checkpoint<float>(dir.file("trunc.bin")); },
                            "checkpoint/truncated");
  }
}

TEST_CASE("shape matching guards against config drift", "[checkpoint]") {
  Policy<float> a(test_util::small_model(SinkVariant::kSinkKV, 1));
  a.init(1);
  Policy<float> b(test_util::small_model(SinkVariant::kSinkKV, 1));
  b.init(2);
  CHECK_NOTHROW(match_param_shapes(a.params, b.params));

  // different sink variant: entry set differs
  Policy<float> c(test_util::small_model(SinkVariant::kSinkK0V0, 1));
  c.init(3);
  test_util::expect_error([&] { match_param_shapes(a.params, c.params); },
                          "checkpoint/shape_mismatch");

  // same names, different shape
  auto d = test_util::small_model(SinkVariant::kSinkKV, 1);
  d.d_mlp = 64;
  Policy<float> e(d);
  e.init(4);
  test_util::expect_error([&] { match_param_shapes(a.params, e.params); },
                          "checkpoint/shape_mismatch");
}
