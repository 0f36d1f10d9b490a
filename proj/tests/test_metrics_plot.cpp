#include "test_util.hpp"

#include "relic/metrics.hpp"
#include "relic/plot.hpp"

using namespace relic;
using nlohmann::ordered_json;

TEST_CASE("metrics files are header-stamped append-only json lines", "[metrics]") {
  test_util::TempDir dir("metrics_test_tmp");
  const auto path = dir.file("m.jsonl");
  {
    MetricsWriter w(path);
    w.write("rollout", 512, {{"mean_return", 3.5}, {"loss", -0.25}});
    w.write("eval-trial", 512, {{"mean_return", 4.0}});
  }
  {
    // reopening appends; the header is not duplicated
    MetricsWriter w(path);
    w.write("rollout", 1024, {{"mean_return", 5.0}});
  }

  const std::string raw = test_util::slurp(path);
  REQUIRE(raw.rfind(metrics_header().dump(), 0) == 0);

  const auto recs = read_metrics(path);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0]["kind"] == "rollout");
  CHECK(recs[0]["env_step"] == 512);
  CHECK(recs[0]["mean_return"] == 3.5);
  CHECK(recs[0]["loss"] == -0.25);
  CHECK(recs[0].contains("wall_time"));
  CHECK(recs[1]["kind"] == "eval-trial");
  CHECK(recs[2]["env_step"] == 1024);
}

TEST_CASE("metrics reader rejects malformed files precisely", "[metrics]") {
  test_util::TempDir dir("metrics_test_tmp2");

  SECTION("missing file") {
    test_util::expect_error([&] { read_metrics(dir.file("absent.jsonl")); }, "metrics/io");
  }
  SECTION("empty file") {
    test_util::spit(dir.file("empty.jsonl"), "");
    test_util::expect_error([&] { read_metrics(dir.file("empty.jsonl")); }, "metrics/empty");
  }
  SECTION("foreign header") {
    test_util::spit(dir.file("alien.jsonl"), "{\"format\":\"csv\"}\n{}\n");
    test_util::expect_error([&] { read_metrics(dir.file("alien.jsonl")); }, "metrics/bad_magic");
  }
  SECTION("future version") {
    ordered_json h = metrics_header();
    h["version"] = 2;
    test_util::spit(dir.file("v2.jsonl"), h.dump() + "\n");
    test_util::expect_error([&] { read_metrics(dir.file("v2.jsonl")); }, "metrics/bad_version");
  }
  SECTION("corrupt record names its line") {
    const auto path = dir.file("cut.jsonl");
    test_util::spit(path, metrics_header().dump() + "\n{\"kind\":\"rollout\"}\n{\"kind\":tru\n");
    try {
      read_metrics(path);
      FAIL("expected metrics/bad_line");
    } catch (const Error& e) {
      CHECK(e.error_class() == "metrics/bad_line");
      CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
  }
}

TEST_CASE("line charts are deterministic byte for byte", "[plot]") {
  test_util::TempDir dir("plot_test_tmp");
  std::vector<Series> series(2);
  series[0].label = "run_a";
  series[1].label = "curve <b> & \"c\"";
  for (int i = 0; i < 20; ++i) {
    series[0].x.push_back(i);
    series[0].y.push_back(0.05 * i * i - i);
    series[1].x.push_back(i);
    series[1].y.push_back(3.0 * std::sin(0.7 * i));
  }

  write_line_chart_svg(dir.file("a.svg"), "returns", "env step", "return", series);
  write_line_chart_svg(dir.file("b.svg"), "returns", "env step", "return", series);
  const std::string a = test_util::slurp(dir.file("a.svg"));
  CHECK(a == test_util::slurp(dir.file("b.svg")));
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(a.find("run_a") != std::string::npos);
  CHECK(a.find("&lt;b&gt; &amp; &quot;c&quot;") != std::string::npos);
  CHECK(a.find("polyline") != std::string::npos);

  SECTION("degenerate inputs") {
    test_util::expect_error(
        [&] { write_line_chart_svg(dir.file("e.svg"), "t", "x", "y", {}); }, "plot/empty");
    Series bad;
    bad.label = "ragged";
    bad.x = {1, 2};
    bad.y = {1};
    test_util::expect_error(
        [&] { write_line_chart_svg(dir.file("r.svg"), "t", "x", "y", {bad}); }, "plot/shape");
    Series flat;  // single point still renders (range gets padded)
    flat.label = "dot";
    flat.x = {1};
    flat.y = {2};
    CHECK_NOTHROW(write_line_chart_svg(dir.file("dot.svg"), "t", "x", "y", {flat}));
  }
}

TEST_CASE("csv twin lists every point under its series label", "[plot]") {
  test_util::TempDir dir("plot_test_tmp2");
  std::vector<Series> series(1);
  series[0].label = "s";
  series[0].x = {0, 1, 2};
  series[0].y = {1.5, 2.5, -3};
  write_series_csv(dir.file("s.csv"), series);
  const std::string csv = test_util::slurp(dir.file("s.csv"));
  CHECK(csv.rfind("series,x,y\n", 0) == 0);
  CHECK(csv.find("\"s\",0,1.5\n") != std::string::npos);
  CHECK(csv.find("\"s\",2,-3\n") != std::string::npos);
}

TEST_CASE("eval records from several runs become comparable series", "[plot]") {
  test_util::TempDir dir("plot_test_tmp3");
  auto emit = [&](const std::string& name, double base) {
    MetricsWriter w(dir.file(name));
    w.write("rollout", 256, {{"mean_return", base}});
    w.write("eval-trial", 512,
            {{"mean_return", base + 1}, {"per_episode_mean", {base, base + 1, base + 2}}});
  };
  emit("sink.jsonl", 10.0);
  emit("plain.jsonl", 4.0);

  const auto series =
      eval_series_from_metrics({dir.file("sink.jsonl"), dir.file("plain.jsonl")});
  REQUIRE(series.size() == 2);
  CHECK(series[0].label.find("sink") != std::string::npos);
  CHECK(series[1].label.find("plain") != std::string::npos);
  REQUIRE(series[0].x.size() == 3);
  CHECK(series[0].x[0] == 1.0);  // episodes are 1-based on the x axis
  CHECK(series[0].y[2] == Catch::Approx(12.0));
  CHECK(series[1].y[0] == Catch::Approx(4.0));

  const auto train = training_series_from_metrics({dir.file("sink.jsonl"), dir.file("plain.jsonl")});
  REQUIRE(train.size() == 2);
  REQUIRE(train[0].x.size() == 1);
  CHECK(train[0].x[0] == 256.0);
  CHECK(train[0].y[0] == 10.0);

  // both chart and csv render from the combined series
  write_line_chart_svg(dir.file("cmp.svg"), "eval", "episode", "return", series);
  write_series_csv(dir.file("cmp.csv"), series);
  CHECK(test_util::slurp(dir.file("cmp.svg")).find("polyline") != std::string::npos);
}
