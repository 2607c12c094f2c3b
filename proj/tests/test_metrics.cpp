#include <doctest.h>

#include <random>

#include "mqa/error.hpp"
#include "mqa/metrics.hpp"
#include "mqa/pipeline.hpp"
#include "oracles.hpp"

using namespace mqa;

TEST_CASE("iou examples") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{20, 20, 30, 30}) == 0.0);
  // 25 / (100 + 100 - 25); the pixel-grid oracle agrees.
  const Box b{5, 5, 15, 15};
  CHECK(oracle::pixel_grid_iou(a, b, 16) == doctest::Approx(25.0 / 175.0).epsilon(1e-12));
  CHECK(iou(a, b) == doctest::Approx(0.14285714285714285).epsilon(1e-12));
  // Touching edges share no area.
  CHECK(iou(a, Box{10, 0, 20, 10}) == 0.0);
}

TEST_CASE("iou rejects invalid boxes") {
  CHECK_THROWS_AS(iou(Box{0, 0, 0, 10}, Box{0, 0, 1, 1}), ValidationError);
  CHECK_THROWS_AS(iou(Box{0, 0, 1, 1}, Box{5, 5, 4, 6}), ValidationError);
}

TEST_CASE("iou properties against the pixel-grid oracle") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Box a = oracle::random_int_box(rng, 64);
    const Box b = oracle::random_int_box(rng, 64);
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(iou(b, a)).epsilon(1e-15));
    CHECK(std::abs(v - oracle::pixel_grid_iou(a, b, 64)) <= 1e-6);
    const Box ta{a.x_min + 3.5, a.y_min + 2.25, a.x_max + 3.5, a.y_max + 2.25};
    const Box tb{b.x_min + 3.5, b.y_min + 2.25, b.x_max + 3.5, b.y_max + 2.25};
    CHECK(std::abs(iou(ta, tb) - v) <= 1e-12);
    if (!(a == b)) CHECK(v < 1.0);
  }
}

TEST_CASE("acc_at examples") {
  const std::vector<double> ious{0.6, 0.3, 0.55, 0.1};
  CHECK(acc_at(ious, 0.5) == doctest::Approx(50.0));
  const std::vector<double> ones{1.0, 1.0, 1.0};
  CHECK(acc_at(ones, 0.25) == doctest::Approx(100.0));
  CHECK(acc_at(ones, 0.5) == doctest::Approx(100.0));
  const std::vector<double> boundary{0.5};
  CHECK(acc_at(boundary, 0.5) == doctest::Approx(100.0));
  CHECK_THROWS_AS(acc_at(std::vector<double>{}, 0.5), ValidationError);
  CHECK_THROWS_AS(acc_at(ious, 0.0), ValidationError);
  CHECK_THROWS_AS(acc_at(ious, 1.0), ValidationError);
}

TEST_CASE("delta rounds to two decimals") {
  CHECK(format_signed_pct(delta(64.01, 49.83)) == "+14.18");
  CHECK(format_signed_pct(delta(59.34, 16.34)) == "+43.00");
  CHECK(format_signed_pct(delta(33.3, 33.3)) == "+0.00");
  CHECK(format_signed_pct(delta(40.0, 45.5)) == "-5.50");
  CHECK(round2(0.125) == doctest::Approx(0.13));
  CHECK(format_pct(66.666666) == "66.67");
}

TEST_CASE("aggregate") {
  SplitManifest m;
  m.split = {DatasetTag::refcocog, SplitTag::val};
  const Box gt{0, 0, 10, 10};
  for (const char* id : {"a", "b", "c"}) m.samples.push_back({id, "x.png", "thing", gt, m.split.dataset, m.split.split});

  // ious: 1.0, 0.0 (no candidates), 0.3
  std::vector<SelectionOutcome> outs{
      {"a", gt, OutcomeSource::moos},
      {"b", std::nullopt, OutcomeSource::no_candidates},
      {"c", Box{0, 0, 10, 3}, OutcomeSource::argmax_score},
  };
  const auto agg = aggregate(outs, m, "full");
  REQUIRE(agg.records.size() == 3);
  CHECK(agg.records[1].iou == 0.0);
  CHECK_FALSE(agg.records[1].hit_025);
  CHECK(agg.records[2].iou == doctest::Approx(0.3));
  CHECK(agg.records[2].hit_025);
  CHECK_FALSE(agg.records[2].hit_05);
  CHECK(format_pct(agg.row.acc_025) == "66.67");
  CHECK(format_pct(agg.row.acc_05) == "33.33");
  CHECK(agg.row.n == 3);

  CHECK_THROWS_AS(aggregate(std::vector<SelectionOutcome>{}, m, "full"), ValidationError);
  outs[2].sample_id = "zzz";
  CHECK_THROWS_AS(aggregate(outs, m, "full"), ValidationError);
}

TEST_CASE("record export") {
  std::vector<EvalRecord> recs{make_record("a", 0.5), make_record("b,c", 0.1)};
  CHECK(recs[0].hit_05);
  CHECK(recs[0].hit_025);
  CHECK_FALSE(recs[1].hit_025);
  const auto csv = records_to_csv(recs);
  CHECK(csv.rfind("sample_id,iou,hit_025,hit_05\n", 0) == 0);
  CHECK(csv.find("\"b,c\"") != std::string::npos);
  const auto jsonl = records_to_jsonl(recs);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
}
