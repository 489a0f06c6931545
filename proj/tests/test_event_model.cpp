#include <doctest.h>

#include <string>

#include "support/cohort_gen.hpp"
#include "tokenlab/event_model.hpp"
#include "tokenlab/rng.hpp"

using namespace tokenlab;

namespace {

const std::string kMinimal =
    "#tokenlab-events v1\n"
    "E\tp01\t0\tDIAG//SEPSIS\t\n"
    "E\tp01\t30.5\tLAB//SODIUM\t141.25\n"
    "L\tp01\tmortality\t1\n"
    "P\tp01\t1440\n";

}  // namespace

TEST_CASE("minimal well-formed file parses to one sequence of two events") {
  auto c = parse_event_text(kMinimal);
  REQUIRE(c.sequences.size() == 1);
  const auto& seq = c.sequences[0];
  CHECK(seq.subject_id == "p01");
  REQUIRE(seq.events.size() == 2);
  CHECK(seq.events[0].time_delta == 0);
  CHECK_FALSE(seq.events[0].has_value);
  CHECK(seq.events[0].value == 0);
  CHECK(seq.events[1].time_delta == 30.5);
  CHECK(seq.events[1].has_value);
  CHECK(seq.events[1].value == 141.25);
  CHECK(seq.prediction_time == 1440);
  CHECK(c.vocabulary.size() == 2);
  CHECK(c.vocabulary.code(0) == "DIAG//SEPSIS");  // sorted order
  REQUIRE(c.labels.size() == 1);
  CHECK(c.labels[0].label == true);
}

TEST_CASE("empty events section is an error") {
  CHECK_THROWS_WITH_AS(parse_event_text("#tokenlab-events v1\n"),
                       doctest::Contains("empty cohort"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text("#tokenlab-events v1\n# only comments\n"),
                       doctest::Contains("empty cohort"), ParseError);
}

TEST_CASE("strict parse errors name line and field") {
  auto bad = [](const std::string& body) {
    return std::string("#tokenlab-events v1\n") + body;
  };
  CHECK_THROWS_WITH_AS(parse_event_text("E\tp\t0\tC\t\n"), doctest::Contains("header"),
                       ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("E\tp01\t0\tCODE\n")),
                       doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("E\tp01\tzero\tCODE\t\n")),
                       doctest::Contains("cumulative_minutes"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("E\tp01\t-5\tCODE\t\n")),
                       doctest::Contains("cumulative_minutes"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("E\tp01\t0\tCODE\tabc\n")),
                       doctest::Contains("value"), ParseError);
  CHECK_THROWS_WITH_AS(
      parse_event_text(bad("E\tp01\t10\tA\t\nE\tp01\t5\tB\t\nP\tp01\t20\n")),
      doctest::Contains("decreasing"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("E\tp01\t0\tA\t\nP\tp01\t1\nL\tp01\tt\t2\n")),
                       doctest::Contains("0 or 1"), ParseError);
  CHECK_THROWS_WITH_AS(
      parse_event_text(bad("E\tp01\t0\tA\t\nP\tp01\t1\nL\tp99\tt\t1\n")),
      doctest::Contains("unknown subject"), ParseError);
  CHECK_THROWS_WITH_AS(
      parse_event_text(bad("E\tp01\t0\tA\t\nP\tp01\t1\nL\tp01\tt\t1\nL\tp01\tt\t0\n")),
      doctest::Contains("duplicate label"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("E\tp01\t0\tA\t\n")),
                       doctest::Contains("missing prediction time"), ParseError);
  CHECK_THROWS_WITH_AS(
      parse_event_text(bad("E\tp01\t0\tA\t\nP\tp01\t1\nP\tp01\t2\n")),
      doctest::Contains("duplicate prediction"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("P\tp02\t5\n")),
                       doctest::Contains("without events"), ParseError);
  CHECK_THROWS_WITH_AS(parse_event_text(bad("X\tp01\t0\n")),
                       doctest::Contains("unknown line tag"), ParseError);
}

TEST_CASE("valueless events serialize with an empty value field") {
  auto c = parse_event_text(kMinimal);
  auto text = write_event_text(c);
  CHECK(text.find("E\tp01\t0\tDIAG//SEPSIS\t\n") != std::string::npos);
  CHECK(text.find("\t0\n") == std::string::npos);  // no literal zero for absent values
}

TEST_CASE("canonical form rebases times and sorts subjects") {
  std::string shuffled =
      "#tokenlab-events v1\n"
      "E\tp02\t100\tB\t\n"
      "E\tp02\t160.5\tA\t7\n"
      "E\tp01\t50\tA\t\n"
      "P\tp02\t300\n"
      "L\tp02\ttask\t0\n"
      "P\tp01\t60\n";
  auto c = parse_event_text(shuffled);
  REQUIRE(c.sequences.size() == 2);
  CHECK(c.sequences[0].subject_id == "p01");  // sorted
  CHECK(c.sequences[1].events[0].time_delta == 0);
  CHECK(c.sequences[1].events[1].time_delta == 60.5);
  CHECK(c.sequences[1].prediction_time == 200);  // 300 - 100

  auto canon = write_event_text(c);
  auto c2 = parse_event_text(canon);
  CHECK(c2 == c);
  CHECK(write_event_text(c2) == canon);  // fixed point
}

TEST_CASE("write determinism: same cohort, same bytes") {
  auto c = parse_event_text(kMinimal);
  CHECK(write_event_text(c) == write_event_text(c));
}

TEST_CASE("round trip over random cohorts is exact") {
  rng::CounterRng g(2024);
  for (int iter = 0; iter < 60; ++iter) {
    auto c = testsupport::random_cohort(g);
    auto text = write_event_text(c);
    auto back = parse_event_text(text);
    CHECK(back == c);
    CHECK(write_event_text(back) == text);
  }
}

TEST_CASE("truncation: before first event yields empty, after last is identity") {
  auto c = parse_event_text(kMinimal);
  auto seq = c.sequences[0];

  auto all = truncate_at_prediction_time(seq);
  CHECK(all.events.size() == 2);

  seq.prediction_time = -1;
  CHECK(truncate_at_prediction_time(seq).events.empty());

  seq.prediction_time = 10;  // between the two events
  auto partial = truncate_at_prediction_time(seq);
  REQUIRE(partial.events.size() == 1);
  CHECK(partial.events[0].time_delta == 0);
}

TEST_CASE("truncation equals brute-force prefix scan and is idempotent") {
  rng::CounterRng g(77);
  for (int iter = 0; iter < 40; ++iter) {
    auto c = testsupport::random_cohort(g, 6, 15);
    for (auto seq : c.sequences) {
      seq.prediction_time = testsupport::quant(g.next_double() * 900.0 - 50.0);
      auto got = truncate_at_prediction_time(seq);

      // oracle: keep events while the running sum stays within the horizon
      std::size_t keep = 0;
      double t = 0;
      for (const auto& e : seq.events) {
        t += e.time_delta;
        if (t > seq.prediction_time) break;
        ++keep;
      }
      CHECK(got.events.size() == keep);
      for (std::size_t i = 0; i < keep; ++i)
        CHECK(got.events[i].code_id == seq.events[i].code_id);
      if (!got.events.empty()) CHECK(got.events[0].time_delta == 0);

      auto twice = truncate_at_prediction_time(got);
      CHECK(twice.events.size() == got.events.size());
    }
  }
}

TEST_CASE("cohort validation rejects invariant violations") {
  auto c = parse_event_text(kMinimal);
  auto broken = c;
  broken.sequences[0].events[1].code_id = 99;
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);

  broken = c;
  broken.sequences[0].events[1].time_delta = -2;
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);

  broken = c;
  broken.sequences[0].events[0].time_delta = 4;
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);

  broken = c;
  broken.labels.push_back({"ghost", "task", true});
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);

  broken = c;
  broken.labels.push_back(broken.labels[0]);
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);

  CHECK_THROWS_AS(Vocabulary::from_codes({"A", "A"}), std::invalid_argument);
}
