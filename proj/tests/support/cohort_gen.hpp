// Random valid cohorts for round-trip and property tests. Times and values
// are quantized to 1/1024 minute so prefix sums and differences are exact
// in double precision.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <tuple>
#include <vector>

#include "tokenlab/event_model.hpp"
#include "tokenlab/rng.hpp"

namespace tokenlab::testsupport {

inline double quant(double x) { return std::round(x * 1024.0) / 1024.0; }

inline Cohort random_cohort(rng::CounterRng& g, int max_subjects = 12,
                            int max_events = 20) {
  static const char* kPool[] = {
      "LAB//SODIUM",    "LAB//POTASSIUM", "VITAL//HR",        "VITAL//SBP",
      "DIAG//SEPSIS_1", "DIAG//CHF_2",    "MED//VANCO_40",    "MED//INSULIN_7",
      "PROC//INTUB_3",  "INFUSION_END//225166", "ADT//ICU_IN", "ADT//ICU_OUT"};
  const int n_pool = static_cast<int>(sizeof(kPool) / sizeof(kPool[0]));

  int n_subj = 1 + static_cast<int>(g.next_below(static_cast<std::uint64_t>(max_subjects)));
  std::vector<std::string> used_codes;
  Cohort c;
  for (int s = 0; s < n_subj; ++s) {
    PatientSequence seq;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%04d", s);
    seq.subject_id = buf;
    int n_ev = 1 + static_cast<int>(g.next_below(static_cast<std::uint64_t>(max_events)));
    double cum = 0;
    for (int e = 0; e < n_ev; ++e) {
      Event ev;
      ev.time_delta = e == 0 ? 0 : quant(g.next_exponential(45.0));
      cum += ev.time_delta;
      // code ids assigned after the vocabulary is known
      ev.code_id = static_cast<std::uint32_t>(g.next_below(n_pool));
      if (g.next_double() < 0.4) {
        ev.has_value = true;
        ev.value = quant(g.next_normal() * 10.0);
      }
      seq.events.push_back(ev);
    }
    seq.prediction_time = quant(cum + g.next_double() * 100.0);
    c.sequences.push_back(std::move(seq));
  }

  // vocabulary = sorted unique codes actually used, then remap ids
  std::vector<int> pool_used;
  for (const auto& seq : c.sequences)
    for (const auto& ev : seq.events) pool_used.push_back(static_cast<int>(ev.code_id));
  std::vector<std::string> codes;
  for (int i = 0; i < n_pool; ++i) codes.push_back(kPool[i]);
  std::sort(codes.begin(), codes.end());
  std::vector<std::string> observed;
  for (const auto& code : codes) {
    bool hit = false;
    for (const auto& seq : c.sequences) {
      for (const auto& ev : seq.events)
        if (kPool[ev.code_id] == code) {
          hit = true;
          break;
        }
      if (hit) break;
    }
    if (hit) observed.push_back(code);
  }
  c.vocabulary = Vocabulary::from_codes(observed);
  for (auto& seq : c.sequences)
    for (auto& ev : seq.events)
      ev.code_id = *c.vocabulary.index_of(kPool[ev.code_id]);

  // labels: a couple of tasks over a random subject subset, canonical order
  const char* tasks[] = {"task_a", "task_b"};
  for (const auto& seq : c.sequences)
    for (const char* t : tasks)
      if (g.next_double() < 0.7)
        c.labels.push_back({seq.subject_id, t, g.next_double() < 0.5});
  std::sort(c.labels.begin(), c.labels.end(),
            [](const TaskLabel& a, const TaskLabel& b) {
              return std::tie(a.subject_id, a.task_id) < std::tie(b.subject_id, b.task_id);
            });
  c.validate();
  return c;
}

}  // namespace tokenlab::testsupport
