#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tokenlab {

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  explicit ParseError(const std::string& what)
      : std::runtime_error(what), line_(0) {}
  int line() const { return line_; }

 private:
  int line_;
};

// One clinical event: a vocabulary code, minutes since the previous event in
// the same sequence, and an optional numeric measurement.
struct Event {
  std::uint32_t code_id = 0;
  double time_delta = 0;  // >= 0; first event of a sequence has 0
  double value = 0;       // exactly 0 when has_value is false
  bool has_value = false;
};

struct PatientSequence {
  std::string subject_id;
  std::vector<Event> events;
  double prediction_time = 0;  // minutes on the sequence-local clock

  std::vector<double> cumulative_times() const;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  // Throws on duplicate code strings.
  static Vocabulary from_codes(std::vector<std::string> codes);

  std::size_t size() const { return codes_.size(); }
  const std::string& code(std::uint32_t id) const { return codes_.at(id); }
  const std::vector<std::string>& codes() const { return codes_; }
  std::optional<std::uint32_t> index_of(std::string_view code) const;

  bool operator==(const Vocabulary& o) const { return codes_ == o.codes_; }

 private:
  std::vector<std::string> codes_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct TaskLabel {
  std::string subject_id;
  std::string task_id;
  bool label = false;

  bool operator==(const TaskLabel&) const = default;
};

struct Cohort {
  std::vector<PatientSequence> sequences;
  std::vector<TaskLabel> labels;
  Vocabulary vocabulary;

  // Checks every type invariant; throws std::invalid_argument on violation.
  void validate() const;

  std::vector<std::string> task_ids() const;  // sorted unique
  // subject_id -> label for one task
  std::unordered_map<std::string, bool> labels_for(std::string_view task_id) const;

  bool operator==(const Cohort& o) const;
};

// Event-stream file format, UTF-8 with LF endings:
//   #tokenlab-events v1
//   E<TAB>subject<TAB>cumulative_minutes<TAB>code<TAB>value-or-empty
//   L<TAB>subject<TAB>task<TAB>0|1
//   P<TAB>subject<TAB>prediction_time_minutes
// '#' starts a comment line. Parsing is strict; errors name line and field.
Cohort parse_event_text(std::string_view text);
Cohort parse_event_file(const std::string& path);

// Canonical form: subjects sorted by id, events in time order, times rebased
// so each sequence starts at minute 0, shortest round-trip number formatting.
std::string write_event_text(const Cohort& cohort);
void write_event_file(const Cohort& cohort, const std::string& path);

// Maximal prefix with cumulative time <= prediction_time.
PatientSequence truncate_at_prediction_time(const PatientSequence& seq);

}  // namespace tokenlab
