#include "tokenlab/event_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tokenlab/textio.hpp"

namespace tokenlab {

namespace {

constexpr std::string_view kHeader = "#tokenlab-events v1";

bool valid_identifier(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == '\t' || c == '\n' || c == '\r') return false;
  return true;
}

}  // namespace

std::vector<double> PatientSequence::cumulative_times() const {
  std::vector<double> out;
  out.reserve(events.size());
  double t = 0;
  for (const auto& e : events) {
    t += e.time_delta;
    out.push_back(t);
  }
  return out;
}

Vocabulary Vocabulary::from_codes(std::vector<std::string> codes) {
  Vocabulary v;
  v.codes_ = std::move(codes);
  v.index_.reserve(v.codes_.size());
  for (std::uint32_t i = 0; i < v.codes_.size(); ++i) {
    if (!valid_identifier(v.codes_[i]))
      throw std::invalid_argument("invalid code string at index " + std::to_string(i));
    if (!v.index_.emplace(v.codes_[i], i).second)
      throw std::invalid_argument("duplicate code string: " + v.codes_[i]);
  }
  return v;
}

std::optional<std::uint32_t> Vocabulary::index_of(std::string_view code) const {
  auto it = index_.find(std::string(code));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Cohort::validate() const {
  std::set<std::string_view> subjects;
  for (const auto& seq : sequences) {
    if (!valid_identifier(seq.subject_id))
      throw std::invalid_argument("invalid subject id");
    if (!subjects.insert(seq.subject_id).second)
      throw std::invalid_argument("duplicate subject: " + seq.subject_id);
    bool first = true;
    for (const auto& e : seq.events) {
      if (e.code_id >= vocabulary.size())
        throw std::invalid_argument("code_id out of range in subject " + seq.subject_id);
      if (!(e.time_delta >= 0) || !std::isfinite(e.time_delta))
        throw std::invalid_argument("negative or non-finite time_delta in subject " +
                                    seq.subject_id);
      if (first && e.time_delta != 0)
        throw std::invalid_argument("first event of subject " + seq.subject_id +
                                    " has nonzero time_delta");
      if (!e.has_value && e.value != 0)
        throw std::invalid_argument("valueless event carries nonzero value in subject " +
                                    seq.subject_id);
      first = false;
    }
  }
  std::set<std::pair<std::string_view, std::string_view>> seen;
  for (const auto& l : labels) {
    if (subjects.find(l.subject_id) == subjects.end())
      throw std::invalid_argument("label for unknown subject: " + l.subject_id);
    if (!seen.insert({l.subject_id, l.task_id}).second)
      throw std::invalid_argument("duplicate label for (" + l.subject_id + ", " +
                                  l.task_id + ")");
  }
}

std::vector<std::string> Cohort::task_ids() const {
  std::set<std::string> ids;
  for (const auto& l : labels) ids.insert(l.task_id);
  return {ids.begin(), ids.end()};
}

std::unordered_map<std::string, bool> Cohort::labels_for(std::string_view task_id) const {
  std::unordered_map<std::string, bool> out;
  for (const auto& l : labels)
    if (l.task_id == task_id) out.emplace(l.subject_id, l.label);
  return out;
}

bool Cohort::operator==(const Cohort& o) const {
  if (!(vocabulary == o.vocabulary) || labels != o.labels ||
      sequences.size() != o.sequences.size())
    return false;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& a = sequences[i];
    const auto& b = o.sequences[i];
    if (a.subject_id != b.subject_id || a.prediction_time != b.prediction_time ||
        a.events.size() != b.events.size())
      return false;
    for (std::size_t j = 0; j < a.events.size(); ++j) {
      const auto& x = a.events[j];
      const auto& y = b.events[j];
      if (x.code_id != y.code_id || x.time_delta != y.time_delta ||
          x.value != y.value || x.has_value != y.has_value)
        return false;
    }
  }
  return true;
}

namespace {

struct RawEvent {
  double cumulative;
  std::string code;
  double value;
  bool has_value;
};

struct RawSubject {
  std::vector<RawEvent> events;
  std::optional<double> prediction_time;
  int first_line = 0;
};

}  // namespace

Cohort parse_event_text(std::string_view text) {
  auto lines = textio::split(text, '\n');
  if (lines.empty() || lines[0] != kHeader)
    throw ParseError(1, "missing header '" + std::string(kHeader) + "'");

  std::map<std::string, RawSubject> subjects;  // ordered for determinism
  std::vector<TaskLabel> labels;
  std::set<std::pair<std::string, std::string>> label_keys;

  for (std::size_t i = 1; i < lines.size(); ++i) {
    int lineno = static_cast<int>(i + 1);
    std::string_view line = lines[i];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    auto fields = textio::split(line, '\t');
    std::string_view tag = fields[0];

    if (tag == "E") {
      if (fields.size() != 5)
        throw ParseError(lineno, "event line needs 5 tab-separated fields, got " +
                                     std::to_string(fields.size()));
      if (!valid_identifier(fields[1]))
        throw ParseError(lineno, "bad subject_id field");
      auto t = textio::parse_double(fields[2]);
      if (!t || !std::isfinite(*t) || *t < 0)
        throw ParseError(lineno, "bad cumulative_minutes field: '" +
                                     std::string(fields[2]) + "'");
      if (!valid_identifier(fields[3]))
        throw ParseError(lineno, "bad code field");
      RawEvent ev{*t, std::string(fields[3]), 0, false};
      if (!fields[4].empty()) {
        auto v = textio::parse_double(fields[4]);
        if (!v || !std::isfinite(*v))
          throw ParseError(lineno, "bad value field: '" + std::string(fields[4]) + "'");
        ev.value = *v;
        ev.has_value = true;
      }
      auto& subj = subjects[std::string(fields[1])];
      if (subj.events.empty()) subj.first_line = lineno;
      if (!subj.events.empty() && ev.cumulative < subj.events.back().cumulative)
        throw ParseError(lineno, "decreasing timestamp for subject " +
                                     std::string(fields[1]));
      subj.events.push_back(std::move(ev));
    } else if (tag == "L") {
      if (fields.size() != 4)
        throw ParseError(lineno, "label line needs 4 tab-separated fields, got " +
                                     std::to_string(fields.size()));
      if (!valid_identifier(fields[1]))
        throw ParseError(lineno, "bad subject_id field");
      if (!valid_identifier(fields[2]))
        throw ParseError(lineno, "bad task_id field");
      bool value;
      if (fields[3] == "0")
        value = false;
      else if (fields[3] == "1")
        value = true;
      else
        throw ParseError(lineno, "label field must be 0 or 1, got '" +
                                     std::string(fields[3]) + "'");
      if (!label_keys.insert({std::string(fields[1]), std::string(fields[2])}).second)
        throw ParseError(lineno, "duplicate label for (" + std::string(fields[1]) +
                                     ", " + std::string(fields[2]) + ")");
      labels.push_back({std::string(fields[1]), std::string(fields[2]), value});
    } else if (tag == "P") {
      if (fields.size() != 3)
        throw ParseError(lineno, "prediction line needs 3 tab-separated fields, got " +
                                     std::to_string(fields.size()));
      if (!valid_identifier(fields[1]))
        throw ParseError(lineno, "bad subject_id field");
      auto t = textio::parse_double(fields[2]);
      if (!t || !std::isfinite(*t))
        throw ParseError(lineno, "bad prediction_time field: '" +
                                     std::string(fields[2]) + "'");
      auto& subj = subjects[std::string(fields[1])];
      if (subj.prediction_time)
        throw ParseError(lineno, "duplicate prediction time for subject " +
                                     std::string(fields[1]));
      subj.prediction_time = *t;
    } else {
      throw ParseError(lineno, "unknown line tag '" + std::string(tag) + "'");
    }
  }

  std::size_t n_with_events = 0;
  for (auto& [id, subj] : subjects) {
    if (subj.events.empty())
      throw ParseError("prediction time for subject without events: " + id);
    if (!subj.prediction_time)
      throw ParseError("missing prediction time for subject: " + id);
    ++n_with_events;
  }
  if (n_with_events == 0) throw ParseError("empty cohort");

  for (const auto& l : labels)
    if (subjects.find(l.subject_id) == subjects.end())
      throw ParseError("label for unknown subject: " + l.subject_id);

  // vocabulary = sorted unique codes observed in the event section
  std::set<std::string> code_set;
  for (const auto& [id, subj] : subjects)
    for (const auto& e : subj.events) code_set.insert(e.code);
  Vocabulary vocab = Vocabulary::from_codes({code_set.begin(), code_set.end()});

  Cohort cohort;
  cohort.vocabulary = std::move(vocab);
  cohort.sequences.reserve(subjects.size());
  for (auto& [id, subj] : subjects) {
    PatientSequence seq;
    seq.subject_id = id;
    double base = subj.events.front().cumulative;
    seq.prediction_time = *subj.prediction_time - base;
    double prev = base;
    for (const auto& e : subj.events) {
      Event ev;
      ev.code_id = *cohort.vocabulary.index_of(e.code);
      ev.time_delta = e.cumulative - prev;
      ev.value = e.value;
      ev.has_value = e.has_value;
      prev = e.cumulative;
      seq.events.push_back(ev);
    }
    seq.events.front().time_delta = 0;
    cohort.sequences.push_back(std::move(seq));
  }

  // canonical label order: (subject, task)
  std::sort(labels.begin(), labels.end(), [](const TaskLabel& a, const TaskLabel& b) {
    return std::tie(a.subject_id, a.task_id) < std::tie(b.subject_id, b.task_id);
  });
  cohort.labels = std::move(labels);
  cohort.validate();
  return cohort;
}

Cohort parse_event_file(const std::string& path) {
  return parse_event_text(textio::read_file(path));
}

std::string write_event_text(const Cohort& cohort) {
  cohort.validate();
  std::vector<const PatientSequence*> order;
  order.reserve(cohort.sequences.size());
  for (const auto& s : cohort.sequences) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const PatientSequence* a, const PatientSequence* b) {
              return a->subject_id < b->subject_id;
            });

  std::string out(kHeader);
  out += '\n';
  for (const auto* seq : order) {
    double t = 0;
    for (const auto& e : seq->events) {
      t += e.time_delta;
      out += "E\t";
      out += seq->subject_id;
      out += '\t';
      out += textio::format_double(t);
      out += '\t';
      out += cohort.vocabulary.code(e.code_id);
      out += '\t';
      if (e.has_value) out += textio::format_double(e.value);
      out += '\n';
    }
  }
  std::vector<TaskLabel> labels = cohort.labels;
  std::sort(labels.begin(), labels.end(), [](const TaskLabel& a, const TaskLabel& b) {
    return std::tie(a.subject_id, a.task_id) < std::tie(b.subject_id, b.task_id);
  });
  for (const auto& l : labels) {
    out += "L\t";
    out += l.subject_id;
    out += '\t';
    out += l.task_id;
    out += '\t';
    out += l.label ? '1' : '0';
    out += '\n';
  }
  for (const auto* seq : order) {
    out += "P\t";
    out += seq->subject_id;
    out += '\t';
    out += textio::format_double(seq->prediction_time);
    out += '\n';
  }
  return out;
}

void write_event_file(const Cohort& cohort, const std::string& path) {
  textio::write_file(path, write_event_text(cohort));
}

PatientSequence truncate_at_prediction_time(const PatientSequence& seq) {
  PatientSequence out;
  out.subject_id = seq.subject_id;
  out.prediction_time = seq.prediction_time;
  double t = 0;
  for (const auto& e : seq.events) {
    t += e.time_delta;
    if (t > seq.prediction_time) break;
    out.events.push_back(e);
  }
  return out;
}

}  // namespace tokenlab
