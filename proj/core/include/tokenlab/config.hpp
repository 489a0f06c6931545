#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tokenlab::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

// `key = value` lines with optional `[kind NAME]` section headers and
// '#' comments.
struct Section {
  std::string kind;
  std::string name;
  std::vector<Entry> entries;

  const Entry* find(std::string_view key) const;
  void set(std::string_view key, std::string_view value);  // insert or replace
};

struct Doc {
  Section root;
  std::vector<Section> sections;

  static Doc parse(std::string_view text);
  std::string serialize() const;

  const Section* find_section(std::string_view kind, std::string_view name) const;
};

// `++dot.path=value` override grammar; applies onto root entries whose keys
// are the dotted paths.
void apply_override(Doc& doc, std::string_view arg);

// Typed accessor over one section that records which keys were read so the
// consumer can reject typos.
class View {
 public:
  explicit View(const Section& s) : s_(s) {}

  std::optional<std::string> get_string(std::string_view key);
  std::optional<double> get_double(std::string_view key);
  std::optional<std::int64_t> get_i64(std::string_view key);
  std::optional<bool> get_bool(std::string_view key);

  std::string require_string(std::string_view key);
  double require_double(std::string_view key);
  std::int64_t require_i64(std::string_view key);

  double get_double_or(std::string_view key, double fallback);
  std::int64_t get_i64_or(std::string_view key, std::int64_t fallback);
  std::string get_string_or(std::string_view key, std::string_view fallback);
  bool get_bool_or(std::string_view key, bool fallback);

  // Throws ConfigError naming the first entry never read through this view.
  void reject_unknown() const;

 private:
  const Entry* touch(std::string_view key);
  const Section& s_;
  std::set<std::string, std::less<>> touched_;
};

}  // namespace tokenlab::config
