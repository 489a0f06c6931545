#include "tokenlab/config.hpp"

#include "tokenlab/textio.hpp"

namespace tokenlab::config {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

const Entry* Section::find(std::string_view key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

void Section::set(std::string_view key, std::string_view value) {
  for (auto& e : entries) {
    if (e.key == key) {
      e.value = std::string(value);
      return;
    }
  }
  entries.push_back({std::string(key), std::string(value), 0});
}

Doc Doc::parse(std::string_view text) {
  Doc doc;
  Section* cur = &doc.root;
  int lineno = 0;
  for (std::string_view raw : textio::split(text, '\n')) {
    ++lineno;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unterminated section header");
      std::string_view inner = trim(line.substr(1, line.size() - 2));
      if (inner.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section header");
      std::size_t sp = inner.find(' ');
      Section s;
      if (sp == std::string_view::npos) {
        s.kind = std::string(inner);
      } else {
        s.kind = std::string(trim(inner.substr(0, sp)));
        s.name = std::string(trim(inner.substr(sp + 1)));
      }
      doc.sections.push_back(std::move(s));
      cur = &doc.sections.back();
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string_view key = trim(line.substr(0, eq));
    std::string_view value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    cur->entries.push_back({std::string(key), std::string(value), lineno});
  }
  return doc;
}

std::string Doc::serialize() const {
  std::string out;
  auto emit = [&out](const Section& s) {
    for (const auto& e : s.entries) {
      out += e.key;
      out += " = ";
      out += e.value;
      out += '\n';
    }
  };
  emit(root);
  for (const auto& s : sections) {
    out += '[';
    out += s.kind;
    if (!s.name.empty()) {
      out += ' ';
      out += s.name;
    }
    out += "]\n";
    emit(s);
  }
  return out;
}

const Section* Doc::find_section(std::string_view kind, std::string_view name) const {
  for (const auto& s : sections)
    if (s.kind == kind && s.name == name) return &s;
  return nullptr;
}

void apply_override(Doc& doc, std::string_view arg) {
  if (arg.substr(0, 2) != "++")
    throw ConfigError("override must start with '++': " + std::string(arg));
  std::string_view body = arg.substr(2);
  std::size_t eq = body.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must be ++key.path=value: " + std::string(arg));
  doc.root.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
}

const Entry* View::touch(std::string_view key) {
  touched_.insert(std::string(key));
  return s_.find(key);
}

std::optional<std::string> View::get_string(std::string_view key) {
  const Entry* e = touch(key);
  if (!e) return std::nullopt;
  return e->value;
}

std::optional<double> View::get_double(std::string_view key) {
  const Entry* e = touch(key);
  if (!e) return std::nullopt;
  auto v = textio::parse_double(e->value);
  if (!v)
    throw ConfigError("key '" + std::string(key) + "': not a number: " + e->value);
  return v;
}

std::optional<std::int64_t> View::get_i64(std::string_view key) {
  const Entry* e = touch(key);
  if (!e) return std::nullopt;
  auto v = textio::parse_i64(e->value);
  if (!v)
    throw ConfigError("key '" + std::string(key) + "': not an integer: " + e->value);
  return v;
}

std::optional<bool> View::get_bool(std::string_view key) {
  const Entry* e = touch(key);
  if (!e) return std::nullopt;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  throw ConfigError("key '" + std::string(key) + "': not a boolean: " + e->value);
}

std::string View::require_string(std::string_view key) {
  auto v = get_string(key);
  if (!v) throw ConfigError("missing required key '" + std::string(key) + "'");
  return *v;
}

double View::require_double(std::string_view key) {
  auto v = get_double(key);
  if (!v) throw ConfigError("missing required key '" + std::string(key) + "'");
  return *v;
}

std::int64_t View::require_i64(std::string_view key) {
  auto v = get_i64(key);
  if (!v) throw ConfigError("missing required key '" + std::string(key) + "'");
  return *v;
}

double View::get_double_or(std::string_view key, double fallback) {
  auto v = get_double(key);
  return v ? *v : fallback;
}

std::int64_t View::get_i64_or(std::string_view key, std::int64_t fallback) {
  auto v = get_i64(key);
  return v ? *v : fallback;
}

std::string View::get_string_or(std::string_view key, std::string_view fallback) {
  auto v = get_string(key);
  return v ? *v : std::string(fallback);
}

bool View::get_bool_or(std::string_view key, bool fallback) {
  auto v = get_bool(key);
  return v ? *v : fallback;
}

void View::reject_unknown() const {
  for (const auto& e : s_.entries) {
    if (touched_.find(e.key) == touched_.end())
      throw ConfigError("unknown key '" + e.key + "'" +
                        (e.line ? " (line " + std::to_string(e.line) + ")" : ""));
  }
}

}  // namespace tokenlab::config
