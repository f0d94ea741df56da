#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "../errors.hpp"
#include "../io.hpp"

namespace statml::cli {

/**
 * Flat configuration text:
 *
 *     # comment
 *     steps = 100000
 *     schedule.kind = geometric
 *     a = 1.5, 2, 3
 *
 * Keys are lowercase dotted paths ([a-z0-9_] segments joined by '.'). A value runs to the end
 * of the line; a '#' after the value starts a comment. Surrounding double quotes are stripped.
 */
class ConfigDocument {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static bool valid_key(std::string_view key) {
    if (key.empty() || key.front() == '.' || key.back() == '.') return false;
    char prev = 0;
    for (char c : key) {
      const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
      if (!ok || (c == '.' && prev == '.')) return false;
      prev = c;
    }
    return true;
  }

  static ConfigDocument parse(std::istream& in) {
    ConfigDocument doc;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string_view line = raw;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = io::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
      const std::string key(io::trim(line.substr(0, eq)));
      std::string_view value = io::trim(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (!valid_key(key)) throw ValidationError("config line " + std::to_string(line_no) + ": invalid key '" + key + "'");
      if (doc.entries_.count(key))
        throw ValidationError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
      doc.entries_[key] = {std::string(value), line_no};
    }
    return doc;
  }

  static ConfigDocument parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse(in);
  }

  void set(const std::string& key, std::string value) {
    if (!valid_key(key)) throw ValidationError("config: invalid key '" + key + "'");
    entries_[key] = {std::move(value), 0};
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

enum class ValueType { integer, real, string, boolean, real_list };

inline std::string_view to_string(ValueType t) {
  switch (t) {
    case ValueType::integer: return "int";
    case ValueType::real: return "real";
    case ValueType::string: return "string";
    case ValueType::boolean: return "bool";
    case ValueType::real_list: return "list";
  }
  return "?";
}

using Value = std::variant<std::int64_t, double, std::string, bool, std::vector<double>>;

/// Returns a reason when the value is out of range.
using Check = std::function<std::optional<std::string>(const Value&)>;

struct KeySpec {
  std::string key;
  ValueType type;
  bool required = false;
  std::optional<std::string> default_text;
  Check check;
  std::string help;
};

struct Diagnostic {
  std::string key;
  std::string message;

  std::string to_string() const { return key + ": " + message; }
  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

inline Value parse_value(ValueType type, std::string_view text) {
  switch (type) {
    case ValueType::integer: return io::parse_int(text);
    case ValueType::real: return io::parse_double(text);
    case ValueType::string: {
      if (text.empty()) throw ValidationError("empty string");
      return std::string(text);
    }
    case ValueType::boolean:
      if (text == "true") return true;
      if (text == "false") return false;
      throw ValidationError("expected true or false, got '" + std::string(text) + "'");
    case ValueType::real_list: return io::parse_real_list(text);
  }
  throw ValidationError("unknown value type");
}

inline std::string value_text(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(x);
        else if constexpr (std::is_same_v<T, double>) return io::format_double(x);
        else if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::string>) return x;
        else {
          std::string out;
          for (std::size_t i = 0; i < x.size(); ++i) out += (i ? ", " : "") + io::format_double(x[i]);
          return out;
        }
      },
      v);
}

/// Config values after schema checking, with defaults filled in.
class ResolvedConfig {
 public:
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::int64_t integer(const std::string& key) const { return get<std::int64_t>(key); }
  std::uint64_t count(const std::string& key) const { return static_cast<std::uint64_t>(get<std::int64_t>(key)); }
  double real(const std::string& key) const { return get<double>(key); }
  const std::string& string(const std::string& key) const { return get<std::string>(key); }
  bool boolean(const std::string& key) const { return get<bool>(key); }
  const std::vector<double>& list(const std::string& key) const { return get<std::vector<double>>(key); }

  void put(const std::string& key, Value v) { values_[key] = std::move(v); }
  const std::map<std::string, Value>& values() const noexcept { return values_; }

 private:
  template <typename T>
  const T& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("config: missing key '" + key + "'");
    const T* v = std::get_if<T>(&it->second);
    if (!v) throw ValidationError("config: key '" + key + "' has the wrong type");
    return *v;
  }

  std::map<std::string, Value> values_;
};

using Schema = std::vector<KeySpec>;

/// Type and range checks; also fills `resolved` when non-null.
inline std::vector<Diagnostic> check_schema(const Schema& schema, const ConfigDocument& doc,
                                            ResolvedConfig* resolved = nullptr) {
  std::vector<Diagnostic> out;
  std::map<std::string, const KeySpec*> by_key;
  for (const auto& spec : schema) by_key[spec.key] = &spec;

  for (const auto& [key, entry] : doc.entries())
    if (!by_key.count(key)) out.push_back({key, "unknown key"});

  for (const auto& spec : schema) {
    const auto it = doc.entries().find(spec.key);
    std::optional<std::string> text;
    if (it != doc.entries().end()) text = it->second.value;
    else if (spec.default_text) text = spec.default_text;
    if (!text) {
      if (spec.required) out.push_back({spec.key, "required key is missing"});
      continue;
    }
    Value v;
    try {
      v = parse_value(spec.type, *text);
    } catch (const std::exception& e) {
      out.push_back({spec.key, "expected " + std::string(to_string(spec.type)) + " (" + e.what() + ")"});
      continue;
    }
    if (spec.check)
      if (auto why = spec.check(v)) {
        out.push_back({spec.key, *why});
        continue;
      }
    if (resolved) resolved->put(spec.key, std::move(v));
  }
  return out;
}

// Range checks used by the subcommand schemas.

inline Check positive_int() {
  return [](const Value& v) -> std::optional<std::string> {
    if (std::get<std::int64_t>(v) <= 0) return "must be positive";
    return std::nullopt;
  };
}

inline Check non_negative_int() {
  return [](const Value& v) -> std::optional<std::string> {
    if (std::get<std::int64_t>(v) < 0) return "must be >= 0";
    return std::nullopt;
  };
}

inline Check int_in(std::int64_t lo, std::int64_t hi) {
  return [lo, hi](const Value& v) -> std::optional<std::string> {
    const auto x = std::get<std::int64_t>(v);
    if (x < lo || x > hi) return "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
    return std::nullopt;
  };
}

inline Check positive_real() {
  return [](const Value& v) -> std::optional<std::string> {
    const double x = std::get<double>(v);
    if (!std::isfinite(x) || !(x > 0.0)) return "must be a finite value > 0";
    return std::nullopt;
  };
}

inline Check finite_real() {
  return [](const Value& v) -> std::optional<std::string> {
    if (!std::isfinite(std::get<double>(v))) return "must be finite";
    return std::nullopt;
  };
}

/// lo <= x <= hi, or lo <= x < hi when `open_top`.
inline Check real_in(double lo, double hi, bool open_top = false) {
  return [=](const Value& v) -> std::optional<std::string> {
    const double x = std::get<double>(v);
    if (!(x >= lo) || (open_top ? !(x < hi) : !(x <= hi)))
      return "must be in [" + io::format_double(lo) + ", " + io::format_double(hi) + (open_top ? ")" : "]");
    return std::nullopt;
  };
}

inline Check one_of(std::vector<std::string> choices) {
  return [choices](const Value& v) -> std::optional<std::string> {
    const auto& s = std::get<std::string>(v);
    for (const auto& c : choices)
      if (c == s) return std::nullopt;
    std::string list;
    for (std::size_t i = 0; i < choices.size(); ++i) list += (i ? ", " : "") + choices[i];
    return "must be one of {" + list + "}, got '" + s + "'";
  };
}

inline Check non_empty_list() {
  return [](const Value& v) -> std::optional<std::string> {
    const auto& x = std::get<std::vector<double>>(v);
    if (x.empty()) return "must not be empty";
    for (double e : x)
      if (!std::isfinite(e)) return "entries must be finite";
    return std::nullopt;
  };
}

}  // namespace statml::cli
