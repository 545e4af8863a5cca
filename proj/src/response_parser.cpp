#include "stnas/response_parser.hpp"

#include <algorithm>
#include <cctype>

#include "stnas/errors.hpp"

namespace stnas {

namespace {

// End (one past the closing brace) of the balanced object starting at `open`.
std::optional<std::size_t> balanced_end(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"')
      in_string = true;
    else if (c == '{')
      ++depth;
    else if (c == '}' && --depth == 0)
      return i + 1;
  }
  return std::nullopt;
}

nlohmann::json require_object(std::string_view text) {
  auto obj = extract_json_object(text);
  if (!obj) throw ParseError("response contains no JSON object");
  return *obj;
}

std::string lowered_trimmed(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::optional<nlohmann::json> extract_json_object(std::string_view text) {
  for (std::size_t open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    auto end = balanced_end(text, open);
    if (!end) continue;
    auto parsed = nlohmann::json::parse(text.substr(open, *end - open), nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
  }
  return std::nullopt;
}

ArchResponse parse_arch_response(std::string_view text) {
  const nlohmann::json obj = require_object(text);
  auto it = obj.find("Combination of modules");
  if (it == obj.end()) throw ParseError("missing \"Combination of modules\"");
  if (!it->is_object()) throw ParseError("\"Combination of modules\" is not an object");
  ArchResponse out;
  out.spec = arch_from_json(*it);
  if (auto e = obj.find("Explanation"); e != obj.end() && e->is_string()) out.explanation = e->get<std::string>();
  return out;
}

ArchSpec parse_arch_spec(std::string_view text) { return parse_arch_response(text).spec; }

CellKind parse_layer_response(std::string_view text) {
  const nlohmann::json obj = require_object(text);
  auto it = obj.find("New layer");
  if (it == obj.end()) throw ParseError("missing \"New layer\"");
  if (!it->is_string()) throw ParseError("\"New layer\" is not a string");
  auto kind = cell_kind_from_name(it->get<std::string>());
  if (!kind) throw ParseError("\"New layer\" has unknown module \"" + it->get<std::string>() + "\"");
  return *kind;
}

bool parse_judgment(std::string_view text) {
  const nlohmann::json obj = require_object(text);
  auto it = obj.find("Judgment");
  if (it == obj.end()) throw ParseError("missing \"Judgment\"");
  if (!it->is_string()) throw ParseError("\"Judgment\" is not a string");
  const std::string value = lowered_trimmed(it->get<std::string>());
  if (value == "possible") return true;
  if (value == "impossible") return false;
  throw ParseError("\"Judgment\" must be possible or impossible, got \"" + it->get<std::string>() + "\"");
}

std::string format_arch_response(const ArchSpec& spec, const std::string& explanation) {
  nlohmann::ordered_json j;
  j["Combination of modules"] = to_json(spec);
  j["Explanation"] = explanation;
  return j.dump();
}

std::string format_layer_response(CellKind kind, const std::string& explanation) {
  nlohmann::ordered_json j;
  j["New layer"] = std::string(canonical_name(kind));
  j["Explanation"] = explanation;
  return j.dump();
}

std::string format_judgment_response(bool possible, const std::string& explanation) {
  nlohmann::ordered_json j;
  j["Judgment"] = possible ? "possible" : "impossible";
  j["Explanation"] = explanation;
  return j.dump();
}

}  // namespace stnas
