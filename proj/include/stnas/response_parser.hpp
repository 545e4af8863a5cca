#pragma once

// Extraction of the structured answer from free-form model responses.

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "stnas/arch.hpp"

namespace stnas {

// First balanced {...} in `text` that parses as JSON; nullopt when none does.
std::optional<nlohmann::json> extract_json_object(std::string_view text);

struct ArchResponse {
  ArchSpec spec;
  std::string explanation;  // empty when absent
};

// Requires "Combination of modules" with Layer_1..Layer_6. ParseError names
// the defect (no JSON, missing key, unknown module in a layer).
ArchResponse parse_arch_response(std::string_view text);
ArchSpec parse_arch_spec(std::string_view text);

// {"New layer": "<module>"} -> CellKind.
CellKind parse_layer_response(std::string_view text);
// {"Judgment": "possible" | "impossible"}, case-insensitive.
bool parse_judgment(std::string_view text);

// Response text in the requested formats, used by scripted policies.
std::string format_arch_response(const ArchSpec& spec, const std::string& explanation);
std::string format_layer_response(CellKind kind, const std::string& explanation);
std::string format_judgment_response(bool possible, const std::string& explanation);

}  // namespace stnas
