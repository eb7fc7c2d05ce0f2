#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace scf {

using OrderedJson = nlohmann::ordered_json;

/// 17 significant digits ("%.17g"); NaN and infinities become "null".
std::string format_number(double value);

/// Pretty-prints with floats through format_number, keys in insertion order,
/// and a trailing newline.
std::string dump_json(const OrderedJson& value, int indent = 2);

}  // namespace scf
