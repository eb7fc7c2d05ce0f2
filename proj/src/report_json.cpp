#include "scf/report_json.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace scf {

namespace {

void emit(const OrderedJson& v, int indent, int depth, std::string& out) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close(static_cast<std::size_t>(indent * depth), ' ');
    switch (v.type()) {
        case OrderedJson::value_t::object: {
            if (v.empty()) {
                out += "{}";
                return;
            }
            out += "{\n";
            bool first = true;
            for (const auto& [key, item] : v.items()) {
                if (!first) out += ",\n";
                first = false;
                out += pad;
                out += OrderedJson(key).dump();
                out += ": ";
                emit(item, indent, depth + 1, out);
            }
            out += "\n" + close + "}";
            return;
        }
        case OrderedJson::value_t::array: {
            if (v.empty()) {
                out += "[]";
                return;
            }
            // arrays of scalars stay on one line
            const bool flat = std::none_of(v.begin(), v.end(), [](const OrderedJson& x) { return x.is_structured(); });
            out += flat ? "[" : "[\n";
            bool first = true;
            for (const auto& item : v) {
                if (!first) out += flat ? ", " : ",\n";
                first = false;
                if (!flat) out += pad;
                emit(item, indent, depth + 1, out);
            }
            out += flat ? "]" : "\n" + close + "]";
            return;
        }
        case OrderedJson::value_t::number_float: out += format_number(v.get<double>()); return;
        default: out += v.dump(); return;
    }
}

}  // namespace

std::string format_number(double value) {
    if (!std::isfinite(value)) return "null";
    return fmt::format("{:.17g}", value);
}

std::string dump_json(const OrderedJson& value, int indent) {
    std::string out;
    emit(value, indent, 0, out);
    out += '\n';
    return out;
}

}  // namespace scf
