// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "odeslab/core.hpp"

namespace odeslab {

using Json = nlohmann::ordered_json;

/// Rejects any key of `j` not listed in `allowed`.
inline void require_known_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                               const std::string& context) {
    if (!j.is_object()) fail(ErrorKind::Config, context + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            fail(ErrorKind::Config, context + ": unknown key \"" + it.key() + "\"");
        }
    }
}

template <typename T>
T required(const Json& j, const char* key, const std::string& context) {
    if (!j.contains(key)) fail(ErrorKind::Config, context + ": missing key \"" + key + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, context + ": bad value for \"" + key + "\": " + e.what());
    }
}

template <typename T>
T optional_or(const Json& j, const char* key, T fallback, const std::string& context) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return required<T>(j, key, context);
}

namespace detail {

inline void write_json(const Json& j, std::string& out, int indent, int depth) {
    const auto newline = [&](int d) {
        if (indent < 0) return;
        out += '\n';
        out.append(static_cast<std::size_t>(indent * d), ' ');
    };
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ',';
                first = false;
                newline(depth + 1);
                out += Json(it.key()).dump();
                out += indent < 0 ? ":" : ": ";
                write_json(it.value(), out, indent, depth + 1);
            }
            newline(depth);
            out += '}';
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            // Numeric arrays stay on one line.
            const bool flat = std::all_of(j.begin(), j.end(), [](const Json& v) { return v.is_primitive(); });
            out += '[';
            bool first = true;
            for (const auto& v : j) {
                if (!first) out += flat ? ", " : ",";
                first = false;
                if (!flat) newline(depth + 1);
                write_json(v, out, indent, depth + 1);
            }
            if (!flat) newline(depth);
            out += ']';
            return;
        }
        case Json::value_t::number_float: {
            const double v = j.get<double>();
            out += std::isfinite(v) ? format_g17(v) : std::string("null");
            return;
        }
        default:
            out += j.dump();
    }
}

}  // namespace detail

/// Serializes with every float at 17 significant digits; non-finite floats become null.
inline std::string dump_json(const Json& j, int indent = 2) {
    std::string out;
    detail::write_json(j, out, indent, 0);
    out += '\n';
    return out;
}

}  // namespace odeslab
