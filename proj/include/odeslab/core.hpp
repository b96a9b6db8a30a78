// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace odeslab {

using Vec = std::vector<double>;

enum class ErrorKind {
    Domain,         // argument outside a function's domain
    InvalidArgument,
    Numerical,      // iteration or refinement failed to converge
    Config,         // malformed configuration or input file
    Io,
};

/// Library error. The kind selects the CLI exit status (Config -> 2, Numerical -> 3).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline double norm2(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

inline double distance2(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// ||a - b|| / max(||b||, 1e-300).
inline double relative_distance(std::span<const double> a, std::span<const double> b) {
    const double scale = std::max(norm2(b), 1e-300);
    return distance2(a, b) / scale;
}

inline Vec scaled(std::span<const double> x, double c) {
    Vec out(x.begin(), x.end());
    for (double& v : out) v *= c;
    return out;
}

/// Shortest faithful decimal form used in every emitted file: 17 significant digits.
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace odeslab
