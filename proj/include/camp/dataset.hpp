#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "camp/errors.hpp"
#include "camp/tensor.hpp"

namespace camp {

/// A dataset is an n x V matrix of i.i.d. samples: rows are samples,
/// columns are variables.
using Dataset = Tensor;

/// Column z-scoring with population sigma; constant columns map to zeros.
/// Idempotent up to floating-point noise.
inline Dataset zscore_columns(const Dataset& x) {
    const size_t n = x.rows(), v = x.cols();
    Dataset out({n, v});
    for (size_t j = 0; j < v; ++j) {
        double mu = 0.0;
        for (size_t i = 0; i < n; ++i) mu += x(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double d = x(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        if (sd < 1e-12) {
            for (size_t i = 0; i < n; ++i) out(i, j) = 0.0;
        } else {
            for (size_t i = 0; i < n; ++i) out(i, j) = (x(i, j) - mu) / sd;
        }
    }
    return out;
}

/// Dataset CSV: header row `x0,...,x{V-1}`, one sample per row. Values are
/// written with 17 significant digits so the round trip is exact.
inline void write_dataset_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open for write: " + path);
    const size_t n = data.rows(), v = data.cols();
    for (size_t j = 0; j < v; ++j) {
        if (j) out << ',';
        out << 'x' << j;
    }
    out << '\n';
    char buf[40];
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < v; ++j) {
            if (j) out << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", data(i, j));
            out << buf;
        }
        out << '\n';
    }
}

inline Dataset parse_dataset_csv(std::istream& in, const std::string& what) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(what + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t v = 0;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            const std::string expected = "x" + std::to_string(v);
            if (cell != expected)
                throw ParseError(what + ": line 1: expected header '" + expected + "', got '" +
                                 cell + "'");
            ++v;
        }
    }
    if (v == 0) throw ParseError(what + ": header has no columns");

    std::vector<double> values;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t col = 0, pos = 0;
        while (true) {
            const size_t comma = line.find(',', pos);
            const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                                 : comma - pos);
            char* end = nullptr;
            const double val = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw ParseError(what + ": line " + std::to_string(lineno) + ": bad number '" +
                                 cell + "'");
            values.push_back(val);
            ++col;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (col != v)
            throw ParseError(what + ": line " + std::to_string(lineno) + ": expected " +
                             std::to_string(v) + " values, got " + std::to_string(col));
    }
    if (values.empty()) throw ParseError(what + ": no data rows");
    const size_t n = values.size() / v;
    return Dataset({n, v}, std::move(values));
}

inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    return parse_dataset_csv(in, path);
}

}  // namespace camp
