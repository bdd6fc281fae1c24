#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>

#include "clp/errors.hpp"

namespace clp {

// Shortest exact decimal form that round-trips a double; identical inputs
// always produce identical text, which the reproducibility checks rely on.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Tiny CSV emitter. Every file starts with a `# config=<hash>` comment line
// so artifacts carry their lineage, then a header row.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& config_hash,
              std::initializer_list<const char*> columns)
        : out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot open for writing: " + path);
        out_ << "# config=" << config_hash << "\n";
        bool first = true;
        for (const char* c : columns) {
            if (!first) out_ << ",";
            out_ << c;
            first = false;
        }
        out_ << "\n";
    }

    void row(std::initializer_list<std::string> cells) {
        bool first = true;
        for (const std::string& c : cells) {
            if (!first) out_ << ",";
            out_ << c;
            first = false;
        }
        out_ << "\n";
    }

    void close() { out_.close(); }

private:
    std::ofstream out_;
};

}  // namespace clp
