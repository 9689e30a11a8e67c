#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "steerkit/errors.hpp"

#ifndef STEERKIT_TEST_DATA_DIR
#error "STEERKIT_TEST_DATA_DIR must be defined"
#endif

namespace steerkit::testing {

inline std::string read_fixture(const std::string& name) {
    std::ifstream in(std::string(STEERKIT_TEST_DATA_DIR) + "/" + name, std::ios::binary);
    if (!in) throw IoError("missing fixture " + name);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string collapse_whitespace(const std::string& s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

}  // namespace steerkit::testing
