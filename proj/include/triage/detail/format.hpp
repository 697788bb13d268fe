#pragma once

#include <array>
#include <charconv>
#include <string>

namespace triage::detail {

// Shortest decimal form that parses back to the same double.
inline std::string shortest_double(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    (void)ec;
    return std::string(buf.data(), ptr);
}

} // namespace triage::detail
