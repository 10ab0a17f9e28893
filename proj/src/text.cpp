#include "selfheal/text.hpp"

#include <algorithm>
#include <cctype>

namespace selfheal::text {

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= static_cast<std::uint64_t>(c);
        h *= kFnvPrime;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

namespace {

// A token counts as a placeholder variant if it is `<`...`>` around word
// characters, `*`, `-` or `:` (covers <*>, <NUM>, <block_id>, ...).
bool is_placeholder_token(std::string_view tok) {
    if (tok.size() < 2 || tok.front() != '<' || tok.back() != '>') return false;
    for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
        char c = tok[i];
        bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '*' ||
                  c == '-' || c == ':';
        if (!ok) return false;
    }
    return true;
}

}  // namespace

std::string normalize(std::string_view s) {
    std::string lowered = to_lower(trim(s));
    std::string collapsed;
    collapsed.reserve(lowered.size());
    bool prev_space = false;
    for (char c : lowered) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!prev_space && !collapsed.empty()) collapsed.push_back(' ');
            prev_space = true;
        } else {
            collapsed.push_back(c);
            prev_space = false;
        }
    }
    while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();

    // Unify placeholder variants. Scan for <...> spans anywhere in the text;
    // templates routinely glue placeholders to punctuation (e.g. "/<*>").
    std::string out;
    out.reserve(collapsed.size());
    std::size_t i = 0;
    while (i < collapsed.size()) {
        if (collapsed[i] == '<') {
            std::size_t close = collapsed.find('>', i + 1);
            if (close != std::string::npos &&
                is_placeholder_token(std::string_view(collapsed).substr(i, close - i + 1))) {
                out += "<*>";
                i = close + 1;
                continue;
            }
        }
        out.push_back(collapsed[i]);
        ++i;
    }
    return out;
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double next_unit(std::uint64_t& state) {
    return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

}  // namespace selfheal::text
