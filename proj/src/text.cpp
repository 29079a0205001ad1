#include "iqgen/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace iqgen {

namespace {

constexpr std::array<std::string_view, 18> kNavWords = {
    "google",  "youtube",   "facebook", "amazon", "twitter",  "instagram",
    "gmail",   "netflix",   "reddit",   "tiktok", "homepage", "home",
    "menu",    "settings",  "profile",  "search", "maps",     "wikipedia",
};

constexpr std::array<std::string_view, 36> kGenericWords = {
    "weather", "today",  "news",   "latest", "update", "updates",
    "online",  "free",   "best",   "top",    "near",   "me",
    "now",     "new",    "the",    "a",      "an",     "of",
    "for",     "and",    "to",     "in",     "on",     "my",
    "more",    "info",   "page",   "site",   "open",   "app",
    "daily",   "local",  "live",   "time",   "hours",  "deals",
};

constexpr std::array<std::string_view, 5> kLoginWords = {
    "login", "signin", "logout", "signup", "password",
};

bool contains(std::span<const std::string_view> words, std::string_view token) {
    return std::find(words.begin(), words.end(), token) != words.end();
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

std::string to_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool all_digits(std::string_view token) {
    if (token.empty()) return false;
    return std::all_of(token.begin(), token.end(),
                       [](unsigned char c) { return std::isdigit(c) != 0; });
}

std::span<const std::string_view> nav_words() { return kNavWords; }

std::span<const std::string_view> generic_words() { return kGenericWords; }

bool is_nav_word(std::string_view token) { return contains(kNavWords, token); }

bool is_generic_word(std::string_view token) { return contains(kGenericWords, token); }

bool is_login_word(std::string_view token) { return contains(kLoginWords, token); }

bool is_url_only(std::string_view payload) {
    std::string p = to_lower(payload);
    // Strip scheme.
    for (std::string_view scheme : {"https://", "http://"}) {
        if (p.starts_with(scheme)) {
            p = p.substr(scheme.size());
            break;
        }
    }
    // Drop any path component.
    if (auto slash = p.find('/'); slash != std::string::npos) p = p.substr(0, slash);
    if (p.find(' ') != std::string::npos) return false;
    // Need at least one dot and a known top-level domain at the end.
    auto last_dot = p.rfind('.');
    if (last_dot == std::string::npos || last_dot == 0 || last_dot + 1 >= p.size()) return false;
    const std::string tld = p.substr(last_dot + 1);
    bool known_tld = false;
    for (std::string_view t : {"com", "org", "net", "io", "se", "gov", "edu"}) {
        if (tld == t) known_tld = true;
    }
    if (!known_tld) return false;
    // Everything before the TLD must be dot-separated alphanumeric labels.
    const std::string head = p.substr(0, last_dot);
    if (head.empty()) return false;
    for (char c : head) {
        const auto uc = static_cast<unsigned char>(c);
        if (!std::isalnum(uc) && c != '.' && c != '-') return false;
    }
    return true;
}

}  // namespace iqgen
