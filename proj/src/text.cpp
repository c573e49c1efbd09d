#include "cdemap/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/ustring.h>

#include <cstdio>
#include <cstdlib>

namespace cdemap::text {

namespace {

bool is_space(UChar32 c) { return u_isUWhiteSpace(c) || c == 0x00A0; }

const icu::Normalizer2& nfc() {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
    // The NFC data is compiled into libicudata; failure means a broken install.
    if (U_FAILURE(status) || n == nullptr) {
        std::fprintf(stderr, "ICU NFC normalizer unavailable: %s\n", u_errorName(status));
        std::abort();
    }
    return *n;
}

icu::UnicodeString squash(const icu::UnicodeString& in) {
    icu::UnicodeString out;
    bool pending_space = false;
    for (int32_t i = 0; i < in.length();) {
        UChar32 c = in.char32At(i);
        i += U16_LENGTH(c);
        if (is_space(c)) {
            pending_space = !out.isEmpty();
            continue;
        }
        if (pending_space) {
            out.append(static_cast<UChar>(' '));
            pending_space = false;
        }
        out.append(c);
    }
    return out;
}

std::string to_utf8(const icu::UnicodeString& s) {
    std::string out;
    s.toUTF8String(out);
    return out;
}

}  // namespace

std::string squash_whitespace(std::string_view s) {
    return to_utf8(squash(icu::UnicodeString::fromUTF8(
        icu::StringPiece(s.data(), static_cast<int32_t>(s.size())))));
}

std::string normalize_surface(std::string_view s) {
    UErrorCode status = U_ZERO_ERROR;
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(
        icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
    icu::UnicodeString folded = nfc().normalize(u, status);
    if (U_FAILURE(status)) folded = u;
    folded.foldCase();
    // Case folding can denormalize (e.g. U+0130), so renormalize.
    status = U_ZERO_ERROR;
    icu::UnicodeString renorm = nfc().normalize(folded, status);
    if (U_FAILURE(status)) renorm = folded;
    return to_utf8(squash(renorm));
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && static_cast<unsigned char>(s[b]) <= ' ') ++b;
    while (e > b && static_cast<unsigned char>(s[e - 1]) <= ' ') --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view s) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(normalize_surface(s));
    std::vector<std::string> out;
    icu::UnicodeString cur;
    for (int32_t i = 0; i < u.length();) {
        UChar32 c = u.char32At(i);
        i += U16_LENGTH(c);
        if (u_isalnum(c)) {
            cur.append(c);
        } else if (!cur.isEmpty()) {
            out.push_back(to_utf8(cur));
            cur.remove();
        }
    }
    if (!cur.isEmpty()) out.push_back(to_utf8(cur));
    return out;
}

std::size_t word_count(std::string_view s) {
    std::string sq = squash_whitespace(s);
    if (sq.empty()) return 0;
    std::size_t n = 1;
    for (char c : sq)
        if (c == ' ') ++n;
    return n;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint32_t fnv1a32(std::string_view s) {
    std::uint32_t h = 0x811c9dc5U;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x01000193U;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

bool contains(std::string_view haystack, std::string_view needle) {
    return haystack.find(needle) != std::string_view::npos;
}

}  // namespace cdemap::text
