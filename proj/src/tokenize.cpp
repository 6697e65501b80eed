#include "topick/tokenize.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/locid.h>
#include <unicode/unistr.h>

#include "topick/error.hpp"

namespace topick {

std::vector<std::string> tokenize(std::string_view text)
{
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) {
        throw Error(std::string("ICU NFC normalizer unavailable: ") + u_errorName(status));
    }
    icu::UnicodeString src = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    icu::UnicodeString normalized = nfc->normalize(src, status);
    if (U_FAILURE(status)) {
        throw Error(std::string("NFC normalization failed: ") + u_errorName(status));
    }
    normalized.toLower(icu::Locale::getRoot());

    std::vector<std::string> tokens;
    icu::UnicodeString current;
    auto flush = [&] {
        if (!current.isEmpty()) {
            std::string utf8;
            current.toUTF8String(utf8);
            tokens.push_back(std::move(utf8));
            current.remove();
        }
    };
    for (int32_t i = 0; i < normalized.length();) {
        UChar32 c = normalized.char32At(i);
        if (u_isalnum(c)) {
            current.append(c);
        } else {
            flush();
        }
        i = normalized.moveIndex32(i, 1);
    }
    flush();
    return tokens;
}

std::string normalize_topic_name(std::string_view name)
{
    std::string out;
    for (const auto& tok : tokenize(name)) {
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

}  // namespace topick
