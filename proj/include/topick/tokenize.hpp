#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace topick {

/// Canonical tokenizer shared by BM25, the topic miner and topic-name
/// normalization: NFC, lowercase, split on every non-alphanumeric code point,
/// empty tokens dropped. Input must be UTF-8.
std::vector<std::string> tokenize(std::string_view text);

/// Topic names compare equal after this: tokens joined by a single space.
std::string normalize_topic_name(std::string_view name);

}  // namespace topick
