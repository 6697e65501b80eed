#include <doctest.h>

#include "topick/hashing.hpp"
#include "topick/tokenize.hpp"

using namespace topick;

TEST_CASE("tokenize lowercases and splits on non-alphanumerics")
{
    CHECK(tokenize("Food-Chain, HERBIVORE!") == std::vector<std::string>{"food", "chain", "herbivore"});
    CHECK(tokenize("  ").empty());
    CHECK(tokenize("x2 + y3=z") == std::vector<std::string>{"x2", "y3", "z"});
}

TEST_CASE("tokenize composes to NFC before splitting")
{
    // "e" + combining acute vs precomposed U+00E9
    CHECK(tokenize("Caf\x65\xCC\x81") == tokenize("caf\xC3\xA9"));
    CHECK(tokenize("\xC3\x89T\xC3\x89") == std::vector<std::string>{"\xC3\xA9t\xC3\xA9"});
}

TEST_CASE("topic names normalize to single-spaced tokens")
{
    CHECK(normalize_topic_name("  Food   Chain ") == "food chain");
    CHECK(normalize_topic_name("food-chain") == "food chain");
    CHECK(normalize_topic_name("!!").empty());
}

TEST_CASE("sha256 matches published digests")
{
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    Sha256 h;
    h.update("a").update("bc");
    CHECK(h.hex_digest() == sha256_hex("abc"));
}
