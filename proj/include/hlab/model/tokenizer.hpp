#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hlab::model {

// Byte/word hybrid tokenizer over a closed synthetic vocabulary.
//
// Ids 0-4 are specials, 5-260 cover every byte, and the remainder are whole
// words drawn from a fixed list. A word token matches only at a word boundary
// and only when the full alphanumeric run is in the list; anything else falls
// back to bytes, so decode(encode(s)) == s for every byte string s.
class Tokenizer {
   public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kThinkOpen = 3;
    static constexpr int kThinkClose = 4;
    static constexpr int kByteBase = 5;

    Tokenizer();

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;
    // Text of one token; specials other than the think markers decode to "".
    const std::string& piece(int id) const;

    std::size_t size() const { return pieces_.size(); }
    int byte_id(unsigned char b) const { return kByteBase + b; }
    // Id of a word token (with its leading space when listed that way), or -1.
    int word_id(std::string_view word) const;

    static const std::string& think_open_text();
    static const std::string& think_close_text();

   private:
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, int> words_;
};

const Tokenizer& default_tokenizer();

// Word lists that make up the closed vocabulary; other modules draw synthetic
// text from them.
namespace vocab {
const std::vector<std::string>& filler_nouns();
const std::vector<std::string>& filler_adjectives();
const std::vector<std::string>& filler_verbs();
const std::vector<std::string>& needle_keys();
const std::vector<std::string>& needle_values();
}  // namespace vocab

}  // namespace hlab::model
