#include "hlab/model/tokenizer.hpp"

#include <cctype>

#include "hlab/numcore/errors.hpp"

namespace hlab::model {

namespace vocab {

const std::vector<std::string>& filler_nouns() {
    static const std::vector<std::string> v = {"cat",  "dog",  "bird", "river",    "tree", "house", "city",   "garden",
                                               "lamp", "book", "boat", "mountain", "road", "cloud", "forest", "window"};
    return v;
}

const std::vector<std::string>& filler_adjectives() {
    static const std::vector<std::string> v = {"small", "quiet", "old",  "green", "bright",
                                               "lazy",  "happy", "dark", "warm",  "tall"};
    return v;
}

const std::vector<std::string>& filler_verbs() {
    static const std::vector<std::string> v = {"sees",    "follows", "finds",  "watches", "paints",
                                               "crosses", "visits",  "builds", "likes",   "moves"};
    return v;
}

const std::vector<std::string>& needle_keys() {
    static const std::vector<std::string> v = {
        "alpha", "bravo", "charlie", "delta",  "echo",    "foxtrot", "golf",    "hotel",
        "india", "juliet", "kilo",   "lima",   "mike",    "november", "oscar",  "papa",
        "quebec", "romeo", "sierra", "tango",  "uniform", "victor",  "whiskey", "yankee"};
    return v;
}

const std::vector<std::string>& needle_values() {
    static const std::vector<std::string> v = {
        "zorblin", "quandor", "vexil",  "miraflo", "trunix", "oblent", "skarvo", "plenth",
        "drovik",  "yulmast", "fenrow", "gaskel",  "hivrun", "jostel", "kreblo", "lumvar",
        "nafrost", "opixel",  "prundo", "quillar", "rastiv", "sulpho", "tivran", "umbrel",
        "vostik",  "wendral", "xyloc",  "yarbin",  "zephlo", "brintok", "clavro", "dunmire"};
    return v;
}

}  // namespace vocab

namespace {

const std::string kOpenText = "<think>";
const std::string kCloseText = "</think>";
const std::string kEmpty;

std::vector<std::string> word_list() {
    std::vector<std::string> words = {"Considering", " the",   " limited", " time",     " by",       " user",
                                      " I",          " have",  " to",      " give",     " solution", " based",
                                      " on",         " thinking", " directly", " now",  " The",      " secret",
                                      " code",       " for",   " is",      " What",     " a",        " and"};
    for (const auto* list : {&vocab::filler_nouns(), &vocab::filler_adjectives(), &vocab::filler_verbs(),
                             &vocab::needle_keys(), &vocab::needle_values()})
        for (const auto& w : *list) words.push_back(" " + w);
    return words;
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

const std::string& Tokenizer::think_open_text() { return kOpenText; }
const std::string& Tokenizer::think_close_text() { return kCloseText; }

Tokenizer::Tokenizer() {
    pieces_ = {"", "", "", kOpenText, kCloseText};
    for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
    for (auto& w : word_list()) {
        if (words_.count(w)) continue;
        words_.emplace(w, static_cast<int>(pieces_.size()));
        pieces_.push_back(w);
    }
}

int Tokenizer::word_id(std::string_view word) const {
    auto it = words_.find(std::string(word));
    return it == words_.end() ? -1 : it->second;
}

const std::string& Tokenizer::piece(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) return kEmpty;
    return pieces_[id];
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        if (text.substr(i, kCloseText.size()) == kCloseText) {
            ids.push_back(kThinkClose);
            i += kCloseText.size();
            continue;
        }
        if (text.substr(i, kOpenText.size()) == kOpenText) {
            ids.push_back(kThinkOpen);
            i += kOpenText.size();
            continue;
        }
        const bool space = text[i] == ' ';
        const std::size_t j = space ? i + 1 : i;
        const bool boundary = space || i == 0 || !is_alnum(text[i - 1]);
        if (boundary && j < n && is_alnum(text[j])) {
            std::size_t k = j;
            while (k < n && is_alnum(text[k])) ++k;
            auto it = words_.find(std::string(text.substr(i, k - i)));
            if (it != words_.end()) {
                ids.push_back(it->second);
                i = k;
                continue;
            }
        }
        ids.push_back(byte_id(static_cast<unsigned char>(text[i])));
        ++i;
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
            throw InputError("decode: token id " + std::to_string(id) + " outside vocabulary");
        out += pieces_[id];
    }
    return out;
}

const Tokenizer& default_tokenizer() {
    static const Tokenizer tok;
    return tok;
}

}  // namespace hlab::model
