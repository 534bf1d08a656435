#include "textseg/text_grounding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>

#include "textseg/errors.hpp"
#include "textseg/rng.hpp"

namespace textseg {

namespace {

constexpr const char* kShapeNames[] = {"circle", "square", "triangle"};
constexpr const char* kSizeNames[] = {"small", "large"};
constexpr const char* kRowNames[] = {"top", "middle", "bottom"};
constexpr const char* kColNames[] = {"left", "center", "right"};

struct Token {
    std::string text;   // lowercased
    size_t offset;      // byte offset in the original string
};

std::vector<Token> tokenize(const std::string& s) {
    std::vector<Token> out;
    size_t i = 0;
    while (i < s.size()) {
        if (std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
            continue;
        }
        size_t start = i;
        std::string word;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
            ++i;
        }
        out.push_back({std::move(word), start});
    }
    return out;
}

[[noreturn]] void fail(const std::string& what, const std::vector<Token>& toks, size_t idx,
                       size_t text_len) {
    size_t pos = idx < toks.size() ? toks[idx].offset : text_len;
    std::string got = idx < toks.size() ? "'" + toks[idx].text + "'" : "end of text";
    throw ParseError("expected " + what + " at position " + std::to_string(pos) + ", got " + got);
}

template <size_t N>
std::optional<int> lookup(const std::string& word, const char* const (&names)[N]) {
    for (size_t i = 0; i < N; ++i)
        if (word == names[i]) return static_cast<int>(i);
    return std::nullopt;
}

}  // namespace

const char* shape_name(ShapeKind s) { return kShapeNames[static_cast<int>(s)]; }
const char* size_name(SizeQualifier s) { return kSizeNames[static_cast<int>(s)]; }

std::string grid_pos_name(int row, int col) {
    if (row == 1 && col == 1) return "center";
    return std::string(kRowNames[row]) + " " + kColNames[col];
}

GroundingPhrase parse_phrase(const std::string& text) {
    auto toks = tokenize(text);
    size_t i = 0;
    auto expect = [&](const char* word, const char* what) {
        if (i >= toks.size() || toks[i].text != word) fail(what, toks, i, text.size());
        ++i;
    };

    GroundingPhrase p;
    expect("a", "'a'");

    if (i < toks.size())
        if (auto sz = lookup(toks[i].text, kSizeNames)) {
            p.size = static_cast<SizeQualifier>(*sz);
            ++i;
        }

    if (i >= toks.size()) fail("a shape (circle|square|triangle)", toks, i, text.size());
    if (auto sh = lookup(toks[i].text, kShapeNames)) {
        p.shape = static_cast<ShapeKind>(*sh);
        ++i;
    } else {
        fail("a shape (circle|square|triangle)", toks, i, text.size());
    }

    expect("on", "'on'");
    expect("the", "'the'");

    if (i >= toks.size()) fail("a grid position", toks, i, text.size());
    if (toks[i].text == "center") {
        p.row = 1;
        p.col = 1;
        ++i;
    } else {
        auto row = lookup(toks[i].text, kRowNames);
        if (!row) fail("a row (top|middle|bottom) or 'center'", toks, i, text.size());
        ++i;
        if (i >= toks.size()) fail("a column (left|center|right)", toks, i, text.size());
        auto col = lookup(toks[i].text, kColNames);
        if (!col) fail("a column (left|center|right)", toks, i, text.size());
        ++i;
        p.row = *row;
        p.col = *col;
    }

    if (i != toks.size()) fail("end of text", toks, i, text.size());
    return p;
}

std::string render_phrase(const GroundingPhrase& p) {
    return std::string("a ") + size_name(p.size) + " " + shape_name(p.shape) + " on the " +
           grid_pos_name(p.row, p.col);
}

std::vector<GroundingPhrase> all_phrases() {
    std::vector<GroundingPhrase> out;
    out.reserve(54);
    for (int sh = 0; sh < 3; ++sh)
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 3; ++col)
                for (int sz = 0; sz < 2; ++sz)
                    out.push_back({static_cast<ShapeKind>(sh), row, col,
                                   static_cast<SizeQualifier>(sz)});
    return out;
}

namespace {

// One fixed 768-d code per vocabulary entry; the stream depends only on
// (vocab_seed, tag), never on call order or the training RNG.
void add_code(std::vector<double>& acc, uint64_t vocab_seed, const std::string& tag) {
    Rng rng(derive_seed(vocab_seed, tag));
    for (int i = 0; i < kEmbedDim; ++i) acc[i] += rng.normal();
}

std::vector<double> normalized(std::vector<double> v) {
    double nrm = 0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (double& x : v) x /= nrm;
    return v;
}

}  // namespace

std::vector<double> embed_phrase(const GroundingPhrase& p, uint64_t vocab_seed) {
    std::vector<double> acc(kEmbedDim, 0.0);
    add_code(acc, vocab_seed, std::string("shape:") + shape_name(p.shape));
    add_code(acc, vocab_seed, "pos:" + grid_pos_name(p.row, p.col));
    add_code(acc, vocab_seed, std::string("size:") + size_name(p.size));
    return normalized(std::move(acc));
}

std::vector<double> embed_text(const std::string& text, uint64_t vocab_seed) {
    try {
        return embed_phrase(parse_phrase(text), vocab_seed);
    } catch (const ParseError&) {
        // fall through to bag of words
    }
    auto toks = tokenize(text);
    if (toks.empty()) throw ParseError("cannot embed empty text");
    // canonical accumulation order so word order cannot perturb the bits
    std::vector<std::string> words;
    words.reserve(toks.size());
    for (const auto& t : toks) words.push_back(t.text);
    std::sort(words.begin(), words.end());
    std::vector<double> acc(kEmbedDim, 0.0);
    for (const auto& w : words) add_code(acc, vocab_seed, "tok:" + w);
    return normalized(std::move(acc));
}

}  // namespace textseg
