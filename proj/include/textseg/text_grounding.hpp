#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace textseg {

// Structured grounding phrases. The grammar is
//   a {small|large} {circle|square|triangle} on the {top|middle|bottom} {left|center|right}
// with the size optional (default small) and "middle center" collapsing to
// plain "center".

enum class ShapeKind { circle, square, triangle };
enum class SizeQualifier { small, large };

struct GroundingPhrase {
    ShapeKind shape = ShapeKind::circle;
    int row = 0;  // 0 top, 1 middle, 2 bottom
    int col = 0;  // 0 left, 1 center, 2 right
    SizeQualifier size = SizeQualifier::small;

    bool operator==(const GroundingPhrase&) const = default;
};

const char* shape_name(ShapeKind s);
const char* size_name(SizeQualifier s);
// "top left", ..., "center" for (1,1)
std::string grid_pos_name(int row, int col);

// Case-insensitive, ignores surrounding whitespace. Throws ParseError with the
// byte offset of the offending token.
GroundingPhrase parse_phrase(const std::string& text);

// Canonical lowercase form; parse_phrase(render_phrase(p)) == p.
std::string render_phrase(const GroundingPhrase& p);

// All 54 phrases in a fixed order: shape-major, then row, col, size.
std::vector<GroundingPhrase> all_phrases();

inline constexpr int kEmbedDim = 768;

// Shared default for the embedding codebook seed. Kept separate from any
// run/training seed so changing the experiment seed never moves the text
// representation.
inline constexpr uint64_t kDefaultVocabSeed = 42;

// Unit-norm 768-vector: the L2-normalized sum of three per-attribute code
// vectors, each derived only from (vocab_seed, attribute). Independent of any
// training RNG stream.
std::vector<double> embed_phrase(const GroundingPhrase& p, uint64_t vocab_seed);

// Grammar text goes through embed_phrase; anything else falls back to a
// bag-of-words sum of per-token codes (lowercase, whitespace-split),
// normalized. Empty/whitespace-only text is a ParseError.
std::vector<double> embed_text(const std::string& text, uint64_t vocab_seed);

}  // namespace textseg
