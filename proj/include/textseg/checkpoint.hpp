#pragma once

#include <string>
#include <utility>
#include <vector>

#include "textseg/tensor.hpp"

namespace textseg {

// Flat binary container for named parameter arrays. Byte layout (integers
// little-endian):
//   byte 0   "TSCP" magic
//   byte 4   u32 format version (1)
//   byte 8   u64 length N of the JSON header
//   byte 16  N bytes UTF-8 JSON:
//            {"config": <caller-supplied object>,
//             "tensors": [{"name", "shape", "offset", "count"}, ...]}
//            offset/count are in f64 elements relative to the payload
//   16+N     payload: little-endian f64 arrays, tightly packed in header order
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

struct CheckpointData {
    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> tensors;  // loaded as trainable leaves
};

// FormatError on anything that does not parse back exactly; IoError when
// the file cannot be read at all.
CheckpointData load_checkpoint_file(const std::string& path);

// FNV-1a over the raw file bytes, as 16 hex digits.
std::string file_fnv1a_hex(const std::string& path);

}  // namespace textseg
