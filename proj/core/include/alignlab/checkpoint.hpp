#pragma once

#include <map>
#include <string>
#include <vector>

#include "alignlab/encoder.hpp"
#include "alignlab/tensor.hpp"

namespace alignlab {

/// Named-array checkpoint: magic, metadata strings, then per array
/// name -> shape -> row-major float64 (little-endian).
void save_checkpoint(const std::string& path, const ParamMap& params,
                     const std::map<std::string, std::string>& metadata);

struct Checkpoint {
    ParamMap params;  // loaded with requires_grad = true
    std::map<std::string, std::string> metadata;
};

Checkpoint load_checkpoint(const std::string& path);

/// One JSON object per line: {"id": ..., "role": "image"|"text"|"patch_grid",
/// "shape": [...], "values": [...]}.
struct EmbeddingRecord {
    std::string id;
    std::string role;
    std::vector<std::int64_t> shape;
    std::vector<double> values;
};

void write_embedding_dump(const std::string& path, const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embedding_dump(const std::string& path);

}  // namespace alignlab
