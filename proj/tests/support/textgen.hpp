#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ratt {

// Deterministic pseudo-English documents with heavy in-document reuse of
// invented entity names and numeric facts, so longer-range context genuinely
// helps next-byte prediction. Used by the training tests and the trend
// acceptance runs.
std::vector<std::string> make_docs(int64_t target_bytes, uint64_t seed);
std::string make_text(int64_t target_bytes, uint64_t seed);

}  // namespace ratt
