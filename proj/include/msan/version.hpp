#pragma once

namespace msan {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kDatasetFormat = "msan-jsonl-v1";
inline constexpr const char* kCheckpointFormat = "msan-checkpoint-v1";

}  // namespace msan
