#pragma once

#include <cstdint>
#include <string_view>

namespace vasparse {

/// Derives an independent seed for a named sub-stream from a master seed.
/// Stable across platforms and runs.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

/// Same, with an additional integer index (per-step or per-instance streams).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index);

}  // namespace vasparse
