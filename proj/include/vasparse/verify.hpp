#pragma once

// Property and oracle suite behind `vasparse verify`.

#include "vasparse/io.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace vasparse {

struct VerifyOptions {
  int instances = 1000;
  int max_len = 16;
  std::uint64_t seed = 0;
  ModelConfig model = desk_model_config();
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  std::vector<OracleRow> oracle_rows;

  bool passed() const;
};

/// Runs every check; `progress` (optional) sees each result as it lands.
VerifyReport run_verify(const VerifyOptions& options,
                        const std::function<void(const CheckResult&)>& progress = {});

/// Comparison of select_top_s against the exhaustive oracle on
/// seeded random instances. Lambda cycles through {0, 0.1, 1}.
std::vector<OracleRow> oracle_comparison(int instances, int max_len, std::uint64_t seed);

}  // namespace vasparse
