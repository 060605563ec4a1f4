#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adfseg::checks {

/// One self-check outcome. err is the measured deviation (or the raw value
/// for threshold-style rows); tol is what it was held against.
struct CheckRow {
  std::string name;
  double err{0};
  double tol{0};
  bool pass{false};
};

/// Loss values against explicit-loop oracles (20 random inputs per loss) and
/// the fixed boundary cases.
std::vector<CheckRow> loss_oracle_checks(uint64_t seed);

/// Central finite differences on every loss term, (B=2, D=8) leaves,
/// perturbation 1e-4, relative error bound 1e-3.
std::vector<CheckRow> gradient_checks(uint64_t seed);

/// lambda2 closed form, bitwise, plus its boundary cases.
std::vector<CheckRow> schedule_checks();

/// End-to-end probes: 50-step descent on a fixed synthetic batch, and a
/// checkpoint-resume run compared bitwise against an uninterrupted one.
std::vector<CheckRow> training_probe_checks(uint64_t seed);

bool all_pass(const std::vector<CheckRow>& rows);
void print_table(const std::vector<CheckRow>& rows);

}  // namespace adfseg::checks
