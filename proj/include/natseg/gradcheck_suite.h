#ifndef NATSEG_GRADCHECK_SUITE_H_
#define NATSEG_GRADCHECK_SUITE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "natseg/gradcheck.h"

namespace natseg {

struct NamedCheck {
  std::string name;
  GradCheckReport report;
};

// Every differentiable primitive on small random inputs drawn from `seed`.
std::vector<NamedCheck> gradcheck_ops(std::uint64_t seed);

// Desk-scale end-to-end models (48x48 input, V1 and V2) under the BCE
// training objective.
std::vector<NamedCheck> gradcheck_model(std::uint64_t seed);

// One line per check plus a summary line; byte-identical for a fixed seed.
std::string render_checks(const std::vector<NamedCheck>& checks);
bool all_passed(const std::vector<NamedCheck>& checks);

}  // namespace natseg

#endif  // NATSEG_GRADCHECK_SUITE_H_
