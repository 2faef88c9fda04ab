#pragma once

#include <cstdint>
#include <vector>

namespace knormlab {

// Step decay: base eta divided by 2 at each milestone the epoch has
// passed. Empty milestones = fixed learning rate.
double lr_at(std::int64_t epoch, double base_lr,
             const std::vector<std::int64_t>& milestones);

// {T-30, T-10}, clipped to >= 0.
std::vector<std::int64_t> default_milestones(std::int64_t total_epochs);

}  // namespace knormlab
