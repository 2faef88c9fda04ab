#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knormlab/model.hpp"

namespace knormlab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_location;
  bool loss_finite = true;
  std::int64_t coords_checked = 0;

  bool ok(double tol) const { return loss_finite && max_rel_error < tol; }
};

// Central finite differences of the loss over parameter coordinates,
// compared against the tape gradient. Double precision only; dropout masks
// are frozen because the forward context is held fixed across evaluations.
// When the model has more than max_coords parameters, a seeded random
// subset of max_coords coordinates is checked.
GradCheckResult finite_difference_check(
    ModelGraph& model, const Tensor& input,
    const std::vector<std::int64_t>& labels, double h = 1e-5,
    std::int64_t max_coords = 200, std::uint64_t coord_seed = 0,
    bool training = true, std::uint64_t mask_seed = 0);

}  // namespace knormlab
