#pragma once

#include <iosfwd>

namespace crossview {

// Central finite-difference verification of every differentiable op, a 3-step
// LSTM unroll, and all loss functions, at 64-bit precision. Prints one line
// per check; returns false if any relative error exceeds 1e-4.
bool run_gradcheck_suite(int instances_per_check, std::ostream& out);

}  // namespace crossview
