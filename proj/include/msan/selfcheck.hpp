#pragma once

#include <ostream>

namespace msan {

enum class FaultInjection {
  None,
  // Flips the sign of the hidden-side Hadamard term in the factorized
  // decoder step; the rewrite-equivalence check must catch it.
  HiddenHadamardSign,
};

// Fast invariant suite: gradient checks, factorization equivalence,
// attention simplex, beam-1/greedy agreement and the metric oracles.
// Prints one line per check; returns false if any check fails.
bool run_selfcheck(std::ostream& out, FaultInjection fault = FaultInjection::None);

}  // namespace msan
