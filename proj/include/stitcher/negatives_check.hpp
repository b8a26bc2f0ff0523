#pragma once

#include <string>

#include "stitcher/datagen.hpp"

namespace stitcher {

// Independent machine check of the violation predicates. Implemented by
// direct scanning of the sample against the pool, separately from the
// samplers, so sampler bugs cannot hide behind shared logic.
bool verify_negative(const NegativeSample& neg, const Pool& pool, double threshold,
                     std::string* why = nullptr);

}  // namespace stitcher
