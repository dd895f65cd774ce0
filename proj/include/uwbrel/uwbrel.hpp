#pragma once

#include "uwbrel/error.hpp"
#include "uwbrel/random.hpp"
#include "uwbrel/geometry.hpp"
#include "uwbrel/csv.hpp"
#include "uwbrel/sensing.hpp"
#include "uwbrel/estimator.hpp"
#include "uwbrel/smoothing.hpp"
#include "uwbrel/protocol.hpp"
#include "uwbrel/simulator.hpp"
#include "uwbrel/evalio.hpp"

namespace uwbrel {
inline constexpr const char* kVersion = "0.1.0";
}  // namespace uwbrel
