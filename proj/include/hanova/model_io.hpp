#pragma once

#include <string>

#include "hanova/solver.hpp"

namespace hanova {

// Plain-text model format: CSV-encoded header lines starting with '#'
// (factors, per-factor levels, grand mean, maxk, lambda vector), then one
// row per stored coefficient: order, subset as '+'-joined factor names,
// level tuple as '+'-joined labels, value. Doubles use the shortest exact
// decimal form, so predictions round-trip bit for bit. Level labels must
// not contain '+'.
void save_model(const HanovaFit& fit, const std::string& path);
HanovaFit load_model(const std::string& path);

}  // namespace hanova
