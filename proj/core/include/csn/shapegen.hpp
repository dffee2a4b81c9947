#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csn/geometry.hpp"

namespace csn {

// Shared label scheme across families so mixed collections have one class
// space of width 4:
//   0 horizontal surface (seat / table top / lamp base)
//   1 vertical panel     (chair back / lamp shade)
//   2 support            (legs / pedestal / pole)
//   3 accent bar         (armrest / apron)
inline constexpr int kLabelSpace = 4;

enum class ShapeFamily { chair, table, lamp };

const char* family_name(ShapeFamily f);
ShapeFamily family_from_name(const std::string& s);

// Procedural spec. `proportions` holds the family's named parameters; every
// parameter has a documented bound checked by generate_shape. `style` selects
// one of two variants per family that share part semantics.
struct ShapeSpec {
  ShapeFamily family = ShapeFamily::chair;
  int style = 0;  // 0 or 1
  std::int64_t points = 512;
  std::uint64_t seed = 0;
  std::map<std::string, double> proportions;
};

struct ParamBound {
  double lo, hi;
};
const std::map<std::string, ParamBound>& family_bounds(ShapeFamily f);
int family_part_count(ShapeFamily f);

// Per-family documented bounds on the fraction of points each label receives;
// used by the counting-oracle tests.
std::map<int, ParamBound> family_fraction_bounds(ShapeFamily f);

// Draws proportions uniformly inside the family bounds.
ShapeSpec random_spec(ShapeFamily family, std::int64_t points, std::uint64_t seed);

// Samples `points` positions on the labeled primitive union, area-weighted,
// deterministic per (spec, seed). At least two points per part are pinned so
// no part is ever empty. The result is not yet ingestion-normalized.
LabeledPointCloud generate_shape(const ShapeSpec& spec);

}  // namespace csn
