#include "csn/shapegen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace csn {

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::chair: return "chair";
    case ShapeFamily::table: return "table";
    case ShapeFamily::lamp: return "lamp";
  }
  throw std::logic_error("family_name: bad enum");
}

ShapeFamily family_from_name(const std::string& s) {
  if (s == "chair") return ShapeFamily::chair;
  if (s == "table") return ShapeFamily::table;
  if (s == "lamp") return ShapeFamily::lamp;
  throw std::invalid_argument("unknown shape family '" + s + "'");
}

int family_part_count(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::chair: return 4;
    case ShapeFamily::table: return 3;
    case ShapeFamily::lamp: return 3;
  }
  throw std::logic_error("family_part_count: bad enum");
}

namespace {

const std::map<std::string, ParamBound> kChairBounds = {
    {"seat_w", {0.80, 1.30}}, {"seat_d", {0.80, 1.30}}, {"seat_t", {0.06, 0.12}},
    {"seat_h", {0.45, 0.65}}, {"back_h", {0.45, 0.85}}, {"back_t", {0.05, 0.10}},
    {"leg_r", {0.035, 0.07}}, {"arm_h", {0.18, 0.32}},  {"arm_r", {0.030, 0.050}},
};
const std::map<std::string, ParamBound> kTableBounds = {
    {"top_w", {1.20, 2.00}}, {"top_d", {0.80, 1.40}},   {"top_t", {0.05, 0.10}},
    {"top_h", {0.55, 0.80}}, {"leg_r", {0.040, 0.080}}, {"apron_h", {0.06, 0.14}},
};
const std::map<std::string, ParamBound> kLampBounds = {
    {"base_r", {0.25, 0.45}}, {"base_t", {0.04, 0.08}},  {"pole_r", {0.020, 0.045}},
    {"pole_h", {0.90, 1.60}}, {"shade_r", {0.25, 0.50}}, {"shade_h", {0.25, 0.50}},
};

struct Box {
  std::array<double, 3> center;
  std::array<double, 3> half;
  int label;

  double area() const {
    const double a = half[0] * 2, b = half[1] * 2, c = half[2] * 2;
    return 2.0 * (a * b + b * c + a * c);
  }
};

std::array<double, 3> sample_box_surface(const Box& box, Rng& rng) {
  const double a = box.half[0] * 2, b = box.half[1] * 2, c = box.half[2] * 2;
  // Face pair areas: +-x, +-y, +-z.
  const std::array<double, 3> pair = {b * c, a * c, a * b};
  const double total = 2.0 * (pair[0] + pair[1] + pair[2]);
  double u = rng.uniform01() * total;
  int axis = 0;
  double sign = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    for (int s = 0; s < 2; ++s) {
      if (u < pair[static_cast<std::size_t>(ax)]) {
        axis = ax;
        sign = s == 0 ? 1.0 : -1.0;
        goto found;
      }
      u -= pair[static_cast<std::size_t>(ax)];
    }
  }
  axis = 2;  // numerical spill lands on the last face
  sign = -1.0;
found:
  std::array<double, 3> p;
  p[static_cast<std::size_t>(axis)] = box.center[static_cast<std::size_t>(axis)] +
                                      sign * box.half[static_cast<std::size_t>(axis)];
  const int u_ax = (axis + 1) % 3, v_ax = (axis + 2) % 3;
  p[static_cast<std::size_t>(u_ax)] = box.center[static_cast<std::size_t>(u_ax)] +
                                      (2.0 * rng.uniform01() - 1.0) * box.half[static_cast<std::size_t>(u_ax)];
  p[static_cast<std::size_t>(v_ax)] = box.center[static_cast<std::size_t>(v_ax)] +
                                      (2.0 * rng.uniform01() - 1.0) * box.half[static_cast<std::size_t>(v_ax)];
  return p;
}

double param(const ShapeSpec& spec, const std::string& key) {
  auto it = spec.proportions.find(key);
  if (it == spec.proportions.end()) throw std::invalid_argument("shape spec: missing parameter '" + key + "'");
  return it->second;
}

std::vector<Box> build_chair(const ShapeSpec& s) {
  const double sw = param(s, "seat_w"), sd = param(s, "seat_d"), st = param(s, "seat_t");
  const double sh = param(s, "seat_h"), bh = param(s, "back_h"), bt = param(s, "back_t");
  const double lr = param(s, "leg_r"), ah = param(s, "arm_h"), ar = param(s, "arm_r");
  std::vector<Box> boxes;
  boxes.push_back({{0, 0, sh - st / 2}, {sw / 2, sd / 2, st / 2}, 0});  // seat
  const double back_w = s.style == 0 ? sw : 0.62 * sw;
  const double back_h = s.style == 0 ? bh : 1.25 * bh;
  boxes.push_back({{0, sd / 2 - bt / 2, sh + back_h / 2}, {back_w / 2, bt / 2, back_h / 2}, 1});
  const double leg_h = sh - st;
  for (int ix = -1; ix <= 1; ix += 2) {
    for (int iy = -1; iy <= 1; iy += 2) {
      boxes.push_back({{ix * (sw / 2 - lr), iy * (sd / 2 - lr), leg_h / 2}, {lr, lr, leg_h / 2}, 2});
    }
  }
  const double arm_len = (s.style == 0 ? 0.80 : 0.60) * sd;
  const double arm_z = sh + (s.style == 0 ? ah : 1.2 * ah);
  for (int ix = -1; ix <= 1; ix += 2) {
    boxes.push_back({{ix * (sw / 2 - ar), 0, arm_z}, {ar, arm_len / 2, ar}, 3});
  }
  return boxes;
}

std::vector<Box> build_table(const ShapeSpec& s) {
  const double tw = param(s, "top_w"), td = param(s, "top_d"), tt = param(s, "top_t");
  const double th = param(s, "top_h"), lr = param(s, "leg_r"), ah = param(s, "apron_h");
  std::vector<Box> boxes;
  boxes.push_back({{0, 0, th - tt / 2}, {tw / 2, td / 2, tt / 2}, 0});  // top
  const double leg_h = th - tt;
  if (s.style == 0) {
    for (int ix = -1; ix <= 1; ix += 2) {
      for (int iy = -1; iy <= 1; iy += 2) {
        boxes.push_back({{ix * (tw / 2 - 2 * lr), iy * (td / 2 - 2 * lr), leg_h / 2}, {lr, lr, leg_h / 2}, 2});
      }
    }
  } else {
    // Pedestal style: one thick central column plus a foot slab.
    boxes.push_back({{0, 0, leg_h / 2}, {2.4 * lr, 2.4 * lr, leg_h / 2}, 2});
    boxes.push_back({{0, 0, 0.02}, {0.30 * tw, 0.30 * td, 0.02}, 2});
  }
  const double az = leg_h - ah / 2;
  const double inset = 3 * lr;
  boxes.push_back({{0, td / 2 - inset, az}, {tw / 2 - inset, lr / 2, ah / 2}, 3});
  boxes.push_back({{0, -(td / 2 - inset), az}, {tw / 2 - inset, lr / 2, ah / 2}, 3});
  boxes.push_back({{tw / 2 - inset, 0, az}, {lr / 2, td / 2 - inset, ah / 2}, 3});
  boxes.push_back({{-(tw / 2 - inset), 0, az}, {lr / 2, td / 2 - inset, ah / 2}, 3});
  return boxes;
}

std::vector<Box> build_lamp(const ShapeSpec& s) {
  const double br = param(s, "base_r"), bt = param(s, "base_t");
  const double pr = param(s, "pole_r"), ph = param(s, "pole_h");
  const double sr0 = param(s, "shade_r"), sh0 = param(s, "shade_h");
  const double sr = s.style == 0 ? sr0 : 0.70 * sr0;
  const double sh = s.style == 0 ? 0.85 * sh0 : 1.30 * sh0;
  std::vector<Box> boxes;
  boxes.push_back({{0, 0, bt / 2}, {br, br, bt / 2}, 0});  // base slab
  const double pole_h = s.style == 0 ? ph : 1.15 * ph;
  boxes.push_back({{0, 0, bt + pole_h / 2}, {pr, pr, pole_h / 2}, 2});
  // Shade: four thin walls around the pole top.
  const double wall = 0.02;
  const double z0 = bt + pole_h - 0.3 * sh;
  const double zc = z0 + sh / 2;
  boxes.push_back({{sr - wall / 2, 0, zc}, {wall / 2, sr, sh / 2}, 1});
  boxes.push_back({{-(sr - wall / 2), 0, zc}, {wall / 2, sr, sh / 2}, 1});
  boxes.push_back({{0, sr - wall / 2, zc}, {sr, wall / 2, sh / 2}, 1});
  boxes.push_back({{0, -(sr - wall / 2), zc}, {sr, wall / 2, sh / 2}, 1});
  return boxes;
}

}  // namespace

const std::map<std::string, ParamBound>& family_bounds(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::chair: return kChairBounds;
    case ShapeFamily::table: return kTableBounds;
    case ShapeFamily::lamp: return kLampBounds;
  }
  throw std::logic_error("family_bounds: bad enum");
}

std::map<int, ParamBound> family_fraction_bounds(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::chair:
      return {{0, {0.25, 0.70}}, {1, {0.10, 0.48}}, {2, {0.04, 0.36}}, {3, {0.02, 0.22}}};
    case ShapeFamily::table:
      return {{0, {0.35, 0.80}}, {2, {0.06, 0.47}}, {3, {0.07, 0.35}}};
    case ShapeFamily::lamp:
      return {{0, {0.09, 0.63}}, {1, {0.25, 0.85}}, {2, {0.02, 0.32}}};
  }
  throw std::logic_error("family_fraction_bounds: bad enum");
}

ShapeSpec random_spec(ShapeFamily family, std::int64_t points, std::uint64_t seed) {
  ShapeSpec spec;
  spec.family = family;
  spec.points = points;
  spec.seed = seed;
  Rng rng(mix_seed(seed, 0x5f3c));
  spec.style = static_cast<int>(rng.below(2));
  for (const auto& [name, b] : family_bounds(family)) {
    spec.proportions[name] = rng.uniform(b.lo, b.hi);
  }
  return spec;
}

LabeledPointCloud generate_shape(const ShapeSpec& spec) {
  const auto& bounds = family_bounds(spec.family);
  if (spec.proportions.size() != bounds.size()) {
    throw std::invalid_argument("shape spec: expected " + std::to_string(bounds.size()) + " parameters, got " +
                                std::to_string(spec.proportions.size()));
  }
  for (const auto& [name, v] : spec.proportions) {
    auto it = bounds.find(name);
    if (it == bounds.end()) throw std::invalid_argument("shape spec: unknown parameter '" + name + "'");
    if (v < it->second.lo || v > it->second.hi) {
      throw std::invalid_argument("shape spec: parameter '" + name + "' = " + std::to_string(v) + " outside [" +
                                  std::to_string(it->second.lo) + "," + std::to_string(it->second.hi) + "]");
    }
  }
  if (spec.style != 0 && spec.style != 1) throw std::invalid_argument("shape spec: style must be 0 or 1");
  const int parts = family_part_count(spec.family);
  if (spec.points < 2 * parts) {
    throw std::invalid_argument("shape spec: need at least " + std::to_string(2 * parts) + " points");
  }

  std::vector<Box> boxes;
  switch (spec.family) {
    case ShapeFamily::chair: boxes = build_chair(spec); break;
    case ShapeFamily::table: boxes = build_table(spec); break;
    case ShapeFamily::lamp: boxes = build_lamp(spec); break;
  }

  Rng rng(mix_seed(spec.seed, 0xc10d + static_cast<std::uint64_t>(spec.style)));
  LabeledPointCloud cloud;
  cloud.part_count = kLabelSpace;
  cloud.shape_id = std::string(family_name(spec.family)) + "_" + std::to_string(spec.seed);
  cloud.positions = Tensor::zeros({spec.points, 3});
  cloud.labels.resize(static_cast<std::size_t>(spec.points));

  std::vector<double> cum;
  cum.reserve(boxes.size());
  double total = 0;
  for (const auto& b : boxes) {
    total += b.area();
    cum.push_back(total);
  }

  auto emit = [&](std::int64_t row, const Box& b) {
    const auto p = sample_box_surface(b, rng);
    for (int c = 0; c < 3; ++c) cloud.positions.at(row, c) = static_cast<float>(p[static_cast<std::size_t>(c)]);
    cloud.labels[static_cast<std::size_t>(row)] = b.label;
  };

  // Pin two points on each part so every part is non-empty at any budget,
  // then fill the rest area-weighted over the whole union.
  std::int64_t row = 0;
  std::vector<int> labels_present;
  for (const auto& b : boxes) {
    if (std::find(labels_present.begin(), labels_present.end(), b.label) == labels_present.end()) {
      labels_present.push_back(b.label);
    }
  }
  for (int lbl : labels_present) {
    for (int rep = 0; rep < 2; ++rep) {
      double part_total = 0;
      for (const auto& b : boxes) {
        if (b.label == lbl) part_total += b.area();
      }
      double u = rng.uniform01() * part_total;
      const Box* chosen = nullptr;
      for (const auto& b : boxes) {
        if (b.label != lbl) continue;
        if (u < b.area()) { chosen = &b; break; }
        u -= b.area();
      }
      if (!chosen) {
        for (auto it = boxes.rbegin(); it != boxes.rend(); ++it) {
          if (it->label == lbl) { chosen = &*it; break; }
        }
      }
      emit(row++, *chosen);
    }
  }
  for (; row < spec.points; ++row) {
    const double u = rng.uniform01() * total;
    const auto it = std::lower_bound(cum.begin(), cum.end(), u);
    const auto bi = std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), boxes.size() - 1);
    emit(row, boxes[bi]);
  }
  return cloud;
}

}  // namespace csn
