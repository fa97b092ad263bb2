#pragma once

#include "cvd/loss/batching.hpp"
#include "cvd/synth/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cvd {

enum class Damage : int { light = 0, medium = 1, heavy = 2 };

enum class ObjectKind : int { road, building, tree, sign, debris, fallen_tree, water };

std::string kind_name(ObjectKind kind);

struct Vec2 {
  double x = 0;  // meters east of the scene center
  double y = 0;  // meters north of the scene center
  bool operator==(const Vec2&) const = default;
};

enum class Shape2D : int { rect, disc, stroke };

/// rect: axis-aligned [a.x, b.x] x [a.y, b.y]; disc: center a, radius;
/// stroke: segment a-b with full width 2*radius.
struct Geometry {
  Shape2D shape = Shape2D::disc;
  Vec2 a, b;
  double radius = 0;
  bool operator==(const Geometry&) const = default;
};

struct SceneObject {
  ObjectKind kind = ObjectKind::debris;
  Geometry geometry;
  Rgb color{0, 0, 0};
  double height_m = 0;  // > 0 for vertical objects
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  LonLat center;
  double heading_deg = 0;
  double extent_m = 64;
  Rgb ground{120, 130, 90};
  std::vector<SceneObject> objects;
  Damage damage = Damage::light;
  bool operator==(const Scene&) const = default;
};

/// Artifact count rules per damage class; config-exposed so thresholds can
/// be tuned without code changes.
struct DamageRules {
  int debris_min, debris_max;
  int fallen_min, fallen_max;
  int water_min, water_max;
  double water_radius_min, water_radius_max;
  /// Minimum fraction of road area that must be under water.
  double min_road_water_fraction;
};

DamageRules damage_rules(Damage d);

/// Heading resolution; headings are multiples of this so every angle sum
/// in the renderers is exact in binary64.
inline constexpr double kHeadingQuantumDeg = 1.0 / 256.0;
inline constexpr double kCameraHeightM = 2.0;

Scene generate_scene(std::uint64_t seed, Damage damage, double extent_m = 64.0);

/// Counts objects of one kind.
int count_kind(const Scene& scene, ObjectKind kind);
/// Fraction of road area (sampled on a fine grid) covered by water.
double road_water_fraction(const Scene& scene);

/// (east, north) unit vector for a compass bearing, with exact quarter-turn
/// and reflection symmetry: dir(b + 90) is an exact rotation of dir(b) and
/// dir(-b) an exact mirror.
Vec2 unit_direction(double bearing_deg);

/// Top-down render; image-up is the scene heading, extent_m / size meters
/// per pixel.
Image render_overhead(const Scene& scene, int size_px);
/// Equirectangular panorama from the scene center at camera height; column
/// c looks along bearing heading + (c + 0.5) * 360 / width, clockwise.
Image render_panorama(const Scene& scene, int width_px, int height_px);

Scene with_heading(const Scene& scene, double heading_deg);
/// East-west mirror of the world with the heading reflected.
Scene mirror_scene(const Scene& scene);

struct ConsistencyResult {
  std::int64_t panorama_mismatches = 0;
  std::int64_t overhead_mismatches = 0;
  bool ok() const { return panorama_mismatches == 0 && overhead_mismatches == 0; }
};

/// Renders the scene at heading h and h + theta and checks that the second
/// pair is the first with panorama columns rolled and the overhead raster
/// rotated. theta must be a multiple of 90 degrees.
ConsistencyResult cross_view_consistency(const Scene& scene, int theta_deg, int pano_width = 128, int pano_height = 64,
                                         int overhead_size = 64);

/// Rendering a mirrored scene equals mirroring both rasters.
ConsistencyResult mirror_consistency(const Scene& scene, int pano_width = 128, int pano_height = 64,
                                     int overhead_size = 64);

}  // namespace cvd
