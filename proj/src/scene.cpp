#include "cvd/synth/scene.hpp"

#include "cvd/core/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>

namespace cvd {

namespace {

class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return uniform01(engine_); }
  double uniform(double lo, double hi) { return uniform_real(engine_, lo, hi); }
  int integer(int lo, int hi) { return static_cast<int>(uniform_int(engine_, lo, hi)); }

 private:
  std::mt19937_64 engine_;
};

Rgb hsv(double h_deg, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h_deg, 360.0) / 60.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  auto q = [](double t) { return static_cast<std::uint8_t>(std::clamp(std::lround(t * 255.0), 0L, 255L)); };
  return {q(r + m), q(g + m), q(b + m)};
}

Rgb jitter(SceneRng& rng, Rgb c, int amount) {
  Rgb out;
  for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::clamp(int(c[static_cast<std::size_t>(i)]) + rng.integer(-amount, amount), 0, 255));
  return out;
}

struct Road {
  Vec2 dir;
  double half_width;
};

// Signed distance from p to the infinite line through the origin along dir.
double line_offset(const Vec2& p, const Vec2& dir) { return p.x * dir.y - p.y * dir.x; }

bool rect_hits_road(const Vec2& lo, const Vec2& hi, const Road& road, double margin) {
  const Vec2 corners[4] = {{lo.x, lo.y}, {hi.x, lo.y}, {lo.x, hi.y}, {hi.x, hi.y}};
  double mn = std::numeric_limits<double>::infinity(), mx = -mn;
  for (const auto& c : corners) {
    const double d = line_offset(c, road.dir);
    mn = std::min(mn, d);
    mx = std::max(mx, d);
  }
  if (mn <= 0 && mx >= 0) return true;
  return std::min(std::abs(mn), std::abs(mx)) < road.half_width + margin;
}

double rect_distance(const Vec2& p, const Geometry& g) {
  const double dx = std::max({g.a.x - p.x, 0.0, p.x - g.b.x});
  const double dy = std::max({g.a.y - p.y, 0.0, p.y - g.b.y});
  return std::hypot(dx, dy);
}

bool rects_overlap(const Geometry& g, const Vec2& lo, const Vec2& hi, double margin) {
  return !(hi.x + margin < g.a.x || lo.x - margin > g.b.x || hi.y + margin < g.a.y || lo.y - margin > g.b.y);
}

Vec2 point_on_road(SceneRng& rng, const Road& road, double half, double across) {
  const double t = rng.uniform(-0.8 * half, 0.8 * half);
  const double off = rng.uniform(-across, across);
  return {t * road.dir.x + off * road.dir.y, t * road.dir.y - off * road.dir.x};
}

Vec2 clamp_inside(Vec2 p, double half, double r) {
  const double lim = std::max(0.0, half - r);
  return {std::clamp(p.x, -lim, lim), std::clamp(p.y, -lim, lim)};
}

bool in_geometry(const Geometry& g, const Vec2& p) {
  switch (g.shape) {
    case Shape2D::rect:
      return p.x >= g.a.x && p.x <= g.b.x && p.y >= g.a.y && p.y <= g.b.y;
    case Shape2D::disc: {
      const double dx = p.x - g.a.x, dy = p.y - g.a.y;
      return dx * dx + dy * dy <= g.radius * g.radius;
    }
    case Shape2D::stroke: {
      const double vx = g.b.x - g.a.x, vy = g.b.y - g.a.y;
      const double wx = p.x - g.a.x, wy = p.y - g.a.y;
      const double len2 = vx * vx + vy * vy;
      const double t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
      const double dx = wx - t * vx, dy = wy - t * vy;
      return dx * dx + dy * dy <= g.radius * g.radius;
    }
  }
  return false;
}

}  // namespace

std::string kind_name(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::road: return "road";
    case ObjectKind::building: return "building";
    case ObjectKind::tree: return "tree";
    case ObjectKind::sign: return "sign";
    case ObjectKind::debris: return "debris";
    case ObjectKind::fallen_tree: return "fallen_tree";
    case ObjectKind::water: return "water";
  }
  return "unknown";
}

DamageRules damage_rules(Damage d) {
  switch (d) {
    case Damage::light: return {0, 2, 0, 1, 0, 0, 0.0, 0.0, 0.0};
    case Damage::medium: return {3, 6, 2, 4, 1, 2, 2.5, 4.0, 0.0};
    case Damage::heavy: return {8, 14, 4, 7, 2, 3, 5.0, 8.0, 0.10};
  }
  throw std::invalid_argument("unknown damage class");
}

int count_kind(const Scene& scene, ObjectKind kind) {
  return static_cast<int>(std::count_if(scene.objects.begin(), scene.objects.end(),
                                        [kind](const SceneObject& o) { return o.kind == kind; }));
}

double road_water_fraction(const Scene& scene) {
  const double half = scene.extent_m / 2, step = 0.5;
  std::int64_t road = 0, wet = 0;
  for (double y = -half + step / 2; y < half; y += step)
    for (double x = -half + step / 2; x < half; x += step) {
      const Vec2 p{x, y};
      bool on_road = false, in_water = false;
      for (const auto& o : scene.objects) {
        if (o.kind == ObjectKind::road && in_geometry(o.geometry, p)) on_road = true;
        if (o.kind == ObjectKind::water && in_geometry(o.geometry, p)) in_water = true;
      }
      road += on_road;
      wet += on_road && in_water;
    }
  return road == 0 ? 0.0 : static_cast<double>(wet) / static_cast<double>(road);
}

Scene generate_scene(std::uint64_t seed, Damage damage, double extent_m) {
  if (!(extent_m > 0)) throw std::invalid_argument("generate_scene: extent must be positive");
  SceneRng rng(seed);
  Scene s;
  s.extent_m = extent_m;
  s.damage = damage;
  const double half = extent_m / 2;
  s.heading_deg = rng.integer(0, 360 * 256 - 1) * kHeadingQuantumDeg;
  s.ground = hsv(rng.uniform(25, 110), rng.uniform(0.25, 0.6), rng.uniform(0.4, 0.75));
  const int g = rng.integer(80, 125);
  const Rgb road_color = jitter(rng, {static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(g)}, 6);

  // Roads through the center.
  std::vector<Road> roads;
  const int n_roads = rng.integer(1, 2);
  const double a0 = rng.uniform(0, 180);
  for (int i = 0; i < n_roads; ++i) {
    const double ang = (i == 0 ? a0 : a0 + rng.uniform(55, 125)) * 3.14159265358979323846 / 180.0;
    const Vec2 dir{std::cos(ang), std::sin(ang)};
    const double t = half / std::max(std::abs(dir.x), std::abs(dir.y));
    const double w = rng.uniform(6, 9);
    roads.push_back({dir, w / 2});
    s.objects.push_back({ObjectKind::road, {Shape2D::stroke, {-t * dir.x, -t * dir.y}, {t * dir.x, t * dir.y}, w / 2},
                         road_color, 0.0});
  }
  auto off_roads = [&](const Vec2& p, double r) {
    for (const auto& road : roads)
      if (std::abs(line_offset(p, road.dir)) < road.half_width + r) return false;
    return true;
  };

  // Buildings.
  std::vector<Geometry> buildings;
  const int n_buildings = rng.integer(2, 6);
  for (int tries = 0; tries < 400 && static_cast<int>(buildings.size()) < n_buildings; ++tries) {
    const double w = rng.uniform(6, 14), h = rng.uniform(6, 14);
    const Vec2 c{rng.uniform(-half + w / 2, half - w / 2), rng.uniform(-half + h / 2, half - h / 2)};
    const Vec2 lo{c.x - w / 2, c.y - h / 2}, hi{c.x + w / 2, c.y + h / 2};
    bool ok = true;
    for (const auto& road : roads) ok = ok && !rect_hits_road(lo, hi, road, 1.0);
    for (const auto& b : buildings) ok = ok && !rects_overlap(b, lo, hi, 1.5);
    if (!ok) continue;
    Geometry geo{Shape2D::rect, lo, hi, 0};
    buildings.push_back(geo);
    double hue = rng.uniform(0, 280);
    if (hue > 180) hue += 80;  // skip the water-like blues
    s.objects.push_back({ObjectKind::building, geo, hsv(hue, rng.uniform(0.3, 0.8), rng.uniform(0.55, 0.95)),
                         rng.uniform(4, 15)});
  }
  auto clear_of_buildings = [&](const Vec2& p, double r) {
    for (const auto& b : buildings)
      if (rect_distance(p, b) < r + 0.5) return false;
    return true;
  };

  // Trees.
  const int n_trees = rng.integer(3, 10);
  for (int placed = 0, tries = 0; tries < 400 && placed < n_trees; ++tries) {
    const double r = rng.uniform(1.5, 3.0);
    const Vec2 c{rng.uniform(-half + r, half - r), rng.uniform(-half + r, half - r)};
    if (!off_roads(c, r + 0.5) || !clear_of_buildings(c, r)) continue;
    s.objects.push_back({ObjectKind::tree, {Shape2D::disc, c, c, r},
                         hsv(rng.uniform(85, 140), rng.uniform(0.5, 0.85), rng.uniform(0.3, 0.55)),
                         rng.uniform(5, 12)});
    ++placed;
  }

  // Signs at the road edge.
  const int n_signs = rng.integer(0, 3);
  for (int i = 0; i < n_signs; ++i) {
    const Road& road = roads[static_cast<std::size_t>(rng.integer(0, n_roads - 1))];
    const double t = rng.uniform(-0.8 * half, 0.8 * half);
    const double off = (rng.integer(0, 1) ? 1 : -1) * (road.half_width + 0.8);
    const Vec2 c{t * road.dir.x + off * road.dir.y, t * road.dir.y - off * road.dir.x};
    if (std::hypot(c.x, c.y) < 3.0 || !clear_of_buildings(c, 0.4)) continue;
    const Rgb color = rng.integer(0, 1) ? Rgb{205, 35, 35} : Rgb{235, 200, 40};
    s.objects.push_back({ObjectKind::sign, {Shape2D::disc, c, c, 0.35}, color, 3.0});
  }

  // Damage artifacts.
  const DamageRules rules = damage_rules(damage);
  static const Rgb kTrash[] = {{230, 230, 222}, {200, 170, 130}, {170, 90, 60},
                               {220, 150, 170}, {140, 120, 110}, {240, 220, 150}};
  const int n_debris = rng.integer(rules.debris_min, rules.debris_max);
  for (int i = 0; i < n_debris; ++i) {
    const double w = rng.uniform(1.5, 3.0), h = rng.uniform(1.5, 3.0);
    const Road& road = roads[static_cast<std::size_t>(rng.integer(0, n_roads - 1))];
    Vec2 c = rng.uniform() < 0.6 ? point_on_road(rng, road, half, road.half_width + 2)
                                 : Vec2{rng.uniform(-half, half), rng.uniform(-half, half)};
    c = clamp_inside(c, half, std::max(w, h) / 2);
    s.objects.push_back({ObjectKind::debris, {Shape2D::rect, {c.x - w / 2, c.y - h / 2}, {c.x + w / 2, c.y + h / 2}, 0},
                         jitter(rng, kTrash[rng.integer(0, 5)], 12), 0.0});
  }
  const int n_fallen = rng.integer(rules.fallen_min, rules.fallen_max);
  for (int i = 0; i < n_fallen; ++i) {
    const double len = rng.uniform(6, 12), w = rng.uniform(1.2, 2.0);
    const double ang = rng.uniform(0, 2 * 3.14159265358979323846);
    const Vec2 c = clamp_inside({rng.uniform(-half, half), rng.uniform(-half, half)}, half, len / 2 + w);
    const Vec2 d{std::cos(ang) * len / 2, std::sin(ang) * len / 2};
    const Rgb color = rng.integer(0, 1) ? Rgb{110, 85, 50} : Rgb{75, 105, 45};
    s.objects.push_back({ObjectKind::fallen_tree, {Shape2D::stroke, {c.x - d.x, c.y - d.y}, {c.x + d.x, c.y + d.y}, w / 2},
                         jitter(rng, color, 10), 0.0});
  }
  auto add_water = [&]() {
    const Road& road = roads[static_cast<std::size_t>(rng.integer(0, n_roads - 1))];
    const double r = rng.uniform(rules.water_radius_min, rules.water_radius_max);
    const Vec2 c = clamp_inside(point_on_road(rng, road, half, road.half_width), half, r);
    s.objects.push_back({ObjectKind::water, {Shape2D::disc, c, c, r}, jitter(rng, {55, 85, 135}, 8), 0.0});
  };
  const int n_water = rng.integer(rules.water_min, rules.water_max);
  for (int i = 0; i < n_water; ++i) add_water();
  for (int extra = 0; extra < 6 && rules.min_road_water_fraction > 0 &&
                      road_water_fraction(s) < rules.min_road_water_fraction;
       ++extra) {
    add_water();
  }
  return s;
}

Scene with_heading(const Scene& scene, double heading_deg) {
  Scene s = scene;
  double h = std::fmod(heading_deg, 360.0);
  if (h < 0) h += 360.0;
  s.heading_deg = h;
  return s;
}

Scene mirror_scene(const Scene& scene) {
  Scene s = scene;
  for (auto& o : s.objects) {
    auto& g = o.geometry;
    if (g.shape == Shape2D::rect) {
      const double lo = -g.b.x, hi = -g.a.x;
      g.a.x = lo;
      g.b.x = hi;
    } else {
      g.a.x = -g.a.x;
      g.b.x = -g.b.x;
    }
  }
  return with_heading(s, 360.0 - scene.heading_deg);
}

namespace {

constexpr Rgb kSky{178, 206, 235};
constexpr Rgb kTrunk{92, 66, 40};
constexpr Rgb kPole{128, 128, 128};
constexpr double kPi = 3.14159265358979323846;

int layer(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::road: return 0;
    case ObjectKind::water: return 1;
    case ObjectKind::debris: return 2;
    case ObjectKind::fallen_tree: return 3;
    case ObjectKind::building: return 4;
    case ObjectKind::tree: return 5;
    case ObjectKind::sign: return 6;
  }
  return 0;
}

bool is_vertical(ObjectKind kind) {
  return kind == ObjectKind::building || kind == ObjectKind::tree || kind == ObjectKind::sign;
}

// Object indices ordered top layer first.
std::vector<std::size_t> paint_order(const Scene& scene, bool vertical_too) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (vertical_too || !is_vertical(scene.objects[i].kind)) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return layer(scene.objects[a].kind) > layer(scene.objects[b].kind);
  });
  return order;
}

Rgb color_at(const Scene& scene, const std::vector<std::size_t>& order, const Vec2& p) {
  const double half = scene.extent_m / 2;
  if (std::abs(p.x) > half || std::abs(p.y) > half) return scene.ground;
  for (std::size_t i : order)
    if (in_geometry(scene.objects[i].geometry, p)) return scene.objects[i].color;
  return scene.ground;
}

Rgb shade(Rgb c, double f) {
  return {static_cast<std::uint8_t>(c[0] * f), static_cast<std::uint8_t>(c[1] * f), static_cast<std::uint8_t>(c[2] * f)};
}

struct Hit {
  double t;
  std::size_t index;
  bool x_face;
};

// Entry distance of the ray t*d (t >= 0) into a vertical object's footprint.
std::optional<Hit> intersect(const Geometry& g, const Vec2& d, std::size_t index) {
  if (g.shape == Shape2D::disc) {
    const double b = d.x * g.a.x + d.y * g.a.y;
    const double cc = g.a.x * g.a.x + g.a.y * g.a.y - g.radius * g.radius;
    const double disc = b * b - cc;
    if (disc < 0) return std::nullopt;
    const double root = std::sqrt(disc);
    if (b + root < 0) return std::nullopt;
    return Hit{std::max(0.0, b - root), index, false};
  }
  double lo = 0, hi = std::numeric_limits<double>::infinity();
  bool x_face = false;
  auto slab = [&](double dir, double a, double b, bool is_x) {
    if (dir == 0) return a <= 0 && 0 <= b;
    const double t1 = std::min(a / dir, b / dir), t2 = std::max(a / dir, b / dir);
    if (t1 > lo) {
      lo = t1;
      x_face = is_x;
    }
    hi = std::min(hi, t2);
    return true;
  };
  if (!slab(d.x, g.a.x, g.b.x, true) || !slab(d.y, g.a.y, g.b.y, false) || lo > hi) return std::nullopt;
  return Hit{lo, index, x_face};
}

}  // namespace

Vec2 unit_direction(double bearing_deg) {
  double t = std::fmod(bearing_deg, 360.0);
  if (t < 0) t += 360.0;
  if (t >= 360.0) t -= 360.0;
  const int q = static_cast<int>(std::floor(t / 90.0));
  const double r = t - 90.0 * q;
  const double k = kPi / 180.0;
  double s, c;
  if (r == 45.0) {
    s = c = std::sqrt(0.5);
  } else if (r < 45.0) {
    s = std::sin(r * k);
    c = std::cos(r * k);
  } else {
    const double m = 90.0 - r;
    s = std::cos(m * k);
    c = std::sin(m * k);
  }
  switch (q & 3) {
    case 0: return {s, c};
    case 1: return {c, -s};
    case 2: return {-s, -c};
    default: return {-c, s};
  }
}

Image render_overhead(const Scene& scene, int size_px) {
  if (size_px < 32) throw std::invalid_argument("render_overhead: size must be at least 32 px");
  Image img(size_px, size_px);
  const Vec2 up = unit_direction(scene.heading_deg);
  const Vec2 right{up.y, -up.x};
  const double mpp = scene.extent_m / size_px;
  const double half = size_px / 2.0;
  const auto order = paint_order(scene, true);
  for (int r = 0; r < size_px; ++r) {
    const double v = half - r - 0.5;
    for (int c = 0; c < size_px; ++c) {
      const double u = c + 0.5 - half;
      const Vec2 p{mpp * (u * right.x + v * up.x), mpp * (u * right.y + v * up.y)};
      img.set(r, c, color_at(scene, order, p));
    }
  }
  return img;
}

Image render_panorama(const Scene& scene, int width_px, int height_px) {
  if (height_px < 1 || width_px != 2 * height_px) {
    throw std::invalid_argument("render_panorama: width must be twice the height, got " + std::to_string(width_px) +
                                "x" + std::to_string(height_px));
  }
  Image img(width_px, height_px);
  const auto ground_order = paint_order(scene, false);
  std::vector<double> tan_el(static_cast<std::size_t>(height_px));
  for (int y = 0; y < height_px; ++y) {
    const double el = (height_px / 2.0 - y - 0.5) * (180.0 / height_px);
    tan_el[static_cast<std::size_t>(y)] = std::tan(el * kPi / 180.0);
  }
  const double step = 360.0 / width_px;
  std::vector<Hit> hits;
  for (int c = 0; c < width_px; ++c) {
    const Vec2 d = unit_direction(scene.heading_deg + (c + 0.5) * step);
    hits.clear();
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      if (!is_vertical(scene.objects[i].kind)) continue;
      if (auto h = intersect(scene.objects[i].geometry, d, i)) hits.push_back(*h);
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
      return a.t != b.t ? a.t < b.t : a.index < b.index;
    });
    for (int y = 0; y < height_px; ++y) {
      const double te = tan_el[static_cast<std::size_t>(y)];
      const double ground_t = te < 0 ? kCameraHeightM / -te : std::numeric_limits<double>::infinity();
      Rgb out = kSky;
      bool painted = false;
      for (const Hit& h : hits) {
        if (h.t > ground_t) break;
        const SceneObject& o = scene.objects[h.index];
        const double z = kCameraHeightM + h.t * te;
        if (z < 0 || z > o.height_m) continue;
        switch (o.kind) {
          case ObjectKind::building: out = shade(o.color, h.x_face ? 0.85 : 0.7); break;
          case ObjectKind::tree: out = z < 0.4 * o.height_m ? kTrunk : o.color; break;
          default: out = z < 2.2 ? kPole : o.color; break;
        }
        painted = true;
        break;
      }
      if (!painted && te < 0) out = color_at(scene, ground_order, {ground_t * d.x, ground_t * d.y});
      img.set(y, c, out);
    }
  }
  return img;
}

ConsistencyResult cross_view_consistency(const Scene& scene, int theta_deg, int pano_width, int pano_height,
                                         int overhead_size) {
  if (theta_deg % 90 != 0) throw std::invalid_argument("cross_view_consistency: theta must be a multiple of 90");
  if ((static_cast<std::int64_t>(theta_deg) * pano_width) % 360 != 0) {
    throw std::invalid_argument("cross_view_consistency: theta must map to a whole number of panorama columns");
  }
  const Scene turned = with_heading(scene, scene.heading_deg + theta_deg);
  const int shift = static_cast<int>(static_cast<std::int64_t>(theta_deg) * pano_width / 360);
  ConsistencyResult res;
  res.panorama_mismatches = pixel_mismatches(render_panorama(turned, pano_width, pano_height),
                                             roll_columns(render_panorama(scene, pano_width, pano_height), shift));
  res.overhead_mismatches = pixel_mismatches(render_overhead(turned, overhead_size),
                                             rotate_quarter_turns(render_overhead(scene, overhead_size), -theta_deg / 90));
  return res;
}

ConsistencyResult mirror_consistency(const Scene& scene, int pano_width, int pano_height, int overhead_size) {
  const Scene m = mirror_scene(scene);
  ConsistencyResult res;
  res.panorama_mismatches = pixel_mismatches(render_panorama(m, pano_width, pano_height),
                                             mirror_columns(render_panorama(scene, pano_width, pano_height)));
  res.overhead_mismatches = pixel_mismatches(render_overhead(m, overhead_size),
                                             mirror_columns(render_overhead(scene, overhead_size)));
  return res;
}

}  // namespace cvd
