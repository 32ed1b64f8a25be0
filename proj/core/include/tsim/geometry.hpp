#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace tsim::geom {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator-() const { return {-x, -y}; }
    Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 perp(Vec2 a) { return {-a.y, a.x}; }
inline Vec2 normalized(Vec2 a) {
    const double n = norm(a);
    return n > 0.0 ? Vec2{a.x / n, a.y / n} : Vec2{0.0, 0.0};
}
inline Vec2 rotate(Vec2 v, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Wrap an angle to [-pi, pi).
double wrap_angle(double a);

struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;  // radians in [-pi, pi)

    Vec2 position() const { return {x, y}; }
    Vec2 heading() const { return {std::cos(theta), std::sin(theta)}; }
};

// Compose a local offset pose onto a base pose (base * local).
Pose2D compose(const Pose2D& base, const Pose2D& local);

// Rectangle with arbitrary yaw: center, half extents along local axes, angle.
struct OrientedRect {
    Vec2 center;
    double hx = 0.0;  // half extent along local x
    double hy = 0.0;  // half extent along local y
    double angle = 0.0;

    std::array<Vec2, 4> corners() const;
    Vec2 axis_x() const { return {std::cos(angle), std::sin(angle)}; }
    Vec2 axis_y() const { return {-std::sin(angle), std::cos(angle)}; }
    double circumradius() const { return std::hypot(hx, hy); }
};

// Minimum translation to separate `a` from `b`: move `a` by axis * depth.
struct Mtv {
    Vec2 axis;     // unit, points from b toward a
    double depth = 0.0;
};

bool rects_overlap(const OrientedRect& a, const OrientedRect& b);
std::optional<Mtv> rect_mtv(const OrientedRect& a, const OrientedRect& b);

bool point_in_rect(Vec2 p, const OrientedRect& r);
double point_rect_distance(Vec2 p, const OrientedRect& r);

// Exact separation distance between two oriented rectangles (0 when overlapping).
double rect_distance(const OrientedRect& a, const OrientedRect& b);

double segment_point_distance(Vec2 a, Vec2 b, Vec2 p);
bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2);
bool segment_intersects_rect(Vec2 p0, Vec2 p1, const OrientedRect& r);

// Nearest hit parameter t >= 0 along origin + t*dir (dir unit), slab method.
// Returns 0 when the origin is inside the rectangle; nullopt on a miss.
std::optional<double> ray_rect_hit(Vec2 origin, Vec2 dir, const OrientedRect& r);

// Centroid of the intersection polygon of two rectangles (Sutherland-Hodgman).
// nullopt when the intersection is empty or degenerate.
std::optional<Vec2> overlap_centroid(const OrientedRect& a, const OrientedRect& b);

// Axis-aligned room rectangle [min, max].
struct RoomRect {
    Vec2 min;
    Vec2 max;

    double width() const { return max.x - min.x; }
    double height() const { return max.y - min.y; }
    bool contains(Vec2 p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
    }
};

// True when every corner of r lies inside the room.
bool rect_inside_room(const OrientedRect& r, const RoomRect& room);

}  // namespace tsim::geom
