#include "tsim/geometry.hpp"

#include <algorithm>
#include <limits>

namespace tsim::geom {

double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a < 0.0) a += 2.0 * kPi;
    return a - kPi;
}

Pose2D compose(const Pose2D& base, const Pose2D& local) {
    const Vec2 p = Vec2{base.x, base.y} + rotate({local.x, local.y}, base.theta);
    return {p.x, p.y, wrap_angle(base.theta + local.theta)};
}

std::array<Vec2, 4> OrientedRect::corners() const {
    const Vec2 ax = axis_x() * hx;
    const Vec2 ay = axis_y() * hy;
    return {center + ax + ay, center - ax + ay, center - ax - ay, center + ax - ay};
}

namespace {

struct Projection {
    double lo, hi;
};

Projection project(const OrientedRect& r, Vec2 axis) {
    const double c = dot(r.center, axis);
    const double e = r.hx * std::abs(dot(r.axis_x(), axis)) +
                     r.hy * std::abs(dot(r.axis_y(), axis));
    return {c - e, c + e};
}

}  // namespace

bool rects_overlap(const OrientedRect& a, const OrientedRect& b) {
    const Vec2 axes[4] = {a.axis_x(), a.axis_y(), b.axis_x(), b.axis_y()};
    for (const Vec2& axis : axes) {
        const Projection pa = project(a, axis);
        const Projection pb = project(b, axis);
        if (pa.hi < pb.lo || pb.hi < pa.lo) return false;
    }
    return true;
}

std::optional<Mtv> rect_mtv(const OrientedRect& a, const OrientedRect& b) {
    const Vec2 axes[4] = {a.axis_x(), a.axis_y(), b.axis_x(), b.axis_y()};
    double best = std::numeric_limits<double>::infinity();
    Vec2 best_axis{};
    for (const Vec2& axis : axes) {
        const Projection pa = project(a, axis);
        const Projection pb = project(b, axis);
        // Distance to slide a's interval past b's in either direction. Using
        // the plain interval overlap is wrong when one interval contains the
        // other.
        const double push_up = pb.hi - pa.lo;
        const double push_down = pa.hi - pb.lo;
        if (push_up < 0.0 || push_down < 0.0) return std::nullopt;
        if (push_up < best) {
            best = push_up;
            best_axis = axis;
        }
        if (push_down < best) {
            best = push_down;
            best_axis = -axis;
        }
    }
    return Mtv{best_axis, best};
}

bool point_in_rect(Vec2 p, const OrientedRect& r) {
    const Vec2 d = p - r.center;
    return std::abs(dot(d, r.axis_x())) <= r.hx && std::abs(dot(d, r.axis_y())) <= r.hy;
}

double point_rect_distance(Vec2 p, const OrientedRect& r) {
    const Vec2 d = p - r.center;
    const double lx = dot(d, r.axis_x());
    const double ly = dot(d, r.axis_y());
    const double dx = std::max(std::abs(lx) - r.hx, 0.0);
    const double dy = std::max(std::abs(ly) - r.hy, 0.0);
    return std::hypot(dx, dy);
}

double segment_point_distance(Vec2 a, Vec2 b, Vec2 p) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    if (len2 <= 0.0) return norm(p - a);
    const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
    return norm(p - (a + ab * t));
}

double rect_distance(const OrientedRect& a, const OrientedRect& b) {
    if (rects_overlap(a, b)) return 0.0;
    const auto ca = a.corners();
    const auto cb = b.corners();
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i) {
        const Vec2 a0 = ca[i], a1 = ca[(i + 1) % 4];
        const Vec2 b0 = cb[i], b1 = cb[(i + 1) % 4];
        for (int j = 0; j < 4; ++j) {
            best = std::min(best, segment_point_distance(a0, a1, cb[j]));
            best = std::min(best, segment_point_distance(b0, b1, ca[j]));
        }
    }
    return best;
}

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
    const double d1 = cross(q2 - q1, p1 - q1);
    const double d2 = cross(q2 - q1, p2 - q1);
    const double d3 = cross(p2 - p1, q1 - p1);
    const double d4 = cross(p2 - p1, q2 - p1);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
        ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    auto on = [](Vec2 a, Vec2 b, Vec2 c, double d) {
        return d == 0.0 && std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) &&
               std::min(a.y, b.y) <= c.y && c.y <= std::max(a.y, b.y);
    };
    return on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4);
}

bool segment_intersects_rect(Vec2 p0, Vec2 p1, const OrientedRect& r) {
    if (point_in_rect(p0, r) || point_in_rect(p1, r)) return true;
    const auto c = r.corners();
    for (int i = 0; i < 4; ++i)
        if (segments_intersect(p0, p1, c[i], c[(i + 1) % 4])) return true;
    return false;
}

std::optional<double> ray_rect_hit(Vec2 origin, Vec2 dir, const OrientedRect& r) {
    // Transform into the rectangle's local frame.
    const Vec2 rel = origin - r.center;
    const Vec2 o{dot(rel, r.axis_x()), dot(rel, r.axis_y())};
    const Vec2 d{dot(dir, r.axis_x()), dot(dir, r.axis_y())};

    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    const double half[2] = {r.hx, r.hy};
    const double oc[2] = {o.x, o.y};
    const double dc[2] = {d.x, d.y};
    for (int i = 0; i < 2; ++i) {
        if (dc[i] == 0.0) {
            if (std::abs(oc[i]) > half[i]) return std::nullopt;
            continue;
        }
        double t1 = (-half[i] - oc[i]) / dc[i];
        double t2 = (half[i] - oc[i]) / dc[i];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return std::nullopt;
    }
    if (tmax < 0.0) return std::nullopt;
    return tmin >= 0.0 ? tmin : 0.0;
}

std::optional<Vec2> overlap_centroid(const OrientedRect& a, const OrientedRect& b) {
    // Clip polygon a by the four half-planes of b.
    const auto ca = a.corners();
    std::vector<Vec2> poly(ca.begin(), ca.end());
    const auto cb = b.corners();
    for (int i = 0; i < 4 && !poly.empty(); ++i) {
        const Vec2 e0 = cb[i], e1 = cb[(i + 1) % 4];
        const Vec2 edge = e1 - e0;
        std::vector<Vec2> out;
        out.reserve(poly.size() + 2);
        for (std::size_t j = 0; j < poly.size(); ++j) {
            const Vec2 cur = poly[j];
            const Vec2 nxt = poly[(j + 1) % poly.size()];
            const double dc = cross(edge, cur - e0);
            const double dn = cross(edge, nxt - e0);
            if (dc >= 0.0) out.push_back(cur);
            if ((dc >= 0.0) != (dn >= 0.0)) {
                const double t = dc / (dc - dn);
                out.push_back(cur + (nxt - cur) * t);
            }
        }
        poly = std::move(out);
    }
    if (poly.size() < 3) return std::nullopt;

    double area2 = 0.0;
    Vec2 acc{};
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec2 p = poly[i], q = poly[(i + 1) % poly.size()];
        const double w = cross(p, q);
        area2 += w;
        acc += (p + q) * w;
    }
    if (std::abs(area2) < 1e-12) {
        Vec2 mean{};
        for (const Vec2& p : poly) mean += p;
        return mean * (1.0 / static_cast<double>(poly.size()));
    }
    return acc * (1.0 / (3.0 * area2));
}

bool rect_inside_room(const OrientedRect& r, const RoomRect& room) {
    for (const Vec2& c : r.corners())
        if (!room.contains(c)) return false;
    return true;
}

}  // namespace tsim::geom
