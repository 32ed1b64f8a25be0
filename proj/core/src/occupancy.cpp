#include <cmath>
#include <queue>
#include <tuple>

#include "tsim/expert.hpp"

namespace tsim::expert {

OccupancyGrid build_grid(const sim::PrivilegedState& pv, double cell, double inflate_radius,
                         bool include_trolley) {
    OccupancyGrid grid;
    grid.origin = pv.room.min;
    grid.cell = cell;
    grid.nx = static_cast<int>(std::ceil(pv.room.width() / cell));
    grid.ny = static_cast<int>(std::ceil(pv.room.height() / cell));
    grid.occupied.assign(static_cast<std::size_t>(grid.nx) * grid.ny, 0);

    const geom::OrientedRect trolley{{pv.trolley_pose.x, pv.trolley_pose.y}, pv.trolley_half_w,
                                     pv.trolley_half_d, pv.trolley_pose.theta};
    for (int iy = 0; iy < grid.ny; ++iy) {
        for (int ix = 0; ix < grid.nx; ++ix) {
            const geom::Vec2 c = grid.center(ix, iy);
            bool occ = c.x - pv.room.min.x < inflate_radius ||
                       pv.room.max.x - c.x < inflate_radius ||
                       c.y - pv.room.min.y < inflate_radius ||
                       pv.room.max.y - c.y < inflate_radius;
            for (std::size_t i = 0; !occ && i < pv.obstacles.size(); ++i)
                occ = geom::point_rect_distance(c, pv.obstacles[i]) <= inflate_radius;
            if (!occ && include_trolley)
                occ = geom::point_rect_distance(c, trolley) <= inflate_radius;
            grid.occupied[static_cast<std::size_t>(iy) * grid.nx + ix] = occ ? 1 : 0;
        }
    }
    return grid;
}

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

struct AStarResult {
    double cost = 0.0;
    std::vector<std::pair<int, int>> cells;  // start..goal
};

// 8-connected A*. Priority ties break on smaller (row, col), i.e. (iy, ix).
std::optional<AStarResult> astar(const OccupancyGrid& grid, std::pair<int, int> start,
                                 std::pair<int, int> goal) {
    if (!grid.in_bounds(start.first, start.second) || !grid.in_bounds(goal.first, goal.second))
        return std::nullopt;
    if (grid.is_occupied(start.first, start.second) || grid.is_occupied(goal.first, goal.second))
        return std::nullopt;

    const int nx = grid.nx, ny = grid.ny;
    const auto idx = [nx](int ix, int iy) { return static_cast<std::size_t>(iy) * nx + ix; };
    std::vector<double> g(static_cast<std::size_t>(nx) * ny,
                          std::numeric_limits<double>::infinity());
    std::vector<int> parent(static_cast<std::size_t>(nx) * ny, -1);
    std::vector<std::uint8_t> closed(static_cast<std::size_t>(nx) * ny, 0);

    using Entry = std::tuple<double, int, int>;  // (f, row=iy, col=ix)
    const auto cmp = [](const Entry& a, const Entry& b) { return a > b; };
    std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> open(cmp);

    const auto heuristic = [&](int ix, int iy) {
        return std::hypot(static_cast<double>(ix - goal.first),
                          static_cast<double>(iy - goal.second));
    };

    g[idx(start.first, start.second)] = 0.0;
    open.emplace(heuristic(start.first, start.second), start.second, start.first);

    static constexpr int dx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
    static constexpr int dy[8] = {0, 0, 1, -1, 1, -1, 1, -1};

    while (!open.empty()) {
        const auto [f, row, col] = open.top();
        open.pop();
        const int ix = col, iy = row;
        if (closed[idx(ix, iy)]) continue;
        closed[idx(ix, iy)] = 1;
        if (ix == goal.first && iy == goal.second) break;
        for (int k = 0; k < 8; ++k) {
            const int jx = ix + dx[k], jy = iy + dy[k];
            if (!grid.in_bounds(jx, jy) || grid.is_occupied(jx, jy)) continue;
            // No corner cutting on diagonal moves.
            if (k >= 4 && (grid.is_occupied(ix + dx[k], iy) || grid.is_occupied(ix, iy + dy[k])))
                continue;
            const double step = k < 4 ? 1.0 : kSqrt2;
            const double cand = g[idx(ix, iy)] + step;
            if (cand < g[idx(jx, jy)]) {
                g[idx(jx, jy)] = cand;
                parent[idx(jx, jy)] = static_cast<int>(idx(ix, iy));
                open.emplace(cand + heuristic(jx, jy), jy, jx);
            }
        }
    }

    if (!closed[idx(goal.first, goal.second)]) return std::nullopt;
    AStarResult res;
    res.cost = g[idx(goal.first, goal.second)];
    int cur = static_cast<int>(idx(goal.first, goal.second));
    while (cur >= 0) {
        res.cells.emplace_back(cur % nx, cur / nx);
        cur = parent[cur];
    }
    std::reverse(res.cells.begin(), res.cells.end());
    return res;
}

// Conservative line-of-sight: every cell the segment passes through is free.
bool line_of_sight(const OccupancyGrid& grid, geom::Vec2 a, geom::Vec2 b) {
    const double len = geom::norm(b - a);
    const int steps = std::max(2, static_cast<int>(std::ceil(len / (grid.cell * 0.25))));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const auto [ix, iy] = grid.cell_of(a + (b - a) * t);
        if (!grid.in_bounds(ix, iy) || grid.is_occupied(ix, iy)) return false;
    }
    return true;
}

}  // namespace

std::optional<double> plan_cost(const OccupancyGrid& grid, std::pair<int, int> start,
                                std::pair<int, int> goal) {
    const auto res = astar(grid, start, goal);
    if (!res) return std::nullopt;
    return res->cost;
}

std::optional<std::vector<geom::Vec2>> plan_path(const OccupancyGrid& grid, geom::Vec2 start,
                                                 geom::Vec2 goal) {
    const auto res = astar(grid, grid.cell_of(start), grid.cell_of(goal));
    if (!res) return std::nullopt;

    std::vector<geom::Vec2> raw;
    raw.reserve(res->cells.size());
    for (const auto& [ix, iy] : res->cells) raw.push_back(grid.center(ix, iy));

    // Greedy shortcutting: jump to the furthest visible waypoint.
    std::vector<geom::Vec2> out;
    std::size_t i = 0;
    out.push_back(raw.front());
    while (i + 1 < raw.size()) {
        std::size_t j = raw.size() - 1;
        while (j > i + 1 && !line_of_sight(grid, raw[i], raw[j])) --j;
        out.push_back(raw[j]);
        i = j;
    }
    return out;
}

geom::Pose2D docking_pose(geom::Vec2 trolley_center, geom::Vec2 target_center,
                          double dock_distance) {
    const geom::Vec2 away = trolley_center - target_center;
    const double d = geom::norm(away);
    if (d < 1e-9) throw DegenerateGeometry();
    const geom::Vec2 u = away * (1.0 / d);
    const geom::Vec2 pos = trolley_center + u * dock_distance;
    const double theta = std::atan2(-u.y, -u.x);  // facing the trolley
    return {pos.x, pos.y, geom::wrap_angle(theta)};
}

}  // namespace tsim::expert
