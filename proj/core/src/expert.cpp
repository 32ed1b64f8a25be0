#include <cmath>

#include "tsim/expert.hpp"

namespace tsim::expert {

namespace {

double deg2rad(double d) { return d * geom::kPi / 180.0; }


// Closest free cell center to `p`, searched in expanding rings. Falls back to
// `p` when the whole neighborhood is blocked (the planner will then fail).
geom::Vec2 nearest_free(const OccupancyGrid& grid, geom::Vec2 p) {
    const auto [cx, cy] = grid.cell_of(p);
    if (grid.in_bounds(cx, cy) && !grid.is_occupied(cx, cy)) return p;
    for (int r = 1; r < std::max(grid.nx, grid.ny); ++r) {
        geom::Vec2 best{};
        double best_d = std::numeric_limits<double>::infinity();
        for (int iy = cy - r; iy <= cy + r; ++iy) {
            for (int ix = cx - r; ix <= cx + r; ++ix) {
                if (std::max(std::abs(ix - cx), std::abs(iy - cy)) != r) continue;
                if (!grid.in_bounds(ix, iy) || grid.is_occupied(ix, iy)) continue;
                const geom::Vec2 c = grid.center(ix, iy);
                const double d = geom::norm(c - p);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
        }
        if (best_d < std::numeric_limits<double>::infinity()) return best;
    }
    return p;
}

}  // namespace

ScriptedExpert::ScriptedExpert(ExpertParams params) : params_(params) {}

void ScriptedExpert::reset() {
    phase_ = Phase::Approach;
    waypoints_.clear();
    waypoint_i_ = 0;
    dock_steps_ = 0;
    realign_steps_ = 0;
    dead_ = false;
}

namespace {

geom::Vec2 clamp_into_room(geom::Vec2 p, const geom::RoomRect& room, double margin) {
    return {std::clamp(p.x, room.min.x + margin, room.max.x - margin),
            std::clamp(p.y, room.min.y + margin, room.max.y - margin)};
}

}  // namespace

sim::Action ScriptedExpert::servo_to(const sim::PrivilegedState& pv, geom::Vec2 point,
                                     double desired_heading) const {
    const geom::Vec2 delta = point - pv.robot_pose.position();
    const geom::Vec2 body = geom::rotate(delta, -pv.robot_pose.theta);
    const double yaw_err = geom::wrap_angle(desired_heading - pv.robot_pose.theta);
    return sim::quantize_action(params_.k_pos * body.x, params_.k_pos * body.y,
                                params_.k_yaw * yaw_err);
}

sim::Action ScriptedExpert::approach_action(const sim::PrivilegedState& pv, geom::Vec2 predock) {
    // Replan when the trolley (and with it the staging point) has drifted.
    if (!waypoints_.empty() && geom::norm(plan_goal_ - predock) > params_.replan_drift) {
        waypoints_.clear();
        waypoint_i_ = 0;
    }
    if (waypoints_.empty()) {
        const double inflate = std::hypot(pv.robot_half_w, pv.robot_half_d);
        const OccupancyGrid grid = build_grid(pv, params_.grid_cell, inflate);
        const geom::Vec2 start = nearest_free(grid, pv.robot_pose.position());
        const geom::Vec2 goal = nearest_free(grid, predock);
        auto path = plan_path(grid, start, goal);
        if (!path) {
            dead_ = true;
            return sim::Action::zero();
        }
        waypoints_ = std::move(*path);
        waypoints_.push_back(predock);
        plan_goal_ = predock;
        waypoint_i_ = 0;
    }
    while (waypoint_i_ + 1 < waypoints_.size() &&
           geom::norm(waypoints_[waypoint_i_] - pv.robot_pose.position()) < params_.waypoint_tol)
        ++waypoint_i_;

    const geom::Vec2 wp = waypoints_[waypoint_i_];
    const geom::Vec2 to_trolley = pv.trolley_pose.position() - pv.robot_pose.position();
    return servo_to(pv, wp, std::atan2(to_trolley.y, to_trolley.x));
}

sim::Action ScriptedExpert::act(const sim::PrivilegedState& pv) {
    if (dead_) return sim::Action::zero();

    const geom::Vec2 trolley = pv.trolley_pose.position();
    const geom::Vec2 target = {pv.target.center.x, pv.target.center.y};
    const double room_margin = std::hypot(pv.robot_half_w, pv.robot_half_d) + 0.02;
    geom::Pose2D dock;
    try {
        dock = docking_pose(trolley, target, params_.dock_distance);
    } catch (const DegenerateGeometry&) {
        return sim::Action::zero();
    }
    // Wall-adjacent geometry can put the ideal staging points outside the
    // room; pull them back in and let the push-phase servo absorb the skew.
    // A dock spot buried in furniture slides around the trolley instead, up
    // to the push-phase bearing limit.
    const auto blocked = [&](geom::Vec2 p) {
        for (const auto& rect : pv.obstacles)
            if (geom::point_rect_distance(p, rect) < room_margin - 0.04) return true;
        return false;
    };
    geom::Vec2 ideal_dir = geom::normalized(trolley - target);
    geom::Vec2 dock_pt = clamp_into_room({dock.x, dock.y}, pv.room, room_margin);
    if (blocked(dock_pt)) {
        const double limit = deg2rad(params_.bearing_limit_deg);
        for (double step = deg2rad(7.0); step <= limit; step += deg2rad(7.0)) {
            for (const double side : {1.0, -1.0}) {
                const geom::Vec2 cand = clamp_into_room(
                    trolley + geom::rotate(ideal_dir, side * step) * params_.dock_distance,
                    pv.room, room_margin);
                if (!blocked(cand)) {
                    dock_pt = cand;
                    step = limit + 1.0;
                    break;
                }
            }
        }
        const geom::Vec2 face = geom::normalized(trolley - dock_pt);
        dock.theta = geom::wrap_angle(std::atan2(face.y, face.x));
    }
    dock.x = dock_pt.x;
    dock.y = dock_pt.y;
    const geom::Vec2 predock =
        clamp_into_room(trolley + geom::normalized(dock_pt - trolley) * params_.predock_distance,
                        pv.room, room_margin);

    // Phases can fall through within one call so the first action after a
    // transition already belongs to the new phase.
    for (int hop = 0; hop < 4; ++hop) {
        switch (phase_) {
            case Phase::Approach: {
                const double to_predock = geom::norm(pv.robot_pose.position() - predock);
                const double to_dock =
                    geom::norm(pv.robot_pose.position() - geom::Vec2{dock.x, dock.y});
                if (to_predock < params_.predock_tol || to_dock < params_.waypoint_tol) {
                    phase_ = Phase::Dock;
                    dock_steps_ = 0;
                    waypoints_.clear();
                    waypoint_i_ = 0;
                    continue;
                }
                return approach_action(pv, predock);
            }
            case Phase::Dock: {
                const geom::Vec2 robot = pv.robot_pose.position();
                const geom::Vec2 pos_err = geom::Vec2{dock.x, dock.y} - robot;
                const double ang_err = geom::wrap_angle(dock.theta - pv.robot_pose.theta);
                if (geom::norm(pos_err) < params_.dock_pos_tol &&
                    std::abs(ang_err) < deg2rad(params_.dock_ang_tol_deg)) {
                    phase_ = Phase::Push;
                    continue;
                }
                if (++dock_steps_ > params_.dock_stall_steps) {
                    phase_ = Phase::Realign;
                    realign_steps_ = 0;
                    continue;
                }
                // Orbit around the trolley when the straight line to the dock
                // pose would pass through it; the final stretch into the dock
                // point is exempt.
                const double safe =
                    std::hypot(pv.trolley_half_w, pv.trolley_half_d) +
                    std::hypot(pv.robot_half_w, pv.robot_half_d) + 0.05;
                geom::Vec2 goal_pt{dock.x, dock.y};
                const geom::Vec2 seg = goal_pt - robot;
                const double seg_len2 = geom::dot(seg, seg);
                const double tstar =
                    seg_len2 > 0.0
                        ? std::clamp(geom::dot(trolley - robot, seg) / seg_len2, 0.0, 1.0)
                        : 0.0;
                const double closest = geom::norm(robot + seg * tstar - trolley);
                if (tstar < 0.8 && closest < safe) {
                    const geom::Vec2 radial = geom::normalized(robot - trolley);
                    const double side =
                        geom::cross(radial, geom::normalized(goal_pt - trolley)) >= 0.0 ? 1.0
                                                                                        : -1.0;
                    goal_pt = trolley + radial * std::max(safe, geom::norm(robot - trolley)) +
                              geom::perp(radial) * (side * 0.5);
                }
                return servo_to(pv, goal_pt, dock.theta);
            }
            case Phase::Push: {
                const double bearing = std::atan2(target.y - trolley.y, target.x - trolley.x);
                const double err = geom::wrap_angle(bearing - pv.robot_pose.theta);
                const double d_rt = geom::norm(pv.robot_pose.position() - trolley);
                if (std::abs(err) > deg2rad(params_.bearing_limit_deg) ||
                    d_rt > params_.push_lost_distance) {
                    phase_ = Phase::Realign;
                    realign_steps_ = 0;
                    continue;
                }
                const int fwd_max = static_cast<int>(sim::kForwardBins.size()) - 1;
                return sim::Action{
                    static_cast<std::uint8_t>(fwd_max),
                    sim::nearest_bin(params_.k_lat * err, sim::kLateralBins.data(),
                                     static_cast<int>(sim::kLateralBins.size())),
                    sim::nearest_bin(params_.k_yaw * err, sim::kYawBins.data(),
                                     static_cast<int>(sim::kYawBins.size()))};
            }
            case Phase::Realign: {
                const bool far_enough =
                    geom::norm(pv.robot_pose.position() - trolley) > params_.realign_distance;
                const bool backed_enough = realign_steps_ >= params_.realign_min_steps;
                if ((far_enough && backed_enough) ||
                    realign_steps_ >= params_.realign_max_steps) {
                    phase_ = Phase::Dock;
                    dock_steps_ = 0;
                    continue;
                }
                ++realign_steps_;
                return sim::Action{0, 1, 2};  // straight reverse
            }
        }
    }
    return sim::Action::zero();
}

}  // namespace tsim::expert
