#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tsim/sim.hpp"

namespace tsim::expert {

struct OccupancyGrid {
    geom::Vec2 origin;        // room min corner
    double cell = 0.1;        // meters
    int nx = 0, ny = 0;
    std::vector<std::uint8_t> occupied;  // row-major [iy * nx + ix]

    bool in_bounds(int ix, int iy) const { return ix >= 0 && ix < nx && iy >= 0 && iy < ny; }
    bool is_occupied(int ix, int iy) const {
        return occupied[static_cast<std::size_t>(iy) * nx + ix] != 0;
    }
    geom::Vec2 center(int ix, int iy) const {
        return {origin.x + (ix + 0.5) * cell, origin.y + (iy + 0.5) * cell};
    }
    std::pair<int, int> cell_of(geom::Vec2 p) const {
        return {static_cast<int>(std::floor((p.x - origin.x) / cell)),
                static_cast<int>(std::floor((p.y - origin.y) / cell))};
    }
};

// Grid over the room with rectangles inflated by the given radius. The
// trolley footprint is marked too when provided, so approach paths keep clear.
OccupancyGrid build_grid(const sim::PrivilegedState& pv, double cell, double inflate_radius,
                         bool include_trolley = true);

struct DegenerateGeometry : std::runtime_error {
    DegenerateGeometry() : std::runtime_error("trolley and target centers coincide") {}
};

// Staging pose at `dock_distance` from the trolley center, on the ray from
// the target through the trolley, facing the trolley.
geom::Pose2D docking_pose(geom::Vec2 trolley_center, geom::Vec2 target_center,
                          double dock_distance);

// 8-connected A* with Euclidean heuristic; ties broken by (row, col).
// Waypoints are cell centers smoothed by greedy line-of-sight shortcutting.
// nullopt when no path exists (including an occupied start or goal).
std::optional<std::vector<geom::Vec2>> plan_path(const OccupancyGrid& grid, geom::Vec2 start,
                                                 geom::Vec2 goal);

// Unsmoothed A* cell path cost in cell units (1 / sqrt(2) steps); used by the
// optimality checks. nullopt when unreachable.
std::optional<double> plan_cost(const OccupancyGrid& grid, std::pair<int, int> start,
                                std::pair<int, int> goal);

enum class Phase { Approach, Dock, Push, Realign };

struct ExpertParams {
    double dock_distance = 0.6;       // robot center to trolley center, m
    double predock_distance = 0.95;   // planner goal before final docking
    double bearing_limit_deg = 35.0;  // push-phase realignment threshold
    double waypoint_tol = 0.16;
    double predock_tol = 0.35;        // hand over to the dock servo within this
    double replan_drift = 0.30;       // replan when the predock point moves
    // Both dock tolerances sit above the bin-quantization deadband (the servo
    // commands round to the zero bin below ~0.14 m / ~9 deg of error).
    double dock_pos_tol = 0.16;
    double dock_ang_tol_deg = 12.0;
    double realign_distance = 1.05;   // back off until this far from the trolley
    double push_lost_distance = 1.2;  // push-phase contact loss threshold
    double k_pos = 3.0;               // proportional gains, quantized to bins
    double k_lat = 2.0;
    double k_yaw = 2.2;
    double grid_cell = 0.1;
    int dock_stall_steps = 24;        // Dock steps before a forced realign
    int realign_min_steps = 3;
    int realign_max_steps = 10;
};

// Deterministic dock-then-push state machine over privileged state. The
// phase token and plan are the only internal state; replaying identical
// inputs reproduces identical actions.
class ScriptedExpert {
public:
    explicit ScriptedExpert(ExpertParams params = {});

    void reset();
    sim::Action act(const sim::PrivilegedState& pv);

    Phase phase() const { return phase_; }
    bool dead() const { return dead_; }

private:
    sim::Action approach_action(const sim::PrivilegedState& pv, geom::Vec2 predock);
    sim::Action servo_to(const sim::PrivilegedState& pv, geom::Vec2 point,
                         double desired_heading) const;

    ExpertParams params_;
    Phase phase_ = Phase::Approach;
    std::vector<geom::Vec2> waypoints_;
    std::size_t waypoint_i_ = 0;
    geom::Vec2 plan_goal_;
    int dock_steps_ = 0;
    int realign_steps_ = 0;
    bool dead_ = false;
};

}  // namespace tsim::expert
