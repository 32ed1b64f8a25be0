#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/geometry.hpp"
#include "tsim/rng.hpp"
#include "tsim/scenegen.hpp"

namespace tsim::sim {

// Quantized planar velocity bins (m/s, m/s, rad/s).
inline constexpr std::array<double, 4> kForwardBins{-0.5, 0.0, 0.5, 1.0};
inline constexpr std::array<double, 3> kLateralBins{-0.5, 0.0, 0.5};
inline constexpr std::array<double, 5> kYawBins{-1.0, -0.5, 0.0, 0.5, 1.0};

struct Action {
    std::uint8_t forward_bin = 1;  // value 0.0
    std::uint8_t lateral_bin = 1;  // value 0.0
    std::uint8_t yaw_bin = 2;      // value 0.0

    double forward() const { return kForwardBins[forward_bin]; }
    double lateral() const { return kLateralBins[lateral_bin]; }
    double yaw() const { return kYawBins[yaw_bin]; }

    static Action zero() { return {1, 1, 2}; }
    bool operator==(const Action&) const = default;
};

// Nearest-bin quantization; ties go to the smaller-magnitude velocity.
std::uint8_t nearest_bin(double v, const double* bins, int n);
Action quantize_action(double forward, double lateral, double yaw);

struct BodyState {
    geom::Pose2D pose;
    geom::Vec2 vel;       // world frame, m/s
    double omega = 0.0;   // rad/s
    double half_w = 0.0;
    double half_d = 0.0;
    double mass = 1.0;

    geom::OrientedRect rect() const { return {{pose.x, pose.y}, half_w, half_d, pose.theta}; }
};

// Per-episode physical randomization, drawn once at episode init.
struct DomainRand {
    double trolley_mass = 8.0;        // kg, [5, 25]
    double ground_friction = 0.5;     // [0.2, 0.9]
    double actuation_gain = 5.0;      // 1/s, [3, 8]
    double velocity_noise_std = 0.0;  // m/s, [0, 0.05]
    double contact_restitution = 0.0; // fixed 0
    double brightness_scale = 1.0;    // render jitter, [0.85, 1.15]
};

struct PhysicsConfig {
    double dt = 0.02;                  // low-level tick, s (50 Hz)
    int ticks_per_control = 25;        // 2 Hz command rate
    double train_budget_s = 30.0;
    double eval_budget_s = 60.0;
    double success_distance = 0.30;    // trolley-to-target footprint distance, m
    double contact_stiffness = 2000.0; // N/m penalty spring
    double contact_mu = 0.4;           // robot-trolley tangential Coulomb coefficient
    double gravity = 9.81;
    double robot_half_w = 0.275;
    double robot_half_d = 0.175;
    double robot_mass = 12.0;
    double trolley_half_w = 0.30;
    double trolley_half_d = 0.20;
    double penetration_tol = 1e-3;

    double trolley_mass_min = 5.0, trolley_mass_max = 25.0;
    double friction_min = 0.2, friction_max = 0.9;
    double gain_min = 3.0, gain_max = 8.0;
    double noise_min = 0.0, noise_max = 0.05;
    double brightness_min = 0.85, brightness_max = 1.15;

    double control_period() const { return dt * ticks_per_control; }
};

DomainRand draw_domain_rand(std::uint64_t rand_seed, const PhysicsConfig& cfg);

enum class Status { Running, Success, Timeout };

std::string status_name(Status s);

struct Obstacle {
    geom::OrientedRect rect;
    std::string color;      // catalog color tag; drives rendering
    int instance_index = 0; // index into the scene's instance list
};

struct SimState {
    BodyState robot;
    BodyState trolley;
    std::vector<Obstacle> obstacles;  // includes the target
    int target_index = 0;             // index into obstacles
    geom::RoomRect room;
    std::uint64_t tick = 0;
    double clock = 0.0;               // always tick * dt
    double budget = 30.0;
    DomainRand rand;
    Status status = Status::Running;
    Rng noise_rng;

    const geom::OrientedRect& target_rect() const { return obstacles[target_index].rect; }
};

// Ground-truth projection consumed by privileged experts.
struct PrivilegedState {
    geom::Pose2D robot_pose;
    geom::Vec2 robot_vel;
    double robot_omega = 0.0;
    double robot_half_w = 0.0, robot_half_d = 0.0;
    geom::Pose2D trolley_pose;
    geom::Vec2 trolley_vel;
    double trolley_omega = 0.0;
    double trolley_half_w = 0.0, trolley_half_d = 0.0;
    geom::OrientedRect target;
    std::vector<geom::OrientedRect> obstacles;
    geom::RoomRect room;
    double remaining_time = 0.0;
};

struct InvalidTask : std::runtime_error {
    using std::runtime_error::runtime_error;
};

SimState init_episode(const scenegen::Scene& scene, const scenegen::Catalog& catalog,
                      const scenegen::TaskSpec& task, std::uint64_t rand_seed, bool eval_mode,
                      const PhysicsConfig& cfg);

// One 50 Hz tick: velocity servo with exact first-order tracking, penalty
// contact on the trolley, ground friction, integration, collision resolution.
void step_lowlevel(SimState& state, const Action& cached_action, const PhysicsConfig& cfg);

// One 2 Hz control step: hold the action for ticks_per_control low-level
// ticks, checking termination after each tick.
void step_control(SimState& state, const Action& action, const PhysicsConfig& cfg);

Status check_termination(const SimState& state, const PhysicsConfig& cfg);

// Project dynamic bodies out of static obstacles and room walls; restitution 0.
void resolve_collisions(SimState& state, const PhysicsConfig& cfg);

PrivilegedState privileged_features(const SimState& state);

}  // namespace tsim::sim
