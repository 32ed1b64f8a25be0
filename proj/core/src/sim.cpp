#include "tsim/sim.hpp"

#include <algorithm>
#include <cmath>

namespace tsim::sim {

std::uint8_t nearest_bin(double v, const double* bins, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
        const double di = std::abs(bins[i] - v);
        const double db = std::abs(bins[best] - v);
        if (di < db || (di == db && std::abs(bins[i]) < std::abs(bins[best]))) best = i;
    }
    return static_cast<std::uint8_t>(best);
}

Action quantize_action(double forward, double lateral, double yaw) {
    return {nearest_bin(forward, kForwardBins.data(), static_cast<int>(kForwardBins.size())),
            nearest_bin(lateral, kLateralBins.data(), static_cast<int>(kLateralBins.size())),
            nearest_bin(yaw, kYawBins.data(), static_cast<int>(kYawBins.size()))};
}

std::string status_name(Status s) {
    switch (s) {
        case Status::Running: return "running";
        case Status::Success: return "success";
        case Status::Timeout: return "timeout";
    }
    return "unknown";
}

DomainRand draw_domain_rand(std::uint64_t rand_seed, const PhysicsConfig& cfg) {
    Rng rng(derive_seed(rand_seed, 0xD0));
    DomainRand dr;
    dr.trolley_mass = rng.uniform(cfg.trolley_mass_min, cfg.trolley_mass_max);
    dr.ground_friction = rng.uniform(cfg.friction_min, cfg.friction_max);
    dr.actuation_gain = rng.uniform(cfg.gain_min, cfg.gain_max);
    dr.velocity_noise_std = rng.uniform(cfg.noise_min, cfg.noise_max);
    dr.contact_restitution = 0.0;
    dr.brightness_scale = rng.uniform(cfg.brightness_min, cfg.brightness_max);
    return dr;
}

SimState init_episode(const scenegen::Scene& scene, const scenegen::Catalog& catalog,
                      const scenegen::TaskSpec& task, std::uint64_t rand_seed, bool eval_mode,
                      const PhysicsConfig& cfg) {
    if (task.target_index < 0 ||
        task.target_index >= static_cast<int>(scene.instances.size()))
        throw InvalidTask("target index out of range");

    SimState s;
    s.room = scene.room;
    s.obstacles.reserve(scene.instances.size());
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
        const auto& inst = scene.instances[i];
        const auto& asset = scenegen::find_asset(catalog, inst.asset_id);
        s.obstacles.push_back({asset.footprint(inst.pose), asset.color, static_cast<int>(i)});
    }
    s.target_index = task.target_index;

    s.robot.pose = scene.robot_init;
    s.robot.half_w = cfg.robot_half_w;
    s.robot.half_d = cfg.robot_half_d;
    s.robot.mass = cfg.robot_mass;

    s.trolley.pose = scene.trolley_init;
    s.trolley.half_w = cfg.trolley_half_w;
    s.trolley.half_d = cfg.trolley_half_d;

    s.rand = draw_domain_rand(rand_seed, cfg);
    s.trolley.mass = s.rand.trolley_mass;
    s.budget = eval_mode ? cfg.eval_budget_s : cfg.train_budget_s;
    s.noise_rng.reseed(derive_seed(rand_seed, 0x5E));
    return s;
}

namespace {

// Exact flow of v' = g*(cmd - v) over dt: returns the position increment and
// updates v in place. Using the closed form (rather than an Euler step) keeps
// free-space displacement on the analytic first-order-lag curve.
geom::Vec2 servo_step(geom::Vec2& v, geom::Vec2 cmd, double gain, double dt) {
    const double decay = std::exp(-gain * dt);
    const geom::Vec2 dev = v - cmd;
    const geom::Vec2 dpos = cmd * dt + dev * ((1.0 - decay) / gain);
    v = cmd + dev * decay;
    return dpos;
}

double servo_step_scalar(double& v, double cmd, double gain, double dt) {
    const double decay = std::exp(-gain * dt);
    const double dev = v - cmd;
    const double dpos = cmd * dt + dev * ((1.0 - decay) / gain);
    v = cmd + dev * decay;
    return dpos;
}

void resolve_body(BodyState& body, const SimState& state, const PhysicsConfig& cfg) {
    for (int iter = 0; iter < 16; ++iter) {
        double worst_depth = 0.0;
        geom::Vec2 worst_axis{};
        const geom::OrientedRect rect = body.rect();

        for (const auto& obs : state.obstacles) {
            const auto mtv = geom::rect_mtv(rect, obs.rect);
            if (mtv && mtv->depth > worst_depth) {
                worst_depth = mtv->depth;
                worst_axis = mtv->axis;
            }
        }
        // Room walls as half-planes.
        for (const auto& c : rect.corners()) {
            if (state.room.min.x - c.x > worst_depth)
                worst_depth = state.room.min.x - c.x, worst_axis = {1.0, 0.0};
            if (c.x - state.room.max.x > worst_depth)
                worst_depth = c.x - state.room.max.x, worst_axis = {-1.0, 0.0};
            if (state.room.min.y - c.y > worst_depth)
                worst_depth = state.room.min.y - c.y, worst_axis = {0.0, 1.0};
            if (c.y - state.room.max.y > worst_depth)
                worst_depth = c.y - state.room.max.y, worst_axis = {0.0, -1.0};
        }

        if (worst_depth <= cfg.penetration_tol * 0.5) return;
        body.pose.x += worst_axis.x * worst_depth;
        body.pose.y += worst_axis.y * worst_depth;
        const double vn = geom::dot(body.vel, worst_axis);
        if (vn < 0.0) body.vel -= worst_axis * vn;  // restitution 0
    }
}

}  // namespace

void resolve_collisions(SimState& state, const PhysicsConfig& cfg) {
    resolve_body(state.robot, state, cfg);
    resolve_body(state.trolley, state, cfg);
}

void step_lowlevel(SimState& state, const Action& cached_action, const PhysicsConfig& cfg) {
    if (state.status != Status::Running) return;
    const double dt = cfg.dt;
    const double gain = state.rand.actuation_gain;

    // Velocity noise enters as a perturbation of the current velocity. Both
    // draws happen every tick so replay stays aligned when the std is zero.
    const double nx = state.noise_rng.normal() * state.rand.velocity_noise_std;
    const double ny = state.noise_rng.normal() * state.rand.velocity_noise_std;
    state.robot.vel += geom::Vec2{nx, ny};

    // Commanded body velocity rotated into the world frame.
    const geom::Vec2 cmd_world =
        geom::rotate({cached_action.forward(), cached_action.lateral()}, state.robot.pose.theta);
    const geom::Vec2 dpos = servo_step(state.robot.vel, cmd_world, gain, dt);
    state.robot.pose.x += dpos.x;
    state.robot.pose.y += dpos.y;
    const double dtheta = servo_step_scalar(state.robot.omega, cached_action.yaw(), gain, dt);
    state.robot.pose.theta = geom::wrap_angle(state.robot.pose.theta + dtheta);

    // Penalty contact: robot pushes the trolley while their footprints overlap.
    const geom::OrientedRect robot_rect = state.robot.rect();
    const geom::OrientedRect trolley_rect = state.trolley.rect();
    const auto mtv = geom::rect_mtv(trolley_rect, robot_rect);
    if (mtv) {
        const geom::Vec2 normal = mtv->axis;  // points from robot toward trolley
        const double fn = cfg.contact_stiffness * mtv->depth;

        geom::Vec2 contact = state.trolley.pose.position();
        if (const auto c = geom::overlap_centroid(trolley_rect, robot_rect)) contact = *c;

        const geom::Vec2 r_t = contact - state.trolley.pose.position();
        const geom::Vec2 r_r = contact - state.robot.pose.position();
        const geom::Vec2 v_t = state.trolley.vel + geom::perp(r_t) * state.trolley.omega;
        const geom::Vec2 v_r = state.robot.vel + geom::perp(r_r) * state.robot.omega;
        const geom::Vec2 v_rel = v_t - v_r;

        const geom::Vec2 tangent = geom::perp(normal);
        const double vt = geom::dot(v_rel, tangent);
        // Coulomb friction with viscous regularization below 5 cm/s.
        const double ft = -std::clamp(vt / 0.05, -1.0, 1.0) * cfg.contact_mu * fn;

        const geom::Vec2 force = normal * fn + tangent * ft;
        state.trolley.vel += force * (dt / state.trolley.mass);
        const double inertia = state.trolley.mass *
                               (state.trolley.half_w * state.trolley.half_w +
                                state.trolley.half_d * state.trolley.half_d) / 3.0;
        state.trolley.omega += geom::cross(r_t, force) * dt / inertia;
    }

    // Ground friction with a static threshold: stop instead of reversing.
    const double mu_g = state.rand.ground_friction;
    const double speed = geom::norm(state.trolley.vel);
    const double dv = mu_g * cfg.gravity * dt;
    if (speed <= dv) {
        state.trolley.vel = {0.0, 0.0};
    } else {
        state.trolley.vel -= state.trolley.vel * (dv / speed);
    }
    const double kappa = 0.5 * (state.trolley.half_w + state.trolley.half_d);
    const double domega = mu_g * cfg.gravity / kappa * dt;
    if (std::abs(state.trolley.omega) <= domega) {
        state.trolley.omega = 0.0;
    } else {
        state.trolley.omega -= std::copysign(domega, state.trolley.omega);
    }

    // Semi-implicit Euler for the trolley.
    state.trolley.pose.x += state.trolley.vel.x * dt;
    state.trolley.pose.y += state.trolley.vel.y * dt;
    state.trolley.pose.theta =
        geom::wrap_angle(state.trolley.pose.theta + state.trolley.omega * dt);

    resolve_collisions(state, cfg);

    state.tick += 1;
    state.clock = static_cast<double>(state.tick) * dt;
}

Status check_termination(const SimState& state, const PhysicsConfig& cfg) {
    if (state.status != Status::Running) return state.status;
    const double d = geom::rect_distance(state.trolley.rect(), state.target_rect());
    if (d <= cfg.success_distance) return Status::Success;
    if (state.clock >= state.budget) return Status::Timeout;
    return Status::Running;
}

void step_control(SimState& state, const Action& action, const PhysicsConfig& cfg) {
    for (int i = 0; i < cfg.ticks_per_control && state.status == Status::Running; ++i) {
        step_lowlevel(state, action, cfg);
        state.status = check_termination(state, cfg);
    }
}

PrivilegedState privileged_features(const SimState& state) {
    PrivilegedState pv;
    pv.robot_pose = state.robot.pose;
    pv.robot_vel = state.robot.vel;
    pv.robot_omega = state.robot.omega;
    pv.robot_half_w = state.robot.half_w;
    pv.robot_half_d = state.robot.half_d;
    pv.trolley_pose = state.trolley.pose;
    pv.trolley_vel = state.trolley.vel;
    pv.trolley_omega = state.trolley.omega;
    pv.trolley_half_w = state.trolley.half_w;
    pv.trolley_half_d = state.trolley.half_d;
    pv.target = state.target_rect();
    pv.obstacles.reserve(state.obstacles.size());
    for (const auto& o : state.obstacles) pv.obstacles.push_back(o.rect);
    pv.room = state.room;
    pv.remaining_time = state.budget - state.clock;
    return pv;
}

}  // namespace tsim::sim
