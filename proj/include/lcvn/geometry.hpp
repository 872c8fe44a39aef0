#pragma once

#include <cmath>
#include <vector>

#include "lcvn/common.hpp"

namespace lcvn {

// normalize into (-pi, pi]
inline double normalize_angle(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a <= -M_PI) a += 2.0 * M_PI;
    if (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;  // radians in (-pi, pi]
};

// Agent-frame action: dx along the facing direction, dy leftward-perpendicular,
// positive dyaw counter-clockwise. The null (stop) action terminates an episode.
struct Action {
    double dx = 0.0;
    double dy = 0.0;
    double dyaw = 0.0;
    bool is_stop = false;

    static Action stop() { return Action{0.0, 0.0, 0.0, true}; }
};

// SE(2) composition: rotate the agent-frame displacement into the world frame,
// then apply the yaw change. Stop actions contribute identity.
inline Pose compose(const Pose& p, const Action& a) {
    if (a.is_stop) return p;
    double c = std::cos(p.yaw), s = std::sin(p.yaw);
    Pose out;
    out.x = p.x + a.dx * c - a.dy * s;
    out.y = p.y + a.dx * s + a.dy * c;
    out.yaw = normalize_angle(p.yaw + a.dyaw);
    return out;
}

// Relative motion ref -> cur expressed in ref's frame.
inline Action relative_step(const Pose& ref, const Pose& cur) {
    double c = std::cos(ref.yaw), s = std::sin(ref.yaw);
    double wx = cur.x - ref.x, wy = cur.y - ref.y;
    Action a;
    a.dx = c * wx + s * wy;
    a.dy = -s * wx + c * wy;
    a.dyaw = normalize_angle(cur.yaw - ref.yaw);
    return a;
}

inline double planar_norm(const Action& a) { return std::hypot(a.dx, a.dy); }

inline double distance(const Pose& a, const Pose& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Integrate an executed action sequence into a world-frame pose trace. A stop
// action ends the episode: nothing is appended and later actions are ignored.
inline std::vector<Pose> integrate_actions(const Pose& start, const std::vector<Action>& actions) {
    std::vector<Pose> trace;
    trace.reserve(actions.size() + 1);
    trace.push_back(start);
    for (const auto& a : actions) {
        if (a.is_stop) break;
        trace.push_back(compose(trace.back(), a));
    }
    return trace;
}

}  // namespace lcvn
