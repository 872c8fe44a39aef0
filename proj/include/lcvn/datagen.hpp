#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "lcvn/common.hpp"
#include "lcvn/geometry.hpp"

namespace lcvn {

// Fixed closed vocabulary (64 words). The trailing noun/color entries of each
// pool are reserved for unseen-environment layouts.
struct Vocabulary {
    std::vector<std::string> words;
    std::map<std::string, int> index;
    std::vector<int> nouns;        // landmark name pool
    std::vector<int> color_words;  // aligned with the render palette
    int n_reserved_nouns = 4;
    int n_reserved_colors = 2;

    static const Vocabulary& instance() {
        static const Vocabulary v = build();
        return v;
    }

    int id(const std::string& w) const {
        auto it = index.find(w);
        LCVN_CHECK(it != index.end(), "word not in vocabulary: " + w);
        return it->second;
    }

    bool contains(const std::string& w) const { return index.count(w) > 0; }
    const std::string& word(int id_) const {
        LCVN_CHECK(id_ >= 0 && size_t(id_) < words.size(), "bad word id");
        return words[size_t(id_)];
    }
    int size() const { return int(words.size()); }

    std::vector<int> noun_pool(bool reserved) const {
        size_t split = nouns.size() - size_t(n_reserved_nouns);
        if (reserved) return {nouns.begin() + long(split), nouns.end()};
        return {nouns.begin(), nouns.begin() + long(split)};
    }

    std::vector<int> color_pool(bool reserved) const {
        size_t split = color_words.size() - size_t(n_reserved_colors);
        if (reserved) {
            std::vector<int> out;
            for (size_t i = split; i < color_words.size(); ++i) out.push_back(int(i));
            return out;
        }
        std::vector<int> out;
        for (size_t i = 0; i < split; ++i) out.push_back(int(i));
        return out;
    }

    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& w : words) h = fnv1a64(w, h ^ 0x2d);
        return h;
    }

private:
    static Vocabulary build() {
        Vocabulary v;
        const char* lists[] = {
            // verbs / directions
            "go", "walk", "move", "head", "turn", "continue", "stop", "straight", "forward",
            "left", "right", "slight", "sharp", "ahead", "back", "reach",
            // connectives
            "then", "and", "the", "a", "at", "to", "of", "until", "past", "near", "toward",
            "front",
            // colors (aligned with palette; last 2 reserved for unseen)
            "red", "green", "blue", "yellow", "purple", "orange", "cyan", "white",
            // attributes
            "big", "small", "bright", "dark",
            // nouns (landmark names; last 4 reserved for unseen)
            "crate", "lamp", "tree", "cone", "barrel", "statue", "bench", "post", "rock", "sign",
            "stall", "door", "arch", "pillar", "booth", "gate",
            // scene words
            "room", "wall", "floor", "corner", "side", "path", "way", "area"};
        for (const char* w : lists) {
            v.index[w] = int(v.words.size());
            v.words.emplace_back(w);
        }
        LCVN_CHECK(v.words.size() == 64, "vocabulary must have 64 words");
        for (const char* n : {"crate", "lamp", "tree", "cone", "barrel", "statue", "bench", "post",
                              "rock", "sign", "stall", "door", "arch", "pillar", "booth", "gate"})
            v.nouns.push_back(v.index[n]);
        for (const char* c : {"red", "green", "blue", "yellow", "purple", "orange", "cyan", "white"})
            v.color_words.push_back(v.index[c]);
        return v;
    }
};

// whitespace-delimited closed-vocabulary tokenization; errors name the word
inline std::vector<int> tokenize_text(const std::string& text) {
    const auto& vocab = Vocabulary::instance();
    std::vector<int> out;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        if (j > i) out.push_back(vocab.id(text.substr(i, j - i)));
        i = j;
    }
    return out;
}

inline std::string detokenize_text(const std::vector<int>& tokens) {
    const auto& vocab = Vocabulary::instance();
    std::string out;
    for (int t : tokens) {
        if (!out.empty()) out += ' ';
        out += vocab.word(t);
    }
    return out;
}

inline const std::array<std::array<double, 3>, 8>& color_palette() {
    static const std::array<std::array<double, 3>, 8> p = {{{0.85, 0.16, 0.14},
                                                            {0.18, 0.74, 0.22},
                                                            {0.20, 0.32, 0.88},
                                                            {0.92, 0.86, 0.20},
                                                            {0.62, 0.24, 0.76},
                                                            {0.95, 0.55, 0.12},
                                                            {0.18, 0.80, 0.80},
                                                            {0.93, 0.93, 0.93}}};
    return p;
}

struct Landmark {
    int id = 0;
    double x = 0.0, y = 0.0;
    int color_index = 0;
    std::string name;
};

struct Segment {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct WorldLayout {
    int id = 0;
    uint64_t seed = 0;
    double width = 10.0, height = 10.0;  // bounds: [0,width] x [0,height]
    std::vector<Landmark> landmarks;
    std::vector<Segment> walls;

    bool inside(double x, double y) const { return x >= 0 && x <= width && y >= 0 && y <= height; }

    const Landmark& landmark_by_id(int lid) const {
        for (const auto& l : landmarks)
            if (l.id == lid) return l;
        throw std::runtime_error("lcvn: unknown landmark id");
    }
};

struct LayoutOptions {
    double width = 10.0, height = 10.0;
    double margin = 1.2;          // landmarks kept this far from walls
    double min_separation = 2.2;  // pairwise landmark distance
    bool reserved_pools = false;  // draw names/colors from the unseen-reserved subset
};

inline WorldLayout generate_layout(uint64_t seed, int n_landmarks,
                                   const LayoutOptions& opt = {}) {
    const auto& vocab = Vocabulary::instance();
    auto names = vocab.noun_pool(opt.reserved_pools);
    auto colors = vocab.color_pool(opt.reserved_pools);
    LCVN_CHECK(n_landmarks >= 2, "generate_layout: need at least 2 landmarks");
    LCVN_CHECK(size_t(n_landmarks) <= names.size(),
               "generate_layout: n_landmarks exceeds name vocabulary size");

    WorldLayout w;
    w.seed = seed;
    w.width = opt.width;
    w.height = opt.height;
    w.walls = {{0, 0, w.width, 0},
               {w.width, 0, w.width, w.height},
               {w.width, w.height, 0, w.height},
               {0, w.height, 0, 0}};

    Rng rng(mix_seed(seed, "layout"));
    auto perm = rng.permutation(int(names.size()));
    for (int i = 0; i < n_landmarks; ++i) {
        Landmark lm;
        lm.id = i;
        lm.name = vocab.word(names[size_t(perm[size_t(i)])]);
        lm.color_index = colors[rng.uniform_index(colors.size())];
        for (int attempt = 0;; ++attempt) {
            lm.x = rng.uniform(opt.margin, w.width - opt.margin);
            lm.y = rng.uniform(opt.margin, w.height - opt.margin);
            bool ok = true;
            for (const auto& other : w.landmarks)
                ok = ok && std::hypot(other.x - lm.x, other.y - lm.y) >= opt.min_separation;
            if (ok || attempt >= 200) break;
        }
        w.landmarks.push_back(lm);
    }
    return w;
}

// Egocentric observation: HxWx3 reals in [0,1], stored row-major (row, col, ch).
// Pixels are snapped to the 1/255 grid so the on-disk byte encoding round-trips
// bit-exactly.
struct Observation {
    int height = 0, width = 0;
    std::vector<double> pixels;  // height*width*3

    double& at(int r, int c, int ch) { return pixels[size_t((r * width + c) * 3 + ch)]; }
    double at(int r, int c, int ch) const { return pixels[size_t((r * width + c) * 3 + ch)]; }
    size_t size() const { return pixels.size(); }
};

struct RenderOptions {
    int height = 32, width = 32;
    double fov = 2.0943951023931953;  // 120 degrees
    double far_clip = 12.0;
    double radius_scale = 16.0;  // blob radius in px at 1 m
    double radius_min = 1.0, radius_max = 9.0;
};

inline double quantize_pixel(double v) {
    v = std::min(1.0, std::max(0.0, v));
    return std::round(v * 255.0) / 255.0;
}

inline Observation render_background(const RenderOptions& opt) {
    Observation obs;
    obs.height = opt.height;
    obs.width = opt.width;
    obs.pixels.assign(size_t(opt.height * opt.width * 3), 0.0);
    int horizon = opt.height / 2;
    for (int r = 0; r < opt.height; ++r) {
        double t = double(r) / double(opt.height - 1);
        double sky[3] = {0.10 + 0.05 * t, 0.12 + 0.05 * t, 0.18 + 0.06 * t};
        double floor_[3] = {0.20 - 0.06 * t, 0.18 - 0.05 * t, 0.15 - 0.04 * t};
        for (int c = 0; c < opt.width; ++c)
            for (int ch = 0; ch < 3; ++ch)
                obs.at(r, c, ch) = (r < horizon) ? sky[ch] : floor_[ch];
    }
    return obs;
}

inline Observation render_observation(const WorldLayout& layout, const Pose& pose,
                                      const RenderOptions& opt = {}) {
    LCVN_CHECK(layout.inside(pose.x, pose.y), "render_observation: pose outside bounds");
    Observation obs = render_background(opt);

    struct Visible {
        double dist, bearing;
        int color_index, order;
    };
    std::vector<Visible> vis;
    for (size_t i = 0; i < layout.landmarks.size(); ++i) {
        const auto& lm = layout.landmarks[i];
        double dxw = lm.x - pose.x, dyw = lm.y - pose.y;
        double dist = std::hypot(dxw, dyw);
        double bearing = normalize_angle(std::atan2(dyw, dxw) - pose.yaw);
        if (dist > opt.far_clip || dist < 1e-6) continue;
        if (std::abs(bearing) > opt.fov / 2.0) continue;
        vis.push_back({dist, bearing, lm.color_index, int(i)});
    }
    // far-to-near painter order; ties broken by landmark order for determinism
    std::sort(vis.begin(), vis.end(), [](const Visible& a, const Visible& b) {
        if (a.dist != b.dist) return a.dist > b.dist;
        return a.order < b.order;
    });

    double horizon = 0.5 * double(opt.height - 1);
    for (const auto& v : vis) {
        // bearing > 0 is leftward, which maps to lower column indices
        double col = (0.5 - v.bearing / opt.fov) * double(opt.width - 1);
        double row = horizon + std::min(6.0 / v.dist, 9.0);
        double radius = std::min(opt.radius_max, std::max(opt.radius_min, opt.radius_scale / v.dist));
        double sigma = radius / 1.6;
        double cut = 2.5 * sigma;
        const auto& color = color_palette()[size_t(v.color_index)];
        int r0 = std::max(0, int(std::floor(row - cut)));
        int r1 = std::min(opt.height - 1, int(std::ceil(row + cut)));
        int c0 = std::max(0, int(std::floor(col - cut)));
        int c1 = std::min(opt.width - 1, int(std::ceil(col + cut)));
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                double d2 = (r - row) * (r - row) + (c - col) * (c - col);
                if (d2 > cut * cut) continue;
                double alpha = std::exp(-d2 / (2.0 * sigma * sigma));
                for (int ch = 0; ch < 3; ++ch)
                    obs.at(r, c, ch) = obs.at(r, c, ch) * (1.0 - alpha) + color[ch] * alpha;
            }
        }
    }
    for (auto& p : obs.pixels) p = quantize_pixel(p);
    return obs;
}

enum class InstructionStyle { concise = 0, intricate = 1, landmark = 2 };

inline const char* style_name(InstructionStyle s) {
    switch (s) {
        case InstructionStyle::concise: return "concise";
        case InstructionStyle::intricate: return "intricate";
        case InstructionStyle::landmark: return "landmark";
    }
    return "?";
}

inline InstructionStyle style_from_name(const std::string& s) {
    if (s == "concise") return InstructionStyle::concise;
    if (s == "intricate") return InstructionStyle::intricate;
    if (s == "landmark") return InstructionStyle::landmark;
    throw std::runtime_error("lcvn: unknown instruction style: " + s);
}

struct Instruction {
    InstructionStyle style = InstructionStyle::concise;
    std::vector<int> tokens;
    std::string text;
};

struct Trajectory {
    std::string id;
    int layout_id = 0;
    std::vector<Pose> poses;        // length n+1
    std::vector<Action> actions;    // length n, last is stop
    std::vector<Observation> observations;  // length n+1
    std::array<Instruction, 3> instructions;  // indexed by InstructionStyle
    double average_step_size = 0.0;  // meters; mean planar displacement of non-stop actions
    int goal_landmark = -1;
    double goal_x = 0.0, goal_y = 0.0;

    int n_steps() const { return int(actions.size()); }
    const Instruction& instruction(InstructionStyle s) const {
        return instructions[size_t(int(s))];
    }
};

struct TrajectoryOptions {
    double step_size = 0.25;          // target mean planar displacement, meters
    double max_bearing = 0.65;        // |goal bearing| at start, radians
    double min_goal_steps = 3.2;      // distance to goal in step units
    double max_goal_steps = 7.5;
    double max_turn = 0.45;           // per-step yaw change clamp
    int min_visible = 2;              // landmarks visible from the start pose
    RenderOptions render;
};

namespace detail {

inline std::vector<std::pair<int, double>> visible_landmarks(const WorldLayout& layout,
                                                             const Pose& pose,
                                                             const RenderOptions& r) {
    std::vector<std::pair<int, double>> out;  // (landmark index, bearing)
    for (size_t i = 0; i < layout.landmarks.size(); ++i) {
        const auto& lm = layout.landmarks[i];
        double dist = std::hypot(lm.x - pose.x, lm.y - pose.y);
        double bearing = normalize_angle(std::atan2(lm.y - pose.y, lm.x - pose.x) - pose.yaw);
        if (dist <= r.far_clip * 0.9 && std::abs(bearing) <= r.fov * 0.45)
            out.emplace_back(int(i), bearing);
    }
    return out;
}

}  // namespace detail

// Waypoint expert toward a goal landmark. The agent turns toward the goal
// (clamped) and steps along the current facing; the final action is the stop.
// Planar displacements are rescaled so the mean step magnitude equals
// step_size exactly, which is stored as average_step_size.
inline Trajectory sample_trajectory(const WorldLayout& layout, uint64_t seed, int max_len,
                                    const TrajectoryOptions& opt = {}) {
    LCVN_CHECK(max_len >= 3, "sample_trajectory: max_len must be >= 3");
    LCVN_CHECK(!layout.landmarks.empty(), "sample_trajectory: layout has no landmarks");

    for (int attempt = 0; attempt < 10; ++attempt) {
        Rng rng(mix_seed(seed ^ (layout.seed * 0x9e3779b97f4a7c15ull), "traj", uint64_t(attempt)));
        int goal_idx = int(rng.uniform_index(layout.landmarks.size()));
        const Landmark& goal = layout.landmarks[size_t(goal_idx)];

        Pose start;
        bool placed = false;
        for (int k = 0; k < 60 && !placed; ++k) {
            start.x = rng.uniform(0.8, layout.width - 0.8);
            start.y = rng.uniform(0.8, layout.height - 0.8);
            double dist = std::hypot(goal.x - start.x, goal.y - start.y);
            if (dist < opt.min_goal_steps * opt.step_size || dist > opt.max_goal_steps * opt.step_size)
                continue;
            double goal_dir = std::atan2(goal.y - start.y, goal.x - start.x);
            start.yaw = normalize_angle(goal_dir + rng.uniform(-opt.max_bearing, opt.max_bearing));
            if (int(detail::visible_landmarks(layout, start, opt.render).size()) < opt.min_visible)
                continue;
            placed = true;
        }
        if (!placed) continue;

        Pose pose = start;
        std::vector<Action> actions;
        bool arrived = false;
        for (int step = 0; step < max_len - 1; ++step) {
            double dist = std::hypot(goal.x - pose.x, goal.y - pose.y);
            if (dist < 1e-9) {
                arrived = true;
                break;
            }
            // spread the remaining distance over whole steps so the final one
            // lands exactly on the goal
            int remaining = std::max(1, int(std::llround(dist / opt.step_size)));
            double mag = dist / double(remaining);
            if (remaining > 1) mag *= rng.uniform(0.96, 1.04);
            double bearing = normalize_angle(std::atan2(goal.y - pose.y, goal.x - pose.x) - pose.yaw);
            Action a;
            a.dyaw = std::min(opt.max_turn, std::max(-opt.max_turn, bearing));
            // displacement toward the goal expressed in the pre-turn agent frame
            a.dx = mag * std::cos(bearing);
            a.dy = mag * std::sin(bearing);
            if (a.dx < 0.0) a.dx = 0.0;  // never emit backward motion
            actions.push_back(a);
            pose = compose(pose, a);
        }
        if (!arrived)
            arrived = std::hypot(goal.x - pose.x, goal.y - pose.y) < 1e-9;
        if (!arrived || int(actions.size()) < 2) continue;

        double mean_mag = 0.0;
        for (const auto& a : actions) mean_mag += planar_norm(a);
        mean_mag /= double(actions.size());
        actions.push_back(Action::stop());

        Trajectory traj;
        traj.layout_id = layout.id;
        traj.goal_landmark = goal.id;
        traj.goal_x = goal.x;
        traj.goal_y = goal.y;
        traj.actions = actions;
        traj.poses.push_back(start);
        for (const auto& a : actions) traj.poses.push_back(compose(traj.poses.back(), a));
        traj.average_step_size = mean_mag;

        bool in_bounds = true;
        for (const auto& p : traj.poses) in_bounds = in_bounds && layout.inside(p.x, p.y);
        if (!in_bounds) continue;

        traj.observations.reserve(traj.poses.size());
        for (const auto& p : traj.poses)
            traj.observations.push_back(render_observation(layout, p, opt.render));
        return traj;
    }
    throw std::runtime_error("lcvn: sample_trajectory: no reachable goal after 10 attempts");
}

// ---- instruction templates ----

namespace detail {

enum class Turn { straight, slight_left, left, slight_right, right };

inline std::vector<Turn> turn_segments(const Trajectory& traj) {
    std::vector<Turn> segs;
    for (const auto& a : traj.actions) {
        if (a.is_stop) break;
        Turn t;
        if (std::abs(a.dyaw) < 0.12)
            t = Turn::straight;
        else if (a.dyaw >= 0.35)
            t = Turn::left;
        else if (a.dyaw > 0)
            t = Turn::slight_left;
        else if (a.dyaw <= -0.35)
            t = Turn::right;
        else
            t = Turn::slight_right;
        if (segs.empty() || segs.back() != t) segs.push_back(t);
    }
    if (segs.empty()) segs.push_back(Turn::straight);
    if (segs.size() > 4) segs.resize(4);
    return segs;
}

inline void push_words(std::vector<std::string>& out, std::initializer_list<const char*> ws) {
    for (const char* w : ws) out.emplace_back(w);
}

inline void push_turn(std::vector<std::string>& out, Turn t) {
    switch (t) {
        case Turn::straight: push_words(out, {"go", "straight"}); break;
        case Turn::slight_left: push_words(out, {"turn", "slight", "left"}); break;
        case Turn::left: push_words(out, {"turn", "left"}); break;
        case Turn::slight_right: push_words(out, {"turn", "slight", "right"}); break;
        case Turn::right: push_words(out, {"turn", "right"}); break;
    }
}

inline const char* luminance_word(int color_index) {
    const auto& c = color_palette()[size_t(color_index)];
    double lum = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    return lum > 0.5 ? "bright" : "dark";
}

}  // namespace detail

inline Instruction generate_instruction(const WorldLayout& layout, const Trajectory& traj,
                                        InstructionStyle style) {
    const auto& vocab = Vocabulary::instance();
    const Landmark& goal = layout.landmark_by_id(traj.goal_landmark);
    const std::string goal_color = vocab.word(vocab.color_words[size_t(goal.color_index)]);
    auto segs = detail::turn_segments(traj);

    // deterministic distractor: nearest non-goal landmark to the path midpoint
    const Landmark* distractor = nullptr;
    {
        const Pose& mid = traj.poses[traj.poses.size() / 2];
        double best = 1e18;
        for (const auto& lm : layout.landmarks) {
            if (lm.id == goal.id) continue;
            double d = std::hypot(lm.x - mid.x, lm.y - mid.y);
            if (d < best) {
                best = d;
                distractor = &lm;
            }
        }
    }

    std::vector<std::string> ws;
    switch (style) {
        case InstructionStyle::concise: {
            for (size_t i = 0; i < segs.size(); ++i) {
                if (i > 0) ws.emplace_back("then");
                detail::push_turn(ws, segs[i]);
            }
            detail::push_words(ws, {"then", "stop"});
            break;
        }
        case InstructionStyle::intricate: {
            // concise skeleton enriched with scene attributes
            for (size_t i = 0; i < segs.size() && i < 3; ++i) {
                if (i > 0) ws.emplace_back("then");
                detail::push_turn(ws, segs[i]);
            }
            if (distractor) {
                detail::push_words(ws, {"past", "the"});
                ws.emplace_back(detail::luminance_word(distractor->color_index));
                ws.emplace_back(vocab.word(vocab.color_words[size_t(distractor->color_index)]));
                ws.emplace_back(distractor->name);
            }
            detail::push_words(ws, {"then", "stop", "near", "the"});
            ws.emplace_back(detail::luminance_word(goal.color_index));
            ws.emplace_back(goal_color);
            ws.emplace_back(goal.name);
            break;
        }
        case InstructionStyle::landmark: {
            detail::push_words(ws, {"head", "toward", "the"});
            ws.emplace_back(goal_color);
            ws.emplace_back(goal.name);
            if (segs.size() > 1) {
                ws.emplace_back("then");
                detail::push_turn(ws, segs[1]);
            }
            detail::push_words(ws, {"then", "stop", "at", "the"});
            ws.emplace_back(goal.name);
            break;
        }
    }

    Instruction ins;
    ins.style = style;
    for (const auto& w : ws) {
        ins.tokens.push_back(vocab.id(w));
        if (!ins.text.empty()) ins.text += ' ';
        ins.text += w;
    }
    LCVN_CHECK(ins.tokens.size() <= 32, "instruction exceeds 32 tokens");
    return ins;
}

inline void attach_instructions(const WorldLayout& layout, Trajectory& traj) {
    for (int s = 0; s < 3; ++s)
        traj.instructions[size_t(s)] = generate_instruction(layout, traj, InstructionStyle(s));
}

}  // namespace lcvn
