#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcvn/datagen.hpp"

namespace lcvn {

using json = nlohmann::json;

struct DatasetConfig {
    uint64_t seed = 0;
    int n_train = 100;
    int n_val_seen = 20;
    int n_val_unseen = 20;
    int n_test = 20;
    int n_layouts_train = 12;
    int n_layouts_unseen = 6;
    int landmarks_min = 3;
    int landmarks_max = 5;
    int max_len = 12;
    double long_fraction = 0.3;  // share of far-goal trajectories (for @n rollout metrics)
    double long_min_goal_steps = 8.5;
    double long_max_goal_steps = 10.5;
    int long_max_len = 14;
    TrajectoryOptions traj;

    json to_json() const {
        return json{{"seed", seed},
                    {"n_train", n_train},
                    {"n_val_seen", n_val_seen},
                    {"n_val_unseen", n_val_unseen},
                    {"n_test", n_test},
                    {"n_layouts_train", n_layouts_train},
                    {"n_layouts_unseen", n_layouts_unseen},
                    {"landmarks_min", landmarks_min},
                    {"landmarks_max", landmarks_max},
                    {"max_len", max_len},
                    {"long_fraction", long_fraction},
                    {"long_min_goal_steps", long_min_goal_steps},
                    {"long_max_goal_steps", long_max_goal_steps},
                    {"long_max_len", long_max_len},
                    {"step_size", traj.step_size},
                    {"obs_height", traj.render.height},
                    {"obs_width", traj.render.width}};
    }

    static DatasetConfig from_json(const json& j) {
        DatasetConfig c;
        c.seed = j.at("seed").get<uint64_t>();
        c.n_train = j.at("n_train");
        c.n_val_seen = j.at("n_val_seen");
        c.n_val_unseen = j.at("n_val_unseen");
        c.n_test = j.at("n_test");
        c.n_layouts_train = j.at("n_layouts_train");
        c.n_layouts_unseen = j.at("n_layouts_unseen");
        c.landmarks_min = j.at("landmarks_min");
        c.landmarks_max = j.at("landmarks_max");
        c.max_len = j.at("max_len");
        c.long_fraction = j.at("long_fraction");
        c.long_min_goal_steps = j.at("long_min_goal_steps");
        c.long_max_goal_steps = j.at("long_max_goal_steps");
        c.long_max_len = j.at("long_max_len");
        c.traj.step_size = j.at("step_size");
        c.traj.render.height = j.at("obs_height");
        c.traj.render.width = j.at("obs_width");
        return c;
    }
};

static const char* kSplitNames[4] = {"train", "val_seen", "val_unseen", "test"};

struct Dataset {
    DatasetConfig config;
    std::vector<WorldLayout> layouts;
    std::map<std::string, std::vector<Trajectory>> splits;
    double average_step_size = 0.0;  // mean over the train split, meters

    const WorldLayout& layout_by_id(int id) const {
        for (const auto& l : layouts)
            if (l.id == id) return l;
        throw std::runtime_error("lcvn: unknown layout id " + std::to_string(id));
    }

    const std::vector<Trajectory>& split(const std::string& name) const {
        auto it = splits.find(name);
        LCVN_CHECK(it != splits.end(), "unknown split: " + name);
        return it->second;
    }
};

struct DatasetManifest {
    json j;
    std::string dir;
};

namespace detail {

inline void validate_layout_disjointness(const std::set<int>& seen_ids,
                                         const std::set<int>& unseen_ids) {
    for (int id : seen_ids)
        LCVN_CHECK(unseen_ids.count(id) == 0,
                   "layout id " + std::to_string(id) + " appears in both seen and unseen splits");
}

inline std::string encode_pose_block(const std::vector<Pose>& poses) {
    std::vector<double> flat;
    flat.reserve(poses.size() * 3);
    for (const auto& p : poses) {
        flat.push_back(p.x);
        flat.push_back(p.y);
        flat.push_back(p.yaw);
    }
    return hex_encode(flat);
}

inline std::vector<Pose> decode_pose_block(const std::string& s) {
    auto flat = hex_decode_doubles(s);
    LCVN_CHECK(flat.size() % 3 == 0, "bad pose block");
    std::vector<Pose> poses(flat.size() / 3);
    for (size_t i = 0; i < poses.size(); ++i)
        poses[i] = Pose{flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
    return poses;
}

inline std::string encode_action_block(const std::vector<Action>& actions) {
    std::vector<double> flat;
    flat.reserve(actions.size() * 3);
    for (const auto& a : actions) {
        flat.push_back(a.dx);
        flat.push_back(a.dy);
        flat.push_back(a.dyaw);
    }
    return hex_encode(flat);
}

inline std::string encode_obs_block(const std::vector<Observation>& obs) {
    std::string bytes;
    for (const auto& o : obs)
        for (double p : o.pixels)
            bytes.push_back(char(int(std::llround(p * 255.0))));
    return hex_encode(bytes.data(), bytes.size());
}

}  // namespace detail

inline json trajectory_to_json(const Trajectory& t) {
    std::string stops;
    for (const auto& a : t.actions) stops.push_back(a.is_stop ? '1' : '0');
    json ins = json::array();
    for (const auto& i : t.instructions)
        ins.push_back(json{{"style", style_name(i.style)}, {"text", i.text}});
    std::vector<double> scalars{t.average_step_size, t.goal_x, t.goal_y};
    return json{{"id", t.id},
                {"layout", t.layout_id},
                {"goal_landmark", t.goal_landmark},
                {"scalars", hex_encode(scalars)},
                {"poses", detail::encode_pose_block(t.poses)},
                {"actions", detail::encode_action_block(t.actions)},
                {"stops", stops},
                {"obs_h", t.observations.empty() ? 0 : t.observations[0].height},
                {"obs_w", t.observations.empty() ? 0 : t.observations[0].width},
                {"obs", detail::encode_obs_block(t.observations)},
                {"instructions", ins}};
}

inline Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    t.id = j.at("id");
    t.layout_id = j.at("layout");
    t.goal_landmark = j.at("goal_landmark");
    auto scalars = hex_decode_doubles(j.at("scalars").get<std::string>());
    LCVN_CHECK(scalars.size() == 3, "bad trajectory scalar block");
    t.average_step_size = scalars[0];
    t.goal_x = scalars[1];
    t.goal_y = scalars[2];
    t.poses = detail::decode_pose_block(j.at("poses"));
    auto aflat = hex_decode_doubles(j.at("actions").get<std::string>());
    std::string stops = j.at("stops");
    LCVN_CHECK(aflat.size() == stops.size() * 3, "action block size mismatch");
    t.actions.resize(stops.size());
    for (size_t i = 0; i < stops.size(); ++i)
        t.actions[i] = Action{aflat[3 * i], aflat[3 * i + 1], aflat[3 * i + 2], stops[i] == '1'};
    int h = j.at("obs_h"), w = j.at("obs_w");
    auto bytes = hex_decode(j.at("obs").get<std::string>());
    size_t per = size_t(h * w * 3);
    LCVN_CHECK(per > 0 && bytes.size() % per == 0, "observation block size mismatch");
    t.observations.resize(bytes.size() / per);
    for (size_t i = 0; i < t.observations.size(); ++i) {
        auto& o = t.observations[i];
        o.height = h;
        o.width = w;
        o.pixels.resize(per);
        for (size_t k = 0; k < per; ++k) o.pixels[k] = double(bytes[i * per + k]) / 255.0;
    }
    for (const auto& ij : j.at("instructions")) {
        Instruction ins;
        ins.style = style_from_name(ij.at("style"));
        ins.text = ij.at("text");
        ins.tokens = tokenize_text(ins.text);
        t.instructions[size_t(int(ins.style))] = ins;
    }
    return t;
}

inline json layout_to_json(const WorldLayout& w) {
    json lms = json::array();
    for (const auto& lm : w.landmarks) {
        std::vector<double> pos{lm.x, lm.y};
        lms.push_back(json{{"id", lm.id},
                           {"name", lm.name},
                           {"color", lm.color_index},
                           {"pos", hex_encode(pos)}});
    }
    std::vector<double> dims{w.width, w.height};
    json walls = json::array();
    for (const auto& s : w.walls) {
        std::vector<double> seg{s.x0, s.y0, s.x1, s.y1};
        walls.push_back(hex_encode(seg));
    }
    return json{{"id", w.id}, {"seed", w.seed}, {"dims", hex_encode(dims)},
                {"landmarks", lms}, {"walls", walls}};
}

inline WorldLayout layout_from_json(const json& j) {
    WorldLayout w;
    w.id = j.at("id");
    w.seed = j.at("seed").get<uint64_t>();
    auto dims = hex_decode_doubles(j.at("dims").get<std::string>());
    w.width = dims[0];
    w.height = dims[1];
    for (const auto& lj : j.at("landmarks")) {
        Landmark lm;
        lm.id = lj.at("id");
        lm.name = lj.at("name");
        lm.color_index = lj.at("color");
        auto pos = hex_decode_doubles(lj.at("pos").get<std::string>());
        lm.x = pos[0];
        lm.y = pos[1];
        w.landmarks.push_back(lm);
    }
    for (const auto& sj : j.at("walls")) {
        auto seg = hex_decode_doubles(sj.get<std::string>());
        w.walls.push_back(Segment{seg[0], seg[1], seg[2], seg[3]});
    }
    return w;
}

inline Dataset build_dataset(const DatasetConfig& cfg) {
    LCVN_CHECK(cfg.n_train > 0, "build_dataset: n_train must be positive");
    Dataset ds;
    ds.config = cfg;

    Rng lrng(mix_seed(cfg.seed, "layout-counts"));
    std::set<int> seen_ids, unseen_ids;
    for (int i = 0; i < cfg.n_layouts_train; ++i) {
        LayoutOptions lo;
        int n = lrng.uniform_int(cfg.landmarks_min, cfg.landmarks_max);
        WorldLayout w = generate_layout(mix_seed(cfg.seed, "layout-train", uint64_t(i)), n, lo);
        w.id = 1000 + i;
        seen_ids.insert(w.id);
        ds.layouts.push_back(std::move(w));
    }
    for (int i = 0; i < cfg.n_layouts_unseen; ++i) {
        LayoutOptions lo;
        lo.reserved_pools = true;
        int n = lrng.uniform_int(cfg.landmarks_min, std::min(cfg.landmarks_max, 4));
        WorldLayout w = generate_layout(mix_seed(cfg.seed, "layout-unseen", uint64_t(i)), n, lo);
        w.id = 5000 + i;
        unseen_ids.insert(w.id);
        ds.layouts.push_back(std::move(w));
    }
    detail::validate_layout_disjointness(seen_ids, unseen_ids);

    std::vector<const WorldLayout*> train_layouts, unseen_layouts;
    for (const auto& w : ds.layouts)
        (w.id < 5000 ? train_layouts : unseen_layouts).push_back(&w);

    auto sample_split = [&](const std::string& name, int count, uint64_t seed_base,
                            bool unseen_pool, bool mixed_pool) {
        std::vector<Trajectory> out;
        for (int i = 0; i < count; ++i) {
            bool use_unseen = unseen_pool || (mixed_pool && i % 2 == 1);
            const auto& pool = use_unseen ? unseen_layouts : train_layouts;
            const WorldLayout& layout = *pool[size_t(i) % pool.size()];
            TrajectoryOptions to = cfg.traj;
            bool long_range = cfg.long_fraction > 0.0 &&
                              (i % 10) < int(std::llround(cfg.long_fraction * 10.0));
            int max_len = cfg.max_len;
            if (long_range) {
                to.min_goal_steps = cfg.long_min_goal_steps;
                to.max_goal_steps = cfg.long_max_goal_steps;
                max_len = cfg.long_max_len;
            }
            Trajectory traj;
            bool ok = false;
            for (uint64_t retry = 0; retry < 50 && !ok; ++retry) {
                try {
                    traj = sample_trajectory(layout, seed_base + uint64_t(i) * 97 + retry * 1000003,
                                             max_len, to);
                    ok = true;
                } catch (const std::exception&) {
                }
            }
            LCVN_CHECK(ok, "build_dataset: failed to sample trajectory for split " + name);
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s-%06d", name.c_str(), i);
            traj.id = buf;
            attach_instructions(layout, traj);
            out.push_back(std::move(traj));
        }
        ds.splits[name] = std::move(out);
    };

    sample_split("train", cfg.n_train, mix_seed(cfg.seed, "traj-train"), false, false);
    sample_split("val_seen", cfg.n_val_seen, mix_seed(cfg.seed, "traj-val-seen"), false, false);
    sample_split("val_unseen", cfg.n_val_unseen, mix_seed(cfg.seed, "traj-val-unseen"), true,
                 false);
    sample_split("test", cfg.n_test, mix_seed(cfg.seed, "traj-test"), false, true);

    double sum = 0.0;
    for (const auto& t : ds.splits["train"]) sum += t.average_step_size;
    ds.average_step_size = sum / double(cfg.n_train);
    return ds;
}

inline uint64_t file_checksum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    LCVN_CHECK(f.good(), "cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) h = fnv1a64(buf, size_t(f.gcount()), h);
    return h;
}

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream f(dir + "/layouts.json");
        json arr = json::array();
        for (const auto& w : ds.layouts) arr.push_back(layout_to_json(w));
        f << json{{"format", "lcvn-layouts"}, {"version", 1}, {"layouts", arr}}.dump() << "\n";
    }

    json split_meta;
    for (const auto& [name, trajs] : ds.splits) {
        std::string file = name + ".lcvnl";
        std::ofstream f(dir + "/" + file);
        f << json{{"format", "lcvnl"},
                  {"version", 1},
                  {"split", name},
                  {"count", trajs.size()}}
                 .dump()
          << "\n";
        std::set<int> layout_ids;
        for (const auto& t : trajs) {
            f << trajectory_to_json(t).dump() << "\n";
            layout_ids.insert(t.layout_id);
        }
        f.close();
        split_meta[name] = {{"file", file},
                            {"count", trajs.size()},
                            {"checksum", hex_encode_u64(file_checksum(dir + "/" + file))},
                            {"layout_ids", std::vector<int>(layout_ids.begin(), layout_ids.end())}};
    }

    json manifest{{"format", "lcvn-dataset"},
                  {"version", 1},
                  {"config", ds.config.to_json()},
                  {"vocab_checksum", hex_encode_u64(Vocabulary::instance().checksum())},
                  {"average_step_size", hex_encode(std::vector<double>{ds.average_step_size})},
                  {"layouts_file", "layouts.json"},
                  {"layouts_checksum", hex_encode_u64(file_checksum(dir + "/layouts.json"))},
                  {"splits", split_meta}};
    std::ofstream mf(dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
}

inline Dataset read_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    LCVN_CHECK(mf.good(), "cannot open dataset manifest in " + dir);
    json manifest = json::parse(mf);
    LCVN_CHECK(manifest.at("format") == "lcvn-dataset", "not a dataset manifest");
    LCVN_CHECK(manifest.at("vocab_checksum") == hex_encode_u64(Vocabulary::instance().checksum()),
               "dataset was generated with a different vocabulary");

    Dataset ds;
    ds.config = DatasetConfig::from_json(manifest.at("config"));
    ds.average_step_size =
        hex_decode_doubles(manifest.at("average_step_size").get<std::string>())[0];

    {
        std::string lf = dir + "/" + manifest.at("layouts_file").get<std::string>();
        LCVN_CHECK(hex_encode_u64(file_checksum(lf)) == manifest.at("layouts_checksum"),
                   "layouts file checksum mismatch");
        std::ifstream f(lf);
        json j = json::parse(f);
        for (const auto& lj : j.at("layouts")) ds.layouts.push_back(layout_from_json(lj));
    }

    std::set<int> seen_ids, unseen_ids;
    for (auto& [name, meta] : manifest.at("splits").items()) {
        std::string path = dir + "/" + meta.at("file").get<std::string>();
        LCVN_CHECK(hex_encode_u64(file_checksum(path)) == meta.at("checksum"),
                   "split file checksum mismatch: " + path);
        std::ifstream f(path);
        std::string line;
        LCVN_CHECK(std::getline(f, line), "empty split file " + path);
        json header = json::parse(line);
        LCVN_CHECK(header.at("format") == "lcvnl", "bad split header " + path);
        std::vector<Trajectory> trajs;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            trajs.push_back(trajectory_from_json(json::parse(line)));
        }
        LCVN_CHECK(trajs.size() == meta.at("count").get<size_t>(),
                   "split count mismatch: " + path);
        for (const auto& t : trajs) {
            if (name == "val_unseen")
                unseen_ids.insert(t.layout_id);
            else if (name == "train")
                seen_ids.insert(t.layout_id);
        }
        ds.splits[name] = std::move(trajs);
    }
    detail::validate_layout_disjointness(seen_ids, unseen_ids);
    return ds;
}

}  // namespace lcvn
