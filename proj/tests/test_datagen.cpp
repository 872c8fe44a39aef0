#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "lcvn/datagen.hpp"
#include "lcvn/dataset.hpp"

using namespace lcvn;

namespace {
bool layouts_identical(const WorldLayout& a, const WorldLayout& b) {
    if (a.landmarks.size() != b.landmarks.size()) return false;
    for (size_t i = 0; i < a.landmarks.size(); ++i) {
        const auto &la = a.landmarks[i], &lb = b.landmarks[i];
        if (la.name != lb.name || la.color_index != lb.color_index) return false;
        if (std::memcmp(&la.x, &lb.x, sizeof(double)) != 0) return false;
        if (std::memcmp(&la.y, &lb.y, sizeof(double)) != 0) return false;
    }
    return true;
}
}  // namespace

TEST_CASE("generate_layout determinism and seed sensitivity") {
    auto a = generate_layout(7, 4);
    auto b = generate_layout(7, 4);
    REQUIRE(layouts_identical(a, b));

    auto c = generate_layout(8, 4);
    bool differs = false;
    for (size_t i = 0; i < 4; ++i)
        differs = differs || a.landmarks[i].x != c.landmarks[i].x ||
                  a.landmarks[i].y != c.landmarks[i].y;
    REQUIRE(differs);
}

TEST_CASE("generate_layout validates landmark count against name pool") {
    const auto& vocab = Vocabulary::instance();
    int pool = int(vocab.noun_pool(false).size());
    REQUIRE_THROWS(generate_layout(0, pool + 1));
    REQUIRE_THROWS(generate_layout(0, 1));
    auto w = generate_layout(0, pool);
    std::set<std::string> names;
    for (const auto& lm : w.landmarks) names.insert(lm.name);
    REQUIRE(int(names.size()) == pool);  // drawn without replacement
}

TEST_CASE("render_observation geometry") {
    WorldLayout w;
    w.width = w.height = 10;
    w.walls = {};
    w.landmarks = {{0, 6.0, 5.0, 0, "crate"}};
    RenderOptions opt;

    SECTION("landmark dead ahead at 1 m sits on the midline column") {
        Pose p{5.0, 5.0, 0.0};
        auto obs = render_observation(w, p, opt);
        // centroid of the red channel excess over background
        auto bg = render_background(opt);
        double wsum = 0, csum = 0;
        for (int r = 0; r < opt.height; ++r)
            for (int c = 0; c < opt.width; ++c) {
                double d = std::abs(obs.at(r, c, 0) - bg.at(r, c, 0));
                wsum += d;
                csum += d * c;
            }
        REQUIRE(wsum > 0.0);
        double centroid = csum / wsum;
        REQUIRE(centroid == Catch::Approx((opt.width - 1) / 2.0).margin(0.5));
    }

    SECTION("determinism") {
        Pose p{4.0, 5.0, 0.3};
        auto a = render_observation(w, p, opt);
        auto b = render_observation(w, p, opt);
        REQUIRE(a.pixels == b.pixels);
    }

    SECTION("facing away from the sole landmark gives the blank background") {
        Pose p{5.0, 5.0, M_PI};
        auto obs = render_observation(w, p, opt);
        auto bg = render_background(opt);
        double max_dev = 0;
        for (size_t i = 0; i < obs.pixels.size(); ++i)
            max_dev = std::max(max_dev, std::abs(obs.pixels[i] - quantize_pixel(bg.pixels[i])));
        REQUIRE(max_dev < 1e-6);
    }

    SECTION("pose outside bounds is an error") {
        REQUIRE_THROWS(render_observation(w, Pose{-1.0, 5.0, 0.0}, opt));
    }

    SECTION("all pixel values stay in [0,1]") {
        Pose p{5.5, 5.0, 0.0};  // close-up blob
        auto obs = render_observation(w, p, opt);
        for (double v : obs.pixels) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("sample_trajectory invariants") {
    auto layout = generate_layout(21, 4);
    layout.id = 42;
    auto traj = sample_trajectory(layout, 3, 12);

    SECTION("poses recompute from actions to 1e-9") {
        Pose p = traj.poses[0];
        for (size_t i = 0; i < traj.actions.size(); ++i) {
            p = compose(p, traj.actions[i]);
            REQUIRE(std::abs(p.x - traj.poses[i + 1].x) < 1e-9);
            REQUIRE(std::abs(p.y - traj.poses[i + 1].y) < 1e-9);
            REQUIRE(std::abs(normalize_angle(p.yaw - traj.poses[i + 1].yaw)) < 1e-9);
        }
    }

    SECTION("final action is stop, length filter holds") {
        REQUIRE(traj.actions.back().is_stop);
        REQUIRE(traj.n_steps() >= 3);
        REQUIRE(traj.n_steps() <= 12);
    }

    SECTION("no backward motion") {
        for (const auto& a : traj.actions) REQUIRE(a.dx >= -0.01);
    }

    SECTION("mean planar displacement equals stored average_step_size") {
        double sum = 0;
        int n = 0;
        for (const auto& a : traj.actions)
            if (!a.is_stop) {
                sum += planar_norm(a);
                ++n;
            }
        REQUIRE(sum / n == Catch::Approx(traj.average_step_size).epsilon(1e-12));
    }

    SECTION("expert ends on the goal") {
        const Pose& end = traj.poses.back();
        REQUIRE(std::hypot(end.x - traj.goal_x, end.y - traj.goal_y) <
                traj.average_step_size);
    }

    SECTION("determinism") {
        auto again = sample_trajectory(layout, 3, 12);
        REQUIRE(again.actions.size() == traj.actions.size());
        for (size_t i = 0; i < traj.actions.size(); ++i)
            REQUIRE(again.actions[i].dx == traj.actions[i].dx);
    }

    SECTION("actions stay within the bin range") {
        for (const auto& a : traj.actions) {
            REQUIRE(std::abs(a.dx) <= 0.5);
            REQUIRE(std::abs(a.dy) <= 0.5);
            REQUIRE(std::abs(a.dyaw) <= 0.5);
        }
    }
}

TEST_CASE("instruction styles follow their templates") {
    auto layout = generate_layout(33, 4);
    layout.id = 7;
    auto traj = sample_trajectory(layout, 11, 12);
    attach_instructions(layout, traj);
    const auto& vocab = Vocabulary::instance();

    const auto& concise = traj.instruction(InstructionStyle::concise);
    const auto& intricate = traj.instruction(InstructionStyle::intricate);
    const auto& landmark = traj.instruction(InstructionStyle::landmark);

    SECTION("concise has directions and stop but no landmark names") {
        bool has_stop = false;
        for (int t : concise.tokens) has_stop = has_stop || vocab.word(t) == "stop";
        REQUIRE(has_stop);
        for (int t : concise.tokens)
            for (const auto& lm : layout.landmarks) REQUIRE(vocab.word(t) != lm.name);
    }

    SECTION("landmark style names the goal") {
        const auto& goal = layout.landmark_by_id(traj.goal_landmark);
        bool has_goal = false;
        for (int t : landmark.tokens) has_goal = has_goal || vocab.word(t) == goal.name;
        REQUIRE(has_goal);
    }

    SECTION("intricate is strictly longer than concise") {
        REQUIRE(intricate.tokens.size() > concise.tokens.size());
    }

    SECTION("token budget and determinism") {
        for (const auto& ins : traj.instructions) {
            REQUIRE(ins.tokens.size() <= 32);
            auto again = generate_instruction(layout, traj, ins.style);
            REQUIRE(again.tokens == ins.tokens);
            REQUIRE(again.text == ins.text);
        }
    }

    SECTION("straight-then-stop trajectory mentions straight") {
        // build a synthetic straight trajectory
        Trajectory st = traj;
        st.actions = {Action{0.25, 0, 0, false}, Action{0.25, 0, 0, false},
                      Action{0.25, 0, 0, false}, Action::stop()};
        auto ins = generate_instruction(layout, st, InstructionStyle::concise);
        bool has_straight = false, has_stop = false;
        for (int t : ins.tokens) {
            has_straight = has_straight || vocab.word(t) == "straight";
            has_stop = has_stop || vocab.word(t) == "stop";
        }
        REQUIRE(has_straight);
        REQUIRE(has_stop);
    }
}

TEST_CASE("dataset build, splits, and bit-exact round trip") {
    DatasetConfig cfg;
    cfg.seed = 5;
    cfg.n_train = 12;
    cfg.n_val_seen = 4;
    cfg.n_val_unseen = 4;
    cfg.n_test = 4;
    cfg.n_layouts_train = 3;
    cfg.n_layouts_unseen = 2;
    cfg.traj.render.height = cfg.traj.render.width = 16;
    auto ds = build_dataset(cfg);

    SECTION("split sizes and instruction count") {
        REQUIRE(ds.split("train").size() == 12);
        REQUIRE(ds.split("val_unseen").size() == 4);
        for (const auto& t : ds.split("train")) REQUIRE(t.instructions.size() == 3);
    }

    SECTION("layout disjointness between train and val_unseen") {
        std::set<int> train_ids, unseen_ids;
        for (const auto& t : ds.split("train")) train_ids.insert(t.layout_id);
        for (const auto& t : ds.split("val_unseen")) unseen_ids.insert(t.layout_id);
        for (int id : train_ids) REQUIRE(unseen_ids.count(id) == 0);
    }

    SECTION("trajectory ids of train and val_seen are disjoint") {
        std::set<std::string> a, b;
        for (const auto& t : ds.split("train")) a.insert(t.id);
        for (const auto& t : ds.split("val_seen")) b.insert(t.id);
        for (const auto& id : a) REQUIRE(b.count(id) == 0);
    }

    SECTION("unseen layouts use reserved names") {
        const auto& vocab = Vocabulary::instance();
        auto reserved = vocab.noun_pool(true);
        std::set<std::string> reserved_names;
        for (int id : reserved) reserved_names.insert(vocab.word(id));
        for (const auto& w : ds.layouts)
            if (w.id >= 5000)
                for (const auto& lm : w.landmarks) REQUIRE(reserved_names.count(lm.name) == 1);
    }

    SECTION("filter compliance in every stored trajectory") {
        for (const auto& [name, trajs] : ds.splits)
            for (const auto& t : trajs) {
                REQUIRE(t.n_steps() >= 3);
                for (const auto& a : t.actions) REQUIRE(a.dx >= -0.01);
            }
    }

    SECTION("write/read round trip is bit exact") {
        std::string dir = "dataset_roundtrip_test";
        write_dataset(ds, dir);
        auto back = read_dataset(dir);
        REQUIRE(back.splits.size() == ds.splits.size());
        REQUIRE(std::memcmp(&back.average_step_size, &ds.average_step_size, 8) == 0);
        for (const auto& [name, trajs] : ds.splits) {
            const auto& bt = back.split(name);
            REQUIRE(bt.size() == trajs.size());
            for (size_t i = 0; i < trajs.size(); ++i) {
                REQUIRE(bt[i].id == trajs[i].id);
                REQUIRE(bt[i].layout_id == trajs[i].layout_id);
                REQUIRE(bt[i].poses.size() == trajs[i].poses.size());
                for (size_t k = 0; k < trajs[i].poses.size(); ++k)
                    REQUIRE(std::memcmp(&bt[i].poses[k], &trajs[i].poses[k], sizeof(Pose)) == 0);
                for (size_t k = 0; k < trajs[i].actions.size(); ++k) {
                    REQUIRE(bt[i].actions[k].dx == trajs[i].actions[k].dx);
                    REQUIRE(bt[i].actions[k].is_stop == trajs[i].actions[k].is_stop);
                }
                for (size_t k = 0; k < trajs[i].observations.size(); ++k)
                    REQUIRE(bt[i].observations[k].pixels == trajs[i].observations[k].pixels);
                for (size_t k = 0; k < 3; ++k) {
                    REQUIRE(bt[i].instructions[k].text == trajs[i].instructions[k].text);
                    REQUIRE(bt[i].instructions[k].tokens == trajs[i].instructions[k].tokens);
                }
            }
        }
        // second write produces identical bytes (determinism of serialization)
        std::string dir2 = "dataset_roundtrip_test_2";
        write_dataset(back, dir2);
        REQUIRE(file_checksum(dir + "/train.lcvnl") == file_checksum(dir2 + "/train.lcvnl"));
        std::filesystem::remove_all(dir);
        std::filesystem::remove_all(dir2);
    }

    SECTION("rebuild with equal seed is identical") {
        auto again = build_dataset(cfg);
        REQUIRE(again.split("train")[3].poses[1].x == ds.split("train")[3].poses[1].x);
        REQUIRE(again.split("val_unseen")[1].instructions[2].text ==
                ds.split("val_unseen")[1].instructions[2].text);
    }
}
