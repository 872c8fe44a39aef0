#include <catch2/catch_amalgamated.hpp>

#include "lcvn/agent.hpp"
#include "oracles.hpp"

using namespace lcvn;

namespace {

WMConfig toy_wm_config() {
    WMConfig c;
    c.k = 2;
    c.dz = 4;
    c.de = 8;
    c.width = 16;
    c.depth = 1;
    c.heads = 2;
    c.levels = 8;
    c.sampler_steps = 2;
    c.obs_h = c.obs_w = 8;
    c.vae_hidden = 12;
    return c;
}

Agent toy_agent(const WMConfig& wm_cfg, uint64_t seed) {
    Agent a;
    a.cfg.dp = 4;
    a.cfg.hidden = 16;
    a.cfg.d_align = 8;
    a.cfg.horizon = 3;
    a.cfg.rollout_sampler_steps = 2;
    a.init(seed, wm_cfg.dz, wm_cfg.de);
    return a;
}

Eigen::RowVectorXd rvec(std::initializer_list<double> v) {
    Eigen::RowVectorXd r(long(v.size()));
    int i = 0;
    for (double x : v) r(i++) = x;
    return r;
}

std::vector<Eigen::RowVectorXd> random_latents(int n, int d, uint64_t seed) {
    Rng rng(seed);
    std::vector<Eigen::RowVectorXd> out;
    for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd v(d);
        for (int j = 0; j < d; ++j) v(j) = rng.normal();
        out.push_back(v);
    }
    return out;
}

}  // namespace

TEST_CASE("diagonal gaussian KL closed form") {
    PlanDistribution p{rvec({1.0}), rvec({0.0})};
    PlanDistribution q{rvec({0.0}), rvec({0.0})};
    REQUIRE(kl_gaussians(p, p) == 0.0);
    REQUIRE(kl_gaussians(p, q) == Catch::Approx(0.5).epsilon(1e-12));

    SECTION("matches Monte-Carlo within 3 standard errors") {
        Rng rng(5);
        PlanDistribution a, b;
        a.mean = rvec({0.3, -0.7, 1.1});
        a.logvar = rvec({0.2, -0.5, 0.1});
        b.mean = rvec({-0.2, 0.4, 0.9});
        b.logvar = rvec({-0.1, 0.3, -0.4});
        double closed = kl_gaussians(a, b);
        std::vector<double> mp(a.mean.data(), a.mean.data() + 3),
            lp(a.logvar.data(), a.logvar.data() + 3), mq(b.mean.data(), b.mean.data() + 3),
            lq(b.logvar.data(), b.logvar.data() + 3);
        auto mc = oracle::kl_monte_carlo(mp, lp, mq, lq, 100000, 11);
        REQUIRE(std::abs(closed - mc.mean) < 3.0 * mc.stderr_);
    }

    SECTION("tape version matches the plain version") {
        Tape t;
        PlanVars pv{t.constant(rvec({0.3, -0.7})), t.constant(rvec({0.2, -0.5}))};
        PlanVars qv{t.constant(rvec({-0.2, 0.4})), t.constant(rvec({-0.1, 0.3}))};
        PlanDistribution pd{rvec({0.3, -0.7}), rvec({0.2, -0.5})};
        PlanDistribution qd{rvec({-0.2, 0.4}), rvec({-0.1, 0.3})};
        REQUIRE(t.scalar(kl_gaussians_var(t, pv, qv)) ==
                Catch::Approx(kl_gaussians(pd, qd)).epsilon(1e-12));
    }
}

TEST_CASE("intrinsic reward formula and edge cases") {
    REQUIRE(intrinsic_reward(rvec({3, 4}), rvec({3, 4})) == Catch::Approx(1.0));
    REQUIRE(intrinsic_reward(rvec({2, 0}), rvec({1, 0})) == Catch::Approx(0.5));
    REQUIRE(intrinsic_reward(rvec({1, 0}), rvec({0, 1})) == 0.0);
    REQUIRE(intrinsic_reward(rvec({0, 0}), rvec({0, 0})) == 1.0);
    REQUIRE(intrinsic_reward(rvec({0, 0}), rvec({1, 2})) == 0.0);

    SECTION("bounds and self/scale properties over random pairs") {
        Rng rng(9);
        for (int i = 0; i < 1000; ++i) {
            Eigen::RowVectorXd a(3), b(3);
            for (int j = 0; j < 3; ++j) {
                a(j) = rng.normal();
                b(j) = rng.normal();
            }
            double r = intrinsic_reward(a, b);
            REQUIRE(r >= -1.0 - 1e-12);
            REQUIRE(r <= 1.0 + 1e-12);
            REQUIRE(intrinsic_reward(a, a) == Catch::Approx(1.0));
            double c = 1.0 + rng.uniform() * 3.0;
            REQUIRE(intrinsic_reward(c * a, a) == Catch::Approx(1.0 / c).epsilon(1e-9));
        }
    }

    SECTION("tape version matches") {
        Tape t;
        Var a = t.constant(rvec({0.5, -1.2, 0.3}));
        Var b = t.constant(rvec({-0.7, 0.1, 0.9}));
        REQUIRE(t.scalar(intrinsic_reward_var(t, a, b)) ==
                Catch::Approx(intrinsic_reward(rvec({0.5, -1.2, 0.3}), rvec({-0.7, 0.1, 0.9})))
                    .epsilon(1e-12));
    }
}

TEST_CASE("lambda returns") {
    SECTION("worked example at lambda = 1") {
        auto v = lambda_returns({1.0, 0.5}, {0.0, 0.0, 2.0}, 0.9, 1.0);
        REQUIRE(v[0] == Catch::Approx(3.07).epsilon(1e-12));
        REQUIRE(v[1] == Catch::Approx(0.5 + 0.9 * 2.0).epsilon(1e-12));
    }
    SECTION("lambda = 0 collapses to one-step TD") {
        std::vector<double> r{0.3, -0.2, 0.7}, vals{9.0, 1.0, 2.0, 3.0};
        auto v = lambda_returns(r, vals, 0.8, 0.0);
        for (size_t k = 0; k < r.size(); ++k)
            REQUIRE(v[k] == Catch::Approx(r[k] + 0.8 * vals[k + 1]).epsilon(1e-12));
    }
    SECTION("recursion equals brute-force expansion on 1000 random instances") {
        Rng rng(21);
        for (int i = 0; i < 1000; ++i) {
            int H = 1 + int(rng.uniform_index(8));
            std::vector<double> r(static_cast<size_t>(H));
            std::vector<double> vals(r.size() + 1);
            for (auto& x : r) x = rng.normal();
            for (auto& x : vals) x = rng.normal();
            double gamma = rng.uniform(), lambda = rng.uniform();
            auto fast = lambda_returns(r, vals, gamma, lambda);
            auto brute = oracle::lambda_returns_bruteforce(r, vals, gamma, lambda);
            for (size_t k = 0; k < r.size(); ++k)
                REQUIRE(std::abs(fast[k] - brute[k]) < 1e-10);
        }
    }
    SECTION("length mismatch is an error") {
        REQUIRE_THROWS(lambda_returns({1.0}, {1.0}, 0.9, 0.9));
    }
    SECTION("tape version matches the plain recursion") {
        Tape t;
        std::vector<Var> r{t.constant(Mat::Constant(1, 1, 0.4)),
                           t.constant(Mat::Constant(1, 1, -0.3))};
        std::vector<Var> vals{t.constant(Mat::Constant(1, 1, 0.1)),
                              t.constant(Mat::Constant(1, 1, 0.2)),
                              t.constant(Mat::Constant(1, 1, 0.3))};
        auto vl = lambda_returns_var(t, r, vals, 0.9, 0.7);
        auto plain = lambda_returns({0.4, -0.3}, {0.1, 0.2, 0.3}, 0.9, 0.7);
        REQUIRE(t.scalar(vl[0]) == Catch::Approx(plain[0]).epsilon(1e-12));
        REQUIRE(t.scalar(vl[1]) == Catch::Approx(plain[1]).epsilon(1e-12));
    }
}

TEST_CASE("instruction alignment loss") {
    SECTION("perfect matched, orthogonal mismatched -> 0") {
        Tape t;
        Mat a(2, 2), b(2, 2);
        a << 1, 0, 0, 1;
        b << 1, 0, 0, 1;
        REQUIRE(t.scalar(instruction_alignment_loss(t, t.constant(a), t.constant(b), 0.2)) ==
                Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("all projections identical -> 0.8 at margin 0.2") {
        Tape t;
        Mat a(3, 2);
        a << 2, 1, 2, 1, 2, 1;
        REQUIRE(t.scalar(instruction_alignment_loss(t, t.constant(a), t.constant(a), 0.2)) ==
                Catch::Approx(0.8).epsilon(1e-12));
    }
    SECTION("nonnegative on random batches") {
        Rng rng(31);
        for (int i = 0; i < 20; ++i) {
            Tape t;
            Mat a(4, 3), b(4, 3);
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 3; ++c) {
                    a(r, c) = rng.normal();
                    b(r, c) = rng.normal();
                }
            REQUIRE(t.scalar(instruction_alignment_loss(t, t.constant(a), t.constant(b), 0.2)) >=
                    0.0);
        }
    }
    SECTION("batch of one is an error") {
        Tape t;
        Mat a(1, 2);
        a << 1, 0;
        REQUIRE_THROWS(instruction_alignment_loss(t, t.constant(a), t.constant(a), 0.2));
    }
}

TEST_CASE("formula-level critic and actor losses") {
    REQUIRE(critic_loss({1.0, 2.0}, {1.0, 2.0}) == 0.0);
    REQUIRE(critic_loss({1.0}, {3.0}) == Catch::Approx(2.0));
    REQUIRE(actor_loss({1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}, 1.0, 0.1) ==
            Catch::Approx(1.3).epsilon(1e-12));
    REQUIRE(actor_loss({0.7, 0.3}, {0.0, 0.0}, {0.0, 0.0}, 0.0, 0.0) ==
            Catch::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("plan encoders: shapes and determinism") {
    WMConfig wc = toy_wm_config();
    Agent agent = toy_agent(wc, 3);
    auto lats = random_latents(5, wc.dz, 7);
    Eigen::RowVectorXd pooled = random_latents(1, wc.de, 8)[0];

    auto pd = agent.expert_encode(lats, pooled);
    REQUIRE(pd.mean.size() == agent.cfg.dp);
    REQUIRE(pd.logvar.size() == agent.cfg.dp);
    auto pd2 = agent.expert_encode(lats, pooled);
    REQUIRE((pd.mean - pd2.mean).cwiseAbs().maxCoeff() == 0.0);

    auto ld = agent.learner_encode(lats[0], pooled);
    REQUIRE(ld.mean.size() == agent.cfg.dp);
    auto ld2 = agent.learner_encode(lats[0], pooled);
    REQUIRE((ld.logvar - ld2.logvar).cwiseAbs().maxCoeff() == 0.0);

    // different sequences produce different means
    auto other = random_latents(5, wc.dz, 9);
    auto pd3 = agent.expert_encode(other, pooled);
    REQUIRE((pd.mean - pd3.mean).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("act contract: determinism, range, stop threshold") {
    WMConfig wc = toy_wm_config();
    Agent agent = toy_agent(wc, 5);
    auto s = random_latents(1, wc.dz, 11)[0];
    auto pooled = random_latents(1, wc.de, 12)[0];
    auto plan = random_latents(1, agent.cfg.dp, 13)[0];

    Action a1 = agent.act(s, pooled, plan);
    Action a2 = agent.act(s, pooled, plan);
    REQUIRE(a1.dx == a2.dx);
    REQUIRE(a1.dy == a2.dy);
    REQUIRE(std::abs(a1.dx) <= 0.5);
    REQUIRE(std::abs(a1.dy) <= 0.5);
    REQUIRE(std::abs(a1.dyaw) <= 0.5);

    // force the stop head high: stop probability > threshold gives is_stop
    agent.ps["actor.stop.b"](0, 0) = 5.0;
    Action stop = agent.act(s, pooled, plan);
    REQUIRE(stop.is_stop);
    REQUIRE(stop.dx == 0.0);
}

TEST_CASE("stop gradient: perturbing targets changes the loss but not the gradient path") {
    Tape t;
    Var v = t.leaf(Mat::Constant(1, 1, 1.0));
    Var target = t.leaf(Mat::Constant(1, 1, 3.0));
    Var err = t.sub(v, t.detach(target));
    Var loss = t.scale(t.square(err), 0.5);
    t.backward(loss);
    REQUIRE(t.scalar(loss) == Catch::Approx(2.0));
    REQUIRE(t.grad_or_zero(target)(0, 0) == 0.0);  // no gradient through sg(.)
    REQUIRE(t.grad_or_zero(v)(0, 0) == Catch::Approx(-2.0));
}

TEST_CASE("ac training step: frozen WM, determinism, reward improvement") {
    WMConfig wc = toy_wm_config();
    WorldModel wm;
    wm.cfg = wc;
    wm.init(17);
    uint64_t wm_sum = wm.parameter_checksum();

    auto lats = random_latents(5, wc.dz, 23);
    auto instr = tokenize_text("head toward the red crate");
    std::vector<std::vector<int>> negs{tokenize_text("turn right then stop")};

    SECTION("wm parameters unchanged after steps and checksum guard works") {
        Agent agent = toy_agent(wc, 29);
        for (int i = 0; i < 5; ++i)
            ac_train_step(agent, wm, wm_sum, lats, instr, negs, uint64_t(i));
        REQUIRE(wm.parameter_checksum() == wm_sum);
        REQUIRE_THROWS(ac_train_step(agent, wm, wm_sum ^ 1, lats, instr, negs, 99));
    }

    SECTION("deterministic per seed") {
        Agent a1 = toy_agent(wc, 29), a2 = toy_agent(wc, 29);
        auto l1 = ac_train_step(a1, wm, wm_sum, lats, instr, negs, 7);
        auto l2 = ac_train_step(a2, wm, wm_sum, lats, instr, negs, 7);
        REQUIRE(l1.total == l2.total);
        REQUIRE(a1.ps.checksum() == a2.ps.checksum());
    }

    SECTION("losses are finite and the target critic moves") {
        Agent agent = toy_agent(wc, 31);
        uint64_t target0 = agent.target_ps.checksum();
        auto l = ac_train_step(agent, wm, wm_sum, lats, instr, negs, 3);
        REQUIRE(std::isfinite(l.total));
        REQUIRE(l.rollout_steps > 0);
        ac_train_step(agent, wm, wm_sum, lats, instr, negs, 4);
        REQUIRE(agent.target_ps.checksum() != target0);
    }
}

TEST_CASE("ac gradcheck: critic and actor paths vs finite differences") {
    WMConfig wc = toy_wm_config();
    wc.k = 1;
    wc.depth = 1;
    WorldModel wm;
    wm.cfg = wc;
    wm.init(37);
    // give the frozen WM nontrivial response so gradients flow through it
    Rng rng(38);
    for (auto& e : wm.ps.entries)
        if (e.name.find("mod.w") != std::string::npos ||
            e.name.find("head.w") != std::string::npos)
            for (int i = 0; i < e.w.rows(); ++i)
                for (int j = 0; j < e.w.cols(); ++j) e.w(i, j) = 0.2 * rng.normal();

    Agent agent = toy_agent(wc, 41);
    agent.cfg.horizon = 2;
    auto lats = random_latents(4, wc.dz, 43);
    auto instr = tokenize_text("go straight then stop");
    std::vector<std::vector<int>> negs{tokenize_text("turn right")};

    auto loss_fn = [&](bool actor_part) {
        return [&, actor_part](ParamStore& p, std::vector<Mat>* grads) {
            Tape t;
            Binder ab(t, p, true);
            Binder wb(t, const_cast<ParamStore&>(wm.ps), false);
            Binder eb(t, const_cast<ParamStore&>(wm.embedder.ps), false);
            Binder tb(t, agent.target_ps, false);
            AcGraph g = ac_build_losses(agent, wm, t, ab, wb, eb, tb, lats, instr, negs, 55);
            Var l = actor_part ? g.actor_total : g.critic_total;
            if (grads) {
                t.backward(l);
                grads->clear();
                for (size_t i = 0; i < p.entries.size(); ++i)
                    grads->push_back(ab.vars[i].valid()
                                         ? t.grad_or_zero(ab.vars[i])
                                         : Mat::Zero(p.entries[i].w.rows(), p.entries[i].w.cols()));
            }
            return t.scalar(l);
        };
    };

    // the critic loss cuts every non-critic path with stop-gradients, so the
    // finite-difference directions must live in critic parameter space
    auto critic_res =
        oracle::gradcheck(agent.ps, loss_fn(false), 20, 61, 1e-5,
                          [](const std::string& n) { return n.rfind("critic.", 0) == 0; });
    INFO("critic rel err " << critic_res.max_rel_err);
    REQUIRE(critic_res.max_rel_err < 1e-4);

    auto actor_res = oracle::gradcheck(agent.ps, loss_fn(true), 20, 62, 1e-5);
    INFO("actor rel err " << actor_res.max_rel_err);
    REQUIRE(actor_res.max_rel_err < 1e-3);
}

TEST_CASE("navigate follows the coupled inference loop") {
    WMConfig wc = toy_wm_config();
    WorldModel wm;
    wm.cfg = wc;
    wm.init(47);
    Agent agent = toy_agent(wc, 53);
    auto instr = tokenize_text("go straight then stop");

    Observation obs;
    obs.height = obs.width = 8;
    obs.pixels.assign(8 * 8 * 3, 0.25);

    SECTION("an actor that always stops makes zero WM calls after step 0") {
        agent.ps["actor.stop.b"](0, 0) = 10.0;
        auto trace = navigate(wm, agent, obs, instr, 6, 5);
        REQUIRE(trace.actions.size() == 1);
        REQUIRE(trace.actions[0].is_stop);
        REQUIRE(trace.wm_calls == 0);
    }

    SECTION("output bounded by T_max and call order alternates imagine/act") {
        agent.ps["actor.stop.b"](0, 0) = -10.0;  // never stop
        auto trace = navigate(wm, agent, obs, instr, 5, 5);
        REQUIRE(trace.actions.size() == 5);
        REQUIRE(trace.wm_calls == 4);
        // step t > 0 consumes the action produced at step t-1
        int imagines = 0;
        for (size_t i = 0; i < trace.call_log.size(); ++i) {
            const auto& rec = trace.call_log[i];
            if (rec.kind == NavStep::imagine) {
                REQUIRE(rec.action_from_step == rec.step - 1);
                // the preceding record must be the act of the previous step
                REQUIRE(i > 0);
                REQUIRE(trace.call_log[i - 1].kind == NavStep::act);
                REQUIRE(trace.call_log[i - 1].step == rec.step - 1);
                ++imagines;
            }
        }
        REQUIRE(imagines == 4);
        REQUIRE(trace.call_log.front().kind == NavStep::act);
    }

    SECTION("deterministic given seed") {
        auto t1 = navigate(wm, agent, obs, instr, 4, 9);
        auto t2 = navigate(wm, agent, obs, instr, 4, 9);
        REQUIRE(t1.actions.size() == t2.actions.size());
        for (size_t i = 0; i < t1.actions.size(); ++i) {
            REQUIRE(t1.actions[i].dx == t2.actions[i].dx);
            REQUIRE(t1.actions[i].dyaw == t2.actions[i].dyaw);
        }
    }
}
