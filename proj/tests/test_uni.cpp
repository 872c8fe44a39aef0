#include <catch2/catch_amalgamated.hpp>

#include "lcvn/uni.hpp"
#include "oracles.hpp"

using namespace lcvn;

namespace {

struct UniFixture {
    DatasetConfig dcfg;
    Dataset ds;
    TokenSpace ts;
    Codebook cb;
    UniConfig cfg;
    UniModel model;

    explicit UniFixture(uint64_t seed = 3, int obs = 16, int m = 4) {
        dcfg.seed = seed;
        dcfg.n_train = 6;
        dcfg.n_val_seen = 2;
        dcfg.n_val_unseen = 2;
        dcfg.n_test = 2;
        dcfg.n_layouts_train = 2;
        dcfg.n_layouts_unseen = 2;
        dcfg.long_fraction = 0.0;
        dcfg.traj.render.height = dcfg.traj.render.width = obs;
        ds = build_dataset(dcfg);

        cfg.k = 2;
        cfg.width = 32;
        cfg.depth = 2;
        cfg.heads = 2;
        cfg.obs_h = cfg.obs_w = obs;
        cfg.m = m;
        cfg.patch = UniConfig::patch_for_m(obs, m);
        cfg.budget = 128;

        std::vector<Observation> obs_set;
        for (const auto& t : ds.split("train"))
            for (const auto& o : t.observations) obs_set.push_back(o);
        cb = train_codebook(obs_set, 16, cfg.patch, seed);
        ts = TokenSpace::build(BinSpec{}, Vocabulary::instance().size(), cb.k);
        model.cfg = cfg;
        model.init(seed, ts, cb);
    }
};

}  // namespace

TEST_CASE("uni config budget arithmetic mirrors the k-resolution trade") {
    UniConfig c;
    c.budget = 128;
    for (int k : {1, 2}) {
        c.k = k;
        c.m = UniConfig::default_m_for_k(k);
        REQUIRE(c.m == 16);
        c.patch = UniConfig::patch_for_m(32, c.m);
        REQUIRE_NOTHROW(c.validate());
    }
    // k=4 at m=16 must overflow the budget...
    c.k = 4;
    c.m = 16;
    c.patch = UniConfig::patch_for_m(32, c.m);
    REQUIRE_THROWS_WITH(c.validate(), Catch::Matchers::ContainsSubstring("overflow"));
    // ...and the default trade drops to m=4
    c.m = UniConfig::default_m_for_k(4);
    REQUIRE(c.m == 4);
    c.patch = UniConfig::patch_for_m(32, c.m);
    REQUIRE_NOTHROW(c.validate());
}

TEST_CASE("build_sample layout and target masks") {
    UniFixture fx;
    const auto& traj = fx.ds.split("train")[0];

    SECTION("non-stop step: 3 action targets + m observation targets") {
        auto seq = build_sample(traj, 0, InstructionStyle::landmark, fx.ts, fx.cb, fx.cfg);
        REQUIRE(seq.n_action_targets == 3);
        REQUIRE(seq.n_obs_targets == fx.cfg.m);
        REQUIRE_FALSE(seq.stop_sample);
        REQUIRE(int(seq.true_patches.size()) == fx.cfg.m);
        // action tokens live in their dimension ranges
        for (int d = 0; d < 3; ++d)
            REQUIRE(fx.ts.is_action_dim(seq.tokens[size_t(seq.action_target_begin + d)], d));
        for (int j = 0; j < seq.n_obs_targets; ++j)
            REQUIRE(fx.ts.is_visual(seq.tokens[size_t(seq.obs_target_begin + j)]));
    }

    SECTION("final step: single stop target, no observation targets") {
        auto seq = build_sample(traj, traj.n_steps() - 1, InstructionStyle::landmark, fx.ts,
                                fx.cb, fx.cfg);
        REQUIRE(seq.stop_sample);
        REQUIRE(seq.n_action_targets == 1);
        REQUIRE(seq.n_obs_targets == 0);
        REQUIRE(seq.tokens[size_t(seq.action_target_begin)] == fx.ts.stop_token);
    }

    SECTION("deterministic") {
        auto a = build_sample(traj, 1, InstructionStyle::concise, fx.ts, fx.cb, fx.cfg);
        auto b = build_sample(traj, 1, InstructionStyle::concise, fx.ts, fx.cb, fx.cfg);
        REQUIRE(a.tokens == b.tokens);
    }
}

TEST_CASE("uni forward: causality, shape, fast-path equivalence") {
    UniFixture fx;
    const auto& traj = fx.ds.split("train")[0];
    auto seq = build_sample(traj, 0, InstructionStyle::concise, fx.ts, fx.cb, fx.cfg);

    Tape t;
    Binder b(t, fx.model.ps, false);
    Var logits = fx.model.forward(t, b, seq.tokens);
    REQUIRE(int(t.val(logits).rows()) == int(seq.tokens.size()));
    REQUIRE(int(t.val(logits).cols()) == fx.ts.total);

    SECTION("fast forward equals the tape forward") {
        Mat fast = fx.model.forward_fast(seq.tokens);
        double dev = (fast - t.val(logits)).cwiseAbs().maxCoeff();
        REQUIRE(dev < 1e-12);
    }

    SECTION("perturbing a later token changes no earlier logits") {
        Rng rng(9);
        Mat base = fx.model.forward_fast(seq.tokens);
        for (int trial = 0; trial < 20; ++trial) {
            auto mutated = seq.tokens;
            int j = 1 + int(rng.uniform_index(mutated.size() - 1));
            mutated[size_t(j)] = fx.ts.visual_token(int(rng.uniform_index(size_t(fx.cb.k))));
            Mat out = fx.model.forward_fast(mutated);
            for (int i = 0; i < j; ++i)
                REQUIRE((out.row(i) - base.row(i)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("plan loss: restricted normalization and worked values") {
    UniFixture fx;
    const auto& traj = fx.ds.split("train")[0];
    auto seq = build_sample(traj, 0, InstructionStyle::concise, fx.ts, fx.cb, fx.cfg);
    int L = int(seq.tokens.size());

    SECTION("uniform logits over the 101-bin ranges give ln(101)") {
        Tape t;
        Var logits = t.constant(Mat::Zero(L, fx.ts.total));
        double v = t.scalar(plan_loss(t, logits, seq, fx.ts));
        REQUIRE(v == Catch::Approx(std::log(101.0)).margin(1e-9));
    }

    SECTION("one-hot correct logits give zero") {
        Mat m = Mat::Zero(L, fx.ts.total);
        for (int d = 0; d < 3; ++d) {
            int pos = seq.action_target_begin + d;
            m(pos - 1, seq.tokens[size_t(pos)]) = 1e4;
        }
        Tape t;
        double v = t.scalar(plan_loss(t, t.constant(m), seq, fx.ts));
        REQUIRE(v == Catch::Approx(0.0).margin(1e-9));
    }

    SECTION("stop sample reduces to a single cross-entropy over {stop} U Bx") {
        auto stop_seq = build_sample(traj, traj.n_steps() - 1, InstructionStyle::concise, fx.ts,
                                     fx.cb, fx.cfg);
        Tape t;
        Var logits = t.constant(Mat::Zero(int(stop_seq.tokens.size()), fx.ts.total));
        double v = t.scalar(plan_loss(t, logits, stop_seq, fx.ts));
        REQUIRE(v == Catch::Approx(std::log(102.0)).margin(1e-9));
    }

    SECTION("target token outside its range is an error") {
        auto bad = seq;
        bad.tokens[size_t(bad.action_target_begin)] = fx.ts.action_begin[1];  // y token in x slot
        Tape t;
        Var logits = t.constant(Mat::Zero(L, fx.ts.total));
        REQUIRE_THROWS(plan_loss(t, logits, bad, fx.ts));
    }
}

TEST_CASE("imagine loss: worked values and nonnegativity") {
    // two-entry codebook, u = c1, uniform prediction -> 0.5 |c1 - c2|^2
    Codebook cb;
    cb.k = 2;
    cb.dim = 3;
    cb.patch = 1;
    cb.grid_h = cb.grid_w = 1;
    cb.entries = {{0.0, 0.0, 0.0}, {1.0, 2.0, 0.0}};
    TokenSpace ts = TokenSpace::build(BinSpec{}, 8, 2);

    UniSequence seq;
    seq.tokens = {ts.bos, ts.visual_token(0)};
    seq.tags = {TokenTag::control, TokenTag::visual};
    seq.obs_target_begin = 1;
    seq.n_obs_targets = 1;
    seq.true_patches = {cb.entries[0]};

    Tape t;
    Var logits = t.constant(Mat::Zero(2, ts.total));  // uniform over the visual range
    double v = t.scalar(imagine_loss(t, logits, seq, ts, cb));
    REQUIRE(v == Catch::Approx(0.5 * 5.0).epsilon(1e-12));

    SECTION("one-hot on the matching entry gives zero") {
        Mat m = Mat::Zero(2, ts.total);
        m(0, ts.visual_token(0)) = 1e5;
        Tape t2;
        REQUIRE(t2.scalar(imagine_loss(t2, t2.constant(m), seq, ts, cb)) ==
                Catch::Approx(0.0).margin(1e-9));
    }

    SECTION("random logits stay nonnegative") {
        Rng rng(5);
        for (int i = 0; i < 10; ++i) {
            Mat m(2, ts.total);
            for (int r = 0; r < m.rows(); ++r)
                for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.normal();
            Tape t3;
            REQUIRE(t3.scalar(imagine_loss(t3, t3.constant(m), seq, ts, cb)) >= 0.0);
        }
    }
}

TEST_CASE("joint loss composition") {
    Tape t;
    Var p = t.constant(Mat::Constant(1, 1, 2.0));
    Var i = t.constant(Mat::Constant(1, 1, 3.0));
    REQUIRE(t.scalar(joint_loss(t, p, i, 1.0)) == 5.0);
    REQUIRE(t.scalar(joint_loss(t, p, i, 0.5)) == 3.5);
    REQUIRE(t.scalar(joint_loss(t, p, i, 0.0)) == 2.0);
}

TEST_CASE("uni joint-loss gradient matches finite differences") {
    UniFixture fx;
    const auto& traj = fx.ds.split("train")[0];
    auto seq = build_sample(traj, 0, InstructionStyle::concise, fx.ts, fx.cb, fx.cfg);
    auto loss = [&](ParamStore& p, std::vector<Mat>* grads) {
        Tape t;
        Binder b(t, p, true);
        Var logits = fx.model.forward(t, b, seq.tokens);
        Var l = joint_loss(t, plan_loss(t, logits, seq, fx.ts),
                           imagine_loss(t, logits, seq, fx.ts, fx.cb), 1.0);
        if (grads) {
            t.backward(l);
            grads->clear();
            for (size_t i = 0; i < p.entries.size(); ++i)
                grads->push_back(b.vars[i].valid()
                                     ? t.grad_or_zero(b.vars[i])
                                     : Mat::Zero(p.entries[i].w.rows(), p.entries[i].w.cols()));
        }
        return t.scalar(l);
    };
    auto res = oracle::gradcheck(fx.model.ps, loss, 20, 77, 1e-5);
    INFO("rel err " << res.max_rel_err);
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("uni training: determinism, frozen tokenizers, memorization") {
    UniFixture fx;
    std::vector<UniSequence> batch;
    for (const auto& traj : fx.ds.split("train"))
        for (int t = 0; t < std::min(2, traj.n_steps()); ++t)
            batch.push_back(build_sample(traj, t, InstructionStyle::landmark, fx.ts, fx.cb, fx.cfg));

    SECTION("deterministic per seed") {
        UniFixture fx2;
        auto l1 = uni_train_step(fx.model, batch, 3, 0);
        auto l2 = uni_train_step(fx2.model, batch, 3, 0);
        REQUIRE(l1.total == l2.total);
        REQUIRE(fx.model.ps.checksum() == fx2.model.ps.checksum());
    }

    SECTION("tokenizer freeze guard") {
        fx.model.cb.entries[0][0] += 1.0;
        REQUIRE_THROWS(uni_train_step(fx.model, batch, 3, 0));
    }

    SECTION("loss halves on a memorization set; tokenizers unchanged") {
        uint64_t cb_sum = fx.model.cb.checksum();
        std::vector<UniSequence> memo(batch.begin(), batch.begin() + 10);
        double initial = 0, final_ = 0;
        for (int step = 0; step < 300; ++step) {
            auto l = uni_train_step(fx.model, memo, uint64_t(step), step);
            if (step == 0) initial = l.total;
            final_ = l.total;
        }
        INFO("initial " << initial << " final " << final_);
        REQUIRE(final_ < 0.5 * initial);
        REQUIRE(fx.model.cb.checksum() == cb_sum);

        SECTION("memorized rollout matches the ground-truth first-step bins") {
            const auto& traj = fx.ds.split("train")[0];
            auto trace = uni_rollout(fx.model, traj.observations[0],
                                     traj.instruction(InstructionStyle::landmark).tokens, 8);
            REQUIRE_FALSE(trace.actions.empty());
            auto want = action_to_bins(traj.actions[0], fx.ts);
            auto got = action_to_bins(trace.actions[0], fx.ts);
            REQUIRE(got == want);
            REQUIRE(trace.ground_truth_reads_after_start == 0);
        }
    }
}

TEST_CASE("masked decoding always lands in legal ranges, even with random weights") {
    UniFixture fx;
    const auto& traj = fx.ds.split("train")[0];
    auto start_tokens = obs_tokens(traj.observations[0], fx.cb, fx.ts);
    auto res = uni_infer_step(fx.model, {start_tokens}, zero_action_bins(fx.ts),
                              traj.instruction(InstructionStyle::concise).tokens, start_tokens);
    if (!res.action.is_stop) {
        REQUIRE(res.obs_token_ids.size() == size_t(fx.cfg.m));
        for (int v : res.obs_token_ids) REQUIRE(fx.ts.is_visual(v));
        REQUIRE(std::abs(res.action.dx) <= 0.5);
    } else {
        REQUIRE(res.obs_token_ids.empty());
    }
}

TEST_CASE("uni rollout stays within T_max and interleave mode alternates") {
    UniFixture fx;
    const auto& traj = fx.ds.split("train")[0];
    auto trace = uni_rollout(fx.model, traj.observations[0],
                             traj.instruction(InstructionStyle::concise).tokens, 3);
    REQUIRE(trace.actions.size() <= 3);

    // interleave: even steps optimize plan only, odd steps imagine only
    fx.model.cfg.interleave = true;
    std::vector<UniSequence> batch{
        build_sample(traj, 0, InstructionStyle::concise, fx.ts, fx.cb, fx.cfg)};
    auto even = uni_train_step(fx.model, batch, 0, 0);
    auto odd = uni_train_step(fx.model, batch, 1, 1);
    REQUIRE(std::isfinite(even.total));
    REQUIRE(std::isfinite(odd.total));
}

TEST_CASE("uni checkpoint round trip") {
    UniFixture fx;
    fx.model.save("uni_test.ckpt", "toy");
    Checkpoint ck = Checkpoint::load("uni_test.ckpt");
    Codebook cb2 = UniModel::codebook_from_checkpoint(ck);
    REQUIRE(cb2.checksum() == fx.cb.checksum());
    UniModel m2;
    m2.cfg = fx.cfg;
    m2.init(99, fx.ts, cb2);
    m2.load_params(ck);
    REQUIRE(m2.ps.checksum() == fx.model.ps.checksum());
    std::remove("uni_test.ckpt");
}
