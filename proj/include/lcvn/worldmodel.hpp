#pragma once

#include <deque>
#include <functional>
#include <optional>

#include "lcvn/dataset.hpp"
#include "lcvn/instrembed.hpp"
#include "lcvn/nn.hpp"
#include "lcvn/schedule.hpp"
#include "lcvn/vae.hpp"

namespace lcvn {

struct WMConfig {
    int k = 2;             // context size (frames)
    int dz = 16;           // latent dimension
    int de = 32;           // instruction embedding width
    int width = 48;        // transformer width
    int depth = 2;
    int heads = 4;
    int levels = 64;       // diffusion levels L
    int sampler_steps = 8; // DDIM steps S (<= L)
    int cond_freqs = 4;    // sine-cosine frequencies per scalar
    int max_timeshift = 1;
    double lr = 3e-4;
    int batch = 4;         // trajectories per train step
    uint64_t seed = 0;

    // conditioning ablation switches
    bool use_language = true;
    bool use_action = true;
    bool use_timeshift = true;
    // open question: noise the target jointly with the context (default), or
    // keep the target slot pure-noise-only during training
    bool noise_context_only = false;

    // state space: "latent" (VAE) or "pixel" (pooled patches)
    std::string state_space = "latent";
    int pixel_pool = 8;

    int obs_h = 32, obs_w = 32;
    int vae_hidden = 64;
    double vae_beta = 1e-3;
    double vae_lr = 1e-3;
    int width_multiplier = 1;  // toy stand-in for S/B/L/XL sizes

    int state_dim() const {
        if (state_space == "pixel") return (obs_h / pixel_pool) * (obs_w / pixel_pool) * 3;
        return dz;
    }
    int model_width() const { return width * width_multiplier; }

    void validate() const {
        LCVN_CHECK(k >= 1, "wm: k must be >= 1");
        LCVN_CHECK(sampler_steps >= 1 && sampler_steps <= levels, "wm: need 1 <= S <= L");
        LCVN_CHECK(model_width() % heads == 0, "wm: width must divide heads");
        LCVN_CHECK(state_space == "latent" || state_space == "pixel", "wm: bad state_space");
        if (state_space == "pixel")
            LCVN_CHECK(obs_h % pixel_pool == 0 && obs_w % pixel_pool == 0,
                       "wm: pixel_pool must divide the observation size");
    }
};

// Per-frame conditioning input: the action at the context end, the time shift
// to the target, and the frame's diffusion level.
struct ConditionInput {
    Action action;
    int timeshift = 1;
    int level = 0;
};

// instrumentation record for algorithm-fidelity checks
struct WmCallRecord {
    int step = -1;            // navigation step that issued the call
    Action action;            // action the prediction was conditioned on
};

// Language-conditioned denoising transformer over a (k+1)-slot window of state
// vectors: k context frames plus the target slot. Each block runs causal
// self-attention over slots, cross-attention into instruction tokens, and an
// MLP, all modulated by AdaLN from the per-frame condition embedding.
struct WorldModel {
    WMConfig cfg;
    Vae vae;
    InstructionEmbedder embedder;
    ParamStore ps;  // LDiT parameters
    NoiseSchedule sched;

    void init(uint64_t seed) {
        cfg.validate();
        cfg.seed = seed;
        sched = NoiseSchedule::linear(cfg.levels);
        vae.cfg.input_dim = cfg.obs_h * cfg.obs_w * 3;
        vae.cfg.hidden = cfg.vae_hidden;
        vae.cfg.dz = cfg.dz;
        vae.cfg.beta = cfg.vae_beta;
        vae.init(mix_seed(seed, "vae"));
        embedder.cfg.de = cfg.de;
        embedder.init(mix_seed(seed, "embedder"));

        Rng rng(mix_seed(seed, "ldit-init"));
        int w = cfg.model_width();
        int ds = cfg.state_dim();
        double sw = 1.0 / std::sqrt(double(w));
        ps.add("in.w", ds, w, 1.0 / std::sqrt(double(ds)), rng);
        ps.add_zeros("in.b", 1, w);
        ps.add("pos", cfg.k + 1, w, sw, rng);

        int fdim = 2 * cfg.cond_freqs;  // sincos features per scalar
        ps.add("cond.act.w1", 3 * fdim, w, 1.0 / std::sqrt(double(3 * fdim)), rng);
        ps.add_zeros("cond.act.b1", 1, w);
        ps.add("cond.act.w2", w, w, sw, rng);
        ps.add_zeros("cond.act.b2", 1, w);
        ps.add("cond.ts.w1", fdim, w, 1.0 / std::sqrt(double(fdim)), rng);
        ps.add_zeros("cond.ts.b1", 1, w);
        ps.add("cond.ts.w2", w, w, sw, rng);
        ps.add_zeros("cond.ts.b2", 1, w);
        ps.add("cond.lvl.w1", fdim, w, 1.0 / std::sqrt(double(fdim)), rng);
        ps.add_zeros("cond.lvl.b1", 1, w);
        ps.add("cond.lvl.w2", w, w, sw, rng);
        ps.add_zeros("cond.lvl.b2", 1, w);

        for (int d = 0; d < cfg.depth; ++d) {
            std::string p = "blk" + std::to_string(d);
            add_attention_params(ps, p + ".self", w, rng);
            add_attention_params(ps, p + ".cross", w, rng, -1.0, cfg.de);
            ps.add(p + ".mlp.w1", w, 4 * w, sw, rng);
            ps.add_zeros(p + ".mlp.b1", 1, 4 * w);
            ps.add(p + ".mlp.w2", 4 * w, w, 1.0 / std::sqrt(4.0 * w), rng);
            ps.add_zeros(p + ".mlp.b2", 1, w);
            // AdaLN-zero: modulation projections start at zero
            ps.add_zeros(p + ".mod.w", w, 9 * w);
            ps.add_zeros(p + ".mod.b", 1, 9 * w);
        }
        ps.add_zeros("final.mod.w", cfg.model_width(), 2 * w);
        ps.add_zeros("final.mod.b", 1, 2 * w);
        ps.add_zeros("head.w", w, ds);  // zero-init output head
        ps.add_zeros("head.b", 1, ds);
    }

    uint64_t parameter_checksum() const {
        uint64_t h = ps.checksum();
        h ^= vae.ps.checksum() * 0x9e3779b97f4a7c15ull;
        h ^= embedder.ps.checksum() * 0xc2b2ae3d27d4eb4full;
        return h;
    }

    // ---- state encoding ----

    Eigen::RowVectorXd encode_observation(const Observation& o) const {
        if (cfg.state_space == "pixel") {
            int ph = cfg.obs_h / cfg.pixel_pool, pw = cfg.obs_w / cfg.pixel_pool;
            Eigen::RowVectorXd v(ph * pw * 3);
            int at = 0;
            for (int pr = 0; pr < ph; ++pr)
                for (int pc = 0; pc < pw; ++pc)
                    for (int ch = 0; ch < 3; ++ch) {
                        double sum = 0;
                        for (int r = 0; r < cfg.pixel_pool; ++r)
                            for (int c = 0; c < cfg.pixel_pool; ++c)
                                sum += o.at(pr * cfg.pixel_pool + r, pc * cfg.pixel_pool + c, ch);
                        v(at++) = sum / double(cfg.pixel_pool * cfg.pixel_pool);
                    }
            return v;
        }
        return vae.encode_mean(observation_to_row(o));
    }

    Observation decode_state(const Eigen::RowVectorXd& s) const {
        if (cfg.state_space == "pixel") {
            int ph = cfg.obs_h / cfg.pixel_pool, pw = cfg.obs_w / cfg.pixel_pool;
            Observation o;
            o.height = cfg.obs_h;
            o.width = cfg.obs_w;
            o.pixels.assign(size_t(cfg.obs_h * cfg.obs_w * 3), 0.0);
            int at = 0;
            for (int pr = 0; pr < ph; ++pr)
                for (int pc = 0; pc < pw; ++pc)
                    for (int ch = 0; ch < 3; ++ch) {
                        double v = std::min(1.0, std::max(0.0, s(at++)));
                        for (int r = 0; r < cfg.pixel_pool; ++r)
                            for (int c = 0; c < cfg.pixel_pool; ++c)
                                o.at(pr * cfg.pixel_pool + r, pc * cfg.pixel_pool + c, ch) = v;
                    }
            return o;
        }
        return row_to_observation(vae.decode_mean(s), cfg.obs_h, cfg.obs_w);
    }

    // repeat-earliest padding: for t < k the window is [s_0, ..., s_0, s_1, ..., s_t]
    static std::vector<Eigen::RowVectorXd> pad_context(
        const std::vector<Eigen::RowVectorXd>& history, int k) {
        LCVN_CHECK(!history.empty(), "pad_context: empty history");
        std::vector<Eigen::RowVectorXd> ctx;
        ctx.reserve(size_t(k));
        int missing = k - int(history.size());
        for (int i = 0; i < missing; ++i) ctx.push_back(history.front());
        int start = std::max(0, int(history.size()) - k);
        for (size_t i = size_t(start); i < history.size(); ++i) ctx.push_back(history[i]);
        return ctx;
    }

    // ---- conditioning ----

    Var scalar_row(Tape& t, std::initializer_list<double> vals) const {
        Mat m(1, long(vals.size()));
        int i = 0;
        for (double v : vals) m(0, i++) = v;
        return t.constant(m);
    }

    // e_cond = e_action + e_timeshift + e_level, each sincos featurized then a
    // 2-layer map; returns one row (the caller stacks rows per frame)
    Var embed_condition(Tape& t, Binder& b, Var action_row, const ConditionInput& c) const {
        int w = cfg.model_width();
        Var total = t.constant(Mat::Zero(1, w));
        if (cfg.use_action) {
            Var f = sincos_features(t, action_row, cfg.cond_freqs);
            Var h = t.silu(linear(t, f, b("cond.act.w1"), b("cond.act.b1")));
            total = t.add(total, linear(t, h, b("cond.act.w2"), b("cond.act.b2")));
        }
        if (cfg.use_timeshift) {
            Var f = sincos_features(t, scalar_row(t, {double(c.timeshift) * 0.1}), cfg.cond_freqs);
            Var h = t.silu(linear(t, f, b("cond.ts.w1"), b("cond.ts.b1")));
            total = t.add(total, linear(t, h, b("cond.ts.w2"), b("cond.ts.b2")));
        }
        {
            Var f = sincos_features(
                t, scalar_row(t, {double(c.level) / double(cfg.levels)}), cfg.cond_freqs);
            Var h = t.silu(linear(t, f, b("cond.lvl.w1"), b("cond.lvl.b1")));
            total = t.add(total, linear(t, h, b("cond.lvl.w2"), b("cond.lvl.b2")));
        }
        return total;
    }

    Var action_row_const(Tape& t, const Action& a) const {
        // the stop action conditions the model as the null (zero) action
        return scalar_row(t, {a.is_stop ? 0.0 : a.dx, a.is_stop ? 0.0 : a.dy,
                              a.is_stop ? 0.0 : a.dyaw});
    }

    // ---- LDiT forward ----
    // frames: (k+1) x state_dim, already noised per frame; cond rows aligned.
    // Returns per-frame epsilon predictions, (k+1) x state_dim.
    Var ldit_forward(Tape& t, Binder& b, Var frames, Var instr_tokens,
                     const std::vector<Var>& cond_rows) const {
        int n = int(t.val(frames).rows());
        LCVN_CHECK(n == cfg.k + 1, "ldit_forward: expected k+1 frames");
        LCVN_CHECK(int(cond_rows.size()) == n, "ldit_forward: cond row count mismatch");
        int w = cfg.model_width();

        Var x = linear(t, frames, b("in.w"), b("in.b"));
        x = t.add(x, b("pos"));
        Var cond = t.concat_rows(cond_rows);  // n x w

        auto chunk = [&](Var mod, int i) { return t.cols(mod, i * w, w); };
        auto modulate = [&](Var h, Var gamma, Var beta) {
            return t.add(t.mul(h, t.add_scalar(gamma, 1.0)), beta);
        };

        for (int d = 0; d < cfg.depth; ++d) {
            std::string p = "blk" + std::to_string(d);
            Var mod = linear(t, t.silu(cond), b(p + ".mod.w"), b(p + ".mod.b"));  // n x 9w
            Var h1 = modulate(t.layer_norm_rows(x), chunk(mod, 0), chunk(mod, 1));
            Var sa = attention(t, h1, h1, bind_attention(b, p + ".self"), cfg.heads, true);
            x = t.add(x, t.mul(chunk(mod, 2), sa));
            if (cfg.use_language && instr_tokens.valid()) {
                Var h2 = modulate(t.layer_norm_rows(x), chunk(mod, 3), chunk(mod, 4));
                Var ca = attention(t, h2, instr_tokens, bind_attention(b, p + ".cross"),
                                   cfg.heads, false);
                x = t.add(x, t.mul(chunk(mod, 5), ca));
            }
            Var h3 = modulate(t.layer_norm_rows(x), chunk(mod, 6), chunk(mod, 7));
            Var m1 = t.silu(linear(t, h3, b(p + ".mlp.w1"), b(p + ".mlp.b1")));
            Var m2 = linear(t, m1, b(p + ".mlp.w2"), b(p + ".mlp.b2"));
            x = t.add(x, t.mul(chunk(mod, 8), m2));
        }
        Var fmod = linear(t, t.silu(cond), b("final.mod.w"), b("final.mod.b"));
        Var xf = modulate(t.layer_norm_rows(x), chunk(fmod, 0), chunk(fmod, 1));
        return linear(t, xf, b("head.w"), b("head.b"));
    }

    // ---- training ----

    // diffusion-forcing loss with explicit per-frame levels and noise draws;
    // levels/eps have k+1 entries (context frames then target), instr is the
    // already-embedded instruction token matrix (or invalid)
    Var df_loss_forced(Tape& t, Binder& ldit_b, const std::vector<Eigen::RowVectorXd>& context,
                       const Eigen::RowVectorXd& target, const Action& action, int timeshift,
                       Var instr, const std::vector<int>& levels,
                       const std::vector<Mat>& eps) const {
        LCVN_CHECK(int(context.size()) == cfg.k, "df_loss: bad context length");
        LCVN_CHECK(int(levels.size()) == cfg.k + 1 && eps.size() == levels.size(),
                   "df_loss: need k+1 levels and noise draws");
        std::vector<Var> frames, conds;
        Var action_row = action_row_const(t, action);
        for (int m = 0; m <= cfg.k; ++m) {
            const Eigen::RowVectorXd& clean_row = (m < cfg.k) ? context[size_t(m)] : target;
            Var clean = t.constant(Mat(clean_row));
            frames.push_back(
                apply_noise_var(t, clean, sched.at(levels[size_t(m)]), t.constant(eps[size_t(m)])));
            conds.push_back(embed_condition(t, ldit_b, action_row,
                                            ConditionInput{action, timeshift, levels[size_t(m)]}));
        }
        Var eps_hat = ldit_forward(t, ldit_b, t.concat_rows(frames), instr, conds);
        Var tgt_pred = t.rows(eps_hat, cfg.k, 1);
        return t.mean_all(t.square(t.sub(tgt_pred, t.constant(eps[size_t(cfg.k)]))));
    }

    // random-draw wrapper used by training: independent context levels in
    // [0, L]; the target level is uniform in [1, L], or pinned to L when
    // noise_context_only is set (prediction from context alone)
    Var df_loss_one(Tape& t, Binder& ldit_b, const std::vector<Eigen::RowVectorXd>& context,
                    const Eigen::RowVectorXd& target, const Action& action, int timeshift,
                    Var instr, Rng& rng) const {
        int ds = cfg.state_dim();
        std::vector<int> levels;
        std::vector<Mat> eps;
        for (int m = 0; m <= cfg.k; ++m) {
            levels.push_back(m < cfg.k ? rng.uniform_int(0, cfg.levels)
                                       : (cfg.noise_context_only ? cfg.levels
                                                                 : rng.uniform_int(1, cfg.levels)));
            Mat e(1, ds);
            for (int j = 0; j < ds; ++j) e(0, j) = rng.normal();
            eps.push_back(std::move(e));
        }
        return df_loss_forced(t, ldit_b, context, target, action, timeshift, instr, levels, eps);
    }

    // One optimizer step over a batch of trajectories, following the phase-1
    // recipe: every position t = k-1 .. n-ts contributes a denoising term.
    // Trajectories shorter than k+1 frames are skipped with a warning.
    double train_step(const std::vector<const Trajectory*>& batch,
                      const std::vector<std::vector<Eigen::RowVectorXd>>& latents,
                      InstructionStyle style, uint64_t step_seed,
                      std::function<void(const std::string&)> warn = {}) {
        Tape t;
        Binder ldit_b(t, ps);
        Binder emb_b(t, embedder.ps);
        Rng rng(mix_seed(step_seed, "wm-step"));

        std::vector<Var> terms;
        for (size_t bi = 0; bi < batch.size(); ++bi) {
            const Trajectory& traj = *batch[bi];
            const auto& lat = latents[bi];
            int n = traj.n_steps();
            int ts = cfg.max_timeshift > 1 ? rng.uniform_int(1, cfg.max_timeshift) : 1;
            if (int(lat.size()) < cfg.k + ts) {
                if (warn) warn("wm: skipping trajectory " + traj.id + " shorter than k+1 frames");
                continue;
            }
            Var instr;
            if (cfg.use_language)
                instr = embedder.embed(t, emb_b, traj.instruction(style).tokens);
            for (int pos = cfg.k - 1; pos + ts <= n; ++pos) {
                std::vector<Eigen::RowVectorXd> ctx(lat.begin() + (pos - cfg.k + 1),
                                                    lat.begin() + pos + 1);
                terms.push_back(df_loss_one(t, ldit_b, ctx, lat[size_t(pos + ts)],
                                            traj.actions[size_t(pos)], ts, instr, rng));
            }
        }
        if (terms.empty()) return 0.0;
        Var total = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) total = t.add(total, terms[i]);
        Var loss = t.scale(total, 1.0 / double(terms.size()));
        double lv = t.scalar(loss);
        LCVN_CHECK(std::isfinite(lv), "wm: non-finite loss, aborting");
        t.backward(loss);
        AdamConfig adam;
        adam.lr = cfg.lr;
        adam_update(ps, t, ldit_b, adam);
        if (cfg.use_language) {
            ParamStore& eps_store = embedder.ps;
            adam_update(eps_store, t, emb_b, adam);
        }
        return lv;
    }

    // ---- sampling ----

    std::vector<int> ddim_levels(int steps) const {
        std::vector<int> lv;
        for (int j = steps; j >= 1; --j)
            lv.push_back(std::max(1, int(std::llround(double(cfg.levels) * j / steps))));
        lv.push_back(0);
        return lv;  // descending, e.g. [L, ..., 0]
    }

    // Deterministic DDIM from pure noise at the target slot; context frames
    // held at level 0. Tape-based so gradients can flow into the action
    // conditioning during phase-2 rollouts (the start noise stays fixed).
    Var predict_next_tape(Tape& t, Binder& ldit_b, const std::vector<Var>& context_hist,
                          Var action_row, const Action& action, int timeshift, Var instr_tokens,
                          int steps, Rng& rng) const {
        LCVN_CHECK(!context_hist.empty(), "predict_next: empty context");
        int ds = cfg.state_dim();

        // repeat-earliest padding on tape vars
        std::vector<Var> ctx;
        int missing = cfg.k - int(context_hist.size());
        for (int i = 0; i < missing; ++i) ctx.push_back(context_hist.front());
        int start = std::max(0, int(context_hist.size()) - cfg.k);
        for (size_t i = size_t(start); i < context_hist.size(); ++i) ctx.push_back(context_hist[i]);

        Mat noise(1, ds);
        for (int j = 0; j < ds; ++j) noise(0, j) = rng.normal();
        Var x = t.constant(noise);

        auto levels = ddim_levels(steps);
        for (size_t si = 0; si + 1 < levels.size(); ++si) {
            int lv = levels[si], lv_next = levels[si + 1];
            std::vector<Var> frames = ctx;
            frames.push_back(x);
            std::vector<Var> conds;
            for (int m = 0; m < cfg.k; ++m)
                conds.push_back(
                    embed_condition(t, ldit_b, action_row, ConditionInput{action, timeshift, 0}));
            conds.push_back(
                embed_condition(t, ldit_b, action_row, ConditionInput{action, timeshift, lv}));
            Var eps_hat =
                t.rows(ldit_forward(t, ldit_b, t.concat_rows(frames), instr_tokens, conds),
                       cfg.k, 1);
            double ab = sched.at(lv), ab_next = sched.at(lv_next);
            // x0 = (x - sqrt(1-ab) eps) / sqrt(ab); x <- sqrt(ab') x0 + sqrt(1-ab') eps
            Var x0 = t.scale(t.sub(x, t.scale(eps_hat, std::sqrt(1.0 - ab))),
                             1.0 / std::sqrt(ab));
            x = t.add(t.scale(x0, std::sqrt(ab_next)),
                      t.scale(eps_hat, std::sqrt(1.0 - ab_next)));
        }
        return x;
    }

    // plain-matrix convenience for inference; deterministic given seed
    Eigen::RowVectorXd predict_next_latent(const std::vector<Eigen::RowVectorXd>& history,
                                           const Action& action,
                                           const std::vector<int>& instr_tokens, int timeshift,
                                           int steps, uint64_t seed) const {
        Tape t;
        Binder ldit_b(t, const_cast<ParamStore&>(ps), false);
        Binder emb_b(t, const_cast<ParamStore&>(embedder.ps), false);
        std::vector<Var> ctx;
        for (const auto& h : history) ctx.push_back(t.constant(Mat(h)));
        Var instr;
        if (cfg.use_language)
            instr = embedder.embed(t, emb_b, instr_tokens);
        Rng rng(mix_seed(seed, "wm-sample"));
        Var out = predict_next_tape(t, ldit_b, ctx, action_row_const(t, action), action,
                                    timeshift, instr, steps, rng);
        return t.val(out).row(0);
    }

    // recursive open-loop latent rollout; history window kept at size k
    std::vector<Eigen::RowVectorXd> rollout_latents(const Eigen::RowVectorXd& start,
                                                    const std::vector<Action>& actions,
                                                    const std::vector<int>& instr_tokens,
                                                    int timeshift, int steps, uint64_t seed,
                                                    std::vector<WmCallRecord>* call_log = nullptr,
                                                    int log_step_base = 0) const {
        LCVN_CHECK(!actions.empty(), "rollout_latents: empty action sequence");
        std::vector<Eigen::RowVectorXd> history{start}, out;
        for (size_t i = 0; i < actions.size(); ++i) {
            if (call_log) call_log->push_back({log_step_base + int(i), actions[i]});
            auto next = predict_next_latent(history, actions[i], instr_tokens, timeshift, steps,
                                            mix_seed(seed, "rollout", i));
            out.push_back(next);
            history.push_back(next);
            if (int(history.size()) > cfg.k) history.erase(history.begin());
        }
        return out;
    }

    // ---- persistence ----

    void save(const std::string& path, const std::string& config_echo) const {
        Checkpoint ck;
        ck.meta["kind"] = "worldmodel";
        ck.meta["config"] = config_echo;
        ck.meta["param_checksum"] = hex_encode_u64(parameter_checksum());
        ck.add_section("ldit", ps);
        ck.add_section("vae", vae.ps);
        ck.add_section("embedder", embedder.ps);
        ck.save(path);
    }

    void load_params(const Checkpoint& ck) {
        auto copy_into = [](const ParamStore& src, ParamStore& dst) {
            LCVN_CHECK(src.entries.size() == dst.entries.size(),
                       "checkpoint parameter layout mismatch");
            for (size_t i = 0; i < src.entries.size(); ++i) {
                LCVN_CHECK(src.entries[i].name == dst.entries[i].name,
                           "checkpoint parameter name mismatch: " + src.entries[i].name);
                dst.entries[i].w = src.entries[i].w;
                dst.entries[i].m = src.entries[i].m;
                dst.entries[i].v = src.entries[i].v;
            }
            dst.adam_step = src.adam_step;
        };
        copy_into(ck.section("ldit"), ps);
        copy_into(ck.section("vae"), vae.ps);
        copy_into(ck.section("embedder"), embedder.ps);
        LCVN_CHECK(ck.meta_at("param_checksum") == hex_encode_u64(parameter_checksum()),
                   "worldmodel checkpoint checksum mismatch");
    }
};

}  // namespace lcvn
