#pragma once

#include "lcvn/worldmodel.hpp"

namespace lcvn {

// ---- plan distributions and the formula-level operations ----

struct PlanDistribution {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd logvar;
};

// closed-form D_KL(p || q) for diagonal Gaussians
inline double kl_gaussians(const PlanDistribution& p, const PlanDistribution& q) {
    LCVN_CHECK(p.mean.size() == q.mean.size() && p.logvar.size() == q.logvar.size(),
               "kl_gaussians: dimension mismatch");
    double kl = 0.0;
    for (int i = 0; i < p.mean.size(); ++i) {
        double lp = p.logvar(i), lq = q.logvar(i);
        double md = q.mean(i) - p.mean(i);
        kl += 0.5 * (std::exp(lp - lq) + md * md / std::exp(lq) - 1.0 + lq - lp);
    }
    return kl;
}

struct PlanVars {
    Var mean, logvar;
};

inline Var kl_gaussians_var(Tape& t, const PlanVars& p, const PlanVars& q) {
    Var lp = p.logvar, lq = q.logvar;
    Var ratio = t.exp_(t.sub(lp, lq));
    Var md2 = t.square(t.sub(q.mean, p.mean));
    Var term = t.add(t.add(ratio, t.div(md2, t.exp_(lq))), t.sub(lq, lp));
    return t.scale(t.add_scalar(t.sum_all(term), -double(t.val(lp).size())), 0.5);
}

// Eq.-5-style alignment score: dot(a, b) / max(|a|, |b|)^2.
// Both zero counts as perfect agreement; exactly one zero scores 0.
inline double intrinsic_reward(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    LCVN_CHECK(a.size() == b.size(), "intrinsic_reward: dimension mismatch");
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 && nb == 0.0) return 1.0;
    if (na == 0.0 || nb == 0.0) return 0.0;
    double m = std::max(na, nb);
    return a.dot(b.transpose()) / (m * m);
}

inline Var intrinsic_reward_var(Tape& t, Var a, Var b) {
    Var dot = t.sum_all(t.mul(a, b));
    Var na2 = t.sum_all(t.square(a));
    Var nb2 = t.sum_all(t.square(b));
    // max by value; subgradient follows the attained branch
    Var denom = t.scalar(na2) >= t.scalar(nb2) ? na2 : nb2;
    return t.div(dot, denom);
}

// V^lambda_k = r_k + gamma [ (1 - lambda) v_{k+1} + lambda V^lambda_{k+1} ],
// bootstrapped with the final value.
inline std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                          const std::vector<double>& values, double gamma,
                                          double lambda) {
    LCVN_CHECK(values.size() == rewards.size() + 1, "lambda_returns: need len(values)=len(r)+1");
    std::vector<double> out(rewards.size());
    double next = values.back();
    for (int k = int(rewards.size()) - 1; k >= 0; --k) {
        out[size_t(k)] =
            rewards[size_t(k)] + gamma * ((1.0 - lambda) * values[size_t(k) + 1] + lambda * next);
        next = out[size_t(k)];
    }
    return out;
}

inline std::vector<Var> lambda_returns_var(Tape& t, const std::vector<Var>& rewards,
                                           const std::vector<Var>& values, double gamma,
                                           double lambda) {
    LCVN_CHECK(values.size() == rewards.size() + 1, "lambda_returns: need len(values)=len(r)+1");
    std::vector<Var> out(rewards.size());
    Var next = values.back();
    for (int k = int(rewards.size()) - 1; k >= 0; --k) {
        Var mix = t.add(t.scale(values[size_t(k) + 1], (1.0 - lambda) * gamma),
                        t.scale(next, lambda * gamma));
        out[size_t(k)] = t.add(rewards[size_t(k)], mix);
        next = out[size_t(k)];
    }
    return out;
}

// Symmetric margin-contrastive alignment over a batch of matched pairs:
// mean over matched pairs of (1 - cos) plus mean over in-batch mismatched
// pairs of max(0, cos - margin). Rows of A pair with rows of B by index.
inline Var instruction_alignment_loss(Tape& t, Var a, Var b, double margin = 0.2) {
    int n = int(t.val(a).rows());
    LCVN_CHECK(n >= 2, "instruction_alignment_loss: need a batch of at least 2 pairs");
    LCVN_CHECK(t.val(b).rows() == n && t.val(b).cols() == t.val(a).cols(),
               "instruction_alignment_loss: shape mismatch");
    auto normalize = [&](Var x) {
        Var inv = t.exp_(t.scale(t.log_(t.add_scalar(t.row_sum(t.square(x)), 1e-30)), -0.5));
        return t.mul_colvec(x, inv);
    };
    Var an = normalize(a), bn = normalize(b);
    Var cosm = t.matmul(an, t.transpose(bn));  // n x n cosine matrix

    Mat diag_mask = Mat::Zero(n, n), off_mask = Mat::Ones(n, n);
    for (int i = 0; i < n; ++i) {
        diag_mask(i, i) = 1.0;
        off_mask(i, i) = 0.0;
    }
    Var matched = t.scale(t.sum_all(t.mul(t.add_scalar(t.neg(cosm), 1.0), t.constant(diag_mask))),
                          1.0 / double(n));
    Var hinge = t.relu(t.add_scalar(cosm, -margin));
    Var mismatched =
        t.scale(t.sum_all(t.mul(hinge, t.constant(off_mask))), 1.0 / double(n * (n - 1)));
    return t.add(matched, mismatched);
}

// ---- agent configuration and networks ----

struct ACConfig {
    double gamma = 0.95;
    double lambda_ret = 0.95;
    int horizon = 8;
    double alpha1 = 1.0;   // plan-KL weight in the actor loss
    double alpha2 = 0.1;   // instruction-alignment weight
    double tau = 0.02;     // target-critic EMA rate
    double lr = 1e-3;
    int dp = 8;            // plan dimension
    int hidden = 32;
    int d_align = 16;      // shared projection dim for the alignment loss
    double margin = 0.2;
    int rollout_sampler_steps = 4;
    double logstd_min = -5.0, logstd_max = 2.0;
    double stop_threshold = 0.5;
    bool hold_plan = false;  // inference: sample the plan once per episode
    bool use_language = true;
    uint64_t seed = 0;

    void validate() const {
        LCVN_CHECK(gamma >= 0.0 && gamma <= 1.0, "ac: gamma in [0,1]");
        LCVN_CHECK(lambda_ret >= 0.0 && lambda_ret <= 1.0, "ac: lambda in [0,1]");
        LCVN_CHECK(horizon >= 1, "ac: horizon >= 1");
        LCVN_CHECK(tau > 0.0 && tau <= 1.0, "ac: tau in (0,1]");
    }
};

struct PolicyOutput {
    Eigen::RowVectorXd mean;    // pre-squash action mean, 3 components
    Eigen::RowVectorXd logstd;  // clamped to [logstd_min, logstd_max]
    double stop_prob = 0.0;
};

struct NavStep {
    enum Kind { imagine, act } kind;
    int step = 0;
    int action_from_step = -1;  // for imagine: which step produced the action fed in
};

struct NavigationTrace {
    std::vector<Action> actions;                  // executed actions (may end with stop)
    std::vector<Eigen::RowVectorXd> latents;      // s_0 then imagined latents
    std::vector<NavStep> call_log;                // imagine/act ordering record
    int wm_calls = 0;
};

struct AcLosses {
    double total = 0, critic = 0, actor = 0, kl = 0, ins = 0;
    double mean_intrinsic = 0;
    int rollout_steps = 0;
};

// Latent-space actor-critic trained against a frozen world model.
struct Agent {
    ACConfig cfg;
    int ds = 16;  // state dim (matches the world model)
    int de = 32;  // instruction embedding width
    ParamStore ps;         // actor + critic + encoders + projections
    ParamStore target_ps;  // EMA target critic (critic.* entries only)

    void init(uint64_t seed, int state_dim, int embed_dim) {
        cfg.validate();
        ds = state_dim;
        de = embed_dim;
        Rng rng(mix_seed(seed, "agent-init"));
        int h = cfg.hidden;
        int in_learner = ds + de;
        int in_policy = ds + de + cfg.dp;

        auto dense = [&](const std::string& p, int in, int out) {
            ps.add(p + ".w", in, out, 1.0 / std::sqrt(double(in)), rng);
            ps.add_zeros(p + ".b", 1, out);
        };
        // expert encoder: GRU over [latent, pooled instruction] rows
        int in_gru = ds + de;
        ps.add("expert.wz", in_gru, h, 1.0 / std::sqrt(double(in_gru)), rng);
        ps.add("expert.uz", h, h, 1.0 / std::sqrt(double(h)), rng);
        ps.add_zeros("expert.bz", 1, h);
        ps.add("expert.wr", in_gru, h, 1.0 / std::sqrt(double(in_gru)), rng);
        ps.add("expert.ur", h, h, 1.0 / std::sqrt(double(h)), rng);
        ps.add_zeros("expert.br", 1, h);
        ps.add("expert.wh", in_gru, h, 1.0 / std::sqrt(double(in_gru)), rng);
        ps.add("expert.uh", h, h, 1.0 / std::sqrt(double(h)), rng);
        ps.add_zeros("expert.bh", 1, h);
        dense("expert.mean", h, cfg.dp);
        dense("expert.logvar", h, cfg.dp);
        // learner encoder: MLP on [latent, pooled instruction]
        dense("learner.h", in_learner, h);
        dense("learner.mean", h, cfg.dp);
        dense("learner.logvar", h, cfg.dp);
        // actor
        dense("actor.h1", in_policy, h);
        dense("actor.h2", h, h);
        dense("actor.mean", h, 3);
        dense("actor.logstd", h, 3);
        dense("actor.stop", h, 1);
        // critic
        dense("critic.h1", in_policy, h);
        dense("critic.h2", h, h);
        dense("critic.out", h, 1);
        // alignment projections
        dense("proj.lat", ds, cfg.d_align);
        dense("proj.ins", de, cfg.d_align);

        // target critic starts as a copy of the critic
        for (const auto& e : ps.entries)
            if (e.name.rfind("critic.", 0) == 0) target_ps.add_matrix(e.name, e.w);
    }

    void ema_update_target() {
        for (auto& te : target_ps.entries) {
            const Mat& src = ps.at(te.name);
            te.w = (1.0 - cfg.tau) * te.w + cfg.tau * src;
        }
    }

    uint64_t checksum() const { return ps.checksum() ^ (target_ps.checksum() << 1); }

    // ---- encoders ----

    PlanVars expert_encode_var(Tape& t, Binder& b, const std::vector<Var>& latents,
                               Var pooled_instr) const {
        LCVN_CHECK(!latents.empty(), "expert_encode: empty sequence");
        Var h = t.constant(Mat::Zero(1, cfg.hidden));
        for (const Var& s : latents) {
            Var x = t.concat_cols({s, pooled_instr});
            Var z = t.sigmoid_(t.add(t.add(t.matmul(x, b("expert.wz")), t.matmul(h, b("expert.uz"))),
                                     b("expert.bz")));
            Var r = t.sigmoid_(t.add(t.add(t.matmul(x, b("expert.wr")), t.matmul(h, b("expert.ur"))),
                                     b("expert.br")));
            Var hh = t.tanh_(t.add(
                t.add(t.matmul(x, b("expert.wh")), t.matmul(t.mul(r, h), b("expert.uh"))),
                b("expert.bh")));
            h = t.add(t.mul(t.add_scalar(t.neg(z), 1.0), h), t.mul(z, hh));
        }
        return {linear(t, h, b("expert.mean.w"), b("expert.mean.b")),
                linear(t, h, b("expert.logvar.w"), b("expert.logvar.b"))};
    }

    PlanVars learner_encode_var(Tape& t, Binder& b, Var latent, Var pooled_instr) const {
        Var x = t.concat_cols({latent, pooled_instr});
        Var h = t.tanh_(linear(t, x, b("learner.h.w"), b("learner.h.b")));
        return {linear(t, h, b("learner.mean.w"), b("learner.mean.b")),
                linear(t, h, b("learner.logvar.w"), b("learner.logvar.b"))};
    }

    PlanDistribution expert_encode(const std::vector<Eigen::RowVectorXd>& latents,
                                   const Eigen::RowVectorXd& pooled_instr) const {
        Tape t;
        Binder b(t, const_cast<ParamStore&>(ps), false);
        std::vector<Var> lv;
        for (const auto& s : latents) lv.push_back(t.constant(Mat(s)));
        auto pv = expert_encode_var(t, b, lv, t.constant(Mat(pooled_instr)));
        return {t.val(pv.mean).row(0), t.val(pv.logvar).row(0)};
    }

    PlanDistribution learner_encode(const Eigen::RowVectorXd& latent,
                                    const Eigen::RowVectorXd& pooled_instr) const {
        Tape t;
        Binder b(t, const_cast<ParamStore&>(ps), false);
        auto pv = learner_encode_var(t, b, t.constant(Mat(latent)), t.constant(Mat(pooled_instr)));
        return {t.val(pv.mean).row(0), t.val(pv.logvar).row(0)};
    }

    // ---- policy and value heads ----

    struct PolicyVars {
        Var mean, logstd, stop_logit;
    };

    PolicyVars policy_forward(Tape& t, Binder& b, Var latent, Var pooled_instr, Var plan) const {
        Var x = t.concat_cols({latent, pooled_instr, plan});
        Var h = t.tanh_(linear(t, x, b("actor.h1.w"), b("actor.h1.b")));
        h = t.tanh_(linear(t, h, b("actor.h2.w"), b("actor.h2.b")));
        return {linear(t, h, b("actor.mean.w"), b("actor.mean.b")),
                t.clamp(linear(t, h, b("actor.logstd.w"), b("actor.logstd.b")), cfg.logstd_min,
                        cfg.logstd_max),
                linear(t, h, b("actor.stop.w"), b("actor.stop.b"))};
    }

    Var critic_forward(Tape& t, Binder& b, Var latent, Var pooled_instr, Var plan) const {
        Var x = t.concat_cols({latent, pooled_instr, plan});
        Var h = t.tanh_(linear(t, x, b("critic.h1.w"), b("critic.h1.b")));
        h = t.tanh_(linear(t, h, b("critic.h2.w"), b("critic.h2.b")));
        return linear(t, h, b("critic.out.w"), b("critic.out.b"));
    }

    // differentiable action: components squashed into the bin range and gated
    // by the stop head, so emitting the null action is reachable by gradient
    struct SampledAction {
        Var effective;  // 1 x 3, (1 - p_stop) * 0.5 * tanh(mean + std * eps)
        Var stop_prob;  // 1 x 1
    };

    SampledAction sample_action_var(Tape& t, const PolicyVars& pol, const Mat& eps) const {
        Var noise = t.constant(eps);
        Var pre = t.add(pol.mean, t.mul(t.exp_(pol.logstd), noise));
        Var squashed = t.scale(t.tanh_(pre), 0.5);
        Var p_stop = t.sigmoid_(pol.stop_logit);
        Var keep = t.add_scalar(t.neg(p_stop), 1.0);  // 1 x 1
        Var keep3 = t.concat_cols({keep, keep, keep});
        return {t.mul(squashed, keep3), p_stop};
    }

    PolicyOutput policy_output(const Eigen::RowVectorXd& latent,
                               const Eigen::RowVectorXd& pooled_instr,
                               const Eigen::RowVectorXd& plan) const {
        Tape t;
        Binder b(t, const_cast<ParamStore&>(ps), false);
        auto pol = policy_forward(t, b, t.constant(Mat(latent)), t.constant(Mat(pooled_instr)),
                                  t.constant(Mat(plan)));
        PolicyOutput out;
        out.mean = t.val(pol.mean).row(0);
        out.logstd = t.val(pol.logstd).row(0);
        out.stop_prob = 1.0 / (1.0 + std::exp(-t.scalar(pol.stop_logit)));
        return out;
    }

    // evaluation-mode action: mean of the squashed policy, stop by threshold
    Action act(const Eigen::RowVectorXd& latent, const Eigen::RowVectorXd& pooled_instr,
               const Eigen::RowVectorXd& plan) const {
        PolicyOutput pol = policy_output(latent, pooled_instr, plan);
        if (pol.stop_prob > cfg.stop_threshold) return Action::stop();
        double keep = 1.0 - pol.stop_prob;
        Action a;
        a.dx = keep * 0.5 * std::tanh(pol.mean(0));
        a.dy = keep * 0.5 * std::tanh(pol.mean(1));
        a.dyaw = keep * 0.5 * std::tanh(pol.mean(2));
        return a;
    }

    Eigen::RowVectorXd pooled_instruction(const WorldModel& wm,
                                          const std::vector<int>& tokens) const {
        if (!cfg.use_language) return Eigen::RowVectorXd::Zero(de);
        return wm.embedder.pooled_vector(tokens);
    }

    void save(const std::string& path, const std::string& config_echo,
              uint64_t wm_checksum) const {
        Checkpoint ck;
        ck.meta["kind"] = "agent";
        ck.meta["config"] = config_echo;
        ck.meta["wm_checksum"] = hex_encode_u64(wm_checksum);
        ck.add_section("agent", ps);
        ck.add_section("target_critic", target_ps);
        ck.save(path);
    }

    void load_params(const Checkpoint& ck) {
        auto copy_into = [](const ParamStore& src, ParamStore& dst) {
            LCVN_CHECK(src.entries.size() == dst.entries.size(), "agent checkpoint layout mismatch");
            for (size_t i = 0; i < src.entries.size(); ++i) {
                LCVN_CHECK(src.entries[i].name == dst.entries[i].name,
                           "agent checkpoint name mismatch");
                dst.entries[i].w = src.entries[i].w;
                dst.entries[i].m = src.entries[i].m;
                dst.entries[i].v = src.entries[i].v;
            }
            dst.adam_step = src.adam_step;
        };
        copy_into(ck.section("agent"), ps);
        copy_into(ck.section("target_critic"), target_ps);
    }
};

// formula-level loss heads (the network-level versions live in ac_build_losses)
inline double critic_loss(const std::vector<double>& values,
                          const std::vector<double>& lambda_returns_) {
    LCVN_CHECK(values.size() == lambda_returns_.size() && !values.empty(),
               "critic_loss: length mismatch");
    double s = 0;
    for (size_t i = 0; i < values.size(); ++i) {
        double d = values[i] - lambda_returns_[i];
        s += 0.5 * d * d;
    }
    return s / double(values.size());
}

inline double actor_loss(const std::vector<double>& lambda_returns_,
                         const std::vector<double>& l_kl, const std::vector<double>& l_ins,
                         double alpha1, double alpha2) {
    LCVN_CHECK(lambda_returns_.size() == l_kl.size() && l_kl.size() == l_ins.size() &&
                   !l_kl.empty(),
               "actor_loss: length mismatch");
    double s = 0;
    for (size_t i = 0; i < l_kl.size(); ++i)
        s += -lambda_returns_[i] + alpha1 * l_kl[i] + alpha2 * l_ins[i];
    return s / double(l_kl.size());
}

struct AcGraph {
    Var actor_total, critic_total, total;
    AcLosses stats;
    bool empty = true;
};

// Build the phase-2 loss graph for one trajectory on the given tape: per
// start index sample expert and learner plans, align them by KL, roll the
// actor out through the frozen world model, score the imagined latents
// against the expert ones, and regress the critic to lambda-returns from the
// EMA target critic.
inline AcGraph ac_build_losses(const Agent& agent, const WorldModel& wm, Tape& t, Binder& ab,
                               Binder& wb, Binder& eb, Binder& tb,
                               const std::vector<Eigen::RowVectorXd>& expert_latents,
                               const std::vector<int>& instr_tokens,
                               const std::vector<std::vector<int>>& negative_instructions,
                               uint64_t step_seed) {
    int n = int(expert_latents.size()) - 1;  // steps; latents are s_0..s_n
    LCVN_CHECK(n >= 1, "ac: need at least one transition");
    Rng rng(mix_seed(step_seed, "ac-step"));

    Var instr, pooled;
    if (agent.cfg.use_language) {
        instr = wm.embedder.embed(t, eb, instr_tokens);
        pooled = t.scale(t.col_sum(instr), 1.0 / double(t.val(instr).rows()));
    } else {
        pooled = t.constant(Mat::Zero(1, agent.de));
    }
    Var ins_proj = linear(t, pooled, ab("proj.ins.w"), ab("proj.ins.b"));
    std::vector<Var> neg_projs;
    for (const auto& neg : negative_instructions) {
        Var nemb = wm.embedder.embed(t, eb, neg);
        Var npool = t.scale(t.col_sum(nemb), 1.0 / double(t.val(nemb).rows()));
        neg_projs.push_back(linear(t, npool, ab("proj.ins.w"), ab("proj.ins.b")));
    }

    std::vector<Var> lat;
    for (const auto& s : expert_latents) lat.push_back(t.constant(Mat(s)));

    auto cosine = [&](Var a, Var b) {
        Var dot = t.sum_all(t.mul(a, b));
        Var na = t.sqrt_(t.add_scalar(t.sum_all(t.square(a)), 1e-30));
        Var nb = t.sqrt_(t.add_scalar(t.sum_all(t.square(b)), 1e-30));
        return t.div(dot, t.mul(na, nb));
    };

    std::vector<Var> actor_terms, critic_terms;
    double kl_sum = 0, ins_sum = 0, reward_sum = 0;
    int reward_count = 0, kl_count = 0;

    for (int t0 = 0; t0 < n; ++t0) {
        std::vector<Var> suffix(lat.begin() + t0, lat.end());
        PlanVars expert = agent.expert_encode_var(t, ab, suffix, pooled);
        PlanVars learner = agent.learner_encode_var(t, ab, lat[size_t(t0)], pooled);
        Var l_kl = kl_gaussians_var(t, expert, learner);
        kl_sum += t.scalar(l_kl);
        ++kl_count;

        // training-time plan: reparameterized sample from the expert posterior
        Mat plan_eps(1, agent.cfg.dp);
        for (int j = 0; j < agent.cfg.dp; ++j) plan_eps(0, j) = rng.normal();
        Var plan = t.add(expert.mean,
                         t.mul(t.exp_(t.scale(expert.logvar, 0.5)), t.constant(plan_eps)));

        // latent history for the world model, most recent last
        std::vector<Var> history;
        for (int i = std::max(0, t0 - wm.cfg.k + 1); i <= t0; ++i) history.push_back(lat[size_t(i)]);

        Var cur = lat[size_t(t0)];
        int end = std::min(t0 + agent.cfg.horizon - 1, n - 1);
        std::vector<Var> rewards, values, states, ins_losses;
        states.push_back(cur);
        for (int k2 = t0; k2 <= end; ++k2) {
            auto pol = agent.policy_forward(t, ab, cur, pooled, plan);
            Mat eps(1, 3);
            for (int j = 0; j < 3; ++j) eps(0, j) = rng.normal();
            auto sampled = agent.sample_action_var(t, pol, eps);

            Rng srng(mix_seed(step_seed, "ac-sampler", uint64_t(t0 * 1000 + k2)));
            Var next = wm.predict_next_tape(t, wb, history, sampled.effective, Action{}, 1, instr,
                                            agent.cfg.rollout_sampler_steps, srng);
            Var r = intrinsic_reward_var(t, lat[size_t(k2 + 1)], next);
            rewards.push_back(r);
            reward_sum += t.scalar(r);
            ++reward_count;

            Var lat_proj = linear(t, next, ab("proj.lat.w"), ab("proj.lat.b"));
            Var ins_term = t.add_scalar(t.neg(cosine(lat_proj, ins_proj)), 1.0);
            for (const auto& np : neg_projs) {
                Var hinge = t.relu(t.add_scalar(cosine(lat_proj, np), -agent.cfg.margin));
                ins_term = t.add(ins_term, t.scale(hinge, 1.0 / double(neg_projs.size())));
            }
            ins_losses.push_back(ins_term);
            ins_sum += t.scalar(ins_term);

            history.push_back(next);
            if (int(history.size()) > wm.cfg.k) history.erase(history.begin());
            cur = next;
            states.push_back(next);
        }
        if (rewards.empty()) continue;

        // lambda-return targets from the EMA target critic; states and plan
        // stay attached so the actor's dynamics backprop sees the full path
        values.clear();
        for (const Var& s : states)
            values.push_back(agent.critic_forward(t, tb, s, pooled, plan));
        auto vlam = lambda_returns_var(t, rewards, values, agent.cfg.gamma, agent.cfg.lambda_ret);

        for (size_t k2 = 0; k2 < rewards.size(); ++k2) {
            // critic regression on detached states against stop-gradient targets
            Var v = agent.critic_forward(t, ab, t.detach(states[k2]), pooled, t.detach(plan));
            Var err = t.sub(v, t.detach(vlam[k2]));
            critic_terms.push_back(t.scale(t.square(err), 0.5));

            Var actor_term = t.add(t.neg(vlam[k2]), t.scale(l_kl, agent.cfg.alpha1));
            actor_term = t.add(actor_term, t.scale(ins_losses[k2], agent.cfg.alpha2));
            actor_terms.push_back(actor_term);
        }
    }

    AcGraph g;
    if (actor_terms.empty()) return g;
    Var actor_total = actor_terms[0];
    for (size_t i = 1; i < actor_terms.size(); ++i) actor_total = t.add(actor_total, actor_terms[i]);
    actor_total = t.scale(actor_total, 1.0 / double(actor_terms.size()));
    Var critic_total = critic_terms[0];
    for (size_t i = 1; i < critic_terms.size(); ++i)
        critic_total = t.add(critic_total, critic_terms[i]);
    critic_total = t.scale(critic_total, 1.0 / double(critic_terms.size()));

    g.actor_total = t.sum_all(actor_total);
    g.critic_total = t.sum_all(critic_total);
    g.total = t.add(g.actor_total, g.critic_total);
    g.empty = false;
    g.stats.actor = t.scalar(g.actor_total);
    g.stats.critic = t.scalar(g.critic_total);
    g.stats.total = t.scalar(g.total);
    g.stats.kl = kl_count ? kl_sum / kl_count : 0.0;
    g.stats.ins = reward_count ? ins_sum / reward_count : 0.0;
    g.stats.mean_intrinsic = reward_count ? reward_sum / reward_count : 0.0;
    g.stats.rollout_steps = reward_count;
    return g;
}

// One phase-2 optimizer step. The world-model checksum guards frozenness on
// entry and after the update.
inline AcLosses ac_train_step(Agent& agent, const WorldModel& wm, uint64_t expected_wm_checksum,
                              const std::vector<Eigen::RowVectorXd>& expert_latents,
                              const std::vector<int>& instr_tokens,
                              const std::vector<std::vector<int>>& negative_instructions,
                              uint64_t step_seed) {
    LCVN_CHECK(wm.parameter_checksum() == expected_wm_checksum,
               "ac_train_step: world model changed during phase 2, aborting");
    Tape t;
    Binder ab(t, agent.ps, true);
    Binder wb(t, const_cast<ParamStore&>(wm.ps), false);
    Binder eb(t, const_cast<ParamStore&>(wm.embedder.ps), false);
    Binder tb(t, agent.target_ps, false);
    AcGraph g = ac_build_losses(agent, wm, t, ab, wb, eb, tb, expert_latents, instr_tokens,
                                negative_instructions, step_seed);
    if (g.empty) return g.stats;
    LCVN_CHECK(std::isfinite(g.stats.total), "ac: non-finite loss, aborting");
    t.backward(g.total);
    AdamConfig adam;
    adam.lr = agent.cfg.lr;
    adam_update(agent.ps, t, ab, adam);
    agent.ema_update_target();
    LCVN_CHECK(wm.parameter_checksum() == expected_wm_checksum,
               "ac_train_step: world model changed during phase 2, aborting");
    return g.stats;
}

// Coupled open-loop inference: imagine the next latent from the previous
// action, then act on it; terminate on the stop action or after t_max steps.
inline NavigationTrace navigate(const WorldModel& wm, const Agent& agent,
                                const Observation& start_obs,
                                const std::vector<int>& instr_tokens, int t_max, uint64_t seed) {
    NavigationTrace trace;
    Eigen::RowVectorXd pooled = agent.pooled_instruction(wm, instr_tokens);
    Eigen::RowVectorXd s = wm.encode_observation(start_obs);
    std::vector<Eigen::RowVectorXd> history{s};
    trace.latents.push_back(s);

    Action prev;  // null action before the first step
    prev.dx = prev.dy = prev.dyaw = 0.0;
    Eigen::RowVectorXd plan;
    Rng plan_rng(mix_seed(seed, "nav-plan"));

    for (int step = 0; step < t_max; ++step) {
        if (step > 0) {
            trace.call_log.push_back({NavStep::imagine, step, step - 1});
            s = wm.predict_next_latent(history, prev, instr_tokens, 1, wm.cfg.sampler_steps,
                                       mix_seed(seed, "nav-imagine", uint64_t(step)));
            ++trace.wm_calls;
            history.push_back(s);
            if (int(history.size()) > wm.cfg.k) history.erase(history.begin());
            trace.latents.push_back(s);
        }
        if (!agent.cfg.hold_plan || step == 0) {
            PlanDistribution pd = agent.learner_encode(s, pooled);
            plan = pd.mean;
            for (int j = 0; j < plan.size(); ++j)
                plan(j) += std::exp(0.5 * pd.logvar(j)) * plan_rng.normal();
        }
        trace.call_log.push_back({NavStep::act, step, -1});
        Action a = agent.act(s, pooled, plan);
        trace.actions.push_back(a);
        if (a.is_stop) break;
        prev = a;
    }
    return trace;
}

}  // namespace lcvn
