#pragma once

#include "lcvn/dataset.hpp"
#include "lcvn/nn.hpp"
#include "lcvn/tokenizers.hpp"

namespace lcvn {

struct UniConfig {
    int k = 2;            // frames of observation history
    int width = 64;
    int depth = 3;
    int heads = 4;
    double lambda_joint = 1.0;
    double lr = 1e-3;
    int budget = 128;     // token context budget
    int batch = 8;
    int m = 16;           // visual tokens per frame
    int patch = 8;        // patch side; m = (obs/patch)^2
    int obs_h = 32, obs_w = 32;
    bool interleave = false;     // alternating-substep baseline
    double temperature = 0.0;    // 0 = greedy decode
    bool use_language = true;
    uint64_t seed = 0;

    // the fixed context budget forces fewer visual tokens per frame at k=4,
    // mirroring the resolution-versus-context trade
    static int default_m_for_k(int k) { return k >= 4 ? 4 : 16; }
    static int patch_for_m(int obs, int m) {
        int grid = int(std::llround(std::sqrt(double(m))));
        LCVN_CHECK(grid * grid == m && obs % grid == 0, "uni: m must be a square dividing obs");
        return obs / grid;
    }

    // sequence cost: control separators + instruction + start obs + history +
    // previous action + action targets + obs targets
    int sequence_cost(int instr_len) const {
        return 1 + 1 + instr_len + 1 + m + k * (1 + m) + 1 + 3 + 1 + 3 + m;
    }

    void validate(int max_instr_len = 32) const {
        LCVN_CHECK(k == 1 || k == 2 || k == 4, "uni: k must be one of {1,2,4}");
        int cost = sequence_cost(max_instr_len);
        if (cost > budget) {
            std::string msg = "uni: token budget overflow: separators(5) + instruction(" +
                              std::to_string(max_instr_len) + ") + start_obs(" + std::to_string(m) +
                              ") + history(" + std::to_string(k * (1 + m)) + ") + prev_action(3) + " +
                              "action_targets(4) + obs_targets(" + std::to_string(m) + ") = " +
                              std::to_string(cost) + " > " + std::to_string(budget) +
                              "; the history frames are the overflowing component";
            throw std::runtime_error("lcvn: " + msg);
        }
        LCVN_CHECK(width % heads == 0, "uni: width must divide heads");
    }
};

enum class TokenTag : int8_t { control = 0, text = 1, action = 2, visual = 3 };

// One training sample: teacher-forced token sequence with target spans.
// Layout: [BOS][INS] w.. [START] v..m [OBS] v..m (x k frames) [ACT] a_prev
// [TGT] action-targets obs-targets. The logits at position j-1 predict the
// token at j. A stop-step sample carries the single stop target and no
// observation targets.
struct UniSequence {
    std::vector<int> tokens;
    std::vector<TokenTag> tags;
    int action_target_begin = -1;
    int n_action_targets = 0;  // 3, or 1 for a stop sample
    int obs_target_begin = -1;
    int n_obs_targets = 0;     // m, or 0 for a stop sample
    bool stop_sample = false;
    std::vector<std::vector<double>> true_patches;  // ground-truth u_j per obs target
};

inline std::vector<int> obs_tokens(const Observation& o, const Codebook& cb, const TokenSpace& ts) {
    std::vector<int> out;
    for (int code : vq_encode(o, cb)) out.push_back(ts.visual_token(code));
    return out;
}

inline std::vector<int> zero_action_bins(const TokenSpace& ts) {
    return action_to_bins(Action{0, 0, 0, false}, ts);
}

// Build the unified sample for step t of a trajectory: inputs are the current
// observation history, the previously executed action (null at t = 0), the
// start observation, and the instruction; targets are the action taken at t
// and the observation that results from it.
inline UniSequence build_sample(const Trajectory& traj, int t, InstructionStyle style,
                                const TokenSpace& ts, const Codebook& cb, const UniConfig& cfg) {
    LCVN_CHECK(t >= 0 && t < traj.n_steps(), "build_sample: step out of range");
    UniSequence seq;
    auto push = [&](int tok, TokenTag tag) {
        seq.tokens.push_back(tok);
        seq.tags.push_back(tag);
    };

    push(ts.bos, TokenTag::control);
    push(ts.sep_instruction, TokenTag::control);
    if (cfg.use_language)
        for (int w : traj.instruction(style).tokens) push(ts.text_token(w), TokenTag::text);

    push(ts.sep_start_obs, TokenTag::control);
    for (int v : obs_tokens(traj.observations.front(), cb, ts)) push(v, TokenTag::visual);

    // k frames of history ending at the current observation, repeat-earliest
    for (int i = 0; i < cfg.k; ++i) {
        int idx = std::max(0, t - (cfg.k - 1 - i));
        push(ts.sep_obs, TokenTag::control);
        for (int v : obs_tokens(traj.observations[size_t(idx)], cb, ts))
            push(v, TokenTag::visual);
    }

    push(ts.sep_action, TokenTag::control);
    std::vector<int> prev = t > 0 ? action_to_bins(traj.actions[size_t(t - 1)], ts)
                                  : zero_action_bins(ts);
    LCVN_CHECK(prev.size() == 3, "build_sample: previous action must be a 3-bin action");
    for (int a : prev) push(a, TokenTag::action);

    push(ts.sep_target, TokenTag::control);
    const Action& target_action = traj.actions[size_t(t)];
    seq.action_target_begin = int(seq.tokens.size());
    if (target_action.is_stop) {
        seq.stop_sample = true;
        seq.n_action_targets = 1;
        push(ts.stop_token, TokenTag::action);
    } else {
        seq.n_action_targets = 3;
        for (int a : action_to_bins(target_action, ts)) push(a, TokenTag::action);
        seq.obs_target_begin = int(seq.tokens.size());
        seq.n_obs_targets = cfg.m;
        const Observation& next_obs = traj.observations[size_t(t + 1)];
        seq.true_patches = extract_patches(next_obs, cb.patch);
        for (int v : obs_tokens(next_obs, cb, ts)) push(v, TokenTag::visual);
    }
    LCVN_CHECK(int(seq.tokens.size()) <= cfg.budget,
               "build_sample: sequence exceeds the token budget");
    return seq;
}

// Causal transformer over the unified token space with one shared output head.
struct UniModel {
    UniConfig cfg;
    TokenSpace ts;
    Codebook cb;
    ParamStore ps;
    uint64_t tokenizer_checksum = 0;  // codebook + token-space layout, frozen

    void init(uint64_t seed, const TokenSpace& space, const Codebook& codebook) {
        cfg.validate();
        ts = space;
        cb = codebook;
        tokenizer_checksum = cb.checksum() ^ (uint64_t(ts.total) * 0x9e3779b97f4a7c15ull);
        cfg.seed = seed;
        Rng rng(mix_seed(seed, "uni-init"));
        int w = cfg.width;
        ps.add("embed", ts.total, w, 0.02, rng);
        ps.add("pos", cfg.budget, w, 0.02, rng);
        for (int d = 0; d < cfg.depth; ++d) {
            std::string p = "blk" + std::to_string(d);
            ps.add_zeros(p + ".ln1.g", 1, w);
            ps.add_zeros(p + ".ln1.b", 1, w);
            add_attention_params(ps, p + ".attn", w, rng);
            ps.add_zeros(p + ".ln2.g", 1, w);
            ps.add_zeros(p + ".ln2.b", 1, w);
            ps.add(p + ".mlp.w1", w, 4 * w, 1.0 / std::sqrt(double(w)), rng);
            ps.add_zeros(p + ".mlp.b1", 1, 4 * w);
            ps.add(p + ".mlp.w2", 4 * w, w, 1.0 / std::sqrt(4.0 * w), rng);
            ps.add_zeros(p + ".mlp.b2", 1, w);
        }
        ps.add_zeros("lnf.g", 1, w);
        ps.add_zeros("lnf.b", 1, w);
        ps.add("head.w", w, ts.total, 1.0 / std::sqrt(double(w)), rng);
        ps.add_zeros("head.b", 1, ts.total);
    }

    Var forward(Tape& t, Binder& b, const std::vector<int>& tokens) const {
        LCVN_CHECK(int(tokens.size()) <= cfg.budget, "uni_forward: sequence over budget");
        std::vector<int> pos_ids(tokens.size());
        for (size_t i = 0; i < tokens.size(); ++i) pos_ids[i] = int(i);
        Var x = t.add(t.gather_rows(b("embed"), tokens), t.gather_rows(b("pos"), pos_ids));
        for (int d = 0; d < cfg.depth; ++d) {
            std::string p = "blk" + std::to_string(d);
            Var h1 = layer_norm(t, x, t.add_scalar(b(p + ".ln1.g"), 1.0), b(p + ".ln1.b"));
            x = t.add(x, attention(t, h1, h1, bind_attention(b, p + ".attn"), cfg.heads, true));
            Var h2 = layer_norm(t, x, t.add_scalar(b(p + ".ln2.g"), 1.0), b(p + ".ln2.b"));
            Var m1 = t.silu(linear(t, h2, b(p + ".mlp.w1"), b(p + ".mlp.b1")));
            x = t.add(x, linear(t, m1, b(p + ".mlp.w2"), b(p + ".mlp.b2")));
        }
        Var xf = layer_norm(t, x, t.add_scalar(b("lnf.g"), 1.0), b("lnf.b"));
        return linear(t, xf, b("head.w"), b("head.b"));
    }

    // plain-Eigen forward for inference; same math as the tape path
    Mat forward_fast(const std::vector<int>& tokens) const {
        LCVN_CHECK(int(tokens.size()) <= cfg.budget, "uni_forward: sequence over budget");
        int n = int(tokens.size()), w = cfg.width;
        Mat x(n, w);
        for (int i = 0; i < n; ++i)
            x.row(i) = ps.at("embed").row(tokens[size_t(i)]) + ps.at("pos").row(i);
        auto layer_norm_rows = [](const Mat& in, const Mat& g, const Mat& bta) {
            Mat out(in.rows(), in.cols());
            for (int i = 0; i < in.rows(); ++i) {
                double mu = in.row(i).mean();
                double var = (in.row(i).array() - mu).square().mean();
                out.row(i) = (((in.row(i).array() - mu) / std::sqrt(var + 1e-5)) *
                                  (1.0 + g.row(0).array()) +
                              bta.row(0).array())
                                 .matrix();
            }
            return out;
        };
        auto attn = [&](const Mat& in, const std::string& p) {
            int heads = cfg.heads, hd = w / heads;
            Mat q = (in * ps.at(p + ".wq")).rowwise() + ps.at(p + ".bq").row(0);
            Mat k = (in * ps.at(p + ".wk")).rowwise() + ps.at(p + ".bk").row(0);
            Mat v = (in * ps.at(p + ".wv")).rowwise() + ps.at(p + ".bv").row(0);
            Mat cat(in.rows(), w);
            for (int h = 0; h < heads; ++h) {
                Mat qh = q.middleCols(h * hd, hd), kh = k.middleCols(h * hd, hd),
                    vh = v.middleCols(h * hd, hd);
                Mat scores = qh * kh.transpose() / std::sqrt(double(hd));
                for (int i = 0; i < scores.rows(); ++i)
                    for (int j = i + 1; j < scores.cols(); ++j) scores(i, j) = -1e30;
                for (int i = 0; i < scores.rows(); ++i) {
                    double mx = scores.row(i).maxCoeff();
                    Eigen::RowVectorXd e = (scores.row(i).array() - mx).exp();
                    scores.row(i) = e / e.sum();
                }
                cat.middleCols(h * hd, hd) = scores * vh;
            }
            return Mat(((cat * ps.at(p + ".wo")).rowwise() + ps.at(p + ".bo").row(0)));
        };
        for (int d = 0; d < cfg.depth; ++d) {
            std::string p = "blk" + std::to_string(d);
            x = x + attn(layer_norm_rows(x, ps.at(p + ".ln1.g"), ps.at(p + ".ln1.b")), p + ".attn");
            Mat h2 = layer_norm_rows(x, ps.at(p + ".ln2.g"), ps.at(p + ".ln2.b"));
            Mat pre = (h2 * ps.at(p + ".mlp.w1")).rowwise() + ps.at(p + ".mlp.b1").row(0);
            Mat act = (pre.array() / (1.0 + (-pre.array()).exp())).matrix();  // silu
            x = x + ((act * ps.at(p + ".mlp.w2")).rowwise() + ps.at(p + ".mlp.b2").row(0));
        }
        Mat xf = layer_norm_rows(x, ps.at("lnf.g"), ps.at("lnf.b"));
        return (xf * ps.at("head.w")).rowwise() + ps.at("head.b").row(0);
    }

    void save(const std::string& path, const std::string& config_echo) const {
        Checkpoint ck;
        ck.meta["kind"] = "uni";
        ck.meta["config"] = config_echo;
        ck.meta["tokenizer_checksum"] = hex_encode_u64(tokenizer_checksum);
        ck.meta["param_checksum"] = hex_encode_u64(ps.checksum());
        ck.add_section("uni", ps);
        ParamStore cbs;
        for (int i = 0; i < cb.k; ++i) {
            Mat row(1, cb.dim);
            for (int j = 0; j < cb.dim; ++j) row(0, j) = cb.entries[size_t(i)][size_t(j)];
            cbs.add_matrix("entry" + std::to_string(i), row);
        }
        ck.meta["cb_geom"] = std::to_string(cb.k) + " " + std::to_string(cb.dim) + " " +
                             std::to_string(cb.patch) + " " + std::to_string(cb.grid_h) + " " +
                             std::to_string(cb.grid_w);
        ck.add_section("codebook", cbs);
        ck.save(path);
    }

    static Codebook codebook_from_checkpoint(const Checkpoint& ck) {
        Codebook cb;
        std::sscanf(ck.meta_at("cb_geom").c_str(), "%d %d %d %d %d", &cb.k, &cb.dim, &cb.patch,
                    &cb.grid_h, &cb.grid_w);
        const ParamStore& cbs = ck.section("codebook");
        for (int i = 0; i < cb.k; ++i) {
            const Mat& row = cbs.at("entry" + std::to_string(i));
            cb.entries.emplace_back(row.data(), row.data() + row.size());
        }
        return cb;
    }

    void load_params(const Checkpoint& ck) {
        const ParamStore& src = ck.section("uni");
        LCVN_CHECK(src.entries.size() == ps.entries.size(), "uni checkpoint layout mismatch");
        for (size_t i = 0; i < src.entries.size(); ++i) {
            LCVN_CHECK(src.entries[i].name == ps.entries[i].name, "uni checkpoint name mismatch");
            ps.entries[i].w = src.entries[i].w;
            ps.entries[i].m = src.entries[i].m;
            ps.entries[i].v = src.entries[i].v;
        }
        ps.adam_step = src.adam_step;
        LCVN_CHECK(ck.meta_at("param_checksum") == hex_encode_u64(ps.checksum()),
                   "uni checkpoint checksum mismatch");
    }
};

// ---- losses ----

// range-restricted cross-entropy: -log softmax(logits[begin..begin+len))[target]
inline Var restricted_ce(Tape& t, Var logits_row, int begin, int len, int target) {
    LCVN_CHECK(target >= begin && target < begin + len, "restricted_ce: target outside range");
    Var slice = t.cols(logits_row, begin, len);
    Var lse = t.logsumexp_rows(slice);
    Var sel = t.cols(slice, target - begin, 1);
    return t.sub(lse, sel);
}

// Bin-token action loss: probabilities renormalized over each dimension's bin
// range before the log; the stop sample restricts to {stop} U B_x. Text-target
// cross-entropy is added when text targets exist (none in the standard layout).
inline Var plan_loss(Tape& t, Var logits, const UniSequence& seq, const TokenSpace& ts) {
    LCVN_CHECK(seq.action_target_begin > 0, "plan_loss: sample has no action targets");
    int nb = ts.bins.n_bins();
    if (seq.stop_sample) {
        int pos = seq.action_target_begin;
        Var row = t.rows(logits, pos - 1, 1);
        // {stop} U B_x is one contiguous block starting at the stop token
        return t.sum_all(restricted_ce(t, row, ts.stop_token, 1 + nb, seq.tokens[size_t(pos)]));
    }
    Var total = t.constant(Mat::Zero(1, 1));
    for (int d = 0; d < 3; ++d) {
        int pos = seq.action_target_begin + d;
        Var row = t.rows(logits, pos - 1, 1);
        total = t.add(total,
                      restricted_ce(t, row, ts.action_begin[d], nb, seq.tokens[size_t(pos)]));
    }
    return t.scale(t.sum_all(total), 1.0 / 3.0);
}

// Expected squared distance between the true patch embedding and the codebook
// under the predicted code distribution, renormalized over the visual range.
inline Var imagine_loss(Tape& t, Var logits, const UniSequence& seq, const TokenSpace& ts,
                        const Codebook& cb) {
    if (seq.n_obs_targets == 0) return t.constant(Mat::Zero(1, 1));
    LCVN_CHECK(int(seq.true_patches.size()) == seq.n_obs_targets,
               "imagine_loss: missing ground-truth patches");
    Var total = t.constant(Mat::Zero(1, 1));
    for (int j = 0; j < seq.n_obs_targets; ++j) {
        int pos = seq.obs_target_begin + j;
        Var row = t.rows(logits, pos - 1, 1);
        Var probs = t.softmax_rows(t.cols(row, ts.visual_begin, ts.n_visual));
        Mat d2(1, cb.k);
        for (int c = 0; c < cb.k; ++c)
            d2(0, c) = sq_dist(seq.true_patches[size_t(j)], cb.entries[size_t(c)]);
        total = t.add(total, t.sum_all(t.mul(probs, t.constant(d2))));
    }
    return t.scale(total, 1.0 / double(seq.n_obs_targets));
}

inline Var joint_loss(Tape& t, Var plan, Var imagine, double lambda_joint) {
    return t.add(plan, t.scale(imagine, lambda_joint));
}

struct UniLosses {
    double total = 0, plan = 0, imagine = 0;
    int samples = 0;
};

// One optimizer step over a batch of samples. In interleave mode the step
// alternates between plan-only and imagine-only objectives (the
// alternating-substep baseline); otherwise both are optimized jointly.
inline UniLosses uni_train_step(UniModel& model, const std::vector<UniSequence>& batch,
                                uint64_t step_seed, int64_t step_index = 0) {
    LCVN_CHECK((model.cb.checksum() ^ (uint64_t(model.ts.total) * 0x9e3779b97f4a7c15ull)) ==
                   model.tokenizer_checksum,
               "uni_train_step: tokenizers changed after freezing, aborting");
    (void)step_seed;
    UniLosses out;
    if (batch.empty()) return out;
    Tape t;
    Binder b(t, model.ps, true);
    Var total = t.constant(Mat::Zero(1, 1));
    for (const auto& seq : batch) {
        Var logits = model.forward(t, b, seq.tokens);
        Var lp = plan_loss(t, logits, seq, model.ts);
        Var li = imagine_loss(t, logits, seq, model.ts, model.cb);
        Var lj;
        if (model.cfg.interleave)
            lj = (step_index % 2 == 0) ? lp : t.scale(li, model.cfg.lambda_joint);
        else
            lj = joint_loss(t, lp, li, model.cfg.lambda_joint);
        total = t.add(total, lj);
        out.plan += t.scalar(lp);
        out.imagine += t.scalar(li);
        ++out.samples;
    }
    total = t.scale(total, 1.0 / double(batch.size()));
    out.total = t.scalar(total);
    out.plan /= double(batch.size());
    out.imagine /= double(batch.size());
    LCVN_CHECK(std::isfinite(out.total), "uni: non-finite loss, aborting");
    t.backward(total);
    AdamConfig adam;
    adam.lr = model.cfg.lr;
    adam_update(model.ps, t, b, adam);
    return out;
}

// ---- inference ----

struct UniStepResult {
    Action action;
    std::vector<int> obs_token_ids;  // visual tokens (empty when stopped)
};

inline int masked_argmax(const Eigen::RowVectorXd& logits, int begin, int len) {
    int best = begin;
    double bv = logits(begin);
    for (int i = begin + 1; i < begin + len; ++i)
        if (logits(i) > bv) {
            bv = logits(i);
            best = i;
        }
    return best;
}

// Greedy masked decode of one planning-and-imagination step: 3 action bins
// (or stop) then m observation tokens, within one autoregressive continuation.
inline UniStepResult uni_infer_step(const UniModel& model,
                                    const std::vector<std::vector<int>>& history_obs_tokens,
                                    const std::vector<int>& prev_action_tokens,
                                    const std::vector<int>& instr_word_tokens,
                                    const std::vector<int>& start_obs_tokens) {
    const TokenSpace& ts = model.ts;
    const UniConfig& cfg = model.cfg;
    std::vector<int> tokens{ts.bos, ts.sep_instruction};
    if (cfg.use_language)
        for (int w : instr_word_tokens) tokens.push_back(ts.text_token(w));
    tokens.push_back(ts.sep_start_obs);
    for (int v : start_obs_tokens) tokens.push_back(v);
    LCVN_CHECK(!history_obs_tokens.empty(), "uni_infer_step: empty history");
    for (int i = 0; i < cfg.k; ++i) {
        int idx = std::max(0, int(history_obs_tokens.size()) - cfg.k + i);
        tokens.push_back(ts.sep_obs);
        for (int v : history_obs_tokens[size_t(idx)]) tokens.push_back(v);
    }
    tokens.push_back(ts.sep_action);
    for (int a : prev_action_tokens) tokens.push_back(a);
    tokens.push_back(ts.sep_target);

    UniStepResult out;
    int nb = ts.bins.n_bins();
    // first action slot: stop or a dx bin ({stop} U B_x is contiguous)
    {
        Mat logits = model.forward_fast(tokens);
        int tok = masked_argmax(logits.row(logits.rows() - 1), ts.stop_token, 1 + nb);
        tokens.push_back(tok);
        if (tok == ts.stop_token) {
            out.action = Action::stop();
            return out;
        }
    }
    for (int d = 1; d < 3; ++d) {
        Mat logits = model.forward_fast(tokens);
        tokens.push_back(masked_argmax(logits.row(logits.rows() - 1), ts.action_begin[d], nb));
    }
    out.action = bins_to_action({tokens[tokens.size() - 3], tokens[tokens.size() - 2],
                                 tokens[tokens.size() - 1]},
                                ts);
    for (int j = 0; j < cfg.m; ++j) {
        Mat logits = model.forward_fast(tokens);
        int tok = masked_argmax(logits.row(logits.rows() - 1), ts.visual_begin, ts.n_visual);
        tokens.push_back(tok);
        out.obs_token_ids.push_back(tok);
    }
    return out;
}

struct UniRolloutTrace {
    std::vector<Action> actions;
    std::vector<Observation> imagined;   // decoded predicted observations
    int ground_truth_reads_after_start = 0;  // open-loop contract instrumentation
};

// Open-loop rollout: predicted observations are fed back as history; only the
// start observation ever comes from the environment.
inline UniRolloutTrace uni_rollout(const UniModel& model, const Observation& start_obs,
                                   const std::vector<int>& instr_word_tokens, int t_max) {
    UniRolloutTrace trace;
    std::vector<int> start_tokens = obs_tokens(start_obs, model.cb, model.ts);
    std::vector<std::vector<int>> history{start_tokens};
    std::vector<int> prev = zero_action_bins(model.ts);
    for (int step = 0; step < t_max; ++step) {
        auto res = uni_infer_step(model, history, prev, instr_word_tokens, start_tokens);
        trace.actions.push_back(res.action);
        if (res.action.is_stop) break;
        std::vector<int> codes;
        for (int v : res.obs_token_ids) codes.push_back(model.ts.visual_code(v));
        trace.imagined.push_back(vq_decode(codes, model.cb));
        history.push_back(res.obs_token_ids);
        if (int(history.size()) > model.cfg.k) history.erase(history.begin());
        prev = action_to_bins(res.action, model.ts);
    }
    return trace;
}

// Imagination under forced ground-truth actions (for metric@n): predicted
// observation tokens are fed back recursively for n steps from start index t0.
inline Observation uni_imagine_forced(const UniModel& model, const Trajectory& traj, int t0,
                                      int n, InstructionStyle style) {
    LCVN_CHECK(t0 + n <= traj.n_steps(), "uni_imagine_forced: horizon exceeds trajectory");
    std::vector<int> start_tokens = obs_tokens(traj.observations.front(), model.cb, model.ts);
    std::vector<int> instr;
    for (int w : traj.instruction(style).tokens) instr.push_back(w);

    std::vector<std::vector<int>> history;
    for (int i = std::max(0, t0 - model.cfg.k + 1); i <= t0; ++i)
        history.push_back(obs_tokens(traj.observations[size_t(i)], model.cb, model.ts));

    std::vector<int> last_obs;
    for (int s = 0; s < n; ++s) {
        const TokenSpace& ts = model.ts;
        std::vector<int> prev = s == 0 ? (t0 > 0 ? action_to_bins(traj.actions[size_t(t0 - 1)], ts)
                                                 : zero_action_bins(ts))
                                       : action_to_bins(traj.actions[size_t(t0 + s - 1)], ts);
        // force the action tokens, decode only the observation
        std::vector<int> tokens{ts.bos, ts.sep_instruction};
        if (model.cfg.use_language)
            for (int w : instr) tokens.push_back(ts.text_token(w));
        tokens.push_back(ts.sep_start_obs);
        for (int v : start_tokens) tokens.push_back(v);
        for (int i = 0; i < model.cfg.k; ++i) {
            int idx = std::max(0, int(history.size()) - model.cfg.k + i);
            tokens.push_back(ts.sep_obs);
            for (int v : history[size_t(idx)]) tokens.push_back(v);
        }
        tokens.push_back(ts.sep_action);
        for (int a : prev) tokens.push_back(a);
        tokens.push_back(ts.sep_target);
        const Action& forced = traj.actions[size_t(t0 + s)];
        std::vector<int> forced_bins = forced.is_stop ? std::vector<int>{ts.stop_token}
                                                      : action_to_bins(forced, ts);
        for (int a : forced_bins) tokens.push_back(a);
        last_obs.clear();
        for (int j = 0; j < model.cfg.m; ++j) {
            Mat logits = model.forward_fast(tokens);
            int tok = masked_argmax(logits.row(logits.rows() - 1), ts.visual_begin, ts.n_visual);
            tokens.push_back(tok);
            last_obs.push_back(ts.visual_code(tok));
        }
        history.push_back([&] {
            std::vector<int> toks;
            for (int c : last_obs) toks.push_back(ts.visual_token(c));
            return toks;
        }());
        if (int(history.size()) > model.cfg.k) history.erase(history.begin());
    }
    return vq_decode(last_obs, model.cb);
}

}  // namespace lcvn
