#pragma once

#include <chrono>
#include <filesystem>

#include "lcvn/agent.hpp"
#include "lcvn/metrics.hpp"
#include "lcvn/plot.hpp"
#include "lcvn/uni.hpp"

namespace lcvn {

namespace fs = std::filesystem;

struct EvalConfig {
    std::string split = "val_seen";
    std::string family = "wm_ac";  // wm_ac | uni
    std::string style = "landmark";
    int t_max = 14;
    int horizon = 8;  // @n rollout horizon
    int n_plots = 6;
    std::string embedder_ckpt;  // world-model checkpoint used as the DreamSim judge
    uint64_t eval_seed = 1;
};

struct TrainBudgets {
    int vae_steps = 400;
    int vae_batch = 32;
    int wm_steps = 700;
    int ac_steps = 500;
    int uni_steps = 400;
    int uni_codebook_k = 48;
    int checkpoint_every = 200;
};

struct AblateConfig {
    std::string axis = "language";  // language | action | time | context_size |
                                    // instruction_style | latent_vs_pixel
    std::string family = "wm";      // wm | uni | both
};

struct RunConfig {
    uint64_t seed = 0;
    std::string out_root = "runs";
    std::string run_id = "run";
    std::string dataset_dir;  // defaults to <run_dir>/dataset
    std::string train_style = "all";  // instruction style(s) used in training
    DatasetConfig datagen;
    WMConfig wm;
    ACConfig ac;
    UniConfig uni;
    TrainBudgets budgets;
    EvalConfig eval;
    AblateConfig ablate;

    std::string run_dir() const { return out_root + "/" + run_id; }
    std::string dataset_path() const {
        return dataset_dir.empty() ? run_dir() + "/dataset" : dataset_dir;
    }

    json to_json() const {
        json j;
        j["seed"] = seed;
        j["run_id"] = run_id;
        j["train_style"] = train_style;
        j["datagen"] = datagen.to_json();
        j["wm"] = {{"k", wm.k},           {"dz", wm.dz},
                   {"de", wm.de},         {"width", wm.width},
                   {"depth", wm.depth},   {"heads", wm.heads},
                   {"levels", wm.levels}, {"sampler_steps", wm.sampler_steps},
                   {"lr", wm.lr},         {"batch", wm.batch},
                   {"use_language", wm.use_language},
                   {"use_action", wm.use_action},
                   {"use_timeshift", wm.use_timeshift},
                   {"state_space", wm.state_space},
                   {"width_multiplier", wm.width_multiplier},
                   {"max_timeshift", wm.max_timeshift},
                   {"noise_context_only", wm.noise_context_only}};
        j["ac"] = {{"gamma", ac.gamma},     {"lambda_ret", ac.lambda_ret},
                   {"horizon", ac.horizon}, {"alpha1", ac.alpha1},
                   {"alpha2", ac.alpha2},   {"tau", ac.tau},
                   {"lr", ac.lr},           {"dp", ac.dp},
                   {"hidden", ac.hidden},   {"margin", ac.margin},
                   {"rollout_sampler_steps", ac.rollout_sampler_steps},
                   {"hold_plan", ac.hold_plan},
                   {"use_language", ac.use_language}};
        j["uni"] = {{"k", uni.k},         {"width", uni.width},
                    {"depth", uni.depth}, {"heads", uni.heads},
                    {"lambda_joint", uni.lambda_joint},
                    {"lr", uni.lr},       {"budget", uni.budget},
                    {"batch", uni.batch}, {"m", uni.m},
                    {"interleave", uni.interleave},
                    {"use_language", uni.use_language}};
        j["budgets"] = {{"vae_steps", budgets.vae_steps},
                        {"vae_batch", budgets.vae_batch},
                        {"wm_steps", budgets.wm_steps},
                        {"ac_steps", budgets.ac_steps},
                        {"uni_steps", budgets.uni_steps},
                        {"uni_codebook_k", budgets.uni_codebook_k},
                        {"checkpoint_every", budgets.checkpoint_every}};
        j["eval"] = {{"split", eval.split},     {"family", eval.family},
                     {"style", eval.style},     {"t_max", eval.t_max},
                     {"horizon", eval.horizon}, {"n_plots", eval.n_plots},
                     {"embedder_ckpt", eval.embedder_ckpt},
                     {"eval_seed", eval.eval_seed}};
        j["ablate"] = {{"axis", ablate.axis}, {"family", ablate.family}};
        return j;
    }

    uint64_t config_hash() const { return fnv1a64(to_json().dump()); }
};

inline void write_run_manifest(const RunConfig& cfg, const std::string& dir,
                               const json& artifacts) {
    fs::create_directories(dir);
    auto now = std::chrono::system_clock::now().time_since_epoch();
    json manifest{{"format", "lcvn-run"},
                  {"version", 1},
                  {"config", cfg.to_json()},
                  {"config_hash", hex_encode_u64(cfg.config_hash())},
                  {"artifacts", artifacts},
                  {"wallclock_unix_ms",
                   std::chrono::duration_cast<std::chrono::milliseconds>(now).count()}};
    std::ofstream f(dir + "/run_manifest.json");
    f << manifest.dump(2) << "\n";
}

// ---- style selection helpers ----

inline InstructionStyle style_for_step(const RunConfig& cfg, int64_t step) {
    if (cfg.train_style == "all") return InstructionStyle(int(step % 3));
    return style_from_name(cfg.train_style);
}

// ---- generate ----

inline void cmd_generate(const RunConfig& cfg) {
    DatasetConfig dc = cfg.datagen;
    dc.seed = dc.seed ? dc.seed : cfg.seed;
    Dataset ds = build_dataset(dc);
    write_dataset(ds, cfg.dataset_path());
    json artifacts{{"dataset_dir", cfg.dataset_path()},
                   {"manifest_checksum",
                    hex_encode_u64(file_checksum(cfg.dataset_path() + "/manifest.json"))}};
    write_run_manifest(cfg, cfg.run_dir(), artifacts);
}

// ---- phase 1: world model ----

struct TrainLog {
    std::ofstream f;
    explicit TrainLog(const std::string& path, bool append) {
        f.open(path, append ? std::ios::app : std::ios::trunc);
        LCVN_CHECK(f.good(), "cannot open training log " + path);
    }
    void record(int64_t step, const json& values) {
        json j = values;
        j["step"] = step;
        f << j.dump() << "\n";
        f.flush();
    }
};

inline std::vector<std::vector<Eigen::RowVectorXd>> encode_split_latents(
    const WorldModel& wm, const std::vector<Trajectory>& trajs) {
    std::vector<std::vector<Eigen::RowVectorXd>> out;
    out.reserve(trajs.size());
    for (const auto& t : trajs) {
        std::vector<Eigen::RowVectorXd> lat;
        lat.reserve(t.observations.size());
        for (const auto& o : t.observations) lat.push_back(wm.encode_observation(o));
        out.push_back(std::move(lat));
    }
    return out;
}

// Trains the VAE, freezes it, then trains the denoiser and the instruction
// embedder jointly. Supports deterministic resume from the partial checkpoint.
inline void cmd_train_wm(const RunConfig& cfg) {
    std::string dir = cfg.run_dir();
    fs::create_directories(dir);
    Dataset ds = read_dataset(cfg.dataset_path());
    const auto& train = ds.split("train");
    RunConfig eff = cfg;  // echo the dataset-resolved configuration
    eff.datagen = ds.config;

    WorldModel wm;
    wm.cfg = cfg.wm;
    wm.cfg.obs_h = ds.config.traj.render.height;
    wm.cfg.obs_w = ds.config.traj.render.width;
    wm.init(mix_seed(cfg.seed, "wm"));

    int64_t start_vae = 0, start_ldit = 0;
    std::string partial = dir + "/wm_partial.ckpt";
    if (fs::exists(partial)) {
        Checkpoint ck = Checkpoint::load(partial);
        wm.load_params(ck);
        start_vae = std::stoll(ck.meta_at("vae_step"));
        start_ldit = std::stoll(ck.meta_at("ldit_step"));
    }

    auto save_partial = [&](int64_t vs, int64_t ls) {
        Checkpoint ck;
        ck.meta["kind"] = "worldmodel";
        ck.meta["config"] = eff.to_json().dump();
        ck.meta["param_checksum"] = hex_encode_u64(wm.parameter_checksum());
        ck.meta["vae_step"] = std::to_string(vs);
        ck.meta["ldit_step"] = std::to_string(ls);
        ck.add_section("ldit", wm.ps);
        ck.add_section("vae", wm.vae.ps);
        ck.add_section("embedder", wm.embedder.ps);
        ck.save(partial);
    };

    // stage A: VAE on observations (skipped in pixel state space)
    TrainLog log(dir + "/wm_train_log.jsonl", start_vae > 0 || start_ldit > 0);
    if (wm.cfg.state_space == "latent") {
        std::vector<const Observation*> all_obs;
        for (const auto& t : train)
            for (const auto& o : t.observations) all_obs.push_back(&o);
        AdamConfig adam;
        adam.lr = wm.cfg.vae_lr;
        for (int64_t step = start_vae; step < cfg.budgets.vae_steps; ++step) {
            Rng rng(mix_seed(cfg.seed, "vae-batch", uint64_t(step)));
            Mat batch(cfg.budgets.vae_batch, wm.vae.cfg.input_dim);
            for (int i = 0; i < cfg.budgets.vae_batch; ++i) {
                const Observation& o = *all_obs[rng.uniform_index(all_obs.size())];
                batch.row(i) = observation_to_row(o);
            }
            double loss = wm.vae.train_step(batch, mix_seed(cfg.seed, "vae-step", uint64_t(step)),
                                            adam);
            log.record(step, {{"phase", "vae"}, {"loss", loss}});
            if ((step + 1) % cfg.budgets.checkpoint_every == 0) save_partial(step + 1, 0);
        }
    }

    // stage B: diffusion-forcing training of the denoiser + embedder
    auto latents = encode_split_latents(wm, train);
    for (int64_t step = start_ldit; step < cfg.budgets.wm_steps; ++step) {
        Rng rng(mix_seed(cfg.seed, "wm-batch", uint64_t(step)));
        std::vector<const Trajectory*> batch;
        std::vector<std::vector<Eigen::RowVectorXd>> lat_batch;
        for (int i = 0; i < wm.cfg.batch; ++i) {
            size_t idx = rng.uniform_index(train.size());
            batch.push_back(&train[idx]);
            lat_batch.push_back(latents[idx]);
        }
        double loss = wm.train_step(batch, lat_batch, style_for_step(cfg, step),
                                    mix_seed(cfg.seed, "wm-step", uint64_t(step)));
        log.record(step, {{"phase", "ldit"}, {"loss", loss}});
        if ((step + 1) % cfg.budgets.checkpoint_every == 0)
            save_partial(cfg.budgets.vae_steps, step + 1);
    }

    wm.save(dir + "/wm.ckpt", eff.to_json().dump());
    json artifacts{{"wm_ckpt", dir + "/wm.ckpt"},
                   {"wm_param_checksum", hex_encode_u64(wm.parameter_checksum())},
                   {"dataset_manifest_checksum",
                    hex_encode_u64(file_checksum(cfg.dataset_path() + "/manifest.json"))}};
    write_run_manifest(cfg, dir, artifacts);
}

inline WorldModel load_worldmodel(const RunConfig& cfg, const std::string& ckpt_path) {
    LCVN_CHECK(fs::exists(ckpt_path),
               "missing world-model checkpoint: " + ckpt_path + " (run train-wm first)");
    Checkpoint ck = Checkpoint::load(ckpt_path);
    // adopt architecture fields from the checkpoint's config echo
    json j = json::parse(ck.meta_at("config"));
    WorldModel wm;
    wm.cfg = cfg.wm;
    wm.cfg.k = j["wm"]["k"];
    wm.cfg.dz = j["wm"]["dz"];
    wm.cfg.de = j["wm"]["de"];
    wm.cfg.width = j["wm"]["width"];
    wm.cfg.depth = j["wm"]["depth"];
    wm.cfg.heads = j["wm"]["heads"];
    wm.cfg.levels = j["wm"]["levels"];
    wm.cfg.sampler_steps = j["wm"]["sampler_steps"];
    wm.cfg.use_language = j["wm"]["use_language"];
    wm.cfg.use_action = j["wm"]["use_action"];
    wm.cfg.use_timeshift = j["wm"]["use_timeshift"];
    wm.cfg.state_space = j["wm"]["state_space"];
    wm.cfg.width_multiplier = j["wm"]["width_multiplier"];
    wm.cfg.obs_h = j["datagen"]["obs_height"];
    wm.cfg.obs_w = j["datagen"]["obs_width"];
    wm.init(mix_seed(uint64_t(j["seed"]), "wm"));
    wm.load_params(ck);
    return wm;
}

// ---- phase 2: actor-critic ----

inline void cmd_train_ac(const RunConfig& cfg) {
    std::string dir = cfg.run_dir();
    fs::create_directories(dir);
    Dataset ds = read_dataset(cfg.dataset_path());
    const auto& train = ds.split("train");
    RunConfig eff = cfg;
    eff.datagen = ds.config;
    WorldModel wm = load_worldmodel(cfg, dir + "/wm.ckpt");
    uint64_t wm_sum = wm.parameter_checksum();

    Agent agent;
    agent.cfg = cfg.ac;
    agent.init(mix_seed(cfg.seed, "agent"), wm.cfg.state_dim(), wm.cfg.de);

    int64_t start = 0;
    std::string partial = dir + "/agent_partial.ckpt";
    if (fs::exists(partial)) {
        Checkpoint ck = Checkpoint::load(partial);
        agent.load_params(ck);
        start = std::stoll(ck.meta_at("step"));
        LCVN_CHECK(ck.meta_at("wm_checksum") == hex_encode_u64(wm_sum),
                   "agent resume: world-model checksum changed mid-run, refusing to continue");
    }

    auto latents = encode_split_latents(wm, train);
    TrainLog log(dir + "/ac_train_log.jsonl", start > 0);
    for (int64_t step = start; step < cfg.budgets.ac_steps; ++step) {
        Rng rng(mix_seed(cfg.seed, "ac-batch", uint64_t(step)));
        size_t idx = rng.uniform_index(train.size());
        InstructionStyle style = style_for_step(cfg, step);
        std::vector<std::vector<int>> negatives;
        for (int i = 0; i < 2; ++i) {
            size_t other = rng.uniform_index(train.size());
            if (other != idx)
                negatives.push_back(train[other].instruction(style).tokens);
        }
        auto losses =
            ac_train_step(agent, wm, wm_sum, latents[idx], train[idx].instruction(style).tokens,
                          negatives, mix_seed(cfg.seed, "ac-step", uint64_t(step)));
        log.record(step, {{"phase", "ac"},
                          {"loss", losses.total},
                          {"critic", losses.critic},
                          {"actor", losses.actor},
                          {"kl", losses.kl},
                          {"ins", losses.ins},
                          {"intrinsic", losses.mean_intrinsic}});
        if ((step + 1) % cfg.budgets.checkpoint_every == 0) {
            Checkpoint ck;
            ck.meta["kind"] = "agent";
            ck.meta["config"] = eff.to_json().dump();
            ck.meta["wm_checksum"] = hex_encode_u64(wm_sum);
            ck.meta["step"] = std::to_string(step + 1);
            ck.add_section("agent", agent.ps);
            ck.add_section("target_critic", agent.target_ps);
            ck.save(partial);
        }
    }
    LCVN_CHECK(wm.parameter_checksum() == wm_sum,
               "train-ac: world-model parameters changed during phase 2");
    agent.save(dir + "/agent.ckpt", eff.to_json().dump(), wm_sum);
    json artifacts{{"agent_ckpt", dir + "/agent.ckpt"},
                   {"wm_param_checksum", hex_encode_u64(wm_sum)}};
    write_run_manifest(cfg, dir, artifacts);
}

inline Agent load_agent(const RunConfig& cfg, const WorldModel& wm,
                        const std::string& ckpt_path) {
    LCVN_CHECK(fs::exists(ckpt_path),
               "missing agent checkpoint: " + ckpt_path + " (run train-ac first)");
    Checkpoint ck = Checkpoint::load(ckpt_path);
    json j = json::parse(ck.meta_at("config"));
    Agent agent;
    agent.cfg = cfg.ac;
    agent.cfg.dp = j["ac"]["dp"];
    agent.cfg.hidden = j["ac"]["hidden"];
    agent.cfg.use_language = j["ac"]["use_language"];
    agent.init(mix_seed(uint64_t(j["seed"]), "agent"), wm.cfg.state_dim(), wm.cfg.de);
    agent.load_params(ck);
    return agent;
}

// ---- phase: unified agent ----

inline void cmd_train_uni(const RunConfig& cfg) {
    std::string dir = cfg.run_dir();
    fs::create_directories(dir);
    Dataset ds = read_dataset(cfg.dataset_path());
    const auto& train = ds.split("train");
    RunConfig eff = cfg;
    eff.datagen = ds.config;

    UniConfig ucfg = cfg.uni;
    ucfg.obs_h = ds.config.traj.render.height;
    ucfg.obs_w = ds.config.traj.render.width;
    ucfg.patch = UniConfig::patch_for_m(ucfg.obs_h, ucfg.m);
    ucfg.validate();
    eff.uni = ucfg;

    // stage A: frozen VQ tokenizer from training observations
    std::vector<Observation> obs_set;
    {
        Rng rng(mix_seed(cfg.seed, "uni-cb"));
        for (const auto& t : train)
            for (const auto& o : t.observations)
                if (rng.uniform() < 0.5 || obs_set.size() < 64) obs_set.push_back(o);
    }
    Codebook cb = train_codebook(obs_set, cfg.budgets.uni_codebook_k, ucfg.patch,
                                 mix_seed(cfg.seed, "uni-kmeans"));
    TokenSpace ts = TokenSpace::build(BinSpec{}, Vocabulary::instance().size(), cb.k);

    UniModel model;
    model.cfg = ucfg;
    model.init(mix_seed(cfg.seed, "uni"), ts, cb);

    int64_t start = 0;
    std::string partial = dir + "/uni_partial.ckpt";
    if (fs::exists(partial)) {
        Checkpoint ck = Checkpoint::load(partial);
        model.load_params(ck);
        start = std::stoll(ck.meta_at("step"));
    }

    TrainLog log(dir + "/uni_train_log.jsonl", start > 0);
    for (int64_t step = start; step < cfg.budgets.uni_steps; ++step) {
        Rng rng(mix_seed(cfg.seed, "uni-batch", uint64_t(step)));
        std::vector<UniSequence> batch;
        InstructionStyle style = style_for_step(cfg, step);
        for (int i = 0; i < ucfg.batch; ++i) {
            const Trajectory& traj = train[rng.uniform_index(train.size())];
            int t = int(rng.uniform_index(size_t(traj.n_steps())));
            batch.push_back(build_sample(traj, t, style, ts, cb, ucfg));
        }
        auto losses = uni_train_step(model, batch, mix_seed(cfg.seed, "uni-step", uint64_t(step)),
                                     step);
        log.record(step, {{"phase", "uni"},
                          {"loss", losses.total},
                          {"plan", losses.plan},
                          {"imagine", losses.imagine}});
        if ((step + 1) % cfg.budgets.checkpoint_every == 0) {
            model.save(partial, eff.to_json().dump());
            Checkpoint ck = Checkpoint::load(partial);
            ck.meta["step"] = std::to_string(step + 1);
            ck.save(partial);
        }
    }
    model.save(dir + "/uni.ckpt", eff.to_json().dump());
    json artifacts{{"uni_ckpt", dir + "/uni.ckpt"},
                   {"uni_param_checksum", hex_encode_u64(model.ps.checksum())}};
    write_run_manifest(cfg, dir, artifacts);
}

inline UniModel load_uni(const RunConfig& cfg, const Dataset& ds, const std::string& ckpt_path) {
    LCVN_CHECK(fs::exists(ckpt_path),
               "missing uni checkpoint: " + ckpt_path + " (run train-uni first)");
    Checkpoint ck = Checkpoint::load(ckpt_path);
    json j = json::parse(ck.meta_at("config"));
    Codebook cb = UniModel::codebook_from_checkpoint(ck);
    TokenSpace ts = TokenSpace::build(BinSpec{}, Vocabulary::instance().size(), cb.k);
    UniModel model;
    model.cfg = cfg.uni;
    model.cfg.k = j["uni"]["k"];
    model.cfg.width = j["uni"]["width"];
    model.cfg.depth = j["uni"]["depth"];
    model.cfg.heads = j["uni"]["heads"];
    model.cfg.m = j["uni"]["m"];
    model.cfg.use_language = j["uni"]["use_language"];
    model.cfg.obs_h = ds.config.traj.render.height;
    model.cfg.obs_w = ds.config.traj.render.width;
    model.cfg.patch = UniConfig::patch_for_m(model.cfg.obs_h, model.cfg.m);
    model.init(mix_seed(uint64_t(j["seed"]), "uni"), ts, cb);
    model.load_params(ck);
    return model;
}

// ---- evaluation ----

struct WmImaginer : RolloutImaginer {
    const WorldModel* wm;
    InstructionStyle style;
    uint64_t seed;
    WmImaginer(const WorldModel& w, InstructionStyle s, uint64_t sd)
        : wm(&w), style(s), seed(sd) {}
    Observation imagine(const Trajectory& traj, int t0, int n) override {
        std::vector<Eigen::RowVectorXd> win;
        for (int i = std::max(0, t0 - wm->cfg.k + 1); i <= t0; ++i)
            win.push_back(wm->encode_observation(traj.observations[size_t(i)]));
        Eigen::RowVectorXd cur;
        for (int i = 0; i < n; ++i) {
            cur = wm->predict_next_latent(win, traj.actions[size_t(t0 + i)],
                                          traj.instruction(style).tokens, 1,
                                          wm->cfg.sampler_steps,
                                          mix_seed(seed, "imagine", uint64_t(i)));
            win.push_back(cur);
            if (int(win.size()) > wm->cfg.k) win.erase(win.begin());
        }
        return wm->decode_state(cur);
    }
};

struct UniImaginer : RolloutImaginer {
    const UniModel* model;
    InstructionStyle style;
    UniImaginer(const UniModel& m, InstructionStyle s) : model(&m), style(s) {}
    Observation imagine(const Trajectory& traj, int t0, int n) override {
        return uni_imagine_forced(*model, traj, t0, n, style);
    }
};

struct DreamSimJudge {
    ImageEmbedder f_img;
    TextEmbedder f_text;
    std::string description;
};

// Default judge: the trained VAE encoder and instruction embedder, projected
// to a shared dimension by fixed seeded Gaussian maps. Falls back to fixed
// random projections when no world-model checkpoint is available.
inline DreamSimJudge make_dreamsim_judge(const WorldModel* wm, int d_align = 16) {
    DreamSimJudge judge;
    if (wm) {
        int dz = wm->cfg.state_dim(), de = wm->cfg.de;
        Rng rng(0xD12EA);
        Mat proj_img(dz, d_align), proj_text(de, d_align);
        for (int i = 0; i < proj_img.size(); ++i)
            proj_img(i / d_align, i % d_align) = rng.normal() / std::sqrt(double(dz));
        for (int i = 0; i < proj_text.size(); ++i)
            proj_text(i / d_align, i % d_align) = rng.normal() / std::sqrt(double(de));
        const WorldModel* w = wm;
        judge.f_img = [w, proj_img](const Observation& o) {
            return Eigen::RowVectorXd(w->encode_observation(o) * proj_img);
        };
        judge.f_text = [w, proj_text](const std::vector<int>& tokens) {
            return Eigen::RowVectorXd(w->embedder.pooled_vector(tokens) * proj_text);
        };
        judge.description = "trained VAE encoder + instruction embedder, fixed projection";
    } else {
        Rng rng(0xD12EA);
        int d_img = 32 * 32 * 3;
        Mat proj_text(64, d_align);
        for (int i = 0; i < proj_text.size(); ++i)
            proj_text(i / d_align, i % d_align) = rng.normal();
        uint64_t img_seed = rng.next_u64();
        judge.f_img = [img_seed, d_align, d_img](const Observation& o) {
            Rng r(img_seed);
            Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(d_align);
            for (size_t i = 0; i < o.pixels.size() && int(i) < d_img; ++i) {
                for (int j = 0; j < d_align; ++j) out(j) += o.pixels[i] * r.normal();
            }
            return out;
        };
        judge.f_text = [proj_text, d_align](const std::vector<int>& tokens) {
            Eigen::RowVectorXd hist = Eigen::RowVectorXd::Zero(64);
            for (int t : tokens)
                if (t >= 0 && t < 64) hist(t) += 1.0;
            return Eigen::RowVectorXd(hist * proj_text);
        };
        judge.description = "fixed random projections (no trained judge available)";
    }
    return judge;
}

inline void pad_to(PoseTrace& trace, size_t n) {
    while (trace.size() < n) trace.push_back(trace.back());
}

inline MetricsReport cmd_eval(const RunConfig& cfg) {
    std::string dir = cfg.run_dir();
    fs::create_directories(dir + "/plots");
    Dataset ds = read_dataset(cfg.dataset_path());
    const auto& split = ds.split(cfg.eval.split);
    LCVN_CHECK(!split.empty(), "eval: split is empty: " + cfg.eval.split);
    InstructionStyle style = style_from_name(cfg.eval.style);

    MetricsReport rep;
    rep.split = cfg.eval.split;
    rep.family = cfg.eval.family;
    rep.metric_horizon = cfg.eval.horizon;

    std::optional<WorldModel> wm;
    std::optional<Agent> agent;
    std::optional<UniModel> uni;
    std::optional<WorldModel> judge_wm;
    if (cfg.eval.family == "wm_ac") {
        wm.emplace(load_worldmodel(cfg, dir + "/wm.ckpt"));
        agent.emplace(load_agent(cfg, *wm, dir + "/agent.ckpt"));
    } else if (cfg.eval.family == "uni") {
        uni.emplace(load_uni(cfg, ds, dir + "/uni.ckpt"));
    } else {
        throw std::runtime_error("lcvn: unknown eval family " + cfg.eval.family);
    }
    std::string judge_path = cfg.eval.embedder_ckpt;
    if (judge_path.empty() && fs::exists(dir + "/wm.ckpt")) judge_path = dir + "/wm.ckpt";
    if (!judge_path.empty() && fs::exists(judge_path)) judge_wm.emplace(load_worldmodel(cfg, judge_path));
    DreamSimJudge judge = make_dreamsim_judge(judge_wm ? &*judge_wm : nullptr);

    std::unique_ptr<RolloutImaginer> imaginer;
    if (wm)
        imaginer = std::make_unique<WmImaginer>(*wm, style, cfg.eval.eval_seed);
    else
        imaginer = std::make_unique<UniImaginer>(*uni, style);

    std::vector<double> horizon_ns{1, 2, 4, double(cfg.eval.horizon)};
    std::map<int, std::pair<double, int>> ssim_by_n;

    int plot_count = 0;
    for (size_t ti = 0; ti < split.size(); ++ti) {
        const Trajectory& traj = split[ti];
        const auto& instr = traj.instruction(style).tokens;
        TrajectoryMetrics row;
        row.id = traj.id;

        std::vector<Action> exec;
        std::vector<Observation> imagined_frames;
        if (wm) {
            auto trace = navigate(*wm, *agent, traj.observations[0], instr, cfg.eval.t_max,
                                  mix_seed(cfg.eval.eval_seed, "nav", ti));
            exec = trace.actions;
            for (size_t i = 1; i < trace.latents.size(); ++i)
                imagined_frames.push_back(wm->decode_state(trace.latents[i]));
        } else {
            auto trace = uni_rollout(*uni, traj.observations[0], instr, cfg.eval.t_max);
            exec = trace.actions;
            imagined_frames = trace.imagined;
        }

        PoseTrace pred = integrate_actions(traj.poses[0], exec);
        PoseTrace ref = traj.poses;
        size_t common = std::max(pred.size(), ref.size());
        pad_to(pred, common);
        pad_to(ref, common);
        row.pred_len = int(exec.size());
        row.ref_len = traj.n_steps();
        row.ate_v = ate(pred, ref);
        row.rpe_v = rpe(pred, ref);
        double gd = std::hypot(pred.back().x - traj.goal_x, pred.back().y - traj.goal_y);
        row.success = gd < traj.average_step_size;

        auto m_ssim = [](const Observation& a, const Observation& b) { return ssim(a, b); };
        auto m_psnr = [](const Observation& a, const Observation& b) { return psnr(a, b); };
        if (auto v = metric_at_n(*imaginer, traj, 1, m_ssim)) row.ssim_1 = *v;
        if (auto v = metric_at_n(*imaginer, traj, 1, m_psnr)) row.psnr_1 = *v;
        row.ssim_n = metric_at_n(*imaginer, traj, cfg.eval.horizon, m_ssim);
        row.psnr_n = metric_at_n(*imaginer, traj, cfg.eval.horizon, m_psnr);
        if (!row.ssim_n) ++rep.skipped_at_n;

        if (imagined_frames.empty()) imagined_frames.push_back(traj.observations[0]);
        row.dreamsim_v = dreamsim_score(imagined_frames, instr, judge.f_img, judge.f_text).score;
        if (row.ssim_n) {
            Observation far = imaginer->imagine(traj, 0, cfg.eval.horizon);
            row.dreamsim_n =
                dreamsim_score({far}, instr, judge.f_img, judge.f_text).score;
        }

        for (double dn : horizon_ns) {
            int n = int(dn);
            if (auto v = metric_at_n(*imaginer, traj, n, m_ssim)) {
                auto& acc = ssim_by_n[n];
                acc.first += *v;
                acc.second += 1;
            }
        }

        if (plot_count < cfg.eval.n_plots) {
            SvgPlot plot;
            plot.fit({&ref, &pred});
            plot.polyline(ref, "#2266cc", 2.0, false);
            plot.polyline(pred, "#cc3322", 2.0, true);
            plot.marker(traj.goal_x, traj.goal_y, "#22aa55", 6.0);
            plot.label(8, 16, "reference (solid) vs predicted (dashed), goal marked");
            plot.save(dir + "/plots/traj_" + traj.id + ".svg");
            ++plot_count;
        }
        rep.rows.push_back(row);
    }

    // metric-vs-horizon curve
    {
        CurvePlot cp;
        std::vector<double> xs, ys;
        for (auto& [n, acc] : ssim_by_n)
            if (acc.second > 0) {
                xs.push_back(double(n));
                ys.push_back(acc.first / acc.second);
            }
        if (!xs.empty()) {
            cp.max_x = xs.back();
            cp.series(xs, ys, "#2266cc");
            cp.label(48, 20, "mean SSIM@n vs horizon n");
            cp.save(dir + "/plots/ssim_vs_horizon.svg");
        }
    }

    rep.provenance = json{{"config_hash", hex_encode_u64(cfg.config_hash())},
                          {"dataset_manifest_checksum",
                           hex_encode_u64(file_checksum(cfg.dataset_path() + "/manifest.json"))},
                          {"dreamsim_judge", judge.description},
                          {"eval_seed", cfg.eval.eval_seed},
                          {"style", cfg.eval.style}};
    if (wm) rep.provenance["wm_param_checksum"] = hex_encode_u64(wm->parameter_checksum());
    if (uni) rep.provenance["uni_param_checksum"] = hex_encode_u64(uni->ps.checksum());

    std::string suffix = "_" + cfg.eval.family + "_" + cfg.eval.split;
    {
        std::ofstream f(dir + "/report" + suffix + ".json");
        f << rep.to_json().dump(2) << "\n";
    }
    {
        std::ofstream f(dir + "/report" + suffix + ".txt");
        f << rep.table();
    }
    write_run_manifest(cfg, dir,
                       json{{"report", dir + "/report" + suffix + ".json"},
                            {"provenance", rep.provenance}});
    return rep;
}

// ---- ablations ----

struct AblationVariant {
    std::string name;
    RunConfig cfg;
    bool needs_training = true;
};

inline void train_family(const RunConfig& cfg, const std::string& family) {
    if (family == "wm_ac") {
        cmd_train_wm(cfg);
        cmd_train_ac(cfg);
    } else if (family == "uni") {
        cmd_train_uni(cfg);
    } else {
        throw std::runtime_error("lcvn: unknown family " + family);
    }
}

inline std::vector<AblationVariant> ablation_variants(const RunConfig& base,
                                                      const std::string& family) {
    std::vector<AblationVariant> out;
    const std::string& axis = base.ablate.axis;
    auto push = [&](const std::string& name, const std::function<void(RunConfig&)>& mutate,
                    bool needs_training = true) {
        AblationVariant v;
        v.name = name;
        v.cfg = base;
        v.cfg.run_id = base.run_id + "/ablate_" + axis + "/" + name;
        v.cfg.dataset_dir = base.dataset_path();  // variants share the dataset
        v.cfg.eval.family = family;
        mutate(v.cfg);
        v.needs_training = needs_training;
        out.push_back(std::move(v));
    };

    if (axis == "language") {
        push("base", [&](RunConfig&) {});
        push("no_language", [&](RunConfig& c) {
            c.wm.use_language = false;
            c.ac.use_language = false;
            c.uni.use_language = false;
        });
    } else if (axis == "action") {
        push("base", [](RunConfig&) {});
        push("no_action", [](RunConfig& c) { c.wm.use_action = false; });
    } else if (axis == "time") {
        push("base", [](RunConfig&) {});
        push("no_timeshift", [](RunConfig& c) { c.wm.use_timeshift = false; });
    } else if (axis == "context_size") {
        for (int k : {1, 2, 4})
            push("k" + std::to_string(k), [k](RunConfig& c) {
                c.wm.k = k;
                c.uni.k = k;
                c.uni.m = UniConfig::default_m_for_k(k);
            });
    } else if (axis == "instruction_style") {
        // training is shared; variants differ only in the eval conditioning style
        for (const char* s : {"concise", "intricate", "landmark"})
            push(s, [s](RunConfig& c) { c.eval.style = s; });
    } else if (axis == "latent_vs_pixel") {
        push("latent", [](RunConfig& c) { c.wm.state_space = "latent"; });
        push("pixel", [](RunConfig& c) { c.wm.state_space = "pixel"; });
    } else {
        throw std::runtime_error("lcvn: unknown ablation axis " + axis);
    }
    return out;
}

// Trains and evaluates every variant of the configured axis with shared seeds
// and emits a per-axis delta table. The instruction_style axis reuses one
// trained model across eval-style variants.
inline json cmd_ablate(const RunConfig& base) {
    std::vector<std::string> families;
    if (base.ablate.family == "both") {
        families = {"wm_ac", "uni"};
    } else if (base.ablate.family == "wm") {
        families = {"wm_ac"};
    } else if (base.ablate.family == "uni") {
        families = {"uni"};
    } else {
        throw std::runtime_error("lcvn: unknown ablate family " + base.ablate.family);
    }
    LCVN_CHECK(fs::exists(base.dataset_path() + "/manifest.json"),
               "ablate: dataset missing, run generate first");

    json rows = json::array();
    for (const std::string& family : families) {
        std::vector<AblationVariant> variants = ablation_variants(base, family);
        bool style_axis = base.ablate.axis == "instruction_style";
        std::string shared_dir;
        std::string judge_ckpt;
        for (size_t vi = 0; vi < variants.size(); ++vi) {
            auto& v = variants[vi];
            if (style_axis && vi > 0) {
                // reuse the first variant's checkpoints
                fs::create_directories(v.cfg.run_dir());
                for (const char* f : {"wm.ckpt", "agent.ckpt", "uni.ckpt"})
                    if (fs::exists(shared_dir + "/" + f))
                        fs::copy_file(shared_dir + "/" + f, v.cfg.run_dir() + std::string("/") + f,
                                      fs::copy_options::overwrite_existing);
            } else {
                train_family(v.cfg, family);
                if (shared_dir.empty()) shared_dir = v.cfg.run_dir();
            }
            // score all variants of an axis with the same DreamSim judge: the
            // first (base) variant's world model when one exists
            if (vi == 0 && family == "wm_ac") judge_ckpt = v.cfg.run_dir() + "/wm.ckpt";
            if (!judge_ckpt.empty()) v.cfg.eval.embedder_ckpt = judge_ckpt;
            MetricsReport rep = cmd_eval(v.cfg);
            rows.push_back(json{{"family", family},
                                {"variant", v.name},
                                {"run_dir", v.cfg.run_dir()},
                                {"config_hash", hex_encode_u64(v.cfg.config_hash())},
                                {"sr", rep.sr()},
                                {"ate", rep.ate_mean()},
                                {"rpe", rep.rpe_mean()},
                                {"ssim", rep.ssim_mean()},
                                {"dreamsim", rep.dreamsim_dist()},
                                {"ssim_at_n", rep.ssim_at_n()},
                                {"provenance", rep.provenance}});
        }
    }

    json out{{"axis", base.ablate.axis},
             {"families", families},
             {"rows", rows},
             {"config_hash", hex_encode_u64(base.config_hash())}};
    fs::create_directories(base.run_dir());
    std::ofstream f(base.run_dir() + "/ablate_" + base.ablate.axis + ".json");
    f << out.dump(2) << "\n";

    std::ofstream tf(base.run_dir() + "/ablate_" + base.ablate.axis + ".txt");
    tf << "axis: " << base.ablate.axis << "\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-8s %-14s %8s %8s %8s %8s %10s\n", "family", "variant",
                  "ATE", "RPE", "SR", "SSIM", "DreamSim");
    tf << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-8s %-14s %8.4f %8.4f %8.4f %8.4f %10.4f\n",
                      r["family"].get<std::string>().c_str(),
                      r["variant"].get<std::string>().c_str(), r["ate"].get<double>(),
                      r["rpe"].get<double>(), r["sr"].get<double>(), r["ssim"].get<double>(),
                      r["dreamsim"].get<double>());
        tf << buf;
    }
    write_run_manifest(base, base.run_dir(),
                       json{{"ablate_report", base.run_dir() + "/ablate_" + base.ablate.axis +
                                                  ".json"}});
    return out;
}

// re-render the tables from a run directory's machine-readable reports
inline std::string cmd_report(const std::string& run_dir_path) {
    std::string out;
    for (const auto& entry : fs::directory_iterator(run_dir_path)) {
        std::string name = entry.path().filename().string();
        if (name.rfind("report_", 0) == 0 && entry.path().extension() == ".json") {
            std::ifstream f(entry.path());
            json j = json::parse(f);
            out += "== " + name + " ==\n";
            out += "split=" + j["split"].get<std::string>() +
                   " family=" + j["family"].get<std::string>() + "\n";
            const auto& a = j["aggregate"];
            char buf[256];
            std::snprintf(buf, sizeof buf, "ATE=%.4f RPE=%.4f SR=%.4f SSIM=%.4f PSNR=%.3f DreamSim=%.4f\n",
                          a["ate"].get<double>(), a["rpe"].get<double>(), a["sr"].get<double>(),
                          a["ssim"].get<double>(), a["psnr"].get<double>(),
                          a["dreamsim"].get<double>());
            out += buf;
        }
        if (name.rfind("ablate_", 0) == 0 && entry.path().extension() == ".txt") {
            std::ifstream f(entry.path());
            out += "== " + name + " ==\n";
            out += std::string(std::istreambuf_iterator<char>(f), {});
        }
    }
    if (out.empty()) out = "no reports found in " + run_dir_path + "\n";
    return out;
}

}  // namespace lcvn
