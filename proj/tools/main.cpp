#include <CLI11.hpp>
#include <cstdio>

#include "lcvn/pipeline.hpp"

using namespace lcvn;

namespace {

int g_obs_size = 0;  // applied to both observation dimensions after parsing

void add_common_options(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--seed", cfg.seed, "global run seed");
    cmd->add_option("--out-root", cfg.out_root, "output root directory")
        ->envname("LCVN_OUTPUT_ROOT");
    cmd->add_option("--run-id", cfg.run_id, "run identifier (subdirectory of the output root)");
    cmd->add_option("--dataset-dir", cfg.dataset_dir, "dataset directory (defaults to <run>/dataset)");
    cmd->add_option("--train-style", cfg.train_style,
                    "instruction style used in training: all|concise|intricate|landmark");

    cmd->add_option("--datagen.n_train", cfg.datagen.n_train);
    cmd->add_option("--datagen.n_val_seen", cfg.datagen.n_val_seen);
    cmd->add_option("--datagen.n_val_unseen", cfg.datagen.n_val_unseen);
    cmd->add_option("--datagen.n_test", cfg.datagen.n_test);
    cmd->add_option("--datagen.n_layouts_train", cfg.datagen.n_layouts_train);
    cmd->add_option("--datagen.n_layouts_unseen", cfg.datagen.n_layouts_unseen);
    cmd->add_option("--datagen.landmarks_min", cfg.datagen.landmarks_min);
    cmd->add_option("--datagen.landmarks_max", cfg.datagen.landmarks_max);
    cmd->add_option("--datagen.max_len", cfg.datagen.max_len);
    cmd->add_option("--datagen.long_fraction", cfg.datagen.long_fraction);
    cmd->add_option("--datagen.step_size", cfg.datagen.traj.step_size);
    cmd->add_option("--datagen.obs_size", g_obs_size, "square observation side length");

    cmd->add_option("--wm.k", cfg.wm.k);
    cmd->add_option("--wm.dz", cfg.wm.dz);
    cmd->add_option("--wm.de", cfg.wm.de);
    cmd->add_option("--wm.width", cfg.wm.width);
    cmd->add_option("--wm.depth", cfg.wm.depth);
    cmd->add_option("--wm.heads", cfg.wm.heads);
    cmd->add_option("--wm.levels", cfg.wm.levels);
    cmd->add_option("--wm.sampler_steps", cfg.wm.sampler_steps);
    cmd->add_option("--wm.lr", cfg.wm.lr);
    cmd->add_option("--wm.batch", cfg.wm.batch);
    cmd->add_option("--wm.use_language", cfg.wm.use_language);
    cmd->add_option("--wm.use_action", cfg.wm.use_action);
    cmd->add_option("--wm.use_timeshift", cfg.wm.use_timeshift);
    cmd->add_option("--wm.state_space", cfg.wm.state_space);
    cmd->add_option("--wm.width_multiplier", cfg.wm.width_multiplier);
    cmd->add_option("--wm.max_timeshift", cfg.wm.max_timeshift);
    cmd->add_option("--wm.noise_context_only", cfg.wm.noise_context_only);

    cmd->add_option("--ac.gamma", cfg.ac.gamma);
    cmd->add_option("--ac.lambda_ret", cfg.ac.lambda_ret);
    cmd->add_option("--ac.horizon", cfg.ac.horizon);
    cmd->add_option("--ac.alpha1", cfg.ac.alpha1);
    cmd->add_option("--ac.alpha2", cfg.ac.alpha2);
    cmd->add_option("--ac.tau", cfg.ac.tau);
    cmd->add_option("--ac.lr", cfg.ac.lr);
    cmd->add_option("--ac.dp", cfg.ac.dp);
    cmd->add_option("--ac.hidden", cfg.ac.hidden);
    cmd->add_option("--ac.margin", cfg.ac.margin);
    cmd->add_option("--ac.rollout_sampler_steps", cfg.ac.rollout_sampler_steps);
    cmd->add_option("--ac.hold_plan", cfg.ac.hold_plan);
    cmd->add_option("--ac.use_language", cfg.ac.use_language);

    cmd->add_option("--uni.k", cfg.uni.k);
    cmd->add_option("--uni.width", cfg.uni.width);
    cmd->add_option("--uni.depth", cfg.uni.depth);
    cmd->add_option("--uni.heads", cfg.uni.heads);
    cmd->add_option("--uni.lambda_joint", cfg.uni.lambda_joint);
    cmd->add_option("--uni.lr", cfg.uni.lr);
    cmd->add_option("--uni.budget", cfg.uni.budget);
    cmd->add_option("--uni.batch", cfg.uni.batch);
    cmd->add_option("--uni.m", cfg.uni.m);
    cmd->add_option("--uni.interleave", cfg.uni.interleave);
    cmd->add_option("--uni.use_language", cfg.uni.use_language);

    cmd->add_option("--budgets.vae_steps", cfg.budgets.vae_steps);
    cmd->add_option("--budgets.vae_batch", cfg.budgets.vae_batch);
    cmd->add_option("--budgets.wm_steps", cfg.budgets.wm_steps);
    cmd->add_option("--budgets.ac_steps", cfg.budgets.ac_steps);
    cmd->add_option("--budgets.uni_steps", cfg.budgets.uni_steps);
    cmd->add_option("--budgets.uni_codebook_k", cfg.budgets.uni_codebook_k);
    cmd->add_option("--budgets.checkpoint_every", cfg.budgets.checkpoint_every);

    cmd->add_option("--eval.split", cfg.eval.split);
    cmd->add_option("--eval.family", cfg.eval.family);
    cmd->add_option("--eval.style", cfg.eval.style);
    cmd->add_option("--eval.t_max", cfg.eval.t_max);
    cmd->add_option("--eval.horizon", cfg.eval.horizon);
    cmd->add_option("--eval.n_plots", cfg.eval.n_plots);
    cmd->add_option("--eval.embedder_ckpt", cfg.eval.embedder_ckpt);
    cmd->add_option("--eval.eval_seed", cfg.eval.eval_seed);

    cmd->add_option("--ablate.axis", cfg.ablate.axis);
    cmd->add_option("--ablate.family", cfg.ablate.family);

    cmd->set_config("--config", "", "sectioned key=value run configuration file");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lcvn: language-conditioned visual navigation at desk scale"};
    app.require_subcommand(1);

    RunConfig cfg;
    cfg.uni.m = UniConfig::default_m_for_k(cfg.uni.k);

    auto* c_gen = app.add_subcommand("generate", "generate a synthetic dataset");
    auto* c_wm = app.add_subcommand("train-wm", "phase 1: train the world model");
    auto* c_ac = app.add_subcommand("train-ac", "phase 2: train the latent actor-critic");
    auto* c_uni = app.add_subcommand("train-uni", "train the unified autoregressive agent");
    auto* c_eval = app.add_subcommand("eval", "open-loop evaluation with reports and plots");
    auto* c_abl = app.add_subcommand("ablate", "train/evaluate ablation variants of one axis");
    auto* c_rep = app.add_subcommand("report", "re-render reports from a run directory");
    for (CLI::App* c : {c_gen, c_wm, c_ac, c_uni, c_eval, c_abl}) add_common_options(c, cfg);
    std::string report_dir;
    c_rep->add_option("--run-dir", report_dir, "run directory to summarize")->required();

    CLI11_PARSE(app, argc, argv);
    if (g_obs_size > 0) {
        cfg.datagen.traj.render.height = g_obs_size;
        cfg.datagen.traj.render.width = g_obs_size;
    }

    try {
        if (c_gen->parsed()) {
            cmd_generate(cfg);
            std::printf("dataset written to %s\n", cfg.dataset_path().c_str());
        } else if (c_wm->parsed()) {
            cmd_train_wm(cfg);
            std::printf("world model written to %s/wm.ckpt\n", cfg.run_dir().c_str());
        } else if (c_ac->parsed()) {
            cmd_train_ac(cfg);
            std::printf("agent written to %s/agent.ckpt\n", cfg.run_dir().c_str());
        } else if (c_uni->parsed()) {
            cmd_train_uni(cfg);
            std::printf("uni model written to %s/uni.ckpt\n", cfg.run_dir().c_str());
        } else if (c_eval->parsed()) {
            MetricsReport rep = cmd_eval(cfg);
            std::fputs(rep.table().c_str(), stdout);
        } else if (c_abl->parsed()) {
            json out = cmd_ablate(cfg);
            std::printf("ablation report written to %s/ablate_%s.json (%zu rows)\n",
                        cfg.run_dir().c_str(), cfg.ablate.axis.c_str(), out["rows"].size());
        } else if (c_rep->parsed()) {
            std::fputs(cmd_report(report_dir).c_str(), stdout);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
