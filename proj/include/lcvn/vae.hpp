#pragma once

#include "lcvn/datagen.hpp"
#include "lcvn/nn.hpp"

namespace lcvn {

struct VaeConfig {
    int input_dim = 32 * 32 * 3;
    int hidden = 64;
    int dz = 16;
    double beta = 1e-3;  // KL weight
};

// MLP VAE over flattened observations; sigmoid pixel head, diagonal Gaussian
// posterior. Encoding at inference returns the posterior mean.
struct Vae {
    VaeConfig cfg;
    ParamStore ps;

    void init(uint64_t seed) {
        Rng rng(mix_seed(seed, "vae-init"));
        double s1 = 1.0 / std::sqrt(double(cfg.input_dim));
        double s2 = 1.0 / std::sqrt(double(cfg.hidden));
        double s3 = 1.0 / std::sqrt(double(cfg.dz));
        ps.add("enc.w1", cfg.input_dim, cfg.hidden, s1, rng);
        ps.add_zeros("enc.b1", 1, cfg.hidden);
        ps.add("enc.w_mean", cfg.hidden, cfg.dz, s2, rng);
        ps.add_zeros("enc.b_mean", 1, cfg.dz);
        ps.add("enc.w_logvar", cfg.hidden, cfg.dz, s2, rng);
        ps.add_zeros("enc.b_logvar", 1, cfg.dz);
        ps.add("dec.w1", cfg.dz, cfg.hidden, s3, rng);
        ps.add_zeros("dec.b1", 1, cfg.hidden);
        ps.add("dec.w2", cfg.hidden, cfg.input_dim, s2, rng);
        ps.add_zeros("dec.b2", 1, cfg.input_dim);
    }

    // ---- tape paths ----

    struct Posterior {
        Var mean, logvar;
    };

    Posterior encode(Tape& t, Binder& b, Var x) const {  // x: n x input_dim
        Var h = t.tanh_(linear(t, x, b("enc.w1"), b("enc.b1")));
        return {linear(t, h, b("enc.w_mean"), b("enc.b_mean")),
                linear(t, h, b("enc.w_logvar"), b("enc.b_logvar"))};
    }

    Var decode(Tape& t, Binder& b, Var z) const {
        Var h = t.tanh_(linear(t, z, b("dec.w1"), b("dec.b1")));
        return t.sigmoid_(linear(t, h, b("dec.w2"), b("dec.b2")));
    }

    // KL(N(mean, exp(logvar)) || N(0, I)) summed over dims, averaged over rows
    static Var kl_to_standard_normal(Tape& t, Var mean, Var logvar) {
        Var term = t.sub(t.add(t.square(mean), t.exp_(logvar)),
                         t.add_scalar(logvar, 1.0));
        return t.scale(t.mean_all(t.row_sum(term)), 0.5);
    }

    // total loss on a batch with externally supplied reparameterization noise
    Var loss(Tape& t, Binder& b, const Mat& batch, const Mat& noise) const {
        Var x = t.constant(batch);
        Posterior post = encode(t, b, x);
        Var std_ = t.exp_(t.scale(post.logvar, 0.5));
        Var z = t.add(post.mean, t.mul(std_, t.constant(noise)));
        Var recon = t.mean_all(t.square(t.sub(decode(t, b, z), x)));
        Var kl = kl_to_standard_normal(t, post.mean, post.logvar);
        return t.add(recon, t.scale(kl, cfg.beta));
    }

    double train_step(const Mat& batch, uint64_t step_seed, const AdamConfig& adam) {
        Rng rng(mix_seed(step_seed, "vae-noise"));
        Mat noise(batch.rows(), cfg.dz);
        for (int i = 0; i < noise.rows(); ++i)
            for (int j = 0; j < noise.cols(); ++j) noise(i, j) = rng.normal();
        Tape t;
        Binder b(t, ps);
        Var l = loss(t, b, batch, noise);
        double lv = t.scalar(l);
        LCVN_CHECK(std::isfinite(lv), "vae: non-finite loss, aborting");
        t.backward(l);
        adam_update(ps, t, b, adam);
        return lv;
    }

    // ---- fast inference paths ----
    // Mat operands keep Eigen on the same gemm kernel as the tape path, so
    // these reproduce the tape forward bit for bit.

    Eigen::RowVectorXd encode_mean(const Eigen::RowVectorXd& x) const {
        Mat xm = x;
        Mat h = ((xm * ps.at("enc.w1")).rowwise() + ps.at("enc.b1").row(0)).array().tanh();
        Mat out = (h * ps.at("enc.w_mean")).rowwise() + ps.at("enc.b_mean").row(0);
        return out.row(0);
    }

    Eigen::RowVectorXd decode_mean(const Eigen::RowVectorXd& z) const {
        Mat zm = z;
        Mat h = ((zm * ps.at("dec.w1")).rowwise() + ps.at("dec.b1").row(0)).array().tanh();
        Mat logits = (h * ps.at("dec.w2")).rowwise() + ps.at("dec.b2").row(0);
        Mat out = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
        return out.row(0);
    }
};

inline Eigen::RowVectorXd observation_to_row(const Observation& o) {
    return Eigen::Map<const Eigen::RowVectorXd>(o.pixels.data(), long(o.pixels.size()));
}

inline Observation row_to_observation(const Eigen::RowVectorXd& row, int h, int w) {
    LCVN_CHECK(row.size() == h * w * 3, "row_to_observation: size mismatch");
    Observation o;
    o.height = h;
    o.width = w;
    o.pixels.assign(row.data(), row.data() + row.size());
    for (auto& p : o.pixels) p = std::min(1.0, std::max(0.0, p));
    return o;
}

}  // namespace lcvn
