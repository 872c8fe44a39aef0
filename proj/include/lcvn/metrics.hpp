#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>

#include <json.hpp>

#include "lcvn/datagen.hpp"
#include "lcvn/geometry.hpp"

namespace lcvn {

using PoseTrace = std::vector<Pose>;

// mean of indicator[ final distance to goal < step size ], strict inequality
inline double success_rate(const std::vector<PoseTrace>& preds,
                           const std::vector<std::pair<double, double>>& goals,
                           const std::vector<double>& step_sizes) {
    LCVN_CHECK(!preds.empty(), "success_rate: empty trajectory list");
    LCVN_CHECK(preds.size() == goals.size() && goals.size() == step_sizes.size(),
               "success_rate: misaligned lists");
    double hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        LCVN_CHECK(!preds[i].empty(), "success_rate: empty trace");
        const Pose& last = preds[i].back();
        double d = std::hypot(last.x - goals[i].first, last.y - goals[i].second);
        if (d < step_sizes[i]) hits += 1.0;
    }
    return hits / double(preds.size());
}

// least-squares SE(2) alignment (rotation + translation) of pred onto ref
inline PoseTrace align_trace(const PoseTrace& pred, const PoseTrace& ref) {
    LCVN_CHECK(pred.size() == ref.size() && !pred.empty(), "align_trace: length mismatch");
    double pcx = 0, pcy = 0, rcx = 0, rcy = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        pcx += pred[i].x;
        pcy += pred[i].y;
        rcx += ref[i].x;
        rcy += ref[i].y;
    }
    double n = double(pred.size());
    pcx /= n, pcy /= n, rcx /= n, rcy /= n;
    double sxx = 0, sxy = 0, syx = 0, syy = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double px = pred[i].x - pcx, py = pred[i].y - pcy;
        double rx = ref[i].x - rcx, ry = ref[i].y - rcy;
        sxx += px * rx;
        sxy += px * ry;
        syx += py * rx;
        syy += py * ry;
    }
    double theta = std::atan2(sxy - syx, sxx + syy);
    double c = std::cos(theta), s = std::sin(theta);
    PoseTrace out = pred;
    for (auto& p : out) {
        double px = p.x - pcx, py = p.y - pcy;
        p.x = c * px - s * py + rcx;
        p.y = s * px + c * py + rcy;
        p.yaw = normalize_angle(p.yaw + theta);
    }
    return out;
}

// RMS Euclidean position error over aligned poses. Both traces share the same
// start by construction (open-loop from a common origin), so no alignment is
// applied unless requested.
inline double ate(const PoseTrace& pred, const PoseTrace& ref, bool least_squares_align = false) {
    LCVN_CHECK(pred.size() == ref.size(), "ate: trace length mismatch");
    LCVN_CHECK(!pred.empty(), "ate: empty traces");
    const PoseTrace& p = least_squares_align ? align_trace(pred, ref) : pred;
    double acc = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        double dx = p[i].x - ref[i].x, dy = p[i].y - ref[i].y;
        acc += dx * dx + dy * dy;
    }
    return std::sqrt(acc / double(p.size()));
}

// RMS translational error of per-step relative motion (delta = 1)
inline double rpe(const PoseTrace& pred, const PoseTrace& ref) {
    LCVN_CHECK(pred.size() == ref.size(), "rpe: trace length mismatch");
    LCVN_CHECK(pred.size() >= 2, "rpe: need at least two poses");
    double acc = 0;
    for (size_t i = 0; i + 1 < pred.size(); ++i) {
        Action rp = relative_step(pred[i], pred[i + 1]);
        Action rr = relative_step(ref[i], ref[i + 1]);
        // error motion: (ref step)^-1 o (pred step), translational part
        double c = std::cos(rr.dyaw), s = std::sin(rr.dyaw);
        double ex = rp.dx - rr.dx, ey = rp.dy - rr.dy;
        // expressed in the ref step's end frame; rotation does not change the norm
        double tx = c * ex + s * ey, ty = -s * ex + c * ey;
        acc += tx * tx + ty * ty;
    }
    return std::sqrt(acc / double(pred.size() - 1));
}

// ---- image metrics ----

// standard windowed SSIM: uniform 7x7 windows, per channel, averaged;
// C1 = (0.01 R)^2, C2 = (0.03 R)^2 with R = 1
inline double ssim(const Observation& a, const Observation& b, int window = 7) {
    LCVN_CHECK(a.height == b.height && a.width == b.width, "ssim: shape mismatch");
    LCVN_CHECK(a.height >= window && a.width >= window, "ssim: image smaller than window");
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    int count = 0;
    double inv_n = 1.0 / double(window * window);
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r + window <= a.height; ++r)
            for (int c = 0; c + window <= a.width; ++c) {
                double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < window; ++i)
                    for (int j = 0; j < window; ++j) {
                        double x = a.at(r + i, c + j, ch), y = b.at(r + i, c + j, ch);
                        sx += x;
                        sy += y;
                        sxx += x * x;
                        syy += y * y;
                        sxy += x * y;
                    }
                double mx = sx * inv_n, my = sy * inv_n;
                double vx = sxx * inv_n - mx * mx;
                double vy = syy * inv_n - my * my;
                double cov = sxy * inv_n - mx * my;
                double v = ((2 * mx * my + c1) * (2 * cov + c2)) /
                           ((mx * mx + my * my + c1) * (vx + vy + c2));
                total += v;
                ++count;
            }
    return total / double(count);
}

// PSNR in dB, capped at 100 dB when the MSE falls below 1e-10
inline double psnr(const Observation& a, const Observation& b) {
    LCVN_CHECK(a.height == b.height && a.width == b.width && a.pixels.size() == b.pixels.size(),
               "psnr: shape mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        double d = a.pixels[i] - b.pixels[i];
        mse += d * d;
    }
    mse /= double(a.pixels.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

// Open-loop rollout interface for metric@n: predict the observation n steps
// past t0 by recursively feeding predictions back under ground-truth actions.
struct RolloutImaginer {
    virtual ~RolloutImaginer() = default;
    virtual Observation imagine(const Trajectory& traj, int t0, int n) = 0;
};

using ImageMetric = std::function<double(const Observation&, const Observation&)>;

// metric@n from start index 0; nullopt when the trajectory is too short
// (callers count skips in the report)
inline std::optional<double> metric_at_n(RolloutImaginer& model, const Trajectory& traj, int n,
                                         const ImageMetric& metric) {
    LCVN_CHECK(n >= 1, "metric_at_n: n must be >= 1");
    if (traj.n_steps() <= n) return std::nullopt;
    Observation pred = model.imagine(traj, 0, n);
    return metric(traj.observations[size_t(n)], pred);
}

// ---- DreamSim-style semantic consistency ----

using ImageEmbedder = std::function<Eigen::RowVectorXd(const Observation&)>;
using TextEmbedder = std::function<Eigen::RowVectorXd(const std::vector<int>&)>;

struct DreamSimResult {
    double score = 0.0;     // mean cosine similarity (the similarity form)
    int zero_norm_terms = 0;  // terms contributing 0 due to a zero-norm embedding
};

// mean over images of cosine(f_img(I_i), f_text(T)); zero-norm embeddings
// contribute 0 and are counted
inline DreamSimResult dreamsim_score(const std::vector<Observation>& images,
                                     const std::vector<int>& instruction_tokens,
                                     const ImageEmbedder& f_img, const TextEmbedder& f_text) {
    DreamSimResult out;
    LCVN_CHECK(!images.empty(), "dreamsim: no images");
    Eigen::RowVectorXd te = f_text(instruction_tokens);
    double tn = te.norm();
    double acc = 0;
    for (const auto& img : images) {
        Eigen::RowVectorXd ie = f_img(img);
        LCVN_CHECK(ie.size() == te.size(), "dreamsim: embedder dimensions differ");
        double in_ = ie.norm();
        if (tn == 0.0 || in_ == 0.0) {
            ++out.zero_norm_terms;
            continue;
        }
        acc += ie.dot(te.transpose()) / (in_ * tn);
    }
    out.score = acc / double(images.size());
    return out;
}

// ---- report ----

struct TrajectoryMetrics {
    std::string id;
    double ate_v = 0, rpe_v = 0;
    bool success = false;
    double ssim_1 = 0, psnr_1 = 0;
    std::optional<double> ssim_n, psnr_n, dreamsim_n;
    double dreamsim_v = 0;
    int pred_len = 0, ref_len = 0;
};

struct MetricsReport {
    std::string split;
    std::string family;  // "wm_ac" or "uni"
    int metric_horizon = 8;
    std::vector<TrajectoryMetrics> rows;
    int skipped_at_n = 0;
    nlohmann::json provenance;  // checkpoints, dataset checksums, config hash

    double mean(const std::function<double(const TrajectoryMetrics&)>& f) const {
        double s = 0;
        for (const auto& r : rows) s += f(r);
        return rows.empty() ? 0.0 : s / double(rows.size());
    }

    double mean_opt(const std::function<std::optional<double>(const TrajectoryMetrics&)>& f,
                    int* count = nullptr) const {
        double s = 0;
        int n = 0;
        for (const auto& r : rows) {
            auto v = f(r);
            if (v) {
                s += *v;
                ++n;
            }
        }
        if (count) *count = n;
        return n ? s / n : 0.0;
    }

    double sr() const {
        return mean([](const TrajectoryMetrics& r) { return r.success ? 1.0 : 0.0; });
    }
    double ate_mean() const {
        return mean([](const TrajectoryMetrics& r) { return r.ate_v; });
    }
    double rpe_mean() const {
        return mean([](const TrajectoryMetrics& r) { return r.rpe_v; });
    }
    double ssim_mean() const {
        return mean([](const TrajectoryMetrics& r) { return r.ssim_1; });
    }
    double psnr_mean() const {
        return mean([](const TrajectoryMetrics& r) { return r.psnr_1; });
    }
    double dreamsim_mean() const {  // similarity form (higher = better aligned)
        return mean([](const TrajectoryMetrics& r) { return r.dreamsim_v; });
    }
    double dreamsim_dist() const { return 1.0 - dreamsim_mean(); }
    double ssim_at_n() const {
        return mean_opt([](const TrajectoryMetrics& r) { return r.ssim_n; });
    }
    double psnr_at_n() const {
        return mean_opt([](const TrajectoryMetrics& r) { return r.psnr_n; });
    }
    double dreamsim_at_n_dist() const {
        return 1.0 - mean_opt([](const TrajectoryMetrics& r) { return r.dreamsim_n; });
    }
    // ssim@1 restricted to the rows where @n was computable (same-subset
    // comparison for the long-horizon degradation direction)
    double ssim_1_on_at_n_subset() const {
        double s = 0;
        int n = 0;
        for (const auto& r : rows)
            if (r.ssim_n) {
                s += r.ssim_1;
                ++n;
            }
        return n ? s / n : 0.0;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json rj{{"id", r.id},         {"ate", r.ate_v},
                              {"rpe", r.rpe_v},     {"success", r.success},
                              {"ssim", r.ssim_1},   {"psnr", r.psnr_1},
                              {"dreamsim_sim", r.dreamsim_v},
                              {"pred_len", r.pred_len}, {"ref_len", r.ref_len}};
            if (r.ssim_n) rj["ssim_at_n"] = *r.ssim_n;
            if (r.psnr_n) rj["psnr_at_n"] = *r.psnr_n;
            if (r.dreamsim_n) rj["dreamsim_sim_at_n"] = *r.dreamsim_n;
            rows_j.push_back(rj);
        }
        return nlohmann::json{{"split", split},
                              {"family", family},
                              {"metric_horizon", metric_horizon},
                              {"count", rows.size()},
                              {"skipped_at_n", skipped_at_n},
                              {"aggregate",
                               {{"ate", ate_mean()},
                                {"rpe", rpe_mean()},
                                {"sr", sr()},
                                {"ssim", ssim_mean()},
                                {"psnr", psnr_mean()},
                                {"dreamsim", dreamsim_dist()},
                                {"dreamsim_sim", dreamsim_mean()},
                                {"ssim_at_n", ssim_at_n()},
                                {"psnr_at_n", psnr_at_n()},
                                {"dreamsim_at_n", dreamsim_at_n_dist()},
                                {"ssim_on_at_n_subset", ssim_1_on_at_n_subset()}}},
                              {"provenance", provenance},
                              {"rows", rows_j}};
    }

    // human-readable table; navigation columns in ATE, RPE, SR order
    std::string table() const {
        char buf[512];
        std::string out;
        out += "split=" + split + " family=" + family + " n=" + std::to_string(rows.size()) + "\n";
        std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %8s %8s %10s %9s %9s %12s\n", "",
                      "ATE", "RPE", "SR", "SSIM", "PSNR", "DreamSim", "SSIM@n", "PSNR@n",
                      "DreamSim@n");
        out += buf;
        std::snprintf(buf, sizeof buf, "%-12s %8.4f %8.4f %8.4f %8.4f %8.3f %10.4f %9.4f %9.3f %12.4f\n",
                      "aggregate", ate_mean(), rpe_mean(), sr(), ssim_mean(), psnr_mean(),
                      dreamsim_dist(), ssim_at_n(), psnr_at_n(), dreamsim_at_n_dist());
        out += buf;
        return out;
    }
};

}  // namespace lcvn
