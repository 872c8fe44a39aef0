#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "lcvn/common.hpp"
#include "lcvn/datagen.hpp"
#include "lcvn/geometry.hpp"

namespace lcvn {

// Signed-index bin discretization of one action dimension: 2*max_index + 1
// bins covering [-max_index*resolution, +max_index*resolution]. Rounding is
// half away from zero; out-of-range values clamp to the extreme bins.
struct BinSpec {
    double resolution = 0.01;
    int max_index = 50;

    int n_bins() const { return 2 * max_index + 1; }

    int value_to_index(double v) const {  // signed bin index in [-max_index, max_index]
        double scaled = std::abs(v) / resolution;
        int idx = int(std::floor(scaled + 0.5));  // ties away from zero
        if (idx > max_index) idx = max_index;
        return v < 0.0 ? -idx : idx;
    }

    double index_to_value(int idx) const {
        LCVN_CHECK(idx >= -max_index && idx <= max_index, "bin index out of range");
        return double(idx) * resolution;
    }

    // local token offset within one dimension range: 0 .. n_bins-1
    int index_to_local(int idx) const { return idx + max_index; }
    int local_to_index(int local) const { return local - max_index; }

    std::string bin_name(const char* dim, int idx) const {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%s_%s_bin_%02d", dim, idx < 0 ? "neg" : "pos",
                      std::abs(idx));
        return buf;
    }
};

// Contiguous id layout over all modalities. The stop token sits immediately
// before the action-x range so the legal first-action-slot set
// {stop} U B_x is one contiguous block.
struct TokenSpace {
    BinSpec bins;
    int n_text = 0;
    int n_visual = 0;

    // control tokens
    int pad = 0, bos = 1, sep_instruction = 2, sep_start_obs = 3, sep_obs = 4, sep_action = 5,
        sep_target = 6;
    int text_begin = 0;
    int stop_token = 0;
    int action_begin[3] = {0, 0, 0};  // x, y, yaw
    int visual_begin = 0;
    int total = 0;

    static TokenSpace build(const BinSpec& bins, int n_text, int n_visual) {
        TokenSpace ts;
        ts.bins = bins;
        ts.n_text = n_text;
        ts.n_visual = n_visual;
        int at = 7;  // control tokens occupy [0, 7)
        ts.text_begin = at;
        at += n_text;
        ts.stop_token = at;
        at += 1;
        for (int d = 0; d < 3; ++d) {
            ts.action_begin[d] = at;
            at += bins.n_bins();
        }
        ts.visual_begin = at;
        at += n_visual;
        ts.total = at;
        return ts;
    }

    int text_token(int word_id) const {
        LCVN_CHECK(word_id >= 0 && word_id < n_text, "word id out of range");
        return text_begin + word_id;
    }

    int visual_token(int code) const {
        LCVN_CHECK(code >= 0 && code < n_visual, "visual code out of range");
        return visual_begin + code;
    }

    bool is_action_dim(int token, int d) const {
        return token >= action_begin[d] && token < action_begin[d] + bins.n_bins();
    }

    bool is_visual(int token) const {
        return token >= visual_begin && token < visual_begin + n_visual;
    }

    bool is_text(int token) const { return token >= text_begin && token < text_begin + n_text; }

    int visual_code(int token) const {
        LCVN_CHECK(is_visual(token), "not a visual token");
        return token - visual_begin;
    }

    std::string describe(int token) const {
        static const char* ctrl[] = {"<pad>", "<bos>", "<ins>", "<start_obs>", "<obs>",
                                     "<act>", "<tgt>"};
        if (token >= 0 && token < 7) return ctrl[token];
        if (is_text(token)) return Vocabulary::instance().word(token - text_begin);
        if (token == stop_token) return "<stop>";
        const char* dims[] = {"dx", "dy", "dyaw"};
        for (int d = 0; d < 3; ++d)
            if (is_action_dim(token, d))
                return bins.bin_name(dims[d], bins.local_to_index(token - action_begin[d]));
        if (is_visual(token)) return "<v" + std::to_string(visual_code(token)) + ">";
        return "<bad:" + std::to_string(token) + ">";
    }
};

// Action -> (x, y, yaw) bin tokens, or the stop token.
inline std::vector<int> action_to_bins(const Action& a, const TokenSpace& ts) {
    if (a.is_stop) return {ts.stop_token};
    const BinSpec& b = ts.bins;
    return {ts.action_begin[0] + b.index_to_local(b.value_to_index(a.dx)),
            ts.action_begin[1] + b.index_to_local(b.value_to_index(a.dy)),
            ts.action_begin[2] + b.index_to_local(b.value_to_index(a.dyaw))};
}

inline Action bins_to_action(const std::vector<int>& tokens, const TokenSpace& ts) {
    if (tokens.size() == 1 && tokens[0] == ts.stop_token) return Action::stop();
    LCVN_CHECK(tokens.size() == 3, "bins_to_action: expected 3 tokens or a stop token");
    Action a;
    double* comps[3] = {&a.dx, &a.dy, &a.dyaw};
    for (int d = 0; d < 3; ++d) {
        LCVN_CHECK(ts.is_action_dim(tokens[size_t(d)], d),
                   "bins_to_action: token outside action range for dimension " +
                       std::to_string(d));
        int idx = ts.bins.local_to_index(tokens[size_t(d)] - ts.action_begin[d]);
        *comps[d] = ts.bins.index_to_value(idx);
    }
    return a;
}

// word tokenizer over the fixed vocabulary (see datagen.hpp for the list)
inline std::vector<int> text_tokenize(const std::string& text) { return tokenize_text(text); }
inline std::string text_detokenize(const std::vector<int>& tokens) {
    return detokenize_text(tokens);
}

// ---- vector-quantized image tokenizer ----

// K-means codebook over square image patches of size patch x patch x 3.
struct Codebook {
    int k = 0;
    int dim = 0;        // patch * patch * 3
    int patch = 2;      // patch side length in pixels
    int grid_h = 0, grid_w = 0;  // patches per image (set when geometry known)
    std::vector<std::vector<double>> entries;
    std::vector<double> train_errors;  // mean quantization error per k-means iteration

    int tokens_per_image() const { return grid_h * grid_w; }

    uint64_t checksum() const {
        uint64_t h = fnv1a64(&k, sizeof k);
        h = fnv1a64(&patch, sizeof patch, h);
        for (const auto& e : entries) h = fnv1a64(e, h);
        return h;
    }
};

inline std::vector<std::vector<double>> extract_patches(const Observation& obs, int patch) {
    LCVN_CHECK(obs.height % patch == 0 && obs.width % patch == 0,
               "observation size incompatible with patch geometry");
    std::vector<std::vector<double>> out;
    for (int pr = 0; pr < obs.height / patch; ++pr)
        for (int pc = 0; pc < obs.width / patch; ++pc) {
            std::vector<double> v;
            v.reserve(size_t(patch * patch * 3));
            for (int r = 0; r < patch; ++r)
                for (int c = 0; c < patch; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        v.push_back(obs.at(pr * patch + r, pc * patch + c, ch));
            out.push_back(std::move(v));
        }
    return out;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// K-means to assignment fixpoint (or 100 iterations), k-means++ init.
// Deterministic given the seed. Ties assign to the lowest index.
inline Codebook train_codebook(const std::vector<Observation>& observations, int k, int patch,
                               uint64_t seed) {
    LCVN_CHECK(k >= 1, "train_codebook: k must be >= 1");
    LCVN_CHECK(!observations.empty(), "train_codebook: no observations");
    std::vector<std::vector<double>> patches;
    for (const auto& o : observations)
        for (auto& p : extract_patches(o, patch)) patches.push_back(std::move(p));

    // count distinct patches
    {
        std::vector<std::vector<double>> sorted = patches;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        LCVN_CHECK(int(sorted.size()) >= k,
                   "train_codebook: fewer distinct patches than codebook size");
    }

    Codebook cb;
    cb.k = k;
    cb.patch = patch;
    cb.dim = patch * patch * 3;
    if (!observations.empty()) {
        cb.grid_h = observations[0].height / patch;
        cb.grid_w = observations[0].width / patch;
    }

    Rng rng(mix_seed(seed, "kmeans"));
    // k-means++ seeding
    cb.entries.push_back(patches[rng.uniform_index(patches.size())]);
    std::vector<double> d2(patches.size());
    while (int(cb.entries.size()) < k) {
        double total = 0;
        for (size_t i = 0; i < patches.size(); ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& e : cb.entries) best = std::min(best, sq_dist(patches[i], e));
            d2[i] = best;
            total += best;
        }
        size_t pick = 0;
        if (total > 0) {
            double r = rng.uniform() * total, acc = 0;
            for (size_t i = 0; i < patches.size(); ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_index(patches.size());
        }
        cb.entries.push_back(patches[pick]);
    }

    std::vector<int> assign(patches.size(), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        double err = 0;
        for (size_t i = 0; i < patches.size(); ++i) {
            int best = 0;
            double bd = sq_dist(patches[i], cb.entries[0]);
            for (int j = 1; j < k; ++j) {
                double d = sq_dist(patches[i], cb.entries[size_t(j)]);
                if (d < bd) {  // strict: ties keep the lowest index
                    bd = d;
                    best = j;
                }
            }
            err += bd;
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        cb.train_errors.push_back(err / double(patches.size()));
        if (!changed) break;

        std::vector<std::vector<double>> sums(size_t(k), std::vector<double>(size_t(cb.dim), 0.0));
        std::vector<int> counts(size_t(k), 0);
        for (size_t i = 0; i < patches.size(); ++i) {
            for (int d = 0; d < cb.dim; ++d) sums[size_t(assign[i])][size_t(d)] += patches[i][size_t(d)];
            counts[size_t(assign[i])]++;
        }
        for (int j = 0; j < k; ++j) {
            if (counts[size_t(j)] == 0) {
                // re-seed an empty cluster with the farthest patch
                size_t far = 0;
                double fd = -1;
                for (size_t i = 0; i < patches.size(); ++i) {
                    double d = sq_dist(patches[i], cb.entries[size_t(assign[i])]);
                    if (d > fd) {
                        fd = d;
                        far = i;
                    }
                }
                cb.entries[size_t(j)] = patches[far];
            } else {
                for (int d = 0; d < cb.dim; ++d)
                    cb.entries[size_t(j)][size_t(d)] = sums[size_t(j)][size_t(d)] / counts[size_t(j)];
            }
        }
    }
    return cb;
}

// Nearest-entry assignment per patch (squared distance, lowest index on ties).
// Any patch-divisible observation size is accepted; the codebook's grid is the
// canonical full-frame geometry used by vq_decode.
inline std::vector<int> vq_encode(const Observation& obs, const Codebook& cb) {
    auto patches = extract_patches(obs, cb.patch);
    std::vector<int> codes;
    codes.reserve(patches.size());
    for (const auto& p : patches) {
        int best = 0;
        double bd = sq_dist(p, cb.entries[0]);
        for (int j = 1; j < cb.k; ++j) {
            double d = sq_dist(p, cb.entries[size_t(j)]);
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        codes.push_back(best);
    }
    return codes;
}

inline Observation vq_decode(const std::vector<int>& codes, const Codebook& cb) {
    LCVN_CHECK(int(codes.size()) == cb.grid_h * cb.grid_w, "vq_decode: wrong token count");
    Observation obs;
    obs.height = cb.grid_h * cb.patch;
    obs.width = cb.grid_w * cb.patch;
    obs.pixels.assign(size_t(obs.height * obs.width * 3), 0.0);
    for (int pr = 0; pr < cb.grid_h; ++pr)
        for (int pc = 0; pc < cb.grid_w; ++pc) {
            int code = codes[size_t(pr * cb.grid_w + pc)];
            LCVN_CHECK(code >= 0 && code < cb.k, "vq_decode: code out of range");
            const auto& e = cb.entries[size_t(code)];
            size_t at = 0;
            for (int r = 0; r < cb.patch; ++r)
                for (int c = 0; c < cb.patch; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        obs.at(pr * cb.patch + r, pc * cb.patch + c, ch) = e[at++];
        }
    return obs;
}

// versioned binary codebook file with a content checksum
inline void save_codebook(const Codebook& cb, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    LCVN_CHECK(f.good(), "cannot write codebook: " + path);
    f.write("LCVNVQ01", 8);
    int32_t hdr[5] = {int32_t(cb.k), int32_t(cb.dim), int32_t(cb.patch), int32_t(cb.grid_h),
                      int32_t(cb.grid_w)};
    f.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    for (const auto& e : cb.entries)
        f.write(reinterpret_cast<const char*>(e.data()), std::streamsize(e.size() * 8));
    uint64_t sum = cb.checksum();
    f.write(reinterpret_cast<const char*>(&sum), 8);
}

inline Codebook load_codebook(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    LCVN_CHECK(f.good(), "cannot open codebook: " + path);
    char magic[8];
    f.read(magic, 8);
    LCVN_CHECK(std::memcmp(magic, "LCVNVQ01", 8) == 0, "bad codebook magic");
    int32_t hdr[5];
    f.read(reinterpret_cast<char*>(hdr), sizeof hdr);
    Codebook cb;
    cb.k = hdr[0];
    cb.dim = hdr[1];
    cb.patch = hdr[2];
    cb.grid_h = hdr[3];
    cb.grid_w = hdr[4];
    cb.entries.assign(size_t(cb.k), std::vector<double>(size_t(cb.dim)));
    for (auto& e : cb.entries)
        f.read(reinterpret_cast<char*>(e.data()), std::streamsize(e.size() * 8));
    uint64_t sum;
    f.read(reinterpret_cast<char*>(&sum), 8);
    LCVN_CHECK(f.good() && sum == cb.checksum(), "codebook checksum mismatch");
    return cb;
}

}  // namespace lcvn
