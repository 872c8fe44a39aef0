#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lcvn/common.hpp"
#include "lcvn/tensor.hpp"

namespace lcvn {

// Named parameter set with Adam state. Order of insertion is the
// serialization order, so construction must be deterministic.
struct ParamStore {
    struct Entry {
        std::string name;
        Mat w;
        Mat m;  // Adam first moment
        Mat v;  // Adam second moment
    };

    std::vector<Entry> entries;
    std::map<std::string, int> index;
    int64_t adam_step = 0;

    int add(const std::string& name, int rows, int cols, double init_scale, Rng& rng) {
        Mat w(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) w(i, j) = init_scale * rng.normal();
        return add_matrix(name, std::move(w));
    }

    int add_zeros(const std::string& name, int rows, int cols) {
        return add_matrix(name, Mat::Zero(rows, cols));
    }

    int add_matrix(const std::string& name, Mat w) {
        LCVN_CHECK(index.find(name) == index.end(), "ParamStore: duplicate name " + name);
        Entry e;
        e.name = name;
        e.m = Mat::Zero(w.rows(), w.cols());
        e.v = Mat::Zero(w.rows(), w.cols());
        e.w = std::move(w);
        entries.push_back(std::move(e));
        index[name] = int(entries.size() - 1);
        return int(entries.size() - 1);
    }

    int id(const std::string& name) const {
        auto it = index.find(name);
        LCVN_CHECK(it != index.end(), "ParamStore: unknown param " + name);
        return it->second;
    }

    Mat& operator[](const std::string& name) { return entries[size_t(id(name))].w; }
    const Mat& at(const std::string& name) const { return entries[size_t(id(name))].w; }

    size_t count() const {
        size_t n = 0;
        for (const auto& e : entries) n += size_t(e.w.size());
        return n;
    }

    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& e : entries) {
            h = fnv1a64(e.name, h);
            h = fnv1a64(e.w.data(), size_t(e.w.size()) * sizeof(double), h);
        }
        return h;
    }
};

// Binds a ParamStore into a tape, as trainable leaves or frozen constants.
struct Binder {
    Tape* tape = nullptr;
    ParamStore* ps = nullptr;
    bool trainable = true;
    std::vector<Var> vars;

    Binder(Tape& t, ParamStore& p, bool train = true) : tape(&t), ps(&p), trainable(train) {
        vars.assign(p.entries.size(), Var{});
    }

    Var operator()(int idx) {
        LCVN_CHECK(idx >= 0 && size_t(idx) < vars.size(), "Binder: bad index");
        if (!vars[size_t(idx)].valid()) {
            const Mat& w = ps->entries[size_t(idx)].w;
            vars[size_t(idx)] = trainable ? tape->leaf(w) : tape->constant(w);
        }
        return vars[size_t(idx)];
    }

    Var operator()(const std::string& name) { return (*this)(ps->id(name)); }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 10.0;  // global norm; <= 0 disables
};

// Apply one Adam update from the gradients accumulated on the binder's leaves.
inline void adam_update(ParamStore& ps, Tape& tape, Binder& b, const AdamConfig& cfg) {
    ps.adam_step += 1;
    double t = double(ps.adam_step);
    double corr1 = 1.0 - std::pow(cfg.beta1, t);
    double corr2 = 1.0 - std::pow(cfg.beta2, t);

    double gnorm_sq = 0.0;
    if (cfg.grad_clip > 0.0) {
        for (size_t i = 0; i < ps.entries.size(); ++i) {
            if (!b.vars[i].valid()) continue;
            Mat g = tape.grad_or_zero(b.vars[i]);
            gnorm_sq += g.squaredNorm();
        }
    }
    double scale = 1.0;
    if (cfg.grad_clip > 0.0 && gnorm_sq > cfg.grad_clip * cfg.grad_clip)
        scale = cfg.grad_clip / std::sqrt(gnorm_sq);

    for (size_t i = 0; i < ps.entries.size(); ++i) {
        if (!b.vars[i].valid()) continue;
        Mat g = tape.grad_or_zero(b.vars[i]) * scale;
        auto& e = ps.entries[i];
        e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * g;
        e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        Mat mhat = e.m / corr1;
        Mat vhat = e.v / corr2;
        e.w -= cfg.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg.eps).matrix());
    }
}

// ---- layers ----

inline Var linear(Tape& t, Var x, Var w, Var bias) {  // x: n x in, w: in x out, bias: 1 x out
    return t.add_rowvec(t.matmul(x, w), bias);
}

inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5) {
    Var y = t.layer_norm_rows(x, eps);
    int n = int(t.val(x).rows());
    Var g = t.concat_rows(std::vector<Var>(size_t(n), gamma));
    Var b = t.concat_rows(std::vector<Var>(size_t(n), beta));
    return t.add(t.mul(y, g), b);
}

struct AttentionWeights {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Multi-head attention; x_q: n x d, x_kv: m x d. Causal masks future rows.
inline Var attention(Tape& t, Var x_q, Var x_kv, const AttentionWeights& w, int heads,
                     bool causal) {
    int d = int(t.val(x_q).cols());
    LCVN_CHECK(d % heads == 0, "attention: width not divisible by heads");
    int hd = d / heads;
    int n = int(t.val(x_q).rows());
    int m = int(t.val(x_kv).rows());

    Var q = linear(t, x_q, w.wq, w.bq);
    Var k = linear(t, x_kv, w.wk, w.bk);
    Var v = linear(t, x_kv, w.wv, w.bv);

    Mat mask;
    if (causal) {
        LCVN_CHECK(n == m, "attention: causal requires square scores");
        mask = Mat::Zero(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < m; ++j) mask(i, j) = -1e30;
    }

    std::vector<Var> head_outs;
    head_outs.reserve(size_t(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = t.cols(q, h * hd, hd);
        Var kh = t.cols(k, h * hd, hd);
        Var vh = t.cols(v, h * hd, hd);
        Var scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(hd)));
        if (causal) scores = t.add(scores, t.constant(mask));
        Var attn = t.softmax_rows(scores);
        head_outs.push_back(t.matmul(attn, vh));
    }
    Var cat = t.concat_cols(head_outs);
    return linear(t, cat, w.wo, w.bo);
}

inline void add_attention_params(ParamStore& ps, const std::string& prefix, int d, Rng& rng,
                                 double out_scale = -1.0, int kv_dim = -1) {
    if (kv_dim < 0) kv_dim = d;
    double s = 1.0 / std::sqrt(double(d));
    double skv = 1.0 / std::sqrt(double(kv_dim));
    ps.add(prefix + ".wq", d, d, s, rng);
    ps.add_zeros(prefix + ".bq", 1, d);
    ps.add(prefix + ".wk", kv_dim, d, skv, rng);
    ps.add_zeros(prefix + ".bk", 1, d);
    ps.add(prefix + ".wv", kv_dim, d, skv, rng);
    ps.add_zeros(prefix + ".bv", 1, d);
    if (out_scale < 0.0) out_scale = s;
    ps.add(prefix + ".wo", d, d, out_scale, rng);
    ps.add_zeros(prefix + ".bo", 1, d);
}

inline AttentionWeights bind_attention(Binder& b, const std::string& prefix) {
    return AttentionWeights{b(prefix + ".wq"), b(prefix + ".bq"), b(prefix + ".wk"),
                            b(prefix + ".bk"), b(prefix + ".wv"), b(prefix + ".bv"),
                            b(prefix + ".wo"), b(prefix + ".bo")};
}

// sine-cosine featurization of each scalar column, frequencies pi * 2^j
inline Var sincos_features(Tape& t, Var x, int n_freq) {  // x: 1 x c -> 1 x (2*c*n_freq)
    std::vector<Var> parts;
    parts.reserve(size_t(2 * n_freq));
    for (int j = 0; j < n_freq; ++j) {
        double f = M_PI * std::pow(2.0, double(j));
        Var xf = t.scale(x, f);
        parts.push_back(t.sin_(xf));
        parts.push_back(t.cos_(xf));
    }
    return t.concat_cols(parts);
}

// ---- checkpoint container ----
// Versioned binary: sections of named parameter matrices plus a text metadata
// block (config echo), with an FNV checksum trailer verified on load.

struct Checkpoint {
    static constexpr char kMagic[9] = "LCVNCK01";

    std::vector<std::pair<std::string, ParamStore>> sections;
    std::map<std::string, std::string> meta;

    void add_section(const std::string& name, const ParamStore& ps) {
        sections.emplace_back(name, ps);
    }

    const ParamStore& section(const std::string& name) const {
        for (const auto& s : sections)
            if (s.first == name) return s.second;
        throw std::runtime_error("lcvn: checkpoint missing section " + name);
    }

    bool has_section(const std::string& name) const {
        for (const auto& s : sections)
            if (s.first == name) return true;
        return false;
    }

    std::string meta_at(const std::string& key) const {
        auto it = meta.find(key);
        LCVN_CHECK(it != meta.end(), "checkpoint missing meta key " + key);
        return it->second;
    }

    void save(const std::string& path) const {
        std::string payload;
        append_u64(payload, meta.size());
        for (const auto& [k, v] : meta) {
            append_str(payload, k);
            append_str(payload, v);
        }
        append_u64(payload, sections.size());
        for (const auto& [name, ps] : sections) {
            append_str(payload, name);
            append_u64(payload, uint64_t(ps.adam_step));
            append_u64(payload, ps.entries.size());
            for (const auto& e : ps.entries) {
                append_str(payload, e.name);
                append_u64(payload, uint64_t(e.w.rows()));
                append_u64(payload, uint64_t(e.w.cols()));
                append_mat(payload, e.w);
                append_mat(payload, e.m);
                append_mat(payload, e.v);
            }
        }
        uint64_t sum = fnv1a64(payload.data(), payload.size());
        std::ofstream f(path, std::ios::binary);
        LCVN_CHECK(f.good(), "cannot open checkpoint for write: " + path);
        f.write(kMagic, 8);
        uint64_t n = payload.size();
        f.write(reinterpret_cast<const char*>(&n), 8);
        f.write(payload.data(), std::streamsize(payload.size()));
        f.write(reinterpret_cast<const char*>(&sum), 8);
        LCVN_CHECK(f.good(), "checkpoint write failed: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        LCVN_CHECK(f.good(), "cannot open checkpoint: " + path);
        char magic[8];
        f.read(magic, 8);
        LCVN_CHECK(f.good() && std::memcmp(magic, kMagic, 8) == 0,
                   "bad checkpoint magic: " + path);
        uint64_t n = 0;
        f.read(reinterpret_cast<char*>(&n), 8);
        std::string payload(n, '\0');
        f.read(payload.data(), std::streamsize(n));
        uint64_t sum = 0;
        f.read(reinterpret_cast<char*>(&sum), 8);
        LCVN_CHECK(f.good(), "truncated checkpoint: " + path);
        LCVN_CHECK(fnv1a64(payload.data(), payload.size()) == sum,
                   "checkpoint checksum mismatch: " + path);

        Checkpoint ck;
        size_t at = 0;
        uint64_t n_meta = read_u64(payload, at);
        for (uint64_t i = 0; i < n_meta; ++i) {
            std::string k = read_str(payload, at);
            ck.meta[k] = read_str(payload, at);
        }
        uint64_t n_sec = read_u64(payload, at);
        for (uint64_t i = 0; i < n_sec; ++i) {
            std::string name = read_str(payload, at);
            ParamStore ps;
            ps.adam_step = int64_t(read_u64(payload, at));
            uint64_t n_par = read_u64(payload, at);
            for (uint64_t j = 0; j < n_par; ++j) {
                std::string pname = read_str(payload, at);
                int rows = int(read_u64(payload, at));
                int cols = int(read_u64(payload, at));
                int idx = ps.add_zeros(pname, rows, cols);
                read_mat(payload, at, ps.entries[size_t(idx)].w);
                read_mat(payload, at, ps.entries[size_t(idx)].m);
                read_mat(payload, at, ps.entries[size_t(idx)].v);
            }
            ck.sections.emplace_back(name, std::move(ps));
        }
        return ck;
    }

private:
    static void append_u64(std::string& s, uint64_t v) {
        s.append(reinterpret_cast<const char*>(&v), 8);
    }
    static void append_str(std::string& s, const std::string& v) {
        append_u64(s, v.size());
        s.append(v);
    }
    static void append_mat(std::string& s, const Mat& m) {
        s.append(reinterpret_cast<const char*>(m.data()), size_t(m.size()) * sizeof(double));
    }
    static uint64_t read_u64(const std::string& s, size_t& at) {
        LCVN_CHECK(at + 8 <= s.size(), "checkpoint parse overrun");
        uint64_t v;
        std::memcpy(&v, s.data() + at, 8);
        at += 8;
        return v;
    }
    static std::string read_str(const std::string& s, size_t& at) {
        uint64_t n = read_u64(s, at);
        LCVN_CHECK(at + n <= s.size(), "checkpoint parse overrun");
        std::string v = s.substr(at, n);
        at += n;
        return v;
    }
    static void read_mat(const std::string& s, size_t& at, Mat& m) {
        size_t bytes = size_t(m.size()) * sizeof(double);
        LCVN_CHECK(at + bytes <= s.size(), "checkpoint parse overrun");
        std::memcpy(m.data(), s.data() + at, bytes);
        at += bytes;
    }
};

}  // namespace lcvn
