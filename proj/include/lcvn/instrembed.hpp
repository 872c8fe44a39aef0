#pragma once

#include "lcvn/datagen.hpp"
#include "lcvn/nn.hpp"

namespace lcvn {

struct EmbedderConfig {
    int vocab = 64;
    int de = 32;       // embedding width
    int heads = 2;
    int max_len = 32;
};

// Toy instruction embedder: learned lookup table plus positional rows and one
// self-attention layer. Stands in for a frozen text encoder; the interface is
// a per-token embedding matrix consumed by cross-attention. An empty
// instruction maps to a single learned null-token row.
struct InstructionEmbedder {
    EmbedderConfig cfg;
    ParamStore ps;

    void init(uint64_t seed) {
        Rng rng(mix_seed(seed, "embedder-init"));
        double s = 1.0 / std::sqrt(double(cfg.de));
        ps.add("table", cfg.vocab + 1, cfg.de, s, rng);  // extra row: null token
        ps.add("pos", cfg.max_len, cfg.de, s, rng);
        add_attention_params(ps, "attn", cfg.de, rng);
        ps.add_zeros("ln.g", 1, cfg.de);  // stored as offset from 1
        ps.add_zeros("ln.b", 1, cfg.de);
    }

    int null_token_row() const { return cfg.vocab; }

    Var embed(Tape& t, Binder& b, const std::vector<int>& tokens) const {
        std::vector<int> ids = tokens;
        if (ids.empty()) ids.push_back(null_token_row());
        LCVN_CHECK(int(ids.size()) <= cfg.max_len, "instruction longer than max_len");
        std::vector<int> pos_ids(ids.size());
        for (size_t i = 0; i < ids.size(); ++i) pos_ids[i] = int(i);
        Var e = t.add(t.gather_rows(b("table"), ids), t.gather_rows(b("pos"), pos_ids));
        Var g = t.add_scalar(b("ln.g"), 1.0);
        Var normed = layer_norm(t, e, g, b("ln.b"));
        return t.add(e, attention(t, normed, normed, bind_attention(b, "attn"), cfg.heads,
                                  /*causal=*/false));
    }

    Var pooled(Tape& t, Binder& b, const std::vector<int>& tokens) const {
        Var e = embed(t, b, tokens);
        return t.scale(t.col_sum(e), 1.0 / double(t.val(e).rows()));
    }

    // convenience: plain matrix outputs for consumers outside a training tape
    Mat embed_matrix(const std::vector<int>& tokens) const {
        Tape t;
        Binder b(t, const_cast<ParamStore&>(ps), /*train=*/false);
        return t.val(embed(t, b, tokens));
    }

    Eigen::RowVectorXd pooled_vector(const std::vector<int>& tokens) const {
        Mat e = embed_matrix(tokens);
        return e.colwise().mean();
    }
};

}  // namespace lcvn
