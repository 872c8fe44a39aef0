#include <catch2/catch_amalgamated.hpp>

#include "lcvn/nn.hpp"
#include "lcvn/tensor.hpp"
#include "oracles.hpp"

using namespace lcvn;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

// gradcheck for a scalar function of a single matrix input; a fixed random
// multiplier keeps the scalar loss non-degenerate (e.g. layer_norm outputs
// have constant mean square, which would zero out the gradient).
void check_unary(const std::function<Var(Tape&, Var)>& f, int r, int c, uint64_t seed,
                 double tol = 1e-6, double value_scale = 1.0) {
    Rng rng(seed);
    ParamStore ps;
    ps.add_matrix("x", random_mat(r, c, rng, value_scale));
    auto loss = [&](ParamStore& p, std::vector<Mat>* grads) {
        Tape t;
        Binder b(t, p);
        Var x = b("x");
        Var y = f(t, x);
        Rng crng(seed + 99);
        Var mixer = t.constant(random_mat(int(t.val(y).rows()), int(t.val(y).cols()), crng));
        Var l = t.mean_all(t.square(t.mul(y, mixer)));
        if (grads) {
            t.backward(l);
            grads->clear();
            grads->push_back(t.grad_or_zero(x));
        }
        return t.scalar(l);
    };
    auto res = oracle::gradcheck(ps, loss, 8, seed + 1, 1e-5);
    INFO("max rel err " << res.max_rel_err);
    REQUIRE(res.max_rel_err < tol);
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match finite differences") {
    check_unary([](Tape& t, Var x) { return t.tanh_(x); }, 3, 4, 11);
    check_unary([](Tape& t, Var x) { return t.sigmoid_(x); }, 3, 4, 12);
    check_unary([](Tape& t, Var x) { return t.silu(x); }, 3, 4, 13);
    check_unary([](Tape& t, Var x) { return t.exp_(x); }, 2, 3, 14, 1e-6, 0.3);
    check_unary([](Tape& t, Var x) { return t.sin_(x); }, 2, 5, 15);
    check_unary([](Tape& t, Var x) { return t.cos_(x); }, 2, 5, 16);
    check_unary([](Tape& t, Var x) { return t.softmax_rows(x); }, 3, 6, 17);
    check_unary([](Tape& t, Var x) { return t.logsumexp_rows(x); }, 3, 6, 18);
    check_unary([](Tape& t, Var x) { return t.layer_norm_rows(x); }, 3, 6, 19);
    check_unary([](Tape& t, Var x) { return t.row_sum(t.square(x)); }, 3, 6, 20);
    check_unary([](Tape& t, Var x) { return t.col_sum(x); }, 3, 6, 21);
    check_unary([](Tape& t, Var x) { return t.sqrt_(t.add_scalar(t.square(x), 1.0)); }, 3, 3, 22);
}

TEST_CASE("matmul / structural op gradients") {
    Rng rng(31);
    ParamStore ps;
    ps.add_matrix("a", random_mat(3, 4, rng));
    ps.add_matrix("b", random_mat(4, 5, rng));
    auto loss = [&](ParamStore& p, std::vector<Mat>* grads) {
        Tape t;
        Binder bd(t, p);
        Var a = bd("a"), b = bd("b");
        Var y = t.matmul(a, b);
        Var z = t.concat_cols({t.cols(y, 0, 2), t.tanh_(t.cols(y, 2, 3))});
        Var w = t.concat_rows({t.rows(z, 0, 1), t.rows(z, 1, 2)});
        Var l = t.mean_all(t.square(w));
        if (grads) {
            t.backward(l);
            grads->clear();
            grads->push_back(t.grad_or_zero(a));
            grads->push_back(t.grad_or_zero(b));
        }
        return t.scalar(l);
    };
    auto res = oracle::gradcheck(ps, loss, 10, 32, 1e-5);
    REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("gather_rows accumulates into repeated rows") {
    Rng rng(41);
    ParamStore ps;
    ps.add_matrix("table", random_mat(5, 3, rng));
    std::vector<int> idx{0, 2, 2, 4, 0};
    auto loss = [&](ParamStore& p, std::vector<Mat>* grads) {
        Tape t;
        Binder bd(t, p);
        Var g = t.gather_rows(bd("table"), idx);
        Var l = t.mean_all(t.square(g));
        if (grads) {
            t.backward(l);
            grads->clear();
            grads->push_back(t.grad_or_zero(bd("table")));
        }
        return t.scalar(l);
    };
    auto res = oracle::gradcheck(ps, loss, 6, 42, 1e-5);
    REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("attention block gradient") {
    Rng rng(51);
    ParamStore ps;
    add_attention_params(ps, "attn", 8, rng);
    ps.add_matrix("xq", random_mat(5, 8, rng, 0.5));
    ps.add_matrix("xkv", random_mat(7, 8, rng, 0.5));
    for (bool causal : {false, true}) {
        auto loss = [&](ParamStore& p, std::vector<Mat>* grads) {
            Tape t;
            Binder bd(t, p);
            Var xq = bd("xq");
            Var xkv = causal ? xq : bd("xkv");
            Var y = attention(t, xq, xkv, bind_attention(bd, "attn"), 2, causal);
            Var l = t.mean_all(t.square(y));
            if (grads) {
                t.backward(l);
                grads->clear();
                for (size_t i = 0; i < p.entries.size(); ++i)
                    grads->push_back(bd.vars[i].valid() ? t.grad_or_zero(bd.vars[i])
                                                        : Mat::Zero(p.entries[i].w.rows(),
                                                                    p.entries[i].w.cols()));
            }
            return t.scalar(l);
        };
        auto res = oracle::gradcheck(ps, loss, 10, 52, 1e-5);
        INFO("causal=" << causal << " rel err " << res.max_rel_err);
        REQUIRE(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("detach blocks gradient flow") {
    Tape t;
    Var x = t.leaf(Mat::Constant(1, 1, 2.0));
    Var y = t.mul(t.detach(x), x);  // d/dx should be 2 (detached factor constant)
    t.backward(y);
    REQUIRE(t.grad(x)(0, 0) == Catch::Approx(2.0));
}

TEST_CASE("clamp subgradient is zero outside the range") {
    Tape t;
    Mat m(1, 3);
    m << -7.0, 0.5, 3.0;
    Var x = t.leaf(m);
    Var y = t.sum_all(t.clamp(x, -5.0, 2.0));
    t.backward(y);
    REQUIRE(t.grad(x)(0, 0) == 0.0);
    REQUIRE(t.grad(x)(0, 1) == 1.0);
    REQUIRE(t.grad(x)(0, 2) == 0.0);
}

TEST_CASE("adam moves parameters toward a quadratic minimum") {
    Rng rng(61);
    ParamStore ps;
    ps.add("w", 4, 4, 1.0, rng);
    Mat target = random_mat(4, 4, rng);
    AdamConfig cfg;
    cfg.lr = 0.05;
    double first_loss = 0.0;
    for (int step = 0; step < 400; ++step) {
        Tape t;
        Binder b(t, ps);
        Var diff = t.sub(b("w"), t.constant(target));
        Var l = t.mean_all(t.square(diff));
        if (step == 0) first_loss = t.scalar(l);
        t.backward(l);
        adam_update(ps, t, b, cfg);
    }
    double final_loss = (ps["w"] - target).squaredNorm() / 16.0;
    REQUIRE(final_loss < 1e-4 * first_loss);
}

TEST_CASE("checkpoint round trip preserves params and meta") {
    Rng rng(71);
    ParamStore ps;
    ps.add("a", 3, 2, 1.0, rng);
    ps.add("b", 1, 4, 0.5, rng);
    ps.adam_step = 17;
    Checkpoint ck;
    ck.meta["config"] = "k=2\nwidth=48";
    ck.add_section("model", ps);
    std::string path = "ck_roundtrip_test.bin";
    ck.save(path);
    Checkpoint back = Checkpoint::load(path);
    REQUIRE(back.meta_at("config") == "k=2\nwidth=48");
    const ParamStore& ps2 = back.section("model");
    REQUIRE(ps2.adam_step == 17);
    REQUIRE(ps2.checksum() == ps.checksum());
    std::remove(path.c_str());
}
