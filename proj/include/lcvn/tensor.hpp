#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "lcvn/common.hpp"

namespace lcvn {

using Mat = Eigen::MatrixXd;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense double matrices. One tape per training step;
// nodes only reference earlier nodes, so backward is a reverse sweep.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    size_t size() const { return nodes_.size(); }

    Var constant(Mat m) { return push(std::move(m), false); }
    Var leaf(Mat m) { return push(std::move(m), true); }

    const Mat& val(Var v) const { return nodes_[check(v)].value; }
    const Mat& grad(Var v) const { return nodes_[check(v)].grad; }
    bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

    double scalar(Var v) const {
        const Mat& m = val(v);
        LCVN_CHECK(m.size() == 1, "scalar: not a 1x1 value");
        return m(0, 0);
    }

    // ---- elementwise / arithmetic ----

    Var add(Var a, Var b) {
        same_shape(a, b, "add");
        Var out = push(val(a) + val(b), requires_grad(a) || requires_grad(b));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, b] {
                accumulate(a, node(out).grad);
                accumulate(b, node(out).grad);
            });
        return out;
    }

    Var sub(Var a, Var b) {
        same_shape(a, b, "sub");
        Var out = push(val(a) - val(b), requires_grad(a) || requires_grad(b));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, b] {
                accumulate(a, node(out).grad);
                accumulate(b, -node(out).grad);
            });
        return out;
    }

    Var mul(Var a, Var b) {  // elementwise
        same_shape(a, b, "mul");
        Var out = push(val(a).cwiseProduct(val(b)), requires_grad(a) || requires_grad(b));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, b] {
                accumulate(a, node(out).grad.cwiseProduct(val(b)));
                accumulate(b, node(out).grad.cwiseProduct(val(a)));
            });
        return out;
    }

    Var div(Var a, Var b) {  // elementwise
        same_shape(a, b, "div");
        Var out = push(val(a).cwiseQuotient(val(b)), requires_grad(a) || requires_grad(b));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, b] {
                const Mat& g = node(out).grad;
                accumulate(a, g.cwiseQuotient(val(b)));
                accumulate(b, -g.cwiseProduct(val(a)).cwiseQuotient(val(b).cwiseProduct(val(b))));
            });
        return out;
    }

    Var scale(Var a, double s) {
        Var out = push(val(a) * s, requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, s] { accumulate(a, node(out).grad * s); });
        return out;
    }

    Var add_scalar(Var a, double s) {
        Var out = push(val(a).array() + s, requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] { accumulate(a, node(out).grad); });
        return out;
    }

    Var neg(Var a) { return scale(a, -1.0); }

    Var matmul(Var a, Var b) {
        LCVN_CHECK(val(a).cols() == val(b).rows(), "matmul: inner dims differ");
        Var out = push(val(a) * val(b), requires_grad(a) || requires_grad(b));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, b] {
                const Mat& g = node(out).grad;
                accumulate(a, g * val(b).transpose());
                accumulate(b, val(a).transpose() * g);
            });
        return out;
    }

    Var transpose(Var a) {
        Var out = push(val(a).transpose(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] { accumulate(a, node(out).grad.transpose()); });
        return out;
    }

    // broadcast a 1 x cols row vector over every row of a
    Var add_rowvec(Var a, Var r) {
        LCVN_CHECK(val(r).rows() == 1 && val(r).cols() == val(a).cols(), "add_rowvec: shape");
        Var out = push(val(a).rowwise() + val(r).row(0), requires_grad(a) || requires_grad(r));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, r] {
                const Mat& g = node(out).grad;
                accumulate(a, g);
                accumulate(r, g.colwise().sum());
            });
        return out;
    }

    // scale every row i of a by c(i, 0)
    Var mul_colvec(Var a, Var c) {
        LCVN_CHECK(val(c).cols() == 1 && val(c).rows() == val(a).rows(), "mul_colvec: shape");
        Mat m = val(a).array().colwise() * val(c).col(0).array();
        Var out = push(std::move(m), requires_grad(a) || requires_grad(c));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, c] {
                const Mat& g = node(out).grad;
                accumulate(a, (g.array().colwise() * val(c).col(0).array()).matrix());
                accumulate(c, g.cwiseProduct(val(a)).rowwise().sum());
            });
        return out;
    }

    // ---- unary math ----

    Var tanh_(Var a) {
        Mat y = val(a).array().tanh();
        Var out = push(y, requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                const Mat& y = node(out).value;
                accumulate(a, node(out).grad.cwiseProduct((1.0 - y.array().square()).matrix()));
            });
        return out;
    }

    Var sigmoid_(Var a) {
        Mat y = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
        Var out = push(y, requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                const auto& y = node(out).value.array();
                accumulate(a, node(out).grad.cwiseProduct((y * (1.0 - y)).matrix()));
            });
        return out;
    }

    Var relu(Var a) {
        Var out = push(val(a).cwiseMax(0.0), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                Mat mask = (val(a).array() > 0.0).cast<double>();
                accumulate(a, node(out).grad.cwiseProduct(mask));
            });
        return out;
    }

    Var silu(Var a) {
        Mat sg = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
        Var out = push(val(a).cwiseProduct(sg), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, sg] {
                // d/dx x*s(x) = s(x) (1 + x (1 - s(x)))
                Mat d = sg.array() * (1.0 + val(a).array() * (1.0 - sg.array()));
                accumulate(a, node(out).grad.cwiseProduct(d));
            });
        return out;
    }

    Var exp_(Var a) {
        Var out = push(val(a).array().exp(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, node(out).grad.cwiseProduct(node(out).value));
            });
        return out;
    }

    Var log_(Var a) {
        Var out = push(val(a).array().log(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, node(out).grad.cwiseQuotient(val(a)));
            });
        return out;
    }

    Var sqrt_(Var a) {
        Var out = push(val(a).array().sqrt(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, (node(out).grad.array() * 0.5 / node(out).value.array()).matrix());
            });
        return out;
    }

    Var square(Var a) {
        Var out = push(val(a).array().square(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, (node(out).grad.array() * 2.0 * val(a).array()).matrix());
            });
        return out;
    }

    Var sin_(Var a) {
        Var out = push(val(a).array().sin(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, node(out).grad.cwiseProduct(val(a).array().cos().matrix()));
            });
        return out;
    }

    Var cos_(Var a) {
        Var out = push(val(a).array().cos(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, -node(out).grad.cwiseProduct(val(a).array().sin().matrix()));
            });
        return out;
    }

    // subgradient 1 inside, 0 outside
    Var clamp(Var a, double lo, double hi) {
        Var out = push(val(a).cwiseMax(lo).cwiseMin(hi), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, lo, hi] {
                Mat mask = ((val(a).array() > lo) && (val(a).array() < hi)).cast<double>();
                accumulate(a, node(out).grad.cwiseProduct(mask));
            });
        return out;
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        Mat m(1, 1);
        m(0, 0) = val(a).sum();
        Var out = push(std::move(m), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, Mat::Constant(val(a).rows(), val(a).cols(), node(out).grad(0, 0)));
            });
        return out;
    }

    Var mean_all(Var a) { return scale(sum_all(a), 1.0 / double(val(a).size())); }

    Var row_sum(Var a) {  // n x m -> n x 1
        Var out = push(val(a).rowwise().sum(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, node(out).grad * Eigen::RowVectorXd::Ones(val(a).cols()));
            });
        return out;
    }

    Var col_sum(Var a) {  // n x m -> 1 x m
        Var out = push(val(a).colwise().sum(), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                accumulate(a, Eigen::VectorXd::Ones(val(a).rows()) * node(out).grad);
            });
        return out;
    }

    // ---- structural ----

    Var slice(Var a, int r0, int nr, int c0, int nc) {
        LCVN_CHECK(r0 >= 0 && c0 >= 0 && r0 + nr <= val(a).rows() && c0 + nc <= val(a).cols(),
                   "slice: out of range");
        Var out = push(val(a).block(r0, c0, nr, nc), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, r0, c0, nr, nc] {
                ensure_grad(a);
                node(a).grad.block(r0, c0, nr, nc) += node(out).grad;
            });
        return out;
    }

    Var rows(Var a, int r0, int nr) { return slice(a, r0, nr, 0, int(val(a).cols())); }
    Var cols(Var a, int c0, int nc) { return slice(a, 0, int(val(a).rows()), c0, nc); }

    Var concat_rows(const std::vector<Var>& parts) {
        LCVN_CHECK(!parts.empty(), "concat_rows: empty");
        int c = int(val(parts[0]).cols());
        int r = 0;
        bool rg = false;
        for (Var p : parts) {
            LCVN_CHECK(val(p).cols() == c, "concat_rows: column mismatch");
            r += int(val(p).rows());
            rg = rg || requires_grad(p);
        }
        Mat m(r, c);
        int at = 0;
        for (Var p : parts) {
            m.middleRows(at, int(val(p).rows())) = val(p);
            at += int(val(p).rows());
        }
        Var out = push(std::move(m), rg);
        if (rg)
            set_backward(out, [this, out, parts] {
                int at = 0;
                for (Var p : parts) {
                    int nr = int(val(p).rows());
                    accumulate(p, node(out).grad.middleRows(at, nr));
                    at += nr;
                }
            });
        return out;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        LCVN_CHECK(!parts.empty(), "concat_cols: empty");
        int r = int(val(parts[0]).rows());
        int c = 0;
        bool rg = false;
        for (Var p : parts) {
            LCVN_CHECK(val(p).rows() == r, "concat_cols: row mismatch");
            c += int(val(p).cols());
            rg = rg || requires_grad(p);
        }
        Mat m(r, c);
        int at = 0;
        for (Var p : parts) {
            m.middleCols(at, int(val(p).cols())) = val(p);
            at += int(val(p).cols());
        }
        Var out = push(std::move(m), rg);
        if (rg)
            set_backward(out, [this, out, parts] {
                int at = 0;
                for (Var p : parts) {
                    int nc = int(val(p).cols());
                    accumulate(p, node(out).grad.middleCols(at, nc));
                    at += nc;
                }
            });
        return out;
    }

    Var gather_rows(Var table, const std::vector<int>& idx) {
        const Mat& t = val(table);
        Mat m(int(idx.size()), t.cols());
        for (size_t i = 0; i < idx.size(); ++i) {
            LCVN_CHECK(idx[i] >= 0 && idx[i] < t.rows(), "gather_rows: index out of range");
            m.row(int(i)) = t.row(idx[i]);
        }
        Var out = push(std::move(m), requires_grad(table));
        if (node(out).requires_grad)
            set_backward(out, [this, out, table, idx] {
                ensure_grad(table);
                for (size_t i = 0; i < idx.size(); ++i)
                    node(table).grad.row(idx[i]) += node(out).grad.row(int(i));
            });
        return out;
    }

    Var detach(Var a) { return push(val(a), false); }

    // ---- fused numerics ----

    Var softmax_rows(Var a) {
        Mat y = val(a);
        for (int i = 0; i < y.rows(); ++i) {
            double mx = y.row(i).maxCoeff();
            y.row(i) = (y.row(i).array() - mx).exp();
            y.row(i) /= y.row(i).sum();
        }
        Var out = push(std::move(y), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                const Mat& y = node(out).value;
                const Mat& g = node(out).grad;
                Mat dx(y.rows(), y.cols());
                for (int i = 0; i < y.rows(); ++i) {
                    double dot = g.row(i).cwiseProduct(y.row(i)).sum();
                    dx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
                }
                accumulate(a, dx);
            });
        return out;
    }

    Var logsumexp_rows(Var a) {  // n x m -> n x 1
        const Mat& x = val(a);
        Mat y(x.rows(), 1);
        for (int i = 0; i < x.rows(); ++i) {
            double mx = x.row(i).maxCoeff();
            y(i, 0) = mx + std::log((x.row(i).array() - mx).exp().sum());
        }
        Var out = push(std::move(y), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a] {
                const Mat& x = val(a);
                const Mat& y = node(out).value;
                Mat dx(x.rows(), x.cols());
                for (int i = 0; i < x.rows(); ++i)
                    dx.row(i) = node(out).grad(i, 0) * (x.row(i).array() - y(i, 0)).exp().matrix();
                accumulate(a, dx);
            });
        return out;
    }

    Var layer_norm_rows(Var a, double eps = 1e-5) {
        const Mat& x = val(a);
        int n = int(x.rows()), d = int(x.cols());
        Mat y(n, d), inv_std(n, 1);
        for (int i = 0; i < n; ++i) {
            double mu = x.row(i).mean();
            double var = (x.row(i).array() - mu).square().mean();
            double is = 1.0 / std::sqrt(var + eps);
            inv_std(i, 0) = is;
            y.row(i) = (x.row(i).array() - mu) * is;
        }
        Var out = push(std::move(y), requires_grad(a));
        if (node(out).requires_grad)
            set_backward(out, [this, out, a, inv_std, d] {
                const Mat& y = node(out).value;
                const Mat& g = node(out).grad;
                Mat dx(y.rows(), y.cols());
                for (int i = 0; i < y.rows(); ++i) {
                    double gm = g.row(i).mean();
                    double gy = g.row(i).cwiseProduct(y.row(i)).mean();
                    dx.row(i) =
                        inv_std(i, 0) * (g.row(i).array() - gm - y.row(i).array() * gy).matrix();
                }
                accumulate(a, dx);
            });
        return out;
    }

    // ---- backward driver ----

    void backward(Var root) {
        LCVN_CHECK(requires_grad(root), "backward: root does not require grad");
        ensure_grad(root);
        if (node(root).value.size() == 1)
            node(root).grad(0, 0) = 1.0;
        else
            node(root).grad.setOnes();
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.backward && n.has_grad) n.backward();
        }
    }

    // gradient of a leaf/accumulated node; zero matrix if untouched
    Mat grad_or_zero(Var v) const {
        const Node& n = nodes_[check(v)];
        if (n.has_grad) return n.grad;
        return Mat::Zero(n.value.rows(), n.value.cols());
    }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::function<void()> backward;
    };

    std::vector<Node> nodes_;

    size_t check(Var v) const {
        LCVN_CHECK(v.id >= 0 && size_t(v.id) < nodes_.size(), "invalid Var");
        return size_t(v.id);
    }

    Node& node(Var v) { return nodes_[check(v)]; }
    const Node& node(Var v) const { return nodes_[check(v)]; }

    Var push(Mat m, bool rg) {
        Node n;
        n.value = std::move(m);
        n.requires_grad = rg;
        nodes_.push_back(std::move(n));
        return Var{int(nodes_.size() - 1)};
    }

    void set_backward(Var v, std::function<void()> fn) { node(v).backward = std::move(fn); }

    void ensure_grad(Var v) {
        Node& n = node(v);
        if (!n.has_grad) {
            n.grad = Mat::Zero(n.value.rows(), n.value.cols());
            n.has_grad = true;
        }
    }

    template <typename Expr>
    void accumulate(Var v, const Expr& g) {
        if (!node(v).requires_grad) return;
        ensure_grad(v);
        node(v).grad += g;
    }

    void same_shape(Var a, Var b, const char* op) {
        LCVN_CHECK(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
                   std::string(op) + ": shape mismatch");
    }
};

}  // namespace lcvn
