#include "mopri/tensor.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace mopri::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat& gref(Node* p) {
    if (p->grad.size() == 0) p->grad = Mat::Zero(p->val.rows(), p->val.cols());
    return p->grad;
}

void accum(Node* p, const Mat& g) {
    if (!p->needs_grad) return;
    gref(p) += g;
}

[[noreturn]] void shape_error(const char* op) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void check(bool ok, const char* op) {
    if (!ok) shape_error(op);
}

}  // namespace

Var Tape::constant(Mat m) { return wrap(make(std::move(m), false)); }

Var Tape::param(Param& p) {
    Node* n = make(p.value, true);
    Param* pp = &p;
    n->back = [n, pp]() { pp->grad += n->grad; };
    return wrap(n);
}

Node* Tape::make(Mat val, bool needs_grad) {
    nodes_.emplace_back();
    Node* n = &nodes_.back();
    n->val = std::move(val);
    n->needs_grad = needs_grad;
    return n;
}

void Tape::backward(Var root) {
    if (root.n->val.size() != 1) throw std::invalid_argument("backward: root must be 1x1");
    root.n->grad = Mat::Ones(1, 1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->grad.size() != 0 && it->back) it->back();
    }
}

double scalar(Var v) {
    if (v.n->val.size() != 1) throw std::invalid_argument("scalar: node is not 1x1");
    return v.n->val(0, 0);
}

Var add(Var a, Var b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "add");
    Node* n = a.tape->make(a.val() + b.val(), a.needs_grad() || b.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pb = b.n;
        n->back = [n, pa, pb]() {
            accum(pa, n->grad);
            accum(pb, n->grad);
        };
    }
    return a.tape->wrap(n);
}

Var sub(Var a, Var b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
    Node* n = a.tape->make(a.val() - b.val(), a.needs_grad() || b.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pb = b.n;
        n->back = [n, pa, pb]() {
            accum(pa, n->grad);
            accum(pb, -n->grad);
        };
    }
    return a.tape->wrap(n);
}

Var neg(Var a) { return scale(a, -1.0); }

Var cmul(Var a, Var b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "cmul");
    Node* n = a.tape->make(a.val().cwiseProduct(b.val()), a.needs_grad() || b.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pb = b.n;
        n->back = [n, pa, pb]() {
            accum(pa, n->grad.cwiseProduct(pb->val));
            accum(pb, n->grad.cwiseProduct(pa->val));
        };
    }
    return a.tape->wrap(n);
}

Var scale(Var a, double s) {
    Node* n = a.tape->make(a.val() * s, a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa, s]() { accum(pa, n->grad * s); };
    }
    return a.tape->wrap(n);
}

Var add_scalar(Var a, double s) {
    Node* n = a.tape->make(a.val().array() + s, a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() { accum(pa, n->grad); };
    }
    return a.tape->wrap(n);
}

Var add_rowvec(Var a, Var row) {
    check(row.rows() == 1 && row.cols() == a.cols(), "add_rowvec");
    Mat v = a.val();
    v.rowwise() += row.val().row(0);
    Node* n = a.tape->make(std::move(v), a.needs_grad() || row.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pr = row.n;
        n->back = [n, pa, pr]() {
            accum(pa, n->grad);
            if (pr->needs_grad) gref(pr).row(0) += n->grad.colwise().sum();
        };
    }
    return a.tape->wrap(n);
}

Var cmul_rowvec(Var a, Var row) {
    check(row.rows() == 1 && row.cols() == a.cols(), "cmul_rowvec");
    Mat v = a.val().array().rowwise() * row.val().row(0).array();
    Node* n = a.tape->make(std::move(v), a.needs_grad() || row.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pr = row.n;
        n->back = [n, pa, pr]() {
            if (pa->needs_grad)
                gref(pa) += (n->grad.array().rowwise() * pr->val.row(0).array()).matrix();
            if (pr->needs_grad)
                gref(pr).row(0) += n->grad.cwiseProduct(pa->val).colwise().sum();
        };
    }
    return a.tape->wrap(n);
}

Var exp_(Var a) {
    Node* n = a.tape->make(a.val().array().exp(), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() { accum(pa, n->grad.cwiseProduct(n->val)); };
    }
    return a.tape->wrap(n);
}

Var rsqrt(Var a) {
    Node* n = a.tape->make(a.val().array().rsqrt(), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() {
            accum(pa, (-0.5 * n->grad.array() * n->val.array().cube()).matrix());
        };
    }
    return a.tape->wrap(n);
}

Var gelu(Var a) {
    static const double inv_sqrt2 = 0.70710678118654752440;
    static const double inv_sqrt2pi = 0.39894228040143267794;
    Mat v = a.val().unaryExpr(
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    Node* n = a.tape->make(std::move(v), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() {
            Mat d = pa->val.unaryExpr([](double x) {
                return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                       x * inv_sqrt2pi * std::exp(-0.5 * x * x);
            });
            accum(pa, n->grad.cwiseProduct(d));
        };
    }
    return a.tape->wrap(n);
}

Var clamp_(Var a, double lo, double hi) {
    Mat v = a.val().cwiseMax(lo).cwiseMin(hi);
    Node* n = a.tape->make(std::move(v), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa, lo, hi]() {
            Mat pass = ((pa->val.array() > lo) && (pa->val.array() < hi)).cast<double>();
            accum(pa, n->grad.cwiseProduct(pass));
        };
    }
    return a.tape->wrap(n);
}

Var transpose(Var a) {
    Node* n = a.tape->make(a.val().transpose(), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() { accum(pa, n->grad.transpose()); };
    }
    return a.tape->wrap(n);
}

Var slice_rows(Var a, Eigen::Index r0, Eigen::Index cnt) {
    check(r0 >= 0 && r0 + cnt <= a.rows(), "slice_rows");
    Node* n = a.tape->make(a.val().middleRows(r0, cnt), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa, r0, cnt]() {
            if (pa->needs_grad) gref(pa).middleRows(r0, cnt) += n->grad;
        };
    }
    return a.tape->wrap(n);
}

Var slice_cols(Var a, Eigen::Index c0, Eigen::Index cnt) {
    check(c0 >= 0 && c0 + cnt <= a.cols(), "slice_cols");
    Node* n = a.tape->make(a.val().middleCols(c0, cnt), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa, c0, cnt]() {
            if (pa->needs_grad) gref(pa).middleCols(c0, cnt) += n->grad;
        };
    }
    return a.tape->wrap(n);
}

Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    bool needs = false;
    for (const Var& p : parts) {
        check(p.cols() == cols, "concat_rows");
        rows += p.rows();
        needs = needs || p.needs_grad();
    }
    Mat v(rows, cols);
    Eigen::Index r = 0;
    for (const Var& p : parts) {
        v.middleRows(r, p.rows()) = p.val();
        r += p.rows();
    }
    Node* n = parts[0].tape->make(std::move(v), needs);
    if (needs) {
        std::vector<Node*> ps;
        ps.reserve(parts.size());
        for (const Var& p : parts) ps.push_back(p.n);
        n->back = [n, ps]() {
            Eigen::Index r = 0;
            for (Node* p : ps) {
                if (p->needs_grad) gref(p) += n->grad.middleRows(r, p->val.rows());
                r += p->val.rows();
            }
        };
    }
    return parts[0].tape->wrap(n);
}

Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts[0].rows();
    bool needs = false;
    for (const Var& p : parts) {
        check(p.rows() == rows, "concat_cols");
        cols += p.cols();
        needs = needs || p.needs_grad();
    }
    Mat v(rows, cols);
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        v.middleCols(c, p.cols()) = p.val();
        c += p.cols();
    }
    Node* n = parts[0].tape->make(std::move(v), needs);
    if (needs) {
        std::vector<Node*> ps;
        ps.reserve(parts.size());
        for (const Var& p : parts) ps.push_back(p.n);
        n->back = [n, ps]() {
            Eigen::Index c = 0;
            for (Node* p : ps) {
                if (p->needs_grad) gref(p) += n->grad.middleCols(c, p->val.cols());
                c += p->val.cols();
            }
        };
    }
    return parts[0].tape->wrap(n);
}

Var reshape_rows(Var a, Eigen::Index r, Eigen::Index c) {
    check(r * c == a.rows() * a.cols(), "reshape_rows");
    RowMat rm = a.val();
    Eigen::Map<const RowMat> m2(rm.data(), r, c);
    Node* n = a.tape->make(Mat(m2), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() {
            RowMat gm = n->grad;
            Eigen::Map<const RowMat> back(gm.data(), pa->val.rows(), pa->val.cols());
            accum(pa, Mat(back));
        };
    }
    return a.tape->wrap(n);
}

Var flatten_rows(Var a) { return reshape_rows(a, 1, a.rows() * a.cols()); }

Var matmul(Var a, Var b) {
    check(a.cols() == b.rows(), "matmul");
    Node* n = a.tape->make(a.val() * b.val(), a.needs_grad() || b.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pb = b.n;
        n->back = [n, pa, pb]() {
            if (pa->needs_grad) gref(pa).noalias() += n->grad * pb->val.transpose();
            if (pb->needs_grad) gref(pb).noalias() += pa->val.transpose() * n->grad;
        };
    }
    return a.tape->wrap(n);
}

Var sum(Var a) {
    Mat v(1, 1);
    v(0, 0) = a.val().sum();
    Node* n = a.tape->make(std::move(v), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() {
            if (pa->needs_grad)
                gref(pa).array() += n->grad(0, 0);
        };
    }
    return a.tape->wrap(n);
}

Var mean_all(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.val().size())); }

Var rows_dot(Var a, Var b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "rows_dot");
    Mat v = a.val().cwiseProduct(b.val()).rowwise().sum();
    Node* n = a.tape->make(std::move(v), a.needs_grad() || b.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pb = b.n;
        n->back = [n, pa, pb]() {
            Eigen::ArrayXd g = n->grad.col(0).array();
            if (pa->needs_grad) gref(pa) += (pb->val.array().colwise() * g).matrix();
            if (pb->needs_grad) gref(pb) += (pa->val.array().colwise() * g).matrix();
        };
    }
    return a.tape->wrap(n);
}

Var rows_scale(Var a, Var s) {
    check(s.cols() == 1 && s.rows() == a.rows(), "rows_scale");
    Mat v = a.val().array().colwise() * s.val().col(0).array();
    Node* n = a.tape->make(std::move(v), a.needs_grad() || s.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *ps = s.n;
        n->back = [n, pa, ps]() {
            if (pa->needs_grad)
                gref(pa) += (n->grad.array().colwise() * ps->val.col(0).array()).matrix();
            if (ps->needs_grad)
                gref(ps).col(0) += n->grad.cwiseProduct(pa->val).rowwise().sum();
        };
    }
    return a.tape->wrap(n);
}

Var rows_scale_const(Var a, const Vec& s) {
    check(s.size() == a.rows(), "rows_scale_const");
    Mat v = a.val().array().colwise() * s.array();
    Node* n = a.tape->make(std::move(v), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        Vec sc = s;
        n->back = [n, pa, sc]() {
            accum(pa, (n->grad.array().colwise() * sc.array()).matrix());
        };
    }
    return a.tape->wrap(n);
}

Var cross_rows(Var a, Var b) {
    check(a.cols() == 3 && b.cols() == 3 && a.rows() == b.rows(), "cross_rows");
    const Mat &av = a.val(), &bv = b.val();
    Mat v(av.rows(), 3);
    for (Eigen::Index i = 0; i < av.rows(); ++i)
        v.row(i) = Vec3(av.row(i)).cross(Vec3(bv.row(i))).transpose();
    Node* n = a.tape->make(std::move(v), a.needs_grad() || b.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pb = b.n;
        n->back = [n, pa, pb]() {
            // d(a x b) = da x b + a x db  =>  ga = b x g, gb = g x a
            for (Eigen::Index i = 0; i < n->val.rows(); ++i) {
                const Vec3 g = n->grad.row(i);
                if (pa->needs_grad)
                    gref(pa).row(i) += Vec3(pb->val.row(i)).cross(g).transpose();
                if (pb->needs_grad)
                    gref(pb).row(i) += g.cross(Vec3(pa->val.row(i))).transpose();
            }
        };
    }
    return a.tape->wrap(n);
}

Var cumsum_rows(Var a) {
    Mat v = a.val();
    for (Eigen::Index i = 1; i < v.rows(); ++i) v.row(i) += v.row(i - 1);
    Node* n = a.tape->make(std::move(v), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() {
            Mat g = n->grad;
            for (Eigen::Index i = g.rows() - 2; i >= 0; --i) g.row(i) += g.row(i + 1);
            accum(pa, g);
        };
    }
    return a.tape->wrap(n);
}

Var softmax_rows(Var a, const std::vector<char>* masked_cols) {
    const Mat& x = a.val();
    if (masked_cols) check(static_cast<Eigen::Index>(masked_cols->size()) == x.cols(), "softmax_rows");
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (!masked_cols || !(*masked_cols)[j]) mx = std::max(mx, x(i, j));
        check(std::isfinite(mx), "softmax_rows: all columns masked");
        double z = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (masked_cols && (*masked_cols)[j]) {
                y(i, j) = 0.0;
            } else {
                y(i, j) = std::exp(x(i, j) - mx);
                z += y(i, j);
            }
        }
        y.row(i) /= z;
    }
    Node* n = a.tape->make(std::move(y), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa]() {
            // dx = y * (g - sum(g*y) per row); masked entries have y = 0
            Mat gy = n->grad.cwiseProduct(n->val);
            Vec rs = gy.rowwise().sum();
            accum(pa, gy - (n->val.array().colwise() * rs.array()).matrix());
        };
    }
    return a.tape->wrap(n);
}

Var layernorm_rows(Var a, double eps) {
    const Mat& x = a.val();
    const double c = static_cast<double>(x.cols());
    Vec mu = x.rowwise().mean();
    Mat ctr = x.array().colwise() - mu.array();
    Vec var = ctr.cwiseAbs2().rowwise().sum() / c;
    Vec istd = (var.array() + eps).rsqrt();
    Mat y = ctr.array().colwise() * istd.array();
    Node* n = a.tape->make(std::move(y), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        Vec istd_c = istd;
        n->back = [n, pa, istd_c, c]() {
            const Mat& g = n->grad;
            const Mat& y = n->val;
            Vec gm = g.rowwise().mean();
            Vec gym = g.cwiseProduct(y).rowwise().mean();
            Mat dx = g;
            dx.array().colwise() -= gm.array();
            dx -= (y.array().colwise() * gym.array()).matrix();
            dx.array().colwise() *= istd_c.array();
            accum(pa, dx);
        };
    }
    return a.tape->wrap(n);
}

Var colmax_blocks(Var a, Eigen::Index block_rows) {
    const Mat& x = a.val();
    check(block_rows > 0 && x.rows() % block_rows == 0, "colmax_blocks");
    const Eigen::Index nb = x.rows() / block_rows;
    Mat y(nb, x.cols());
    Eigen::MatrixXi arg(nb, x.cols());
    for (Eigen::Index b = 0; b < nb; ++b) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            Eigen::Index best = 0;
            double bv = x(b * block_rows, j);
            for (Eigen::Index r = 1; r < block_rows; ++r) {
                const double v = x(b * block_rows + r, j);
                if (v > bv) {
                    bv = v;
                    best = r;
                }
            }
            y(b, j) = bv;
            arg(b, j) = static_cast<int>(best);
        }
    }
    Node* n = a.tape->make(std::move(y), a.needs_grad());
    if (n->needs_grad) {
        Node* pa = a.n;
        n->back = [n, pa, arg, block_rows]() {
            Mat& g = gref(pa);
            for (Eigen::Index b = 0; b < n->val.rows(); ++b)
                for (Eigen::Index j = 0; j < n->val.cols(); ++j)
                    g(b * block_rows + arg(b, j), j) += n->grad(b, j);
        };
    }
    return a.tape->wrap(n);
}

Var compose_blocks3(Var a, Var b) {
    check(a.cols() == 3 && b.cols() == 3 && a.rows() == b.rows() && a.rows() % 3 == 0,
          "compose_blocks3");
    const Eigen::Index nb = a.rows() / 3;
    Mat v(a.rows(), 3);
    for (Eigen::Index k = 0; k < nb; ++k)
        v.middleRows(3 * k, 3).noalias() = a.val().middleRows(3 * k, 3) * b.val().middleRows(3 * k, 3);
    Node* n = a.tape->make(std::move(v), a.needs_grad() || b.needs_grad());
    if (n->needs_grad) {
        Node *pa = a.n, *pb = b.n;
        n->back = [n, pa, pb, nb]() {
            for (Eigen::Index k = 0; k < nb; ++k) {
                const auto g = n->grad.middleRows(3 * k, 3);
                if (pa->needs_grad)
                    gref(pa).middleRows(3 * k, 3).noalias() +=
                        g * pb->val.middleRows(3 * k, 3).transpose();
                if (pb->needs_grad)
                    gref(pb).middleRows(3 * k, 3).noalias() +=
                        pa->val.middleRows(3 * k, 3).transpose() * g;
            }
        };
    }
    return a.tape->wrap(n);
}

Var rotate_rows(Var rblocks, Var o) {
    check(rblocks.cols() == 3 && rblocks.rows() % 3 == 0, "rotate_rows");
    check(o.rows() == 1 && o.cols() == 3, "rotate_rows");
    const Eigen::Index f = rblocks.rows() / 3;
    const Vec3 ov = o.val().row(0);
    Mat v(f, 3);
    for (Eigen::Index k = 0; k < f; ++k)
        v.row(k) = (rblocks.val().middleRows(3 * k, 3) * ov).transpose();
    Node* n = rblocks.tape->make(std::move(v), rblocks.needs_grad() || o.needs_grad());
    if (n->needs_grad) {
        Node *pr = rblocks.n, *po = o.n;
        n->back = [n, pr, po, f]() {
            const Vec3 ov = po->val.row(0);
            for (Eigen::Index k = 0; k < f; ++k) {
                const Vec3 g = n->grad.row(k);
                if (pr->needs_grad)
                    gref(pr).middleRows(3 * k, 3) += g * ov.transpose();
                if (po->needs_grad)
                    gref(po).row(0) +=
                        (pr->val.middleRows(3 * k, 3).transpose() * g).transpose();
            }
        };
    }
    return rblocks.tape->wrap(n);
}

Var cols3_to_blocks(Var c1, Var c2, Var c3) {
    check(c1.cols() == 3 && c2.cols() == 3 && c3.cols() == 3, "cols3_to_blocks");
    check(c1.rows() == c2.rows() && c2.rows() == c3.rows(), "cols3_to_blocks");
    const Eigen::Index f = c1.rows();
    Mat v(3 * f, 3);
    for (Eigen::Index k = 0; k < f; ++k) {
        v.block<3, 1>(3 * k, 0) = c1.val().row(k).transpose();
        v.block<3, 1>(3 * k, 1) = c2.val().row(k).transpose();
        v.block<3, 1>(3 * k, 2) = c3.val().row(k).transpose();
    }
    bool needs = c1.needs_grad() || c2.needs_grad() || c3.needs_grad();
    Node* n = c1.tape->make(std::move(v), needs);
    if (needs) {
        Node *p1 = c1.n, *p2 = c2.n, *p3 = c3.n;
        n->back = [n, p1, p2, p3, f]() {
            for (Eigen::Index k = 0; k < f; ++k) {
                if (p1->needs_grad) gref(p1).row(k) += n->grad.block<3, 1>(3 * k, 0).transpose();
                if (p2->needs_grad) gref(p2).row(k) += n->grad.block<3, 1>(3 * k, 1).transpose();
                if (p3->needs_grad) gref(p3).row(k) += n->grad.block<3, 1>(3 * k, 2).transpose();
            }
        };
    }
    return c1.tape->wrap(n);
}

namespace {

// G(f): nj x 12, row j = [vec(R_jf) row-major | t_jf - R_jf j0_j]
Mat lbs_frame_transforms(Eigen::Index f, Eigen::Index nj, Eigen::Index t, const Mat& rv,
                         const Mat& tv, const Mat& j0v) {
    Mat g(nj, 12);
    for (Eigen::Index j = 0; j < nj; ++j) {
        const auto R = rv.middleRows(3 * (j * t + f), 3);
        const Vec3 u = tv.row(j * t + f).transpose() - R * j0v.row(j).transpose();
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) g(j, 3 * a + b) = R(a, b);
        g.block<1, 3>(j, 9) = u.transpose();
    }
    return g;
}

}  // namespace

Var lbs(Var rg, Var tg, Var v0, Var j0, const Mat& w) {
    const Eigen::Index nv = v0.rows();
    const Eigen::Index nj = j0.rows();
    check(w.rows() == nv && w.cols() == nj, "lbs");
    check(tg.cols() == 3 && tg.rows() % nj == 0, "lbs");
    const Eigen::Index t = tg.rows() / nj;
    check(rg.rows() == 3 * nj * t && rg.cols() == 3, "lbs");

    Mat out(t * nv, 3);
    for (Eigen::Index f = 0; f < t; ++f) {
        const Mat gm = lbs_frame_transforms(f, nj, t, rg.val(), tg.val(), j0.val());
        const Mat m = w * gm;  // nv x 12
        for (Eigen::Index i = 0; i < nv; ++i) {
            const Eigen::Matrix<double, 1, 12> row = m.row(i);
            Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> mr(row.data());
            out.row(f * nv + i) =
                (mr * v0.val().row(i).transpose() + row.tail<3>().transpose()).transpose();
        }
    }

    bool needs = rg.needs_grad() || tg.needs_grad() || v0.needs_grad() || j0.needs_grad();
    Node* n = rg.tape->make(std::move(out), needs);
    if (needs) {
        Node *prg = rg.n, *ptg = tg.n, *pv0 = v0.n, *pj0 = j0.n;
        Mat wc = w;
        n->back = [n, prg, ptg, pv0, pj0, wc, nv, nj, t]() {
            const Mat wt = wc.transpose();
            for (Eigen::Index f = 0; f < t; ++f) {
                const auto dv = n->grad.middleRows(f * nv, nv);  // nv x 3
                // dG_t = W^T dv ; dG_R = W^T [dv_i v0_i^T]
                Mat outer(nv, 9);
                for (Eigen::Index i = 0; i < nv; ++i) {
                    const Vec3 g = dv.row(i);
                    const Vec3 p = pv0->val.row(i);
                    for (int a = 0; a < 3; ++a)
                        for (int b = 0; b < 3; ++b) outer(i, 3 * a + b) = g(a) * p(b);
                }
                Mat dgt = wt * dv;      // nj x 3
                Mat dgr = wt * outer;   // nj x 9
                for (Eigen::Index j = 0; j < nj; ++j) {
                    const Vec3 du = dgt.row(j);
                    Mat3 dr;
                    for (int a = 0; a < 3; ++a)
                        for (int b = 0; b < 3; ++b) dr(a, b) = dgr(j, 3 * a + b);
                    // u = t - R j0 contributes -du j0^T to dR and -R^T du to dj0
                    const auto R = prg->val.middleRows(3 * (j * t + f), 3);
                    if (prg->needs_grad)
                        gref(prg).middleRows(3 * (j * t + f), 3) +=
                            dr - du * pj0->val.row(j);
                    if (ptg->needs_grad) gref(ptg).row(j * t + f) += du.transpose();
                    if (pj0->needs_grad)
                        gref(pj0).row(j) -= (R.transpose() * du).transpose();
                }
                if (pv0->needs_grad) {
                    const Mat gm = lbs_frame_transforms(f, nj, t, prg->val, ptg->val, pj0->val);
                    const Mat m = wc * gm;
                    for (Eigen::Index i = 0; i < nv; ++i) {
                        const Eigen::Matrix<double, 1, 12> row = m.row(i);
                        Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> mr(
                            row.data());
                        gref(pv0).row(i) += (mr.transpose() * Vec3(dv.row(i))).transpose();
                    }
                }
            }
        };
    }
    return rg.tape->wrap(n);
}

}  // namespace mopri::ad
