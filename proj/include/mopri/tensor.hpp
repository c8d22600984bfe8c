#pragma once

// Tape-based reverse-mode automatic differentiation over Eigen double
// matrices. A Tape owns the per-step graph; Params live outside the tape
// and accumulate gradients across backward() calls until zero_grad().

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "mopri/common.hpp"

namespace mopri::ad {

struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
        grad = Mat::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return value.size(); }
};

struct Node {
    Mat val;
    Mat grad;  // empty until touched during backward
    bool needs_grad = false;
    std::function<void()> back;
};

class Tape;

struct Var {
    Node* n = nullptr;
    Tape* tape = nullptr;

    const Mat& val() const { return n->val; }
    Eigen::Index rows() const { return n->val.rows(); }
    Eigen::Index cols() const { return n->val.cols(); }
    bool needs_grad() const { return n->needs_grad; }
};

class Tape {
public:
    Var constant(Mat m);
    Var param(Param& p);

    // Seeds root (must be 1x1) with gradient 1 and sweeps the tape in
    // reverse creation order.
    void backward(Var root);

    Node* make(Mat val, bool needs_grad);
    Var wrap(Node* n) { return Var{n, this}; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::deque<Node> nodes_;
};

double scalar(Var v);  // value of a 1x1 node

// elementwise / broadcast
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var cmul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_rowvec(Var a, Var row);    // a (R x C) + row (1 x C)
Var cmul_rowvec(Var a, Var row);   // a (R x C) * row (1 x C)
Var exp_(Var a);
Var rsqrt(Var a);                  // elementwise x^(-1/2), x > 0
Var gelu(Var a);
Var clamp_(Var a, double lo, double hi);

// shape
Var transpose(Var a);
Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n);
Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var reshape_rows(Var a, Eigen::Index r, Eigen::Index c);  // row-major reflow
Var flatten_rows(Var a);                                  // 1 x (r*c)

// linear algebra
Var matmul(Var a, Var b);

// reductions
Var sum(Var a);       // 1x1
Var mean_all(Var a);  // 1x1

// rowwise geometry helpers (N x 3 or N x C rows)
Var rows_dot(Var a, Var b);              // N x 1
Var rows_scale(Var a, Var s);            // scale row i by s(i,0)
Var rows_scale_const(Var a, const Vec& s);
Var cross_rows(Var a, Var b);            // N x 3

// sequence ops
Var cumsum_rows(Var a);  // y_t = sum_{s<=t} x_s

// attention / normalization
// masked_cols: optional, length C; true columns are excluded from the
// softmax (zero probability).
Var softmax_rows(Var a, const std::vector<char>* masked_cols = nullptr);
Var layernorm_rows(Var a, double eps = 1e-5);

// set encoding: input (B*P) x C, max over each block of P rows -> B x C
Var colmax_blocks(Var a, Eigen::Index block_rows);

// stacked 3x3 block ops; blocks live at rows 3k..3k+2
Var compose_blocks3(Var a, Var b);          // C_k = A_k * B_k
Var rotate_rows(Var rblocks, Var o);        // (3F)x3, 1x3 -> F x 3 rows R_f * o
Var cols3_to_blocks(Var c1, Var c2, Var c3);  // F x 3 each -> (3F) x 3

// Linear blend skinning, one sequence of T frames.
//   rg: (3*J*T) x 3  global joint rotations, joint-major (block j*T + f)
//   tg: (J*T) x 3    global joint positions, joint-major
//   v0: N x 3        shaped rest vertices
//   j0: J x 3        shaped rest joints
//   w:  N x J        skinning weights (constant)
// returns (T*N) x 3 posed vertices, frame-major.
Var lbs(Var rg, Var tg, Var v0, Var j0, const Mat& w);

}  // namespace mopri::ad
