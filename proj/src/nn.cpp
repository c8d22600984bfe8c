#include "mopri/nn.hpp"

#include <cmath>

namespace mopri::nn {

namespace {

Mat glorot(int r, int c, Rng& rng) {
    Mat m(r, c);
    const double s = std::sqrt(2.0 / (r + c));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.gauss();
    return m;
}

}  // namespace

Linear::Linear(const std::string& name, int in, int out, Rng& rng)
    : w(name + "/w", glorot(in, out, rng)), b(name + "/b", Mat::Zero(1, out)) {}

ad::Var Linear::apply(ad::Tape& t, ad::Var x, bool frozen) {
    ad::Var wl = frozen ? t.constant(w.value) : t.param(w);
    ad::Var bl = frozen ? t.constant(b.value) : t.param(b);
    return ad::add_rowvec(ad::matmul(x, wl), bl);
}

void Linear::collect(std::vector<ad::Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
}

void Linear::zero_init() {
    w.value.setZero();
    b.value.setZero();
}

Mlp2::Mlp2(const std::string& name, int in, int hidden, int out, Rng& rng)
    : l1(name + "/l1", in, hidden, rng), l2(name + "/l2", hidden, out, rng) {}

ad::Var Mlp2::apply(ad::Tape& t, ad::Var x, bool frozen) {
    return l2.apply(t, ad::gelu(l1.apply(t, x, frozen)), frozen);
}

void Mlp2::collect(std::vector<ad::Param*>& out) {
    l1.collect(out);
    l2.collect(out);
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gain(name + "/g", Mat::Ones(1, dim)), bias(name + "/b", Mat::Zero(1, dim)) {}

ad::Var LayerNorm::apply(ad::Tape& t, ad::Var x, bool frozen) {
    ad::Var g = frozen ? t.constant(gain.value) : t.param(gain);
    ad::Var b = frozen ? t.constant(bias.value) : t.param(bias);
    return ad::add_rowvec(ad::cmul_rowvec(ad::layernorm_rows(x), g), b);
}

void LayerNorm::collect(std::vector<ad::Param*>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
}

EncoderLayer::EncoderLayer(const std::string& name, int d_model, int d_ff, int heads_,
                           Rng& rng)
    : ln1(name + "/ln1", d_model),
      ln2(name + "/ln2", d_model),
      wq(name + "/wq", d_model, d_model, rng),
      wk(name + "/wk", d_model, d_model, rng),
      wv(name + "/wv", d_model, d_model, rng),
      wo(name + "/wo", d_model, d_model, rng),
      ff1(name + "/ff1", d_model, d_ff, rng),
      ff2(name + "/ff2", d_ff, d_model, rng),
      heads(heads_) {}

ad::Var EncoderLayer::apply(ad::Tape& t, ad::Var x, const std::vector<char>* key_mask,
                            bool frozen) {
    const int d = static_cast<int>(x.cols());
    const int dk = d / heads;
    ad::Var h = ln1.apply(t, x, frozen);
    ad::Var q = wq.apply(t, h, frozen);
    ad::Var k = wk.apply(t, h, frozen);
    ad::Var v = wv.apply(t, h, frozen);
    std::vector<ad::Var> ctx;
    ctx.reserve(heads);
    for (int hh = 0; hh < heads; ++hh) {
        ad::Var qh = ad::slice_cols(q, hh * dk, dk);
        ad::Var kh = ad::slice_cols(k, hh * dk, dk);
        ad::Var vh = ad::slice_cols(v, hh * dk, dk);
        ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(dk));
        ad::Var att = ad::softmax_rows(scores, key_mask);
        ctx.push_back(ad::matmul(att, vh));
    }
    ad::Var attn_out = wo.apply(t, ad::concat_cols(ctx), frozen);
    x = ad::add(x, attn_out);
    ad::Var f = ln2.apply(t, x, frozen);
    f = ff2.apply(t, ad::gelu(ff1.apply(t, f, frozen)), frozen);
    return ad::add(x, f);
}

void EncoderLayer::collect(std::vector<ad::Param*>& out) {
    ln1.collect(out);
    ln2.collect(out);
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
    ff1.collect(out);
    ff2.collect(out);
}

Transformer::Transformer(const std::string& name, int d_in, int d_model_, int d_ff,
                         int n_layers, int heads, Rng& rng)
    : in_proj(name + "/in", d_in, d_model_, rng),
      final_ln(name + "/ln", d_model_),
      d_model(d_model_) {
    for (int i = 0; i < n_layers; ++i)
        layers.emplace_back(name + "/l" + std::to_string(i), d_model_, d_ff, heads, rng);
}

ad::Var Transformer::apply(ad::Tape& t, ad::Var x, const std::vector<char>* key_mask,
                           bool frozen, bool positions) {
    ad::Var h = in_proj.apply(t, x, frozen);
    if (positions)
        h = ad::add(h, t.constant(sinusoidal_positions(static_cast<int>(x.rows()), d_model)));
    for (auto& layer : layers) h = layer.apply(t, h, key_mask, frozen);
    return final_ln.apply(t, h, frozen);
}

void Transformer::collect(std::vector<ad::Param*>& out) {
    in_proj.collect(out);
    for (auto& l : layers) l.collect(out);
    final_ln.collect(out);
}

Mat sinusoidal_positions(int t_frames, int dim) {
    Mat p(t_frames, dim);
    for (int t = 0; t < t_frames; ++t)
        for (int i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -2.0 * (i / 2) / dim);
            p(t, i) = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
        }
    return p;
}

Adam::Adam(std::vector<ad::Param*> ps) : params(std::move(ps)) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const ad::Param* p : params) {
        m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(double lr) {
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (size_t i = 0; i < params.size(); ++i) {
        ad::Param& p = *params[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * p.grad;
        v[i] = beta2 * v[i] + (1.0 - beta2) * p.grad.cwiseAbs2();
        const Mat mh = m[i] / c1;
        const Mat vh = v[i] / c2;
        p.value.array() -= lr * mh.array() / (vh.array().sqrt() + eps);
    }
}

void Adam::zero_grad() {
    for (ad::Param* p : params) p->zero_grad();
}

double decayed_lr(double base, int epoch, int decay1_epoch, int decay2_epoch) {
    if (epoch >= decay2_epoch) return base / 10.0;
    if (epoch >= decay1_epoch) return base / 4.0;
    return base;
}

}  // namespace mopri::nn
