#pragma once

#include <string>
#include <vector>

#include "mopri/tensor.hpp"

namespace mopri::nn {

struct Linear {
    ad::Param w, b;  // in x out, 1 x out

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng);

    ad::Var apply(ad::Tape& t, ad::Var x, bool frozen = false);
    void collect(std::vector<ad::Param*>& out);
    void zero_init();  // weights and bias to zero
};

// linear -> gelu -> linear
struct Mlp2 {
    Linear l1, l2;

    Mlp2() = default;
    Mlp2(const std::string& name, int in, int hidden, int out, Rng& rng);

    ad::Var apply(ad::Tape& t, ad::Var x, bool frozen = false);
    void collect(std::vector<ad::Param*>& out);
};

struct LayerNorm {
    ad::Param gain, bias;

    LayerNorm() = default;
    LayerNorm(const std::string& name, int dim);

    ad::Var apply(ad::Tape& t, ad::Var x, bool frozen = false);
    void collect(std::vector<ad::Param*>& out);
};

// pre-LN self-attention block with feedforward
struct EncoderLayer {
    LayerNorm ln1, ln2;
    Linear wq, wk, wv, wo, ff1, ff2;
    int heads = 4;

    EncoderLayer() = default;
    EncoderLayer(const std::string& name, int d_model, int d_ff, int heads, Rng& rng);

    // key_mask: optional per-frame flags; true frames are excluded as
    // attention keys (queries still produce outputs).
    ad::Var apply(ad::Tape& t, ad::Var x, const std::vector<char>* key_mask,
                  bool frozen = false);
    void collect(std::vector<ad::Param*>& out);
};

// input projection + sinusoidal positions + encoder stack + final norm
struct Transformer {
    Linear in_proj;
    std::vector<EncoderLayer> layers;
    LayerNorm final_ln;
    int d_model = 0;

    Transformer() = default;
    Transformer(const std::string& name, int d_in, int d_model, int d_ff, int n_layers,
                int heads, Rng& rng);

    ad::Var apply(ad::Tape& t, ad::Var x, const std::vector<char>* key_mask = nullptr,
                  bool frozen = false, bool positions = true);
    void collect(std::vector<ad::Param*>& out);
};

Mat sinusoidal_positions(int t_frames, int dim);

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<ad::Param*> params;
    std::vector<Mat> m, v;
    long steps = 0;

    explicit Adam(std::vector<ad::Param*> ps);
    void step(double lr);
    void zero_grad();
};

// base lr with step decays to lr/4 and lr/10
double decayed_lr(double base, int epoch, int decay1_epoch, int decay2_epoch);

}  // namespace mopri::nn
