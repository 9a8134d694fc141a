#pragma once

// Shared network building blocks: masked multi-head attention, GRU cell,
// pre-norm residual blocks.

#include "q4dg/params.hpp"
#include "q4dg/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

// Boolean token-pair admissibility matrix, row-major [nq x nk].
using MaskBits = std::vector<std::uint8_t>;

struct AttentionWeights {
    Tensor wq, wk, wv, wo;  // each [d x d]
};

inline AttentionWeights make_attention(ParamStore& ps, const std::string& prefix, std::size_t d,
                                       Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return AttentionWeights{
        ps.create(prefix + ".wq", {d, d}, rng, s),
        ps.create(prefix + ".wk", {d, d}, rng, s),
        ps.create(prefix + ".wv", {d, d}, rng, s),
        ps.create(prefix + ".wo", {d, d}, rng, s),
    };
}

// Masked scaled dot-product attention over pre-projected q/k/v matrices.
// mask is [nq x nk]; output row i depends only on k/v rows j with mask[i*nk+j].
inline Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                   const MaskBits& mask, std::size_t heads,
                                   const AttentionWeights& w) {
    const std::size_t nq = queries.rows(), nk = keys.rows(), d = queries.cols();
    if (keys.cols() != d || values.cols() != d)
        throw std::invalid_argument("attention: dim mismatch");
    if (d % heads != 0) throw std::invalid_argument("attention: d not divisible by heads");
    if (mask.size() != nq * nk) throw std::invalid_argument("attention: mask shape mismatch");
    const std::size_t dh = d / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor q = matmul(queries, w.wq);
    Tensor k = matmul(keys, w.wk);
    Tensor v = matmul(values, w.wv);

    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = scale(matmul(qh, kh, false, true), scl);
        Tensor attn = masked_softmax(scores, mask);
        head_outs.push_back(matmul(attn, vh));
    }
    return matmul(concat_cols(head_outs), w.wo);
}

inline Tensor self_attention(const Tensor& x, const MaskBits& mask, std::size_t heads,
                             const AttentionWeights& w) {
    return multi_head_attention(x, x, x, mask, heads, w);
}

struct GruWeights {
    // update gate z, reset gate r, candidate h. Each W is [d x d] applied to
    // the input, U is [d x d] applied to the previous hidden state, b is [1 x d].
    Tensor wz, uz, bz;
    Tensor wr, ur, br;
    Tensor wh, uh, bh;
};

inline GruWeights make_gru(ParamStore& ps, const std::string& prefix, std::size_t d, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return GruWeights{
        ps.create(prefix + ".wz", {d, d}, rng, s), ps.create(prefix + ".uz", {d, d}, rng, s),
        ps.create_zeros(prefix + ".bz", {1, d}),
        ps.create(prefix + ".wr", {d, d}, rng, s), ps.create(prefix + ".ur", {d, d}, rng, s),
        ps.create_zeros(prefix + ".br", {1, d}),
        ps.create(prefix + ".wh", {d, d}, rng, s), ps.create(prefix + ".uh", {d, d}, rng, s),
        ps.create_zeros(prefix + ".bh", {1, d}),
    };
}

// GRU cell, convention: h' = (1 - z) .* h + z .* htilde.
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   htilde = tanh(x Wh + (r .* h) Uh + bh)
// x and h are [n x d] (rows advance in parallel).
inline Tensor gru_step(const Tensor& x, const Tensor& h, const GruWeights& w) {
    check_same_shape(x, h, "gru_step");
    Tensor z = sigmoid(add_rowvec(add(matmul(x, w.wz), matmul(h, w.uz)), w.bz));
    Tensor r = sigmoid(add_rowvec(add(matmul(x, w.wr), matmul(h, w.ur)), w.br));
    Tensor htilde = tanh_t(add_rowvec(add(matmul(x, w.wh), matmul(mul(r, h), w.uh)), w.bh));
    Tensor one_minus_z = add_const(neg(z), 1.0);
    return add(mul(one_minus_z, h), mul(z, htilde));
}

struct LayerNormWeights {
    Tensor gain, bias;  // [1 x d]
};

inline LayerNormWeights make_layer_norm(ParamStore& ps, const std::string& prefix, std::size_t d) {
    return LayerNormWeights{ps.create_const(prefix + ".gain", {1, d}, 1.0),
                            ps.create_zeros(prefix + ".bias", {1, d})};
}

inline Tensor apply_layer_norm(const Tensor& x, const LayerNormWeights& w) {
    return layer_norm(x, w.gain, w.bias);
}

struct FeedForwardWeights {
    Tensor w1, b1, w2, b2;  // d -> expansion*d -> d
};

inline FeedForwardWeights make_feed_forward(ParamStore& ps, const std::string& prefix,
                                            std::size_t d, std::size_t expansion, Rng& rng) {
    const std::size_t dh = d * expansion;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(dh));
    return FeedForwardWeights{
        ps.create(prefix + ".w1", {d, dh}, rng, s1),
        ps.create_zeros(prefix + ".b1", {1, dh}),
        ps.create(prefix + ".w2", {dh, d}, rng, s2),
        ps.create_zeros(prefix + ".b2", {1, d}),
    };
}

inline Tensor apply_feed_forward(const Tensor& x, const FeedForwardWeights& w) {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

struct LinearWeights {
    Tensor w, b;
};

inline LinearWeights make_linear(ParamStore& ps, const std::string& prefix, std::size_t din,
                                 std::size_t dout, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(din));
    return LinearWeights{ps.create(prefix + ".w", {din, dout}, rng, s),
                         ps.create_zeros(prefix + ".b", {1, dout})};
}

inline Tensor apply_linear(const Tensor& x, const LinearWeights& w) {
    return add_rowvec(matmul(x, w.w), w.b);
}

}  // namespace q4dg
