#pragma once

// Divide-and-conquer representation modules: cross-view global fusion (CVGF)
// producing spatial features F_S, and cross-time local fusion (CTLF)
// producing temporal features F_T.

#include "q4dg/grid.hpp"
#include "q4dg/nn.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

struct FusionConfig {
    std::size_t layers = 4;       // L: CVGF repetitions
    std::size_t window = 3;       // S: CTLF sliding window, odd
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t ff_expansion = 4;
    bool ctlf_single_kv = false;  // literal single hidden-state K/V reading

    void validate() const {
        if (layers < 1) throw std::invalid_argument("fusion: L must be >= 1");
        if (window < 1 || window % 2 == 0) throw std::invalid_argument("fusion: S must be odd >= 1");
        if (dim % heads != 0) throw std::invalid_argument("fusion: d not divisible by heads");
    }
};

// ---------------------------------------------------------------------------
// Cross-view global fusion
// ---------------------------------------------------------------------------

struct CvgfLayer {
    LayerNormWeights ln_intra, ln_inter, ln_ff;
    AttentionWeights intra, inter;  // separate projection weights
    FeedForwardWeights ff;
};

class CrossViewGlobalFusion {
public:
    CrossViewGlobalFusion(ParamStore& ps, const FusionConfig& cfg, const Encoder& enc, Rng& rng)
        : cfg_(cfg), view_table_(enc.view_table) {
        cfg_.validate();
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::string p = "cvgf.layer" + std::to_string(l);
            layers_.push_back(CvgfLayer{
                make_layer_norm(ps, p + ".ln_intra", cfg_.dim),
                make_layer_norm(ps, p + ".ln_inter", cfg_.dim),
                make_layer_norm(ps, p + ".ln_ff", cfg_.dim),
                make_attention(ps, p + ".intra", cfg_.dim, rng),
                make_attention(ps, p + ".inter", cfg_.dim, rng),
                make_feed_forward(ps, p + ".ff", cfg_.dim, cfg_.ff_expansion, rng),
            });
        }
    }

    // L x [intra-frame attention -> inter-frame attention -> feed-forward],
    // pre-norm residual blocks. View embedding added once at entry; time
    // identifiers never enter.
    Tensor forward(const TokenGrid& grid, const AttentionMask& mask) const {
        if (mask.kind != MaskKind::Spatial) throw std::invalid_argument("cvgf: mask kind must be spatial");
        const std::size_t n = grid.layout.tokens();
        if (mask.n != n) throw std::invalid_argument("cvgf: mask does not match grid");
        if (grid.dim() != cfg_.dim) throw std::invalid_argument("cvgf: token dim mismatch");

        // intra-frame mask: provided mask restricted to same-view pairs
        MaskBits intra_bits(n * n, 0);
        {
            const GridLayout& lay = grid.layout;
            std::size_t vi, ti, pi, vj, tj, pj;
            for (std::size_t i = 0; i < n; ++i) {
                lay.unflat(i, vi, ti, pi);
                for (std::size_t j = 0; j < n; ++j) {
                    lay.unflat(j, vj, tj, pj);
                    intra_bits[i * n + j] = mask.bits[i * n + j] && (vi == vj);
                }
            }
        }

        std::vector<std::size_t> vrows(n);
        {
            std::size_t v, t, p;
            for (std::size_t i = 0; i < n; ++i) {
                grid.layout.unflat(i, v, t, p);
                vrows[i] = grid.view_ids[v];
            }
        }
        Tensor x = add(grid.tokens, gather_rows(view_table_, vrows));
        for (const auto& layer : layers_) {
            x = add(x, self_attention(apply_layer_norm(x, layer.ln_intra), intra_bits, cfg_.heads,
                                      layer.intra));
            x = add(x, self_attention(apply_layer_norm(x, layer.ln_inter), mask.bits, cfg_.heads,
                                      layer.inter));
            x = add(x, apply_feed_forward(apply_layer_norm(x, layer.ln_ff), layer.ff));
        }
        return x;
    }

private:
    FusionConfig cfg_;
    Tensor view_table_;
    std::vector<CvgfLayer> layers_;
};

// ---------------------------------------------------------------------------
// Cross-time local fusion
// ---------------------------------------------------------------------------

class CrossTimeLocalFusion {
public:
    CrossTimeLocalFusion(ParamStore& ps, const FusionConfig& cfg, const Encoder& enc, Rng& rng)
        : cfg_(cfg), time_table_(enc.time_table) {
        cfg_.validate();
        gru_ = make_gru(ps, "ctlf.gru", cfg_.dim, rng);
        ln_q_ = make_layer_norm(ps, "ctlf.ln_q", cfg_.dim);
        ln_ff_ = make_layer_norm(ps, "ctlf.ln_ff", cfg_.dim);
        attn_ = make_attention(ps, "ctlf.attn", cfg_.dim, rng);
        ff_ = make_feed_forward(ps, "ctlf.ff", cfg_.dim, cfg_.ff_expansion, rng);
    }

    // Per (view, patch) tube: for each center t the clamped window tokens run
    // through the GRU in time order; the center token (plus its time
    // embedding) queries over the window hidden states. View identifiers
    // never enter attention.
    Tensor forward(const TokenGrid& grid, const AttentionMask& mask) const {
        if (mask.kind != MaskKind::Temporal) throw std::invalid_argument("ctlf: mask kind must be temporal");
        const GridLayout& lay = grid.layout;
        const std::size_t n = lay.tokens();
        if (mask.n != n) throw std::invalid_argument("ctlf: mask does not match grid");
        if (mask.window != cfg_.window) throw std::invalid_argument("ctlf: mask window != config S");
        if (grid.dim() != cfg_.dim) throw std::invalid_argument("ctlf: token dim mismatch");

        const std::size_t half = cfg_.window / 2;
        const std::size_t tubes = lay.views * lay.patches();  // one row per (v,p)
        // all-true mask (ablation): attention unrestricted across tubes
        bool unrestricted = true;
        for (auto b : mask.bits)
            if (!b) { unrestricted = false; break; }

    // Rows of the per-time-step token block, ordered (v, p).
        auto time_block = [&](std::size_t t) {
            std::vector<std::size_t> rows;
            rows.reserve(tubes);
            for (std::size_t v = 0; v < lay.views; ++v)
                for (std::size_t p = 0; p < lay.patches(); ++p) rows.push_back(lay.flat(v, t, p));
            return gather_rows(grid.tokens, rows);
        };

        std::vector<Tensor> per_center;  // each [tubes x d], centers in time order
        per_center.reserve(lay.times);
        for (std::size_t t = 0; t < lay.times; ++t) {
            const std::size_t lo = t > half ? t - half : 0;
            const std::size_t hi = std::min(lay.times - 1, t + half);
            const std::size_t wlen = hi - lo + 1;

            Tensor h = Tensor::zeros({tubes, cfg_.dim});
            std::vector<Tensor> hidden;
            hidden.reserve(wlen);
            for (std::size_t tj = lo; tj <= hi; ++tj) {
                h = gru_step(time_block(tj), h, gru_);
                hidden.push_back(h);
            }

            Tensor center = time_block(t);
            Tensor query = add_rowvec(center, slice_rows(time_table_, grid.time_ids[t], 1));

            Tensor kv;
            MaskBits attn_mask;
            if (cfg_.ctlf_single_kv) {
                // literal reading: the window's final hidden state is the one K/V
                kv = hidden.back();
                attn_mask.assign(tubes * tubes, 0);
                for (std::size_t i = 0; i < tubes; ++i) attn_mask[i * tubes + i] = 1;
            } else {
                kv = concat_rows(hidden);  // [wlen*tubes x d], window-major
                attn_mask.assign(tubes * wlen * tubes, 0);
                for (std::size_t i = 0; i < tubes; ++i)
                    for (std::size_t j = 0; j < wlen; ++j)
                        attn_mask[i * (wlen * tubes) + j * tubes + i] = 1;
            }
            if (unrestricted) attn_mask.assign(attn_mask.size(), 1);
            Tensor out = multi_head_attention(apply_layer_norm(query, ln_q_), kv, kv, attn_mask,
                                              cfg_.heads, attn_);
            per_center.push_back(add(center, out));
        }

        // reorder from time-major (t, v, p) back to flat (v, t, p)
        Tensor stacked = concat_rows(per_center);
        std::vector<std::size_t> order(n);
        for (std::size_t v = 0; v < lay.views; ++v)
            for (std::size_t t = 0; t < lay.times; ++t)
                for (std::size_t p = 0; p < lay.patches(); ++p)
                    order[lay.flat(v, t, p)] = (t * lay.views + v) * lay.patches() + p;
        Tensor x = gather_rows(stacked, order);
        return add(x, apply_feed_forward(apply_layer_norm(x, ln_ff_), ff_));
    }

private:
    FusionConfig cfg_;
    Tensor time_table_;
    GruWeights gru_;
    LayerNormWeights ln_q_, ln_ff_;
    AttentionWeights attn_;
    FeedForwardWeights ff_;
};

}  // namespace q4dg
