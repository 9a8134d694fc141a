#pragma once

// Adaptive visual grid: per-frame patch tokens arranged on a view x time grid,
// training-time random subgrid sampling, and the spatial/temporal attention
// masks for the three camera settings.

#include "q4dg/nn.hpp"
#include "q4dg/params.hpp"
#include "q4dg/rng.hpp"
#include "q4dg/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

enum class CameraSetting { MonoStatic, MonoDynamic, MultiStatic };

inline const char* setting_name(CameraSetting s) {
    switch (s) {
        case CameraSetting::MonoStatic: return "mono-s";
        case CameraSetting::MonoDynamic: return "mono-d";
        case CameraSetting::MultiStatic: return "multi-s";
    }
    throw std::logic_error("bad setting");
}

inline CameraSetting parse_setting(const std::string& s) {
    if (s == "mono-s") return CameraSetting::MonoStatic;
    if (s == "mono-d") return CameraSetting::MonoDynamic;
    if (s == "multi-s") return CameraSetting::MultiStatic;
    throw std::invalid_argument("unknown camera setting: " + s);
}

struct GridLayout {
    std::size_t views = 1;
    std::size_t times = 1;
    std::size_t patch_rows = 1;
    std::size_t patch_cols = 1;
    CameraSetting setting = CameraSetting::MonoStatic;

    std::size_t patches() const { return patch_rows * patch_cols; }
    std::size_t tokens() const { return views * times * patches(); }

    void validate() const {
        if (views < 1 || times < 1 || patches() < 1)
            throw std::invalid_argument("grid layout: V, T, P must all be >= 1");
        if (setting != CameraSetting::MultiStatic && views != 1)
            throw std::invalid_argument("grid layout: monocular settings require V = 1");
    }

    // Flat token id for cell (v, t, p); tokens ordered view-major, then time.
    std::size_t flat(std::size_t v, std::size_t t, std::size_t p) const {
        return (v * times + t) * patches() + p;
    }
    void unflat(std::size_t id, std::size_t& v, std::size_t& t, std::size_t& p) const {
        p = id % patches();
        const std::size_t vt = id / patches();
        t = vt % times;
        v = vt / times;
    }
};

// Patch tokens plus the original view/time identities of each grid slot.
// view_ids/time_ids map the sampled grid's local coordinates back to the
// embedding-table indices of the source sequence.
struct TokenGrid {
    GridLayout layout;
    Tensor tokens;  // [V*T*P x d], rows ordered by GridLayout::flat
    std::vector<std::size_t> view_ids;  // length layout.views
    std::vector<std::size_t> time_ids;  // length layout.times

    std::size_t dim() const { return tokens.cols(); }
};

enum class MaskKind { Spatial, Temporal };

struct AttentionMask {
    std::size_t n = 0;
    MaskBits bits;  // row-major n x n
    MaskKind kind = MaskKind::Spatial;
    GridLayout layout;
    std::size_t window = 0;  // temporal masks only

    bool at(std::size_t i, std::size_t j) const { return bits[i * n + j] != 0; }
};

struct PatchEmbedConfig {
    std::size_t patch_size = 8;
    std::size_t dim = 64;
    std::size_t view_capacity = 8;
    std::size_t time_capacity = 32;
};

// Learnable encoder replacing the pretrained ViT: a linear projection of
// flattened patches plus view/time identifier embedding tables.
struct Encoder {
    PatchEmbedConfig cfg;
    LinearWeights patch;   // [ps*ps*3 x d]
    Tensor view_table;     // [view_capacity x d]
    Tensor time_table;     // [time_capacity x d]

    static Encoder create(ParamStore& ps, const PatchEmbedConfig& cfg, Rng& rng) {
        Encoder e;
        e.cfg = cfg;
        e.patch = make_linear(ps, "encoder.patch", cfg.patch_size * cfg.patch_size * 3, cfg.dim, rng);
        const double s = 0.1;
        e.view_table = ps.create("encoder.view_table", {cfg.view_capacity, cfg.dim}, rng, s);
        e.time_table = ps.create("encoder.time_table", {cfg.time_capacity, cfg.dim}, rng, s);
        return e;
    }
};

// Frames as raw pixel data, [V][T] images of H x W x 3 doubles in [0,1].
struct FrameStack {
    std::size_t views = 0, times = 0, height = 0, width = 0;
    std::vector<double> pixels;  // indexed ((v*T + t)*H + y)*W*3 + x*3 + ch

    double at(std::size_t v, std::size_t t, std::size_t y, std::size_t x, std::size_t ch) const {
        return pixels[(((v * times + t) * height + y) * width + x) * 3 + ch];
    }
    double& at(std::size_t v, std::size_t t, std::size_t y, std::size_t x, std::size_t ch) {
        return pixels[(((v * times + t) * height + y) * width + x) * 3 + ch];
    }
    static FrameStack zeros(std::size_t v, std::size_t t, std::size_t h, std::size_t w) {
        FrameStack f;
        f.views = v; f.times = t; f.height = h; f.width = w;
        f.pixels.assign(v * t * h * w * 3, 0.0);
        return f;
    }
};

// Projects each frame into P patch tokens. View/time embeddings are attached
// as identifiers on the TokenGrid and added at fusion-module entry, not here.
inline TokenGrid build_grid(const FrameStack& frames, const GridLayout& layout_in,
                            const Encoder& enc) {
    GridLayout layout = layout_in;
    layout.validate();
    const std::size_t ps = enc.cfg.patch_size;
    if (frames.height % ps != 0 || frames.width % ps != 0)
        throw std::invalid_argument("build_grid: image dims not divisible by patch size");
    layout.patch_rows = frames.height / ps;
    layout.patch_cols = frames.width / ps;
    if (frames.views != layout.views || frames.times != layout.times)
        throw std::invalid_argument("build_grid: frame stack does not match layout");
    if (layout.views > enc.cfg.view_capacity || layout.times > enc.cfg.time_capacity)
        throw std::invalid_argument("build_grid: V or T exceeds embedding table capacity");

    const std::size_t n = layout.tokens();
    const std::size_t pd = ps * ps * 3;
    std::vector<double> patches(n * pd);
    for (std::size_t v = 0; v < layout.views; ++v)
        for (std::size_t t = 0; t < layout.times; ++t)
            for (std::size_t pr = 0; pr < layout.patch_rows; ++pr)
                for (std::size_t pc = 0; pc < layout.patch_cols; ++pc) {
                    const std::size_t row = layout.flat(v, t, pr * layout.patch_cols + pc);
                    std::size_t k = 0;
                    for (std::size_t y = 0; y < ps; ++y)
                        for (std::size_t x = 0; x < ps; ++x)
                            for (std::size_t ch = 0; ch < 3; ++ch, ++k)
                                patches[row * pd + k] =
                                    frames.at(v, t, pr * ps + y, pc * ps + x, ch);
                }
    Tensor patch_mat = Tensor::from({n, pd}, std::move(patches));

    TokenGrid grid;
    grid.layout = layout;
    grid.tokens = apply_linear(patch_mat, enc.patch);
    grid.view_ids.resize(layout.views);
    std::iota(grid.view_ids.begin(), grid.view_ids.end(), 0);
    grid.time_ids.resize(layout.times);
    std::iota(grid.time_ids.begin(), grid.time_ids.end(), 0);
    return grid;
}

struct SamplePolicy {
    std::size_t min_views = 1, max_views = 8;
    std::size_t min_window = 1, max_window = 32;

    void validate(const GridLayout& layout) const {
        if (min_views < 1 || min_window < 1) throw std::invalid_argument("sample policy: empty sample");
        if (min_views > layout.views || min_window > layout.times)
            throw std::invalid_argument("sample policy: bounds exceed grid dims");
    }
};

// Keeps a uniformly chosen view subset crossed with a contiguous time window.
// Token values are copied unchanged; view_ids/time_ids retain source identity.
inline TokenGrid sample_subgrid(const TokenGrid& grid, const SamplePolicy& policy, Rng& rng) {
    const GridLayout& src = grid.layout;
    policy.validate(src);
    const std::size_t nv = rng.integer(policy.min_views, std::min(policy.max_views, src.views));
    const std::size_t nt = rng.integer(policy.min_window, std::min(policy.max_window, src.times));

    // uniform view subset of size nv (partial Fisher-Yates)
    std::vector<std::size_t> views(src.views);
    std::iota(views.begin(), views.end(), 0);
    for (std::size_t i = 0; i < nv; ++i)
        std::swap(views[i], views[rng.integer(i, src.views - 1)]);
    views.resize(nv);
    std::sort(views.begin(), views.end());

    const std::size_t t0 = rng.integer(0, src.times - nt);

    TokenGrid out;
    out.layout = src;
    out.layout.views = nv;
    out.layout.times = nt;
    out.view_ids.resize(nv);
    out.time_ids.resize(nt);
    std::vector<std::size_t> rows;
    rows.reserve(nv * nt * src.patches());
    for (std::size_t vi = 0; vi < nv; ++vi) {
        out.view_ids[vi] = grid.view_ids[views[vi]];
        for (std::size_t ti = 0; ti < nt; ++ti) {
            out.time_ids[ti] = grid.time_ids[t0 + ti];
            for (std::size_t p = 0; p < src.patches(); ++p)
                rows.push_back(src.flat(views[vi], t0 + ti, p));
        }
    }
    out.tokens = gather_rows(grid.tokens, std::move(rows));
    return out;
}

// Spatial mask: token pairs admissible iff they share a time step, across all
// views (covers both intra-frame and inter-frame pairs).
inline AttentionMask build_spatial_mask(const GridLayout& layout_in) {
    GridLayout layout = layout_in;
    layout.validate();
    const std::size_t n = layout.tokens();
    AttentionMask m;
    m.n = n;
    m.kind = MaskKind::Spatial;
    m.layout = layout;
    m.bits.assign(n * n, 0);
    // block-diagonal with T blocks of size (V*P)^2
    for (std::size_t t = 0; t < layout.times; ++t)
        for (std::size_t v = 0; v < layout.views; ++v)
            for (std::size_t p = 0; p < layout.patches(); ++p) {
                const std::size_t i = layout.flat(v, t, p);
                for (std::size_t v2 = 0; v2 < layout.views; ++v2)
                    for (std::size_t p2 = 0; p2 < layout.patches(); ++p2)
                        m.bits[i * n + layout.flat(v2, t, p2)] = 1;
            }
    return m;
}

// Temporal mask: per-patch tubes, admissible iff same view, same patch
// position, and |t - t'| <= floor(S/2).
inline AttentionMask build_temporal_mask(const GridLayout& layout_in, std::size_t window) {
    GridLayout layout = layout_in;
    layout.validate();
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("temporal mask: window size must be odd and >= 1");
    const std::size_t n = layout.tokens();
    const std::size_t half = window / 2;
    AttentionMask m;
    m.n = n;
    m.kind = MaskKind::Temporal;
    m.layout = layout;
    m.window = window;
    m.bits.assign(n * n, 0);
    for (std::size_t v = 0; v < layout.views; ++v)
        for (std::size_t p = 0; p < layout.patches(); ++p)
            for (std::size_t t = 0; t < layout.times; ++t) {
                const std::size_t i = layout.flat(v, t, p);
                const std::size_t lo = t > half ? t - half : 0;
                const std::size_t hi = std::min(layout.times - 1, t + half);
                for (std::size_t t2 = lo; t2 <= hi; ++t2)
                    m.bits[i * n + layout.flat(v, t2, p)] = 1;
            }
    return m;
}

// Text dump: header line "V T P S setting kind", then n lines of n '0'/'1'
// characters. Used by golden-file tests and the dump-masks CLI subcommand.
inline void dump_mask(const AttentionMask& m, std::ostream& os) {
    os << m.layout.views << ' ' << m.layout.times << ' ' << m.layout.patches() << ' '
       << (m.kind == MaskKind::Temporal ? m.window : 0) << ' ' << setting_name(m.layout.setting)
       << ' ' << (m.kind == MaskKind::Spatial ? "spatial" : "temporal") << '\n';
    for (std::size_t i = 0; i < m.n; ++i) {
        for (std::size_t j = 0; j < m.n; ++j) os << (m.at(i, j) ? '1' : '0');
        os << '\n';
    }
}

inline void dump_mask_file(const AttentionMask& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    dump_mask(m, os);
}

}  // namespace q4dg
