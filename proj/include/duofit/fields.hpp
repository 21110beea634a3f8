#pragma once

// Dual-branch continuous image model: a low-frequency RGB field decoded from
// coarse feature grids plus a high-frequency structure field from fine grids,
// composed as low + high - beta. Grids are bilinearly sampled at pixel-center
// coordinates; each branch ends in a 3-layer ReLU MLP.

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "duofit/autograd.hpp"
#include "duofit/config.hpp"
#include "duofit/rng.hpp"
#include "duofit/tensor.hpp"

namespace duofit::fields {

enum class ParamKind { Matrix, Grid, Scalar, Bias };

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* data;
    ParamKind kind;
};

// One grid level. Dense levels index cells directly; levels with more cells
// than the cap share a fixed open-addressed table (probing at construction,
// colliders share a slot).
template <typename T>
struct GridLevel {
    int64_t rows = 0, cols = 0;
    bool hashed = false;
    int64_t table_rows = 0;
    std::vector<int32_t> slot_of; // per cell; empty when dense
    Tensor<T> values;             // (table_rows, F)

    int32_t slot(int64_t r, int64_t c) const {
        const int64_t cell = r * cols + c;
        return hashed ? slot_of[cell] : static_cast<int32_t>(cell);
    }
};

template <typename T>
struct Branch {
    std::vector<GridLevel<T>> levels;
    Tensor<T> w1, b1, w2, b2, w3, b3;
};

template <typename T>
struct FieldModelT {
    Branch<T> low, high;
    Tensor<T> beta;   // scalar
    Tensor<T> s_lf, s_hf, s_grad;
    int64_t img_h = 0, img_w = 0;
    TrainConfig cfg; // the configuration the model was built with
};

// Regular query lattice in normalized [-1,1] coordinates.
struct QuerySpec {
    int64_t rows = 0, cols = 0;
    double y0 = 0, dy = 0, x0 = 0, dx = 0;
};

inline QuerySpec window_queries(int64_t img_h, int64_t img_w, int64_t r0, int64_t c0, int64_t h,
                                int64_t w) {
    QuerySpec q;
    q.rows = h;
    q.cols = w;
    q.dy = 2.0 / double(img_h);
    q.dx = 2.0 / double(img_w);
    q.y0 = -1.0 + (double(r0) + 0.5) * q.dy;
    q.x0 = -1.0 + (double(c0) + 0.5) * q.dx;
    return q;
}

inline QuerySpec full_queries(int64_t out_h, int64_t out_w) {
    return window_queries(out_h, out_w, 0, 0, out_h, out_w);
}

namespace detail {

inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace detail

template <typename T>
GridLevel<T> make_grid_level(int64_t rows, int64_t cols, int features, int hash_cap_log2,
                             int hash_probes) {
    GridLevel<T> g;
    g.rows = rows;
    g.cols = cols;
    const int64_t cells = rows * cols;
    const int64_t cap = int64_t(1) << hash_cap_log2;
    if (cells <= cap) {
        g.hashed = false;
        g.table_rows = cells;
    } else {
        g.hashed = true;
        g.table_rows = cap;
        g.slot_of.resize(cells);
        std::vector<int64_t> key_of(cap, -1);
        const uint64_t mask = uint64_t(cap) - 1;
        for (int64_t cell = 0; cell < cells; ++cell) {
            const uint64_t h0 = detail::mix64(uint64_t(cell));
            int32_t chosen = static_cast<int32_t>(h0 & mask);
            for (int p = 0; p < hash_probes; ++p) {
                const int32_t s = static_cast<int32_t>((h0 + uint64_t(p)) & mask);
                if (key_of[s] == -1) {
                    key_of[s] = cell;
                    chosen = s;
                    break;
                }
            }
            g.slot_of[cell] = chosen; // full probe chain -> share the home slot
        }
    }
    g.values = Tensor<T>{Shape{g.table_rows, features}};
    return g;
}

inline std::vector<int64_t> level_resolutions(int64_t dim, int levels, double frac_min,
                                              double frac_max) {
    std::vector<int64_t> res(levels);
    int64_t prev = 1;
    for (int l = 0; l < levels; ++l) {
        const double t = levels == 1 ? 0.0 : double(l) / double(levels - 1);
        const double frac = frac_min + (frac_max - frac_min) * t;
        int64_t r = static_cast<int64_t>(std::llround(frac * double(dim)));
        r = std::max<int64_t>(r, 2);
        r = std::max(r, prev + 1); // keep the ladder strictly increasing
        res[l] = r;
        prev = r;
    }
    return res;
}

template <typename T>
void init_decoder(Branch<T>& br, int in, int hidden, int out, double out_bias, Rng& rng) {
    auto fill_uniform = [&rng](Tensor<T>& t, double bound) {
        for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<T>(rng.uniform(-bound, bound));
    };
    br.w1 = Tensor<T>{Shape{in, hidden}};
    br.w2 = Tensor<T>{Shape{hidden, hidden}};
    br.w3 = Tensor<T>{Shape{hidden, out}};
    fill_uniform(br.w1, std::sqrt(6.0 / in));      // Kaiming for the ReLU layers
    fill_uniform(br.w2, std::sqrt(6.0 / hidden));
    fill_uniform(br.w3, std::sqrt(3.0 / hidden)); // linear output
    br.b1 = Tensor<T>{Shape{hidden}};
    br.b2 = Tensor<T>{Shape{hidden}};
    br.b3 = Tensor<T>{Shape{out}, static_cast<T>(out_bias)};
}

template <typename T>
void init_branch(Branch<T>& br, int64_t img_h, int64_t img_w, double frac_min, double frac_max,
                 const TrainConfig& cfg, int out, double out_bias, Rng& rng) {
    const auto res_h = level_resolutions(img_h, cfg.grid_levels, frac_min, frac_max);
    br.levels.clear();
    for (int l = 0; l < cfg.grid_levels; ++l) {
        const int64_t rows = res_h[l];
        const int64_t cols =
            std::max<int64_t>(2, static_cast<int64_t>(std::llround(double(rows) * double(img_w) /
                                                                   double(img_h))));
        GridLevel<T> g =
            make_grid_level<T>(rows, cols, cfg.grid_features, cfg.hash_cap_log2, cfg.hash_probes);
        for (int64_t i = 0; i < g.values.numel(); ++i)
            g.values[i] = static_cast<T>(rng.uniform(-1e-4, 1e-4));
        br.levels.push_back(std::move(g));
    }
    init_decoder(br, cfg.grid_levels * cfg.grid_features, cfg.hidden, out, out_bias, rng);
}

template <typename T>
FieldModelT<T> make_model(const TrainConfig& cfg, int64_t img_h, int64_t img_w) {
    cfg.validate();
    FieldModelT<T> m;
    m.cfg = cfg;
    m.img_h = img_h;
    m.img_w = img_w;
    Rng rng(cfg.seed);
    init_branch(m.low, img_h, img_w, cfg.low_frac_min, cfg.low_frac_max, cfg, 3, 0.5, rng);
    const int high_out = cfg.hf_per_channel ? 3 : 1;
    init_branch(m.high, img_h, img_w, cfg.high_frac_min, cfg.high_frac_max, cfg, high_out, 0.0,
                rng);
    m.beta = Tensor<T>::scalar(T(0));
    m.s_lf = Tensor<T>::scalar(T(0));
    m.s_hf = Tensor<T>::scalar(T(0));
    m.s_grad = Tensor<T>::scalar(T(0));
    return m;
}

template <typename T>
std::vector<ParamRef<T>> parameters(FieldModelT<T>& m) {
    std::vector<ParamRef<T>> ps;
    auto add_branch = [&ps](Branch<T>& br, const std::string& prefix) {
        for (size_t l = 0; l < br.levels.size(); ++l)
            ps.push_back({prefix + ".grid" + std::to_string(l), &br.levels[l].values,
                          ParamKind::Grid});
        ps.push_back({prefix + ".w1", &br.w1, ParamKind::Matrix});
        ps.push_back({prefix + ".b1", &br.b1, ParamKind::Bias});
        ps.push_back({prefix + ".w2", &br.w2, ParamKind::Matrix});
        ps.push_back({prefix + ".b2", &br.b2, ParamKind::Bias});
        ps.push_back({prefix + ".w3", &br.w3, ParamKind::Matrix});
        ps.push_back({prefix + ".b3", &br.b3, ParamKind::Bias});
    };
    add_branch(m.low, "low");
    add_branch(m.high, "high");
    ps.push_back({"beta", &m.beta, ParamKind::Scalar});
    ps.push_back({"s_lf", &m.s_lf, ParamKind::Scalar});
    ps.push_back({"s_hf", &m.s_hf, ParamKind::Scalar});
    ps.push_back({"s_grad", &m.s_grad, ParamKind::Scalar});
    return ps;
}

template <typename T>
int64_t parameter_count(FieldModelT<T>& m) {
    int64_t n = 0;
    for (const auto& p : parameters(m)) n += p.data->numel();
    return n;
}

// Bilinear corner indices/weights for every query point of a lattice.
template <typename T>
std::shared_ptr<const ag::GatherPlan<T>> build_plan(const GridLevel<T>& g, const QuerySpec& q) {
    auto plan = std::make_shared<ag::GatherPlan<T>>();
    plan->queries = q.rows * q.cols;
    plan->idx.resize(plan->queries * 4);
    plan->w.resize(plan->queries * 4);
    for (int64_t i = 0; i < q.rows; ++i) {
        for (int64_t j = 0; j < q.cols; ++j) {
            const double y = q.y0 + double(i) * q.dy;
            const double x = q.x0 + double(j) * q.dx;
            // normalized -> continuous cell-center coordinate, clamped to the
            // boundary so off-frame queries (render margins) stay valid
            double v = (y + 1.0) * 0.5 * double(g.rows) - 0.5;
            double u = (x + 1.0) * 0.5 * double(g.cols) - 0.5;
            v = std::min(std::max(v, 0.0), double(g.rows - 1));
            u = std::min(std::max(u, 0.0), double(g.cols - 1));
            int64_t r0 = std::min(static_cast<int64_t>(v), g.rows - 2);
            int64_t c0 = std::min(static_cast<int64_t>(u), g.cols - 2);
            if (g.rows == 1) r0 = 0;
            if (g.cols == 1) c0 = 0;
            const double fv = v - double(r0), fu = u - double(c0);
            const int64_t at = (i * q.cols + j) * 4;
            plan->idx[at + 0] = g.slot(r0, c0);
            plan->idx[at + 1] = g.slot(r0, c0 + 1);
            plan->idx[at + 2] = g.slot(r0 + 1, c0);
            plan->idx[at + 3] = g.slot(r0 + 1, c0 + 1);
            plan->w[at + 0] = static_cast<T>((1 - fu) * (1 - fv));
            plan->w[at + 1] = static_cast<T>(fu * (1 - fv));
            plan->w[at + 2] = static_cast<T>((1 - fu) * fv);
            plan->w[at + 3] = static_cast<T>(fu * fv);
        }
    }
    return plan;
}

// Tape handles for every parameter, in parameters() order.
template <typename T>
struct BranchVars {
    std::vector<ag::Var<T>> grids;
    ag::Var<T> w1, b1, w2, b2, w3, b3;
};

template <typename T>
struct ModelVars {
    BranchVars<T> low, high;
    ag::Var<T> beta, s_lf, s_hf, s_grad;
};

template <typename T>
ModelVars<T> make_vars(ag::Tape<T>& tape, FieldModelT<T>& m, bool requires_grad) {
    ModelVars<T> v;
    auto lift = [&](Branch<T>& br, BranchVars<T>& bv) {
        for (auto& g : br.levels) bv.grids.push_back(tape.leaf(g.values, requires_grad));
        bv.w1 = tape.leaf(br.w1, requires_grad);
        bv.b1 = tape.leaf(br.b1, requires_grad);
        bv.w2 = tape.leaf(br.w2, requires_grad);
        bv.b2 = tape.leaf(br.b2, requires_grad);
        bv.w3 = tape.leaf(br.w3, requires_grad);
        bv.b3 = tape.leaf(br.b3, requires_grad);
    };
    lift(m.low, v.low);
    lift(m.high, v.high);
    v.beta = tape.leaf(m.beta, requires_grad);
    v.s_lf = tape.leaf(m.s_lf, requires_grad);
    v.s_hf = tape.leaf(m.s_hf, requires_grad);
    v.s_grad = tape.leaf(m.s_grad, requires_grad);
    return v;
}

// Leaf handles in parameters() order, so grads can be read back positionally.
template <typename T>
std::vector<ag::Var<T>> flatten(const ModelVars<T>& v) {
    std::vector<ag::Var<T>> out;
    auto push_branch = [&out](const BranchVars<T>& bv) {
        for (const auto& g : bv.grids) out.push_back(g);
        out.push_back(bv.w1);
        out.push_back(bv.b1);
        out.push_back(bv.w2);
        out.push_back(bv.b2);
        out.push_back(bv.w3);
        out.push_back(bv.b3);
    };
    push_branch(v.low);
    push_branch(v.high);
    out.push_back(v.beta);
    out.push_back(v.s_lf);
    out.push_back(v.s_hf);
    out.push_back(v.s_grad);
    return out;
}

// Rebuilds ModelVars from an externally supplied flat leaf list (gradient
// checking drives the same forward path through arbitrary points).
template <typename T>
ModelVars<T> vars_from_leaves(FieldModelT<T>& m, const std::vector<ag::Var<T>>& leaves) {
    ModelVars<T> v;
    size_t at = 0;
    auto take = [&]() { return leaves.at(at++); };
    auto lift = [&](Branch<T>& br, BranchVars<T>& bv) {
        for (size_t l = 0; l < br.levels.size(); ++l) bv.grids.push_back(take());
        bv.w1 = take();
        bv.b1 = take();
        bv.w2 = take();
        bv.b2 = take();
        bv.w3 = take();
        bv.b3 = take();
    };
    lift(m.low, v.low);
    lift(m.high, v.high);
    v.beta = take();
    v.s_lf = take();
    v.s_hf = take();
    v.s_grad = take();
    if (at != leaves.size())
        throw std::logic_error("vars_from_leaves: leaf count mismatch");
    return v;
}

template <typename T>
ag::Var<T> eval_branch(ag::Tape<T>& tape, const Branch<T>& br, const BranchVars<T>& bv,
                       const QuerySpec& q) {
    std::vector<ag::Var<T>> feats;
    feats.reserve(br.levels.size());
    for (size_t l = 0; l < br.levels.size(); ++l)
        feats.push_back(ag::gather_bilinear(bv.grids[l], build_plan(br.levels[l], q)));
    ag::Var<T> x = feats.size() == 1 ? feats[0] : ag::concat_cols(feats);
    x = ag::relu(ag::add(ag::matmul(x, bv.w1), bv.b1));
    x = ag::relu(ag::add(ag::matmul(x, bv.w2), bv.b2));
    x = ag::add(ag::matmul(x, bv.w3), bv.b3);
    (void)tape;
    return x; // (queries, out)
}

template <typename T>
ag::Var<T> eval_low_t(ag::Tape<T>& tape, FieldModelT<T>& m, const ModelVars<T>& v,
                      const QuerySpec& q) {
    ag::Var<T> x = eval_branch(tape, m.low, v.low, q);
    return ag::reshape(x, Shape{q.rows, q.cols, 3});
}

template <typename T>
ag::Var<T> eval_high_t(ag::Tape<T>& tape, FieldModelT<T>& m, const ModelVars<T>& v,
                       const QuerySpec& q) {
    ag::Var<T> x = eval_branch(tape, m.high, v.high, q);
    const int64_t c = m.cfg.hf_per_channel ? 3 : 1;
    return ag::reshape(x, Shape{q.rows, q.cols, c});
}

template <typename T>
ag::Var<T> compose_t(ag::Tape<T>& tape, FieldModelT<T>& m, const ModelVars<T>& v,
                     const QuerySpec& q) {
    ag::Var<T> low = eval_low_t(tape, m, v, q);
    ag::Var<T> high = eval_high_t(tape, m, v, q);
    return ag::sub(ag::add(low, high), v.beta);
}

// Plain (no-gradient) evaluation helpers on image lattices.

template <typename T>
Tensor<T> eval_plane(FieldModelT<T>& m, const QuerySpec& q, bool low_branch) {
    ag::Tape<T> tape;
    ModelVars<T> v = make_vars(tape, m, false);
    ag::Var<T> out = low_branch ? eval_low_t(tape, m, v, q) : eval_high_t(tape, m, v, q);
    return out.value();
}

template <typename T>
Tensor<T> compose_plane(FieldModelT<T>& m, const QuerySpec& q) {
    ag::Tape<T> tape;
    ModelVars<T> v = make_vars(tape, m, false);
    return compose_t(tape, m, v, q).value();
}

// Full-frame render with clamping, in row strips to bound peak memory.
template <typename T>
Tensor<float> render(FieldModelT<T>& m, int64_t out_h, int64_t out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("render: output dims must be >= 1");
    Tensor<float> img{Shape{out_h, out_w, 3}};
    const int64_t strip = std::max<int64_t>(1, (int64_t(1) << 18) / out_w);
    for (int64_t r0 = 0; r0 < out_h; r0 += strip) {
        const int64_t h = std::min(strip, out_h - r0);
        QuerySpec q = window_queries(out_h, out_w, r0, 0, h, out_w);
        Tensor<T> block = compose_plane(m, q);
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < out_w; ++j)
                for (int64_t c = 0; c < 3; ++c) {
                    float val = static_cast<float>(block.at(i, j, c));
                    img.at(r0 + i, j, c) = val < 0.f ? 0.f : (val > 1.f ? 1.f : val);
                }
    }
    return img;
}

} // namespace duofit::fields
