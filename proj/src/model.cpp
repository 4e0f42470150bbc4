#include "dnp/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dnp {

ConvLayer::ConvLayer(int dim_, int ksize_, int in_ch_, int out_ch_,
                     const std::string& name, Rng& rng)
    : dim(dim_), ksize(ksize_), in_ch(in_ch_), out_ch(out_ch_) {
    int taps = 1;
    for (int i = 0; i < dim; ++i) taps *= ksize;
    w.name = name + ".w";
    w.value = NdArray({taps, in_ch, out_ch});
    b.name = name + ".b";
    b.value = NdArray({out_ch});
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / double(taps * in_ch)));
    for (double& x : w.value.v) x = gauss(rng);
}

namespace {

struct ConvGeom {
    int d, taps, cin, cout;
    std::array<int, 3> shape{1, 1, 1};
    std::size_t stride[3] = {1, 1, 1};
    std::vector<std::array<int, 3>> off;
};

ConvGeom conv_geom(const ConvLayer& l, const NdArray& x) {
    if (x.shape.back() != l.in_ch) throw ShapeMismatch("conv input channels");
    ConvGeom g;
    g.d = l.dim;
    g.cin = l.in_ch;
    g.cout = l.out_ch;
    for (int i = 0; i < g.d; ++i) g.shape[size_t(i)] = x.shape[size_t(i)];
    std::size_t st = 1;
    for (int i = g.d - 1; i >= 0; --i) {
        g.stride[i] = st;
        st *= std::size_t(g.shape[size_t(i)]);
    }
    const int r = (l.ksize - 1) / 2;
    std::array<int, 3> kshape{1, 1, 1};
    for (int i = 0; i < g.d; ++i) kshape[size_t(i)] = l.ksize;
    for_each_coord(kshape.data(), g.d, [&](std::size_t, const int* k) {
        std::array<int, 3> o{0, 0, 0};
        for (int i = 0; i < g.d; ++i) o[size_t(i)] = k[i] - r;
        g.off.push_back(o);
    });
    g.taps = int(g.off.size());
    return g;
}

} // namespace

NdArray ConvLayer::forward(const NdArray& x) const {
    ConvGeom g = conv_geom(*this, x);
    std::vector<int> oshape = x.shape;
    oshape.back() = out_ch;
    NdArray out(oshape);
    const double* xp = x.data();
    const double* wp = w.value.data();
    const double* bp = b.value.data();
    double* op = out.data();
    std::vector<double> acc(static_cast<std::size_t>(g.cout));

    for_each_coord(g.shape.data(), g.d, [&](std::size_t lin, const int* v) {
        for (int c = 0; c < g.cout; ++c) acc[size_t(c)] = bp[c];
        for (int t = 0; t < g.taps; ++t) {
            std::size_t qlin = 0;
            bool ok = true;
            for (int i = 0; i < g.d; ++i) {
                int q = v[i] + g.off[size_t(t)][size_t(i)];
                if (q < 0 || q >= g.shape[size_t(i)]) { ok = false; break; }
                qlin += std::size_t(q) * g.stride[i];
            }
            if (!ok) continue; // zero padding
            const double* xr = xp + qlin * std::size_t(g.cin);
            const double* wr = wp + std::size_t(t) * std::size_t(g.cin) * std::size_t(g.cout);
            for (int ci = 0; ci < g.cin; ++ci) {
                double xv = xr[ci];
                if (xv == 0.0) continue;
                const double* wrow = wr + std::size_t(ci) * std::size_t(g.cout);
                for (int co = 0; co < g.cout; ++co) acc[size_t(co)] += xv * wrow[co];
            }
        }
        double* orow = op + lin * std::size_t(g.cout);
        for (int c = 0; c < g.cout; ++c) orow[c] = acc[size_t(c)];
    });
    return out;
}

NdArray ConvLayer::backward(const NdArray& x, const NdArray& grad_out) {
    ConvGeom g = conv_geom(*this, x);
    if (grad_out.shape.back() != out_ch) throw ShapeMismatch("conv grad channels");
    if (!w.grad.same_shape(w.value)) { w.grad = NdArray(w.value.shape); }
    if (!b.grad.same_shape(b.value)) { b.grad = NdArray(b.value.shape); }
    NdArray gx(x.shape);
    const double* xp = x.data();
    const double* gp = grad_out.data();
    const double* wp = w.value.data();
    double* gw = w.grad.data();
    double* gb = b.grad.data();
    double* gi = gx.data();

    for_each_coord(g.shape.data(), g.d, [&](std::size_t lin, const int* v) {
        const double* grow = gp + lin * std::size_t(g.cout);
        for (int c = 0; c < g.cout; ++c) gb[c] += grow[c];
        for (int t = 0; t < g.taps; ++t) {
            std::size_t qlin = 0;
            bool ok = true;
            for (int i = 0; i < g.d; ++i) {
                int q = v[i] + g.off[size_t(t)][size_t(i)];
                if (q < 0 || q >= g.shape[size_t(i)]) { ok = false; break; }
                qlin += std::size_t(q) * g.stride[i];
            }
            if (!ok) continue;
            const double* xr = xp + qlin * std::size_t(g.cin);
            double* gxr = gi + qlin * std::size_t(g.cin);
            const std::size_t tbase = std::size_t(t) * std::size_t(g.cin) * std::size_t(g.cout);
            for (int ci = 0; ci < g.cin; ++ci) {
                const double* wrow = wp + tbase + std::size_t(ci) * std::size_t(g.cout);
                double* gwrow = gw + tbase + std::size_t(ci) * std::size_t(g.cout);
                double xv = xr[ci];
                double s = 0.0;
                for (int co = 0; co < g.cout; ++co) {
                    double gv = grow[co];
                    s += wrow[co] * gv;
                    gwrow[co] += xv * gv;
                }
                gxr[ci] += s;
            }
        }
    });
    return gx;
}

ConvBlock::ConvBlock(int dim, int in_ch, int hidden, int out_ch,
                     const std::string& name, Rng& rng)
    : c1(dim, 3, in_ch, hidden, name + ".c1", rng),
      c2(dim, 3, hidden, hidden, name + ".c2", rng),
      c3(dim, 1, hidden, out_ch, name + ".c3", rng) {}

namespace {

NdArray relu(const NdArray& x) {
    NdArray y = x;
    for (double& v : y.v) v = v > 0 ? v : 0.0;
    return y;
}

NdArray relu_backward(const NdArray& pre, const NdArray& g) {
    NdArray out = g;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (pre[i] <= 0) out[i] = 0.0;
    return out;
}

} // namespace

NdArray ConvBlock::forward(const NdArray& x, BlockCtx* ctx) const {
    NdArray a1 = c1.forward(x);
    NdArray h1 = relu(a1);
    NdArray a2 = c2.forward(h1);
    NdArray h2 = relu(a2);
    NdArray y = c3.forward(h2);
    if (ctx) {
        ctx->x = x;
        ctx->a1 = std::move(a1);
        ctx->a2 = std::move(a2);
    }
    return y;
}

NdArray ConvBlock::backward(const BlockCtx& ctx, const NdArray& grad_out) {
    NdArray h2 = relu(ctx.a2);
    NdArray g2 = c3.backward(h2, grad_out);
    g2 = relu_backward(ctx.a2, g2);
    NdArray h1 = relu(ctx.a1);
    NdArray g1 = c2.backward(h1, g2);
    g1 = relu_backward(ctx.a1, g1);
    return c1.backward(ctx.x, g1);
}

std::vector<Tensor*> ConvBlock::params() {
    return {&c1.w, &c1.b, &c2.w, &c2.b, &c3.w, &c3.b};
}

namespace {

std::vector<int> halved_shape(const std::vector<int>& shape, int d) {
    std::vector<int> out = shape;
    for (int i = 0; i < d; ++i) out[size_t(i)] = (out[size_t(i)] + 1) / 2;
    return out;
}

// 2x average pooling over the spatial axes (channels-last); border cells with
// fewer than 2^d taps average over the taps that exist.
NdArray avgpool2(const NdArray& x, int d) {
    const int ch = x.shape.back();
    NdArray out(halved_shape(x.shape, d));
    std::array<int, 3> oshape{1, 1, 1}, xdim{1, 1, 1};
    for (int i = 0; i < d; ++i) {
        oshape[size_t(i)] = out.shape[size_t(i)];
        xdim[size_t(i)] = x.shape[size_t(i)];
    }
    std::size_t xstride[3] = {1, 1, 1};
    std::size_t st = 1;
    for (int i = d - 1; i >= 0; --i) { xstride[i] = st; st *= std::size_t(xdim[size_t(i)]); }
    std::array<int, 3> two{1, 1, 1};
    for (int i = 0; i < d; ++i) two[size_t(i)] = 2;
    for_each_coord(oshape.data(), d, [&](std::size_t olin, const int* v) {
        double* orow = out.data() + olin * std::size_t(ch);
        int taps = 0;
        for_each_coord(two.data(), d, [&](std::size_t, const int* k) {
            std::size_t qlin = 0;
            for (int i = 0; i < d; ++i) {
                int q = 2 * v[i] + k[i];
                if (q >= xdim[size_t(i)]) return;
                qlin += std::size_t(q) * xstride[i];
            }
            const double* xr = x.data() + qlin * std::size_t(ch);
            for (int c = 0; c < ch; ++c) orow[c] += xr[c];
            ++taps;
        });
        for (int c = 0; c < ch; ++c) orow[c] /= double(taps);
    });
    return out;
}

NdArray avgpool2_backward(const NdArray& g, const std::vector<int>& xshape, int d) {
    const int ch = g.shape.back();
    NdArray gx(xshape);
    std::array<int, 3> oshape{1, 1, 1}, xdim{1, 1, 1};
    for (int i = 0; i < d; ++i) {
        oshape[size_t(i)] = g.shape[size_t(i)];
        xdim[size_t(i)] = xshape[size_t(i)];
    }
    std::size_t xstride[3] = {1, 1, 1};
    std::size_t st = 1;
    for (int i = d - 1; i >= 0; --i) { xstride[i] = st; st *= std::size_t(xdim[size_t(i)]); }
    std::array<int, 3> two{1, 1, 1};
    for (int i = 0; i < d; ++i) two[size_t(i)] = 2;
    for_each_coord(oshape.data(), d, [&](std::size_t olin, const int* v) {
        int taps = 0;
        for_each_coord(two.data(), d, [&](std::size_t, const int* k) {
            for (int i = 0; i < d; ++i)
                if (2 * v[i] + k[i] >= xdim[size_t(i)]) return;
            ++taps;
        });
        const double* grow = g.data() + olin * std::size_t(ch);
        for_each_coord(two.data(), d, [&](std::size_t, const int* k) {
            std::size_t qlin = 0;
            for (int i = 0; i < d; ++i) {
                int q = 2 * v[i] + k[i];
                if (q >= xdim[size_t(i)]) return;
                qlin += std::size_t(q) * xstride[i];
            }
            double* gr = gx.data() + qlin * std::size_t(ch);
            for (int c = 0; c < ch; ++c) gr[c] += grow[c] / double(taps);
        });
    });
    return gx;
}

// Nearest-neighbor 2x upsampling back to `full` spatial dimensions.
NdArray upsample2(const NdArray& x, const std::vector<int>& full, int d) {
    const int ch = x.shape.back();
    std::vector<int> oshape = full;
    oshape.back() = ch;
    NdArray out(oshape);
    std::array<int, 3> odim{1, 1, 1};
    for (int i = 0; i < d; ++i) odim[size_t(i)] = oshape[size_t(i)];
    std::size_t xstride[3] = {1, 1, 1};
    std::size_t st = 1;
    for (int i = d - 1; i >= 0; --i) { xstride[i] = st; st *= std::size_t(x.shape[size_t(i)]); }
    for_each_coord(odim.data(), d, [&](std::size_t olin, const int* v) {
        std::size_t qlin = 0;
        for (int i = 0; i < d; ++i) qlin += std::size_t(v[i] / 2) * xstride[i];
        std::memcpy(out.data() + olin * std::size_t(ch), x.data() + qlin * std::size_t(ch),
                    std::size_t(ch) * sizeof(double));
    });
    return out;
}

NdArray upsample2_backward(const NdArray& g, const std::vector<int>& half, int d) {
    const int ch = g.shape.back();
    NdArray gx(half);
    std::array<int, 3> odim{1, 1, 1};
    for (int i = 0; i < d; ++i) odim[size_t(i)] = g.shape[size_t(i)];
    std::size_t xstride[3] = {1, 1, 1};
    std::size_t st = 1;
    for (int i = d - 1; i >= 0; --i) { xstride[i] = st; st *= std::size_t(half[size_t(i)]); }
    for_each_coord(odim.data(), d, [&](std::size_t olin, const int* v) {
        std::size_t qlin = 0;
        for (int i = 0; i < d; ++i) qlin += std::size_t(v[i] / 2) * xstride[i];
        const double* grow = g.data() + olin * std::size_t(ch);
        double* gr = gx.data() + qlin * std::size_t(ch);
        for (int c = 0; c < ch; ++c) gr[c] += grow[c];
    });
    return gx;
}

// inverse of concat_channels
void split_channels(const NdArray& x, NdArray& a, NdArray& b) {
    const int fa = a.shape.back(), fb = b.shape.back();
    const std::size_t n = x.size() / std::size_t(fa + fb);
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(a.data() + i * std::size_t(fa),
                    x.data() + i * std::size_t(fa + fb), std::size_t(fa) * sizeof(double));
        std::memcpy(b.data() + i * std::size_t(fb),
                    x.data() + i * std::size_t(fa + fb) + std::size_t(fa),
                    std::size_t(fb) * sizeof(double));
    }
}

} // namespace

UNetBlock::UNetBlock(int dim, int in_ch, int hidden, int out_ch,
                     const std::string& name, Rng& rng)
    : c1(dim, 3, in_ch, hidden, name + ".c1", rng),
      c2(dim, 3, hidden, hidden, name + ".c2", rng),
      d1(dim, 3, hidden, hidden, name + ".d1", rng),
      d2(dim, 3, hidden, hidden, name + ".d2", rng),
      d3(dim, 3, hidden, hidden, name + ".d3", rng),
      c3(dim, 1, 2 * hidden, out_ch, name + ".c3", rng) {}

NdArray UNetBlock::forward(const NdArray& x, BlockCtx* ctx) const {
    const int d = c1.dim;
    NdArray a1 = c1.forward(x);
    NdArray h1 = relu(a1);
    NdArray a2 = c2.forward(h1);
    NdArray h2 = relu(a2);
    NdArray p = avgpool2(h2, d);
    NdArray a3 = d1.forward(p);
    NdArray h3 = relu(a3);
    NdArray a4 = d2.forward(h3);
    NdArray h4 = relu(a4);
    NdArray a5 = d3.forward(h4);
    NdArray u = upsample2(relu(a5), x.shape, d);
    NdArray y = c3.forward(concat_channels(h2, u));
    if (ctx) {
        ctx->x = x;
        ctx->a1 = std::move(a1);
        ctx->a2 = std::move(a2);
        ctx->a3 = std::move(a3);
        ctx->a4 = std::move(a4);
        ctx->a5 = std::move(a5);
    }
    return y;
}

NdArray UNetBlock::backward(const BlockCtx& ctx, const NdArray& grad_out) {
    const int d = c1.dim;
    NdArray h1 = relu(ctx.a1);
    NdArray h2 = relu(ctx.a2);
    NdArray p = avgpool2(h2, d);
    NdArray h3 = relu(ctx.a3);
    NdArray h4 = relu(ctx.a4);
    NdArray h5 = relu(ctx.a5);
    NdArray u = upsample2(h5, ctx.x.shape, d);

    NdArray gcat = c3.backward(concat_channels(h2, u), grad_out);
    NdArray gskip(h2.shape), gu(u.shape);
    split_channels(gcat, gskip, gu);

    NdArray g5 = relu_backward(ctx.a5, upsample2_backward(gu, h5.shape, d));
    NdArray g4 = relu_backward(ctx.a4, d3.backward(h4, g5));
    NdArray g3 = relu_backward(ctx.a3, d2.backward(h3, g4));
    NdArray gp = d1.backward(p, g3);
    NdArray gh2 = avgpool2_backward(gp, h2.shape, d);
    for (std::size_t i = 0; i < gh2.size(); ++i) gh2[i] += gskip[i];

    NdArray g2 = relu_backward(ctx.a2, gh2);
    NdArray g1 = relu_backward(ctx.a1, c2.backward(h1, g2));
    return c1.backward(ctx.x, g1);
}

std::vector<Tensor*> UNetBlock::params() {
    return {&c1.w, &c1.b, &c2.w, &c2.b, &d1.w, &d1.b,
            &d2.w, &d2.b, &d3.w, &d3.b, &c3.w, &c3.b};
}

int PatchworkModel::out_channels(int level) const {
    if (!cfg.block_out.empty()) return cfg.block_out[size_t(level)];
    if (cfg.identical_blocks) return cfg.num_labels + cfg.intermediate_out;
    return level == scheme.depth - 1 ? cfg.num_labels
                                     : cfg.num_labels + cfg.intermediate_out;
}

int PatchworkModel::context_channels(int level) const {
    if (level == 0 && !cfg.identical_blocks) return 0;
    return out_channels(level == 0 ? 0 : level - 1);
}

int PatchworkModel::in_channels(int level) const {
    return image_channels + context_channels(level);
}

PatchworkModel PatchworkModel::create(const Scheme& scheme, const ModelConfig& cfg,
                                      int image_channels, Rng& rng) {
    PatchworkModel m;
    m.scheme = scheme;
    m.cfg = cfg;
    m.image_channels = image_channels;
    if (!cfg.block_out.empty() && int(cfg.block_out.size()) != scheme.depth)
        throw InvalidConfig("block_out length != depth");
    if (cfg.block_type != "fcn" && cfg.block_type != "unet")
        throw InvalidConfig("block_type must be fcn or unet");
    auto make_block = [&](int n, const std::string& name) -> std::shared_ptr<Block> {
        if (cfg.block_type == "unet")
            return std::make_shared<UNetBlock>(scheme.ndim, m.in_channels(n), cfg.hidden,
                                               m.out_channels(n), name, rng);
        return std::make_shared<ConvBlock>(scheme.ndim, m.in_channels(n), cfg.hidden,
                                           m.out_channels(n), name, rng);
    };
    if (cfg.identical_blocks) {
        m.blocks.assign(size_t(scheme.depth), make_block(0, "block"));
    } else {
        for (int n = 0; n < scheme.depth; ++n)
            m.blocks.push_back(make_block(n, "block" + std::to_string(n)));
    }
    return m;
}

std::vector<Tensor*> PatchworkModel::parameters() const {
    std::vector<Tensor*> out;
    for (std::size_t n = 0; n < blocks.size(); ++n) {
        if (cfg.identical_blocks && n > 0) break;
        for (Tensor* t : blocks[n]->params()) out.push_back(t);
    }
    return out;
}

void PatchworkModel::zero_grads() const {
    for (Tensor* t : parameters()) t->zero_grad();
}

NdArray concat_channels(const NdArray& a, const NdArray& b) {
    const int fa = a.shape.back(), fb = b.shape.back();
    std::vector<int> shape = a.shape;
    shape.back() = fa + fb;
    for (std::size_t i = 0; i + 1 < a.shape.size(); ++i)
        if (a.shape[i] != b.shape[i]) throw ShapeMismatch("concat spatial shapes differ");
    NdArray out(shape);
    const std::size_t n = a.size() / std::size_t(fa);
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * std::size_t(fa + fb), a.data() + i * std::size_t(fa),
                    std::size_t(fa) * sizeof(double));
        std::memcpy(out.data() + i * std::size_t(fa + fb) + std::size_t(fa),
                    b.data() + i * std::size_t(fb), std::size_t(fb) * sizeof(double));
    }
    return out;
}

std::vector<NdArray> PatchworkModel::forward(const PatchChain& chain,
                                             const std::vector<NdArray>& inputs,
                                             ForwardCache* cache) const {
    const int N = scheme.depth;
    if (int(chain.patches.size()) != N || int(inputs.size()) != N)
        throw ShapeMismatch("chain/input depth mismatch");
    std::vector<NdArray> xs(static_cast<std::size_t>(N));
    if (cache) {
        cache->concat.resize(size_t(N));
        cache->ctx.resize(size_t(N));
        cache->x.resize(size_t(N));
    }
    for (int n = 0; n < N; ++n) {
        NdArray in;
        const int ctx_ch = context_channels(n);
        if (ctx_ch == 0) {
            in = inputs[size_t(n)];
        } else {
            NdArray c;
            if (n > 0 && cfg.forward_enabled) {
                PatchData prev{chain.patches[size_t(n - 1)], xs[size_t(n - 1)]};
                c = gather(prev.data, prev.patch, chain.patches[size_t(n)], ctx_ch,
                           scheme.interp_type);
            } else {
                std::vector<int> cshape = inputs[size_t(n)].shape;
                cshape.back() = ctx_ch;
                c = NdArray(cshape);
            }
            in = concat_channels(inputs[size_t(n)], c);
        }
        xs[size_t(n)] = blocks[size_t(n)]->forward(in, cache ? &cache->ctx[size_t(n)] : nullptr);
        if (cache) {
            cache->concat[size_t(n)] = std::move(in);
            cache->x[size_t(n)] = xs[size_t(n)];
        }
    }
    return xs;
}

void PatchworkModel::backward(const PatchChain& chain, ForwardCache& cache,
                              const std::vector<NdArray>& grad_per_level) const {
    const int N = scheme.depth;
    std::vector<NdArray> gx(static_cast<std::size_t>(N)); // accumulated dL/dX_n
    for (int n = 0; n < N; ++n)
        if (n < int(grad_per_level.size()) && !grad_per_level[size_t(n)].empty())
            gx[size_t(n)] = grad_per_level[size_t(n)];
    for (int n = N - 1; n >= 0; --n) {
        if (gx[size_t(n)].empty()) continue;
        NdArray gin = blocks[size_t(n)]->backward(cache.ctx[size_t(n)], gx[size_t(n)]);
        const int ctx_ch = context_channels(n);
        if (n > 0 && ctx_ch > 0 && cfg.forward_enabled) {
            // split off the forwarded-context gradient and push it upstream
            const int f = image_channels;
            std::vector<int> cshape = gin.shape;
            cshape.back() = ctx_ch;
            NdArray gc(cshape);
            const std::size_t nvox = gin.size() / std::size_t(f + ctx_ch);
            for (std::size_t i = 0; i < nvox; ++i)
                std::memcpy(gc.data() + i * std::size_t(ctx_ch),
                            gin.data() + i * std::size_t(f + ctx_ch) + std::size_t(f),
                            std::size_t(ctx_ch) * sizeof(double));
            NdArray up = gather_adjoint(gc, chain.patches[size_t(n - 1)],
                                        chain.patches[size_t(n)],
                                        cache.x[size_t(n - 1)].shape, scheme.interp_type);
            if (gx[size_t(n - 1)].empty())
                gx[size_t(n - 1)] = std::move(up);
            else
                for (std::size_t i = 0; i < up.size(); ++i) gx[size_t(n - 1)][i] += up[i];
        }
    }
}

// ---- checkpoint I/O ----

namespace {

using nlohmann::json;

json vec_to_json(const Vec& v, int d) {
    json a = json::array();
    for (int i = 0; i < d; ++i) a.push_back(v[size_t(i)]);
    return a;
}

Vec vec_from_json(const json& a) {
    Vec v{0, 0, 0};
    for (std::size_t i = 0; i < a.size() && i < 3; ++i) v[i] = a[i].get<double>();
    return v;
}

json scheme_to_json(const Scheme& s) {
    json j;
    j["depth"] = s.depth;
    j["ndim"] = s.ndim;
    json ps = json::array();
    for (const auto& p : s.patch_shape) {
        json t = json::array();
        for (int i = 0; i < s.ndim; ++i) t.push_back(p[size_t(i)]);
        ps.push_back(t);
    }
    j["patch_size"] = ps;
    j["fov_mm"] = vec_to_json(s.fov, s.ndim);
    j["destvox_mm"] = vec_to_json(s.dest_voxel, s.ndim);
    j["system"] = s.system;
    j["snapper"] = s.snapper;
    j["interp_type"] = interp_to_string(s.interp_type);
    j["scatter_type"] = interp_to_string(s.scatter_type);
    j["smoothfac_data"] = prefilter_to_string(s.smoothfac_data);
    j["smoothfac_label"] = prefilter_to_string(s.smoothfac_label);
    j["normalize_input"] = int(s.normalize_input);
    return j;
}

Scheme scheme_from_json(const json& j) {
    Scheme s;
    s.depth = j.at("depth").get<int>();
    s.ndim = j.at("ndim").get<int>();
    for (const auto& t : j.at("patch_size")) {
        std::array<int, 3> p{1, 1, 1};
        for (std::size_t i = 0; i < t.size() && i < 3; ++i) p[i] = t[i].get<int>();
        s.patch_shape.push_back(p);
    }
    s.fov = vec_from_json(j.at("fov_mm"));
    s.dest_voxel = vec_from_json(j.at("destvox_mm"));
    s.system = j.at("system").get<std::string>();
    s.snapper = j.at("snapper").get<std::vector<int>>();
    s.interp_type = parse_interp(j.at("interp_type").get<std::string>());
    s.scatter_type = parse_interp(j.at("scatter_type").get<std::string>());
    s.smoothfac_data = parse_prefilter(j.at("smoothfac_data").get<std::string>());
    s.smoothfac_label = parse_prefilter(j.at("smoothfac_label").get<std::string>());
    s.normalize_input = NormalizeMode(j.at("normalize_input").get<int>());
    recompute_scheme_levels(s);
    return s;
}

} // namespace

void PatchworkModel::save(const std::string& path) const {
    json j;
    j["scheme"] = scheme_to_json(scheme);
    j["image_channels"] = image_channels;
    j["block_type"] = cfg.block_type;
    j["hidden"] = cfg.hidden;
    j["identical_blocks"] = cfg.identical_blocks;
    j["intermediate_out"] = cfg.intermediate_out;
    j["num_labels"] = cfg.num_labels;
    j["categorical"] = cfg.categorical;
    j["block_out"] = cfg.block_out;
    j["label_values"] = cfg.label_values;
    j["augment"] = {{"dphi", vec_to_json(train_augment.dphi, 3)},
                    {"flip", std::vector<int>(train_augment.flip.begin(), train_augment.flip.end())},
                    {"dscale", vec_to_json(train_augment.dscale, 3)},
                    {"independent", train_augment.independent}};
    json tensors = json::array();
    for (const Tensor* t : parameters())
        tensors.push_back({{"name", t->name}, {"shape", t->value.shape}});
    j["tensors"] = tensors;
    std::string header = j.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.write("DNPW1", 5);
    uint32_t len = uint32_t(header.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(header.data(), std::streamsize(header.size()));
    for (const Tensor* t : parameters())
        f.write(reinterpret_cast<const char*>(t->value.data()),
                std::streamsize(t->value.size() * sizeof(double)));
    if (!f) throw IoError("short write to " + path);
}

PatchworkModel PatchworkModel::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[5];
    f.read(magic, 5);
    if (!f || std::memcmp(magic, "DNPW1", 5) != 0)
        throw MalformedHeader("not a DNPW1 checkpoint: " + path);
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string header(len, '\0');
    f.read(header.data(), len);
    if (!f) throw IoError("truncated checkpoint header");
    json j = json::parse(header);

    ModelConfig cfg;
    cfg.block_type = j.value("block_type", "fcn");
    cfg.hidden = j.at("hidden").get<int>();
    cfg.identical_blocks = j.at("identical_blocks").get<bool>();
    cfg.intermediate_out = j.at("intermediate_out").get<int>();
    cfg.num_labels = j.at("num_labels").get<int>();
    cfg.categorical = j.at("categorical").get<bool>();
    cfg.block_out = j.at("block_out").get<std::vector<int>>();
    cfg.label_values = j.at("label_values").get<std::vector<int>>();

    Scheme scheme = scheme_from_json(j.at("scheme"));
    Rng rng(0);
    PatchworkModel m = create(scheme, cfg, j.at("image_channels").get<int>(), rng);
    const auto& ja = j.at("augment");
    m.train_augment.dphi = vec_from_json(ja.at("dphi"));
    auto flips = ja.at("flip").get<std::vector<int>>();
    for (std::size_t i = 0; i < flips.size() && i < 3; ++i) m.train_augment.flip[i] = flips[i];
    m.train_augment.dscale = vec_from_json(ja.at("dscale"));
    m.train_augment.independent = ja.at("independent").get<bool>();

    auto params = m.parameters();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.size()) throw MalformedHeader("tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& tj = tensors[i];
        if (tj.at("name").get<std::string>() != params[i]->name ||
            tj.at("shape").get<std::vector<int>>() != params[i]->value.shape)
            throw MalformedHeader("tensor layout mismatch at " + params[i]->name);
        f.read(reinterpret_cast<char*>(params[i]->value.v.data()),
               std::streamsize(params[i]->value.size() * sizeof(double)));
        if (!f) throw IoError("truncated tensor data");
    }
    return m;
}

NdArray output_probabilities(const PatchworkModel& m, const NdArray& logits) {
    const int k = m.cfg.num_labels;
    const int out_ch = logits.shape.back();
    std::vector<int> shape = logits.shape;
    shape.back() = k;
    NdArray p(shape);
    const std::size_t nvox = logits.size() / std::size_t(out_ch);
    for (std::size_t i = 0; i < nvox; ++i) {
        const double* z = logits.data() + i * std::size_t(out_ch);
        double* q = p.data() + i * std::size_t(k);
        if (m.cfg.categorical) {
            double zmax = 0.0;
            for (int c = 0; c < k; ++c) zmax = std::max(zmax, z[c]);
            double denom = std::exp(-zmax);
            for (int c = 0; c < k; ++c) denom += std::exp(z[c] - zmax);
            for (int c = 0; c < k; ++c) q[c] = std::exp(z[c] - zmax) / denom;
        } else {
            for (int c = 0; c < k; ++c) q[c] = 1.0 / (1.0 + std::exp(-z[c]));
        }
    }
    return p;
}

} // namespace dnp
