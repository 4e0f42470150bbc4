#include "dnp/resample.hpp"

#include <cmath>

namespace dnp {

Canvas make_canvas(const Volume& image, const Scheme& s, double sampling_factor,
                   int channels) {
    if (sampling_factor <= 0) throw InvalidConfig("sampling_factor must be > 0");
    Vec vox{1, 1, 1};
    for (int i = 0; i < s.ndim; ++i)
        vox[size_t(i)] = s.dest_voxel[size_t(i)] / sampling_factor;
    return make_canvas(image, s, vox, channels);
}

Canvas make_canvas(const Volume& image, const Scheme& s, const Vec& voxel,
                   int channels) {
    Frame f = scheme_frame(s, image);
    Box ib = image_box(image, f);
    const int d = s.ndim;
    Canvas c;
    Vec vox = voxel;
    std::array<int, 3> shape{1, 1, 1};
    for (int i = 0; i < d; ++i) {
        double w = ib.hi[size_t(i)] - ib.lo[size_t(i)];
        shape[size_t(i)] = std::max(1, int(std::ceil(w / vox[size_t(i)] - 1e-9)));
    }
    std::array<Vec, 3> cols;
    Vec t{0, 0, 0};
    for (int i = 0; i < d; ++i) {
        cols[size_t(i)] = Vec{0, 0, 0};
        for (int r = 0; r < d; ++r)
            cols[size_t(i)][size_t(r)] = f.axes[size_t(i)][size_t(r)] * vox[size_t(i)];
    }
    Vec first{0, 0, 0};
    for (int i = 0; i < d; ++i)
        first[size_t(i)] = ib.lo[size_t(i)] + vox[size_t(i)] / 2.0;
    t = f.to_world(first);
    c.grid.affine = Affine::from_linear(d, cols, t);
    c.grid.shape = shape;
    std::vector<int> ashape;
    for (int i = 0; i < d; ++i) ashape.push_back(shape[size_t(i)]);
    std::vector<int> wshape = ashape;
    ashape.push_back(channels);
    c.accum = NdArray(ashape);
    c.weight = NdArray(wshape);
    return c;
}

namespace {

struct MapRows {
    int d;
    double r[3][4];
    void map(const int* v, double* u) const {
        for (int i = 0; i < d; ++i) {
            double s = r[i][3];
            for (int j = 0; j < d; ++j) s += r[i][j] * v[j];
            u[i] = s;
        }
    }
};

MapRows rows_of(const Affine& a) {
    MapRows m{};
    m.d = a.dim;
    for (int i = 0; i < m.d; ++i) {
        for (int j = 0; j < m.d; ++j) m.r[i][j] = a.m[size_t(i)][size_t(j)];
        m.r[i][3] = a.m[size_t(i)][3];
    }
    return m;
}

} // namespace

NdArray gather(const NdArray& src_data, const Patch& src_patch, const Patch& dst,
               int /*dst_channels_hint*/, Interp interp) {
    const int d = dst.dim();
    const int f = src_data.shape.back();
    std::vector<int> out_shape;
    for (int i = 0; i < d; ++i) out_shape.push_back(dst.shape[size_t(i)]);
    out_shape.push_back(f);
    NdArray out(out_shape);

    std::array<int, 3> ss{1, 1, 1};
    for (int i = 0; i < d; ++i) ss[size_t(i)] = src_data.shape[size_t(i)];
    std::size_t sstride[3] = {1, 1, 1};
    {
        std::size_t st = std::size_t(f);
        for (int i = d - 1; i >= 0; --i) {
            sstride[i] = st;
            st *= std::size_t(ss[size_t(i)]);
        }
    }
    MapRows m = rows_of(index_map(src_patch, dst));

    std::array<int, 3> dshape{1, 1, 1};
    for (int i = 0; i < d; ++i) dshape[size_t(i)] = dst.shape[size_t(i)];
    double* op = out.data();
    const double* sp = src_data.data();

    for_each_coord(dshape.data(), d, [&](std::size_t lin, const int* v) {
        double u[3];
        m.map(v, u);
        double* dstp = op + lin * std::size_t(f);
        if (interp == Interp::NN) {
            std::size_t off = 0;
            bool ok = true;
            for (int i = 0; i < d; ++i) {
                int q = int(std::floor(u[i] + 0.5));
                if (q < 0 || q >= ss[size_t(i)]) { ok = false; break; }
                off += std::size_t(q) * sstride[i];
            }
            if (ok)
                for (int c = 0; c < f; ++c) dstp[c] = sp[off + std::size_t(c)];
            return;
        }
        // linear: zero padding outside
        int base[3];
        double frac[3];
        for (int i = 0; i < d; ++i) {
            double fl = std::floor(u[i]);
            base[i] = int(fl);
            frac[i] = u[i] - fl;
        }
        const int ncorner = 1 << d;
        for (int mask = 0; mask < ncorner; ++mask) {
            double w = 1.0;
            std::size_t off = 0;
            bool ok = true;
            for (int i = 0; i < d; ++i) {
                int q = base[i] + ((mask >> i) & 1);
                w *= ((mask >> i) & 1) ? frac[i] : 1.0 - frac[i];
                if (q < 0 || q >= ss[size_t(i)]) { ok = false; break; }
                off += std::size_t(q) * sstride[i];
            }
            if (!ok || w == 0.0) continue;
            for (int c = 0; c < f; ++c) dstp[c] += w * sp[off + std::size_t(c)];
        }
    });
    return out;
}

NdArray gather_adjoint(const NdArray& grad_dst, const Patch& src_patch,
                       const Patch& dst, const std::vector<int>& src_shape,
                       Interp interp) {
    const int d = dst.dim();
    const int f = src_shape.back();
    NdArray out(src_shape);

    std::array<int, 3> ss{1, 1, 1};
    for (int i = 0; i < d; ++i) ss[size_t(i)] = src_shape[size_t(i)];
    std::size_t sstride[3] = {1, 1, 1};
    {
        std::size_t st = std::size_t(f);
        for (int i = d - 1; i >= 0; --i) {
            sstride[i] = st;
            st *= std::size_t(ss[size_t(i)]);
        }
    }
    MapRows m = rows_of(index_map(src_patch, dst));
    std::array<int, 3> dshape{1, 1, 1};
    for (int i = 0; i < d; ++i) dshape[size_t(i)] = dst.shape[size_t(i)];
    const double* gp = grad_dst.data();
    double* op = out.data();

    for_each_coord(dshape.data(), d, [&](std::size_t lin, const int* v) {
        double u[3];
        m.map(v, u);
        const double* g = gp + lin * std::size_t(f);
        if (interp == Interp::NN) {
            std::size_t off = 0;
            bool ok = true;
            for (int i = 0; i < d; ++i) {
                int q = int(std::floor(u[i] + 0.5));
                if (q < 0 || q >= ss[size_t(i)]) { ok = false; break; }
                off += std::size_t(q) * sstride[i];
            }
            if (ok)
                for (int c = 0; c < f; ++c) op[off + std::size_t(c)] += g[c];
            return;
        }
        int base[3];
        double frac[3];
        for (int i = 0; i < d; ++i) {
            double fl = std::floor(u[i]);
            base[i] = int(fl);
            frac[i] = u[i] - fl;
        }
        const int ncorner = 1 << d;
        for (int mask = 0; mask < ncorner; ++mask) {
            double w = 1.0;
            std::size_t off = 0;
            bool ok = true;
            for (int i = 0; i < d; ++i) {
                int q = base[i] + ((mask >> i) & 1);
                w *= ((mask >> i) & 1) ? frac[i] : 1.0 - frac[i];
                if (q < 0 || q >= ss[size_t(i)]) { ok = false; break; }
                off += std::size_t(q) * sstride[i];
            }
            if (!ok || w == 0.0) continue;
            for (int c = 0; c < f; ++c) op[off + std::size_t(c)] += w * g[c];
        }
    });
    return out;
}

PatchData crop(const Volume& src, const Patch& dst, Interp interp,
               const PrefilterSpec& pf) {
    Vec factor{1, 1, 1};
    bool needs = false;
    for (int i = 0; i < src.ndim; ++i) {
        double r = dst.voxel_size()[size_t(i)] / src.affine.col_norm(i);
        factor[size_t(i)] = std::max(1.0, r);
        if (factor[size_t(i)] > 1.0 + 1e-9) needs = true;
    }
    PatchData out;
    out.patch = dst;
    if (pf.kind != PrefilterKind::None && needs) {
        Volume filtered = prefilter(src, pf, factor);
        out.data = gather(filtered.data, src.as_patch(), dst, filtered.channels(), interp);
    } else {
        out.data = gather(src.data, src.as_patch(), dst, src.channels(), interp);
    }
    return out;
}

PatchData crop(const PatchData& src, const Patch& dst, Interp interp) {
    PatchData out;
    out.patch = dst;
    out.data = gather(src.data, src.patch, dst, src.data.shape.back(), interp);
    return out;
}

WindowKind parse_window(const std::string& s) {
    if (s.empty() || s == "none") return WindowKind::None;
    if (s == "cos") return WindowKind::Cos;
    if (s == "cos2") return WindowKind::Cos2;
    throw InvalidConfig("unknown window '" + s + "'");
}

NdArray window_weights(const std::array<int, 3>& shape, int dim, WindowKind w) {
    std::vector<int> sh;
    for (int i = 0; i < dim; ++i) sh.push_back(shape[size_t(i)]);
    NdArray out(sh, 1.0);
    if (w == WindowKind::None) return out;
    std::array<int, 3> s3{1, 1, 1};
    for (int i = 0; i < dim; ++i) s3[size_t(i)] = shape[size_t(i)];
    for_each_coord(s3.data(), dim, [&](std::size_t lin, const int* v) {
        double x = 1.0;
        for (int i = 0; i < dim; ++i) {
            int s = s3[size_t(i)];
            if (s == 1) continue;
            x *= std::cos(M_PI * (double(v[i]) / double(s - 1) - 0.5));
        }
        if (w == WindowKind::Cos2) x *= x;
        out[lin] = x;
    });
    return out;
}

void scatter(Canvas& canvas, const PatchData& out, const NdArray& window,
             Interp scatter_interp) {
    const int d = out.patch.dim();
    const int f = out.data.shape.back();
    if (f != canvas.channels()) throw ShapeMismatch("scatter channel mismatch");
    std::array<int, 3> cs{1, 1, 1};
    for (int i = 0; i < d; ++i) cs[size_t(i)] = canvas.grid.shape[size_t(i)];
    std::size_t cstride[3] = {1, 1, 1};
    {
        std::size_t st = 1;
        for (int i = d - 1; i >= 0; --i) {
            cstride[i] = st;
            st *= std::size_t(cs[size_t(i)]);
        }
    }
    MapRows m = rows_of(index_map(canvas.grid, out.patch));
    std::array<int, 3> ps{1, 1, 1};
    for (int i = 0; i < d; ++i) ps[size_t(i)] = out.patch.shape[size_t(i)];
    const double* dp = out.data.data();
    const double* wp = window.data();
    double* ap = canvas.accum.data();
    double* gp = canvas.weight.data();

    for_each_coord(ps.data(), d, [&](std::size_t lin, const int* v) {
        double wgt = wp[lin];
        if (wgt == 0.0) return;
        double u[3];
        m.map(v, u);
        const double* val = dp + lin * std::size_t(f);
        auto deposit = [&](std::size_t voxel, double w) {
            gp[voxel] += w;
            double* row = ap + voxel * std::size_t(f);
            for (int c = 0; c < f; ++c) row[c] += w * val[c];
        };
        if (scatter_interp == Interp::NN) {
            std::size_t off = 0;
            for (int i = 0; i < d; ++i) {
                int q = int(std::floor(u[i] + 0.5));
                if (q < 0 || q >= cs[size_t(i)]) return;
                off += std::size_t(q) * cstride[i];
            }
            deposit(off, wgt);
            return;
        }
        int base[3];
        double frac[3];
        for (int i = 0; i < d; ++i) {
            double fl = std::floor(u[i]);
            base[i] = int(fl);
            frac[i] = u[i] - fl;
        }
        const int ncorner = 1 << d;
        for (int mask = 0; mask < ncorner; ++mask) {
            double w = wgt;
            std::size_t off = 0;
            bool ok = true;
            for (int i = 0; i < d; ++i) {
                int q = base[i] + ((mask >> i) & 1);
                w *= ((mask >> i) & 1) ? frac[i] : 1.0 - frac[i];
                if (q < 0 || q >= cs[size_t(i)]) { ok = false; break; }
                off += std::size_t(q) * cstride[i];
            }
            if (ok && w != 0.0) deposit(off, w);
        }
    });
}

Volume finalize(const Canvas& canvas, double alpha) {
    if (alpha < 0) throw InvalidConfig("sparse suppression alpha must be >= 0");
    Volume v;
    v.ndim = canvas.grid.dim();
    v.affine = canvas.grid.affine;
    v.data = NdArray(canvas.accum.shape);
    const int f = canvas.channels();
    const std::size_t n = canvas.weight.size();
    for (std::size_t i = 0; i < n; ++i) {
        double w = canvas.weight[i];
        if (w <= 0.0) continue;
        double denom = std::sqrt(w * w + 3.0 * alpha);
        for (int c = 0; c < f; ++c)
            v.data[i * std::size_t(f) + std::size_t(c)] =
                canvas.accum[i * std::size_t(f) + std::size_t(c)] / denom;
    }
    return v;
}

Volume reconstruct_identity(const Volume& image, const Scheme& s) {
    Canvas canvas = make_canvas(image, s, 1.0, image.channels());
    NdArray win = window_weights(s.patch_shape[size_t(s.depth - 1)], s.ndim, WindowKind::None);
    Rng rng(0);
    std::vector<Patch> level = tree_roots(s, image);
    for (int n = 1; n < s.depth; ++n) {
        std::vector<Patch> next;
        for (const Patch& p : level) {
            auto children = sample_tree_children(s, n, p, 0, 0.0, rng);
            next.insert(next.end(), children.begin(), children.end());
        }
        level = std::move(next);
    }
    for (const Patch& p : level) {
        PatchData pd = crop(image, p, s.interp_type, s.smoothfac_data);
        scatter(canvas, pd, win, s.scatter_type);
    }
    return finalize(canvas, 0.0);
}

} // namespace dnp
