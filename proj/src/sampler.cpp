#include "dnp/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace dnp {

Interp parse_interp(const std::string& s) {
    if (s == "NN" || s == "nn") return Interp::NN;
    if (s == "lin" || s == "linear") return Interp::Linear;
    throw InvalidConfig("unknown interpolation '" + s + "'");
}

std::string interp_to_string(Interp i) { return i == Interp::NN ? "NN" : "lin"; }

Vec Frame::to_world(const Vec& t) const {
    Vec w{0, 0, 0};
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            w[size_t(j)] += axes[size_t(i)][size_t(j)] * t[size_t(i)];
    return w;
}

Vec Frame::from_world(const Vec& w) const {
    Vec t{0, 0, 0};
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            t[size_t(i)] += axes[size_t(i)][size_t(j)] * w[size_t(j)];
    return t;
}

Frame scheme_frame(const Scheme& s, const Volume& image) {
    Frame f;
    f.dim = s.ndim;
    if (s.system == "world") return f;
    // 'matrix': orthonormalized image axes
    for (int i = 0; i < s.ndim; ++i) {
        Vec a{0, 0, 0};
        for (int r = 0; r < s.ndim; ++r) a[size_t(r)] = image.affine.m[size_t(r)][size_t(i)];
        for (int j = 0; j < i; ++j) {
            double dot = 0;
            for (int r = 0; r < s.ndim; ++r) dot += a[size_t(r)] * f.axes[size_t(j)][size_t(r)];
            for (int r = 0; r < s.ndim; ++r) a[size_t(r)] -= dot * f.axes[size_t(j)][size_t(r)];
        }
        double n = 0;
        for (int r = 0; r < s.ndim; ++r) n += a[size_t(r)] * a[size_t(r)];
        n = std::sqrt(n);
        if (n <= 1e-12) throw SingularAffine("degenerate image axes");
        for (int r = 0; r < s.ndim; ++r) f.axes[size_t(i)][size_t(r)] = a[size_t(r)] / n;
    }
    return f;
}

Box image_box(const Volume& image, const Frame& f) {
    const int d = image.ndim;
    auto shape = image.spatial_shape();
    Box b;
    for (int i = 0; i < d; ++i) {
        b.lo[size_t(i)] = 1e300;
        b.hi[size_t(i)] = -1e300;
    }
    const int ncorner = 1 << d;
    for (int mask = 0; mask < ncorner; ++mask) {
        Vec idx{0, 0, 0};
        for (int i = 0; i < d; ++i)
            idx[size_t(i)] = (mask >> i & 1) ? shape[size_t(i)] - 0.5 : -0.5;
        Vec t = f.from_world(image.affine.apply(idx));
        for (int i = 0; i < d; ++i) {
            b.lo[size_t(i)] = std::min(b.lo[size_t(i)], t[size_t(i)]);
            b.hi[size_t(i)] = std::max(b.hi[size_t(i)], t[size_t(i)]);
        }
    }
    return b;
}

Patch make_patch(const Scheme& s, int level, const Frame& f, const Vec& center) {
    Patch p;
    p.shape = s.patch_shape[size_t(level)];
    std::array<Vec, 3> cols;
    for (int i = 0; i < s.ndim; ++i) {
        cols[size_t(i)] = Vec{0, 0, 0};
        for (int r = 0; r < s.ndim; ++r)
            cols[size_t(i)][size_t(r)] = f.axes[size_t(i)][size_t(r)] * s.voxel[size_t(level)][size_t(i)];
    }
    // translation = world position of voxel 0 = center - linear*(shape-1)/2
    Vec cw = f.to_world(center);
    Vec t = cw;
    for (int i = 0; i < s.ndim; ++i) {
        double half = (p.shape[size_t(i)] - 1) / 2.0;
        for (int r = 0; r < s.ndim; ++r) t[size_t(r)] -= cols[size_t(i)][size_t(r)] * half;
    }
    p.affine = Affine::from_linear(s.ndim, cols, t);
    return p;
}

Scheme resolve_scheme(const SchemeConfig& cfg, const Volume& image) {
    if (cfg.depth < 1) throw InvalidScheme("depth must be >= 1");
    if (cfg.ndim != image.ndim) throw SchemeMismatch("scheme ndim != image ndim");
    if (cfg.fov_mm.has_value() == cfg.fov_rel.has_value())
        throw InvalidScheme("exactly one of fov_mm/fov_rel required");
    if (cfg.destvox_mm.has_value() == cfg.destvox_rel.has_value())
        throw InvalidScheme("exactly one of destvox_mm/destvox_rel required");
    if (cfg.patch_size.empty()) throw InvalidScheme("patch_size required");
    if (cfg.patch_size.size() != 1 && int(cfg.patch_size.size()) != cfg.depth)
        throw InvalidScheme("patch_size must have 1 or depth entries");

    Scheme s;
    s.depth = cfg.depth;
    s.ndim = cfg.ndim;
    s.system = cfg.system;
    s.interp_type = cfg.interp_type;
    s.scatter_type = cfg.scatter_type;
    s.smoothfac_data = cfg.smoothfac_data;
    s.smoothfac_label = cfg.smoothfac_label;
    s.normalize_input = cfg.normalize_input;
    for (int n = 0; n < s.depth; ++n)
        s.patch_shape.push_back(cfg.patch_size.size() == 1 ? cfg.patch_size[0]
                                                           : cfg.patch_size[size_t(n)]);
    s.snapper = cfg.snapper;
    if (s.snapper.empty()) s.snapper.assign(size_t(s.depth), 1);
    if (int(s.snapper.size()) != s.depth) throw InvalidScheme("snapper length != depth");

    const int d = s.ndim;
    for (int i = 0; i < d; ++i) {
        s.fov[size_t(i)] = cfg.fov_mm ? (*cfg.fov_mm)[size_t(i)]
                                      : (*cfg.fov_rel)[size_t(i)] * image.extent()[size_t(i)];
        s.dest_voxel[size_t(i)] = cfg.destvox_mm
            ? (*cfg.destvox_mm)[size_t(i)]
            : (*cfg.destvox_rel)[size_t(i)] * image.affine.col_norm(i);
        if (s.fov[size_t(i)] <= 0 || s.dest_voxel[size_t(i)] <= 0)
            throw InvalidScheme("nonpositive fov or dest voxel size");
    }

    recompute_scheme_levels(s);
    return s;
}

void recompute_scheme_levels(Scheme& s) {
    const int d = s.ndim;
    const int N = s.depth;
    Vec finest{0, 0, 0};
    for (int i = 0; i < d; ++i)
        finest[size_t(i)] = s.patch_shape[size_t(N - 1)][size_t(i)] * s.dest_voxel[size_t(i)];
    if (N >= 2) {
        for (int i = 0; i < d; ++i)
            if (finest[size_t(i)] >= s.fov[size_t(i)])
                throw InvalidScheme("finest extent >= fov");
    }
    s.extent.resize(size_t(N));
    s.voxel.resize(size_t(N));
    for (int n = 0; n < N; ++n) {
        for (int i = 0; i < d; ++i) {
            double e;
            if (N == 1)
                e = finest[size_t(i)];
            else if (n == 0)
                e = s.fov[size_t(i)];
            else if (n == N - 1)
                e = finest[size_t(i)];
            else
                e = s.fov[size_t(i)] *
                    std::pow(finest[size_t(i)] / s.fov[size_t(i)], double(n) / double(N - 1));
            s.extent[size_t(n)][size_t(i)] = e;
            s.voxel[size_t(n)][size_t(i)] = e / s.patch_shape[size_t(n)][size_t(i)];
        }
    }
}

Vec snap_center(const Vec& center, const Vec& ext, const Box& parent, int dim) {
    Vec c = center;
    for (int i = 0; i < dim; ++i) {
        double half = ext[size_t(i)] / 2.0;
        double lo = parent.lo[size_t(i)] + half;
        double hi = parent.hi[size_t(i)] - half;
        if (lo > hi + 1e-9) throw ChildTooLarge("child extent exceeds parent");
        c[size_t(i)] = std::clamp(c[size_t(i)], lo, std::max(lo, hi));
    }
    return c;
}

namespace {

// frame aligned with the child's own axes (assumes axis-aligned patches)
Frame patch_frame(const Patch& p) {
    Frame f;
    f.dim = p.dim();
    for (int i = 0; i < f.dim; ++i) {
        double n = p.affine.col_norm(i);
        for (int r = 0; r < f.dim; ++r)
            f.axes[size_t(i)][size_t(r)] = p.affine.m[size_t(r)][size_t(i)] / n;
    }
    return f;
}

Box patch_box(const Patch& p, const Frame& f) {
    Vec c = f.from_world(p.center_world());
    Vec e = p.extent();
    Box b;
    for (int i = 0; i < p.dim(); ++i) {
        b.lo[size_t(i)] = c[size_t(i)] - e[size_t(i)] / 2.0;
        b.hi[size_t(i)] = c[size_t(i)] + e[size_t(i)] / 2.0;
    }
    return b;
}

} // namespace

Patch snap(const Patch& child, const Patch& parent) {
    Frame f = patch_frame(child);
    Box pb = patch_box(parent, f);
    Vec c = f.from_world(child.center_world());
    Vec snapped = snap_center(c, child.extent(), pb, child.dim());
    Patch out = child;
    Vec dw = f.to_world(Vec{snapped[0] - c[0], snapped[1] - c[1], snapped[2] - c[2]});
    for (int i = 0; i < child.dim(); ++i) out.affine.m[size_t(i)][3] += dw[size_t(i)];
    return out;
}

namespace {

Vec sample_root_center(const Scheme& s, const Box& ib, Rng& rng) {
    Vec c{0, 0, 0};
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < s.ndim; ++i)
        c[size_t(i)] = ib.lo[size_t(i)] +
                       uni(rng) * (ib.hi[size_t(i)] - ib.lo[size_t(i)]);
    if (s.snapper.empty() || s.snapper[0]) {
        for (int i = 0; i < s.ndim; ++i) {
            double half = s.extent[0][size_t(i)] / 2.0;
            double lo = ib.lo[size_t(i)] + half, hi = ib.hi[size_t(i)] - half;
            c[size_t(i)] = lo > hi ? (ib.lo[size_t(i)] + ib.hi[size_t(i)]) / 2.0
                                   : std::clamp(c[size_t(i)], lo, hi);
        }
    }
    return c;
}

} // namespace

PatchChain sample_random_chain(const Scheme& s, const Volume& image, Rng& rng) {
    Frame f = scheme_frame(s, image);
    Box ib = image_box(image, f);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    PatchChain chain;
    Vec c = sample_root_center(s, ib, rng);
    chain.patches.push_back(make_patch(s, 0, f, c));
    Vec parent_center = c;
    for (int n = 1; n < s.depth; ++n) {
        Vec cn{0, 0, 0};
        for (int i = 0; i < s.ndim; ++i) {
            double half = s.extent[size_t(n - 1)][size_t(i)] / 2.0;
            cn[size_t(i)] = parent_center[size_t(i)] - half +
                            uni(rng) * 2.0 * half;
        }
        if (s.snapper[size_t(n)]) {
            Box pb;
            for (int i = 0; i < s.ndim; ++i) {
                double half = s.extent[size_t(n - 1)][size_t(i)] / 2.0;
                pb.lo[size_t(i)] = parent_center[size_t(i)] - half;
                pb.hi[size_t(i)] = parent_center[size_t(i)] + half;
            }
            cn = snap_center(cn, s.extent[size_t(n)], pb, s.ndim);
        }
        chain.patches.push_back(make_patch(s, n, f, cn));
        parent_center = cn;
    }
    return chain;
}

PatchChain sample_chain_containing(const Scheme& s, const Volume& image,
                                   const Vec& target, Rng& rng) {
    Frame f = scheme_frame(s, image);
    Box ib = image_box(image, f);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    auto pick = [&](double lo, double hi) {
        return lo >= hi ? (lo + hi) / 2.0 : lo + uni(rng) * (hi - lo);
    };

    PatchChain chain;
    Vec parent_center{0, 0, 0};
    for (int n = 0; n < s.depth; ++n) {
        Vec c{0, 0, 0};
        for (int i = 0; i < s.ndim; ++i) {
            double half = s.extent[size_t(n)][size_t(i)] / 2.0;
            // contain the target point (tiny margin keeps it interior)
            double lo = target[size_t(i)] - half + 1e-9;
            double hi = target[size_t(i)] + half - 1e-9;
            if (n == 0) {
                lo = std::max(lo, ib.lo[size_t(i)] + half);
                hi = std::min(hi, ib.hi[size_t(i)] - half);
                if (lo > hi) { // fov larger than image: fall back to containment only
                    lo = target[size_t(i)] - half;
                    hi = target[size_t(i)] + half;
                }
            } else {
                double phalf = s.extent[size_t(n - 1)][size_t(i)] / 2.0;
                double shrink = phalf - half; // child fully inside parent
                lo = std::max(lo, parent_center[size_t(i)] - shrink);
                hi = std::min(hi, parent_center[size_t(i)] + shrink);
            }
            c[size_t(i)] = pick(lo, hi);
        }
        chain.patches.push_back(make_patch(s, n, f, c));
        parent_center = c;
    }
    return chain;
}

std::vector<Patch> sample_tree_children(const Scheme& s, int level, const Patch& parent,
                                        int branch_factor, double jitter, Rng& rng) {
    if (level < 1 || level >= s.depth) throw InvalidScheme("tree level out of range");
    Frame f = patch_frame(parent);
    Box pb = patch_box(parent, f);
    const Vec ce = s.extent[size_t(level)];
    const int d = s.ndim;

    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    auto jittered = [&](Vec c) {
        if (jitter > 0)
            for (int i = 0; i < d; ++i)
                c[size_t(i)] += uni(rng) * jitter * ce[size_t(i)] / 2.0;
        return snap_center(c, ce, pb, d);
    };

    std::vector<Patch> out;
    if (branch_factor == 1) {
        Vec c{0, 0, 0};
        for (int i = 0; i < d; ++i) c[size_t(i)] = (pb.lo[size_t(i)] + pb.hi[size_t(i)]) / 2.0;
        out.push_back(make_patch(s, level, f, jittered(c)));
        return out;
    }

    // coverage grid: abutting tiles from the low corner, last tile snapped in
    std::array<int, 3> counts{1, 1, 1};
    int m = 1;
    for (int i = 0; i < d; ++i) {
        double pe = pb.hi[size_t(i)] - pb.lo[size_t(i)];
        counts[size_t(i)] = std::max(1, int(std::ceil(pe / ce[size_t(i)] - 1e-9)));
        m *= counts[size_t(i)];
    }
    std::vector<Vec> grid;
    grid.reserve(size_t(m));
    for_each_coord(counts.data(), d, [&](std::size_t, const int* g) {
        Vec c{0, 0, 0};
        for (int i = 0; i < d; ++i) {
            double pos = pb.lo[size_t(i)] + g[i] * ce[size_t(i)] + ce[size_t(i)] / 2.0;
            double maxc = pb.hi[size_t(i)] - ce[size_t(i)] / 2.0;
            c[size_t(i)] = std::min(pos, maxc);
        }
        grid.push_back(c);
    });

    const int k = branch_factor;
    if (k <= 0 || k == m) {
        for (const Vec& c : grid) out.push_back(make_patch(s, level, f, jittered(c)));
    } else if (k > m) {
        for (const Vec& c : grid) out.push_back(make_patch(s, level, f, jittered(c)));
        std::uniform_int_distribution<int> pickg(0, m - 1);
        for (int j = m; j < k; ++j)
            out.push_back(make_patch(s, level, f, jittered(grid[size_t(pickg(rng))])));
    } else {
        std::vector<int> idx(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) idx[size_t(j)] = j;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int j = 0; j < k; ++j)
            out.push_back(make_patch(s, level, f, jittered(grid[size_t(idx[size_t(j)])])));
    }
    return out;
}

std::vector<Patch> tree_roots(const Scheme& s, const Volume& image) {
    Frame f = scheme_frame(s, image);
    Box ib = image_box(image, f);
    const Vec e0 = s.extent[0];
    const int d = s.ndim;
    std::array<int, 3> counts{1, 1, 1};
    for (int i = 0; i < d; ++i) {
        double w = ib.hi[size_t(i)] - ib.lo[size_t(i)];
        counts[size_t(i)] = std::max(1, int(std::ceil(w / e0[size_t(i)] - 1e-9)));
    }
    std::vector<Patch> out;
    for_each_coord(counts.data(), d, [&](std::size_t, const int* g) {
        Vec c{0, 0, 0};
        for (int i = 0; i < d; ++i) {
            double pos = ib.lo[size_t(i)] + g[i] * e0[size_t(i)] + e0[size_t(i)] / 2.0;
            double maxc = ib.hi[size_t(i)] - e0[size_t(i)] / 2.0;
            double minc = (ib.lo[size_t(i)] + ib.hi[size_t(i)]) / 2.0;
            c[size_t(i)] = maxc < ib.lo[size_t(i)] + e0[size_t(i)] / 2.0
                ? minc
                : std::min(pos, maxc);
        }
        out.push_back(make_patch(s, 0, f, c));
    });
    return out;
}

Patch random_root(const Scheme& s, const Volume& image, Rng& rng) {
    Frame f = scheme_frame(s, image);
    Box ib = image_box(image, f);
    return make_patch(s, 0, f, sample_root_center(s, ib, rng));
}

} // namespace dnp
