#include "dnp/geometry.hpp"

#include <cmath>

namespace dnp {

Affine Affine::identity(int dim) {
    Affine a;
    a.dim = dim;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) a.m[size_t(i)][size_t(j)] = (i == j) ? 1.0 : 0.0;
    return a;
}

Affine Affine::translation(int dim, const Vec& t) {
    Affine a = identity(dim);
    for (int i = 0; i < dim; ++i) a.m[size_t(i)][3] = t[size_t(i)];
    return a;
}

Affine Affine::scaling(int dim, const Vec& s) {
    Affine a = identity(dim);
    for (int i = 0; i < dim; ++i) a.m[size_t(i)][size_t(i)] = s[size_t(i)];
    return a;
}

Affine Affine::from_linear(int dim, const std::array<Vec, 3>& cols, const Vec& t) {
    Affine a = identity(dim);
    for (int j = 0; j < dim; ++j)
        for (int i = 0; i < dim; ++i) a.m[size_t(i)][size_t(j)] = cols[size_t(j)][size_t(i)];
    for (int i = 0; i < dim; ++i) a.m[size_t(i)][3] = t[size_t(i)];
    return a;
}

Vec Affine::apply(const Vec& p) const {
    Vec r{0, 0, 0};
    for (int i = 0; i < dim; ++i) {
        double s = m[size_t(i)][3];
        for (int j = 0; j < dim; ++j) s += m[size_t(i)][size_t(j)] * p[size_t(j)];
        r[size_t(i)] = s;
    }
    return r;
}

Vec Affine::apply_vec(const Vec& p) const {
    Vec r{0, 0, 0};
    for (int i = 0; i < dim; ++i) {
        double s = 0;
        for (int j = 0; j < dim; ++j) s += m[size_t(i)][size_t(j)] * p[size_t(j)];
        r[size_t(i)] = s;
    }
    return r;
}

Vec Affine::translation_part() const {
    Vec t{0, 0, 0};
    for (int i = 0; i < dim; ++i) t[size_t(i)] = m[size_t(i)][3];
    return t;
}

double Affine::det_linear() const {
    if (dim == 2)
        return m[0][0] * m[1][1] - m[0][1] * m[1][0];
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

double Affine::col_norm(int i) const {
    double s = 0;
    for (int r = 0; r < dim; ++r) s += m[size_t(r)][size_t(i)] * m[size_t(r)][size_t(i)];
    return std::sqrt(s);
}

bool Affine::close_to(const Affine& o, double tol) const {
    if (dim != o.dim) return false;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (std::abs(m[size_t(i)][size_t(j)] - o.m[size_t(i)][size_t(j)]) > tol) return false;
    return true;
}

Affine compose(const Affine& a, const Affine& b) {
    if (a.dim != b.dim) throw ShapeMismatch("compose: dimension mismatch");
    Affine r = Affine::identity(a.dim);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int k = 0; k < 4; ++k) s += a.m[size_t(i)][size_t(k)] * b.m[size_t(k)][size_t(j)];
            r.m[size_t(i)][size_t(j)] = s;
        }
    return r;
}

Affine invert(const Affine& a) {
    if (std::abs(a.det_linear()) <= 1e-12)
        throw SingularAffine("determinant below 1e-12");
    // Gauss-Jordan with partial pivoting on the full 4x4.
    std::array<std::array<double, 8>, 4> w{};
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) w[size_t(i)][size_t(j)] = a.m[size_t(i)][size_t(j)];
        w[size_t(i)][size_t(4 + i)] = 1.0;
    }
    for (int c = 0; c < 4; ++c) {
        int piv = c;
        for (int r = c + 1; r < 4; ++r)
            if (std::abs(w[size_t(r)][size_t(c)]) > std::abs(w[size_t(piv)][size_t(c)])) piv = r;
        if (std::abs(w[size_t(piv)][size_t(c)]) <= 1e-14)
            throw SingularAffine("pivot vanished");
        std::swap(w[size_t(piv)], w[size_t(c)]);
        double d = w[size_t(c)][size_t(c)];
        for (int j = 0; j < 8; ++j) w[size_t(c)][size_t(j)] /= d;
        for (int r = 0; r < 4; ++r) {
            if (r == c) continue;
            double f = w[size_t(r)][size_t(c)];
            if (f == 0.0) continue;
            for (int j = 0; j < 8; ++j) w[size_t(r)][size_t(j)] -= f * w[size_t(c)][size_t(j)];
        }
    }
    Affine r = Affine::identity(a.dim);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) r.m[size_t(i)][size_t(j)] = w[size_t(i)][size_t(4 + j)];
    return r;
}

Vec Patch::center_world() const {
    Vec c{0, 0, 0};
    for (int i = 0; i < dim(); ++i) c[size_t(i)] = (shape[size_t(i)] - 1) / 2.0;
    return affine.apply(c);
}

Vec Patch::extent() const {
    Vec e{0, 0, 0};
    for (int i = 0; i < dim(); ++i) e[size_t(i)] = shape[size_t(i)] * affine.col_norm(i);
    return e;
}

Vec Patch::voxel_size() const {
    Vec e{0, 0, 0};
    for (int i = 0; i < dim(); ++i) e[size_t(i)] = affine.col_norm(i);
    return e;
}

void validate(const Affine& a) {
    if (a.dim != 2 && a.dim != 3) throw InvalidScheme("affine dim must be 2 or 3");
    if (std::abs(a.det_linear()) <= 1e-12) throw SingularAffine("linear part not invertible");
}

void validate(const Patch& p) {
    validate(p.affine);
    for (int i = 0; i < p.dim(); ++i) {
        if (p.shape[size_t(i)] < 1) throw InvalidScheme("patch shape component < 1");
        if (p.shape[size_t(i)] * p.affine.col_norm(i) <= 0)
            throw InvalidScheme("nonpositive physical extent");
    }
}

Affine index_map(const Patch& src, const Patch& dst) {
    return compose(invert(src.affine), dst.affine);
}

std::array<Vec, 3> sample_rotation(int dim, const Vec& dphi, Rng& rng) {
    std::array<Vec, 3> r{Vec{1, 0, 0}, Vec{0, 1, 0}, Vec{0, 0, 1}};
    std::normal_distribution<double> gauss(0.0, 1.0);
    if (dim == 2) {
        double phi = dphi[0] > 0 ? gauss(rng) * dphi[0] : 0.0;
        double c = std::cos(phi), s = std::sin(phi);
        r[0] = Vec{c, -s, 0};
        r[1] = Vec{s, c, 0};
        return r;
    }
    double n1 = dphi[0] > 0 ? gauss(rng) * dphi[0] : 0.0;
    double n2 = dphi[1] > 0 ? gauss(rng) * dphi[1] : 0.0;
    double n3 = dphi[2] > 0 ? gauss(rng) * dphi[2] : 0.0;
    double nn = std::sqrt(1.0 + n1 * n1 + n2 * n2 + n3 * n3);
    double w = 1.0 / nn, x = n1 / nn, y = n2 / nn, z = n3 / nn;
    r[0] = Vec{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)};
    r[1] = Vec{2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)};
    r[2] = Vec{2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
    return r;
}

std::array<Vec, 3> sample_augment_linear(int dim, const AugmentParams& params, Rng& rng) {
    auto r1 = sample_rotation(dim, params.dphi, rng);
    auto r2 = sample_rotation(dim, params.dphi, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    Vec sigma{1, 1, 1};
    for (int i = 0; i < dim; ++i) {
        double s = params.dscale[size_t(i)] > 0
                       ? std::exp(gauss(rng) * params.dscale[size_t(i)])
                       : 1.0;
        if (params.flip[size_t(i)] && coin(rng)) s = -s;
        sigma[size_t(i)] = s;
    }
    // T = R1 * Sigma * R2 (rows of r1/r2 are matrix rows)
    std::array<Vec, 3> t{Vec{1, 0, 0}, Vec{0, 1, 0}, Vec{0, 0, 1}};
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
            double s = 0;
            for (int k = 0; k < dim; ++k)
                s += r1[size_t(i)][size_t(k)] * sigma[size_t(k)] * r2[size_t(k)][size_t(j)];
            t[size_t(i)][size_t(j)] = s;
        }
    return t;
}

namespace {

Affine augment_about(const Affine& base, const Vec& center_voxel,
                     const std::array<Vec, 3>& t) {
    const int d = base.dim;
    Affine out = base;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0;
            for (int k = 0; k < d; ++k) s += t[size_t(i)][size_t(k)] * base.m[size_t(k)][size_t(j)];
            out.m[size_t(i)][size_t(j)] = s;
        }
    // keep the world position of the patch center fixed
    Vec old_center = base.apply(center_voxel);
    Vec new_center = out.apply(center_voxel);
    for (int i = 0; i < d; ++i)
        out.m[size_t(i)][3] += old_center[size_t(i)] - new_center[size_t(i)];
    return out;
}

} // namespace

Patch apply_augment(const Patch& p, const std::array<Vec, 3>& t) {
    Vec c{0, 0, 0};
    for (int i = 0; i < p.dim(); ++i) c[size_t(i)] = (p.shape[size_t(i)] - 1) / 2.0;
    Patch out = p;
    out.affine = augment_about(p.affine, c, t);
    return out;
}

Affine sample_augment(const Affine& base, const Vec& center_voxel,
                      const AugmentParams& params, Rng& rng) {
    if (!params.enabled()) return base;
    return augment_about(base, center_voxel, sample_augment_linear(base.dim, params, rng));
}

Patch sample_augment(const Patch& p, const AugmentParams& params, Rng& rng) {
    if (!params.enabled()) return p;
    return apply_augment(p, sample_augment_linear(p.dim(), params, rng));
}

} // namespace dnp
