#pragma once
#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "dnp/errors.hpp"

namespace dnp {

using Rng = std::mt19937_64;

using Vec = std::array<double, 3>; // d active components, rest 0

// Homogeneous affine, voxel index -> world mm. Voxel (0,...,0) maps to the
// world position of the first voxel center (NIfTI sform semantics).
// Stored as a 4x4 regardless of dimension; for dim==2 row/col 2 are
// identity padding and the homogeneous row/col is index 3.
struct Affine {
    int dim = 3;
    std::array<std::array<double, 4>, 4> m{};

    static Affine identity(int dim);
    static Affine translation(int dim, const Vec& t);
    static Affine scaling(int dim, const Vec& s);
    // linear columns + translation
    static Affine from_linear(int dim, const std::array<Vec, 3>& cols, const Vec& t);

    Vec apply(const Vec& p) const;      // point map (uses translation)
    Vec apply_vec(const Vec& p) const;  // linear part only
    Vec translation_part() const;
    double linear(int r, int c) const { return m[size_t(r)][size_t(c)]; }
    double det_linear() const;
    // Euclidean norm of linear column i = world step per voxel step on axis i.
    double col_norm(int i) const;
    bool close_to(const Affine& o, double tol) const;
};

Affine compose(const Affine& a, const Affine& b);
Affine invert(const Affine& a); // throws SingularAffine if |det| <= 1e-12

struct Patch {
    Affine affine;
    std::array<int, 3> shape{1, 1, 1}; // d active entries

    int dim() const { return affine.dim; }
    // world position of the voxel-center box middle, voxel coord (s-1)/2
    Vec center_world() const;
    // physical extent per axis: shape_i * ||column i||
    Vec extent() const;
    Vec voxel_size() const;
};

// Spatially valid patch checks per the domain invariants.
void validate(const Affine& a);
void validate(const Patch& p);

// Map from destination voxel coordinates to continuous source voxel
// coordinates: u = A_src^-1 * A_dst * v.
Affine index_map(const Patch& src, const Patch& dst);

struct AugmentParams {
    Vec dphi{0, 0, 0};    // 2D: dphi[0] angle width; 3D: quaternion widths
    std::array<int, 3> flip{0, 0, 0};
    Vec dscale{0, 0, 0};  // std of the log-scale distribution
    bool independent = false;

    bool enabled() const {
        for (int i = 0; i < 3; ++i)
            if (dphi[size_t(i)] != 0 || flip[size_t(i)] != 0 || dscale[size_t(i)] != 0) return true;
        return false;
    }
};

// Random rotation matrix: 2D from a normal angle, 3D from a quaternion
// (1, n1, n2, n3)/|.| with n_i ~ N(0, dphi_i^2).
std::array<Vec, 3> sample_rotation(int dim, const Vec& dphi, Rng& rng);

// One augmentation draw: the d x d matrix R1*Sigma*R2.
std::array<Vec, 3> sample_augment_linear(int dim, const AugmentParams& params, Rng& rng);

// Left-multiply the linear part by `t`, keeping the patch center fixed.
Patch apply_augment(const Patch& p, const std::array<Vec, 3>& t);

// Replace the linear part of `base` by R1*Sigma*R2*linear and adjust the
// translation so that the world position of `center_voxel` is unchanged.
Affine sample_augment(const Affine& base, const Vec& center_voxel,
                      const AugmentParams& params, Rng& rng);

// Convenience: augment a patch about its own center.
Patch sample_augment(const Patch& p, const AugmentParams& params, Rng& rng);

} // namespace dnp
