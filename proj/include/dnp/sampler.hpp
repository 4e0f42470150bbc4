#pragma once
#include <optional>
#include <string>
#include <vector>

#include "dnp/geometry.hpp"
#include "dnp/volume.hpp"

namespace dnp {

enum class Interp { NN, Linear };

Interp parse_interp(const std::string& s);
std::string interp_to_string(Interp i);

struct SchemeConfig {
    int depth = 1;
    int ndim = 3;
    std::vector<std::array<int, 3>> patch_size; // one entry, or one per level
    std::optional<Vec> fov_mm, fov_rel;
    std::optional<Vec> destvox_mm, destvox_rel;
    std::string system = "world"; // or "matrix"
    std::vector<int> snapper;     // per level, default all 1
    Interp interp_type = Interp::NN;
    Interp scatter_type = Interp::NN;
    PrefilterSpec smoothfac_data, smoothfac_label;
    NormalizeMode normalize_input = NormalizeMode::None;
};

struct Scheme {
    int depth = 1;
    int ndim = 3;
    std::vector<std::array<int, 3>> patch_shape; // per level
    Vec fov{};        // level-0 extent (mm)
    Vec dest_voxel{}; // finest voxel size (mm)
    std::vector<Vec> extent; // per level
    std::vector<Vec> voxel;  // per level
    std::string system = "world";
    std::vector<int> snapper;
    Interp interp_type = Interp::NN;
    Interp scatter_type = Interp::NN;
    PrefilterSpec smoothfac_data, smoothfac_label;
    NormalizeMode normalize_input = NormalizeMode::None;
};

// Orthonormal axes the (unaugmented) patches align to.
struct Frame {
    int dim = 3;
    std::array<Vec, 3> axes{Vec{1, 0, 0}, Vec{0, 1, 0}, Vec{0, 0, 1}};

    Vec to_world(const Vec& t) const;   // frame coords -> world point
    Vec from_world(const Vec& w) const; // world point -> frame coords
};

struct Box {
    Vec lo{}, hi{};
};

Frame scheme_frame(const Scheme& s, const Volume& image);
Box image_box(const Volume& image, const Frame& f);

// Axis-aligned patch at the given level, centered at `center` (frame coords).
Patch make_patch(const Scheme& s, int level, const Frame& f, const Vec& center);

struct PatchChain {
    std::vector<Patch> patches; // level 0 (coarsest) .. depth-1 (finest)
};

// Intermediate extents interpolate geometrically between fov and the
// finest extent; per-level voxel size is extent / patch_shape.
Scheme resolve_scheme(const SchemeConfig& cfg, const Volume& image);

// Fill extent/voxel from fov, dest_voxel and patch_shape (already absolute).
void recompute_scheme_levels(Scheme& s);

// Clamp per-axis so the (frame-coordinate) interval [c-e/2, c+e/2] lies
// inside [lo, hi]. Throws ChildTooLarge if e exceeds hi-lo beyond tolerance.
Vec snap_center(const Vec& center, const Vec& ext, const Box& parent, int dim);

// Axis-aligned snap of a child patch into its parent box.
Patch snap(const Patch& child, const Patch& parent);

// Random chain: level-0 center uniform (snapped to the image box), each
// child center uniform inside the parent box, then snapped per scheme.
PatchChain sample_random_chain(const Scheme& s, const Volume& image, Rng& rng);

// As above, but every level's patch is constrained to contain `target`
// (frame coords). Used by label-balanced training draws.
PatchChain sample_chain_containing(const Scheme& s, const Volume& image,
                                   const Vec& target, Rng& rng);

// Children of `parent` at `level`. branch_factor semantics:
//   0  -> the full coverage grid (ceil(parent/child) tiles per axis)
//   1  -> a single centered child
//   k  -> exactly k grid positions (all of them plus random repeats when
//         k exceeds the grid, a random subset when it is smaller)
std::vector<Patch> sample_tree_children(const Scheme& s, int level, const Patch& parent,
                                        int branch_factor, double jitter, Rng& rng);

// Level-0 patches tiling the image box (tree mode roots).
std::vector<Patch> tree_roots(const Scheme& s, const Volume& image);

// Level-0 patch centered uniformly in the image (random mode root).
Patch random_root(const Scheme& s, const Volume& image, Rng& rng);

} // namespace dnp
