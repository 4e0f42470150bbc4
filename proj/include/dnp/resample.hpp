#pragma once
#include "dnp/sampler.hpp"

namespace dnp {

struct PatchData {
    Patch patch;
    NdArray data; // (patch.shape..., f)
};

struct Canvas {
    Patch grid;     // canvas placement: affine + spatial shape
    NdArray accum;  // (grid.shape..., f)
    NdArray weight; // (grid.shape...)
    int channels() const { return accum.shape.back(); }
};

// Canvas covering the image box at dest voxel size / sampling_factor.
Canvas make_canvas(const Volume& image, const Scheme& s, double sampling_factor,
                   int channels);

// Canvas covering the image box at an explicit voxel size.
Canvas make_canvas(const Volume& image, const Scheme& s, const Vec& voxel,
                   int channels);

// Gather src data onto the dst patch grid; out-of-bounds reads are zero.
NdArray gather(const NdArray& src_data, const Patch& src_patch, const Patch& dst,
               int dst_channels_hint, Interp interp);

// Adjoint of gather with respect to the source data (same geometry).
NdArray gather_adjoint(const NdArray& grad_dst, const Patch& src_patch,
                       const Patch& dst, const std::vector<int>& src_shape,
                       Interp interp);

// Crop from a volume, prefiltering the source first when the patch voxel
// is coarser than the image voxel (factor = voxel-size ratio, >= 1).
PatchData crop(const Volume& src, const Patch& dst, Interp interp,
               const PrefilterSpec& pf);

// Crop forwarded data from a parent patch (no prefilter).
PatchData crop(const PatchData& src, const Patch& dst, Interp interp);

enum class WindowKind { None, Cos, Cos2 };

WindowKind parse_window(const std::string& s);

// Spatial weight per patch voxel: 1 at the center, 0 on edge planes (cos),
// or its square (cos2).
NdArray window_weights(const std::array<int, 3>& shape, int dim, WindowKind w);

void scatter(Canvas& canvas, const PatchData& out, const NdArray& window,
             Interp scatter_interp);

// Y = accum / sqrt(weight^2 + 3*alpha); zero where weight is zero.
Volume finalize(const Canvas& canvas, double alpha);

// Full pipeline self-test with identity blocks: tree sampling, no pruning,
// no augmentation, plain mean stitching.
Volume reconstruct_identity(const Volume& image, const Scheme& s);

} // namespace dnp
