#pragma once
#include <optional>
#include <string>
#include <vector>

#include "dnp/geometry.hpp"
#include "dnp/ndarray.hpp"

namespace dnp {

struct Volume {
    NdArray data;   // (s0, ..., s_{d-1}, f)
    Affine affine;  // voxel index -> world mm
    int ndim = 3;

    int channels() const { return data.shape.empty() ? 0 : data.shape.back(); }
    std::array<int, 3> spatial_shape() const {
        std::array<int, 3> s{1, 1, 1};
        for (int i = 0; i < ndim; ++i) s[size_t(i)] = data.shape[size_t(i)];
        return s;
    }
    Vec extent() const {
        Vec e{0, 0, 0};
        for (int i = 0; i < ndim; ++i)
            e[size_t(i)] = data.shape[size_t(i)] * affine.col_norm(i);
        return e;
    }
    Patch as_patch() const {
        Patch p;
        p.affine = affine;
        p.shape = spatial_shape();
        return p;
    }
    std::size_t spatial_count() const { return data.size() / size_t(channels()); }
};

struct LabelSpec {
    std::optional<std::vector<int>> categorial_label;
    bool categorical = false;
    int num_labels = 1;
};

enum class NiftiDtype { Uint8, Int16, Float32 };

Volume read_nifti(const std::string& path);
void write_nifti(const Volume& v, const std::string& path, NiftiDtype dtype);

enum class NormalizeMode { None, Max, Mean, M0S1, PatchM0S1 };

NormalizeMode parse_normalize(const std::string& s);

// PatchM0S1 is deferred to crop time and returns the volume unchanged here.
Volume normalize(const Volume& v, NormalizeMode mode);

enum class PrefilterKind { None, Gaussian, Boxcar, Max, Mixture };

struct PrefilterSpec {
    PrefilterKind kind = PrefilterKind::None;
    double width = 0.0; // gaussian only: sigma = width * factor
};

PrefilterSpec parse_prefilter(const std::string& s);
std::string prefilter_to_string(const PrefilterSpec& s);

// factor: per-axis undersampling ratio (>= 1)
Volume prefilter(const Volume& v, const PrefilterSpec& spec, const Vec& factor);

// Convert an integer label volume (f==1) to one-hot channels over the
// listed values. -1/NaN voxels are kept as -1 in all channels (dontcare).
Volume one_hot_labels(const Volume& labels, const std::vector<int>& values);

} // namespace dnp
