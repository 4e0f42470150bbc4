#pragma once
#include <optional>

#include "dnp/model.hpp"

namespace dnp {

struct InferConfig {
    std::string generate_type = "tree"; // tree | random
    int num_patches = 64;   // level-0 count in random mode
    int branch_factor = 0;  // children per survivor; 0 = full coverage grid (tree)
    int num_chunks = 1;
    double lazy_fraction = 1.0;           // beta in (0,1]
    std::string attention_reduce = "mean"; // mean | max | sum
    bool attention_sigmoid = true;
    WindowKind window = WindowKind::None;
    double sparse_alpha = 0.0;
    std::optional<AugmentParams> augment; // nullopt = training setting
    std::string out_type = "float32";
    double ce_threshold = 0.0;
    double sampling_factor = 1.0;
    int level = -1;        // scatter this level (-1 = finest)
    bool level_mix = false; // fill uncovered fine voxels from coarser levels
    double tree_jitter = 0.0;
};

// reduce(activation(leading num_labels channels))
double attention_score(const NdArray& x, int num_labels,
                       const std::string& reduce, bool sigmoid);

// Indices of the top ceil(beta*n) scores, ties resolved by lower index.
std::vector<std::size_t> lazy_select(const std::vector<double>& scores, double beta);

Volume predict(const Volume& image, const PatchworkModel& model,
               const InferConfig& cfg, Rng& rng);

struct FormattedOutput {
    std::string suffix; // appended before the extension when multiple outputs
    Volume volume;
    NiftiDtype dtype;
};

std::vector<FormattedOutput> format_output(const Volume& prob, const InferConfig& cfg,
                                           int num_labels,
                                           const std::vector<int>& label_values);

} // namespace dnp
