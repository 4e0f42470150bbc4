#pragma once
#include "dnp/model.hpp"

namespace dnp {

struct BalanceSpec {
    double ratio = 0.0;               // probability of an on-label center
    std::vector<double> label_weight; // empty = uniform over labels
    bool autoweight = false;          // weight ~ 1 / label volume
};

struct TrainConfig {
    int num_its = 10;
    int epochs = 1;
    int num_patches = 1; // per image per outer iteration
    int batch_size = 8;
    bool intermediate_loss = true;
    double hard_mining = 0.0;
    std::string hard_mining_order = "loss"; // loss | f1 | balance
    int hard_mining_maxage = 4;
    AugmentParams augment;
    bool dontcare = false;
    BalanceSpec balance;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    bool parallel = false; // draw the next patch set while training
};

struct Sample {
    PatchChain chain;
    std::vector<NdArray> inputs;  // I_n per level
    std::vector<NdArray> targets; // per level; empty entries carry no loss
    int age = 0;
    double last_score = 0.0; // mean loss of the most recent pass
    double last_dice = 1.0;
    double rarity = 0.0; // 1 / dataset volume of the rarest label present
};

struct LossResult {
    double value = 0.0;
    NdArray grad; // dL/dlogits, same shape as logits
};

// Mean sigmoid binary cross-entropy per element; -1/NaN targets are
// excluded when dontcare.
LossResult loss_bce(const NdArray& logits, const NdArray& target, bool dontcare);

// Softmax cross-entropy over num_labels channels plus an implicit
// zero-logit background class (all-zero target rows).
LossResult loss_categorical(const NdArray& logits, const NdArray& target, bool dontcare);

// 2|P&T| / (|P|+|T|) per label on thresholded predictions; 1 when both empty.
std::vector<double> dice_score(const NdArray& prob, const NdArray& target,
                               double threshold = 0.5);

struct TrainingImage {
    Volume image;  // normalized input
    Volume labels; // one-hot channels, -1 marks dontcare
};

// Precomputed per-level prefiltered pyramids and label voxel lists. Pyramid
// entries are empty when no prefilter applies at that level; use the
// accessors, which fall back to the original volumes.
struct TrainSet {
    const Scheme* scheme = nullptr;
    std::vector<TrainingImage> items;
    std::vector<std::vector<Volume>> data_pyramid;  // [image][level]
    std::vector<std::vector<Volume>> label_pyramid; // [image][level]
    std::vector<std::vector<std::vector<std::size_t>>> label_voxels; // [image][label]
    std::vector<double> label_volume; // dataset-wide voxel count per label

    static TrainSet build(std::vector<TrainingImage> items, const Scheme& scheme);

    const Volume& data_at(std::size_t img, int level) const {
        const Volume& v = data_pyramid[img][std::size_t(level)];
        return v.data.v.empty() ? items[img].image : v;
    }
    const Volume& labels_at(std::size_t img, int level) const {
        const Volume& v = label_pyramid[img][std::size_t(level)];
        return v.data.v.empty() ? items[img].labels : v;
    }
};

std::vector<Sample> draw_patchset(const TrainSet& data, const Scheme& scheme,
                                  int n_per_image, const BalanceSpec& balance,
                                  const AugmentParams& augment, bool intermediate_targets,
                                  Rng& rng);

std::vector<Sample> hard_mine_select(std::vector<Sample> samples, const TrainConfig& cfg);

struct HistoryRow {
    int iteration = 0;
    std::vector<double> mean_loss_per_level;
    double mean_dice = 0.0;
    int retained_hard_samples = 0;
};

struct FitResult {
    std::vector<HistoryRow> history;
};

void write_history_csv(const std::vector<HistoryRow>& rows, int depth,
                       const std::string& path);

void adam_step(const std::vector<Tensor*>& params, const TrainConfig& cfg, int step);

FitResult fit(PatchworkModel& model, const TrainSet& data, const TrainConfig& cfg, Rng& rng);

} // namespace dnp
