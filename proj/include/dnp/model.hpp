#pragma once
#include <memory>
#include <string>
#include <vector>

#include "dnp/resample.hpp"

namespace dnp {

struct Tensor {
    std::string name;
    NdArray value;
    NdArray grad;
    NdArray adam_m, adam_v; // lazily sized by the optimizer

    void zero_grad() {
        if (!grad.same_shape(value)) grad = NdArray(value.shape);
        grad.fill(0.0);
    }
};

// Same-padded convolution, stride 1, kernel k^d, channels-last.
struct ConvLayer {
    int dim = 2, ksize = 3, in_ch = 1, out_ch = 1;
    Tensor w; // (k^d, in_ch, out_ch)
    Tensor b; // (out_ch)

    ConvLayer() = default;
    ConvLayer(int dim, int ksize, int in_ch, int out_ch, const std::string& name, Rng& rng);

    NdArray forward(const NdArray& x) const;
    // Accumulates w.grad/b.grad, returns grad wrt x.
    NdArray backward(const NdArray& x, const NdArray& grad_out);
};

struct BlockCtx {
    NdArray x;              // block input
    NdArray a1, a2;         // pre-relu activations of the full-resolution 3^d convs
    NdArray a3, a4, a5;     // pre-relu half-resolution convs (unet only)
};

// Per-level image-to-image operator with manual backprop.
class Block {
public:
    virtual ~Block() = default;
    virtual NdArray forward(const NdArray& x, BlockCtx* ctx = nullptr) const = 0;
    virtual NdArray backward(const BlockCtx& ctx, const NdArray& grad_out) = 0;
    virtual std::vector<Tensor*> params() = 0;
    virtual int in_channels() const = 0;
    virtual int out_channels() const = 0;
};

// conv3 - relu - conv3 - relu - conv1; raw logits out.
class ConvBlock : public Block {
public:
    ConvBlock(int dim, int in_ch, int hidden, int out_ch, const std::string& name, Rng& rng);

    NdArray forward(const NdArray& x, BlockCtx* ctx = nullptr) const override;
    NdArray backward(const BlockCtx& ctx, const NdArray& grad_out) override;
    std::vector<Tensor*> params() override;

    int in_channels() const override { return c1.in_ch; }
    int out_channels() const override { return c3.out_ch; }

    ConvLayer c1, c2, c3;
};

// One-down/one-up mini U-Net: two full-resolution conv3-relu, 2x average
// pooling, three half-resolution conv3-relu, nearest upsampling, and a final
// conv1 on the concatenation of the skip and the upsampled branch. Trades a
// few more parameters for a much larger receptive field than ConvBlock.
class UNetBlock : public Block {
public:
    UNetBlock(int dim, int in_ch, int hidden, int out_ch, const std::string& name, Rng& rng);

    NdArray forward(const NdArray& x, BlockCtx* ctx = nullptr) const override;
    NdArray backward(const BlockCtx& ctx, const NdArray& grad_out) override;
    std::vector<Tensor*> params() override;

    int in_channels() const override { return c1.in_ch; }
    int out_channels() const override { return c3.out_ch; }

    ConvLayer c1, c2;         // full resolution
    ConvLayer d1, d2, d3;     // half resolution
    ConvLayer c3;             // 1^d conv on concat(skip, upsampled)
};

struct ModelConfig {
    std::string block_type = "fcn"; // fcn | unet
    int hidden = 16;
    bool identical_blocks = false;
    int intermediate_out = 0;
    int num_labels = 1;
    bool categorical = false;
    std::vector<int> block_out;  // optional per-level override
    bool forward_enabled = true; // false: C_n replaced by zeros (ablation)
    std::vector<int> label_values; // categorial_label, empty if channel-encoded
};

struct PatchworkModel {
    Scheme scheme;
    ModelConfig cfg;
    int image_channels = 1;
    AugmentParams train_augment;
    std::vector<std::shared_ptr<Block>> blocks; // aliased when identical_blocks

    static PatchworkModel create(const Scheme& scheme, const ModelConfig& cfg,
                                 int image_channels, Rng& rng);

    int out_channels(int level) const;
    int in_channels(int level) const;
    // forwarded-context channels seen by level n (0 when no forwarding path)
    int context_channels(int level) const;

    std::vector<Tensor*> parameters() const; // distinct tensors only
    void zero_grads() const;

    struct ForwardCache {
        std::vector<NdArray> concat; // block inputs [I_n, C_n]
        std::vector<BlockCtx> ctx;
        std::vector<NdArray> x; // block outputs X_n
    };

    // inputs[n] = I_n cropped on chain.patches[n] (channels-last)
    std::vector<NdArray> forward(const PatchChain& chain,
                                 const std::vector<NdArray>& inputs,
                                 ForwardCache* cache = nullptr) const;

    // grad_per_level[n] may be empty (no loss at that level)
    void backward(const PatchChain& chain, ForwardCache& cache,
                  const std::vector<NdArray>& grad_per_level) const;

    void save(const std::string& path) const;
    static PatchworkModel load(const std::string& path);
};

NdArray concat_channels(const NdArray& a, const NdArray& b);

// Per-label probabilities from the leading num_labels logit channels:
// sigmoid per channel, or softmax with an implicit zero-logit background
// class when the model is categorical.
NdArray output_probabilities(const PatchworkModel& m, const NdArray& logits);

} // namespace dnp
