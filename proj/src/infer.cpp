#include "dnp/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dnp {

double attention_score(const NdArray& x, int num_labels,
                       const std::string& reduce, bool sigmoid) {
    const int out_ch = x.shape.back();
    const int k = std::min(num_labels, out_ch);
    const std::size_t nvox = x.size() / std::size_t(out_ch);
    double acc = reduce == "max" ? -std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t i = 0; i < nvox; ++i)
        for (int c = 0; c < k; ++c) {
            double v = x[i * std::size_t(out_ch) + std::size_t(c)];
            if (sigmoid) v = 1.0 / (1.0 + std::exp(-v));
            if (reduce == "max")
                acc = std::max(acc, v);
            else
                acc += v;
        }
    if (reduce == "max") return acc;
    if (reduce == "sum") return acc;
    if (reduce == "mean") return acc / double(nvox * std::size_t(k));
    throw InvalidConfig("attention_reduce must be mean, max or sum");
}

std::vector<std::size_t> lazy_select(const std::vector<double>& scores, double beta) {
    if (beta <= 0 || beta > 1) throw InvalidConfig("lazy fraction must be in (0,1]");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    if (beta >= 1) return idx;
    std::size_t keep = std::size_t(std::ceil(beta * double(scores.size())));
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });
    idx.resize(keep);
    return idx;
}

namespace {

void patch_m0s1(NdArray& x) {
    double mean = 0;
    for (double v : x.v) mean += v;
    mean /= double(x.size());
    double var = 0;
    for (double v : x.v) var += (v - mean) * (v - mean);
    var /= double(x.size());
    double sd = std::sqrt(std::max(var, 1e-12));
    for (double& v : x.v) v = (v - mean) / sd;
}

struct Node {
    Patch geom;       // unaugmented, axis-aligned in the scheme frame
    Patch aug;        // geometry the data was actually sampled on
    Patch parent_aug; // data geometry of the parent (context gather source)
    std::array<Vec, 3> t{}; // augmentation draw (for dependent chains)
    NdArray parent_x; // parent block output X_{n-1}
    NdArray x;        // block output X_n
};

Patch random_child(const Scheme& s, int level, const Patch& parent_geom,
                   const Frame& frame, Rng& rng) {
    const int d = s.ndim;
    Vec pc = frame.from_world(parent_geom.center_world());
    Vec pe = parent_geom.extent();
    Vec ce = s.extent[size_t(level)];
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Vec c{0, 0, 0};
    for (int i = 0; i < d; ++i)
        c[size_t(i)] = pc[size_t(i)] - pe[size_t(i)] / 2.0 + uni(rng) * pe[size_t(i)];
    if (s.snapper[size_t(level)]) {
        Box pb;
        for (int i = 0; i < d; ++i) {
            pb.lo[size_t(i)] = pc[size_t(i)] - pe[size_t(i)] / 2.0;
            pb.hi[size_t(i)] = pc[size_t(i)] + pe[size_t(i)] / 2.0;
        }
        c = snap_center(c, ce, pb, d);
    }
    return make_patch(s, level, frame, c);
}

// Gathered copy of a canvas channel stack onto another grid (linear).
NdArray gather_grid(const NdArray& src, const Patch& src_grid, const Patch& dst_grid) {
    return gather(src, src_grid, dst_grid, src.shape.back(), Interp::Linear);
}

} // namespace

Volume predict(const Volume& image, const PatchworkModel& model,
               const InferConfig& cfg, Rng& rng) {
    const Scheme& s = model.scheme;
    const int d = s.ndim;
    const int N = s.depth;
    const int K = model.cfg.num_labels;
    if (image.ndim != d) throw SchemeMismatch("image dimensionality != scheme");
    if (image.channels() != model.image_channels)
        throw SchemeMismatch("image channels != model input channels");
    if (cfg.level >= N) throw InvalidConfig("level out of range");

    Volume img = image;
    if (s.normalize_input != NormalizeMode::None &&
        s.normalize_input != NormalizeMode::PatchM0S1)
        img = normalize(img, s.normalize_input);

    // per-level prefiltered image pyramid
    std::vector<Volume> pyramid;
    for (int n = 0; n < N; ++n) {
        Vec factor{1, 1, 1};
        bool needs = false;
        for (int i = 0; i < d; ++i) {
            double r = s.voxel[size_t(n)][size_t(i)] / img.affine.col_norm(i);
            factor[size_t(i)] = std::max(1.0, r);
            if (factor[size_t(i)] > 1 + 1e-9) needs = true;
        }
        if (s.smoothfac_data.kind != PrefilterKind::None && needs)
            pyramid.push_back(prefilter(img, s.smoothfac_data, factor));
        else
            pyramid.push_back(img);
    }

    Frame frame = scheme_frame(s, img);
    AugmentParams aug = cfg.augment ? *cfg.augment : model.train_augment;

    // levels whose outputs get stitched
    std::vector<bool> stitched(size_t(N), false);
    if (cfg.level_mix)
        std::fill(stitched.begin(), stitched.end(), true);
    else
        stitched[size_t(cfg.level < 0 ? N - 1 : cfg.level)] = true;

    std::vector<Canvas> canvases(static_cast<std::size_t>(N));
    std::vector<NdArray> windows(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
        if (!stitched[size_t(n)]) continue;
        Vec vox{1, 1, 1};
        for (int i = 0; i < d; ++i)
            vox[size_t(i)] = s.voxel[size_t(n)][size_t(i)] / cfg.sampling_factor;
        canvases[size_t(n)] = make_canvas(img, s, vox, K);
        windows[size_t(n)] = window_weights(s.patch_shape[size_t(n)], d, cfg.window);
    }

    if (cfg.num_chunks < 1) throw InvalidConfig("num_chunks must be >= 1");
    for (int chunk = 0; chunk < cfg.num_chunks; ++chunk) {
        std::vector<Node> nodes;
        auto add_root = [&](const Patch& p) {
            Node nd;
            nd.geom = p;
            nd.aug = p;
            nodes.push_back(std::move(nd));
        };
        if (cfg.generate_type == "tree") {
            for (const Patch& p : tree_roots(s, img)) add_root(p);
        } else if (cfg.generate_type == "random") {
            for (int i = 0; i < cfg.num_patches; ++i) add_root(random_root(s, img, rng));
        } else {
            throw InvalidConfig("generate_type must be tree or random");
        }
        if (aug.enabled())
            for (Node& nd : nodes) {
                nd.t = sample_augment_linear(d, aug, rng);
                nd.aug = apply_augment(nd.geom, nd.t);
            }

        for (int n = 0; n < N; ++n) {
            for (Node& nd : nodes) {
                const Volume& src = pyramid[size_t(n)];
                NdArray in = gather(src.data, src.as_patch(), nd.aug,
                                    src.channels(), s.interp_type);
                if (s.normalize_input == NormalizeMode::PatchM0S1) patch_m0s1(in);
                const int ctx_ch = model.context_channels(n);
                if (ctx_ch > 0) {
                    NdArray c;
                    if (n > 0 && model.cfg.forward_enabled) {
                        c = gather(nd.parent_x, nd.parent_aug, nd.aug, ctx_ch,
                                   s.interp_type);
                    } else {
                        std::vector<int> cshape = in.shape;
                        cshape.back() = ctx_ch;
                        c = NdArray(cshape);
                    }
                    in = concat_channels(in, c);
                }
                nd.x = model.blocks[size_t(n)]->forward(in);
                nd.parent_x = NdArray();
                if (stitched[size_t(n)]) {
                    PatchData out{nd.aug, output_probabilities(model, nd.x)};
                    scatter(canvases[size_t(n)], out, windows[size_t(n)], s.scatter_type);
                }
            }
            if (n == N - 1) break;

            std::vector<std::size_t> survivors;
            if (cfg.lazy_fraction < 1.0) {
                std::vector<double> scores(nodes.size());
                for (std::size_t i = 0; i < nodes.size(); ++i)
                    scores[i] = attention_score(nodes[i].x, K, cfg.attention_reduce,
                                                cfg.attention_sigmoid);
                survivors = lazy_select(scores, cfg.lazy_fraction);
            } else {
                survivors.resize(nodes.size());
                std::iota(survivors.begin(), survivors.end(), std::size_t(0));
            }

            std::vector<Node> next;
            for (std::size_t si : survivors) {
                Node& parent = nodes[si];
                std::vector<Patch> kids;
                if (cfg.generate_type == "tree") {
                    kids = sample_tree_children(s, n + 1, parent.geom, cfg.branch_factor,
                                                cfg.tree_jitter, rng);
                } else {
                    int k = std::max(1, cfg.branch_factor);
                    for (int i = 0; i < k; ++i)
                        kids.push_back(random_child(s, n + 1, parent.geom, frame, rng));
                }
                for (Patch& kid : kids) {
                    Node child;
                    child.geom = kid;
                    if (aug.enabled()) {
                        child.t = aug.independent ? sample_augment_linear(d, aug, rng)
                                                  : parent.t;
                        child.aug = apply_augment(kid, child.t);
                    } else {
                        child.aug = kid;
                    }
                    child.parent_aug = parent.aug;
                    child.parent_x = parent.x;
                    next.push_back(std::move(child));
                }
            }
            nodes = std::move(next);
        }
    }

    // finalize + optional coarse-to-fine fill
    int target = cfg.level < 0 || cfg.level_mix ? N - 1 : cfg.level;
    Volume out = finalize(canvases[size_t(target)], cfg.sparse_alpha);
    if (cfg.level_mix && N > 1) {
        const Canvas& fine = canvases[size_t(N - 1)];
        const std::size_t nvox = out.spatial_count();
        std::vector<bool> empty(nvox);
        for (std::size_t i = 0; i < nvox; ++i) empty[i] = fine.weight[i] == 0.0;
        for (int n = N - 2; n >= 0; --n) {
            Volume cv = finalize(canvases[size_t(n)], cfg.sparse_alpha);
            NdArray cw = canvases[size_t(n)].weight;
            std::vector<int> wshape = cw.shape;
            wshape.push_back(1);
            NdArray cwc(wshape);
            cwc.v = cw.v;
            NdArray gv = gather_grid(cv.data, canvases[size_t(n)].grid, fine.grid);
            NdArray gw = gather_grid(cwc, canvases[size_t(n)].grid, fine.grid);
            for (std::size_t i = 0; i < nvox; ++i) {
                if (!empty[i] || gw[i] <= 1e-12) continue;
                for (int c = 0; c < K; ++c)
                    out.data[i * std::size_t(K) + std::size_t(c)] =
                        gv[i * std::size_t(K) + std::size_t(c)];
                empty[i] = false;
            }
        }
    }
    return out;
}

namespace {

std::vector<double> parse_thresholds(const std::string& spec, std::size_t colon) {
    std::vector<double> t;
    if (colon == std::string::npos) return t;
    std::string rest = spec.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        std::size_t comma = rest.find(',', pos);
        std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                      : comma - pos);
        try {
            t.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw InvalidConfig("bad threshold in out_type: " + tok);
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return t;
}

} // namespace

std::vector<FormattedOutput> format_output(const Volume& prob, const InferConfig& cfg,
                                           int num_labels,
                                           const std::vector<int>& label_values) {
    const std::size_t colon = cfg.out_type.find(':');
    const std::string base = cfg.out_type.substr(0, colon);
    std::vector<FormattedOutput> outs;
    if (base == "float32" || base == "int16" || base == "uint8") {
        NiftiDtype dt = base == "float32" ? NiftiDtype::Float32
                        : base == "int16" ? NiftiDtype::Int16
                                          : NiftiDtype::Uint8;
        outs.push_back({"", prob, dt});
        return outs;
    }
    std::vector<double> th = parse_thresholds(cfg.out_type, colon);
    const int K = num_labels;
    if (base == "mask") {
        if (th.empty()) th.assign(size_t(K), 0.5);
        if (int(th.size()) != K) throw BadThresholdCount("mask wants one threshold per class");
        Volume m = prob;
        const std::size_t nvox = prob.spatial_count();
        for (std::size_t i = 0; i < nvox; ++i)
            for (int c = 0; c < K; ++c) {
                std::size_t j = i * std::size_t(K) + std::size_t(c);
                m.data[j] = prob.data[j] > th[size_t(c)] ? 1.0 : 0.0;
            }
        outs.push_back({"_mask", m, NiftiDtype::Uint8});
        return outs;
    }
    if (base == "atls") {
        if (th.empty()) th.assign(size_t(K), 0.0);
        if (int(th.size()) != K) throw BadThresholdCount("atls wants one threshold per class");
        Volume a;
        a.ndim = prob.ndim;
        a.affine = prob.affine;
        std::vector<int> shape(prob.data.shape.begin(), prob.data.shape.end() - 1);
        shape.push_back(1);
        a.data = NdArray(shape);
        const std::size_t nvox = prob.spatial_count();
        for (std::size_t i = 0; i < nvox; ++i) {
            int best = -1;
            double bp = -1;
            for (int c = 0; c < K; ++c) {
                double p = prob.data[i * std::size_t(K) + std::size_t(c)];
                if (p > th[size_t(c)] && p > bp) {
                    bp = p;
                    best = c;
                }
            }
            if (best >= 0 && bp < cfg.ce_threshold) best = -1;
            double val = 0;
            if (best >= 0)
                val = label_values.empty() ? double(best + 1)
                                           : double(label_values[size_t(best)]);
            a.data[i] = val;
        }
        outs.push_back({"_atls", a, NiftiDtype::Int16});
        return outs;
    }
    throw InvalidConfig("unknown out_type: " + cfg.out_type);
}

} // namespace dnp
