#include "dnp/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

namespace dnp {

namespace {

bool is_masked(double t) { return std::isnan(t) || t == -1.0; }

} // namespace

LossResult loss_bce(const NdArray& logits, const NdArray& target, bool dontcare) {
    if (!logits.same_shape(target)) throw ShapeMismatch("bce: logits vs target");
    LossResult r;
    r.grad = NdArray(logits.shape);
    std::size_t count = 0;
    double sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double t = target[i];
        if (dontcare && is_masked(t)) continue;
        double z = logits[i];
        // stable: max(z,0) - z t + log(1+exp(-|z|))
        sum += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
        double sig = 1.0 / (1.0 + std::exp(-z));
        r.grad[i] = sig - t;
        ++count;
    }
    if (count == 0) throw AllMasked("every element is dontcare");
    r.value = sum / double(count);
    for (double& g : r.grad.v) g /= double(count);
    return r;
}

LossResult loss_categorical(const NdArray& logits, const NdArray& target, bool dontcare) {
    if (!logits.same_shape(target)) throw ShapeMismatch("categorical: logits vs target");
    const int k = logits.shape.back();
    const std::size_t nvox = logits.size() / std::size_t(k);
    LossResult r;
    r.grad = NdArray(logits.shape);
    std::size_t count = 0;
    double sum = 0;
    std::vector<double> p(size_t(k) + 1);
    for (std::size_t i = 0; i < nvox; ++i) {
        const double* t = target.data() + i * std::size_t(k);
        const double* z = logits.data() + i * std::size_t(k);
        bool masked = false;
        if (dontcare)
            for (int c = 0; c < k; ++c)
                if (is_masked(t[c])) { masked = true; break; }
        if (masked) continue;
        // softmax over (background logit 0, z_1..z_k)
        double zmax = 0.0;
        for (int c = 0; c < k; ++c) zmax = std::max(zmax, z[c]);
        double denom = std::exp(-zmax);
        for (int c = 0; c < k; ++c) denom += std::exp(z[c] - zmax);
        double tsum = 0;
        for (int c = 0; c < k; ++c) tsum += t[c];
        double tb = std::max(0.0, 1.0 - tsum);
        double pb = std::exp(-zmax) / denom;
        double loss = -tb * std::log(std::max(pb, 1e-300));
        double tmass = tb + tsum;  // 1 for valid targets; keeps grad exact otherwise
        double* g = r.grad.data() + i * std::size_t(k);
        for (int c = 0; c < k; ++c) {
            double pc = std::exp(z[c] - zmax) / denom;
            loss -= t[c] * std::log(std::max(pc, 1e-300));
            g[c] = tmass * pc - t[c];
        }
        sum += loss;
        ++count;
    }
    if (count == 0) throw AllMasked("every voxel is dontcare");
    r.value = sum / double(count);
    for (double& g : r.grad.v) g /= double(count);
    return r;
}

std::vector<double> dice_score(const NdArray& prob, const NdArray& target,
                               double threshold) {
    if (!prob.same_shape(target)) throw ShapeMismatch("dice: prob vs target");
    const int k = prob.shape.back();
    const std::size_t nvox = prob.size() / std::size_t(k);
    std::vector<double> inter(size_t(k), 0), psum(size_t(k), 0), tsum(size_t(k), 0);
    for (std::size_t i = 0; i < nvox; ++i)
        for (int c = 0; c < k; ++c) {
            double t = target[i * std::size_t(k) + std::size_t(c)];
            if (is_masked(t)) continue;
            bool pb = prob[i * std::size_t(k) + std::size_t(c)] > threshold;
            bool tb = t > 0.5;
            psum[size_t(c)] += pb;
            tsum[size_t(c)] += tb;
            inter[size_t(c)] += pb && tb;
        }
    std::vector<double> out(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        double denom = psum[size_t(c)] + tsum[size_t(c)];
        out[size_t(c)] = denom == 0 ? 1.0 : 2.0 * inter[size_t(c)] / denom;
    }
    return out;
}

TrainSet TrainSet::build(std::vector<TrainingImage> items, const Scheme& scheme) {
    TrainSet s;
    s.scheme = &scheme;
    s.items = std::move(items);
    const int K = s.items.empty() ? 0 : s.items[0].labels.channels();
    s.label_volume.assign(size_t(K), 0.0);
    for (auto& item : s.items) {
        if (item.image.ndim != scheme.ndim) throw SchemeMismatch("image ndim != scheme");
        std::vector<Volume> dp, lp;
        for (int n = 0; n < scheme.depth; ++n) {
            Vec factor{1, 1, 1};
            bool needs = false;
            for (int i = 0; i < scheme.ndim; ++i) {
                double r = scheme.voxel[size_t(n)][size_t(i)] / item.image.affine.col_norm(i);
                factor[size_t(i)] = std::max(1.0, r);
                if (factor[size_t(i)] > 1 + 1e-9) needs = true;
            }
            // levels without a prefilter stay empty; accessors fall back to the
            // original volume, avoiding a deep copy per level
            if (scheme.smoothfac_data.kind != PrefilterKind::None && needs)
                dp.push_back(prefilter(item.image, scheme.smoothfac_data, factor));
            else
                dp.emplace_back();
            if (scheme.smoothfac_label.kind != PrefilterKind::None && needs)
                lp.push_back(prefilter(item.labels, scheme.smoothfac_label, factor));
            else
                lp.emplace_back();
        }
        s.data_pyramid.push_back(std::move(dp));
        s.label_pyramid.push_back(std::move(lp));

        std::vector<std::vector<std::size_t>> lv(static_cast<std::size_t>(K));
        const std::size_t nvox = item.labels.spatial_count();
        for (std::size_t i = 0; i < nvox; ++i)
            for (int c = 0; c < K; ++c)
                if (item.labels.data[i * std::size_t(K) + std::size_t(c)] > 0.5) {
                    lv[size_t(c)].push_back(i);
                    s.label_volume[size_t(c)] += 1.0;
                }
        s.label_voxels.push_back(std::move(lv));
    }
    return s;
}

namespace {

Vec voxel_to_frame(const Volume& vol, const Frame& frame, std::size_t lin) {
    const int d = vol.ndim;
    auto shape = vol.spatial_shape();
    Vec idx{0, 0, 0};
    std::size_t rem = lin;
    for (int i = d - 1; i >= 0; --i) {
        idx[size_t(i)] = double(rem % std::size_t(shape[size_t(i)]));
        rem /= std::size_t(shape[size_t(i)]);
    }
    return frame.from_world(vol.affine.apply(idx));
}

void augment_chain(PatchChain& chain, const AugmentParams& params, Rng& rng) {
    if (!params.enabled()) return;
    const int d = chain.patches[0].dim();
    if (params.independent) {
        for (auto& p : chain.patches)
            p = apply_augment(p, sample_augment_linear(d, params, rng));
    } else {
        auto t = sample_augment_linear(d, params, rng);
        for (auto& p : chain.patches) p = apply_augment(p, t);
    }
}

NdArray crop_level(const Volume& prefiltered, const Patch& p, Interp interp) {
    return gather(prefiltered.data, prefiltered.as_patch(), p, prefiltered.channels(), interp);
}

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

} // namespace

std::vector<Sample> draw_patchset(const TrainSet& data, const Scheme& scheme,
                                  int n_per_image, const BalanceSpec& balance,
                                  const AugmentParams& augment, bool intermediate_targets,
                                  Rng& rng) {
    std::vector<Sample> out;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int K = int(data.label_volume.size());

    // per-label draw weights
    std::vector<double> w(size_t(K), 1.0);
    if (balance.autoweight) {
        for (int c = 0; c < K; ++c)
            w[size_t(c)] = data.label_volume[size_t(c)] > 0
                               ? 1.0 / data.label_volume[size_t(c)]
                               : 0.0;
    } else if (!balance.label_weight.empty()) {
        if (int(balance.label_weight.size()) != K)
            throw InvalidConfig("label_weight length != num_labels");
        w = balance.label_weight;
    }

    for (std::size_t img = 0; img < data.items.size(); ++img) {
        const auto& item = data.items[img];
        Frame frame = scheme_frame(scheme, item.image);
        for (int k = 0; k < n_per_image; ++k) {
            Sample s;
            bool balanced = balance.ratio > 0 && uni(rng) < balance.ratio;
            if (balanced) {
                // voxel ~ per-label weight: P(label c) ~ w_c * |voxels_c|,
                // restricted to labels present in this image
                std::vector<double> iw(static_cast<std::size_t>(K));
                double tot = 0;
                for (int c = 0; c < K; ++c) {
                    iw[size_t(c)] = w[size_t(c)] * double(data.label_voxels[img][size_t(c)].size());
                    tot += iw[size_t(c)];
                }
                if (tot <= 0) throw NoLabels("balanced draw requested but labels are empty");
                double r = uni(rng) * tot;
                int lab = 0;
                for (; lab < K - 1; ++lab) {
                    r -= iw[size_t(lab)];
                    if (r <= 0) break;
                }
                const auto& voxels = data.label_voxels[img][size_t(lab)];
                std::uniform_int_distribution<std::size_t> pick(0, voxels.size() - 1);
                Vec target = voxel_to_frame(item.labels, frame, voxels[pick(rng)]);
                s.chain = sample_chain_containing(scheme, item.image, target, rng);
            } else {
                s.chain = sample_random_chain(scheme, item.image, rng);
            }
            augment_chain(s.chain, augment, rng);

            s.inputs.resize(size_t(scheme.depth));
            s.targets.resize(size_t(scheme.depth));
            for (int n = 0; n < scheme.depth; ++n) {
                s.inputs[size_t(n)] = crop_level(data.data_at(img, n),
                                                 s.chain.patches[size_t(n)], scheme.interp_type);
                if (scheme.normalize_input == NormalizeMode::PatchM0S1)
                    patch_m0s1(s.inputs[size_t(n)]);
                if (intermediate_targets || n == scheme.depth - 1)
                    s.targets[size_t(n)] = crop_level(data.labels_at(img, n),
                                                      s.chain.patches[size_t(n)],
                                                      scheme.interp_type);
            }
            // rarity: inverse dataset volume of the rarest label in the sample
            const NdArray& ft = s.targets[size_t(scheme.depth - 1)];
            for (int c = 0; c < K; ++c) {
                bool present = false;
                const std::size_t nvox = ft.size() / std::size_t(K);
                for (std::size_t i = 0; i < nvox && !present; ++i)
                    present = ft[i * std::size_t(K) + std::size_t(c)] > 0.5;
                if (present && data.label_volume[size_t(c)] > 0)
                    s.rarity = std::max(s.rarity, 1.0 / data.label_volume[size_t(c)]);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<Sample> hard_mine_select(std::vector<Sample> samples, const TrainConfig& cfg) {
    if (cfg.hard_mining <= 0) return {};
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].age < cfg.hard_mining_maxage) idx.push_back(i);
    auto better = [&](std::size_t a, std::size_t b) {
        if (cfg.hard_mining_order == "f1")
            return samples[a].last_dice < samples[b].last_dice;
        if (cfg.hard_mining_order == "balance")
            return samples[a].rarity > samples[b].rarity;
        return samples[a].last_score > samples[b].last_score; // loss
    };
    std::stable_sort(idx.begin(), idx.end(), better);
    std::size_t keep = std::min(idx.size(),
                                std::size_t(std::ceil(cfg.hard_mining * double(samples.size()))));
    std::vector<Sample> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        Sample s = std::move(samples[idx[i]]);
        s.age += 1;
        out.push_back(std::move(s));
    }
    return out;
}

void adam_step(const std::vector<Tensor*>& params, const TrainConfig& cfg, int step) {
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, step), c2 = 1.0 - std::pow(b2, step);
    for (Tensor* t : params) {
        if (!t->adam_m.same_shape(t->value)) {
            t->adam_m = NdArray(t->value.shape);
            t->adam_v = NdArray(t->value.shape);
        }
        for (std::size_t i = 0; i < t->value.size(); ++i) {
            double g = t->grad[i];
            t->adam_m[i] = b1 * t->adam_m[i] + (1 - b1) * g;
            t->adam_v[i] = b2 * t->adam_v[i] + (1 - b2) * g * g;
            double mhat = t->adam_m[i] / c1;
            double vhat = t->adam_v[i] / c2;
            t->value[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

namespace {

// Loss on the leading num_labels channels of X_n; extra intermediate
// channels are unconstrained.
LossResult level_loss(const PatchworkModel& m, const NdArray& logits,
                      const NdArray& target, bool dontcare) {
    const int k = m.cfg.num_labels;
    const int out_ch = logits.shape.back();
    if (out_ch == k) {
        return m.cfg.categorical ? loss_categorical(logits, target, dontcare)
                                 : loss_bce(logits, target, dontcare);
    }
    std::vector<int> lshape = logits.shape;
    lshape.back() = k;
    NdArray lead(lshape);
    const std::size_t nvox = logits.size() / std::size_t(out_ch);
    for (std::size_t i = 0; i < nvox; ++i)
        for (int c = 0; c < k; ++c)
            lead[i * std::size_t(k) + std::size_t(c)] =
                logits[i * std::size_t(out_ch) + std::size_t(c)];
    LossResult inner = m.cfg.categorical ? loss_categorical(lead, target, dontcare)
                                         : loss_bce(lead, target, dontcare);
    LossResult r;
    r.value = inner.value;
    r.grad = NdArray(logits.shape);
    for (std::size_t i = 0; i < nvox; ++i)
        for (int c = 0; c < k; ++c)
            r.grad[i * std::size_t(out_ch) + std::size_t(c)] =
                inner.grad[i * std::size_t(k) + std::size_t(c)];
    return r;
}

} // namespace

void write_history_csv(const std::vector<HistoryRow>& rows, int depth,
                       const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    f << "iteration";
    for (int n = 0; n < depth; ++n) f << ",mean_loss_level" << n;
    f << ",mean_dice,retained_hard_samples\n";
    for (const auto& r : rows) {
        f << r.iteration;
        for (int n = 0; n < depth; ++n)
            f << "," << (n < int(r.mean_loss_per_level.size()) ? r.mean_loss_per_level[size_t(n)] : 0.0);
        f << "," << r.mean_dice << "," << r.retained_hard_samples << "\n";
    }
}

FitResult fit(PatchworkModel& model, const TrainSet& data, const TrainConfig& cfg, Rng& rng) {
    FitResult result;
    const int N = model.scheme.depth;
    std::vector<Sample> retained;
    auto params = model.parameters();
    int adam_t = 0;

    // patch drawing can run ahead of the gradient loop on its own RNG stream
    std::vector<std::uint64_t> draw_seeds;
    for (int it = 0; it < cfg.num_its; ++it) draw_seeds.push_back(rng());

    auto draw = [&](int it) {
        Rng drng(draw_seeds[size_t(it)]);
        return draw_patchset(data, model.scheme, cfg.num_patches, cfg.balance,
                             cfg.augment, cfg.intermediate_loss, drng);
    };

    std::vector<Sample> next;
    if (cfg.num_its > 0) next = draw(0);
    for (int it = 0; it < cfg.num_its; ++it) {
        std::vector<Sample> fresh = std::move(next);
        std::thread producer;
        if (it + 1 < cfg.num_its) {
            if (cfg.parallel)
                producer = std::thread([&, it] { next = draw(it + 1); });
            else
                next = draw(it + 1);
        }

        std::vector<Sample> set = std::move(fresh);
        for (auto& s : retained) set.push_back(std::move(s));
        const int n_retained = int(retained.size());
        retained.clear();

        std::vector<std::size_t> order(set.size());
        std::iota(order.begin(), order.end(), std::size_t(0));

        std::vector<double> loss_sums(size_t(N), 0.0);
        double dice_sum = 0;
        std::size_t loss_count = 0, dice_count = 0;

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            const bool last_epoch = epoch == cfg.epochs - 1;
            std::size_t done = 0;
            while (done < order.size()) {
                std::size_t bsz = std::min<std::size_t>(size_t(cfg.batch_size),
                                                        order.size() - done);
                model.zero_grads();
                for (std::size_t b = 0; b < bsz; ++b) {
                    Sample& s = set[order[done + b]];
                    PatchworkModel::ForwardCache cache;
                    model.forward(s.chain, s.inputs, &cache);
                    std::vector<NdArray> grads(static_cast<std::size_t>(N));
                    double sample_loss = 0;
                    int sample_levels = 0;
                    for (int n = 0; n < N; ++n) {
                        if (s.targets[size_t(n)].empty()) continue;
                        LossResult lr = level_loss(model, cache.x[size_t(n)],
                                                   s.targets[size_t(n)], cfg.dontcare);
                        if (!std::isfinite(lr.value))
                            throw DivergedTraining("non-finite loss");
                        grads[size_t(n)] = std::move(lr.grad);
                        sample_loss += lr.value;
                        ++sample_levels;
                        if (last_epoch) {
                            loss_sums[size_t(n)] += lr.value;
                        }
                    }
                    if (last_epoch) {
                        ++loss_count;
                        s.last_score = sample_levels ? sample_loss / sample_levels : 0.0;
                        NdArray prob = output_probabilities(model, cache.x[size_t(N - 1)]);
                        auto d = dice_score(prob, s.targets[size_t(N - 1)], 0.5);
                        double md = d.empty()
                            ? 1.0
                            : std::accumulate(d.begin(), d.end(), 0.0) / double(d.size());
                        s.last_dice = md;
                        dice_sum += md;
                        ++dice_count;
                    }
                    model.backward(s.chain, cache, grads);
                }
                // mean over the batch
                for (Tensor* t : params)
                    for (double& g : t->grad.v) g /= double(bsz);
                adam_step(params, cfg, ++adam_t);
                done += bsz;
            }
        }

        HistoryRow row;
        row.iteration = it;
        for (int n = 0; n < N; ++n)
            row.mean_loss_per_level.push_back(
                loss_count ? loss_sums[size_t(n)] / double(loss_count) : 0.0);
        row.mean_dice = dice_count ? dice_sum / double(dice_count) : 0.0;
        row.retained_hard_samples = n_retained;
        result.history.push_back(std::move(row));

        retained = hard_mine_select(std::move(set), cfg);
        if (producer.joinable()) producer.join();
    }
    return result;
}

} // namespace dnp
