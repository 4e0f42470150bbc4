// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "dnp/config.hpp"
#include "dnp/infer.hpp"
#include "dnp/train.hpp"

using namespace dnp;

namespace {

struct Result {
    bool ok;
    std::string detail;
};

// ---- shared helpers --------------------------------------------------------

Volume blocky_image(int size, int block, unsigned seed) {
    Volume v;
    v.ndim = 2;
    v.affine = Affine::identity(2);
    v.data = NdArray({size, size, 1});
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int nb = size / block;
    std::vector<double> vals(std::size_t(nb * nb));
    for (double& x : vals) x = u(rng);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j)
            v.data[std::size_t(i * size + j)] = vals[std::size_t((i / block) * nb + j / block)];
    return v;
}

Scheme scheme2d(const Volume& img, int depth, int psz, double destvox, Interp interp) {
    SchemeConfig c;
    c.ndim = 2;
    c.depth = depth;
    c.patch_size = {{psz, psz, 1}};
    c.fov_rel = Vec{1, 1, 1};
    c.destvox_mm = Vec{destvox, destvox, 1};
    c.interp_type = interp;
    c.scatter_type = Interp::NN;
    return resolve_scheme(c, img);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Model whose blocks copy their first input channel to the first output
// channel (offset trick keeps the relus active); other channels output 0.
PatchworkModel identity_model(const Scheme& s, int num_labels = 1) {
    Rng rng(1);
    ModelConfig mc;
    mc.hidden = 2;
    mc.num_labels = num_labels;
    PatchworkModel m = PatchworkModel::create(s, mc, 1, rng);
    for (int n = 0; n < s.depth; ++n) {
        ConvBlock& b = dynamic_cast<ConvBlock&>(*m.blocks[std::size_t(n)]);
        b.c1.w.value.fill(0.0);
        b.c1.b.value.fill(0.0);
        b.c1.b.value[0] = 100.0;
        int ct1 = (b.c1.ksize * b.c1.ksize) / 2;
        b.c1.w.value[std::size_t((ct1 * b.c1.in_ch + 0) * b.c1.out_ch + 0)] = 1.0;
        b.c2.w.value.fill(0.0);
        b.c2.b.value.fill(0.0);
        int ct2 = (b.c2.ksize * b.c2.ksize) / 2;
        b.c2.w.value[std::size_t((ct2 * b.c2.in_ch + 0) * b.c2.out_ch + 0)] = 1.0;
        b.c3.w.value.fill(0.0);
        b.c3.b.value.fill(-100.0);
        b.c3.w.value[std::size_t((0 * b.c3.in_ch + 0) * b.c3.out_ch + 0)] = 1.0;
    }
    return m;
}

// ---- criterion 1: reconstruction identity ----------------------------------

Result criterion_reconstruction() {
    Volume img = blocky_image(256, 8, 7);

    auto run = [&](Interp interp, double& max_err, double& rmse_vs_truth) {
        Scheme s = scheme2d(img, 2, 32, 2.0, interp);
        Volume rec = reconstruct_identity(img, s);

        // independent direct resampling of the image to the dest grid
        Affine inv = invert(img.affine);
        max_err = 0;
        double se = 0;
        auto shape = rec.spatial_shape();
        for (int i = 0; i < shape[0]; ++i)
            for (int j = 0; j < shape[1]; ++j) {
                Vec w = rec.affine.apply(Vec{double(i), double(j), 0});
                Vec u = inv.apply(w);
                double want;
                if (interp == Interp::NN) {
                    int si = int(std::floor(u[0] + 0.5)), sj = int(std::floor(u[1] + 0.5));
                    want = (si < 0 || si >= 256 || sj < 0 || sj >= 256)
                               ? 0.0
                               : img.data[std::size_t(si * 256 + sj)];
                } else {
                    double acc = 0;
                    int i0 = int(std::floor(u[0])), j0 = int(std::floor(u[1]));
                    double fi = u[0] - i0, fj = u[1] - j0;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj) {
                            int si = i0 + di, sj = j0 + dj;
                            if (si < 0 || si >= 256 || sj < 0 || sj >= 256) continue;
                            double wt = (di ? fi : 1 - fi) * (dj ? fj : 1 - fj);
                            acc += wt * img.data[std::size_t(si * 256 + sj)];
                        }
                    want = acc;
                }
                double got = rec.data[std::size_t(i * shape[1] + j)];
                max_err = std::max(max_err, std::abs(got - want));
                // truth: the piecewise-constant generator at the dest center
                int ti = std::clamp(int(w[0]) / 8, 0, 31), tj = std::clamp(int(w[1]) / 8, 0, 31);
                double truth = img.data[std::size_t((ti * 8) * 256 + tj * 8)];
                se += (got - truth) * (got - truth);
            }
        rmse_vs_truth = std::sqrt(se / double(shape[0] * shape[1]));
    };

    double err_nn, rmse_nn, err_lin, rmse_lin;
    run(Interp::NN, err_nn, rmse_nn);
    run(Interp::Linear, err_lin, rmse_lin);

    std::ostringstream d;
    d << "max err NN " << err_nn << " (<=1e-6), linear " << err_lin
      << " (<=1e-5); RMSE NN " << rmse_nn << " <= linear " << rmse_lin;
    return {err_nn <= 1e-6 && err_lin <= 1e-5 && rmse_nn <= rmse_lin, d.str()};
}

// ---- criterion 2: sparse suppression ----------------------------------------

Result criterion_suppression() {
    Volume img;
    img.ndim = 2;
    img.affine = Affine::identity(2);
    img.data = NdArray({4, 4, 1});
    Scheme s = scheme2d(img, 1, 4, 1.0, Interp::NN);

    auto single_hit = [&](double v) {
        Canvas c = make_canvas(img, s, 1.0, 1);
        Patch p;
        p.affine = c.grid.affine;
        p.shape = {1, 1, 1};
        PatchData pd{p, NdArray({1, 1, 1})};
        pd.data[0] = v;
        NdArray w = window_weights(p.shape, 2, WindowKind::None);
        scatter(c, pd, w, Interp::NN);
        return finalize(c, 1.0).data[0];
    };

    double unit = single_hit(1.0);
    bool ok = std::abs(unit - 0.5) < 1e-9;
    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0;
    for (int it = 0; it < 500 && ok; ++it) {
        double v = u(rng);
        double r = single_hit(v);
        worst = std::max(worst, std::abs(r - v / 2));
        ok = ok && std::abs(r - v / 2) < 1e-9 && r <= 0.5 + 1e-12;
    }
    std::ostringstream d;
    d << "single unit hit -> " << unit << "; max |r - v/2| = " << worst;
    return {ok, d.str()};
}

// ---- criterion 3: lazy evaluation arithmetic --------------------------------

Result criterion_lazy() {
    const double beta = 0.5;
    const int branch = 2, depth = 6;
    bool ok = true;
    std::ostringstream d;
    std::vector<int> reference;
    for (int n0 : {16, 64, 256}) {
        std::vector<int> evals;
        int population = n0;
        for (int level = 0; level < depth; ++level) {
            evals.push_back(population); // blocks run on the whole population
            std::vector<double> scores(std::size_t(population), 1.0);
            int survivors = int(lazy_select(scores, beta).size());
            population = survivors * branch;
        }
        // identical count at every level
        for (int level = 1; level < depth; ++level) ok = ok && evals[std::size_t(level)] == evals[0];
        // total scales linearly with depth
        int total = 0;
        for (int e : evals) total += e;
        ok = ok && total == depth * evals[0];
        d << "n0=" << n0 << " evals/level=" << evals[0] << " total=" << total << "; ";
    }
    return {ok, d.str()};
}

// ---- criterion 4: gradient correctness ---------------------------------------

double fd(const std::function<double()>& f, double& p, double h) {
    double saved = p;
    p = saved + h;
    double fp = f();
    p = saved - h;
    double fm = f();
    p = saved;
    return (fp - fm) / (2 * h);
}

double rel(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

Result criterion_gradients() {
    double worst_block = 0, worst_loss = 0, worst_e2e = 0;

    // blocks, 2D and 3D
    for (int dim : {2, 3}) {
        Rng rng(4 + dim);
        std::normal_distribution<double> nd(0.0, 1.0);
        ConvBlock blk(dim, 2, 3, 2, "b", rng);
        std::vector<int> xs = dim == 2 ? std::vector<int>{5, 5, 2}
                                       : std::vector<int>{4, 4, 4, 2};
        NdArray x(xs);
        for (double& v : x.v) v = nd(rng);
        BlockCtx ctx;
        NdArray y = blk.forward(x, &ctx);
        NdArray g(y.shape);
        for (double& v : g.v) v = nd(rng);
        auto obj = [&]() {
            NdArray yy = blk.forward(x);
            double s = 0;
            for (std::size_t i = 0; i < yy.size(); ++i) s += yy[i] * g[i];
            return s;
        };
        for (Tensor* t : blk.params()) t->zero_grad();
        blk.backward(ctx, g);
        Rng pick(9);
        for (Tensor* t : blk.params()) {
            std::uniform_int_distribution<std::size_t> u(0, t->value.size() - 1);
            for (int k = 0; k < 5; ++k) {
                std::size_t i = u(pick);
                worst_block = std::max(worst_block, rel(fd(obj, t->value.v[i], 1e-5), t->grad[i]));
            }
        }
    }

    // losses
    {
        Rng rng(6);
        std::normal_distribution<double> nd(0.0, 1.5);
        std::bernoulli_distribution bit(0.5);
        NdArray z({3, 3, 2}), t({3, 3, 2});
        for (double& v : z.v) v = nd(rng);
        for (double& v : t.v) v = bit(rng) ? 1.0 : 0.0;
        for (int kind = 0; kind < 2; ++kind) {
            auto L = [&]() {
                return kind == 0 ? loss_bce(z, t, false).value
                                 : loss_categorical(z, t, false).value;
            };
            NdArray grad = kind == 0 ? loss_bce(z, t, false).grad
                                     : loss_categorical(z, t, false).grad;
            for (std::size_t i = 0; i < z.size(); ++i)
                worst_loss = std::max(worst_loss, rel(fd(L, z.v[i], 1e-6), grad[i]));
        }
    }

    // end-to-end 2-level gradient through the context crop
    {
        Rng rng(7);
        std::normal_distribution<double> nd(0.0, 0.5);
        Volume img;
        img.ndim = 2;
        img.affine = Affine::identity(2);
        img.data = NdArray({32, 32, 1});
        Scheme s = scheme2d(img, 2, 8, 2.0, Interp::Linear);
        ModelConfig mc;
        mc.hidden = 2;
        PatchworkModel m = PatchworkModel::create(s, mc, 1, rng);
        PatchChain chain;
        for (int n = 0; n < 2; ++n) {
            Patch p;
            p.affine = Affine::scaling(2, s.voxel[std::size_t(n)]);
            p.shape = s.patch_shape[std::size_t(n)];
            chain.patches.push_back(p);
        }
        Vec c0 = chain.patches[0].center_world();
        Vec c1 = chain.patches[1].center_world();
        chain.patches[1].affine.m[0][3] += c0[0] - c1[0] + 0.7;
        chain.patches[1].affine.m[1][3] += c0[1] - c1[1] - 0.3;
        std::vector<NdArray> inputs{NdArray({8, 8, 1}), NdArray({8, 8, 1})};
        for (auto& in : inputs)
            for (double& v : in.v) v = nd(rng);
        NdArray t0({8, 8, 1}), t1({8, 8, 1});
        for (double& v : t0.v) v = nd(rng);
        for (double& v : t1.v) v = nd(rng);
        auto obj = [&]() {
            auto outs = m.forward(chain, inputs);
            double sum = 0;
            for (std::size_t i = 0; i < outs[0].size(); ++i)
                sum += 0.5 * (outs[0][i] - t0[i]) * (outs[0][i] - t0[i]);
            for (std::size_t i = 0; i < outs[1].size(); ++i)
                sum += 0.5 * (outs[1][i] - t1[i]) * (outs[1][i] - t1[i]);
            return sum;
        };
        PatchworkModel::ForwardCache cache;
        auto outs = m.forward(chain, inputs, &cache);
        std::vector<NdArray> grads(2);
        grads[0] = NdArray(outs[0].shape);
        grads[1] = NdArray(outs[1].shape);
        for (std::size_t i = 0; i < outs[0].size(); ++i) grads[0][i] = outs[0][i] - t0[i];
        for (std::size_t i = 0; i < outs[1].size(); ++i) grads[1][i] = outs[1][i] - t1[i];
        m.zero_grads();
        m.backward(chain, cache, grads);
        Rng pick(8);
        for (Tensor* t : m.parameters()) {
            std::uniform_int_distribution<std::size_t> u(0, t->value.size() - 1);
            for (int k = 0; k < 4; ++k) {
                std::size_t i = u(pick);
                worst_e2e = std::max(worst_e2e, rel(fd(obj, t->value.v[i], 1e-5), t->grad[i]));
            }
        }
    }

    std::ostringstream d;
    d << "block rel err " << worst_block << " (<1e-4), loss " << worst_loss
      << " (<1e-6), end-to-end " << worst_e2e << " (<1e-3)";
    return {worst_block < 1e-4 && worst_loss < 1e-6 && worst_e2e < 1e-3, d.str()};
}

// ---- criterion 5: global-context synthetic task ------------------------------

struct ContextDataset {
    std::vector<TrainingImage> train;
    std::vector<TrainingImage> test;
    double min_gap = 1e9; // disk boundary to marker bbox, pixels
};

ContextDataset make_context_dataset(int n_train, int n_test, unsigned seed) {
    ContextDataset ds;
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> corner(0, 3);
    std::uniform_int_distribution<int> pos(110, 146);
    std::normal_distribution<double> noise(0.0, 0.05);

    const int S = 256, M = 20; // image size, marker size
    for (int idx = 0; idx < n_train + n_test; ++idx) {
        bool class_a = idx % 2 == 0;
        int cx = pos(rng), cy = pos(rng);
        int cr = corner(rng);
        // marker at a random diagonal corner of the disk's neighborhood: far
        // enough that no finest patch sees disk and marker together, near
        // enough for the coarse level's receptive field
        int dc = 39 + int(rng() % 3);
        int mx = cx + ((cr & 1) ? dc : -dc) - M / 2;
        int my = cy + ((cr & 2) ? dc : -dc) - M / 2;

        Volume img;
        img.ndim = 2;
        img.affine = Affine::identity(2);
        img.data = NdArray({S, S, 1});
        Volume lab;
        lab.ndim = 2;
        lab.affine = img.affine;
        lab.data = NdArray({S, S, 2});

        for (int i = 0; i < S; ++i)
            for (int j = 0; j < S; ++j) {
                double v = noise(rng);
                double dx = i - cx, dy = j - cy;
                bool disk = dx * dx + dy * dy <= 6.0 * 6.0;
                if (disk) {
                    v += 1.0;
                    lab.data[std::size_t((i * S + j) * 2 + (class_a ? 0 : 1))] = 1.0;
                }
                if (i >= mx && i < mx + M && j >= my && j < my + M)
                    v += class_a ? 1.0 : -1.0;
                img.data[std::size_t(i * S + j)] = v;
            }

        // distance from the disk boundary to the marker box
        double gx = std::max({double(mx) - cx, double(cx) - (mx + M - 1), 0.0});
        double gy = std::max({double(my) - cy, double(cy) - (my + M - 1), 0.0});
        ds.min_gap = std::min(ds.min_gap, std::sqrt(gx * gx + gy * gy) - 6.0);

        TrainingImage ti{std::move(img), std::move(lab)};
        if (idx < n_train)
            ds.train.push_back(std::move(ti));
        else
            ds.test.push_back(std::move(ti));
    }
    return ds;
}

std::vector<double> heldout_dice(const PatchworkModel& model,
                                 const std::vector<TrainingImage>& test) {
    double inter[2] = {0, 0}, psum[2] = {0, 0}, tsum[2] = {0, 0};
    for (std::size_t k = 0; k < test.size(); ++k) {
        InferConfig icfg;
        icfg.generate_type = "tree";
        icfg.augment = AugmentParams{}; // off
        Rng rng(100 + k);
        Volume prob = predict(test[k].image, model, icfg, rng);
        // dest grid == image grid (destvox 1 on a 1 mm image)
        for (std::size_t i = 0; i < prob.data.size() / 2; ++i)
            for (int c = 0; c < 2; ++c) {
                bool p = prob.data[i * 2 + std::size_t(c)] > 0.5;
                bool t = test[k].labels.data[i * 2 + std::size_t(c)] > 0.5;
                inter[c] += p && t;
                psum[c] += p;
                tsum[c] += t;
            }
    }
    std::vector<double> dice(2);
    for (int c = 0; c < 2; ++c)
        dice[std::size_t(c)] = psum[c] + tsum[c] == 0 ? 1.0
                                                      : 2 * inter[c] / (psum[c] + tsum[c]);
    return dice;
}

Result criterion_context() {
    ContextDataset ds = make_context_dataset(200, 16, 42);

    Scheme s;
    {
        SchemeConfig c;
        c.ndim = 2;
        c.depth = 3;
        c.patch_size = {{32, 32, 1}};
        c.fov_rel = Vec{0.9, 0.9, 1};
        c.destvox_mm = Vec{1, 1, 1};
        s = resolve_scheme(c, ds.train[0].image);
    }

    // by construction the finest patches cannot see disk and marker together
    double finest_fov = s.extent[2][0];
    if (ds.min_gap <= finest_fov) {
        std::ostringstream d;
        d << "dataset construction broken: min disk-marker gap " << ds.min_gap
          << "px <= finest fov " << finest_fov << "px";
        return {false, d.str()};
    }

    TrainConfig tc;
    tc.num_its = 30;
    tc.epochs = 1;
    tc.num_patches = 2;
    tc.batch_size = 8;
    tc.intermediate_loss = true;
    tc.learning_rate = 2e-3;
    tc.balance.ratio = 0.7;
    tc.balance.autoweight = true;

    auto train_once = [&](bool forwarding) {
        Rng rng(9);
        ModelConfig mc;
        mc.block_type = "unet"; // the plain 5-voxel-RF block cannot bridge
                                // marker and disk at any level
        mc.hidden = 12;
        mc.num_labels = 2;
        mc.forward_enabled = forwarding;
        PatchworkModel m = PatchworkModel::create(s, mc, 1, rng);
        TrainSet set = TrainSet::build(ds.train, s); // copies: test set reused below
        fit(m, set, tc, rng);
        return m;
    };

    PatchworkModel full = train_once(true);
    std::vector<double> dice_full = heldout_dice(full, ds.test);

    PatchworkModel abl = train_once(false);
    std::vector<double> dice_abl = heldout_dice(abl, ds.test);

    double abl_best = std::max(dice_abl[0], dice_abl[1]);
    bool ok = dice_full[0] >= 0.90 && dice_full[1] >= 0.90 && abl_best <= 0.75;
    std::ostringstream d;
    d << "gap " << ds.min_gap << "px > fov " << finest_fov << "px; dice(full) = ("
      << dice_full[0] << ", " << dice_full[1] << ") >= 0.90; dice(no-forward) = ("
      << dice_abl[0] << ", " << dice_abl[1] << ") <= 0.75";
    return {ok, d.str()};
}

// ---- criterion 6: coverage ---------------------------------------------------

Result criterion_coverage() {
    Volume img = blocky_image(256, 8, 11);
    Scheme s = scheme2d(img, 2, 32, 1.0, Interp::NN);

    // tree mode: scatter ones through the real tiling, check weight >= 1
    Canvas canvas = make_canvas(img, s, 1.0, 1);
    Rng rng(1);
    NdArray ones({32, 32, 1});
    ones.fill(1.0);
    NdArray w = window_weights({32, 32, 1}, 2, WindowKind::None);
    for (const Patch& root : tree_roots(s, img))
        for (const Patch& child : sample_tree_children(s, 1, root, 0, 0.0, rng))
            scatter(canvas, PatchData{child, ones}, w, Interp::NN);
    double min_w = 1e9;
    for (double x : canvas.weight.v) min_w = std::min(min_w, x);
    bool tree_ok = min_w >= 1.0;

    // random mode through the real inference path: uncovered voxels are
    // exactly zero, covered ones are strictly positive
    PatchworkModel m = identity_model(s);
    double covered_mean = 0;
    const int seeds = 3;
    for (int seed = 0; seed < seeds; ++seed) {
        InferConfig icfg;
        icfg.generate_type = "random";
        icfg.num_chunks = 8;
        icfg.num_patches = 64;
        icfg.branch_factor = 1;
        icfg.augment = AugmentParams{};
        Rng r(20 + seed);
        Volume prob = predict(img, m, icfg, r);
        std::size_t nonzero = 0;
        for (double v : prob.data.v)
            if (v != 0.0) ++nonzero;
        covered_mean += double(nonzero) / double(prob.data.size());
    }
    covered_mean /= seeds;

    std::ostringstream d;
    d << "tree min weight " << min_w << " (>=1); random coverage " << covered_mean
      << " (>=0.99, " << seeds << " seeds)";
    return {tree_ok && covered_mean >= 0.99, d.str()};
}

// ---- criterion 7: hard mining retention ---------------------------------------

Result criterion_hard_mining() {
    // 100 images of 64x64; all have a common 20x20 square, 5 also carry a
    // rare 4x5 blob
    auto make_items = [&]() {
        std::vector<TrainingImage> items;
        for (int idx = 0; idx < 100; ++idx) {
            Volume img;
            img.ndim = 2;
            img.affine = Affine::identity(2);
            img.data = NdArray({64, 64, 1});
            Volume lab;
            lab.ndim = 2;
            lab.affine = img.affine;
            lab.data = NdArray({64, 64, 2});
            for (int i = 10; i < 30; ++i)
                for (int j = 10; j < 30; ++j) {
                    img.data[std::size_t(i * 64 + j)] = 1.0;
                    lab.data[std::size_t((i * 64 + j) * 2)] = 1.0;
                }
            if (idx < 5)
                for (int i = 45; i < 49; ++i)
                    for (int j = 40; j < 45; ++j) {
                        img.data[std::size_t(i * 64 + j)] = 2.0;
                        lab.data[std::size_t((i * 64 + j) * 2 + 1)] = 1.0;
                    }
            items.push_back(TrainingImage{std::move(img), std::move(lab)});
        }
        return items;
    };

    Volume probe = make_items()[0].image;
    Scheme s = scheme2d(probe, 1, 16, 2.0, Interp::NN);
    TrainSet set = TrainSet::build(make_items(), s);

    TrainConfig tc;
    tc.hard_mining = 0.3;
    tc.hard_mining_order = "balance";
    tc.hard_mining_maxage = 4;
    BalanceSpec bal;
    bal.ratio = 1.0;
    bal.autoweight = true;

    const double rare_volume = set.label_volume[1];
    double frac_sum = 0;
    for (unsigned seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        std::vector<Sample> retained;
        double frac = 0;
        for (int loop = 0; loop < 5; ++loop) {
            std::vector<Sample> fresh =
                draw_patchset(set, s, 1, bal, AugmentParams{}, true, rng);
            for (auto& smp : retained) fresh.push_back(std::move(smp));
            int rare = 0;
            for (const Sample& smp : fresh)
                if (smp.rarity >= 1.0 / rare_volume - 1e-12) ++rare;
            frac = double(rare) / double(fresh.size());
            retained = hard_mine_select(std::move(fresh), tc);
        }
        frac_sum += frac; // fraction in the final training set
    }
    double mean_frac = frac_sum / 5.0;
    std::ostringstream d;
    d << "rare-sample fraction after 5 loops = " << mean_frac
      << " (prevalence 0.05, need >= 0.15)";
    return {mean_frac >= 0.15, d.str()};
}

// ---- criterion 8: NIfTI round trip --------------------------------------------

Result criterion_nifti() {
    Volume v;
    v.ndim = 3;
    v.affine = Affine::identity(3);
    v.affine.m[0][0] = 0.9;
    v.affine.m[1][1] = 1.1;
    v.affine.m[0][1] = 0.05;
    v.affine.m[0][3] = -12.25;
    v.affine.m[1][3] = 3.5;
    v.affine.m[2][3] = 7.75;
    v.data = NdArray({6, 5, 4, 2});
    Rng rng(13);
    std::normal_distribution<double> nd(0.0, 10.0);
    for (double& x : v.data.v) x = float(nd(rng)); // float32-representable

    bool ok = true;
    std::ostringstream d;
    for (const char* ext : {".nii", ".nii.gz"}) {
        std::string p1 = std::string("acceptance_rt_a") + ext;
        std::string p2 = std::string("acceptance_rt_b") + ext;
        write_nifti(v, p1, NiftiDtype::Float32);
        Volume r1 = read_nifti(p1);
        write_nifti(r1, p2, NiftiDtype::Float32);
        Volume r2 = read_nifti(p2);
        bool bits = r1.data.shape == r2.data.shape && r1.data.v == r2.data.v &&
                    v.data.v == r1.data.v;
        bool aff = r2.affine.close_to(v.affine, 1e-5);
        ok = ok && bits && aff;
        d << ext << (bits && aff ? " ok" : " FAILED") << "; ";
        std::remove(p1.c_str());
        std::remove(p2.c_str());
    }
    return {ok, d.str()};
}

} // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Result()> fn;
    };
    const std::vector<Criterion> criteria{
        {"1 reconstruction identity", criterion_reconstruction},
        {"2 sparse suppression bound", criterion_suppression},
        {"3 lazy evaluation arithmetic", criterion_lazy},
        {"4 gradient correctness", criterion_gradients},
        {"5 global-context synthetic task", criterion_context},
        {"6 stitching coverage", criterion_coverage},
        {"7 hard mining retention", criterion_hard_mining},
        {"8 NIfTI round trip", criterion_nifti},
    };

    bool all = true;
    for (const auto& c : criteria) {
        auto t0 = std::chrono::steady_clock::now();
        Result r;
        try {
            r = c.fn();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s  criterion %s  [%.1fs]  %s\n", r.ok ? "PASS" : "FAIL", c.name,
                    secs, r.detail.c_str());
        std::fflush(stdout);
        all = all && r.ok;
    }
    return all ? 0 : 1;
}
