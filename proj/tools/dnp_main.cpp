#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "dnp/config.hpp"

namespace {

int log_level() {
    const char* v = std::getenv("DNP_LOG");
    if (!v) return 1;
    std::string s(v);
    if (s == "quiet" || s == "0") return 0;
    if (s == "debug" || s == "2") return 2;
    return 1;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[dnp] " << msg << "\n";
}

struct ManifestEntry {
    std::string image, labels;
};

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw dnp::IoError("cannot read manifest: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        ManifestEntry e;
        if (!(ss >> e.image)) continue;
        ss >> e.labels;
        out.push_back(e);
    }
    if (out.empty()) throw dnp::InvalidConfig("empty manifest: " + path);
    return out;
}

dnp::Volume load_labels(const std::string& path, const dnp::LabelSpec& spec) {
    dnp::Volume raw = dnp::read_nifti(path);
    if (spec.categorial_label) return dnp::one_hot_labels(raw, *spec.categorial_label);
    if (raw.channels() != spec.num_labels)
        throw dnp::InvalidConfig(path + ": label channels != num_labels");
    return raw;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, std::uint64_t seed, int threads,
              bool deterministic) {
    dnp::FullConfig cfg = dnp::interpret_config(dnp::load_config(config_path));
    cfg.train.parallel = threads > 1 && !deterministic;

    std::vector<dnp::TrainingImage> items;
    for (const auto& e : read_manifest(data_path)) {
        if (e.labels.empty())
            throw dnp::InvalidConfig("manifest line needs: <image> <labels>");
        dnp::TrainingImage ti;
        ti.image = dnp::read_nifti(e.image);
        if (cfg.scheme.normalize_input != dnp::NormalizeMode::None &&
            cfg.scheme.normalize_input != dnp::NormalizeMode::PatchM0S1)
            ti.image = dnp::normalize(ti.image, cfg.scheme.normalize_input);
        ti.labels = load_labels(e.labels, cfg.labels);
        items.push_back(std::move(ti));
    }

    dnp::Rng rng(seed);
    dnp::Scheme scheme = dnp::resolve_scheme(cfg.scheme, items[0].image);
    dnp::PatchworkModel model =
        dnp::PatchworkModel::create(scheme, cfg.model, items[0].image.channels(), rng);
    model.train_augment = cfg.train.augment;

    dnp::TrainSet set = dnp::TrainSet::build(std::move(items), model.scheme);
    log_info("training: " + std::to_string(set.items.size()) + " images, " +
             std::to_string(cfg.train.num_its) + " iterations");
    dnp::FitResult r = dnp::fit(model, set, cfg.train, rng);
    model.save(out_path);
    dnp::write_history_csv(r.history, model.scheme.depth, out_path + ".history.csv");
    log_info("wrote " + out_path);
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& image_path,
                const std::string& out_path, const std::string& config_path,
                std::uint64_t seed) {
    dnp::PatchworkModel model = dnp::PatchworkModel::load(model_path);
    dnp::InferConfig icfg;
    if (!config_path.empty()) {
        // a predict-time config may carry only [apply]; interpret it against
        // a dummy scheme/model so validation applies to the apply keys
        dnp::ConfigDoc doc = dnp::load_config(config_path);
        dnp::ConfigDoc d2;
        d2.sections.emplace_back("scheme", dnp::ConfigDoc::Section{
                                               {"depth", "1"},
                                               {"fov_rel", "1"},
                                               {"destvox_rel", "1"},
                                           });
        d2.sections.emplace_back(
            "model", dnp::ConfigDoc::Section{
                         {"num_labels", std::to_string(model.cfg.num_labels)}});
        if (const auto* a = doc.find("apply")) d2.sections.emplace_back("apply", *a);
        icfg = dnp::interpret_config(d2).apply;
    }
    dnp::Volume image = dnp::read_nifti(image_path);
    dnp::Rng rng(seed);
    dnp::Volume prob = dnp::predict(image, model, icfg, rng);
    auto outs = dnp::format_output(prob, icfg, model.cfg.num_labels, model.cfg.label_values);
    for (const auto& o : outs) {
        std::string path = out_path;
        if (outs.size() > 1) {
            std::size_t dot = path.find('.');
            path = dot == std::string::npos ? path + o.suffix
                                            : path.insert(dot, o.suffix);
        }
        dnp::write_nifti(o.volume, path, o.dtype);
        log_info("wrote " + path);
    }
    return 0;
}

int cmd_reconstruct(const std::string& config_path, const std::string& image_path,
                    const std::string& out_path) {
    dnp::FullConfig cfg = dnp::interpret_config(dnp::load_config(config_path));
    dnp::Volume image = dnp::read_nifti(image_path);
    dnp::Scheme scheme = dnp::resolve_scheme(cfg.scheme, image);
    dnp::Volume out = dnp::reconstruct_identity(image, scheme);
    dnp::write_nifti(out, out_path, dnp::NiftiDtype::Float32);
    log_info("wrote " + out_path);
    return 0;
}

// ---- selftest -------------------------------------------------------------

struct Check {
    std::string name;
    bool ok;
    std::string detail;
};

double rel_err(double a, double b) {
    double den = std::max({std::abs(a), std::abs(b), 1e-12});
    return std::abs(a - b) / den;
}

Check check_block_gradient(bool inject_bad) {
    dnp::Rng rng(11);
    dnp::ConvBlock block(2, 3, 4, 2, "b", rng);
    std::normal_distribution<double> nd(0.0, 1.0);
    dnp::NdArray x({5, 5, 3});
    for (double& v : x.v) v = nd(rng);
    dnp::NdArray g({5, 5, 2});
    for (double& v : g.v) v = nd(rng);

    auto objective = [&]() {
        dnp::NdArray y = block.forward(x);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * g[i];
        return s;
    };
    dnp::BlockCtx ctx;
    block.forward(x, &ctx);
    for (dnp::Tensor* t : block.params()) t->zero_grad();
    block.backward(ctx, g);

    double worst = 0;
    for (dnp::Tensor* t : block.params()) {
        for (std::size_t i = 0; i < std::min<std::size_t>(t->value.size(), 8); ++i) {
            double save = t->value[i];
            const double h = 1e-5;
            t->value[i] = save + h;
            double fp = objective();
            t->value[i] = save - h;
            double fm = objective();
            t->value[i] = save;
            double num = (fp - fm) / (2 * h);
            double ana = t->grad[i] * (inject_bad ? -1.0 : 1.0);
            worst = std::max(worst, rel_err(num, ana));
        }
    }
    return {"block gradient (finite differences)", worst < 1e-4,
            "max rel err " + std::to_string(worst)};
}

Check check_adjointness() {
    dnp::Rng rng(12);
    std::normal_distribution<double> nd(0.0, 1.0);
    dnp::Patch src, dst;
    src.affine = dnp::Affine::identity(2);
    src.shape = {7, 7, 1};
    dst.affine = dnp::Affine::identity(2);
    dst.affine.m[0][3] = 1.3;
    dst.affine.m[1][3] = -0.4;
    dst.affine.m[0][0] = 0.8;
    dst.shape = {6, 6, 1};
    dnp::NdArray a({7, 7, 2});
    for (double& v : a.v) v = nd(rng);
    dnp::NdArray b({6, 6, 2});
    for (double& v : b.v) v = nd(rng);
    double worst = 0;
    for (dnp::Interp interp : {dnp::Interp::NN, dnp::Interp::Linear}) {
        dnp::NdArray ga = dnp::gather(a, src, dst, 2, interp);
        dnp::NdArray gb = dnp::gather_adjoint(b, src, dst, a.shape, interp);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < ga.size(); ++i) lhs += ga[i] * b[i];
        for (std::size_t i = 0; i < gb.size(); ++i) rhs += gb[i] * a[i];
        worst = std::max(worst, rel_err(lhs, rhs));
    }
    return {"gather/adjoint dot-product identity", worst < 1e-10,
            "max rel err " + std::to_string(worst)};
}

Check check_reconstruction() {
    dnp::Volume img;
    img.ndim = 2;
    img.affine = dnp::Affine::identity(2);
    img.data = dnp::NdArray({64, 64, 1});
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j)
            img.data[std::size_t(i * 64 + j)] = ((i / 8) + (j / 8)) % 2;
    dnp::SchemeConfig sc;
    sc.ndim = 2;
    sc.depth = 2;
    sc.patch_size = {{16, 16, 1}};
    sc.fov_rel = dnp::Vec{1, 1, 1};
    sc.destvox_mm = dnp::Vec{2, 2, 1};
    dnp::Scheme s = dnp::resolve_scheme(sc, img);
    dnp::Volume rec = dnp::reconstruct_identity(img, s);
    // piecewise-constant blocks resampled on aligned centers: exact
    double worst = 0;
    auto shape = rec.spatial_shape();
    for (int i = 0; i < shape[0]; ++i)
        for (int j = 0; j < shape[1]; ++j) {
            dnp::Vec w = rec.affine.apply(dnp::Vec{double(i), double(j), 0});
            int si = int(std::floor(w[0] + 0.5)), sj = int(std::floor(w[1] + 0.5));
            si = std::clamp(si, 0, 63);
            sj = std::clamp(sj, 0, 63);
            double want = img.data[std::size_t(si * 64 + sj)];
            worst = std::max(worst, std::abs(rec.data[std::size_t(i * shape[1] + j)] - want));
        }
    return {"reconstruction identity (identity block)", worst < 1e-9,
            "max abs err " + std::to_string(worst)};
}

Check check_suppression() {
    dnp::Volume img;
    img.ndim = 2;
    img.affine = dnp::Affine::identity(2);
    img.data = dnp::NdArray({4, 4, 1});
    dnp::SchemeConfig sc;
    sc.ndim = 2;
    sc.depth = 1;
    sc.patch_size = {{1, 1, 1}};
    sc.fov_rel = dnp::Vec{1, 1, 1};
    sc.destvox_rel = dnp::Vec{1, 1, 1};
    dnp::Scheme s = dnp::resolve_scheme(sc, img);
    dnp::Canvas c = dnp::make_canvas(img, s, 1.0, 1);
    dnp::Patch p;
    p.affine = c.grid.affine;
    p.shape = {1, 1, 1};
    dnp::PatchData pd{p, dnp::NdArray({1, 1, 1})};
    pd.data[0] = 1.0;
    dnp::NdArray w = dnp::window_weights(p.shape, 2, dnp::WindowKind::None);
    dnp::scatter(c, pd, w, dnp::Interp::NN);
    dnp::Volume y = dnp::finalize(c, 1.0);
    double got = y.data[0];
    bool ok = std::abs(got - 0.5) < 1e-9;
    return {"sparse suppression single hit = 0.5", ok, "got " + std::to_string(got)};
}

int cmd_selftest() {
    bool inject = std::getenv("DNP_SELFTEST_BADGRAD") != nullptr;
    std::vector<Check> checks{
        check_block_gradient(inject),
        check_adjointness(),
        check_reconstruction(),
        check_suppression(),
    };
    bool all = true;
    for (const auto& c : checks) {
        std::cout << (c.ok ? "PASS" : "FAIL") << "  " << c.name << " (" << c.detail
                  << ")\n";
        all = all && c.ok;
    }
    return all ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep neural patchworks"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, model_path, image_path;
    std::uint64_t seed = 0;
    int threads = 1;
    bool deterministic = false;

    CLI::App* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--data", data_path, "manifest: <image> <labels> per line")->required();
    train->add_option("--out", out_path, "output checkpoint")->required();
    train->add_option("--seed", seed, "rng seed");
    train->add_option("--threads", threads, "worker threads");
    train->add_flag("--deterministic", deterministic, "serial, reproducible mode");

    CLI::App* predict = app.add_subcommand("predict", "apply a model");
    predict->add_option("--model", model_path, "checkpoint")->required();
    predict->add_option("--image", image_path, "input NIfTI")->required();
    predict->add_option("--out", out_path, "output NIfTI")->required();
    predict->add_option("--config", config_path, "config with [apply] overrides");
    predict->add_option("--seed", seed, "rng seed");

    CLI::App* rec = app.add_subcommand("reconstruct", "identity-block pipeline check");
    rec->add_option("--config", config_path, "config with [scheme]")->required();
    rec->add_option("--image", image_path, "input NIfTI")->required();
    rec->add_option("--out", out_path, "output NIfTI")->required();

    app.add_subcommand("selftest", "run built-in numerical checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed())
            return cmd_train(config_path, data_path, out_path, seed, threads, deterministic);
        if (predict->parsed())
            return cmd_predict(model_path, image_path, out_path, config_path, seed);
        if (rec->parsed())
            return cmd_reconstruct(config_path, image_path, out_path);
        return cmd_selftest();
    } catch (const dnp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
