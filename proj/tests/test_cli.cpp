#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dnp/config.hpp"
#include "dnp/model.hpp"
#include "test_support.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace dnp;
namespace fs = std::filesystem;

namespace {

const std::string cli = DNP_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dnp_cli_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args, const std::string& log,
        const std::string& env = "") {
    std::string cmd = env + (env.empty() ? "" : " ") + cli + " " + args + " > " + log +
                      " 2>&1";
    int rc = std::system(cmd.c_str());
    return rc < 0 ? rc : WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

// 16x16 image whose value encodes the label: trivially learnable
void write_pair(const std::string& img_path, const std::string& lab_path) {
    Volume img = dnptest::image2d(16, 16, [](int i, int) { return i < 8 ? 1.0 : -1.0; });
    Volume lab = dnptest::image2d(16, 16, [](int i, int) { return i < 8 ? 1.0 : 0.0; });
    write_nifti(img, img_path, NiftiDtype::Float32);
    write_nifti(lab, lab_path, NiftiDtype::Float32);
}

const char* kTrainConfig =
    "[scheme]\n"
    "ndim = 2\n"
    "depth = 1\n"
    "patch_size = 8\n"
    "fov_rel = 1\n"
    "destvox_mm = 2\n"
    "[model]\n"
    "hidden = 4\n"
    "num_labels = 1\n"
    "[train]\n"
    "num_its = 3\n"
    "num_patches = 4\n"
    "batch_size = 4\n";

} // namespace

TEST_CASE("cli: train writes a loadable checkpoint and a history csv") {
    TempDir t;
    write_pair(t.file("img.nii"), t.file("lab.nii"));
    write_text(t.file("cfg.ini"), kTrainConfig);
    write_text(t.file("data.txt"), t.file("img.nii") + " " + t.file("lab.nii") + "\n");
    int rc = run("train --config " + t.file("cfg.ini") + " --data " + t.file("data.txt") +
                     " --out " + t.file("model.dnp") + " --seed 7",
                 t.file("log.txt"), "DNP_LOG=quiet");
    INFO(slurp(t.file("log.txt")));
    REQUIRE(rc == 0);
    REQUIRE(fs::exists(t.file("model.dnp")));
    REQUIRE(fs::exists(t.file("model.dnp.history.csv")));
    PatchworkModel m = PatchworkModel::load(t.file("model.dnp"));
    CHECK(m.scheme.depth == 1);
    CHECK(m.cfg.num_labels == 1);
    std::string hist = slurp(t.file("model.dnp.history.csv"));
    CHECK(hist.find("mean_loss_level0") != std::string::npos);
}

TEST_CASE("cli: identical seeds give identical training histories") {
    TempDir t;
    write_pair(t.file("img.nii"), t.file("lab.nii"));
    write_text(t.file("cfg.ini"), kTrainConfig);
    write_text(t.file("data.txt"), t.file("img.nii") + " " + t.file("lab.nii") + "\n");
    for (const char* out : {"a.dnp", "b.dnp"}) {
        int rc = run("train --config " + t.file("cfg.ini") + " --data " +
                         t.file("data.txt") + " --out " + t.file(out) +
                         " --seed 7 --deterministic",
                     t.file("log.txt"), "DNP_LOG=quiet");
        REQUIRE(rc == 0);
    }
    CHECK(slurp(t.file("a.dnp.history.csv")) == slurp(t.file("b.dnp.history.csv")));
}

TEST_CASE("cli: missing label file exits 1 and names the path") {
    TempDir t;
    write_pair(t.file("img.nii"), t.file("lab.nii"));
    write_text(t.file("cfg.ini"), kTrainConfig);
    write_text(t.file("data.txt"),
               t.file("img.nii") + " " + t.file("no_such_labels.nii") + "\n");
    int rc = run("train --config " + t.file("cfg.ini") + " --data " + t.file("data.txt") +
                     " --out " + t.file("model.dnp"),
                 t.file("log.txt"), "DNP_LOG=quiet");
    CHECK(rc == 1);
    CHECK(slurp(t.file("log.txt")).find("no_such_labels.nii") != std::string::npos);
}

TEST_CASE("cli: unknown config key exits 1") {
    TempDir t;
    write_pair(t.file("img.nii"), t.file("lab.nii"));
    write_text(t.file("cfg.ini"), std::string(kTrainConfig) + "turbo = yes\n");
    write_text(t.file("data.txt"), t.file("img.nii") + " " + t.file("lab.nii") + "\n");
    int rc = run("train --config " + t.file("cfg.ini") + " --data " + t.file("data.txt") +
                     " --out " + t.file("model.dnp"),
                 t.file("log.txt"), "DNP_LOG=quiet");
    CHECK(rc == 1);
    CHECK(slurp(t.file("log.txt")).find("turbo") != std::string::npos);
}

TEST_CASE("cli: predict runs and rejects dimension mismatches") {
    TempDir t;
    write_pair(t.file("img.nii"), t.file("lab.nii"));
    write_text(t.file("cfg.ini"), kTrainConfig);
    write_text(t.file("data.txt"), t.file("img.nii") + " " + t.file("lab.nii") + "\n");
    REQUIRE(run("train --config " + t.file("cfg.ini") + " --data " + t.file("data.txt") +
                    " --out " + t.file("model.dnp") + " --seed 1",
                t.file("log.txt"), "DNP_LOG=quiet") == 0);

    int rc = run("predict --model " + t.file("model.dnp") + " --image " +
                     t.file("img.nii") + " --out " + t.file("pred.nii"),
                 t.file("log.txt"), "DNP_LOG=quiet");
    INFO(slurp(t.file("log.txt")));
    CHECK(rc == 0);
    CHECK(fs::exists(t.file("pred.nii")));
    Volume pred = read_nifti(t.file("pred.nii"));
    for (double v : pred.data.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // a 3D image cannot be fed to a 2D model
    Volume img3;
    img3.ndim = 3;
    img3.affine = Affine::identity(3);
    img3.data = NdArray({8, 8, 8, 1});
    write_nifti(img3, t.file("img3.nii"), NiftiDtype::Float32);
    rc = run("predict --model " + t.file("model.dnp") + " --image " + t.file("img3.nii") +
                 " --out " + t.file("pred3.nii"),
             t.file("log.txt"), "DNP_LOG=quiet");
    CHECK(rc == 1);
}

TEST_CASE("cli: bad mask threshold count exits 1") {
    TempDir t;
    // a 2-label model
    Volume img = dnptest::image2d(16, 16, [](int i, int) { return double(i); });
    NdArray lab({16, 16, 2});
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j)
            lab[std::size_t((i * 16 + j) * 2 + (i < 8 ? 0 : 1))] = 1.0;
    Volume labv;
    labv.ndim = 2;
    labv.affine = img.affine;
    labv.data = lab;
    write_nifti(img, t.file("img.nii"), NiftiDtype::Float32);
    write_nifti(labv, t.file("lab.nii"), NiftiDtype::Float32);
    std::string cfg(kTrainConfig);
    cfg.replace(cfg.find("num_labels = 1"), 14, "num_labels = 2");
    write_text(t.file("cfg.ini"), cfg);
    write_text(t.file("data.txt"), t.file("img.nii") + " " + t.file("lab.nii") + "\n");
    REQUIRE(run("train --config " + t.file("cfg.ini") + " --data " + t.file("data.txt") +
                    " --out " + t.file("model.dnp") + " --seed 1",
                t.file("log.txt"), "DNP_LOG=quiet") == 0);

    write_text(t.file("apply.ini"), "[apply]\nout_typ = mask:0.4\n");
    int rc = run("predict --model " + t.file("model.dnp") + " --image " +
                     t.file("img.nii") + " --out " + t.file("pred.nii") + " --config " +
                     t.file("apply.ini"),
                 t.file("log.txt"), "DNP_LOG=quiet");
    CHECK(rc == 1);
    CHECK(slurp(t.file("log.txt")).find("threshold") != std::string::npos);
}

TEST_CASE("cli: reconstruct writes the identity-pipeline output") {
    TempDir t;
    write_pair(t.file("img.nii"), t.file("lab.nii"));
    write_text(t.file("cfg.ini"), kTrainConfig);
    int rc = run("reconstruct --config " + t.file("cfg.ini") + " --image " +
                     t.file("img.nii") + " --out " + t.file("rec.nii"),
                 t.file("log.txt"), "DNP_LOG=quiet");
    INFO(slurp(t.file("log.txt")));
    REQUIRE(rc == 0);
    Volume rec = read_nifti(t.file("rec.nii"));
    CHECK(rec.ndim == 2);
    CHECK(rec.data.shape[0] == 8); // 16 mm at 2 mm dest voxels
}

TEST_CASE("cli: selftest passes, and fails under gradient fault injection") {
    TempDir t;
    CHECK(run("selftest", t.file("ok.txt")) == 0);
    CHECK(slurp(t.file("ok.txt")).find("PASS") != std::string::npos);
    CHECK(run("selftest", t.file("bad.txt"), "DNP_SELFTEST_BADGRAD=1") == 1);
    CHECK(slurp(t.file("bad.txt")).find("FAIL") != std::string::npos);
}

TEST_CASE("config: parse -> serialize -> parse round trip") {
    std::string text =
        "[scheme]\n"
        "depth = 3\n"
        "ndim = 2\n"
        "patch_size = 32\n"
        "fov_mm = 256\n"
        "destvox_mm = 1\n"
        "interp_type = linear\n"
        "[model]\n"
        "hidden = 16\n"
        "categorial_label = 3,7\n"
        "categorical = true\n"
        "[train]\n"
        "num_its = 10\n"
        "balance.ratio = 0.5\n"
        "augment.dphi = 0.2\n"
        "[apply]\n"
        "lazyEval.fraction = 0.5\n"
        "sparse_suppression = 1\n"
        "out_typ = atls\n"
        "level = mix\n";
    ConfigDoc doc = parse_config(text);
    std::string out = serialize_config(doc);
    ConfigDoc doc2 = parse_config(out);
    CHECK(doc == doc2);
    FullConfig fc = interpret_config(doc2);
    CHECK(fc.scheme.depth == 3);
    CHECK(fc.model.num_labels == 2);
    CHECK(fc.model.label_values == std::vector<int>{3, 7});
    CHECK(fc.train.balance.ratio == doctest::Approx(0.5));
    CHECK(fc.apply.lazy_fraction == doctest::Approx(0.5));
    CHECK(fc.apply.level_mix);
    CHECK(fc.apply.out_type == "atls");
}

TEST_CASE("config: malformed input is rejected") {
    CHECK_THROWS_AS(parse_config("depth = 3\n"), InvalidConfig); // key before section
    CHECK_THROWS_AS(parse_config("[scheme]\ndepth = 1\ndepth = 2\n"), InvalidConfig);
    CHECK_THROWS_AS(interpret_config(parse_config("[wat]\nx = 1\n")), InvalidConfig);
    // fov_mm and fov_rel together
    CHECK_THROWS_AS(interpret_config(parse_config(
                        "[scheme]\ndepth = 1\npatch_size = 8\nfov_mm = 10\n"
                        "fov_rel = 1\ndestvox_mm = 1\n")),
                    InvalidConfig);
}
