#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rgan/error.hpp"
#include "rgan/pipeline.hpp"
#include "test_util.hpp"

using namespace rgan;
using rgan::testing::TempDir;

namespace {

Architecture small_arch() {
    Architecture a;
    a.widths = {4, 8};
    return a;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

int run_cli(const std::string& args) {
    const char* cli = std::getenv("RGAN_CLI");
    REQUIRE_MESSAGE(cli != nullptr, "RGAN_CLI must point at rgan_cli");
    return std::system((std::string(cli) + " " + args + " 2>/dev/null >/dev/null").c_str());
}

}  // namespace

TEST_CASE("config parsing: values, comments and defaults") {
    std::istringstream in("# run\nlr = 0.0002\nmode = fixed\nwidths = 8,16\n\nsplit_test = 0.5 # trailing\n");
    const RunConfig cfg = parse_config(in);
    CHECK(cfg.train.lr == 0.0002f);
    CHECK(cfg.train.mode == TrainMode::kFixed);
    CHECK(cfg.arch.widths == std::vector<int>{8, 16});
    CHECK(cfg.splits.test == 0.5);
    CHECK(cfg.train.batch_size == 4);
}

TEST_CASE("config parsing: unknown key names its line") {
    std::istringstream in("lr = 0.001\n\nlearning_rate = 3\n");
    try {
        parse_config(in, "run.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("run.cfg:3") != std::string::npos);
        CHECK(msg.find("learning_rate") != std::string::npos);
    }
}

TEST_CASE("config parsing: bad values are rejected") {
    for (const char* text : {"lr = fast\n", "image_size = 40\n", "mode = sometimes\n", "th_eta = 1.5\n", "lr\n"}) {
        std::istringstream in(text);
        CHECK_THROWS_AS(parse_config(in), ConfigError);
    }
}

TEST_CASE("formatted config parses back to the same text") {
    std::istringstream in("lr = 0.0003\nmax_epochs = 7\nwidths = 4,8\nnonstandard = bl57\nconditional_d = false\n");
    const std::string text = format_config(parse_config(in));
    std::istringstream again(text);
    CHECK(format_config(parse_config(again)) == text);
}

TEST_CASE("checkpoint round trip preserves tensors, frozen set and metadata") {
    TempDir dir("ckpt");
    const Architecture arch = small_arch();
    const ModelBundle gan = make_gan(arch, make_encoder(arch, 1), 2);
    const CheckpointMeta meta{12, "full", 77};
    save_checkpoint(gan, meta, dir / "m.ckpt");
    const Checkpoint back = load_checkpoint(dir / "m.ckpt", ModelKind::kGan);
    CHECK(back.meta == meta);
    CHECK(back.model.architecture_id == gan.architecture_id);
    CHECK(back.model.frozen == gan.frozen);
    REQUIRE(back.model.params.size() == gan.params.size());
    for (const auto& [name, t] : gan.params) {
        const auto a = t.data();
        const auto b = back.model.at(name).data();
        CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
        CHECK(back.model.at(name).requires_grad() == !gan.frozen.count(name));
    }
    save_checkpoint(back.model, back.meta, dir / "n.ckpt");
    CHECK(testing::file_bytes(dir / "m.ckpt") == testing::file_bytes(dir / "n.ckpt"));
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir("ckpt_bad");
    const Architecture arch = small_arch();
    const ModelBundle enc = make_encoder(arch, 1);
    save_checkpoint(enc, {}, dir / "e.ckpt");
    const std::string good = testing::file_bytes(dir / "e.ckpt");

    std::string bad = good;
    bad[0] = 'X';
    write_text(dir / "magic.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);

    bad = good;
    bad[4] = 9;
    write_text(dir / "version.ckpt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "version.ckpt"), doctest::Contains("version 9"), FormatError);

    write_text(dir / "short.ckpt", good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);

    write_text(dir / "long.ckpt", good + "x");
    CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt"), FormatError);

    CHECK_THROWS_AS(load_checkpoint(dir / "e.ckpt", ModelKind::kGan), ConfigError);
    CHECK_NOTHROW(load_checkpoint(dir / "e.ckpt", ModelKind::kEncoder));
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), FormatError);
}

TEST_CASE("gen-data writes every kernel for every phantom, deterministically") {
    TempDir a("gen_a"), b("gen_b");
    GenDataOptions opt;
    opt.count = 10;
    opt.size = 32;
    opt.out = a.path();
    std::ostringstream log;
    CHECK(cmd_gen_data(opt, log) == 30);
    opt.out = b.path();
    cmd_gen_data(opt, log);
    const auto rows = read_manifest(a / "manifest.csv");
    CHECK(rows.size() == 30);
    CHECK(testing::file_bytes(a / "manifest.csv") == testing::file_bytes(b / "manifest.csv"));
    for (const auto& row : rows) CHECK(testing::file_bytes(a / row.path) == testing::file_bytes(b / row.path));

    opt.nonstandard = "bl57";
    opt.out = a / "only";
    CHECK(cmd_gen_data(opt, log) == 20);
    opt.nonstandard = "bl64";
    CHECK_THROWS_AS(cmd_gen_data(opt, log), ConfigError);
}

TEST_CASE("train log sits next to the checkpoint") {
    CHECK(train_log_path("runs/model.ckpt") == std::filesystem::path("runs/model.log.csv"));
    CHECK(train_log_path("model") == std::filesystem::path("model.log.csv"));
}

TEST_CASE("command line end to end on a tiny configuration") {
    TempDir dir("cli");
    write_text(dir / "tiny.cfg",
               "widths = 4,8\nmax_epochs = 2\nsubset_size = 2\nsubset_repeats = 1\nth_eta = 1\n"
               "pretrain_max_epochs = 2\npretrain_min_acc = 0\nsplit_train = 2\nsplit_val = 2\nsplit_test = 10\n");
    const std::string d = dir.path().string();
    const std::string cfg = " --config " + d + "/tiny.cfg";
    REQUIRE(run_cli("gen-data --out " + d + "/data --count 14 --size 32" + cfg) == 0);
    REQUIRE(run_cli("pretrain --data " + d + "/data --out " + d + "/enc.ckpt" + cfg) == 0);
    REQUIRE(run_cli("train --data " + d + "/data --encoder " + d + "/enc.ckpt --out " + d + "/m.ckpt" + cfg) == 0);
    CHECK(std::filesystem::exists(dir / "m.log.csv"));
    REQUIRE(run_cli("evaluate --model " + d + "/m.ckpt --data " + d + "/data --report " + d + "/r.csv" + cfg) == 0);
    const std::string report = testing::file_bytes(dir / "r.csv");
    CHECK(report.find("\ninput,") != std::string::npos);
    CHECK(report.find("\nharmonized,") != std::string::npos);

    const std::string img = d + "/data/images/p00000_BR40.pgm";
    REQUIRE(run_cli("harmonize --model " + d + "/m.ckpt --in " + img + " --out " + d + "/h.pgm" + cfg) == 0);
    const CtImage h = read_image(dir / "h.pgm");
    CHECK(h.width == 32);
    REQUIRE(run_cli("cam --model " + d + "/m.ckpt --in " + img + " --target " + d + "/h.pgm --out " + d + "/c.pgm" + cfg) ==
            0);
    CHECK(std::filesystem::exists(dir / "c.pgm"));

    CHECK(run_cli("train --data " + d + "/data --encoder " + d + "/m.ckpt --out " + d + "/x.ckpt" + cfg) != 0);
    CHECK(run_cli("harmonize --model " + d + "/enc.ckpt --in " + img + " --out " + d + "/y.pgm" + cfg) != 0);
    CHECK(run_cli("frobnicate") != 0);
}
