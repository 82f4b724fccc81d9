#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;

    std::string last_err_line() const {
        std::string s = err;
        while (!s.empty() && s.back() == '\n') s.pop_back();
        const auto nl = s.rfind('\n');
        return nl == std::string::npos ? s : s.substr(nl + 1);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

class Cli : public ::testing::Test {
   protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("vidguide_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    Outcome run(const std::string& args) const {
        const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd =
            std::string("'") + VIDGUIDE_CLI + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
        const int status = std::system(cmd.c_str());
        Outcome o;
        o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        o.out = slurp(out);
        o.err = slurp(err);
        return o;
    }

    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = dir_ / name;
        std::ofstream(p, std::ios::binary) << text;
        return p;
    }

    fs::path dir_;
};

// Short schedule so each run finishes in about a second.
const std::string kSmall =
    " --set total_steps=6 --set t1=2 --set t2=4 --set iters_spatial=2 --set model.frames=2 --set model.latent_h=8"
    " --set model.latent_w=8 --set model.hidden=16 --set model.embed_dim=16 --set model.head_dim=8";

}  // namespace

TEST_F(Cli, ParsePromptPrintsPairs) {
    const Outcome o = run("parse-prompt 'a man is walking and a dog is running'");
    ASSERT_EQ(o.code, 0) << o.err;
    const auto j = nlohmann::json::parse(o.out);
    EXPECT_EQ(j["pairs"].size(), 2u);
    EXPECT_EQ(j["pairs"][1]["noun"], 6);
    EXPECT_EQ(j["pairs"][1]["verb"], 8);
}

TEST_F(Cli, EmptyPromptExitsTwo) {
    const Outcome o = run("parse-prompt '   '");
    EXPECT_EQ(o.code, 2);
    EXPECT_EQ(o.last_err_line().rfind("error: kind=input exit=2 message=", 0), 0u) << o.err;
}

TEST_F(Cli, MalformedBoxesExitTwoWithLine) {
    const fs::path p = write("bad.txt", "Frame 1: [{'id': 0, 'name': 'dog', 'box': [0, 0, 10, 10]}]\nFrame 3: []\nBackground keyword: x\n");
    const Outcome o = run("parse-boxes '" + p.string() + "'");
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.last_err_line().find("kind=parse exit=2 message=line 2:"), std::string::npos) << o.err;
}

TEST_F(Cli, MissingFileExitsFour) {
    const Outcome o = run("parse-boxes '" + (dir_ / "absent.txt").string() + "'");
    EXPECT_EQ(o.code, 4);
    EXPECT_EQ(o.last_err_line().rfind("error: kind=io exit=4", 0), 0u) << o.err;
}

TEST_F(Cli, UsageErrorExitsTwo) {
    const Outcome o = run("frobnicate");
    EXPECT_EQ(o.code, 2);
    EXPECT_EQ(o.last_err_line().rfind("error: kind=usage exit=2", 0), 0u) << o.err;
}

TEST_F(Cli, ValidateBoxesFlagsVelocity) {
    const std::string text = slurp(VIDGUIDE_FIXTURE_DIR "/in_context_examples.txt");
    const fs::path p = write("dog.txt", text.substr(text.find("Caption: A dog")));
    const Outcome bad = run("validate-boxes '" + p.string() + "' --max-step 60");
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.out.find("VELOCITY"), std::string::npos) << bad.out;
    const Outcome ok = run("validate-boxes '" + p.string() + "' --max-step 130");
    EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST_F(Cli, RasterizeAsciiGrid) {
    const Outcome o = run("rasterize '" VIDGUIDE_SCENE_FILE "' --grid 5x9 --frames 2");
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_NE(o.out.find("frame 2"), std::string::npos);
    EXPECT_NE(o.out.find('#'), std::string::npos);
    EXPECT_EQ(run("rasterize '" VIDGUIDE_SCENE_FILE "' --grid 5by9").code, 2);
}

TEST_F(Cli, GradcheckExitCodes) {
    const Outcome ok = run("gradcheck --component stub");
    EXPECT_EQ(ok.code, 0) << ok.err;
    const Outcome bad = run("gradcheck --component stub --corrupt-gradient");
    EXPECT_EQ(bad.code, 5);
    EXPECT_EQ(bad.last_err_line().rfind("error: kind=gradcheck exit=5", 0), 0u) << bad.err;
}

TEST_F(Cli, GenerateIsReproducibleAndRenders) {
    const std::string common = " --boxes '" VIDGUIDE_SCENE_FILE "' --seed 4 --upscale 2" + kSmall;
    const Outcome a = run("generate --out '" + (dir_ / "a").string() + "'" + common);
    ASSERT_EQ(a.code, 0) << a.err;
    const Outcome b = run("generate --out '" + (dir_ / "b").string() + "'" + common);
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_NE(a.out.find("guidance records: 6"), std::string::npos) << a.out;

    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir_ / "a")) {
        if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
        const fs::path rel = fs::relative(entry.path(), dir_ / "a");
        EXPECT_EQ(slurp(entry.path()), slurp(dir_ / "b" / rel)) << rel;
        ++compared;
    }
    EXPECT_GT(compared, 10u);

    const auto manifest = nlohmann::json::parse(slurp(dir_ / "a" / "manifest.json"));
    EXPECT_EQ(manifest["complete"], true);
    EXPECT_EQ(manifest["unguided"], false);
    EXPECT_EQ(manifest["seed"], 4);
    EXPECT_FALSE(manifest["inputs"].empty());
    for (const auto& f : manifest["outputs"]) EXPECT_EQ(f["sha256"].get<std::string>().size(), 64u);

    const Outcome r = run("render --ca '" + (dir_ / "a" / "ca" / "step02.json").string() + "' --word dog --frame 1 --out '" +
                          (dir_ / "dog.pgm").string() + "' --upscale 2");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(dir_ / "dog.pgm"), slurp(dir_ / "a" / "heatmaps" / "step02_t6_dog_f1.pgm"));
}

TEST_F(Cli, ZeroWeightsAreFlaggedUnguided) {
    const Outcome o = run("generate --boxes '" VIDGUIDE_SCENE_FILE "' --out '" + (dir_ / "u").string() +
                          "' --lambda_sp 0 --lambda_syt 0" + kSmall);
    ASSERT_EQ(o.code, 0) << o.err;
    const auto manifest = nlohmann::json::parse(slurp(dir_ / "u" / "manifest.json"));
    EXPECT_EQ(manifest["unguided"], true);
    EXPECT_EQ(slurp(dir_ / "u" / "trace.jsonl"), "");
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
    const fs::path cfg = write("cfg.txt", "lambda_sp = 5\nlambda_syt = 7\n");
    const Outcome o = run("generate --boxes '" VIDGUIDE_SCENE_FILE "' --out '" + (dir_ / "c").string() + "' --config '" +
                          cfg.string() + "' --lambda_syt 9" + kSmall);
    ASSERT_EQ(o.code, 0) << o.err;
    const std::string config = slurp(dir_ / "c" / "config.txt");
    EXPECT_NE(config.find("lambda_sp = 5\n"), std::string::npos);
    EXPECT_NE(config.find("lambda_syt = 9\n"), std::string::npos);
    const fs::path bad = write("bad.txt", "lambda_sp = 5\nwhatever = 1\n");
    const Outcome e = run("generate --boxes '" VIDGUIDE_SCENE_FILE "' --out '" + (dir_ / "d").string() + "' --config '" +
                          bad.string() + "'");
    EXPECT_EQ(e.code, 2);
    EXPECT_NE(e.last_err_line().find("line 2"), std::string::npos) << e.err;
}

TEST_F(Cli, AblateEmptyGridAndBadGrid) {
    const fs::path empty = write("empty.txt", "# no axes\n");
    const Outcome o = run("ablate --grid '" + empty.string() + "' --seeds 0 --out '" + (dir_ / "abl").string() + "'" + kSmall);
    ASSERT_EQ(o.code, 0) << o.err;
    const std::string rows = slurp(dir_ / "abl" / "ablation.jsonl");
    EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 1);
    EXPECT_FALSE(fs::exists(dir_ / "abl" / "rows.partial.jsonl"));
    EXPECT_EQ(nlohmann::json::parse(slurp(dir_ / "abl" / "manifest.json"))["complete"], true);

    const fs::path bad = write("bad.txt", "t1 = 1\nmystery = 2\n");
    const Outcome e = run("ablate --grid '" + bad.string() + "' --seeds 0 --out '" + (dir_ / "abl2").string() + "'");
    EXPECT_EQ(e.code, 2);
    EXPECT_NE(e.last_err_line().find("kind=parse exit=2 message=line 2:"), std::string::npos) << e.err;
}

TEST_F(Cli, AblateRowsIndependentOfThreads) {
    const fs::path grid = write("grid.txt", "t1 = 1, 2\n");
    const std::string common = " --grid '" + grid.string() + "' --seeds 0,1" + kSmall;
    ASSERT_EQ(run("ablate --out '" + (dir_ / "one").string() + "' --threads 1" + common).code, 0);
    ASSERT_EQ(run("ablate --out '" + (dir_ / "two").string() + "' --threads 3" + common).code, 0);
    const std::string a = slurp(dir_ / "one" / "ablation.jsonl");
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 4);
    EXPECT_EQ(a, slurp(dir_ / "two" / "ablation.jsonl"));
    EXPECT_EQ(slurp(dir_ / "one" / "ablation.txt"), slurp(dir_ / "two" / "ablation.txt"));
}
