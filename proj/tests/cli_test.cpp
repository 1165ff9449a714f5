#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sacodec/codec.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sacodec_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(SACODEC_CLI) + " " + args + " >" + path("stdout") + " 2>" + path("stderr");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string text(const std::string& name) const {
    std::ifstream f(path(name));
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }

  json stdout_json() const { return json::parse(text("stdout")); }

  void write_tone(const std::string& name, std::size_t n, std::uint32_t rate = 8000) const {
    sacodec::Waveform w{std::vector<double>(n), rate};
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = 0.3 * std::sin(0.05 * static_cast<double>(i));
    sacodec::write_wav(path(name), w);
  }

  fs::path dir_;
};

TEST_F(Cli, EncodeDecodeRoundTrip) {
  write_tone("x.wav", 8000);
  ASSERT_EQ(run("encode --profile tiny " + path("x.wav") + " " + path("x.sact")), 0) << text("stderr");
  const json e = stdout_json();
  EXPECT_EQ(e["num_frames"], 100);
  EXPECT_DOUBLE_EQ(e["kbps"].get<double>(), 1.2);
  ASSERT_EQ(run("decode --profile tiny " + path("x.sact") + " " + path("y.wav")), 0) << text("stderr");
  EXPECT_EQ(stdout_json()["samples"], 8000);
  EXPECT_EQ(sacodec::read_wav(path("y.wav")).samples.size(), 8000u);
}

TEST_F(Cli, ChecksumOverride) {
  write_tone("x.wav", 800);
  ASSERT_EQ(run("encode --profile tiny --seed 1 " + path("x.wav") + " " + path("x.sact")), 0);
  EXPECT_EQ(run("decode --profile tiny --seed 2 " + path("x.sact") + " " + path("y.wav")), 1);
  EXPECT_NE(text("stderr").find("error"), std::string::npos);
  EXPECT_EQ(run("decode --profile tiny --seed 2 --override-checksum " + path("x.sact") + " " + path("y.wav")), 0);
  EXPECT_NE(text("stderr").find("warning"), std::string::npos);
}

TEST_F(Cli, ResampleFlag) {
  write_tone("x.wav", 1600, 16000);
  EXPECT_EQ(run("encode --profile tiny " + path("x.wav") + " " + path("x.sact")), 1);
  ASSERT_EQ(run("encode --profile tiny --resample " + path("x.wav") + " " + path("x.sact")), 0);
  EXPECT_EQ(stdout_json()["num_frames"], 10);
}

TEST_F(Cli, ReportOnTokens) {
  write_tone("x.wav", 8000);
  ASSERT_EQ(run("encode --profile tiny " + path("x.wav") + " " + path("x.sact")), 0);
  ASSERT_EQ(run("report --tokens " + path("x.sact") + " --out " + path("r.json")), 0) << text("stderr");
  const json r = json::parse(text("r.json"));
  EXPECT_EQ(r["num_frames"], 100);
  EXPECT_DOUBLE_EQ(r["bitrate"]["nominal_kbps"].get<double>(), 1.2);
}

TEST_F(Cli, ProbeReportsStream) {
  ASSERT_EQ(run("probe --profile tiny --clips 16 --stream both"), 0) << text("stderr");
  const json r = stdout_json();
  EXPECT_EQ(r["stream"], "both");
  EXPECT_EQ(r["classes"], 4);
}

TEST_F(Cli, TrainWritesCheckpoint) {
  ASSERT_EQ(run("train --profile tiny --steps 2 --set crop_seconds=0.2 --set corpus_clips=4 --checkpoint " + path("m.ckpt")),
            0)
      << text("stderr");
  EXPECT_TRUE(fs::exists(path("m.ckpt")));
  EXPECT_EQ(stdout_json()["steps"], 2);
  write_tone("x.wav", 800);
  ASSERT_EQ(run("encode --checkpoint " + path("m.ckpt") + " " + path("x.wav") + " " + path("x.sact")), 0)
      << text("stderr");
  EXPECT_EQ(run("encode --profile paper --checkpoint " + path("m.ckpt") + " " + path("x.wav") + " " + path("x.sact")),
            1);
}

TEST_F(Cli, RejectsBadArguments) {
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("probe --stream residual"), 0);
  EXPECT_NE(run("encode --profile huge a b"), 0);
  EXPECT_EQ(run("train --profile tiny --set nonsense=1 --steps 0"), 1);
}

}  // namespace
