#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"
#include "layoutmuse/features.hpp"
#include "layoutmuse/layout_codec.hpp"
#include "layoutmuse/synthetic.hpp"

using namespace layoutmuse;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = 0;
  std::string out, err;
};

const fs::path kWork = fs::temp_directory_path() / "layoutmuse_cli";

Run run(const std::string& args) {
  const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd =
      std::string(LAYOUTMUSE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  return {WEXITSTATUS(raw), slurp(out), slurp(err)};
}

json last_line(const std::string& text) {
  const auto end = text.find_last_not_of('\n');
  const auto start = text.rfind('\n', end);
  return json::parse(text.substr(start == std::string::npos ? 0 : start + 1, end + 1));
}

// Four center-column drawings plus one pair with a blank saliency map.
fs::path make_corpus() {
  fs::remove_all(kWork);
  const fs::path dir = kWork / "corpus";
  fs::create_directories(dir);
  const auto pairs = synthetic::center_column_drawings(4, 96, 3);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string name = "d" + std::to_string(i);
    imaging::write_png(dir / (name + ".png"), pairs[i].image);
    imaging::write_png(dir / (name + "_sal.png"), imaging::saliency_to_image(pairs[i].saliency));
  }
  imaging::write_png(dir / "blank.png", pairs[0].image);
  imaging::write_png(dir / "blank_sal.png", imaging::RasterImage(96, 96, 1, 0.0f));
  imaging::write_png(dir / "lonely.png", pairs[0].image);  // no saliency partner
  return dir;
}

}  // namespace

TEST_CASE("pipeline commands produce their files") {
  const fs::path dir = make_corpus();
  const std::string manifest = (kWork / "m.jsonl").string();

  Run r = run("ingest --dir " + dir.string() + " --out " + manifest);
  REQUIRE(r.status == 0);
  CHECK(last_line(r.out).at("pairs") == 5);  // the blank pair still decodes
  CHECK(r.err.find("lonely") != std::string::npos);

  r = run("segment --image " + (dir / "d0.png").string() + " --saliency " + (dir / "d0_sal.png").string() +
          " --out " + (kWork / "seg").string());
  REQUIRE(r.status == 0);
  std::ifstream regions_in(kWork / "seg" / "regions.json");
  const json regions = json::parse(regions_in);
  CHECK(regions.at("regions").size() >= 2);
  CHECK(fs::exists(kWork / "seg" / "overlay.png"));
  CHECK(fs::exists(kWork / "seg" / "patches" / "region_0.png"));

  r = run("features --manifest " + manifest + " --out " + (kWork / "f.bin").string());
  REQUIRE(r.status == 0);
  CHECK(r.err.find("blank") != std::string::npos);
  const auto bags = features::import_features(kWork / "f.bin");
  CHECK(bags.size() == 4);

  r = run("cluster --manifest " + manifest + " --k 2 --out " + (kWork / "report").string());
  REQUIRE(r.status == 0);
  CHECK(last_line(r.out).at("k") == 2);
  CHECK(fs::exists(kWork / "report" / "assignment.json"));

  r = run("train --manifest " + manifest + " --out " + (kWork / "run").string() +
          " --epochs 1 --batch 2 --seed 3");
  REQUIRE(r.status == 0);
  const fs::path ckpt = kWork / "run" / "generator.bin";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(kWork / "run" / "train_log.jsonl"));

  r = run("generate --image " + (dir / "d1.png").string() + " --saliency " + (dir / "d1_sal.png").string() +
          " --ckpt " + ckpt.string() + " --count 10 --seed 1 --out " + (kWork / "gen").string());
  REQUIRE(r.status == 0);
  const int n = last_line(r.out).at("anchors").get<int>();
  for (int i = 0; i < 10; ++i) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "layout_%02d", i);
    std::ifstream in(kWork / "gen" / (std::string(stem) + ".json"));
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(layout::anchors_from_json(text).size() == static_cast<std::size_t>(n));
    CHECK(fs::exists(kWork / "gen" / (std::string(stem) + "_preview.png")));
    CHECK(fs::exists(kWork / "gen" / (std::string(stem) + "_marks.png")));
  }
}

TEST_CASE("gradcheck exits zero when every suite passes") {
  fs::create_directories(kWork);
  const Run r = run("gradcheck");
  CHECK(r.status == 0);
  CHECK(r.out.find("\"ok\":false") == std::string::npos);
  CHECK(r.out.find("compositor") != std::string::npos);
}

TEST_CASE("failures exit nonzero with a JSON error on stderr") {
  fs::create_directories(kWork);
  Run r = run("segment --image missing.png --saliency missing.png");
  CHECK(r.status == 1);
  CHECK(last_line(r.err).at("error") == "DecodeError");

  r = run("generate --image missing.png --saliency missing.png --ckpt nowhere.bin --out x");
  CHECK(r.status == 1);
  CHECK(last_line(r.err).at("error") == "NoCheckpoint");

  r = run("cluster");
  CHECK(r.status == 2);
  CHECK(last_line(r.err).at("error") == "UsageError");

  CHECK(run("--help").status == 0);
}
