#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>
#include <torch/torch.h>

#include "../support.hpp"
#include "mactok/checkpoint.hpp"
#include "mactok/config.hpp"
#include "mactok/data.hpp"
#include "mactok/error.hpp"
#include "mactok/image.hpp"
#include "mactok/plot.hpp"
#include "mactok/run_manifest.hpp"

using namespace mactok;
namespace fs = std::filesystem;

namespace {

RgbImage noise_image(int64_t w, int64_t h, uint32_t seed) {
    RgbImage img(w, h);
    std::mt19937 rng(seed);
    for (auto& v : img.data) v = static_cast<uint8_t>(rng() & 0xFF);
    return img;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Images, PpmAndPngRoundTrip) {
    test::TempDir dir("img");
    auto img = noise_image(13, 7, 1);
    write_ppm(dir / "a.ppm", img);
    write_png(dir / "a.png", img);
    EXPECT_EQ(read_ppm(dir / "a.ppm"), img);
    EXPECT_EQ(read_png(dir / "a.png"), img);
    EXPECT_EQ(read_image(dir / "a.png"), img);
    EXPECT_EQ(read_image(dir / "a.ppm"), img);
}

TEST(Images, CorruptFilesRaiseIoError) {
    test::TempDir dir("bad");
    std::ofstream(dir / "x.png") << "not an image";
    std::ofstream(dir / "y.ppm") << "P6\n4 4\n255\nabc";
    EXPECT_THROW(read_image(dir / "x.png"), IoError);
    EXPECT_THROW(read_ppm(dir / "y.ppm"), IoError);
    EXPECT_THROW(read_image(dir / "missing.png"), IoError);
}

TEST(Images, NormalizationRoundTrip) {
    auto img = noise_image(8, 8, 2);
    std::vector<RgbImage> one{img};
    auto batch = to_batch(one);
    EXPECT_GE(batch.pixels.min().item<float>(), -1.0f);
    EXPECT_LE(batch.pixels.max().item<float>(), 1.0f);
    EXPECT_EQ(to_rgb(batch.pixels[0]), img);
    EXPECT_NEAR(normalize_u8(torch::tensor({0, 255}, torch::kUInt8))[1].item<float>(), 1.0f, 1e-7);
}

TEST(Images, ListingIsSorted) {
    test::TempDir dir("list");
    write_png(dir / "b.png", noise_image(4, 4, 1));
    write_ppm(dir / "a.ppm", noise_image(4, 4, 2));
    std::ofstream(dir / "notes.txt") << "x";
    auto files = list_images(dir.path());
    ASSERT_EQ(files.size(), 2u);
    EXPECT_EQ(files[0].filename(), "a.ppm");
}

TEST(KeyValuesTest, ParseCommentsAndErrors) {
    auto kv = parse_key_values("# comment\nsteps = 10\n\nlr = 1e-3 \n");
    EXPECT_EQ(kv.at("steps"), "10");
    EXPECT_EQ(kv.at("lr"), "1e-3");
    EXPECT_THROW(parse_key_values("novalue\n"), ConfigError);
    EXPECT_THROW(parse_key_values("a=1\na=2\n"), ConfigError);
    EXPECT_EQ(parse_key_values(format_key_values(kv)), kv);
    EXPECT_THROW(parse_int("k", "1.5"), ConfigError);
    EXPECT_TRUE(parse_bool("k", "true"));
}

TEST(Data, ShapesAreDeterministicAndLabeled) {
    auto a = synthetic_shapes(40, 16, 9), b = synthetic_shapes(40, 16, 9);
    EXPECT_TRUE(torch::equal(a.images, b.images));
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.images.sizes(), (std::vector<int64_t>{40, 16, 16, 3}));
    std::set<int64_t> classes(a.labels.begin(), a.labels.end());
    EXPECT_EQ(classes.size(), static_cast<size_t>(kShapeClasses));
}

TEST(Data, DirectoryRoundTripKeepsLabels) {
    test::TempDir dir("ds");
    auto a = synthetic_shapes(20, 16, 4);
    write_dataset(dir.path(), a);
    auto b = load_image_dir(dir.path());
    EXPECT_EQ(b.size(), 20);
    std::multiset<int64_t> la(a.labels.begin(), a.labels.end()), lb(b.labels.begin(), b.labels.end());
    EXPECT_EQ(la, lb);
}

TEST(Data, SamplerCoversEpoch) {
    BatchSampler s(10, 5, 3);
    auto a = s.next(), b = s.next();
    std::set<int64_t> all(a.begin(), a.end());
    all.insert(b.begin(), b.end());
    EXPECT_EQ(all.size(), 10u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    test::TempDir dir("ckpt");
    auto cfg = test::tiny_config();
    torch::manual_seed(3);
    MacTok model(cfg.model);
    save_checkpoint(dir.path(), model, cfg, 17);
    auto loaded = load_checkpoint(dir.path());
    EXPECT_EQ(loaded.step, 17);
    EXPECT_EQ(loaded.config.to_key_values(), cfg.to_key_values());
    auto a = model->named_parameters(), b = loaded.model->named_parameters();
    ASSERT_EQ(a.size(), b.size());
    for (auto& item : a) EXPECT_TRUE(torch::equal(item.value(), b[item.key()])) << item.key();
    EXPECT_EQ(parameter_digest(*model), parameter_digest(*loaded.model));

    auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
    EXPECT_EQ(j["dtype"], "float32");
    EXPECT_EQ(j["byte_order"], "little");
    EXPECT_EQ(j["version"], kCheckpointFormatVersion);
}

TEST(Checkpoint, DamageIsReported) {
    test::TempDir dir("ckpt2");
    auto cfg = test::tiny_config();
    MacTok model(cfg.model);
    save_checkpoint(dir.path(), model, cfg, 1);
    EXPECT_THROW(load_checkpoint(dir / "absent"), IoError);
    fs::resize_file(dir / "0000.bin", 3);
    EXPECT_THROW(load_checkpoint(dir.path()), IoError);
}

TEST(Checkpoint, RawTensorArchive) {
    test::TempDir dir("raw");
    NamedTensors t{{"a", torch::randn({3, 4})}, {"b", torch::arange(5, torch::kFloat32)}};
    save_tensors(dir.path(), t, {{"k", "v"}}, 9);
    auto back = load_tensors(dir.path());
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_TRUE(torch::equal(back.tensors[0].second, t[0].second));
    EXPECT_EQ(back.tensors[1].first, "b");
    EXPECT_EQ(back.config.at("k"), "v");
    EXPECT_EQ(back.step, 9);
}

TEST(Manifest, AppendOnlyEntries) {
    test::TempDir dir("man");
    {
        RunManifest m(dir.path(), "train", {{"steps", "3"}}, 5);
        m.begin();
        auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
        EXPECT_EQ(j["runs"].size(), 1u);
        EXPECT_EQ(j["runs"][0]["status"], "running");
        m.note("train_mse", "0.1");
        m.add_output(dir / "losses.csv");
        m.finish();
    }
    RunManifest second(dir.path(), "sweep", {}, 6);
    second.begin();
    second.finish("failed: x");
    auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
    ASSERT_EQ(j["runs"].size(), 2u);
    EXPECT_EQ(j["runs"][0]["status"], "ok");
    EXPECT_EQ(j["runs"][0]["seed"], 5);
    EXPECT_EQ(j["runs"][0]["notes"]["train_mse"], "0.1");
    EXPECT_EQ(j["runs"][1]["command"], "sweep");
    EXPECT_FALSE(j["runs"][0]["code_version"].get<std::string>().empty());
}

TEST(Csv, ParseColumnsAndErrors) {
    auto t = parse_csv("step,kl,label\n1,0.5,a\n2,inf,b\n3,n/a,c\n");
    auto kl = t.column("kl");
    ASSERT_EQ(kl.size(), 3u);
    EXPECT_EQ(kl[0], 0.5);
    EXPECT_TRUE(std::isinf(kl[1]));
    EXPECT_TRUE(std::isnan(kl[2]));
    EXPECT_THROW(t.column("missing"), ConfigError);
    EXPECT_THROW(t.column("label"), InvalidInputError);
    EXPECT_THROW(parse_csv("a,b\n1\n"), InvalidInputError);
    EXPECT_THROW(parse_csv(""), InvalidInputError);
}

TEST(Plot, DeterministicAndSinglePoint) {
    test::TempDir dir("plot");
    std::ofstream(dir / "one.csv") << "x,y\n1,2\n";
    emit_plot(dir / "one.csv", "x", {"y"}, dir / "a.png");
    emit_plot(dir / "one.csv", "x", {"y"}, dir / "b.png");
    auto png = read_png(dir / "a.png");
    EXPECT_EQ(png.width, 640);
    EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
    EXPECT_THROW(emit_plot(dir / "one.csv", "x", {"z"}, dir / "c.png"), ConfigError);
    EXPECT_FALSE(fs::exists(dir / "c.png"));
}
