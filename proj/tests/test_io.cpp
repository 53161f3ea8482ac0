#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include <unistd.h>

#include "test_util.hpp"

using namespace siesta;
using siesta::testing::blob_dataset;
using siesta::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("siesta_io_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

io::ImageSet tiny_images() {
  io::ImageSet s;
  s.rows = 4;
  s.cols = 4;
  for (int n = 0; n < 3; ++n) {
    for (int i = 0; i < 16; ++i) s.pixels.push_back(static_cast<float>((n * 16 + i) % 256) / 255.0f);
    s.labels.push_back(n);
  }
  return s;
}

std::uint32_t be32(const std::string& b, std::size_t off) {
  return (std::uint32_t(std::uint8_t(b[off])) << 24) | (std::uint32_t(std::uint8_t(b[off + 1])) << 16) |
         (std::uint32_t(std::uint8_t(b[off + 2])) << 8) | std::uint32_t(std::uint8_t(b[off + 3]));
}

}  // namespace

TEST(Idx, RoundTripAndIndependentReader) {
  const auto dir = scratch("idx");
  const auto set = tiny_images();
  io::save_idx(set, (dir / "img").string(), (dir / "lab").string());
  const auto raw = slurp(dir / "img");
  ASSERT_EQ(raw.size(), 16u + 48u);
  EXPECT_EQ(be32(raw, 0), 0x803u);
  EXPECT_EQ(be32(raw, 4), 3u);
  EXPECT_EQ(be32(raw, 8), 4u);
  EXPECT_EQ(be32(raw, 12), 4u);
  std::uint64_t sum = 0, expect = 0;
  for (std::size_t i = 16; i < raw.size(); ++i) sum += std::uint8_t(raw[i]);
  for (float p : set.pixels) expect += static_cast<std::uint64_t>(std::lround(p * 255.0f));
  EXPECT_EQ(sum, expect);
  const auto back = io::load_idx((dir / "img").string(), (dir / "lab").string());
  EXPECT_EQ(back.labels, set.labels);
  EXPECT_EQ(back.pixels, set.pixels);
}

TEST(Idx, BadMagicAndTruncation) {
  const auto dir = scratch("idx_bad");
  io::save_idx(tiny_images(), (dir / "img").string(), (dir / "lab").string());
  auto raw = slurp(dir / "img");
  std::istringstream truncated(raw.substr(0, raw.size() - 5));
  EXPECT_THROW(io::read_idx_images(truncated), DataError);
  raw[3] = 0x01;
  std::istringstream bad(raw);
  EXPECT_THROW(io::read_idx_images(bad), DataError);
  std::istringstream labels_as_images(slurp(dir / "lab"));
  EXPECT_THROW(io::read_idx_images(labels_as_images), DataError);
  EXPECT_THROW(io::load_idx((dir / "missing").string(), (dir / "lab").string()), IoError);
}

TEST(Features, ByteLengthAndRoundTrip) {
  const auto ds = blob_dataset(3, 4, 2, 3, 5, 1.0, 2);
  std::ostringstream os;
  io::write_features(os, ds);
  const auto bytes = os.str();
  EXPECT_EQ(bytes.size(), io::feature_file_bytes(12, 2, 3, 5, 1));
  EXPECT_EQ(bytes.substr(0, 4), "SFEA");
  std::istringstream is(bytes);
  io::FeatureHeader h;
  const auto back = io::read_features<double>(is, 0, &h);
  EXPECT_EQ(h.n, 12u);
  EXPECT_EQ(back.num_classes, 3u);
  EXPECT_EQ(back.labels, ds.labels);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < ds.tensors[i].size(); ++k) {
      EXPECT_EQ(back.tensors[i].data()[k], static_cast<double>(static_cast<float>(ds.tensors[i].data()[k])));
    }
  }
}

TEST(Features, EmptySetAndCorruption) {
  FeatureDataset<float> empty;
  empty.num_classes = 300;
  std::ostringstream os;
  io::write_features(os, empty, 1, 1, 2);
  EXPECT_EQ(os.str().size(), io::kFeatureHeaderBytes);
  std::istringstream is(os.str());
  EXPECT_EQ(io::read_features<float>(is, 300).size(), 0u);
  EXPECT_EQ(io::label_width_for(300), 2u);
  EXPECT_THROW(io::write_features(os, empty), ConfigError);

  const auto ds = blob_dataset(2, 2, 1, 1, 2, 1.0, 2);
  std::ostringstream full;
  io::write_features(full, ds);
  std::istringstream extra(full.str() + "x");
  EXPECT_THROW(io::read_features<double>(extra, 2), DataError);
  std::istringstream cut(full.str().substr(0, full.str().size() - 1));
  EXPECT_ANY_THROW(io::read_features<double>(cut, 2));
  std::istringstream wrong_classes(full.str());
  EXPECT_THROW(io::read_features<double>(wrong_classes, 1), DataError);
}

TEST(Extractor, ZeroImageGivesZeroFeatures) {
  io::ImageSet s;
  s.rows = s.cols = 8;
  s.pixels.assign(64, 0.0f);
  s.labels = {0};
  io::RandomPatchExtractor ex{4, 4, 6, 3};
  const auto f = ex.extract<double>(s, 1);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f.tensors[0].rows(), 4u);
  EXPECT_EQ(f.tensors[0].channels(), 6u);
  for (double v : f.tensors[0].data()) EXPECT_EQ(v, 0.0);
}

TEST(Extractor, MatchesDirectProjection) {
  const auto s = tiny_images();
  io::RandomPatchExtractor ex{2, 2, 3, 9};
  const auto f = ex.extract<double>(s, 3);
  const auto p = ex.projection(2, 2);
  for (std::size_t n = 0; n < s.count(); ++n) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0;
          for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t b = 0; b < 2; ++b) acc += p[c * 4 + a * 2 + b] * s.image(n)[(2 * i + a) * 4 + 2 * j + b];
          }
          EXPECT_NEAR(f.tensors[n].at(i, j, c), std::max(acc, 0.0), 1e-12);
        }
      }
    }
  }
  EXPECT_EQ(f.tensors, io::RandomPatchExtractor({2, 2, 3, 9}).extract<double>(s, 3).tensors);
  EXPECT_NE(f.tensors, io::RandomPatchExtractor({2, 2, 3, 10}).extract<double>(s, 3).tensors);
  EXPECT_THROW(io::RandomPatchExtractor({3, 3, 3, 9}).extract<double>(s, 3), ConfigError);
}

TEST(Synthetic, GlyphsAreDeterministicAndZipfIsLongTailed) {
  io::GlyphConfig g;
  g.classes = 4;
  const std::vector<std::size_t> counts{2, 3, 1, 2};
  const auto a = io::make_glyphs(g, counts, 5);
  EXPECT_EQ(a.count(), 8u);
  EXPECT_EQ(a.labels, (std::vector<int>{0, 0, 1, 1, 1, 2, 3, 3}));
  EXPECT_EQ(a.pixels, io::make_glyphs(g, counts, 5).pixels);
  for (float p : a.pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
  auto z = io::zipf_counts(10, 300, 1.0, 20, 3);
  std::sort(z.rbegin(), z.rend());
  EXPECT_EQ(z.front(), 300u);
  EXPECT_EQ(z[1], 150u);
  EXPECT_EQ(z[2], 100u);
  EXPECT_EQ(z.back(), 30u);
  EXPECT_EQ(io::zipf_counts(10, 300, 3.0, 20, 3).size(), 10u);
}

TEST(Config, DefaultsAndOverrides) {
  const auto d = io::load_config("");
  EXPECT_EQ(d.experiment.sleep.augmentation, sleep::Augmentation::mixup_cutmix);
  EXPECT_EQ(d.experiment.sleep.optim.lr, 0.2);
  EXPECT_EQ(d.experiment.sleep.optim.momentum, 0.9);
  EXPECT_EQ(d.experiment.sleep.optim.weight_decay, 1e-5);
  EXPECT_EQ(d.experiment.sleep.optim.layer_decay, 0.99);
  EXPECT_EQ(d.experiment.model.tau, 0.1);
  EXPECT_EQ(d.experiment.plan.remind_rehearsal, 50u);

  const std::vector<std::string> sets{"sleep.updates=6400", "plan.mode=remind", "plan.class_order=3,1,2"};
  const auto c = io::load_config("", sets);
  EXPECT_EQ(c.experiment.sleep.updates, 6400u);
  EXPECT_EQ(c.experiment.plan.mode, experiment::Mode::remind);
  EXPECT_EQ(c.experiment.plan.class_order, (std::vector<int>{3, 1, 2}));
}

TEST(Config, FileSectionsAndErrors) {
  const auto dir = scratch("cfg");
  std::ofstream(dir / "a.cfg") << "# comment\n[sleep]\nupdates = 128  # trailing\nbatch=32\n[plan]\nseed = 9\n";
  const std::vector<std::string> sets{"plan.seed=10"};
  const auto c = io::load_config((dir / "a.cfg").string(), sets);
  EXPECT_EQ(c.experiment.sleep.updates, 128u);
  EXPECT_EQ(c.experiment.sleep.batch, 32u);
  EXPECT_EQ(c.experiment.plan.seed, 10u);

  EXPECT_THROW(io::parse_config_text("sleep.updates = -5\n"), ConfigError);
  try {
    io::parse_config_text("\nsleep.updates = -5\n");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("sleep.updates"), std::string::npos);
  }
  EXPECT_THROW(io::parse_config_text("sleep.nonsense = 1\n"), ConfigError);
  EXPECT_THROW(io::parse_config_text("sleep.batch = 0\n"), ConfigError);
  EXPECT_THROW(io::parse_config_text("sleep.p_cutmix = 0.8\n"), ConfigError);
  EXPECT_THROW(io::parse_config_text("just words\n"), ConfigError);
  EXPECT_THROW(io::load_config((dir / "missing.cfg").string()), IoError);
  std::vector<std::string> bad{"no_equals"};
  EXPECT_THROW(io::load_config("", bad), ConfigError);
}

TEST(Config, EchoRoundTrips) {
  auto c = io::default_run_config();
  c.experiment.sleep.optim.lr = 0.1234567890123;
  c.experiment.plan.class_order = {2, 0, 1};
  c.experiment.sleep.policy = sleep::PolicyKind::max_interference;
  c.data.source = "features";
  c.data.train_features = "a.sfea";
  c.data.eval_features = "b.sfea";
  const auto text = io::echo_config(c);
  EXPECT_EQ(io::parse_config_text(text), c);
  for (const auto& key : io::config_keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
}

TEST(Results, EmitIsIdempotentAndMuIsRecoverable) {
  const auto train = blob_dataset(4, 20, 2, 2, 4, 0.5, 3);
  const auto eval = blob_dataset(4, 5, 2, 2, 4, 0.5, 3);
  auto cfg = io::default_run_config();
  auto& e = cfg.experiment;
  e.plan.base_classes = 2;
  e.plan.sleep_every_classes = 1;
  e.plan.base_epochs = 5;
  e.model.pq = {2, 8, 5, 1};
  e.model.hidden = e.model.embed = 8;
  e.sleep.updates = 32;
  e.sleep.batch = 16;
  const auto m = experiment::run_experiment(e, train, eval);
  const auto dir = scratch("emit");
  io::emit_results(m, cfg, dir);
  std::map<std::string, std::string> first;
  for (const auto& f : fs::directory_iterator(dir)) first[f.path().filename().string()] = slurp(f.path());
  EXPECT_EQ(first.size(), 6u);
  io::emit_results(m, cfg, dir);
  for (const auto& [name, content] : first) EXPECT_EQ(slurp(dir / name), content) << name;

  const auto j = nlohmann::json::parse(first["metrics.json"]);
  std::istringstream curves(first["curves.csv"]);
  std::string line;
  std::getline(curves, line);
  EXPECT_EQ(line, "step,seen_classes,pre_sleep_acc,post_sleep_acc,U,M");
  double sum = 0;
  int rows = 0;
  while (std::getline(curves, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    ASSERT_EQ(cols.size(), 6u);
    if (std::stoi(cols[0]) == 0) continue;
    sum += std::stod(cols[3]);
    ++rows;
  }
  ASSERT_GT(rows, 0);
  EXPECT_NEAR(j["mu"].get<double>(), sum / rows, 1e-9);
  EXPECT_EQ(j["total_updates"].get<std::uint64_t>(), m.total_updates);

  const auto p = io::read_predictions(dir / "predictions.csv");
  EXPECT_EQ(p.truth, eval.labels);
  EXPECT_EQ(p.predictions, m.final_predictions);
  EXPECT_EQ(io::parse_config_text(first["config.txt"]), cfg);
  EXPECT_EQ(nlohmann::json::parse(first["seeds.json"])["ordering"].get<std::uint64_t>(), derive_seed(0, 101));
}

TEST(Results, MuIsNullWithoutStreamSteps) {
  experiment::MetricsRecord m;
  m.mode = "siesta";
  EXPECT_TRUE(io::metrics_json(m)["mu"].is_null());
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(1);
  auto net = nn::Network<double>::default_stack(4, 6, 5, 3, 4);
  CosineHead<double> head(3, 5, 0.07);
  head.online_update(siesta::testing::random_vector(5, rng), 2);
  const auto dir = scratch("ckpt");
  io::save_checkpoint((dir / "a.ckpt").string(), net, head);
  const auto [n2, h2] = io::load_checkpoint<double>((dir / "a.ckpt").string());
  ASSERT_EQ(n2.layers().size(), net.layers().size());
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    EXPECT_EQ(n2.layers()[i].weight, net.layers()[i].weight);
    EXPECT_EQ(n2.layers()[i].bias, net.layers()[i].bias);
    EXPECT_EQ(n2.layers()[i].depth_index, net.layers()[i].depth_index);
  }
  EXPECT_EQ(h2.tau(), head.tau());
  EXPECT_EQ(h2.count(2), 1u);
  EXPECT_TRUE(h2.active(2));
  EXPECT_FALSE(h2.active(0));
  const std::vector<LatentTensor<double>> x{random_tensor(2, 2, 4, rng)};
  EXPECT_EQ(nn::embed(n2, std::span<const LatentTensor<double>>(x)), nn::embed(net, std::span<const LatentTensor<double>>(x)));

  auto raw = slurp(dir / "a.ckpt");
  std::ofstream(dir / "b.ckpt", std::ios::binary) << raw.substr(0, raw.size() / 2);
  EXPECT_ANY_THROW(io::load_checkpoint<double>((dir / "b.ckpt").string()));
}
