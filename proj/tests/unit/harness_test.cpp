#include "dsinit/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dsinit/model_io.hpp"
#include "test_util.hpp"

namespace dsinit::harness {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig parse(const std::string& text, const fs::path& base = {}) {
  std::istringstream in(text);
  return parse_config(in, base);
}

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.layers = "conv:3:5, relu, maxpool, flatten, dense:2";
  c.data.kind = DatasetKind::synthetic;
  c.data.synthetic_per_class = 50;
  c.data.train_fraction = 0.8;
  c.init.scheme = init::Scheme::datastats;
  c.init.subsample_size = 40;
  c.init.crops_per_image = 4;
  c.epochs = 1;
  c.lr = 0.05;
  c.batch_size = 16;
  c.seed = 5;
  c.out_dir = out;
  return c;
}

// --- config ---------------------------------------------------------------------

TEST(Config, ParsesKeysAndComments) {
  const RunConfig c = parse(
      "# comment\nlayers = conv:2:3, relu, flatten, dense:2\n"
      "dataset = mnist  # trailing\nmnist_images = img\nmnist_labels = /abs/lbl\n"
      "init = glorot\nepochs = 3\nlr = 0.5\nseed = 9\ncenter_data = true\n",
      "/base");
  EXPECT_EQ(c.layers, "conv:2:3, relu, flatten, dense:2");
  EXPECT_EQ(c.data.kind, DatasetKind::mnist);
  EXPECT_EQ(c.data.mnist_images, fs::path("/base/img"));
  EXPECT_EQ(c.data.mnist_labels, fs::path("/abs/lbl"));
  EXPECT_EQ(c.init.scheme, init::Scheme::xavier);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.lr, 0.5);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_TRUE(c.data.center);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse("layers = dense:2\nlearning_rate = 0.1\n"), ConfigError);
  EXPECT_THROW(parse("layers = dense:2\nlr = 0.1\nlr = 0.2\n"), ConfigError);
  EXPECT_THROW(parse("layers = dense:2\nlr = fast\n"), ConfigError);
  EXPECT_THROW(parse("layers = dense:2\nepochs = -1\n"), ConfigError);
  EXPECT_THROW(parse("layers dense:2\n"), ConfigError);
  EXPECT_THROW(parse("layers = dense:2\ninit = magic\n"), ConfigError);
}

TEST(Config, WriteParseRoundTrip) {
  RunConfig c = tiny_run("/tmp/somewhere");
  c.data.center = true;
  c.init.pca_center = true;
  c.lr = 0.1;  // not exactly representable
  const std::string text = write_config(c);
  EXPECT_EQ(write_config(parse(text)), text);
  EXPECT_EQ(parse(text).lr, 0.1);
}

TEST(Config, BundledConfigsLoad) {
  for (const char* name : {"mnist.conf", "cifar10.conf", "synthetic.conf"}) {
    const RunConfig c = load_config(fs::path(DSINIT_SOURCE_DIR) / "configs" / name);
    EXPECT_NO_THROW(c.validate()) << name;
  }
}

TEST(Architecture, ParsesTokens) {
  const auto spec = parse_architecture("conv:8:3, relu, maxpool, flatten, dense:64, relu, dense:10", {1, 28, 28}, 10);
  ASSERT_EQ(spec.layers().size(), 7u);
  EXPECT_EQ(spec.layers()[4].fan_in, 8u * 13 * 13);
  EXPECT_THROW(parse_architecture("conv:8, flatten, dense:10", {1, 28, 28}, 10), ConfigError);
  EXPECT_THROW(parse_architecture("softmax, flatten, dense:10", {1, 28, 28}, 10), ConfigError);
  EXPECT_THROW(parse_architecture("conv:8:3, maxpool, flatten, dense:10", {1, 27, 27}, 10), InvalidArgument);
}

// --- metrics CSV ------------------------------------------------------------------------

TEST(MetricsCsv, HeaderAndRoundTrippableValues) {
  RunMetrics m;
  m.rows.push_back({1, 0.1, 2.0 / 3.0, 0.5});
  const std::string csv = format_metrics_csv(m);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
  const std::string row = csv.substr(csv.find('\n') + 1);
  EXPECT_EQ(row, "1,0.10000000000000001,0.66666666666666663,0.5\n");
  EXPECT_EQ(std::stod("0.66666666666666663"), 2.0 / 3.0);
  EXPECT_EQ(std::stod(format_double(1e-300)), 1e-300);
  EXPECT_EQ(std::stod(format_double(0.1 + 0.2)), 0.1 + 0.2);
}

// --- pipeline ---------------------------------------------------------------------------

TEST(Experiment, OneEpochWritesArtifactsAndReplays) {
  const fs::path root = fs::temp_directory_path() / "dsinit_harness_run";
  fs::remove_all(root);
  const RunResult a = run_experiment(tiny_run(root / "a"));
  const RunResult b = run_experiment(tiny_run(root / "b"));
  ASSERT_EQ(a.metrics.rows.size(), 1u);
  const std::string csv = slurp(root / "a" / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv, slurp(root / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(root / "a" / "model.dsin"), slurp(root / "b" / "model.dsin"));
  EXPECT_TRUE(fs::exists(root / "a" / "plot.svg"));
  EXPECT_EQ(nn::load_model(root / "a" / "model.dsin"), a.network);
  const RunConfig reread = load_config(root / "a" / "run.conf");
  EXPECT_EQ(write_config(reread), write_config(tiny_run(root / "a")));
  fs::remove_all(root);
}

TEST(Experiment, NonFiniteLossAbortsWithPartialMetrics) {
  const fs::path root = fs::temp_directory_path() / "dsinit_harness_nan";
  fs::remove_all(root);
  RunConfig c = tiny_run(root);
  c.lr = 1e308;
  c.batch_size = 4;
  c.epochs = 3;
  EXPECT_THROW(run_experiment(c), NumericalFailure);
  const std::string csv = slurp(root / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
  fs::remove_all(root);
}

TEST(Compare, SharedSplitAndBatchOrder) {
  const fs::path root = fs::temp_directory_path() / "dsinit_harness_compare";
  fs::remove_all(root);
  RunConfig c = tiny_run(root);
  c.epochs = 2;
  const auto outcomes = compare_initializers(c, {init::Scheme::he, init::Scheme::datastats});
  ASSERT_EQ(outcomes.size(), 2u);
  ASSERT_TRUE(outcomes[0].result && outcomes[1].result);
  EXPECT_EQ(outcomes[0].result->val_index_hash, outcomes[1].result->val_index_hash);
  EXPECT_EQ(outcomes[0].result->batch_hashes, outcomes[1].result->batch_hashes);
  EXPECT_EQ(outcomes[0].result->batch_hashes.size(), 2u);
  EXPECT_TRUE(fs::exists(root / "he" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(root / "datastats" / "metrics.csv"));
  const std::string svg = slurp(root / "compare.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("datastats"), std::string::npos);
  EXPECT_THROW(compare_initializers(c, {init::Scheme::he}), InvalidArgument);
  fs::remove_all(root);
}

TEST(Prepare, StreamsAreIndependentOfScheme) {
  RunConfig c = tiny_run("/tmp/unused");
  const PreparedData a = prepare_data(c);
  c.init.scheme = init::Scheme::he;
  const PreparedData b = prepare_data(c);
  EXPECT_EQ(a.split.val_indices, b.split.val_indices);
  EXPECT_NE(stream_seed(c, Stream::split), stream_seed(c, Stream::init));
  EXPECT_EQ(a.split.train.size(), 80u);
}

// --- saliency & filters -----------------------------------------------------------------

TEST(Saliency, ZeroNetworkGivesZeroMap) {
  nn::Network net(nn::NetworkSpec({nn::LayerSpec::conv2d(2, 3), nn::LayerSpec::relu(), nn::LayerSpec::flatten(),
                                   nn::LayerSpec::dense(2)},
                                  {1, 5, 5}, 2));
  Rng rng(1);
  const Tensor map = saliency_map(net, testing::random_tensor({1, 5, 5}, rng));
  EXPECT_EQ(map.shape(), (Shape{5, 5}));
  for (double v : map.data()) EXPECT_EQ(v, 0.0);
}

TEST(Saliency, LinearModelIsScaledWeightRow) {
  nn::Network net(nn::NetworkSpec({nn::LayerSpec::flatten(), nn::LayerSpec::dense(2)}, {2, 2, 2}, 2));
  Rng rng(2);
  for (double& v : net.params(1).weight.data()) v = rng.normal();
  const Tensor img = testing::random_tensor({2, 2, 2}, rng);
  const Tensor logits = nn::forward(net, img);
  const std::size_t p = nn::argmax(logits.data());
  std::vector<double> expected(4);
  for (std::size_t i = 0; i < 4; ++i) {
    expected[i] = std::max(std::abs(net.params(1).weight[p * 8 + i]), std::abs(net.params(1).weight[p * 8 + 4 + i]));
  }
  const double lo = *std::min_element(expected.begin(), expected.end());
  const double hi = *std::max_element(expected.begin(), expected.end());
  const Tensor map = saliency_map(net, img);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(map[i], (expected[i] - lo) / (hi - lo), 1e-12);
}

TEST(Filters, CsvRows) {
  nn::Network net(nn::NetworkSpec({nn::LayerSpec::conv2d(3, 2), nn::LayerSpec::flatten(), nn::LayerSpec::dense(2)},
                                  {1, 4, 4}, 2));
  net.params(0).weight[0] = 0.25;
  const fs::path path = fs::temp_directory_path() / "dsinit_filters.csv";
  write_filter_csv(net, 1, path);
  const std::string csv = slurp(path);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "0.25,0,0,0");
  EXPECT_THROW(write_filter_csv(net, 3, path), InvalidArgument);
  fs::remove(path);
}

TEST(Svg, RendersSeries) {
  Chart chart{"loss", "epoch", "value", {{"train", {1, 2, 3}, {1.0, 0.5, 0.25}}}};
  const std::string svg = render_svg({chart});
  EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.find("<svg") != std::string::npos, true);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find("train"), std::string::npos);
}

}  // namespace
}  // namespace dsinit::harness
