#include <random>

#include "cnnscale/errors.hpp"
#include "cnnscale/model.hpp"
#include "cnnscale/verify.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cnnscale;

namespace {

// Count kernel placements along one axis by walking every start offset.
std::int64_t placements(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  std::int64_t n = 0;
  for (std::int64_t start = -pad; start + k <= in + pad; start += stride) ++n;
  return n;
}

LayerDescriptor conv2d(std::int64_t c, std::int64_t f, std::int64_t x, std::int64_t k, std::int64_t s,
                       std::int64_t p) {
  LayerDescriptor l;
  l.name = "c";
  l.kind = LayerKind::Conv;
  l.in_channels = c;
  l.out_channels = f;
  l.input_shape.dims = {x, x};
  l.kernel.dims = {k, k};
  l.stride = {s, s};
  l.padding = {p, p};
  return l;
}

}  // namespace

TEST_CASE("output shape follows convolution arithmetic") {
  CHECK(infer_output_shape(conv2d(3, 64, 224, 7, 2, 3)).dims == std::vector<std::int64_t>{112, 112});
  CHECK(placements(224, 7, 2, 3) == 112);
  CHECK(infer_output_shape(conv2d(3, 64, 226, 1, 1, 0)).dims == std::vector<std::int64_t>{226, 226});

  for (std::int64_t in = 1; in <= 40; ++in)
    for (std::int64_t k = 1; k <= 7; ++k)
      for (std::int64_t s = 1; s <= 3; ++s)
        for (std::int64_t p = 0; p <= 3; ++p) {
          if (k > in + 2 * p) continue;
          CHECK(infer_output_shape(conv2d(1, 1, in, k, s, p)).dims[0] == placements(in, k, s, p));
        }

  LayerDescriptor fc;
  fc.kind = LayerKind::FullyConnected;
  fc.in_channels = 512;
  fc.out_channels = 1000;
  fc.input_shape.dims = {7, 7};
  CHECK(infer_output_shape(fc).dims == std::vector<std::int64_t>{1, 1});
}

TEST_CASE("a kernel larger than the padded input has no valid output") {
  auto l = conv2d(1, 1, 4, 7, 1, 1);
  CHECK_THROWS_AS(infer_output_shape(l), NonPositiveOutput);
}

TEST_CASE("adaption rewrites non-convolution layers") {
  LayerDescriptor fc;
  fc.name = "fc";
  fc.kind = LayerKind::FullyConnected;
  fc.in_channels = 512;
  fc.out_channels = 1000;
  fc.input_shape.dims = {7, 7};
  fc.stride = {1, 1};
  fc.padding = {0, 0};
  const auto a = adapt_layer(fc);
  CHECK(a.kind == LayerKind::Conv);
  CHECK(a.kernel.dims == std::vector<std::int64_t>{7, 7});
  CHECK(layer_counts(fc).w_elems == 512LL * 1000 * 49);

  LayerDescriptor relu;
  relu.kind = LayerKind::ElementWise;
  relu.in_channels = 64;
  relu.out_channels = 64;
  relu.input_shape.dims = {8, 8};
  CHECK(adapt_layer(relu).out_channels == 64);
  CHECK(layer_counts(relu).w_elems == 0);

  LayerDescriptor pool = conv2d(64, 64, 8, 2, 2, 0);
  pool.kind = LayerKind::Pool;
  pool.has_bias = true;
  CHECK(layer_counts(pool).w_elems == 0);
  CHECK(layer_counts(pool).bias_elems == 0);
}

TEST_CASE("weight and bias counts") {
  auto c = conv2d(3, 64, 32, 3, 1, 1);
  c.has_bias = true;
  std::int64_t w = 0;
  for (int ci = 0; ci < 3; ++ci)
    for (int f = 0; f < 64; ++f)
      for (int kx = 0; kx < 3; ++kx)
        for (int ky = 0; ky < 3; ++ky) ++w;
  const auto counts = layer_counts(c);
  CHECK(counts.w_elems == w);
  CHECK(counts.w_elems == 1728);
  CHECK(counts.bias_elems == 64);
  CHECK(counts.x_elems == 3 * 32 * 32);
  CHECK(counts.y_elems == 64 * 32 * 32);
}

TEST_CASE("parsing a minimal file") {
  const auto m = parse_model("dataset D=100 B=10 E=2\nconv1 conv C=3 F=8 X=16,16 K=3 stride=1 pad=1 bias=1\n");
  CHECK(m.layers.size() == 1);
  CHECK(m.depth() == 1);
  CHECK(m.dataset_size == 100);
  CHECK(m.batch_size == 10);
  CHECK(m.epochs == 2);
  CHECK(m.iterations() == 10.0);
  CHECK(m.layers[0].has_bias);
}

TEST_CASE("B larger than D is a validation error") {
  CHECK_THROWS_AS(parse_model("dataset D=4 B=8 E=1\nc conv C=1 F=1 X=4 K=1\n"), ValidationError);
}

TEST_CASE("parse errors carry line and field") {
  try {
    parse_model("dataset D=4 B=2 E=1\n# comment\nc conv C=1 F=1 X=4 K=1 colour=red\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.field() == "colour");
  }
  try {
    parse_model("dataset D=4 B=2 E=1\nc conv C=x F=1 X=4 K=1\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.field() == "C");
  }
  CHECK_THROWS_AS(parse_model("c conv C=1 F=1 X=4 K=1\n"), ParseError);
  CHECK_THROWS_AS(parse_model("dataset D=4 B=2 E=1\nc blob C=1 F=1 X=4\n"), ParseError);
}

TEST_CASE("shapes must chain") {
  CHECK_THROWS_AS(parse_model("dataset D=4 B=2 E=1\n"
                              "a conv C=1 F=2 X=4 K=1\n"
                              "b conv C=1 F=2 X=4 K=1\n"),
                  ValidationError);
}

TEST_CASE("serialization round-trips") {
  for (const char* name : {"resnet50.model", "vgg16.model", "cosmoflow.model"}) {
    const auto m = load_model_file(testutil::data_path(name));
    const auto text = serialize_model(m);
    const auto again = parse_model(text);
    CHECK(again == m);
    CHECK(serialize_model(again) == text);
  }
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto inst = verify::random_instance(rng);
    CHECK(parse_model(serialize_model(inst.model)) == inst.model);
  }
}

TEST_CASE("bundled models have the documented depth") {
  CHECK(load_model_file(testutil::data_path("resnet50.model")).depth() == 50);
  const auto vgg = load_model_file(testutil::data_path("vgg16.model"));
  CHECK(vgg.layers.size() == 38);
  CHECK(vgg.depth() == 16);
}

TEST_CASE("adaption is idempotent and leaves counts unchanged") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 40; ++i) {
    const auto inst = verify::random_instance(rng);
    for (const auto& l : inst.model.layers) {
      const auto once = adapt_layer(l);
      CHECK(adapt_layer(once) == once);
      CHECK(layer_counts(once) == layer_counts(l));
    }
  }
}

TEST_CASE("main-path element counts chain") {
  for (const char* name : {"resnet50.model", "vgg16.model", "cosmoflow.model"}) {
    const auto m = load_model_file(testutil::data_path(name));
    const auto counts = layer_counts(m);
    std::optional<std::size_t> prev;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      if (m.layers[i].is_branch()) continue;
      if (prev) CHECK(counts[i].x_elems == counts[*prev].y_elems);
      prev = i;
    }
  }
}

TEST_CASE("partition units start at weighted main-path layers") {
  const auto m = parse_model(
      "dataset D=8 B=2 E=1\n"
      "a conv C=1 F=2 X=8 K=3 pad=1\n"
      "r eltwise C=2 X=8\n"
      "p pool C=2 X=8 K=2 stride=2\n"
      "b conv C=2 F=2 X=4 K=1\n"
      "s conv C=2 F=2 X=8 K=1 in=r stride=2\n"
      "f fc C=2 F=3 X=4 bias=1\n");
  const auto units = partition_units(m);
  REQUIRE(units.size() == 3);
  CHECK(units[0] == LayerRange{0, 2});
  CHECK(units[1] == LayerRange{3, 4});
  CHECK(units[2] == LayerRange{5, 5});
  CHECK(m.depth() == 3);
}
