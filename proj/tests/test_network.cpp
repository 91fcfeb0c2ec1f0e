#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradient_cases.hpp"
#include "mdl/network.hpp"
#include "mdl/phantom.hpp"

using namespace mdl;
using namespace mdl::testing;

namespace {

NetworkConfig small_config(std::uint64_t seed = 1) {
  NetworkConfig c;
  c.base_filters = 8;
  c.seed = seed;
  return c;
}

Tensor standardized_random(std::uint64_t seed, std::size_t d, std::size_t h, std::size_t w) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d * h * w);
  for (auto& x : v) x = n(rng);
  return Tensor::from_data({1, 1, d, h, w}, v);
}

void zero_tensor(Tensor t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

}  // namespace

TEST_CASE("initialization is deterministic in the seed") {
  const Model a = build_model(small_config(4));
  const Model b = build_model(small_config(4));
  const Model c = build_model(small_config(5));
  bool any_diff = false;
  for (std::size_t i = 0; i < a.named_tensors().size(); ++i) {
    const auto x = a.named_tensors()[i].tensor.data();
    const auto y = b.named_tensors()[i].tensor.data();
    const auto z = c.named_tensors()[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
    if (!std::equal(x.begin(), x.end(), z.begin())) any_diff = true;
    for (double v : x) CHECK(std::isfinite(v));
  }
  CHECK(any_diff);
}

TEST_CASE("parameter count scales with filter rate") {
  std::size_t prev = 0;
  for (double rate : {0.125, 0.25, 0.5, 0.75, 1.0}) {
    NetworkConfig c;
    c.filter_rate = rate;
    const std::size_t n = count_parameters(c);
    CHECK(n > prev);
    prev = n;
    CHECK(build_model(c).parameter_count() == n);
  }
  NetworkConfig half, full;
  half.filter_rate = 0.5;
  const double ratio = double(count_parameters(half)) / double(count_parameters(full));
  CHECK(ratio >= 0.22);
  CHECK(ratio <= 0.30);
}

TEST_CASE("a lone dense 1->1 3x3x3 conv without bias has 27 weights") {
  CHECK(shape_numel(ConvSpec::same(1, 1).weight_shape()) == 27);
}

TEST_CASE("widths that round to zero are rejected") {
  NetworkConfig c;
  c.filter_rate = 0.01;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("encoder, ASPP and output shapes") {
  const Model m = build_model(small_config());
  const Tensor x = standardized_random(1, 32, 32, 32);
  const auto enc = m.encode(x, Mode::eval);
  CHECK(enc.deep.shape() == Shape{1, m.config().encoder_channels()[3], 2, 2, 2});
  CHECK(enc.skips[0].dim(2) == 4);
  CHECK(enc.skips[1].dim(2) == 8);
  CHECK(enc.skips[2].dim(2) == 16);
  const Tensor a = m.aspp(enc.deep, Mode::eval);
  CHECK(a.dim(2) == 2);
  CHECK(m.aspp_module().dilated.size() + 2 == 5);

  const auto out = m.forward(x, Mode::eval);
  CHECK(out.main_probs.shape() == Shape{1, 3, 32, 32, 32});
  REQUIRE(out.aux_probs.size() == 2);
  CHECK(out.aux_probs[0].shape() == Shape{1, 3, 4, 4, 4});
  CHECK(out.aux_probs[1].shape() == Shape{1, 3, 8, 8, 8});
  for (const auto* probs : {&out.main_probs, &out.aux_probs[0], &out.aux_probs[1]}) {
    const std::size_t v = probs->numel() / 3;
    for (std::size_t i = 0; i < v; ++i) {
      const double s = probs->data()[i] + probs->data()[v + i] + probs->data()[2 * v + i];
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  for (const auto& map : out.attention_maps)
    for (double v : map.data()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("non-divisible extents report the padding needed") {
  const Model m = build_model(small_config());
  try {
    m.forward(standardized_random(1, 20, 32, 32), Mode::eval);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("12") != std::string::npos);
  }
}

TEST_CASE("ASPP with all weights zero outputs zero") {
  Model m = build_model(small_config());
  for (const auto& nt : m.named_tensors()) {
    if (nt.name.rfind("aspp.", 0) == 0 && nt.name.find("running") == std::string::npos &&
        nt.name.find("gamma") == std::string::npos) {
      zero_tensor(nt.tensor);
    }
  }
  const auto enc = m.encode(standardized_random(2, 32, 32, 32), Mode::eval);
  const Tensor out = m.aspp(enc.deep, Mode::eval);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("attention with a zero conv gives a flat 0.5 map") {
  Model m = build_model(small_config());
  const auto& att = m.decoder()[0].attention;
  zero_tensor(att.conv.dw_weight);
  zero_tensor(att.conv.pw_weight);
  zero_tensor(att.conv.pw_bias);
  std::mt19937_64 rng(3);
  const std::size_t c = m.config().decoder_channels()[0];
  const Tensor f = random_tensor(rng, {1, c, 4, 4, 4}, -1, 1, false);
  const auto out = m.attention(0, f, true);
  for (double v : out.map.data()) CHECK(v == 0.5);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(out.attended.data()[i] == 0.5 * f.data()[i]);
  REQUIRE(out.aux_logits.has_value());
  CHECK(out.aux_logits->shape() == Shape{1, 3, 4, 4, 4});
}

TEST_CASE("argmax breaks ties toward the lower class") {
  const VolumeGrid like = VolumeGrid::filled({1, 1, 2}, {});
  const Tensor p = Tensor::from_data({1, 3, 1, 1, 2}, {0.2, 1.0 / 3, 0.5, 1.0 / 3, 0.3, 1.0 / 3});
  const LabelVolume l = argmax_labels(p, like);
  CHECK(l.labels[0] == 1);
  CHECK(l.labels[1] == 0);
}

TEST_CASE("ensemble vote majority and disagreement fallback") {
  const VolumeGrid like = VolumeGrid::filled({1, 1, 1}, {});
  auto probs = [](double a, double b, double c) { return Tensor::from_data({1, 3, 1, 1, 1}, {a, b, c}); };
  // votes 1, 1, 2
  CHECK(ensemble_vote({probs(0.1, 0.8, 0.1), probs(0.2, 0.5, 0.3), probs(0.1, 0.2, 0.7)}, like).labels[0] == 1);
  // votes 0, 1, 2; mean softmax (0.2, 0.3, 0.5) favours class 2
  CHECK(ensemble_vote({probs(0.4, 0.3, 0.3), probs(0.1, 0.5, 0.4), probs(0.1, 0.1, 0.8)}, like).labels[0] == 2);
  CHECK_THROWS(ensemble_vote({probs(1, 0, 0)}, like));
}

TEST_CASE("ensemble of identical models equals the single model and ignores order") {
  PhantomParams pp;
  pp.extents = {32, 32, 32};
  pp.lesion_radius_min = 1.5;
  pp.lesion_radius_max = 3.0;
  const Phantom ph = generate_phantom(pp);
  const Model a = build_model(small_config(1));
  const Model b = a.clone();
  const Model c = a.clone();
  const LabelVolume single = segment(a, ph.volume);
  CHECK(ensemble_predict({&a, &b, &c}, ph.volume).labels == single.labels);

  const Model d = build_model(small_config(2));
  const Model e = build_model(small_config(3));
  const auto ref = ensemble_predict({&a, &d, &e}, ph.volume).labels;
  CHECK(ensemble_predict({&e, &a, &d}, ph.volume).labels == ref);
  CHECK(ensemble_predict({&d, &e, &a}, ph.volume).labels == ref);
}

TEST_CASE("segmentation is invariant to positive intensity scaling") {
  PhantomParams pp;
  pp.extents = {32, 32, 32};
  pp.lesion_radius_min = 1.5;
  pp.lesion_radius_max = 3.0;
  const Phantom ph = generate_phantom(pp);
  VolumeGrid scaled = ph.volume;
  for (auto& v : scaled.values) v *= 7.25;
  const Model m = build_model(small_config());
  const auto a = predict_probs(m, ph.volume);
  const auto b = predict_probs(m, scaled);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-9));
}

TEST_CASE("forward is deterministic and eval mode leaves statistics untouched") {
  const Model m = build_model(small_config());
  const Tensor x = standardized_random(9, 16, 16, 16);
  const auto p1 = m.forward(x, Mode::eval).main_probs;
  const auto p2 = m.forward(x, Mode::eval).main_probs;
  CHECK(std::equal(p1.data().begin(), p1.data().end(), p2.data().begin()));
}

TEST_CASE("checkpoint roundtrip is exact and corrupt files are rejected") {
  const auto dir = std::filesystem::temp_directory_path() / "mdl_ckpt_test";
  std::filesystem::create_directories(dir);
  const Model m = build_model(small_config(6));
  save_checkpoint(m, dir / "m.ckpt");
  const Model r = load_checkpoint(dir / "m.ckpt");
  CHECK(config_to_json(r.config()) == config_to_json(m.config()));
  for (std::size_t i = 0; i < m.named_tensors().size(); ++i) {
    const auto x = m.named_tensors()[i].tensor.data();
    const auto y = r.named_tensors()[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  const auto size = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::resize_file(dir / "m.ckpt", size - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
  std::filesystem::remove_all(dir);
}
