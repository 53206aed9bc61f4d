#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <fstream>
#include <random>
#include <set>

#include "layoutmuse/networks.hpp"

using namespace layoutmuse;
using namespace layoutmuse::nets;
namespace fs = std::filesystem;

namespace {

ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  ad::Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(d(rng));
  return t;
}

// Items of `t` along axis 0 in the given order.
ad::Tensor permute_items(const ad::Tensor& t, const std::vector<int>& perm) {
  ad::Tensor out(t.shape());
  const std::size_t item = t.size() / static_cast<std::size_t>(t.dim(0));
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(t.ptr() + static_cast<std::size_t>(perm[i]) * item, item, out.ptr() + i * item);
  return out;
}

Networks make_nets(std::uint64_t seed = 3) {
  Networks n;
  n.init(seed);
  return n;
}

ad::Tensor generate(Networks& n, const ad::Tensor& f, const ad::Tensor& z, const std::vector<int>& counts, bool training) {
  ad::Tape tape;
  const ad::Var e = n.encoder.forward(tape, tape.input(f), Bind::Frozen);
  return n.generator.forward(tape, e, tape.input(z), counts, Bind::Frozen, training).value();
}

}  // namespace

TEST_CASE("encoder shapes, zero weights and determinism") {
  Networks n = make_nets();
  std::mt19937_64 rng(1);
  const ad::Tensor f = random_tensor({4, 512}, rng);
  ad::Tape tape;
  const ad::Var out = n.encoder.forward(tape, tape.input(f), Bind::Frozen);
  CHECK(out.shape() == ad::Shape{4, 128});
  ad::Tape again;
  CHECK(n.encoder.forward(again, again.input(f), Bind::Frozen).value() == out.value());

  for (ad::Parameter& p : n.encoder.params.all()) std::fill(p.value.data().begin(), p.value.data().end(), 0.0f);
  ad::Tape zero;
  for (float v : n.encoder.forward(zero, zero.input(f), Bind::Frozen).value().data()) CHECK(v == 0.0f);

  ad::Tape bad;
  CHECK_THROWS_AS(n.encoder.forward(bad, bad.input(ad::Tensor({4, 511})), Bind::Frozen), ShapeMismatch);
}

TEST_CASE("generator output contract") {
  Networks n = make_nets();
  std::mt19937_64 rng(2);
  const ad::Tensor f = random_tensor({3, 512}, rng);
  const ad::Tensor z = random_tensor({3, 128}, rng);
  const std::vector<int> counts = {1, 7, 13};

  const ad::Tensor train_out = generate(n, f, z, counts, true);
  CHECK(train_out.shape() == ad::Shape{3, 1, 32, 32});
  for (float v : train_out.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const ad::Tensor a = generate(n, f, z, counts, false);
  const ad::Tensor b = generate(n, f, z, counts, false);
  CHECK(a == b);

  // Different noise, same features: grids differ.
  std::vector<ad::Tensor> outs;
  for (int s = 0; s < 10; ++s) outs.push_back(generate(n, f, random_tensor({3, 128}, rng), counts, false));
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) CHECK_FALSE(outs[static_cast<std::size_t>(i)] == outs[static_cast<std::size_t>(j)]);

  CHECK_THROWS_AS(generate(n, f, z, {0, 1, 2}, false), AnchorOutOfRange);
  CHECK_THROWS_AS(generate(n, f, z, {1, 2, 14}, false), AnchorOutOfRange);
}

TEST_CASE("generator range holds for extreme inputs") {
  Networks n = make_nets();
  const ad::Tensor f({2, 512}, 50.0f), z({2, 128}, -50.0f);
  for (float v : generate(n, f, z, {2, 3}, false).data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("wireframe critic") {
  Networks n = make_nets();
  std::mt19937_64 rng(4);
  const ad::Tensor g = random_tensor({8, 1, 32, 32}, rng, 0, 1);
  ad::Tape tape;
  const ad::Var s = n.wireframe_critic.forward(tape, tape.input(g), Bind::Frozen);
  CHECK(s.shape() == ad::Shape{8});

  for (ad::Parameter& p : n.wireframe_critic.params.all()) std::fill(p.value.data().begin(), p.value.data().end(), 0.01f);
  ad::Tensor same({2, 1, 32, 32}, 0.3f);
  ad::Tape t2;
  const ad::Tensor scores = n.wireframe_critic.forward(t2, t2.input(same), Bind::Frozen).value();
  CHECK(scores[0] == scores[1]);

  Networks m = make_nets();
  for (float fill : {0.0f, 1.0f}) {
    ad::Tape t3;
    for (float v : m.wireframe_critic.forward(t3, t3.input(ad::Tensor({2, 1, 32, 32}, fill)), Bind::Frozen).value().data())
      CHECK(std::isfinite(v));
  }
  ad::Tape t4;
  CHECK_THROWS_AS(m.wireframe_critic.forward(t4, t4.input(ad::Tensor({2, 1, 16, 16})), Bind::Frozen), ShapeMismatch);
}

TEST_CASE("image critic shapes and pyramid track") {
  Networks n = make_nets();
  CHECK(n.image_critic.stage_sides() == std::vector<int>{64, 32, 16});
  std::mt19937_64 rng(5);
  ad::Tape tape;
  const ad::Var s = n.image_critic.forward(tape, tape.input(random_tensor({2, 3, 128, 128}, rng, 0, 1)), Bind::Frozen);
  CHECK(s.shape() == ad::Shape{2});

  // Zero the learned convolutions: the score still depends on the image
  // through the fixed pyramid concatenated into the head.
  for (int i = 1; i <= 3; ++i) {
    ad::Parameter& w = n.image_critic.params.get("conv" + std::to_string(i) + ".weight");
    std::fill(w.value.data().begin(), w.value.data().end(), 0.0f);
  }
  ad::Tape t2;
  const ad::Var img = t2.input(random_tensor({1, 3, 128, 128}, rng, 0, 1));
  const ad::Var score = ad::sum(n.image_critic.forward(t2, img, Bind::Frozen));
  t2.backward(score);
  double norm = 0;
  for (float v : t2.grad(img).data()) norm += static_cast<double>(v) * v;
  CHECK(norm > 0.0);
}

TEST_CASE("discriminators contain no normalization") {
  Networks n = make_nets();
  for (const ParamStore* p : {&n.wireframe_critic.params, &n.image_critic.params})
    for (const ad::Parameter& param : p->all()) {
      CHECK(param.name.find("bn") == std::string::npos);
      CHECK(param.name.find(".scale") == std::string::npos);
    }
  std::mt19937_64 rng(6);
  ad::Tape tape;
  n.wireframe_critic.forward(tape, tape.input(random_tensor({2, 1, 32, 32}, rng)), Bind::Trainable);
  n.image_critic.forward(tape, tape.input(random_tensor({2, 3, 128, 128}, rng)), Bind::Trainable);
  for (int i = 0; i < static_cast<int>(tape.size()); ++i) CHECK(tape.op_name(i) != "batchnorm");
}

TEST_CASE("property: forwards are batch-equivariant") {
  Networks n = make_nets();
  std::mt19937_64 rng(7);
  const std::vector<int> perm = {2, 0, 3, 1};
  const ad::Tensor f = random_tensor({4, 512}, rng), z = random_tensor({4, 128}, rng);
  const std::vector<int> counts = {3, 5, 1, 9};
  std::vector<int> pcounts;
  for (int p : perm) pcounts.push_back(counts[static_cast<std::size_t>(p)]);

  {
    ad::Tape a, b;
    const ad::Tensor ea = n.encoder.forward(a, a.input(f), Bind::Frozen).value();
    const ad::Tensor eb = n.encoder.forward(b, b.input(permute_items(f, perm)), Bind::Frozen).value();
    CHECK(permute_items(ea, perm) == eb);
  }
  for (bool training : {false, true}) {
    const ad::Tensor ga = generate(n, f, z, counts, training);
    const ad::Tensor gb = generate(n, permute_items(f, perm), permute_items(z, perm), pcounts, training);
    const ad::Tensor pa = permute_items(ga, perm);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - gb[i]) <= 1e-6f);
  }
  {
    const ad::Tensor g = random_tensor({4, 1, 32, 32}, rng, 0, 1);
    ad::Tape a, b;
    const ad::Tensor sa = n.wireframe_critic.forward(a, a.input(g), Bind::Frozen).value();
    const ad::Tensor sb = n.wireframe_critic.forward(b, b.input(permute_items(g, perm)), Bind::Frozen).value();
    CHECK(permute_items(sa, perm) == sb);
  }
  {
    const ad::Tensor img = random_tensor({4, 3, 128, 128}, rng, 0, 1);
    ad::Tape a, b;
    const ad::Tensor sa = n.image_critic.forward(a, a.input(img), Bind::Frozen).value();
    const ad::Tensor sb = n.image_critic.forward(b, b.input(permute_items(img, perm)), Bind::Frozen).value();
    CHECK(permute_items(sa, perm) == sb);
  }
}

TEST_CASE("init_weights statistics") {
  Networks a = make_nets(11), b = make_nets(11), c = make_nets(12);
  CHECK(a.generator.params.get("fc2.weight").value == b.generator.params.get("fc2.weight").value);
  CHECK_FALSE(a.generator.params.get("fc2.weight").value == c.generator.params.get("fc2.weight").value);
  const auto& w = a.generator.params.get("fc2.weight").value.data();
  const std::size_t n = 10000;
  const double mean = std::accumulate(w.begin(), w.begin() + n, 0.0) / n;
  CHECK(std::abs(mean) <= 3 * 0.02 / std::sqrt(static_cast<double>(n)));
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) var += (w[i] - mean) * (w[i] - mean);
  CHECK(std::sqrt(var / n) == doctest::Approx(0.02).epsilon(0.05));
  for (const ParamStore* p : {&a.encoder.params, &a.generator.params, &a.wireframe_critic.params, &a.image_critic.params})
    for (const ad::Parameter& param : p->all())
      if (param.name.ends_with(".bias"))
        for (float v : param.value.data()) CHECK(v == 0.0f);
}

TEST_CASE("config hash tracks every dimension") {
  const NetworkConfig base;
  std::set<std::string> hashes = {base.hash()};
  NetworkConfig c = base;
  c.noise_dim = 64;
  hashes.insert(c.hash());
  c = base;
  c.upsample_channels[1] = 16;
  hashes.insert(c.hash());
  c = base;
  c.image_channels[0] = 16;
  hashes.insert(c.hash());
  c = base;
  c.wireframe_hidden = 128;
  hashes.insert(c.hash());
  CHECK(hashes.size() == 5);
  CHECK(NetworkConfig::from_json(base.to_json()).hash() == base.hash());
}

TEST_CASE("generator checkpoint round trip is bitwise and small") {
  Networks n = make_nets(21);
  std::mt19937_64 rng(9);
  const ad::Tensor f = random_tensor({2, 512}, rng), z = random_tensor({2, 128}, rng);
  generate(n, f, z, {3, 4}, true);  // move the running statistics off their defaults
  const ad::Tensor before = generate(n, f, z, {3, 4}, false);

  const fs::path dir = fs::temp_directory_path() / "lm_networks";
  fs::create_directories(dir);
  save_generator(dir / "generator.bin", n, {{"epoch", 3}});
  Networks back = load_generator(dir / "generator.bin");
  CHECK(generate(back, f, z, {3, 4}, false) == before);
  CHECK(fs::file_size(dir / "generator.bin") <= 40u * 1024 * 1024);
  CHECK(ad::load_sidecar(dir / "generator.bin")["config_hash"] == n.config.hash());

  CHECK_THROWS_AS(load_generator(dir / "missing.bin"), NoCheckpoint);
  auto side = ad::load_sidecar(dir / "generator.bin");
  side["config"]["noise_dim"] = 64;
  std::ofstream(dir / "generator.bin.json") << side.dump();
  CHECK_THROWS_AS(load_generator(dir / "generator.bin"), FormatError);
}
