#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include "grad_check.hpp"
#include "layer_checks.hpp"
#include "model_fixtures.hpp"
#include "somnoflow/sleepnet.hpp"

using namespace somnoflow;

namespace {

const fixtures::Corpus& corpus() { return fixtures::night_training(); }

const net::SleepNet& trained() { return fixtures::night_model(); }

std::vector<data::FeatureWindow> slice(const std::vector<data::FeatureWindow>& w, std::size_t n) {
  return {w.begin(), w.begin() + static_cast<std::ptrdiff_t>(std::min(n, w.size()))};
}


}  // namespace

TEST_CASE("default architecture") {
  net::SleepNet m;
  REQUIRE(m.head_count() == 4);
  const std::size_t kernels[] = {3, 5, 7, 11};
  const std::size_t conv_len[] = {28, 26, 24, 20};
  const std::size_t pooled[] = {14, 13, 12, 10};
  nn::FeatureMap<float> x(5, 30, 0.1f);
  for (std::size_t h = 0; h < 4; ++h) {
    CHECK(m.head(h).config.kernel_width == kernels[h]);
    CHECK(m.head(h).conv_length == conv_len[h]);
    CHECK(m.head(h).pooled_length == pooled[h]);
    CHECK(m.head(h).conv.weight_shape == std::vector<std::size_t>{16, 5, kernels[h]});
    CHECK(m.head_conv_features(x, h).length() == conv_len[h]);
    CHECK(m.head(h).fc.weight_shape == std::vector<std::size_t>{16, 16 * pooled[h]});
    CHECK(m.head(h).pred.weight_shape == std::vector<std::size_t>{1, 16});
  }
  CHECK(m.trunk().size() == 2);
  CHECK(m.trunk()[0].weight_shape == std::vector<std::size_t>{8, 4});
  CHECK(m.trunk()[1].weight_shape == std::vector<std::size_t>{1, 8});
  CHECK(m.parameter_count() > 10000);
  CHECK(m.parameter_count() < 20000);
}

TEST_CASE("config validation") {
  auto bad = [](auto mutate) {
    net::ModelConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(net::SleepNet(bad([](auto& c) { c.heads[0].kernel_width = 4; })), nn::ConfigError);
  CHECK_THROWS_AS(net::SleepNet(bad([](auto& c) { c.heads[3].kernel_width = 31; })), nn::ConfigError);
  CHECK_THROWS_AS(net::SleepNet(bad([](auto& c) { c.heads.clear(); })), nn::ConfigError);
  CHECK_THROWS_AS(net::SleepNet(bad([](auto& c) { c.trunk_widths = {8, 2}; })), nn::ConfigError);
  CHECK_THROWS_AS(net::SleepNet(bad([](auto& c) { c.heads[1].dropout_rate = 1.0; })), nn::ConfigError);
  CHECK_THROWS_AS(net::SleepNet(bad([](auto& c) { c.aux_loss_weight = -1; })), nn::ConfigError);
  CHECK_NOTHROW(net::SleepNet(bad([](auto& c) { c.heads = {net::HeadConfig{29, 4, 2, 0.3, 8}}; })));
}

TEST_CASE("seeded construction is deterministic") {
  net::ModelConfig a;
  a.seed = 77;
  CHECK(net::digest(net::SleepNet(a)) == net::digest(net::SleepNet(a)));
  net::ModelConfig b = a;
  b.seed = 78;
  CHECK(net::digest(net::SleepNet(a)) != net::digest(net::SleepNet(b)));
}

TEST_CASE("forward") {
  const auto& m = trained();
  SUBCASE("outputs are probabilities") {
    for (const auto& w : slice(corpus().windows, 300)) {
      const auto p = net::forward(m, w);
      CHECK(p.p_final >= 0.0);
      CHECK(p.p_final <= 1.0);
      REQUIRE(p.p_heads.size() == 4);
      for (double ph : p.p_heads) CHECK((ph >= 0.0 && ph <= 1.0));
    }
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
      const auto x = gradcheck::random_map<float>(5, 30, rng, -50, 50);
      const auto p = m.predict(x);
      CHECK((p.p_final >= 0.0 && p.p_final <= 1.0));
    }
  }
  SUBCASE("zero final layer gives one half") {
    net::SleepNet fresh;
    std::fill(fresh.trunk().back().weight.begin(), fresh.trunk().back().weight.end(), 0.0f);
    fresh.trunk().back().bias[0] = 0.0f;
    CHECK(fresh.predict(corpus().windows[0].features).p_final == 0.5);
  }
  SUBCASE("inference is deterministic") {
    const auto& w = corpus().windows[3];
    const auto a = net::forward(m, w);
    const auto b = net::forward(m, w);
    CHECK(a.p_final == b.p_final);
    CHECK(a.p_heads == b.p_heads);
  }
  SUBCASE("unnormalized or misshapen windows are rejected") {
    auto w = corpus().windows[0];
    w.normalized = false;
    CHECK_THROWS_AS(net::forward(m, w), nn::ShapeError);
    CHECK_THROWS_AS(m.predict(nn::FeatureMap<float>(5, 29)), nn::ShapeError);
    CHECK_THROWS_AS(m.predict(nn::FeatureMap<float>(4, 30)), nn::ShapeError);
  }
  SUBCASE("receptive field of the kernel-11 head") {
    const std::size_t h = 3;
    REQUIRE(m.head(h).config.kernel_width == 11);
    auto x = corpus().windows[10].features;
    const auto base = m.head_conv_features(x, h);
    for (std::size_t f = 0; f < 5; ++f) {
      x(f, 0) += 1.5f;
      x(f, 1) -= 0.75f;
    }
    const auto moved = m.head_conv_features(x, h);
    for (std::size_t i = 0; i < base.length(); ++i) {
      // Position i covers epochs [i, i+10]; only i = 0 and 1 overlap epochs 0-1.
      const bool overlaps = i <= 1;
      bool changed = false;
      for (std::size_t o = 0; o < base.channels(); ++o) changed |= base(o, i) != moved(o, i);
      CHECK(changed == overlaps);
    }
  }
  SUBCASE("concurrent inference on a shared model") {
    const auto ws = slice(corpus().windows, 64);
    std::vector<double> ref;
    for (const auto& w : ws) ref.push_back(net::forward(m, w).p_final);
    std::vector<std::vector<double>> got(4);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
      threads.emplace_back([&, t] {
        for (const auto& w : ws) got[t].push_back(net::forward(m, w).p_final);
      });
    for (auto& t : threads) t.join();
    for (const auto& g : got) CHECK(g == ref);
  }
}

TEST_CASE("whole-model gradients match finite differences") {
  CHECK(net::SleepNetT<double>(fixtures::reduced_config(0)).parameter_count() <= 110);
  const auto t = layer_checks::whole_model(20);
  INFO("worst layer: " << t.worst << ", skipped " << t.skipped << " of " << t.checked + t.skipped);
  CHECK(t.max_rel < 1e-3);
  CHECK(t.skipped * 10 < t.checked);
}

TEST_CASE("with no auxiliary loss, head gradients are the trunk chain term") {
  net::ModelConfig mc = fixtures::reduced_config(3, 0.0);
  net::SleepNetT<double> model(mc);
  std::mt19937_64 rng(4);
  std::vector<nn::FeatureMap<double>> xs;
  for (int b = 0; b < 3; ++b) xs.push_back(gradcheck::random_map<double>(2, 8, rng, -2, 2));
  nn::Rng r(0);
  auto tr = model.forward_batch(xs, nn::Mode::train, r);
  std::vector<double> d_final{0.3, -0.7, 0.2};
  std::vector<std::vector<double>> d_heads(3, std::vector<double>(2, 0.0));
  model.zero_grad();
  model.backward(tr, d_final, d_heads);

  const auto& w0 = model.trunk()[0];
  const auto& w1 = model.trunk()[1];
  for (std::size_t h = 0; h < 2; ++h) {
    double expect = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      double dz_dp = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        if (tr.trunk_outputs[0][b][j] > 0) dz_dp += w1.weight[j] * w0.weight[j * 2 + h];
      }
      const double p = tr.p_heads[b][h];
      expect += d_final[b] * dz_dp * p * (1 - p);
    }
    CHECK(model.head(h).pred.bias_grad[0] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("training") {
  SUBCASE("separable synthetic set reaches 97% train accuracy") {
    REQUIRE(corpus().windows.size() == 2000);
    const auto s = net::evaluate(trained(), corpus().windows, 0.25);
    CHECK(s.accuracy >= 0.97);
  }
  SUBCASE("same seed, same digest") {
    const auto ws = slice(corpus().windows, 256);
    auto run = [&] {
      net::SleepNet m;
      m.norm_stats() = corpus().stats;
      net::TrainingHyper h;
      h.n_epochs = 2;
      h.seed = 9;
      return net::train(m, ws, {}, h).digest;
    };
    const auto a = run();
    CHECK(a == run());
  }
  SUBCASE("report lengths and early stopping") {
    const auto ws = slice(corpus().windows, 200);
    net::SleepNet m;
    net::TrainingHyper h;
    h.n_epochs = 4;
    auto r = net::train(m, ws, ws, h);
    CHECK(r.epochs.size() <= 4);
    CHECK(r.best_epoch < r.epochs.size());
    for (const auto& e : r.epochs) CHECK(e.val_loss.has_value());
    CHECK(r.digest == net::digest(m));
  }
  SUBCASE("single-class and unlabeled sets are rejected") {
    std::vector<data::FeatureWindow> one;
    for (const auto& w : corpus().windows)
      if (*w.label == SleepState::sleep) one.push_back(w);
    net::SleepNet m;
    CHECK_THROWS_AS(net::train(m, slice(one, 50), {}, {}), data::DataError);
    auto ws = slice(corpus().windows, 10);
    ws[2].label.reset();
    CHECK_THROWS_AS(net::train(m, ws, {}, {}), data::DataError);
    ws = slice(corpus().windows, 10);
    ws[0].normalized = false;
    CHECK_THROWS_AS(net::train(m, ws, {}, {}), data::DataError);
  }
  SUBCASE("hyperparameter validation") {
    net::SleepNet m;
    net::TrainingHyper h;
    h.batch_size = 0;
    CHECK_THROWS_AS(net::train(m, slice(corpus().windows, 10), {}, h), nn::ConfigError);
  }
}

TEST_CASE("transfer fine-tuning") {
  const auto& base = trained();
  const auto ws = slice(corpus().windows, 400);
  net::TrainingHyper h;
  h.seed = 3;
  SUBCASE("zero epochs leaves the model bit-identical") {
    h.n_epochs = 0;
    const auto tuned = net::finetune_transfer(base, ws, h);
    CHECK(net::digest(tuned) == net::digest(base));
  }
  SUBCASE("five epochs touch only the trunk") {
    h.n_epochs = 5;
    const auto tuned = net::finetune_transfer(base, ws, h);
    for (int k = 0; k < 4; ++k) {
      const auto p = "head" + std::to_string(k) + ".";
      CHECK(net::digest_of(tuned, p) == net::digest_of(base, p));
    }
    CHECK(net::digest_of(tuned, "trunk") != net::digest_of(base, "trunk"));
    // Bit-exact, element by element, including running statistics.
    const auto a = base.tensors();
    const auto b = tuned.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].name.starts_with("trunk")) continue;
      CHECK(std::memcmp(a[i].values.data(), b[i].values.data(), a[i].values.size_bytes()) == 0);
    }
  }
  SUBCASE("the wider option also trains the intermediate layers") {
    h.n_epochs = 2;
    const auto tuned = net::finetune_transfer(base, ws, h, {true});
    CHECK(net::digest_of(tuned, "head0.conv") == net::digest_of(base, "head0.conv"));
    CHECK(net::digest_of(tuned, "head0.bn") == net::digest_of(base, "head0.bn"));
    CHECK(net::digest_of(tuned, "head0.fc") != net::digest_of(base, "head0.fc"));
  }
  SUBCASE("empty cohort") {
    CHECK_THROWS_AS(net::finetune_transfer(base, std::vector<data::FeatureWindow>{}, h), data::DataError);
  }
}

TEST_CASE("model persistence") {
  auto m = trained();
  m.head(1).conv.frozen = true;
  const auto bytes = net::serialize_model(m);
  REQUIRE(bytes.size() > 64);
  CHECK(std::memcmp(bytes.data(), "SLPN", 4) == 0);
  CHECK(static_cast<int>(bytes[4]) == net::kModelFormatVersion);

  SUBCASE("round trip is bit-exact") {
    const auto back = net::deserialize_model(bytes);
    CHECK(net::digest(back) == net::digest(m));
    CHECK(net::serialize_model(back) == bytes);
    CHECK(back.config() == m.config());
    CHECK(back.norm_stats() == m.norm_stats());
    CHECK(back.head(2).bn.running_var == m.head(2).bn.running_var);
    CHECK(back.head(1).conv.frozen);
    CHECK_FALSE(back.head(0).conv.frozen);
    const auto& w = corpus().windows[7];
    CHECK(net::forward(back, w).p_final == net::forward(m, w).p_final);
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "somnoflow_test_model.slpn";
    net::save_model(m, path.string());
    CHECK(net::digest(net::load_model(path.string())) == net::digest(m));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(net::load_model(path.string()), std::ios_base::failure);
  }
  SUBCASE("corrupt payload byte") {
    auto bad = bytes;
    bad[bad.size() - 5] ^= std::byte{0x10};
    CHECK_THROWS_AS(net::deserialize_model(bad), net::ModelDigestError);
  }
  SUBCASE("unsupported version names both versions") {
    auto bad = bytes;
    bad[4] = std::byte{7};
    try {
      net::deserialize_model(bad);
      FAIL("expected ModelVersionError");
    } catch (const net::ModelVersionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('7') != std::string::npos);
      CHECK(msg.find('1') != std::string::npos);
    }
  }
  SUBCASE("truncation anywhere") {
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{40}, bytes.size() / 2,
                            bytes.size() - 1}) {
      std::vector<std::byte> bad(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(net::deserialize_model(bad), net::ModelTruncatedError);
    }
  }
  SUBCASE("bad magic and trailing bytes") {
    auto bad = bytes;
    bad[0] = std::byte{'X'};
    CHECK_THROWS_AS(net::deserialize_model(bad), net::ModelFormatError);
    auto longer = bytes;
    longer.push_back(std::byte{0});
    CHECK_THROWS_AS(net::deserialize_model(longer), net::ModelFormatError);
  }
}
