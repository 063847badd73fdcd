// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "event_oracle.hpp"
#include "layer_checks.hpp"
#include "somnoflow/evalkit.hpp"
#include "somnoflow/stream.hpp"
#include "workflow.hpp"

using namespace somnoflow;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

void report(int n, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

void guarded(int n, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(n, false, std::string("threw: ") + e.what());
  }
}

std::vector<data::EpochSeries> nights(data::SynthConfig (*preset)(std::uint64_t), std::uint64_t first, std::size_t n) {
  std::vector<data::EpochSeries> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(data::synth_generate(preset(first + i)).series);
  return out;
}

double window_accuracy(const net::SleepNet& m, const std::vector<data::FeatureWindow>& w) {
  return 100.0 * net::evaluate(m, w, 0.0).accuracy;
}

// --- 1 ---------------------------------------------------------------------

void gradients() {
  const auto t0 = Clock::now();
  const std::pair<const char*, gradcheck::Tally> layers[] = {
      {"conv", layer_checks::conv(20)},           {"batchnorm", layer_checks::batchnorm(20)},
      {"maxpool", layer_checks::maxpool(20)},     {"dense", layer_checks::dense(20)},
      {"activations", layer_checks::activations(20)},
  };
  const auto whole = layer_checks::whole_model(20);
  const double secs = seconds_since(t0);
  bool ok = secs < 30.0 && whole.max_rel < 1e-3 && whole.skipped * 10 < whole.checked;
  std::string detail;
  for (const auto& [name, t] : layers) {
    ok = ok && t.max_rel < 1e-4 && t.checked > 0;
    detail += fmt("%s %.1e, ", name, t.max_rel);
  }
  detail += fmt("whole model %.1e (%zu checked, %zu kinked skipped); 20 seeds; %.1f s", whole.max_rel, whole.checked,
                whole.skipped, secs);
  report(1, ok, detail);
}

// --- 2 ---------------------------------------------------------------------

void architecture() {
  const net::SleepNet m;
  const std::size_t kernels[] = {3, 5, 7, 11};
  const std::size_t lengths[] = {28, 26, 24, 20};
  bool ok = m.head_count() == 4 && m.config().window_epochs == 30;
  for (std::size_t h = 0; ok && h < 4; ++h) {
    const auto& hd = m.head(h);
    ok = hd.config.kernel_width == kernels[h] && hd.conv_length == lengths[h] &&
         hd.conv.weight_shape == std::vector<std::size_t>{hd.config.n_filters, data::kFeatureCount, kernels[h]} &&
         m.head_conv_features(nn::FeatureMap<float>(data::kFeatureCount, 30), h).length() == lengths[h];
  }
  report(2, ok, "4 heads, kernels {3,5,7,11}, conv lengths {28,26,24,20} on 30-epoch input");
}

// --- 3 ---------------------------------------------------------------------

struct Base {
  net::SleepNet model;
  double secs{0};
};

Base train_base() {
  const auto t0 = Clock::now();
  const auto train = nights(data::night_preset, 3000, 20);
  const auto val = nights(data::night_preset, 3500, 3);
  const auto td = workflow::prepare_training(train, val, 1.0, 11, 2000);
  net::ModelConfig mc;
  mc.seed = 11;
  Base b{net::SleepNet(mc), 0};
  b.model.norm_stats() = td.stats;
  net::TrainingHyper h;
  h.seed = 11;
  net::train(b.model, td.train, td.val, h);
  b.secs = seconds_since(t0);
  return b;
}

void end_to_end(const Base& base) {
  const auto t0 = Clock::now();
  const auto held = nights(data::night_preset, 4000, 10);
  std::vector<workflow::Record> records;
  for (const auto& s : held) records.push_back({{}, s, data::transitions_of(s)});
  const double acc = window_accuracy(base.model, workflow::labeled_windows(held, base.model.norm_stats()));
  const auto run = workflow::evaluate_model("acceptance", base.model, records, {});
  std::size_t good = 0;
  for (const auto& n : run.nights_detail) good += n.score.onset_within && n.score.wake_within;
  const double secs = base.secs + seconds_since(t0);
  const bool ok = acc >= 90.0 && good * 10 >= 9 * records.size() && secs < 300.0;
  report(3, ok,
         fmt("window accuracy %.2f%%, onset and wake within 15 min on %zu/%zu nights (onset %zu, wake %zu); %.1f s",
             acc, good, records.size(), run.onset_within, run.wake_within, secs));
}

// --- 4 ---------------------------------------------------------------------

void ablation() {
  const auto t0 = Clock::now();
  const auto train = nights(data::multiscale_preset, 7000, 12);
  const auto test = nights(data::multiscale_preset, 7500, 6);
  const auto td = workflow::prepare_training(train, {}, 1.0, 3, 2000);
  const auto test_w = workflow::labeled_windows(test, td.stats);

  const std::size_t budget = net::SleepNet().parameter_count();
  // Widest single kernel-3 head whose parameter count is closest to the budget.
  net::ModelConfig single;
  single.heads = {net::default_heads().front()};
  std::size_t best_gap = SIZE_MAX;
  std::size_t best_filters = 1;
  for (std::size_t f = 1; f <= 128; ++f) {
    single.heads[0].n_filters = f;
    const std::size_t n = net::SleepNet(single).parameter_count();
    const std::size_t gap = n > budget ? n - budget : budget - n;
    if (gap < best_gap) best_gap = gap, best_filters = f;
  }
  single.heads[0].n_filters = best_filters;
  const std::size_t single_params = net::SleepNet(single).parameter_count();

  double multi_sum = 0, single_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    net::TrainingHyper h;
    h.n_epochs = 15;
    h.early_stop_patience = 0;
    h.seed = seed;
    auto run = [&](net::ModelConfig mc) {
      mc.seed = seed;
      net::SleepNet m(mc);
      m.norm_stats() = td.stats;
      net::train(m, td.train, {}, h);
      return window_accuracy(m, test_w);
    };
    const double a4 = run({});
    const double a1 = run(single);
    multi_sum += a4;
    single_sum += a1;
    per_seed += fmt(" %.2f/%.2f", a4, a1);
  }
  const double m4 = multi_sum / 3, m1 = single_sum / 3;
  report(4, m4 >= m1 - 0.5,
         fmt("4-head mean %.2f%% vs 1-head k3 mean %.2f%% (params %zu vs %zu; per seed%s); %.1f s", m4, m1, budget,
             single_params, per_seed.c_str(), seconds_since(t0)));
}

// --- 5 ---------------------------------------------------------------------

void event_rules() {
  const auto t0 = Clock::now();
  std::size_t mismatches = 0, cases = 0;
  auto compare = [&](const std::vector<double>& p, const events::EventRuleConfig& cfg) {
    const auto ev = events::predict_events({0, p}, cfg);
    const auto ref = oracle::predict(p, cfg);
    const bool same = ev.binary.states == ref.binary && ev.sleep_onset.has_value() == ref.onset.has_value() &&
                      (!ref.onset || ev.sleep_onset->minute == *ref.onset) &&
                      ev.wake_time.has_value() == ref.wake.has_value() &&
                      (!ref.wake || ev.wake_time->minute == *ref.wake);
    mismatches += !same;
    ++cases;
  };
  for (auto [mw, mr] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 2}, {5, 3}}) {
    const auto cfg = oracle::scaled(mw, mr);
    for (std::uint32_t w = 0; w < (1u << 16); ++w) {
      const auto b = oracle::bits_of(w, 16);
      compare({b.begin(), b.end()}, cfg);
    }
  }
  const std::size_t exhaustive = cases;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 0.45);
  const events::EventRuleConfig defaults;
  for (int t = 0; t < 100000; ++t) {
    const auto b = oracle::bursty(600, rng);
    std::vector<double> p(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) p[i] = b[i] ? 1.0 - u(rng) : u(rng);
    compare(p, defaults);
  }
  const double secs = seconds_since(t0);
  report(5, mismatches == 0 && secs < 60.0,
         fmt("%zu mismatches over %zu exhaustive length-16 and %zu fuzzed length-600 sequences; %.1f s", mismatches,
             exhaustive, cases - exhaustive, secs));
}

// --- 6 ---------------------------------------------------------------------

void metrics() {
  using namespace eval;
  auto near = [](Metric m, double v) { return m && std::abs(*m - v) < 5e-3; };
  const ConfusionCounts c{2, 1, 1, 1};
  bool ok = near(accuracy(c), 60.0) && near(precision(c), 66.67) && near(specificity(c), 50.0) &&
            near(sensitivity(c), 66.67);
  ok = ok && near(accuracy({50, 50, 0, 0}), 100.0) && !precision({0, 5, 0, 3}) && !accuracy({}) &&
       near(accuracy({0, 5, 0, 3}), 62.5);
  std::mt19937_64 rng(6);
  double worst = 0;
  for (int t = 0; t < 10000; ++t) {
    const ConfusionCounts k{rng() % 1000 + 1, rng() % 1000 + 1, rng() % 1000, rng() % 1000};
    const double p = static_cast<double>(k.positives()), n = static_cast<double>(k.negatives());
    worst = std::max(worst, std::abs(*accuracy(k) - (*sensitivity(k) * p + *specificity(k) * n) / (p + n)));
  }
  ok = ok && worst <= 1e-9;
  report(6, ok, fmt("hand cases match; identity max deviation %.1e over 10^4 random counts", worst));
}

// --- 7 ---------------------------------------------------------------------

void transfer(const Base& base) {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto cohort = nights(data::cohort_preset, 5000 + 100 * seed, 6);
    const auto held = nights(data::cohort_preset, 5050 + 100 * seed, 4);
    const auto td = workflow::prepare_with_stats(cohort, {}, base.model.norm_stats(), 1.0, seed, 1000);
    const auto held_w = workflow::labeled_windows(held, base.model.norm_stats());
    net::TrainingHyper h;
    h.seed = seed;
    h.n_epochs = 10;
    const auto tuned = net::finetune_transfer(base.model, td.train, h);

    const auto before = base.model.layers();
    const auto after = tuned.layers();
    std::size_t frozen = 0;
    bool identical = before.size() == after.size();
    for (std::size_t i = 0; identical && i < before.size(); ++i) {
      if (!after[i]->frozen) continue;
      ++frozen;
      identical = before[i]->weight == after[i]->weight && before[i]->bias == after[i]->bias &&
                  std::memcmp(before[i]->weight.data(), after[i]->weight.data(),
                              before[i]->weight.size() * sizeof(float)) == 0;
    }
    const auto a = base.model.tensors();
    const auto b = tuned.tensors();
    for (std::size_t i = 0; identical && i < a.size(); ++i)
      if (!a[i].name.starts_with("trunk"))
        identical = std::memcmp(a[i].values.data(), b[i].values.data(), a[i].values.size_bytes()) == 0;

    const double pre = window_accuracy(base.model, held_w);
    const double post = window_accuracy(tuned, held_w);
    ok = ok && identical && frozen > 0 && post - pre >= 5.0;
    detail += fmt("seed %llu: %zu frozen layers %s, %.2f%% -> %.2f%%; ", static_cast<unsigned long long>(seed),
                  frozen, identical ? "bit-identical" : "CHANGED", pre, post);
  }
  report(7, ok, detail + fmt("%.1f s", seconds_since(t0)));
}

// --- 8 ---------------------------------------------------------------------

void stream_equivalence(const Base& base) {
  using stream::Emission;
  const auto t0 = Clock::now();
  auto of_kind = [](const std::vector<Emission>& v, Emission::Kind k) {
    std::vector<Emission> out;
    for (const auto& e : v)
      if (e.kind == k) out.push_back(e);
    return out;
  };
  std::size_t equal = 0, emitted = 0;
  const std::size_t total = 200;
  for (std::uint64_t seed = 0; seed < total; ++seed) {
    const auto s = data::synth_generate(data::night_preset(8000 + seed)).series;
    events::SleepEvents batch_ev;
    const auto batch = stream::batch_emissions(base.model, s, {}, &batch_ev);
    stream::StreamState st(base.model, {});
    std::vector<Emission> got;
    for (const auto& e : s.epochs)
      for (auto& em : st.feed(e)) got.push_back(std::move(em));
    const auto ev = st.finalize(&got);
    emitted += got.size();
    equal += of_kind(got, Emission::Kind::classification) == of_kind(batch, Emission::Kind::classification) &&
             of_kind(got, Emission::Kind::event) == of_kind(batch, Emission::Kind::event) &&
             of_kind(got, Emission::Kind::error).empty() && ev.sleep_onset == batch_ev.sleep_onset &&
             ev.wake_time == batch_ev.wake_time && ev.binary.states == batch_ev.binary.states;
  }
  report(8, equal == total,
         fmt("%zu/%zu nights identical (%zu emissions); %.1f s", equal, total, emitted, seconds_since(t0)));
}

// --- 9 ---------------------------------------------------------------------

void persistence() {
  const auto corpus = fixtures::night_corpus(9000, 3, 300);
  auto build = [&] {
    net::ModelConfig mc;
    mc.seed = 77;
    net::SleepNet m(mc);
    m.norm_stats() = corpus.stats;
    net::TrainingHyper h;
    h.n_epochs = 2;
    h.seed = 77;
    net::train(m, corpus.windows, {}, h);
    return m;
  };
  const auto a = build();
  const auto b = build();
  const bool same_digest = net::digest(a) == net::digest(b);
  const auto bytes = net::serialize_model(a);
  const auto back = net::deserialize_model(bytes);
  const bool round_trip = net::serialize_model(back) == bytes && net::digest(back) == net::digest(a) &&
                          net::forward(back, corpus.windows[0]).p_final == net::forward(a, corpus.windows[0]).p_final;

  std::size_t rejected = 0, tried = 0;
  auto expect = [&]<class E>(std::vector<std::byte> bad, E*) {
    ++tried;
    try {
      net::deserialize_model(bad);
    } catch (const E&) {
      ++rejected;
    } catch (...) {
    }
  };
  auto flipped = [&](std::size_t at) {
    auto v = bytes;
    v[at] ^= std::byte{0x01};
    return v;
  };
  for (std::size_t at : {bytes.size() / 3, bytes.size() / 2, bytes.size() - 5})
    expect(flipped(at), static_cast<net::ModelDigestError*>(nullptr));
  auto version = bytes;
  version[4] = std::byte{7};
  expect(version, static_cast<net::ModelVersionError*>(nullptr));
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
    expect({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)},
           static_cast<net::ModelTruncatedError*>(nullptr));
  auto magic = bytes;
  magic[0] = std::byte{'X'};
  expect(magic, static_cast<net::ModelFormatError*>(nullptr));
  auto longer = bytes;
  longer.push_back(std::byte{0});
  expect(longer, static_cast<net::ModelFormatError*>(nullptr));

  report(9, same_digest && round_trip && rejected == tried,
         fmt("same-seed digests %s, round trip %s, %zu/%zu corrupted files rejected with the expected error",
             same_digest ? "equal" : "DIFFER", round_trip ? "bit-exact" : "BROKEN", rejected, tried));
}

}  // namespace

int main() {
  guarded(1, gradients);
  guarded(2, architecture);
  std::optional<Base> base;
  try {
    base = train_base();
  } catch (const std::exception& e) {
    for (int n : {3, 7, 8}) report(n, false, std::string("base model training threw: ") + e.what());
  }
  if (base) guarded(3, [&] { end_to_end(*base); });
  guarded(4, ablation);
  guarded(5, event_rules);
  guarded(6, metrics);
  if (base) guarded(7, [&] { transfer(*base); });
  if (base) guarded(8, [&] { stream_equivalence(*base); });
  guarded(9, persistence);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
