#include <benchmark/benchmark.h>

#include <random>

#include "somnoflow/datapipe.hpp"
#include "somnoflow/events.hpp"
#include "somnoflow/sleepnet.hpp"
#include "somnoflow/stream.hpp"

using namespace somnoflow;

namespace {

std::vector<data::FeatureWindow> windows(std::size_t n) {
  std::vector<data::EpochSeries> nights;
  for (std::uint64_t s = 0; s < 4; ++s) nights.push_back(data::synth_generate(data::night_preset(s)).series);
  auto w = data::build_training_set(nights, 1.0, 0);
  w.resize(std::min(n, w.size()));
  const auto stats = data::fit_normalizer(w);
  return data::apply_normalizer(std::move(w), stats);
}

void BM_Forward(benchmark::State& state) {
  const net::SleepNet m;
  const auto w = windows(1);
  for (auto _ : state) benchmark::DoNotOptimize(net::forward(m, w[0]).p_final);
}
BENCHMARK(BM_Forward);

void BM_TrainEpoch(benchmark::State& state) {
  const auto w = windows(static_cast<std::size_t>(state.range(0)));
  net::TrainingHyper h;
  h.n_epochs = 1;
  for (auto _ : state) {
    net::SleepNet m;
    m.norm_stats() = data::fit_normalizer(w);
    net::train(m, w, {}, h);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_TrainEpoch)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_PredictEvents(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  std::vector<double> p(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = (i > p.size() / 8 && i < p.size() * 7 / 8) ? 1 - u(rng) : u(rng);
  const events::Hypnogram h{0, p};
  for (auto _ : state) benchmark::DoNotOptimize(events::predict_events(h, {}).sleep_onset);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PredictEvents)->Arg(600)->Arg(6000);

void BM_StreamNight(benchmark::State& state) {
  const net::SleepNet m;
  const auto s = data::synth_generate(data::night_preset(9)).series;
  for (auto _ : state) {
    stream::StreamState st(m, {});
    for (const auto& e : s.epochs) benchmark::DoNotOptimize(st.feed(e));
    benchmark::DoNotOptimize(st.finalize());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.epochs.size()));
}
BENCHMARK(BM_StreamNight)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
