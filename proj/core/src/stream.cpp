#include "somnoflow/stream.hpp"

#include <cstdio>
#include <istream>
#include <ostream>

#include "csv_util.hpp"

namespace somnoflow::stream {

std::string Emission::to_line() const {
  char buf[64];
  switch (kind) {
    case Kind::classification:
      std::snprintf(buf, sizeof buf, "%.9g", p);
      return "class," + std::to_string(timestamp) + "," + buf;
    case Kind::event:
      return std::string("event,") + to_string(event) + "," + std::to_string(timestamp);
    case Kind::error:
      return "err," + reason;
  }
  return {};
}

namespace {

Emission error_frame(std::string reason) {
  Emission e;
  e.kind = Emission::Kind::error;
  e.reason = std::move(reason);
  return e;
}

Emission event_frame(EventKind kind, std::int64_t ts) {
  Emission e;
  e.kind = Emission::Kind::event;
  e.event = kind;
  e.timestamp = ts;
  return e;
}

}  // namespace

StreamState::StreamState(const net::SleepNet& model, events::EventRuleConfig cfg) : model_(&model), cfg_(cfg) {
  cfg_.validate();
  if (model.config().input_features != data::kFeatureCount || model.config().window_epochs != data::kWindowEpochs) {
    throw nn::ShapeError("streaming requires a 5 x 30 window model");
  }
}

const events::Hypnogram* StreamState::hypnogram() const { return events_ ? &events_->hypnogram() : nullptr; }

std::vector<Emission> StreamState::feed(std::string_view line) {
  line = csv::trim(line);
  if (line.empty() || line.starts_with("timestamp")) return {};
  const auto f = csv::split(line);
  if (f.size() != 5 && f.size() != 6) {
    return {error_frame("malformed record: expected 5 fields, got " + std::to_string(f.size()))};
  }
  data::EpochRecord r;
  try {
    r.timestamp = csv::parse_int(f[0], 0, "timestamp");
    r.hr = csv::parse_float(f[1], 0, "hr");
    r.br = csv::parse_float(f[2], 0, "br");
    r.hr_conf = csv::parse_float(f[3], 0, "hr_conf");
    r.movement = csv::parse_float(f[4], 0, "movement");
  } catch (const data::DataError& e) {
    return {error_frame(std::string("malformed record: ") + e.what())};
  }
  return feed(r);
}

std::vector<Emission> StreamState::feed(const data::EpochRecord& record) {
  if (finalized_) return {error_frame("stream already finalized")};
  if (!(record.hr >= 0.0f) || !(record.br >= 0.0f) || !(record.movement >= 0.0f) ||
      !(record.hr_conf >= 0.0f && record.hr_conf <= 1.0f) || record.timestamp % kEpochSeconds != 0) {
    return {error_frame("invalid record at timestamp " + std::to_string(record.timestamp))};
  }
  if (last_timestamp_) {
    if (record.timestamp <= *last_timestamp_) {
      return {error_frame("out-of-order timestamp " + std::to_string(record.timestamp) + " after " +
                          std::to_string(*last_timestamp_))};
    }
    if (record.timestamp != *last_timestamp_ + kEpochSeconds) {
      return {error_frame("timestamp gap: " + std::to_string(record.timestamp) + " after " +
                          std::to_string(*last_timestamp_))};
    }
  }
  data::EpochRecord r = record;
  r.hr_diff = epochs_ == 0 ? 0.0f : r.hr - last_hr_;
  last_hr_ = r.hr;
  last_timestamp_ = r.timestamp;
  ++epochs_;

  const auto& stats = model_->norm_stats();
  auto& slot = ring_[head_];
  for (std::size_t f = 0; f < data::kFeatureCount; ++f) {
    slot[f] = data::normalize_value(r.feature(static_cast<data::Feature>(f)), stats, f);
  }
  head_ = (head_ + 1) % data::kWindowEpochs;
  if (count_ < data::kWindowEpochs) ++count_;

  std::vector<Emission> out;
  if (epochs_ < data::kWindowEpochs || (epochs_ - data::kWindowEpochs) % data::kStrideEpochs != 0) return out;

  nn::FeatureMap<float> window(data::kFeatureCount, data::kWindowEpochs);
  for (std::size_t j = 0; j < data::kWindowEpochs; ++j) {
    const auto& e = ring_[(head_ + j) % data::kWindowEpochs];
    for (std::size_t f = 0; f < data::kFeatureCount; ++f) window(f, j) = e[f];
  }
  const double p = model_->predict(window).p_final;
  const std::int64_t minute_ts = r.timestamp + kEpochSeconds - kMinuteSeconds;
  if (!events_) events_.emplace(cfg_, minute_ts);

  Emission cls;
  cls.kind = Emission::Kind::classification;
  cls.timestamp = minute_ts;
  cls.p = p;
  out.push_back(cls);
  if (auto onset = events_->push(p)) {
    out.push_back(event_frame(EventKind::sleep_onset, onset->timestamp));
    onset_emitted_ = true;
  }
  return out;
}

events::SleepEvents StreamState::finalize(std::vector<Emission>* emissions) {
  if (finalized_) throw std::logic_error("stream already finalized");
  finalized_ = true;
  if (!events_) return {};
  auto ev = events_->finish();
  if (emissions) {
    if (ev.sleep_onset && !onset_emitted_) {
      emissions->push_back(event_frame(EventKind::sleep_onset, ev.sleep_onset->timestamp));
    }
    if (ev.wake_time) emissions->push_back(event_frame(EventKind::wake_time, ev.wake_time->timestamp));
  }
  return ev;
}

// ---------------------------------------------------------------------------

events::Hypnogram infer_hypnogram(const net::SleepNet& model, const data::EpochSeries& series) {
  events::Hypnogram h;
  auto windows = data::make_windows(series);
  if (windows.empty()) return h;
  h.start_timestamp = windows.front().minute_timestamp();
  h.p.reserve(windows.size());
  for (auto& w : windows) {
    const auto nw = data::apply_normalizer(std::move(w), model.norm_stats());
    h.p.push_back(net::forward(model, nw).p_final);
  }
  return h;
}

std::vector<Emission> batch_emissions(const net::SleepNet& model, const data::EpochSeries& series,
                                      const events::EventRuleConfig& cfg, events::SleepEvents* events) {
  const auto h = infer_hypnogram(model, series);
  std::vector<Emission> out;
  for (std::size_t i = 0; i < h.p.size(); ++i) {
    Emission e;
    e.kind = Emission::Kind::classification;
    e.timestamp = h.timestamp_at(i);
    e.p = h.p[i];
    out.push_back(e);
  }
  auto ev = h.p.empty() ? events::SleepEvents{} : events::predict_events(h, cfg);
  if (ev.sleep_onset) out.push_back(event_frame(EventKind::sleep_onset, ev.sleep_onset->timestamp));
  if (ev.wake_time) out.push_back(event_frame(EventKind::wake_time, ev.wake_time->timestamp));
  if (events) *events = std::move(ev);
  return out;
}

void serve_stream(std::istream& in, std::ostream& out, const net::SleepNet& model, const events::EventRuleConfig& cfg) {
  StreamState state(model, cfg);
  std::string line;
  while (std::getline(in, line)) {
    for (const auto& e : state.feed(line)) out << e.to_line() << '\n';
    out.flush();
  }
  std::vector<Emission> tail;
  state.finalize(&tail);
  for (const auto& e : tail) out << e.to_line() << '\n';
  out.flush();
}

}  // namespace somnoflow::stream
