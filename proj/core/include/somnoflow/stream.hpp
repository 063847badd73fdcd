#pragma once

// Real-time inference over newline-delimited epoch records.
//
// Input lines:  timestamp,hr,br,hr_conf,movement
// Output lines: class,timestamp,p | event,kind,timestamp | err,reason
//
// A class record is emitted for every second epoch from the 30th on. The
// sleep onset is emitted as soon as the batch rules accept it on data that
// can no longer change; the wake time, which depends on the rest of the
// record, is emitted by finalize().

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "somnoflow/datapipe.hpp"
#include "somnoflow/events.hpp"
#include "somnoflow/sleepnet.hpp"

namespace somnoflow::stream {

struct Emission {
  enum class Kind { classification, event, error };

  Kind kind{Kind::classification};
  std::int64_t timestamp{0};
  double p{0.0};
  EventKind event{EventKind::sleep_onset};
  std::string reason;

  std::string to_line() const;
  bool operator==(const Emission&) const = default;
};

class StreamState {
 public:
  StreamState(const net::SleepNet& model, events::EventRuleConfig cfg);

  /// Parses one input line. Malformed or out-of-order lines yield a single
  /// error emission and leave the state unchanged.
  std::vector<Emission> feed(std::string_view line);
  std::vector<Emission> feed(const data::EpochRecord& record);

  /// Flushes pending decisions with end-of-record semantics. Any event not yet
  /// emitted is appended to `emissions`.
  events::SleepEvents finalize(std::vector<Emission>* emissions = nullptr);

  std::size_t epochs_seen() const { return epochs_; }
  std::size_t buffered_epochs() const { return count_; }
  const events::Hypnogram* hypnogram() const;

 private:
  const net::SleepNet* model_;
  events::EventRuleConfig cfg_;
  std::array<std::array<float, data::kFeatureCount>, data::kWindowEpochs> ring_{};
  std::size_t head_{0};  // next write slot
  std::size_t count_{0};
  std::size_t epochs_{0};
  std::optional<std::int64_t> last_timestamp_;
  float last_hr_{0.0f};
  std::optional<events::IncrementalEvents> events_;
  bool onset_emitted_{false};
  bool finalized_{false};
};

/// Batch reference: windows -> normalize with the model's stats -> forward.
events::Hypnogram infer_hypnogram(const net::SleepNet& model, const data::EpochSeries& series);

/// Everything the stream would emit for `series`, computed in batch.
std::vector<Emission> batch_emissions(const net::SleepNet& model, const data::EpochSeries& series,
                                      const events::EventRuleConfig& cfg, events::SleepEvents* events = nullptr);

/// Line loop over a stream pair; finalizes at end of input.
void serve_stream(std::istream& in, std::ostream& out, const net::SleepNet& model,
                  const events::EventRuleConfig& cfg);

struct TcpOptions {
  std::uint16_t port{0};  // 0 picks a free port
  std::size_t max_connections{0};  // 0 = serve forever
  std::function<void(std::uint16_t)> on_listening;
};

/// One thread per connection, each with its own StreamState over the shared
/// immutable model. A connection is finalized when the client closes its
/// sending side.
void serve_tcp(const net::SleepNet& model, const events::EventRuleConfig& cfg, const TcpOptions& options);

}  // namespace somnoflow::stream
