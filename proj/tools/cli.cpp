#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "somnoflow/datapipe.hpp"
#include "somnoflow/evalkit.hpp"
#include "somnoflow/events.hpp"
#include "somnoflow/sleepnet.hpp"
#include "somnoflow/stream.hpp"
#include "workflow.hpp"

namespace somnoflow::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSeedEnv = "SOMNOFLOW_SEED";

struct Options {
  std::string config;
  bool verbose{false};

  // synth
  std::string preset{"night"};
  std::optional<double> hours;
  std::uint64_t synth_seed{data::SynthConfig{}.seed};
  std::size_t subjects{1};
  std::int64_t start{0};
  std::string truth_out;

  // shared paths
  std::vector<std::string> data;
  std::vector<std::string> val;
  std::string model;
  std::vector<std::string> models;
  std::string out;
  std::string hypnogram;
  std::string trace;
  std::string csv;
  bool fill_gaps{false};

  // training
  net::TrainingHyper hyper;
  double context_hours{1.0};
  std::size_t max_windows{0};
  std::vector<std::size_t> kernels;
  net::HeadConfig head;
  std::vector<std::size_t> trunk{net::ModelConfig{}.trunk_widths};
  bool train_intermediate_fc{net::TransferOptions{}.train_intermediate_fc};

  // events / eval
  events::EventRuleConfig rules;
  double tolerance{15.0};
  bool per_window{false};

  // serve
  std::optional<std::uint16_t> port;
  std::size_t max_connections{0};
};

struct App {
  CLI::App app{"Sleep/wake classification and sleep event detection from per-epoch vitals.", "somnoflow"};
  std::map<std::string, CLI::App*> subs;
  Options o;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "key=value file; keys are long flag names, flags on the command line win");
  sub->add_flag("-v,--verbose", o.verbose, "Extra progress output");
}

void add_rules(CLI::App* sub, Options& o) {
  auto& r = o.rules;
  sub->add_option("--threshold", r.threshold, "Sleep probability threshold");
  sub->add_option("--median-width", r.median_width, "Smoothing window in minutes (1 disables)");
  sub->add_option("--min-run", r.min_run, "Shortest run kept by suppression (1 disables)");
  sub->add_option("--sleep-confirm", r.sleep_confirm, "Sleep minutes needed to confirm the onset");
  sub->add_option("--awake-break", r.awake_break, "Awake run that cancels an onset candidate");
  sub->add_option("--wake-confirm", r.wake_confirm, "Awake minutes needed to confirm the wake time");
  sub->add_option("--reentry-run", r.reentry_run, "Later sleep run that invalidates a wake candidate");
}

void add_training(CLI::App* sub, Options& o) {
  auto& h = o.hyper;
  sub->add_option("--epochs", h.n_epochs, "Training epochs");
  sub->add_option("--batch-size", h.batch_size, "Mini-batch size");
  sub->add_option("--lr", h.lr, "Adam learning rate");
  sub->add_option("--aux-weight", h.aux_loss_weight, "Weight of the per-head auxiliary losses");
  sub->add_option("--patience", h.early_stop_patience, "Early-stopping patience in epochs (0 disables)");
  sub->add_option("--seed", h.seed, "Seed for initialization, shuffling and dropout")->envname(kSeedEnv);
  sub->add_option("--context-hours", o.context_hours, "Keep training windows within this distance of a transition");
  sub->add_option("--max-windows", o.max_windows, "Seeded subsample of the training windows (0 keeps all)");
  sub->add_option("--val", o.val, "Validation records (files or directories)")->delimiter(',');
  sub->add_flag("--fill-gaps", o.fill_gaps, "Carry values across gaps of up to 2 epochs");
}

void build(App& a) {
  auto& app = a.app;
  auto& o = a.o;
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  auto* synth = app.add_subcommand("synth", "Generate synthetic labeled nights");
  add_common(synth, o);
  synth->add_option("--preset", o.preset, "Generator preset")->check(CLI::IsMember({"night", "multiscale", "cohort"}));
  synth->add_option("--hours", o.hours, "Record length in hours (preset default when absent)");
  synth->add_option("--seed", o.synth_seed, "Generator seed; subject i uses seed + i")->envname(kSeedEnv);
  synth->add_option("--subjects", o.subjects, "Number of records; more than one needs --out DIR")
      ->check(CLI::PositiveNumber);
  synth->add_option("--start", o.start, "Timestamp of the first epoch (multiple of 30)");
  synth->add_option("-o,--out", o.out, "Output CSV (stdout when absent) or directory");
  synth->add_option("--truth", o.truth_out, "Truth sidecar path (default <out>.truth.csv)");
  a.subs["synth"] = synth;

  auto* train = app.add_subcommand("train", "Train a model on labeled records");
  add_common(train, o);
  train->add_option("-d,--data", o.data, "Training records (files or directories)")->required()->delimiter(',');
  train->add_option("-m,--model", o.model, "Output model file")->required();
  add_training(train, o);
  train->add_option("--kernels", o.kernels, "Head kernel widths (default 3,5,7,11)")->delimiter(',');
  train->add_option("--filters", o.head.n_filters, "Conv filters per head");
  train->add_option("--pool", o.head.pool_width, "Max-pool width");
  train->add_option("--dropout", o.head.dropout_rate, "Dropout rate before each head's FC layer");
  train->add_option("--fc-width", o.head.fc_width, "Hidden units of each head's FC layer");
  train->add_option("--trunk", o.trunk, "Trunk layer widths, ending in 1")->delimiter(',');
  a.subs["train"] = train;

  auto* infer = app.add_subcommand("infer", "Write the per-minute sleep probabilities of a record");
  add_common(infer, o);
  infer->add_option("-m,--model", o.model, "Model file")->required();
  infer->add_option("-d,--data", o.data, "Epoch CSV")->required()->expected(1);
  infer->add_option("-o,--out", o.out, "Hypnogram CSV (stdout when absent)");
  infer->add_flag("--fill-gaps", o.fill_gaps, "Carry values across gaps of up to 2 epochs");
  a.subs["infer"] = infer;

  auto* ev = app.add_subcommand("events", "Detect sleep onset and wake time in a hypnogram");
  add_common(ev, o);
  ev->add_option("--hypnogram", o.hypnogram, "Hypnogram CSV from infer")->required();
  ev->add_option("-o,--out", o.out, "Events CSV (stdout when absent)");
  ev->add_option("--trace", o.trace, "Write the decision trace here");
  add_rules(ev, o);
  a.subs["events"] = ev;

  auto* evl = app.add_subcommand("eval", "Score models against labeled records");
  add_common(evl, o);
  evl->add_option("-m,--model", o.models, "Model file; repeat for independent runs")->required();
  evl->add_option("-d,--data", o.data, "Labeled records (files or directories)")->required()->delimiter(',');
  evl->add_option("--tolerance", o.tolerance, "Event relaxation in minutes");
  evl->add_flag("--per-window", o.per_window, "Score only windows whose last two epochs agree");
  evl->add_option("--csv", o.csv, "Also write the reports as CSV");
  evl->add_flag("--fill-gaps", o.fill_gaps, "Carry values across gaps of up to 2 epochs");
  add_rules(evl, o);
  a.subs["eval"] = evl;

  auto* ft = app.add_subcommand("finetune", "Retrain the trunk on a cohort with every head frozen");
  add_common(ft, o);
  ft->add_option("-m,--model", o.model, "Base model file")->required();
  ft->add_option("-d,--data", o.data, "Cohort records (files or directories)")->required()->delimiter(',');
  ft->add_option("-o,--out", o.out, "Output model file")->required();
  ft->add_flag("--train-intermediate-fc", o.train_intermediate_fc,
               "Also retrain each head's FC and prediction layers");
  add_training(ft, o);
  a.subs["finetune"] = ft;

  auto* serve = app.add_subcommand("serve", "Stream classifications and events for records on stdin or TCP");
  add_common(serve, o);
  serve->add_option("-m,--model", o.model, "Model file")->required();
  serve->add_option("--port", o.port, "Listen on 127.0.0.1:PORT instead of stdin (0 picks a port)");
  serve->add_option("--max-connections", o.max_connections, "Exit after this many connections (0 = never)");
  add_rules(serve, o);
  a.subs["serve"] = serve;

  auto* plot = app.add_subcommand("plotdata", "Per-minute CSV of probabilities, states, truth and events");
  add_common(plot, o);
  plot->add_option("-m,--model", o.model, "Model file")->required();
  plot->add_option("-d,--data", o.data, "Epoch CSV")->required()->expected(1);
  plot->add_option("-o,--out", o.out, "Output CSV (stdout when absent)");
  plot->add_flag("--per-window", o.per_window, "Truth only where the window's last two epochs agree");
  plot->add_flag("--fill-gaps", o.fill_gaps, "Carry values across gaps of up to 2 epochs");
  add_rules(plot, o);
  a.subs["plotdata"] = plot;
}

// ---------------------------------------------------------------------------
// config file

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line;
};

std::vector<ConfigEntry> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config file '" + path + "'");
  std::vector<ConfigEntry> out;
  std::string line;
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(n) + ": expected key=value");
    }
    auto key = trim(line.substr(0, eq));
    for (auto& c : key) {
      if (c == '_') c = '-';
    }
    out.push_back({key, trim(line.substr(eq + 1)), n});
  }
  return out;
}

std::optional<std::string> find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return std::nullopt;
}

bool given_on_command_line(const std::vector<std::string>& args, const CLI::Option* opt) {
  for (const auto& a : args) {
    for (const auto& l : opt->get_lnames()) {
      if (a == "--" + l || a.starts_with("--" + l + "=")) return true;
    }
    for (const auto& s : opt->get_snames()) {
      if (a.starts_with("-" + s) && !a.starts_with("--")) return true;
    }
  }
  return false;
}

/// Inserts config entries right after the subcommand, skipping keys the user
/// passed explicitly.
std::vector<std::string> merge_config(const std::vector<std::string>& args, CLI::App* sub, std::ostream& err) {
  const auto path = find_config_path(args);
  if (!path) return args;
  std::vector<std::string> injected;
  for (const auto& e : read_config(*path)) {
    if (e.key == "config") continue;
    const auto* opt = sub->get_option_no_throw("--" + e.key);
    if (!opt) {
      err << "warning: " << *path << ":" << e.line << ": '" << e.key << "' is not an option of "
          << sub->get_name() << "; ignored\n";
      continue;
    }
    if (given_on_command_line(args, opt)) continue;
    injected.push_back("--" + e.key + "=" + e.value);
  }
  std::vector<std::string> merged;
  merged.push_back(args.front());
  merged.insert(merged.end(), injected.begin(), injected.end());
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

// ---------------------------------------------------------------------------
// subcommands

data::SynthConfig preset_config(const std::string& name, std::uint64_t seed) {
  if (name == "multiscale") return data::multiscale_preset(seed);
  if (name == "cohort") return data::cohort_preset(seed);
  return data::night_preset(seed);
}

int cmd_synth(const Options& o, std::ostream& out) {
  auto make = [&](std::uint64_t seed) {
    auto cfg = preset_config(o.preset, seed);
    if (o.hours) cfg.hours = *o.hours;
    cfg.start_timestamp = o.start;
    return data::synth_generate(cfg);
  };
  if (o.subjects == 1) {
    const auto night = make(o.synth_seed);
    if (o.out.empty()) {
      data::write_epochs(out, night.series);
      if (!o.truth_out.empty()) data::save_truth(o.truth_out, night.transitions);
      return kOk;
    }
    if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    data::save_epochs(o.out, night.series);
    data::save_truth(o.truth_out.empty() ? workflow::truth_path_for(o.out).string() : o.truth_out,
                     night.transitions);
    return kOk;
  }
  if (o.out.empty()) throw std::invalid_argument("--subjects > 1 needs --out DIR");
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < o.subjects; ++i) {
    const auto night = make(o.synth_seed + i);
    const auto file = fs::path(o.out) / (night.series.subject_id + ".csv");
    data::save_epochs(file.string(), night.series);
    data::save_truth(workflow::truth_path_for(file).string(), night.transitions);
  }
  out << "wrote " << o.subjects << " records to " << o.out << '\n';
  return kOk;
}

std::vector<data::EpochSeries> series_of(std::vector<workflow::Record> recs) {
  std::vector<data::EpochSeries> out;
  out.reserve(recs.size());
  for (auto& r : recs) out.push_back(std::move(r.series));
  return out;
}

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_train_report(std::ostream& out, const net::TrainReport& r, bool verbose) {
  for (std::size_t e = 0; e < r.epochs.size(); ++e) {
    const auto& s = r.epochs[e];
    out << "epoch " << e + 1 << ": train_loss=" << num(s.train_loss) << " train_acc=" << pct(s.train_accuracy);
    if (s.val_loss) out << " val_loss=" << num(*s.val_loss) << " val_acc=" << pct(*s.val_accuracy);
    out << '\n';
  }
  out << "best_epoch: " << r.best_epoch + 1 << '\n' << "digest: " << r.digest << '\n';
  if (verbose) out << "wall_seconds: " << num(r.wall_seconds) << '\n';
}

int cmd_train(Options& o, std::ostream& out) {
  o.hyper.validate();
  net::ModelConfig mc;
  if (!o.kernels.empty()) {
    mc.heads.clear();
    for (auto k : o.kernels) {
      auto h = o.head;
      h.kernel_width = k;
      mc.heads.push_back(h);
    }
  } else {
    for (auto& h : mc.heads) {
      const auto k = h.kernel_width;
      h = o.head;
      h.kernel_width = k;
    }
  }
  mc.trunk_widths = o.trunk;
  mc.aux_loss_weight = o.hyper.aux_loss_weight;
  mc.seed = o.hyper.seed;
  mc.validate();

  const auto train_series = series_of(workflow::load_records(o.data, o.fill_gaps));
  const auto val_series = o.val.empty() ? std::vector<data::EpochSeries>{}
                                        : series_of(workflow::load_records(o.val, o.fill_gaps));
  auto td = workflow::prepare_training(train_series, val_series, o.context_hours, o.hyper.seed, o.max_windows);
  std::size_t sleep = 0;
  for (const auto& w : td.train) sleep += *w.label == SleepState::sleep ? 1 : 0;

  net::SleepNet model(mc);
  model.norm_stats() = td.stats;
  out << "records: " << train_series.size() << '\n'
      << "train_windows: " << td.train.size() << " (sleep " << sleep << ", awake " << td.train.size() - sleep
      << ")\n"
      << "val_windows: " << td.val.size() << '\n'
      << "parameters: " << model.parameter_count() << '\n';
  const auto report = net::train(model, td.train, td.val, o.hyper);
  print_train_report(out, report, o.verbose);
  net::save_model(model, o.model);
  out << "model: " << o.model << '\n';
  return kOk;
}

template <class Fn>
void with_output(const std::string& path, std::ostream& fallback, Fn&& fn) {
  if (path.empty()) {
    fn(fallback);
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::ios_base::failure("cannot write '" + path + "'");
  fn(f);
  if (!f) throw std::ios_base::failure("write failed for '" + path + "'");
}

int cmd_infer(const Options& o, std::ostream& out) {
  const auto model = net::load_model(o.model);
  const auto series = data::load_epochs(o.data.front(), {o.fill_gaps, fs::path(o.data.front()).stem().string()});
  const auto h = stream::infer_hypnogram(model, series);
  with_output(o.out, out, [&](std::ostream& s) { events::write_hypnogram(s, h); });
  return kOk;
}

int cmd_events(const Options& o, std::ostream& out) {
  o.rules.validate();
  std::ifstream in(o.hypnogram);
  if (!in) throw std::ios_base::failure("cannot open hypnogram '" + o.hypnogram + "'");
  const auto h = events::read_hypnogram(in);
  const auto ev = events::predict_events(h, o.rules);
  with_output(o.out, out, [&](std::ostream& s) { events::write_events(s, ev); });
  if (!o.trace.empty()) with_output(o.trace, out, [&](std::ostream& s) { events::write_trace(s, ev); });
  return kOk;
}

void print_kind(std::ostream& out, const char* name, const eval::KindCounts& k, std::size_t within,
                std::size_t nights) {
  out << "  " << name << ": TP=" << k.tp << " FP=" << k.fp << " FN=" << k.fn << " within_tolerance=" << within
      << "/" << nights << '\n';
}

int cmd_eval(const Options& o, std::ostream& out) {
  o.rules.validate();
  if (!(o.tolerance >= 0.0)) throw std::invalid_argument("--tolerance must be >= 0");
  const auto records = workflow::load_records(o.data, o.fill_gaps);
  std::vector<eval::MetricReport> states;
  std::vector<eval::MetricReport> timing;
  std::map<std::string, int> seen;
  for (const auto& path : o.models) {
    const auto model = net::load_model(path);
    auto id = fs::path(path).stem().string();
    if (const int n = seen[id]++; n > 0) id += "#" + std::to_string(n);
    const auto s = workflow::evaluate_model(id, model, records, o.rules, o.tolerance, o.per_window);
    out << "== " << id << " (" << s.nights << " records) ==\n";
    out << "state classification\n";
    eval::print_report(out, s.states);
    out << "event timing (tolerance " << o.tolerance << " min)\n";
    eval::print_report(out, s.timing);
    out << "event matching\n";
    print_kind(out, "sleep_onset", s.onset, s.onset_within, s.nights);
    print_kind(out, "wake_time", s.wake, s.wake_within, s.nights);
    if (o.verbose) {
      for (const auto& n : s.nights_detail) {
        const auto& sc = n.score;
        out << "  record " << sc.record << ": accuracy=";
        const auto acc = eval::accuracy(sc.states);
        out << (acc ? num(*acc) : std::string("undefined"));
        for (const auto& pr : sc.matches.pairs) out << ' ' << to_string(pr.kind) << "_error_min=" << pr.error_min;
        out << '\n';
      }
    }
    states.push_back(s.states);
    timing.push_back(s.timing);
  }
  eval::print_aggregate(out, "state classification", eval::aggregate_runs(states));
  eval::print_aggregate(out, "event timing", eval::aggregate_runs(timing));
  if (!o.csv.empty()) {
    std::vector<eval::MetricReport> all;
    for (auto r : states) {
      r.run_id += ":states";
      all.push_back(std::move(r));
    }
    for (auto r : timing) {
      r.run_id += ":timing";
      all.push_back(std::move(r));
    }
    with_output(o.csv, out, [&](std::ostream& s) { eval::write_reports_csv(s, all); });
  }
  return kOk;
}

int cmd_finetune(const Options& o, std::ostream& out) {
  o.hyper.validate();
  const auto base = net::load_model(o.model);
  const auto cohort = series_of(workflow::load_records(o.data, o.fill_gaps));
  const auto val = o.val.empty() ? std::vector<data::EpochSeries>{}
                                 : series_of(workflow::load_records(o.val, o.fill_gaps));
  const auto td =
      workflow::prepare_with_stats(cohort, val, base.norm_stats(), o.context_hours, o.hyper.seed, o.max_windows);
  const auto& check = td.val.empty() ? td.train : td.val;
  const double before = net::evaluate(base, check, o.hyper.aux_loss_weight).accuracy;
  net::TrainReport report;
  const auto tuned = net::finetune_transfer(base, td.train, o.hyper, {o.train_intermediate_fc}, &report);
  const double after = net::evaluate(tuned, check, o.hyper.aux_loss_weight).accuracy;
  out << "cohort_windows: " << td.train.size() << '\n';
  print_train_report(out, report, o.verbose);
  out << "cohort_accuracy_before: " << pct(before) << '\n'
      << "cohort_accuracy_after: " << pct(after) << '\n'
      << "model: " << o.out << '\n';
  net::save_model(tuned, o.out);
  return kOk;
}

int cmd_serve(const Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
  o.rules.validate();
  const auto model = net::load_model(o.model);
  if (!o.port) {
    stream::serve_stream(in, out, model, o.rules);
    return kOk;
  }
  stream::TcpOptions topt;
  topt.port = *o.port;
  topt.max_connections = o.max_connections;
  topt.on_listening = [&err](std::uint16_t p) { err << "listening on 127.0.0.1:" << p << std::endl; };
  stream::serve_tcp(model, o.rules, topt);
  return kOk;
}

int cmd_plotdata(const Options& o, std::ostream& out) {
  o.rules.validate();
  const auto model = net::load_model(o.model);
  const auto& path = o.data.front();
  const auto series = data::load_epochs(path, {o.fill_gaps, fs::path(path).stem().string()});
  const auto h = stream::infer_hypnogram(model, series);
  const auto ev = h.p.empty() ? events::SleepEvents{} : events::predict_events(h, o.rules);
  const auto truth = data::minute_truth(series, o.per_window);
  with_output(o.out, out, [&](std::ostream& s) { eval::emit_plotdata(s, h, ev, truth); });
  return kOk;
}

int dispatch(const std::string& name, Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
  if (name == "synth") return cmd_synth(o, out);
  if (name == "train") return cmd_train(o, out);
  if (name == "infer") return cmd_infer(o, out);
  if (name == "events") return cmd_events(o, out);
  if (name == "eval") return cmd_eval(o, out);
  if (name == "finetune") return cmd_finetune(o, out);
  if (name == "serve") return cmd_serve(o, in, out, err);
  if (name == "plotdata") return cmd_plotdata(o, out);
  return kValidation;
}

int run_impl(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  App a;
  build(a);
  CLI::App* sub = nullptr;
  std::vector<std::string> argv = args;
  try {
    if (!args.empty()) {
      if (auto it = a.subs.find(args.front()); it != a.subs.end()) {
        sub = it->second;
        argv = merge_config(args, sub, err);
      } else if (!args.front().starts_with("-")) {
        err << "error: unknown subcommand '" << args.front() << "'\n\n" << a.app.help();
        return kValidation;
      }
    }
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    a.app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (sub ? sub->help() : a.app.help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << a.app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << (sub ? sub->help() : a.app.help());
    return kValidation;
  }
  for (const auto& [name, s] : a.subs) {
    if (s->parsed()) return dispatch(name, a.o, in, out, err);
  }
  err << a.app.help();
  return kValidation;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  auto previous = set_warning_handler([&err](std::string_view m) { err << "warning: " << m << '\n'; });
  int code = kValidation;
  try {
    code = run_impl(args, in, out, err);
  } catch (const net::ModelFormatError& e) {
    err << "error: " << e.what() << '\n';
    code = kIo;
  } catch (const std::ios_base::failure& e) {
    err << "error: " << e.what() << '\n';
    code = kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    code = kIo;
  } catch (const std::system_error& e) {
    err << "error: " << e.what() << '\n';
    code = kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kValidation;
  }
  set_warning_handler(std::move(previous));
  return code;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return run(args, std::cin, out, err);
}

std::string help_text(const std::string& subcommand) {
  App a;
  build(a);
  if (subcommand.empty()) return a.app.help();
  return a.subs.at(subcommand)->help();
}

}  // namespace somnoflow::cli
