// Copyright 2026 The fedpriv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// fedpriv command-line front end. Every artifact is a file; every run that
// draws randomness needs an explicit --seed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedpriv/datastore.hpp"
#include "fedpriv/dpsgd.hpp"
#include "fedpriv/evaluation.hpp"
#include "fedpriv/federation.hpp"
#include "fedpriv/nn_core.hpp"
#include "fedpriv/run_config.hpp"
#include "fedpriv/tcp.hpp"

namespace {

using namespace fedpriv;

enum Exit { kOk = 0, kUsage = 2, kTransport = 3, kProtocol = 4, kBudget = 5 };

int exit_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTransportError:
    case ErrorCode::kTimedOut:
      return kTransport;
    case ErrorCode::kProtocolError:
    case ErrorCode::kDecodeError:
      return kProtocol;
    case ErrorCode::kBudgetExceeded:
      return kBudget;
    default:
      return kUsage;
  }
}

int exit_for(wire::AbortReason reason) {
  switch (reason) {
    case wire::AbortReason::kBudgetExceeded: return kBudget;
    case wire::AbortReason::kTimedOut:
    case wire::AbortReason::kTransportError: return kTransport;
    default: return kProtocol;
  }
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  bytes::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::string& path) {
  const auto raw = bytes::read_file(path);
  return std::string(raw.begin(), raw.end());
}

// Config file first, then whichever flags were given on top.
struct ConfigFlags {
  std::string path;
  std::map<std::string, std::string> overrides;

  RunConfig resolve() const {
    RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
    for (const auto& [k, v] : overrides) set_run_config(c, k, v);
    validate_run_config(c);
    return c;
  }
};

// Registers --flag bound to config key `key`; the value is applied after the file.
void config_flag(CLI::App* app, ConfigFlags& flags, const std::string& name,
                 const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(
      name, [&flags, key](const std::string& v) { flags.overrides[key] = v; }, help + " [" + key + "]");
}

std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw Error(ErrorCode::kConfigError, "--seed (or seed= in the config) is required");
  return *c.seed;
}

void check_model_fits(const NetworkDims& dims, const Dataset& data) {
  if (dims.input_dim != data.feature_dim || dims.output_dim < data.num_classes) {
    throw Error(ErrorCode::kShapeError,
                "model " + std::to_string(dims.input_dim) + "x" + std::to_string(dims.hidden_dim) + "x" +
                    std::to_string(dims.output_dim) + " does not fit dataset (dim " +
                    std::to_string(data.feature_dim) + ", " + std::to_string(data.num_classes) +
                    " classes)");
  }
}

void print_dataset_summary(const Dataset& d) {
  std::map<std::uint32_t, std::size_t> per_speaker;
  for (const auto& s : d.sequences) ++per_speaker[s.speaker_id];
  std::cout << "feature_dim\t" << d.feature_dim << "\nnum_classes\t" << d.num_classes
            << "\nspeakers\t" << per_speaker.size() << "\nsequences\t" << d.sequences.size()
            << "\nframes\t" << d.n_frames() << '\n';
}

std::string summary_text(const CoordinatorSummary& s) {
  std::string out = "steps_completed\t" + std::to_string(s.steps_completed) + "\ngrads_received\t" +
                    std::to_string(s.grads_received) + "\naborted\t" + (s.aborted ? "true" : "false") + '\n';
  if (s.abort_reason) {
    out += "abort_reason\t" + std::string(wire::reason_name(*s.abort_reason)) + "\nabort_text\t" +
           s.abort_text + '\n';
  }
  for (std::size_t w = 0; w < s.spend.size(); ++w) {
    const auto& sp = s.spend[w];
    out += "worker " + std::to_string(w) + "\treleases " + std::to_string(sp.releases) + "\tnoisy " +
           std::to_string(sp.noisy_releases) + "\tepsilon " + fmt(sp.epsilon.value()) + "\tdelta " +
           fmt(sp.delta.value()) + '\n';
  }
  return out;
}

// ----------------------------------------------------------------- commands

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  if (!a.seed) throw Error(ErrorCode::kConfigError, "--seed is required");
  const SynthSpec spec = a.spec.empty() ? SynthSpec{} : parse_synth_spec(read_text(a.spec));
  RandomSource rng(*a.seed);
  const Dataset d = synth_generate(spec, rng);
  write_dataset(d, a.out);
  print_dataset_summary(d);
  if (spec.outlier) {
    std::cout << "outlier_speaker\t" << spec.speaker_id_base + spec.outlier->index
              << "\noutlier_multiplier\t" << fmt(spec.outlier->offset_multiplier) << '\n';
  }
  return kOk;
}

struct InspectArgs {
  std::string data, model;
};

int cmd_inspect(const InspectArgs& a) {
  if (a.data.empty() == a.model.empty()) {
    throw Error(ErrorCode::kConfigError, "give exactly one of --data or --model");
  }
  if (!a.data.empty()) {
    print_dataset_summary(read_dataset(a.data));
  } else {
    const Network net = read_network(a.model);
    const auto& d = net.dims();
    std::cout << "input_dim\t" << d.input_dim << "\nhidden_dim\t" << d.hidden_dim << "\noutput_dim\t"
              << d.output_dim << "\nparameters\t" << net.parameter_count() << "\nhash\t"
              << parameter_hash(net) << '\n';
  }
  return kOk;
}

struct WarmStartArgs {
  ConfigFlags cfg;
  std::string data, out, init_model;
};

int cmd_warm_start(const WarmStartArgs& a) {
  const RunConfig c = a.cfg.resolve();
  const std::uint64_t seed = require_seed(c);
  if (a.data.empty() && !c.data) throw Error(ErrorCode::kConfigError, "--data is required");
  const Dataset data = read_dataset(a.data.empty() ? *c.data : a.data);
  require_training_data(data);
  RandomSource rng(seed);
  Network net = a.init_model.empty() ? init_network(c.dims, rng) : read_network(a.init_model);
  check_model_fits(net.dims(), data);
  const double before = mean_loss(net, data);
  net = warm_start(std::move(net), data, c.epochs, c.dp.learning_rate, c.dp.batch_size, rng);
  write_network(net, a.out);
  std::cout << "epochs\t" << c.epochs << "\nloss_before\t" << fmt(before) << "\nloss_after\t"
            << fmt(mean_loss(net, data)) << "\naccuracy\t" << fmt(accuracy(net, data).overall_accuracy)
            << '\n';
  return kOk;
}

struct CoordinatorArgs {
  ConfigFlags cfg;
  std::string init_model, transcript, summary;
  int timeout_ms = 60'000;
};

SessionConfig session_from(const RunConfig& c, const std::string& init_model) {
  SessionConfig s;
  s.n_workers = c.workers;
  s.total_steps = c.steps;
  s.lr = c.dp.learning_rate;
  s.dims = c.dims;
  if (!init_model.empty()) {
    s.init_model = read_network(init_model);
    s.dims = s.init_model->dims();
  } else {
    s.init_seed = require_seed(c);
  }
  return s;
}

int cmd_coordinator(const CoordinatorArgs& a) {
  const RunConfig c = a.cfg.resolve();
  const SessionConfig session = session_from(c, a.init_model);
  tcp::CoordinatorOptions opts;
  opts.listen = tcp::parse_endpoint(c.addr);
  opts.timeout = std::chrono::milliseconds(a.timeout_ms);
  opts.on_listening = [](std::uint16_t port) { std::cout << "listening\t" << port << std::endl; };
  const auto run = tcp::run_coordinator(session, opts);
  if (!a.transcript.empty()) write_text(a.transcript, format_transcript(run.transcript));
  const std::string summary = summary_text(run.summary);
  if (!a.summary.empty()) write_text(a.summary, summary);
  std::cout << summary;
  if (run.summary.aborted) return exit_for(*run.summary.abort_reason);
  return kOk;
}

WorkerSetup setup_from(const RunConfig& c, const std::string& data_path) {
  WorkerSetup s;
  s.worker_id = c.worker_id;
  s.dp = c.dp;
  if (data_path.empty() && !c.data) throw Error(ErrorCode::kConfigError, "a dataset path is required");
  s.data = std::make_shared<const Dataset>(read_dataset(data_path.empty() ? *c.data : data_path));
  require_training_data(*s.data);
  s.budget = c.budget();
  s.seed = require_seed(c);
  return s;
}

struct WorkerArgs {
  ConfigFlags cfg;
  std::string data, out, ledger;
  int timeout_ms = 60'000;
};

int cmd_worker(const WorkerArgs& a) {
  const RunConfig c = a.cfg.resolve();
  WorkerSetup setup = setup_from(c, a.data);
  tcp::WorkerOptions opts;
  opts.connect = tcp::parse_endpoint(c.addr);
  opts.timeout = std::chrono::milliseconds(a.timeout_ms);
  const WorkerResult r = tcp::run_worker(std::move(setup), opts);
  if (!a.ledger.empty()) write_text(a.ledger, r.ledger.report());
  if (!a.out.empty() && r.network) write_network(*r.network, a.out);
  std::cout << "steps_applied\t" << r.steps_applied << "\nspent_epsilon\t" << fmt(r.ledger.spent().epsilon)
            << "\nspent_delta\t" << fmt(r.ledger.spent().delta) << '\n';
  if (r.status == WorkerStatus::kAborted) {
    std::cout << "aborted\t" << wire::reason_name(*r.abort_reason) << '\t' << r.abort_text << '\n';
    return exit_for(*r.abort_reason);
  }
  return kOk;
}

struct SimulateArgs {
  std::vector<std::string> worker_configs, tests;
  std::optional<std::uint32_t> steps;
  std::optional<std::uint64_t> seed;
  std::string report, init_model, out_dir;
};

// Worker i reads its own RunConfig; a missing seed= defaults to
// session seed + 1 + worker id, and a missing worker.id to i.
int cmd_simulate(const SimulateArgs& a) {
  if (!a.seed) throw Error(ErrorCode::kConfigError, "--seed is required");
  std::vector<RunConfig> configs;
  for (std::size_t i = 0; i < a.worker_configs.size(); ++i) {
    const std::string text = read_text(a.worker_configs[i]);
    RunConfig c = parse_run_config(text);
    bool has_id = false;
    for (const auto& [k, v] : parse_key_values(text)) has_id |= k == "worker.id";
    if (!has_id) c.worker_id = static_cast<std::uint32_t>(i);
    if (a.steps) c.steps = *a.steps;
    if (!c.seed) c.seed = *a.seed + 1 + c.worker_id;
    validate_run_config(c);
    configs.push_back(c);
  }
  RunConfig lead = configs.front();
  lead.workers = static_cast<std::uint32_t>(configs.size());
  lead.seed = *a.seed;
  const SessionConfig session = session_from(lead, a.init_model);
  std::vector<WorkerSetup> setups;
  for (const auto& c : configs) {
    setups.push_back(setup_from(c, ""));
    check_model_fits(session.dims, *setups.back().data);
  }
  std::vector<std::shared_ptr<const Dataset>> datasets;
  for (const auto& s : setups) datasets.push_back(s.data);

  const SessionResult r = inproc_session(session, setups);

  Network initial = session.init_model ? *session.init_model : [&] {
    RandomSource rng(session.init_seed);
    return init_network(session.dims, rng);
  }();
  const Network& final_model = *r.workers.front().network;
  if (!a.out_dir.empty()) {
    std::filesystem::create_directories(a.out_dir);
    const std::filesystem::path dir(a.out_dir);
    write_network(final_model, (dir / "model.fdpnet").string());
    write_text((dir / "transcript.tsv").string(), format_transcript(r.transcript));
    write_text((dir / "summary.txt").string(), summary_text(r.summary));
    for (std::size_t w = 0; w < r.workers.size(); ++w) {
      write_text((dir / ("ledger-" + std::to_string(w) + ".tsv")).string(), r.workers[w].ledger.report());
    }
  }

  std::vector<Dataset> extra;
  for (const auto& t : a.tests) extra.push_back(read_dataset(t));
  std::vector<LabeledDataset> testsets;
  for (std::size_t w = 0; w < datasets.size(); ++w) {
    testsets.push_back({"worker-" + std::to_string(setups[w].worker_id), datasets[w].get()});
  }
  for (std::size_t i = 0; i < extra.size(); ++i) testsets.push_back({a.tests[i], &extra[i]});
  const auto rows = experiment_report({{"initial", &initial}, {"federated", &final_model}}, testsets);
  if (!a.report.empty()) write_text(a.report, render_tsv(rows));
  std::cout << summary_text(r.summary) << '\n' << render_text(rows);
  if (r.summary.aborted) return exit_for(*r.summary.abort_reason);
  return kOk;
}

struct EvalArgs {
  std::string model, data, baseline;
  std::optional<std::uint32_t> probe_speaker;
  bool tsv = false;
};

int cmd_eval(const EvalArgs& a) {
  const Network net = read_network(a.model);
  const Dataset data = read_dataset(a.data);
  check_model_fits(net.dims(), data);
  const EvalReport rep = accuracy(net, data);
  std::cout << "speaker\tframes\tcorrect\taccuracy\n";
  for (const auto& [id, sp] : rep.per_speaker) {
    std::cout << id << '\t' << sp.n_frames << '\t' << sp.n_correct << '\t' << fmt(sp.accuracy()) << '\n';
  }
  std::cout << "total\t" << rep.n_frames_total << '\t' << rep.n_correct_total << '\t'
            << fmt(rep.overall_accuracy) << '\n';
  if (a.baseline.empty() != !a.probe_speaker.has_value()) {
    throw Error(ErrorCode::kConfigError, "--baseline and --probe-speaker go together");
  }
  if (!a.baseline.empty()) {
    const Network base = read_network(a.baseline);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
      if (data.sequences[i].speaker_id == *a.probe_speaker) idx.push_back(i);
    }
    const Dataset probe = subset(data, idx, data.provenance);
    const GapProbe g = membership_gap(net, base, probe);
    char line[160];
    std::snprintf(line, sizeof line, "probe_speaker\t%u\nbaseline_accuracy\t%.17g\ncandidate_accuracy\t%.17g\ngap_points\t%.3f\n",
                  *a.probe_speaker, g.baseline_acc, g.candidate_acc, g.gap_points());
    std::cout << line << "verdict\t" << (is_leak(g) ? "LEAK" : "NO-LEAK") << '\n';
  }
  return kOk;
}

struct StepsArgs {
  std::uint32_t epochs = 0;
  std::optional<std::uint64_t> sequences;
  std::string data;
  std::uint32_t batch = 8;
};

int cmd_steps(const StepsArgs& a) {
  std::uint64_t n = 0;
  if (!a.data.empty()) n = read_dataset(a.data).sequences.size();
  else if (a.sequences) n = *a.sequences;
  else throw Error(ErrorCode::kConfigError, "give --data or --sequences");
  if (a.batch == 0 || n == 0) throw Error(ErrorCode::kConfigError, "batch and sequence count must be >= 1");
  std::cout << std::uint64_t{a.epochs} * ((n + a.batch - 1) / a.batch) << '\n';
  return kOk;
}

struct BudgetArgs {
  ConfigFlags cfg;
  std::string ledger;
};

// Projects the spend of fed.steps releases, or re-reads a ledger report.
int cmd_budget(const BudgetArgs& a) {
  if (!a.ledger.empty()) {
    std::cout << read_text(a.ledger);
    return kOk;
  }
  const RunConfig c = a.cfg.resolve();
  AccountLedger ledger(c.budget());
  for (std::uint32_t s = 0; s < c.steps && c.dp.noisy; ++s) ledger.spend("step-" + std::to_string(s), c.dp.step_params);
  std::cout << "steps\t" << c.steps << "\nsigma\t" << fmt(release_sigma(c.dp, c.dp.batch_size))
            << "\nspent_epsilon\t" << fmt(ledger.spent().epsilon) << "\nspent_delta\t"
            << fmt(ledger.spent().delta) << "\nbudget_epsilon\t" << fmt(ledger.budget().epsilon)
            << "\nbudget_delta\t" << fmt(ledger.budget().delta) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedpriv: federated training with differentially private gradient releases"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic speaker dataset");
  s->add_option("--spec", synth.spec, "SynthSpec key=value file (defaults if omitted)");
  s->add_option("--out", synth.out, "Output dataset path")->required();
  s->add_option("--seed", synth.seed, "Random seed");

  InspectArgs inspect;
  auto* in = app.add_subcommand("inspect", "Summarize a dataset or model file");
  in->add_option("--data", inspect.data, "Dataset path");
  in->add_option("--model", inspect.model, "Model path");

  WarmStartArgs warm;
  auto* w = app.add_subcommand("warm-start", "Non-private SGD on public data");
  w->add_option("--config", warm.cfg.path, "RunConfig file");
  w->add_option("--data", warm.data, "Training dataset");
  w->add_option("--out", warm.out, "Output model path")->required();
  w->add_option("--init-model", warm.init_model, "Start from this model instead of a fresh init");
  config_flag(w, warm.cfg, "--epochs", "train.epochs", "Epochs");
  config_flag(w, warm.cfg, "--lr", "train.lr", "Learning rate");
  config_flag(w, warm.cfg, "--batch", "train.batch", "Batch size");
  config_flag(w, warm.cfg, "--hidden", "model.hidden", "LSTM hidden units");
  config_flag(w, warm.cfg, "--classes", "model.classes", "Output classes");
  config_flag(w, warm.cfg, "--input-dim", "model.input_dim", "Feature dimension");
  config_flag(w, warm.cfg, "--seed", "seed", "Random seed");

  CoordinatorArgs coord;
  auto* c = app.add_subcommand("coordinator", "Run the averaging coordinator over TCP");
  c->add_option("--config", coord.cfg.path, "RunConfig file");
  config_flag(c, coord.cfg, "--listen", "fed.addr", "host:port to listen on");
  config_flag(c, coord.cfg, "--workers", "fed.workers", "Number of workers");
  config_flag(c, coord.cfg, "--steps", "fed.steps", "Federated steps");
  config_flag(c, coord.cfg, "--lr", "train.lr", "Learning rate sent to workers");
  config_flag(c, coord.cfg, "--seed", "seed", "Replica init seed");
  config_flag(c, coord.cfg, "--hidden", "model.hidden", "LSTM hidden units");
  config_flag(c, coord.cfg, "--classes", "model.classes", "Output classes");
  config_flag(c, coord.cfg, "--input-dim", "model.input_dim", "Feature dimension");
  c->add_option("--init-model", coord.init_model, "Initial model (instead of --seed)");
  c->add_option("--transcript", coord.transcript, "Write the message transcript here");
  c->add_option("--summary", coord.summary, "Write the run summary here");
  c->add_option("--timeout-ms", coord.timeout_ms, "Per-message timeout")->check(CLI::PositiveNumber);

  WorkerArgs worker;
  auto* wk = app.add_subcommand("worker", "Run one DP-SGD worker over TCP");
  wk->add_option("--config", worker.cfg.path, "RunConfig file");
  wk->add_option("--data", worker.data, "Private training dataset");
  wk->add_option("--out", worker.out, "Write the final model here");
  wk->add_option("--ledger", worker.ledger, "Write the privacy ledger here");
  wk->add_option("--timeout-ms", worker.timeout_ms, "Per-message timeout")->check(CLI::PositiveNumber);
  config_flag(wk, worker.cfg, "--connect", "fed.addr", "Coordinator host:port");
  config_flag(wk, worker.cfg, "--id", "worker.id", "Worker id (0..n-1)");
  config_flag(wk, worker.cfg, "--budget-eps", "budget.epsilon", "Total epsilon budget");
  config_flag(wk, worker.cfg, "--budget-delta", "budget.delta", "Total delta budget");
  config_flag(wk, worker.cfg, "--seed", "seed", "Worker random seed");

  SimulateArgs sim;
  auto* sm = app.add_subcommand("simulate", "Run a whole federated session in one process");
  sm->add_option("--workers-config", sim.worker_configs, "One RunConfig file per worker")->required();
  sm->add_option("--steps", sim.steps, "Federated steps (overrides fed.steps)");
  sm->add_option("--seed", sim.seed, "Session seed");
  sm->add_option("--report", sim.report, "Write the accuracy report (TSV) here");
  sm->add_option("--init-model", sim.init_model, "Initial model (instead of seeding)");
  sm->add_option("--out-dir", sim.out_dir, "Write model, ledgers and transcript here");
  sm->add_option("--test", sim.tests, "Extra evaluation datasets");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Frame accuracy, optionally a membership gap probe");
  e->add_option("--model", ev.model, "Model to evaluate")->required();
  e->add_option("--data", ev.data, "Evaluation dataset")->required();
  e->add_option("--baseline", ev.baseline, "Baseline model for the gap probe");
  e->add_option("--probe-speaker", ev.probe_speaker, "Speaker id whose frames form the probe set");

  StepsArgs steps;
  auto* st = app.add_subcommand("steps", "Convert epochs to federated steps");
  st->add_option("--epochs", steps.epochs, "Epochs")->required();
  st->add_option("--data", steps.data, "Dataset (for its sequence count)");
  st->add_option("--sequences", steps.sequences, "Sequence count");
  st->add_option("--batch", steps.batch, "Batch size");

  BudgetArgs budget;
  auto* b = app.add_subcommand("budget", "Project or print privacy spend");
  b->add_option("--config", budget.cfg.path, "RunConfig file");
  b->add_option("--ledger", budget.ledger, "Print this ledger report");
  config_flag(b, budget.cfg, "--steps", "fed.steps", "Releases to project");
  config_flag(b, budget.cfg, "--epsilon-step", "dp.epsilon_step", "Per-release epsilon");
  config_flag(b, budget.cfg, "--delta-step", "dp.delta_step", "Per-release delta");
  config_flag(b, budget.cfg, "--batch", "train.batch", "Batch size");
  config_flag(b, budget.cfg, "--clip", "dp.clip", "Clip bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*in) return cmd_inspect(inspect);
    if (*w) return cmd_warm_start(warm);
    if (*c) return cmd_coordinator(coord);
    if (*wk) return cmd_worker(worker);
    if (*sm) return cmd_simulate(sim);
    if (*e) return cmd_eval(ev);
    if (*st) return cmd_steps(steps);
    if (*b) return cmd_budget(budget);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_for(err.code());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
