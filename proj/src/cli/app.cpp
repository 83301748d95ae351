#include "sicr/cli/app.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "sicr/errors.hpp"
#include "sicr/eval/csp.hpp"
#include "sicr/eval/results.hpp"
#include "sicr/eval/runner.hpp"
#include "sicr/explain/lrp.hpp"
#include "sicr/io/checkpoint.hpp"
#include "sicr/signal/trialset_io.hpp"
#include "sicr/signal/welch.hpp"

namespace sicr::cli {

namespace fs = std::filesystem;

io::Json to_json(const RunConfig& c) {
  return io::Json{{"seed", c.seed},
                  {"out", c.out},
                  {"scenario", int(c.scenario)},
                  {"baseline", c.baseline},
                  {"cohort", io::to_json(c.cohort)},
                  {"train", io::to_json(c.train)}};
}

void merge(const io::Json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("config.seed: expected a nonnegative integer");
      c.seed = v.get<std::uint64_t>();
      c.cohort.seed = c.train.seed = c.seed;
    } else if (k == "out") {
      if (!v.is_string()) throw ConfigError("config.out: expected a string");
      c.out = v.get<std::string>();
    } else if (k == "scenario") {
      if (!v.is_number_integer() && !v.is_string()) throw ConfigError("config.scenario: expected 1 or 2");
      c.scenario = eval::parse_scenario(v.is_string() ? v.get<std::string>() : std::to_string(v.get<int>()));
    } else if (k == "baseline") {
      if (!v.is_string()) throw ConfigError("config.baseline: expected a string");
      c.baseline = v.get<std::string>();
      if (c.baseline != "none" && c.baseline != "csp") {
        throw ConfigError("config.baseline: expected none|csp, got '" + c.baseline + "'");
      }
    } else if (k != "cohort" && k != "train") {
      throw ConfigError("config: unknown key '" + k + "'");
    }
  }
  if (j.contains("cohort")) io::merge(j["cohort"], c.cohort);
  if (j.contains("train")) io::merge(j["train"], c.train);
}

void apply_override(io::Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  io::Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("--set: unknown key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  io::Json value;
  try {
    value = io::Json::parse(text);
  } catch (const io::Json::parse_error&) {
    value = text;
  }
  *node = value;
}

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, backbone, scenario, variant, weights, baseline;
  std::vector<std::string> sets;
  std::vector<std::string> inputs;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "master seed (cohort and training)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--backbone", f.backbone, "deepconvnet | eegnet");
  cmd->add_option("--scenario", f.scenario, "1 | 2");
  cmd->add_option("--variant", f.variant, "I | II | III | IV");
  cmd->add_option("--weights", f.weights, "alpha,beta,gamma");
  cmd->add_option("--set", f.sets, "override key=value (dotted path), repeatable");
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) merge(io::read_json_file(f.config), c);
  if (f.seed) c.seed = c.cohort.seed = c.train.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.backbone) c.train.encoder.backbone = model::parse_backbone(*f.backbone);
  if (f.scenario) c.scenario = eval::parse_scenario(*f.scenario);
  if (f.variant) c.train.variant = train::parse_variant(*f.variant);
  if (f.weights) c.train.weights = train::LossWeights::parse(*f.weights);
  if (f.baseline) {
    io::Json j{{"baseline", *f.baseline}};
    merge(j, c);
  }
  if (!f.sets.empty()) {
    auto doc = to_json(c);
    for (const auto& s : f.sets) apply_override(doc, s);
    RunConfig updated;
    // Re-read without the seed fan-out: the document already holds every
    // resolved seed, and an override of "seed" alone should fan out again.
    const bool seed_overridden = std::any_of(f.sets.begin(), f.sets.end(),
                                             [](const std::string& s) { return s.rfind("seed=", 0) == 0; });
    const auto master = doc["seed"];
    doc.erase("seed");
    merge(doc, updated);
    updated.seed = master.get<std::uint64_t>();
    if (seed_overridden) updated.cohort.seed = updated.train.seed = updated.seed;
    c = updated;
  }
  c.cohort.validate();
  c.train.weights.validate();
  return c;
}

// Encoder geometry follows the data.
void fit_encoder_to(RunConfig& c, const std::vector<signal::Trial>& trials) {
  if (trials.empty()) throw ConfigError("trial set is empty");
  c.train.encoder.n_channels = trials.front().n_channels;
  c.train.encoder.n_times = trials.front().n_times;
  c.train.encoder.sample_rate = trials.front().sample_rate;
  c.train.validate();
}

std::vector<signal::Trial> load_or_generate(const std::string& path, const RunConfig& c) {
  if (!path.empty()) return signal::load_trialset(path).trials;
  return signal::generate_cohort(c.cohort);
}

fs::path prepare_out(const RunConfig& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + c.out + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("short write to " + path.string());
}

void write_config(const fs::path& dir, const RunConfig& c) {
  write_text(dir / "config.json", to_json(c).dump(2) + "\n");
}

std::string optional_input(const Flags& f, std::size_t i) { return f.inputs.size() > i ? f.inputs[i] : std::string(); }

void expect_inputs(const Flags& f, std::size_t lo, std::size_t hi, const char* usage) {
  if (f.inputs.size() < lo || f.inputs.size() > hi) throw ConfigError(std::string("usage: ") + usage);
}

int cmd_synth(const Flags& f, std::ostream& out) {
  expect_inputs(f, 0, 0, "sicr synth [flags]");
  const RunConfig c = resolve(f);
  const auto dir = prepare_out(c);
  signal::TrialSet set;
  set.trials = signal::generate_cohort(c.cohort);
  signal::save_trialset((dir / "trials.trialset").string(), set);
  write_config(dir, c);
  out << "wrote " << set.trials.size() << " trials to " << (dir / "trials.trialset").string() << '\n';
  return kOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  expect_inputs(f, 0, 1, "sicr train [flags] [TRIALSET]");
  RunConfig c = resolve(f);
  const auto trials = load_or_generate(optional_input(f, 0), c);
  fit_encoder_to(c, trials);
  const auto dir = prepare_out(c);
  write_config(dir, c);
  const auto plan = eval::plan_fit_all(trials, c.train.seed);
  train::RngStreams rngs(c.train.seed);
  train::SicrModel<float> model(c.train, rngs.init);
  const auto history =
      train::fit(model, eval::select(trials, plan.train), eval::select(trials, plan.val), c.train, rngs);
  std::ostringstream csv;
  history.write_csv(csv);
  write_text(dir / "history.csv", csv.str());
  io::save_checkpoint((dir / "checkpoint.json").string(), model, c.train, history.best_epoch);
  out << "trained " << history.epochs.size() << " epochs, best epoch " << history.best_epoch << ", val acc "
      << history.epochs.at(history.best_epoch).val_acc << '\n';
  return kOk;
}

void write_table(const fs::path& dir, const std::string& stem, const eval::ResultTable& t) {
  std::ostringstream csv, json;
  eval::write_results_csv(csv, t);
  eval::write_results_json(json, t);
  write_text(dir / (stem + ".csv"), csv.str());
  write_text(dir / (stem + ".json"), json.str());
}

eval::PlanCallback progress(std::ostream& out, const std::string& label) {
  return [&out, label](const eval::ProtocolPlan& p, train::SicrModel<float>&,
                       const std::vector<eval::ResultRow>& rows) {
    out << label << " plan " << p.fold;
    for (const auto& r : rows) out << "  subject " << r.subject_id << ": " << r.accuracy;
    out << '\n' << std::flush;
  };
}

int cmd_eval(const Flags& f, std::ostream& out) {
  expect_inputs(f, 0, 1, "sicr eval [flags] [TRIALSET]");
  RunConfig c = resolve(f);
  const auto trials = load_or_generate(optional_input(f, 0), c);
  fit_encoder_to(c, trials);
  const auto dir = prepare_out(c);
  write_config(dir, c);
  const auto plans = eval::make_plans(c.scenario, trials, c.train.seed);
  const auto rows = c.baseline == "csp" ? eval::run_csp_plans(trials, plans)
                                        : eval::run_plans(trials, plans, c.train, progress(out, "eval"));
  const auto table = eval::aggregate(rows);
  write_table(dir, "results", table);
  out << "scenario " << eval::to_string(c.scenario) << " mean " << table.mean << " std " << table.std << '\n';
  return kOk;
}

int cmd_ablate(const Flags& f, std::ostream& out) {
  expect_inputs(f, 0, 1, "sicr ablate [flags] [TRIALSET]");
  RunConfig c = resolve(f);
  const auto trials = load_or_generate(optional_input(f, 0), c);
  fit_encoder_to(c, trials);
  const auto dir = prepare_out(c);
  write_config(dir, c);
  std::vector<train::Variant> variants{train::Variant::I, train::Variant::II, train::Variant::III,
                                       train::Variant::IV};
  if (f.variant) variants = {c.train.variant};
  std::vector<eval::ResultRow> all;
  for (auto v : variants) {
    auto one = eval::run_ablation(trials, {v}, c.train, c.scenario, progress(out, train::to_string(v)));
    const auto& t = one.front().table;
    out << "variant " << train::to_string(v) << " mean " << t.mean << " std " << t.std << '\n';
    all.insert(all.end(), t.rows.begin(), t.rows.end());
  }
  // One table over every variant keeps the shared schema; summaries per
  // variant go to stdout and can be recomputed from the rows.
  write_table(dir, "ablation", eval::aggregate(all));
  return kOk;
}

std::string psd_csv(const std::vector<signal::Trial>& trials) {
  if (trials.empty()) throw ConfigError("trial set is empty");
  const auto& first = trials.front();
  const std::size_t seg = std::min<std::size_t>(first.n_times, std::size_t(std::lround(first.sample_rate)));
  std::map<int, std::pair<std::vector<std::vector<double>>, std::size_t>> acc;
  std::vector<double> freqs;
  for (const auto& t : trials) {
    const auto psd = signal::welch_psd(t, seg);
    freqs = psd.frequencies;
    auto& [sum, n] = acc[t.label];
    if (sum.empty()) sum.assign(psd.power.size(), std::vector<double>(psd.frequencies.size(), 0.0));
    for (std::size_t c = 0; c < psd.power.size(); ++c) {
      for (std::size_t b = 0; b < psd.power[c].size(); ++b) sum[c][b] += psd.power[c][b];
    }
    ++n;
  }
  std::ostringstream s;
  s.precision(9);
  s << "class,channel,frequency,power\n";
  for (const auto& [label, entry] : acc) {
    const auto& [sum, n] = entry;
    for (std::size_t c = 0; c < sum.size(); ++c) {
      for (std::size_t b = 0; b < freqs.size(); ++b) {
        s << label << ',' << c << ',' << freqs[b] << ',' << sum[c][b] / double(n) << '\n';
      }
    }
  }
  return s.str();
}

std::vector<signal::Trial> explain_inputs(const Flags& f, RunConfig& c, const train::TrainConfig& model_config) {
  c.train = model_config;
  auto trials = load_or_generate(optional_input(f, 1), c);
  fit_encoder_to(c, trials);
  const auto& e = model_config.encoder;
  if (c.train.encoder.n_channels != e.n_channels || c.train.encoder.n_times != e.n_times) {
    throw ConfigError("trial geometry does not match the checkpoint");
  }
  return trials;
}

int cmd_explain(const Flags& f, std::ostream& out) {
  expect_inputs(f, 1, 2, "sicr explain [flags] CHECKPOINT [TRIALSET]");
  RunConfig c = resolve(f);
  auto ckpt = io::load_checkpoint<float>(f.inputs[0]);
  const auto trials = explain_inputs(f, c, ckpt.config);
  const auto dir = prepare_out(c);
  write_config(dir, c);
  auto& net = ckpt.model->network();

  std::map<int, std::vector<explain::RelevanceMap>> maps;
  for (const auto& t : trials) maps[t.label].push_back(explain::lrp_epsilon(net, t, t.label));
  std::ostringstream topo;
  topo.precision(9);
  topo << "class,channel,relevance\n";
  for (const auto& [label, m] : maps) {
    const auto v = explain::topographic_relevance(m);
    for (std::size_t ch = 0; ch < v.size(); ++ch) topo << label << ',' << ch << ',' << v[ch] << '\n';
  }
  write_text(dir / "topomap.csv", topo.str());

  std::ostringstream emb;
  explain::export_embeddings(emb, net, trials);
  write_text(dir / "embeddings.csv", emb.str());
  write_text(dir / "psd.csv", psd_csv(trials));
  out << "explained " << trials.size() << " trials into " << dir.string() << '\n';
  return kOk;
}

int cmd_export(const Flags& f, std::ostream& out) {
  expect_inputs(f, 1, 2, "sicr export [flags] CHECKPOINT [TRIALSET]");
  RunConfig c = resolve(f);
  auto ckpt = io::load_checkpoint<float>(f.inputs[0]);
  const auto trials = explain_inputs(f, c, ckpt.config);
  const auto dir = prepare_out(c);
  write_config(dir, c);
  std::ostringstream emb;
  explain::export_embeddings(emb, ckpt.model->network(), trials);
  write_text(dir / "embeddings.csv", emb.str());
  out << "exported embeddings of " << trials.size() << " trials\n";
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Subject-invariant class-relevant EEG representation learning", "sicr");
  app.require_subcommand(1);
  Flags flags;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Flags&, std::ostream&);
  };
  const Command commands[] = {
      {"synth", "generate a synthetic cohort (TRIALSET v1)", cmd_synth},
      {"train", "train one model; writes checkpoint and history", cmd_train},
      {"eval", "run scenario I or II and tabulate accuracies", cmd_eval},
      {"ablate", "run Models I-IV on shared plans", cmd_ablate},
      {"explain", "LRP topomaps, embeddings and PSD from a checkpoint", cmd_explain},
      {"export", "dump f_ir, f_re and f_g features from a checkpoint", cmd_export},
  };
  std::map<CLI::App*, const Command*> by_app;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub, flags);
    if (std::string(cmd.name) == "eval") sub->add_option("--baseline", flags.baseline, "none | csp");
    sub->add_option("inputs", flags.inputs, "input files");
    by_app[sub] = &cmd;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  const Command* chosen = nullptr;
  for (auto* sub : app.get_subcommands()) chosen = by_app.at(sub);
  try {
    return chosen->run(flags, out);
  } catch (const ProtocolError& e) {
    err << "protocol error: " << e.what() << '\n';
    return kProtocolError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kOtherError;
  }
}

}  // namespace sicr::cli
