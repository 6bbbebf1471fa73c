// bsct: command-line front end for scans, FSD reports, training, MD and the
// summary table.  Exit codes: 0 success, 1 domain error, 2 usage error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bsct/dynamics.hpp"
#include "bsct/metrics.hpp"
#include "bsct/molecules.hpp"
#include "bsct/parallel.hpp"
#include "bsct/potential.hpp"
#include "bsct/run.hpp"
#include "bsct/scanner.hpp"
#include "bsct/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bsct;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  int jobs = 0;
  bool no_timestamp = false;
  bool quiet = false;
};

// Flags that mirror config keys.  Values are kept as strings and applied on
// top of the config file so both paths share one parser.
struct KeyFlags {
  std::vector<std::tuple<CLI::Option*, std::string, std::shared_ptr<std::string>>> flags;

  void add(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    auto value = std::make_shared<std::string>();
    flags.emplace_back(app->add_option(name, *value, help + " [" + key + "]"), key, value);
  }

  FlatConfig overrides() const {
    FlatConfig f;
    for (const auto& [opt, key, value] : flags) {
      if (opt->count() > 0) f[key] = *value;
    }
    return f;
  }
};

RunConfig resolve_config(const Globals& g, const KeyFlags& flags) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = read_run_config(g.config_path);
  FlatConfig over;
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
    over[s.substr(0, eq)] = s.substr(eq + 1);
  }
  for (const auto& kv : flags.overrides()) over[kv.first] = kv.second;
  cfg.apply(over);
  if (g.jobs > 0) {
    cfg.jobs = g.jobs;
    cfg.train.jobs = g.jobs;
  }
  cfg.validate();
  return cfg;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string stamped(const Globals& g, const std::string& text) {
  if (g.no_timestamp) return text;
  auto j = json::parse(text);
  j["generated_at"] = utc_now();
  return j.dump(2) + "\n";
}

void write_output(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, text);
}

void say(const Globals& g, const std::string& line) {
  if (!g.quiet) std::cout << line << "\n";
}

std::string num(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_scan_generate(const Globals& g, const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  const auto structures = load_xyz_dir(in);
  std::vector<SampleDecision> log;
  const auto scans = sample_scan_dataset(structures, cfg.sample_options(), &log);
  for (const auto& d : log) {
    std::string line = d.tag + " ";
    if (d.bond.first >= 0) line += std::to_string(d.bond.first) + "-" + std::to_string(d.bond.second) + " ";
    line += d.accepted ? "accepted" : "rejected: " + d.reason;
    say(g, line);
  }
  if (scans.empty()) {
    std::cerr << "warning: no scans accepted\n";
    fs::create_directories(out);
    return 0;
  }
  for (const auto& s : scans) write_scan_dir(out / scan_dir_name(s), s);
  say(g, "wrote " + std::to_string(scans.size()) + " scans to " + out.string());
  return 0;
}

int cmd_scan_evaluate(const Globals& g, const RunConfig& cfg, const fs::path& scans_dir, const std::string& spec,
                      bool use_ema, const fs::path& out) {
  const auto model = load_model(spec, use_ema);
  std::vector<ScanCurve> curves;
  for (const auto& dir : list_scan_dirs(scans_dir)) {
    const auto scan = read_scan_dir(dir);
    curves.push_back(scan_curve(scan, model.model, dir.filename().string(), model.name, cfg.jobs));
  }
  if (curves.empty()) std::cerr << "warning: no scans found in " << scans_dir << "\n";
  write_output(out, stamped(g, curves_json(curves)));
  say(g, "evaluated " + std::to_string(curves.size()) + " scans with " + model.name);
  return 0;
}

int cmd_fsd_demo(const std::string& which) {
  const auto d = synth_demo();
  auto row = [](const char* name, double fsd, double mae_f, double mae_e) {
    std::printf("%s  FSD %10.4f 1/A   force MAE %8.3f meV/A   energy MAE %8.3f meV/atom\n", name, fsd, mae_f, mae_e);
  };
  if (which == "pes1" || which == "both") row("PES1", d.fsd_pes1, d.mae_forces_pes1, d.mae_energy_pes1);
  if (which == "pes2" || which == "both") row("PES2", d.fsd_pes2, d.mae_forces_pes2, d.mae_energy_pes2);
  std::printf("FSD ratio PES2/PES1 %.2f, force MAE ratio %.2f\n", d.fsd_pes2 / d.fsd_pes1,
              d.mae_forces_pes2 / d.mae_forces_pes1);
  return 0;
}

int cmd_fsd(const Globals& g, const RunConfig& cfg, const fs::path& model, const fs::path& ref, const fs::path& out,
            const std::string& csv) {
  const auto report = aggregate_report(evaluate_fsd(read_curves(model), read_curves(ref), cfg.fsd_options(), cfg.jobs));
  write_output(out, stamped(g, fsd_report_json(report)));
  if (!csv.empty()) write_output(csv, fsd_report_csv(report));
  std::string line = "mean FSD " + num(report.mean_full) + " over " + std::to_string(report.count) + " scans";
  if (report.mean_compress) line += ", compress " + num(*report.mean_compress);
  if (report.mean_stretch) line += ", stretch " + num(*report.mean_stretch);
  say(g, line);
  return 0;
}

Dataset load_training_data(const RunConfig& cfg, const fs::path& data) {
  if (fs::is_regular_file(data)) return read_dataset(data);
  if (fs::is_directory(data)) {
    if (fs::exists(data / "dataset.json")) return read_dataset(data / "dataset.json");
    return make_training_set(load_xyz_dir(data), cfg.data);
  }
  throw Error("no training data at " + data.string());
}

int cmd_data(const Globals& g, const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  const auto d = make_training_set(load_xyz_dir(in), cfg.data);
  write_output(out, dataset_json(d));
  say(g, "wrote " + std::to_string(d.size()) + " labelled structures to " + out.string());
  return 0;
}

int cmd_train(const Globals& g, const RunConfig& cfg, const fs::path& data, const fs::path& out,
              const std::string& history) {
  const auto d = load_training_data(cfg, data);
  int last_epoch = -1;
  const auto r = train(d, cfg.model, cfg.train, [&](const LossRecord& rec) {
    if (rec.epoch != last_epoch && (rec.epoch % 10 == 0 || rec.epoch + 1 == cfg.train.epochs)) {
      say(g, "epoch " + std::to_string(rec.epoch) + " step " + std::to_string(rec.step) + " loss " + num(rec.loss) +
                 " lr " + num(rec.lr));
    }
    last_epoch = rec.epoch;
  });
  Checkpoint ck;
  ck.config = cfg.model;
  ck.params = r.params;
  ck.ema = r.ema;
  for (const auto& [k, v] : cfg.train.to_flat()) ck.metadata[k] = v;
  ck.metadata["train.samples"] = std::to_string(d.size());
  ck.metadata["train.final_epoch_loss"] = num(r.epoch_loss.back(), 17);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, ck);
  if (!history.empty()) write_output(history, loss_history_csv(r));
  say(g, "saved " + out.string() + " (" + std::to_string(parameter_count(r.params)) + " parameters, final loss " +
             num(r.epoch_loss.back()) + ")");
  return 0;
}

int cmd_md(const Globals& g, const RunConfig& cfg, const std::string& ensemble, const std::string& spec,
           bool use_ema, const fs::path& in, const std::string& out, const std::string& csv) {
  const auto model = load_model(spec, use_ema);
  Structure s = read_xyz_file(in);
  if (!s.bonds) s.bonds = perceive_bonds(s);  // fixed topology for the reference
  const auto opt = cfg.md_options(ensemble == "nve" ? Ensemble::nve : Ensemble::langevin);
  MdState st = make_state(s);
  std::mt19937_64 rng(opt.seed);
  if (opt.temperature > 0) st.velocities = maxwell_boltzmann(st.masses, opt.temperature, rng);
  auto rep = run_md(st, bind_structure(model.model, s), opt);
  rep.structure = s.tag.empty() ? in.stem().string() : s.tag;
  rep.bath_temperature = opt.temperature;
  rep.seed = opt.seed;
  if (!out.empty()) write_output(out, stamped(g, md_report_json(rep, false)));
  if (!csv.empty()) write_output(csv, md_series_csv(rep));
  std::string line = ensemble + " " + std::to_string(rep.steps.empty() ? 0 : rep.steps.back()) + " steps: drift " +
                     num(rep.drift) + " meV/atom, max 10 fs temperature jump " + num(rep.max_jump) + " K";
  if (rep.aborted) line += ", aborted at step " + std::to_string(rep.abort_step) + " (" + rep.error + ")";
  say(g, line);
  return rep.aborted ? 1 : 0;
}

int cmd_stability(const Globals& g, const RunConfig& cfg, const std::string& spec, bool use_ema, const fs::path& in,
                  const fs::path& out) {
  const auto model = load_model(spec, use_ema);
  auto structures = fs::is_directory(in) ? load_xyz_dir(in) : std::vector<Structure>{read_xyz_file(in)};
  for (auto& s : structures) {
    if (!s.bonds) s.bonds = perceive_bonds(s);
  }
  const auto reports = run_stability_protocol(model.model, structures, cfg.stability_options());
  for (std::size_t i = 0; i < structures.size(); ++i) {
    const auto per = reports.size() / structures.size();
    if (per > 0 && !reports[i * per].relaxed) {
      std::cerr << "warning: " << structures[i].tag << ": relaxation did not converge, trajectories skipped\n";
    }
  }
  json j;
  j["model"] = model.name;
  j["reports"] = json::array();
  for (const auto& r : reports) j["reports"].push_back(json::parse(md_report_json(r)));
  j["summary"] = json::array();
  for (const auto& s : summarize_jumps(reports)) {
    j["summary"].push_back({{"temperature", s.temperature},
                            {"runs", s.runs},
                            {"aborted", s.aborted},
                            {"mean_jump_all", s.mean_jump_all},
                            {"mean_jump_completed", s.mean_jump_completed ? json(*s.mean_jump_completed) : json()}});
    say(g, "T " + num(s.temperature) + " K: mean max jump " + num(s.mean_jump_all) + " K, aborted " +
               std::to_string(s.aborted) + "/" + std::to_string(s.runs));
  }
  write_output(out, stamped(g, j.dump(2) + "\n"));
  return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& inputs, const fs::path& out, const std::string& csv) {
  json rows = json::array();
  for (const auto& in : inputs) {
    const auto eq = in.find('=');
    if (eq == std::string::npos) throw Error("--inputs entries look like label=file[,file...], got '" + in + "'");
    json row;
    row["model"] = in.substr(0, eq);
    std::stringstream files(in.substr(eq + 1));
    std::string file;
    while (std::getline(files, file, ',')) {
      json doc;
      try {
        doc = json::parse(read_text_file(file));
      } catch (const json::exception& e) {
        throw Error(file + ": " + e.what());
      }
      if (doc.contains("aggregate")) {
        const auto& a = doc.at("aggregate");
        row["fsd_full"] = a.at("mean_fsd_full");
        row["fsd_compress"] = a.at("mean_fsd_compress");
        row["fsd_stretch"] = a.at("mean_fsd_stretch");
        row["fsd_scans"] = a.at("count");
      } else if (doc.contains("summary")) {
        json hottest;
        for (const auto& s : doc.at("summary")) {
          if (hottest.is_null() || s.at("temperature").get<double>() > hottest.at("temperature").get<double>()) {
            hottest = s;
          }
        }
        if (!hottest.is_null()) {
          row["md_temperature"] = hottest.at("temperature");
          row["max_jump_10fs"] = hottest.at("mean_jump_all");
          row["max_jump_10fs_completed"] = hottest.at("mean_jump_completed");
          row["md_runs"] = hottest.at("runs");
          row["md_aborted"] = hottest.at("aborted");
        }
      } else if (doc.contains("energy_drift_mev_per_atom")) {
        row["nve_drift_mev_per_atom"] = doc.at("energy_drift_mev_per_atom");
      } else {
        throw Error(file + ": not an FSD, stability or MD report");
      }
    }
    rows.push_back(row);
  }
  json j;
  j["rows"] = rows;
  write_output(out, stamped(g, j.dump(2) + "\n"));
  if (!csv.empty()) {
    const std::vector<std::string> cols{"model",          "fsd_full", "fsd_compress", "fsd_stretch",
                                        "max_jump_10fs",  "md_aborted", "md_runs",    "nve_drift_mev_per_atom"};
    std::string text;
    for (std::size_t i = 0; i < cols.size(); ++i) text += (i ? "," : "") + cols[i];
    text += "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i) text += ",";
        if (!r.contains(cols[i]) || r.at(cols[i]).is_null()) continue;
        const auto& v = r.at(cols[i]);
        text += v.is_string() ? v.get<std::string>() : v.dump();
      }
      text += "\n";
    }
    write_output(csv, text);
  }
  for (const auto& r : rows) {
    std::string line = r.at("model").get<std::string>();
    for (const auto* k : {"fsd_full", "max_jump_10fs", "nve_drift_mev_per_atom"}) {
      if (r.contains(k) && !r.at(k).is_null()) line += std::string("  ") + k + " " + num(r.at(k).get<double>());
    }
    say(g, line);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bond smoothness benchmarking toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Flat key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override a config key (key=value); repeatable");
  app.add_option("--jobs", g.jobs, "Worker threads (default: BSCT_JOBS or all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit generated_at from JSON outputs");
  app.add_flag("-q,--quiet", g.quiet, "Only print errors");

  // scan
  auto* scan = app.add_subcommand("scan", "Generate or evaluate bond scans");
  scan->require_subcommand(1);
  auto* gen = scan->add_subcommand("generate", "Sample bridge-bond scans from .xyz structures");
  std::string gen_in, gen_out;
  gen->add_option("--in", gen_in, "Directory of .xyz files")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  KeyFlags gen_flags;
  gen_flags.add(gen, "--bond-types", "scan.bond_types", "Allowed bond types, e.g. CC,CO");
  gen_flags.add(gen, "--frames", "scan.frames", "Frames per scan");
  gen_flags.add(gen, "--seed", "scan.seed", "Bond sampling seed");

  auto* ev = scan->add_subcommand("evaluate", "Evaluate a model along every scan");
  std::string ev_scans, ev_model, ev_out;
  bool ev_raw = false;
  ev->add_option("--scans", ev_scans, "Directory of scans")->required();
  ev->add_option("--model", ev_model, "Checkpoint path or 'reference'")->required();
  ev->add_option("--out", ev_out, "Output curves JSON")->required();
  ev->add_flag("--raw-weights", ev_raw, "Use the raw weights instead of the EMA");
  KeyFlags ev_flags;

  // fsd
  auto* fsd = app.add_subcommand("fsd", "Force smoothness deviation report");
  std::string fsd_model, fsd_ref, fsd_out, fsd_csv, fsd_demo;
  auto* fsd_model_opt = fsd->add_option("--model", fsd_model, "Model curves JSON");
  auto* fsd_ref_opt = fsd->add_option("--ref", fsd_ref, "Reference curves JSON");
  auto* fsd_out_opt = fsd->add_option("--out", fsd_out, "Report JSON");
  fsd->add_option("--csv", fsd_csv, "Report CSV");
  auto* demo_opt = fsd->add_option("--demo", fsd_demo, "Synthetic demonstrator")
                       ->check(CLI::IsMember({"pes1", "pes2", "both"}));
  demo_opt->excludes(fsd_model_opt)->excludes(fsd_ref_opt)->excludes(fsd_out_opt);
  KeyFlags fsd_flags;
  fsd_flags.add(fsd, "--split", "fsd.split", "Split point: min or zero");

  // data
  auto* data = app.add_subcommand("data", "Generate a labelled training set from .xyz molecules");
  std::string data_in, data_out;
  data->add_option("--in", data_in, "Directory of .xyz files")->required();
  data->add_option("--out", data_out, "Output dataset JSON")->required();
  KeyFlags data_flags;
  data_flags.add(data, "--samples", "data.samples_per_molecule", "Frames per molecule");
  data_flags.add(data, "--seed", "data.seed", "Sampling seed");

  // train
  auto* tr = app.add_subcommand("train", "Train the potential");
  std::string tr_data, tr_out, tr_hist;
  tr->add_option("--data", tr_data, "Dataset JSON, or a directory with dataset.json or .xyz molecules")->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--history", tr_hist, "Loss history CSV");
  KeyFlags tr_flags;
  tr_flags.add(tr, "--epochs", "train.epochs", "Epochs");
  tr_flags.add(tr, "--lr", "train.lr", "Peak learning rate");
  tr_flags.add(tr, "--seed", "train.seed", "Initialization and shuffling seed");
  tr_flags.add(tr, "--weight-decay", "train.weight_decay", "Decoupled weight decay");
  tr_flags.add(tr, "--head", "model.head", "Force head: gradient or direct");
  tr_flags.add(tr, "--graph", "model.graph", "Graph: hard_knn, diff_knn or diff_knn_memeff");

  // md
  auto* md = app.add_subcommand("md", "Run NVE or Langevin dynamics");
  std::string md_ens, md_model, md_in, md_out, md_csv;
  bool md_raw = false;
  md->add_option("ensemble", md_ens, "nve or langevin")->required()->check(CLI::IsMember({"nve", "langevin"}));
  md->add_option("--model", md_model, "Checkpoint path or 'reference'")->required();
  md->add_option("--in", md_in, "Starting structure (.xyz)")->required();
  md->add_option("--out", md_out, "Report JSON");
  md->add_option("--csv", md_csv, "Series CSV");
  md->add_flag("--raw-weights", md_raw, "Use the raw weights instead of the EMA");
  KeyFlags md_flags;
  md_flags.add(md, "--steps", "md.steps", "Steps");
  md_flags.add(md, "--dt", "md.dt", "Time step (fs)");
  md_flags.add(md, "--temperature", "md.temperature", "Bath / initial temperature (K)");
  md_flags.add(md, "--friction", "md.friction", "Langevin friction (1/fs)");
  md_flags.add(md, "--seed", "md.seed", "Velocity and noise seed");
  md_flags.add(md, "--record-every", "md.record_every", "Sampling stride");

  // stability
  auto* stab = app.add_subcommand("stability", "Relax, equilibrate and run Langevin MD over temperatures and seeds");
  std::string st_model, st_in, st_out;
  bool st_raw = false;
  stab->add_option("--model", st_model, "Checkpoint path or 'reference'")->required();
  stab->add_option("--in", st_in, "Structure (.xyz) or directory of structures")->required();
  stab->add_option("--out", st_out, "Report JSON")->required();
  stab->add_flag("--raw-weights", st_raw, "Use the raw weights instead of the EMA");
  KeyFlags st_flags;
  st_flags.add(stab, "--temperatures", "md.temperatures", "Comma-separated bath temperatures (K)");
  st_flags.add(stab, "--seeds", "md.seeds", "Seeds per temperature");
  st_flags.add(stab, "--steps", "md.production_steps", "Production steps");
  st_flags.add(stab, "--equilibration", "md.equilibration_steps", "Equilibration steps");
  st_flags.add(stab, "--seed", "md.seed", "Base seed");

  // report
  auto* rep = app.add_subcommand("report", "Join FSD and MD reports into one summary table");
  std::vector<std::string> rep_inputs;
  std::string rep_out, rep_csv;
  rep->add_option("--inputs", rep_inputs, "label=file[,file...] per model")->required();
  rep->add_option("--out", rep_out, "Summary JSON")->required();
  rep->add_option("--csv", rep_csv, "Summary CSV");

  try {
    app.parse(argc, argv);
    if (*fsd && fsd_demo.empty() && (fsd_model.empty() || fsd_ref.empty() || fsd_out.empty())) {
      throw CLI::RequiredError("fsd needs --model, --ref and --out (or --demo)");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_scan_generate(g, resolve_config(g, gen_flags), gen_in, gen_out);
    if (*ev) return cmd_scan_evaluate(g, resolve_config(g, ev_flags), ev_scans, ev_model, !ev_raw, ev_out);
    if (*fsd) {
      const auto cfg = resolve_config(g, fsd_flags);
      if (!fsd_demo.empty()) return cmd_fsd_demo(fsd_demo);
      return cmd_fsd(g, cfg, fsd_model, fsd_ref, fsd_out, fsd_csv);
    }
    if (*data) return cmd_data(g, resolve_config(g, data_flags), data_in, data_out);
    if (*tr) return cmd_train(g, resolve_config(g, tr_flags), tr_data, tr_out, tr_hist);
    if (*md) return cmd_md(g, resolve_config(g, md_flags), md_ens, md_model, !md_raw, md_in, md_out, md_csv);
    if (*stab) return cmd_stability(g, resolve_config(g, st_flags), st_model, !st_raw, st_in, st_out);
    if (*rep) return cmd_report(g, rep_inputs, rep_out, rep_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
