// Command-line front end for the cross-subject transfer toolkit. One
// subcommand per pipeline stage: synth -> preprocess -> distance -> train
// -> evaluate -> report. Exit codes: 0 success, 1 computation failure,
// 2 usage or input error. Relative output paths resolve under the
// SAGAN_OUT_DIR environment variable when it is set.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sagan/evaluation.hpp"
#include "sagan/runconfig.hpp"
#include "sagan/synthetic.hpp"

namespace {

using namespace sagan;
namespace fs = std::filesystem;

std::string resolve_out(const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  if (p.is_absolute()) return path;
  const char* base = std::getenv("SAGAN_OUT_DIR");
  if (!base || !*base) return path;
  return (fs::path(base) / p).string();
}

RunConfig load_config_or_defaults(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

std::string stamp(const RunConfig& cfg) {
  return "# config " + run_config_digest(cfg) + " seed " +
         std::to_string(cfg.sagan.seed) + "\n";
}

// ---------------------------------------------------------------------------
// Preprocessed-directory access
// ---------------------------------------------------------------------------

nlohmann::json read_preprocess_manifest(const std::string& data_dir) {
  const std::string path = data_dir + "/preprocess.json";
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest " + path + ": " + e.what());
  }
}

std::vector<std::string> read_subject_list(const std::string& data_dir) {
  try {
    return read_preprocess_manifest(data_dir)
        .at("subjects")
        .get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest in " + data_dir + ": " + e.what());
  }
}

int read_n_classes(const std::string& data_dir) {
  try {
    return read_preprocess_manifest(data_dir).at("n_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest in " + data_dir + ": " + e.what());
  }
}

Domain load_split(const std::string& data_dir, const std::string& subject,
                  const std::string& split) {
  const std::string path = data_dir + "/" + subject + "-" + split + ".bin";
  LoadedDomain loaded = load_domain(path);
  require<IoError>(loaded.domain.subject_id == subject,
                   path + ": holds subject '" + loaded.domain.subject_id +
                       "', expected '" + subject + "'");
  return std::move(loaded.domain);
}

void require_known_subject(const std::vector<std::string>& subjects,
                           const std::string& id, const std::string& what) {
  if (std::find(subjects.begin(), subjects.end(), id) != subjects.end())
    return;
  std::string known;
  for (const std::string& s : subjects) known += (known.empty() ? "" : ", ") + s;
  throw ConfigError(what + " subject '" + id + "' not in this dataset (have " +
                    known + ")");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::vector<double> magnitudes = {0.0, 0.4};
  std::size_t channels = 16;
  std::size_t classes = 6;
  std::uint64_t seed = 0;
  double stddev = 0.05;
  double label_noise = 0.0;
  double rate = 30.0;
  double bout_seconds = 4.0;
  double gap_seconds = 0.5;
  std::size_t bouts = 2;
  double missing_rate = 0.01;
  std::size_t files = 5;
};

void cmd_synth(const SynthArgs& a) {
  SubjectSpec base = base_subject("s", a.channels, a.classes, a.seed);
  base.sample_stddev = a.stddev;
  base.label_noise = a.label_noise;
  std::vector<SubjectSpec> family = shift_family(base, a.magnitudes);
  for (std::size_t i = 0; i < family.size(); ++i)
    family[i].subject_id = "s" + std::to_string(i + 1);

  RawSynthConfig rcfg;
  rcfg.sample_rate_hz = a.rate;
  rcfg.bout_seconds = a.bout_seconds;
  rcfg.gap_seconds = a.gap_seconds;
  rcfg.bouts_per_class_per_file = a.bouts;
  rcfg.missing_rate = a.missing_rate;
  rcfg.files_per_subject = a.files;

  const std::string out = resolve_out(a.out);
  WrittenDataset written = write_raw_dataset(out, family, rcfg);

  nlohmann::json manifest;
  manifest["magnitudes"] = a.magnitudes;
  manifest["channels"] = a.channels;
  manifest["classes"] = a.classes;
  manifest["seed"] = a.seed;
  manifest["sample_stddev"] = a.stddev;
  manifest["label_noise"] = a.label_noise;
  manifest["sample_rate_hz"] = a.rate;
  manifest["bout_seconds"] = a.bout_seconds;
  manifest["gap_seconds"] = a.gap_seconds;
  manifest["bouts_per_class_per_file"] = a.bouts;
  manifest["missing_rate"] = a.missing_rate;
  manifest["files_per_subject"] = a.files;
  manifest["digest"] = hex64(fnv1a64(manifest.dump()));
  atomic_write_file(out + "/synth.json", manifest.dump(2) + "\n");

  std::cout << "synth: wrote " << family.size() << " subjects x " << a.files
            << " files (" << a.classes << " classes, " << a.channels
            << " channels) to " << out << "\n";
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string in;
  std::string out;
  std::string config;
  std::string channel_spec;
  std::string label_map;
};

// Data files are named <subject>-adl<run>.txt; runs 1-3 train, 4 validates,
// 5 tests.
std::map<std::string, std::vector<fs::path>> scan_data_files(
    const std::string& in_dir) {
  require<IoError>(fs::is_directory(in_dir),
                   "no such input directory: " + in_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  require<IoError>(!files.empty(), "no .txt data files in " + in_dir);

  std::map<std::string, std::vector<fs::path>> by_subject;
  for (const fs::path& file : files) {
    const std::string stem = file.stem().string();
    const std::size_t tag = stem.rfind("-adl");
    require<PipelineError>(tag != std::string::npos && tag > 0,
                          "cannot infer subject from file name '" +
                              file.filename().string() +
                              "' (expected <subject>-adl<run>.txt)");
    const std::string run = stem.substr(tag + 4);
    require<PipelineError>(!run.empty() &&
                              run.find_first_not_of("0123456789") ==
                                  std::string::npos,
                          "file '" + file.filename().string() +
                              "' has no trailing run number");
    by_subject[stem.substr(0, tag)].push_back(file);
  }
  return by_subject;
}

void cmd_preprocess(const PreprocessArgs& a) {
  const RunConfig cfg = load_config_or_defaults(a.config);
  const std::string cspec_path =
      a.channel_spec.empty() ? a.in + "/channel.spec" : a.channel_spec;
  const std::string lmap_path =
      a.label_map.empty() ? a.in + "/labels.map" : a.label_map;

  ChannelSpec cspec;
  LabelMap lmap;
  try {
    cspec = parse_channel_spec(read_file(cspec_path));
  } catch (const PipelineError& e) {
    throw PipelineError(cspec_path + ": " + e.what());
  }
  try {
    lmap = parse_label_map(read_file(lmap_path));
  } catch (const PipelineError& e) {
    throw PipelineError(lmap_path + ": " + e.what());
  }

  double rate = cfg.sample_rate_hz;
  if (fs::exists(a.in + "/dataset.json")) {
    try {
      rate = nlohmann::json::parse(read_file(a.in + "/dataset.json"))
                 .at("sample_rate_hz")
                 .get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(a.in + "/dataset.json: " + e.what());
    }
  }

  std::vector<SubjectFiles> subjects;
  for (const auto& [subject, files] : scan_data_files(a.in)) {
    SubjectFiles sf;
    sf.subject_id = subject;
    for (const fs::path& file : files) {
      try {
        sf.recordings.push_back(parse_recording(read_file(file.string()),
                                                cspec, lmap, subject,
                                                file.stem().string(), rate));
      } catch (const PipelineError& e) {
        throw PipelineError(file.string() + ": " + e.what());
      }
    }
    subjects.push_back(std::move(sf));
  }

  AssembledDataset ds = assemble_domains(subjects, cfg.assemble);

  const std::string out = resolve_out(a.out);
  const std::string digest = run_config_digest(cfg);
  const std::uint64_t seed = cfg.sagan.seed;
  std::size_t windows = 0;
  nlohmann::json window_counts;
  std::vector<std::string> ids;
  for (const SubjectDomains& sd : ds.subjects) {
    ids.push_back(sd.subject_id);
    save_domain(out + "/" + sd.subject_id + "-train.bin", sd.train, digest,
                seed);
    save_domain(out + "/" + sd.subject_id + "-validation.bin", sd.validation,
                digest, seed);
    save_domain(out + "/" + sd.subject_id + "-test.bin", sd.test, digest,
                seed);
    window_counts[sd.subject_id] = {{"train", sd.train.size()},
                                    {"validation", sd.validation.size()},
                                    {"test", sd.test.size()}};
    windows += sd.train.size() + sd.validation.size() + sd.test.size();
  }
  save_feature_space(out + "/space.bin", ds.space, digest, seed);

  nlohmann::json manifest;
  manifest["subjects"] = ids;
  manifest["n_classes"] = ds.n_classes;
  manifest["dim"] = ds.space.k();
  manifest["windows"] = std::move(window_counts);
  manifest["config_digest"] = digest;
  manifest["seed"] = seed;
  atomic_write_file(out + "/preprocess.json", manifest.dump(2) + "\n");

  std::cout << "preprocess: " << ids.size() << " subjects, " << ds.n_classes
            << " classes, " << ds.space.k() << " features, " << windows
            << " windows -> " << out << "\n";
}

// ---------------------------------------------------------------------------
// distance
// ---------------------------------------------------------------------------

struct DistanceArgs {
  std::string data;
  std::string target;
  std::vector<std::string> sources;
  std::string config;
  std::string out;
};

void cmd_distance(const DistanceArgs& a) {
  const RunConfig cfg = load_config_or_defaults(a.config);
  const std::vector<std::string> subjects = read_subject_list(a.data);
  require_known_subject(subjects, a.target, "target");

  std::vector<std::string> sources = a.sources;
  if (sources.empty())
    for (const std::string& s : subjects)
      if (s != a.target) sources.push_back(s);
  require<ConfigError>(!sources.empty(), "distance: no candidate sources");

  const Domain target = as_unlabeled_target(load_split(a.data, a.target, "train"));
  std::vector<Domain> candidates;
  std::size_t n_sub = std::min(cfg.w1_subsample, target.size());
  for (const std::string& s : sources) {
    require_known_subject(subjects, s, "source");
    candidates.push_back(load_split(a.data, s, "train"));
    n_sub = std::min(n_sub, candidates.back().size());
  }

  RankConfig rc;
  rc.n_sub = n_sub;
  rc.n_repeats = cfg.w1_repeats;
  rc.seed = cfg.sagan.seed;
  const std::vector<RankedSource> ranked = rank_sources(target, candidates, rc);

  std::string table = stamp(cfg);
  table += "# source distance\n";
  std::string summary;
  for (const RankedSource& r : ranked) {
    table += r.subject_id + " " + format_double(r.distance) + "\n";
    summary += (summary.empty() ? "" : ", ") + r.subject_id + " (" +
               format_fixed(r.distance, 3) + ")";
  }
  if (!a.out.empty()) atomic_write_file(resolve_out(a.out), table);
  std::cout << "distance: target " << a.target << "; ranked: " << summary
            << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string source;
  std::string target;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config_or_defaults(a.config);
  if (a.seed_set) cfg.sagan.seed = a.seed;
  const std::vector<std::string> subjects = read_subject_list(a.data);
  require_known_subject(subjects, a.source, "source");
  require_known_subject(subjects, a.target, "target");
  require<ConfigError>(a.source != a.target,
                       "train: source and target must differ");

  const Domain source = load_split(a.data, a.source, "train");
  const Domain target =
      as_unlabeled_target(load_split(a.data, a.target, "train"));

  SaganConfig run = cfg.sagan;
  run.feature_dim = source.dim();
  run.n_classes = read_n_classes(a.data);

  FitResult fr = fit(source, target, run);

  const std::string ck = resolve_out(
      a.out.empty() ? a.source + "-to-" + a.target + ".ck" : a.out);
  save_classifier_checkpoint(ck, fr.classifier, run);
  write_loss_trace(ck + ".loss.txt", fr.state, stamp(cfg));
  write_selection_trace(ck + ".selection.txt", fr.state, stamp(cfg));

  std::cout << "train " << a.source << "->" << a.target << ": "
            << fr.state.epochs_run << " epochs, best epoch "
            << fr.state.best_epoch << ", score "
            << format_fixed(fr.state.best_score, 4)
            << (fr.state.degraded ? ", degraded" : "") << " -> " << ck << "\n";
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string confusion;
  std::string checkpoint;
  bool matrix = false;
  std::string data;
  std::string source;
  std::string target;
  std::string split = "test";
  std::string mode = "sagan";
  std::string modes = "no-transfer,knn-pca,sagan,supervised";
  std::string config;
  std::string out;
};

void evaluate_confusion_file(const EvaluateArgs& a) {
  ConfusionMatrix cm;
  try {
    cm = parse_confusion(read_file(a.confusion));
  } catch (const EvalError& e) {
    throw ConfigError(a.confusion + ": " + e.what());
  }
  const double wf1 = weighted_f1(cm);
  std::cout << "evaluate: weighted F1 " << format_fixed(wf1, 4) << " over "
            << cm.total() << " windows (" << cm.n_classes << " classes) from "
            << a.confusion << "\n";
  if (a.out.empty()) return;
  const std::vector<ClassMetrics> metrics = class_metrics(cm);
  nlohmann::json j;
  j["n_classes"] = cm.n_classes;
  j["total"] = cm.total();
  j["weighted_f1"] = wf1;
  nlohmann::json f1 = nlohmann::json::array(),
                 support = nlohmann::json::array();
  for (const ClassMetrics& m : metrics) {
    f1.push_back(m.f1);
    support.push_back(m.support);
  }
  j["f1"] = std::move(f1);
  j["support"] = std::move(support);
  atomic_write_file(resolve_out(a.out), j.dump(2) + "\n");
}

void evaluate_checkpoint(const EvaluateArgs& a) {
  require<ConfigError>(!a.data.empty() && !a.target.empty(),
                       "evaluate: --checkpoint needs --data and --target");
  ClassifierCheckpoint ck = load_classifier_checkpoint(a.checkpoint);
  const std::vector<std::string> subjects = read_subject_list(a.data);
  require_known_subject(subjects, a.target, "target");
  const Domain test = load_split(a.data, a.target, a.split);

  EvalReport report = evaluate(ck.classifier, test);
  report.source_id = a.source.empty() ? "-" : a.source;
  report.target_id = a.target;
  report.mode = eval_mode_from_name(a.mode);
  report.seed = ck.config.seed;
  report.config_digest = detail::sagan_config_digest(ck.config);
  if (!a.source.empty()) {
    require_known_subject(subjects, a.source, "source");
    const Domain src = load_split(a.data, a.source, "train");
    const Domain tgt = load_split(a.data, a.target, "train");
    const RunConfig defaults;
    const std::size_t n_sub =
        std::min({defaults.w1_subsample, src.size(), tgt.size()});
    report.wasserstein = w1_estimate(
        src.features, tgt.features, n_sub, defaults.w1_repeats,
        derive_seed(ck.config.seed, "w1:" + a.source + "->" + a.target));
  }

  std::cout << "evaluate " << a.mode << " " << report.source_id << "->"
            << report.target_id << " (" << a.split << "): weighted F1 "
            << format_fixed(report.weighted_f1, 4) << " over "
            << report.confusion.total() << " windows\n";
  if (!a.out.empty()) save_report(resolve_out(a.out), report);
}

void evaluate_matrix(const EvaluateArgs& a) {
  require<ConfigError>(!a.data.empty() && !a.out.empty(),
                       "evaluate: --matrix needs --data and --out");
  const RunConfig cfg = load_config_or_defaults(a.config);

  std::vector<EvalMode> modes;
  std::istringstream ms(a.modes);
  std::string tok;
  while (std::getline(ms, tok, ',')) modes.push_back(eval_mode_from_name(tok));

  std::vector<SubjectDomains> subjects;
  for (const std::string& id : read_subject_list(a.data)) {
    SubjectDomains sd;
    sd.subject_id = id;
    sd.train = load_split(a.data, id, "train");
    sd.validation = load_split(a.data, id, "validation");
    sd.test = load_split(a.data, id, "test");
    subjects.push_back(std::move(sd));
  }

  MatrixConfig mc;
  mc.sagan = cfg.sagan;
  mc.knn = cfg.knn;
  mc.w1_subsample = cfg.w1_subsample;
  mc.w1_repeats = cfg.w1_repeats;
  mc.seed = cfg.sagan.seed;
  const std::vector<MatrixCell> cells = run_matrix(subjects, modes, mc);

  const std::string out = resolve_out(a.out);
  fs::create_directories(out);
  std::size_t failed = 0;
  for (const MatrixCell& cell : cells) {
    const std::string base = out + "/" + cell.report.source_id + "-to-" +
                             cell.report.target_id + "-" +
                             eval_mode_name(cell.report.mode);
    if (cell.failed) {
      ++failed;
      atomic_write_file(base + ".failed.txt", stamp(cfg) + cell.error + "\n");
      continue;
    }
    save_report(base + ".json", cell.report);
    if (cell.report.mode == EvalMode::Sagan) {
      write_loss_trace(base + ".loss.txt", cell.train_state, stamp(cfg));
      write_selection_trace(base + ".selection.txt", cell.train_state,
                            stamp(cfg));
    }
  }
  std::cout << "matrix: " << cells.size() << " cells, " << failed
            << " failed -> " << out << "\n";
}

void cmd_evaluate(const EvaluateArgs& a) {
  const int chosen = (!a.confusion.empty() ? 1 : 0) +
                     (!a.checkpoint.empty() ? 1 : 0) + (a.matrix ? 1 : 0);
  require<ConfigError>(chosen == 1,
                       "evaluate: pass exactly one of --confusion, "
                       "--checkpoint, --matrix");
  if (!a.confusion.empty())
    evaluate_confusion_file(a);
  else if (!a.checkpoint.empty())
    evaluate_checkpoint(a);
  else
    evaluate_matrix(a);
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string in;
  std::string reference;
  std::string out;
};

void cmd_report(const ReportArgs& a) {
  require<IoError>(fs::is_directory(a.in), "no such directory: " + a.in);
  std::vector<fs::path> json_files;
  for (const auto& entry : fs::directory_iterator(a.in))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      json_files.push_back(entry.path());
  std::sort(json_files.begin(), json_files.end());

  std::vector<EvalReport> reports;
  std::size_t skipped = 0;
  for (const fs::path& file : json_files) {
    try {
      reports.push_back(load_report(file.string()));
    } catch (const ConfigError&) {
      ++skipped;  // not a report (manifest, metrics file, ...)
    }
  }
  require<ConfigError>(!reports.empty(),
                       "report: no readable report files in " + a.in);

  ReferenceScores ref;
  if (!a.reference.empty())
    ref = parse_reference_scores(read_file(a.reference));
  const std::string table = render_comparison_table(reports, ref);
  std::cout << table;

  // Recovery lines for every pair with all three bounding modes present.
  std::map<std::pair<std::string, std::string>,
           std::map<EvalMode, const EvalReport*>> by_pair;
  for (const EvalReport& r : reports)
    by_pair[{r.source_id, r.target_id}][r.mode] = &r;
  std::string recovery = "# source target ratio recovered_gap\n";
  std::size_t recovery_rows = 0;
  for (const auto& [pair, cells] : by_pair) {
    if (!cells.count(EvalMode::Sagan) || !cells.count(EvalMode::Supervised) ||
        !cells.count(EvalMode::NoTransfer))
      continue;
    const Recovery r = relative_recovery(*cells.at(EvalMode::Sagan),
                                          *cells.at(EvalMode::Supervised),
                                          *cells.at(EvalMode::NoTransfer));
    recovery += pair.first + " " + pair.second + " " +
                format_fixed(r.ratio, 4) + " " +
                (r.has_gap ? format_fixed(r.recovered_gap, 4) : "-") + "\n";
    ++recovery_rows;
  }

  if (!a.out.empty()) {
    const std::string out = resolve_out(a.out);
    fs::create_directories(out);
    std::set<std::string> digests;
    std::set<std::uint64_t> seeds;
    for (const EvalReport& r : reports) {
      digests.insert(r.config_digest);
      seeds.insert(r.seed);
    }
    std::string provenance = "# config";
    for (const std::string& d : digests) provenance += " " + d;
    if (seeds.size() == 1)
      provenance += " seed " + std::to_string(*seeds.begin());
    else
      provenance += " seeds " + std::to_string(seeds.size());
    provenance += "\n";
    atomic_write_file(out + "/table.txt", provenance + table);
    if (recovery_rows > 0)
      atomic_write_file(out + "/recovery.txt", provenance + recovery);
    std::size_t curves = 0;
    for (const auto& entry : fs::directory_iterator(a.in)) {
      if (!entry.is_regular_file()) continue;
      const std::string name = entry.path().filename().string();
      if (name.ends_with(".loss.txt") || name.ends_with(".selection.txt")) {
        fs::copy_file(entry.path(), fs::path(out) / name,
                      fs::copy_options::overwrite_existing);
        ++curves;
      }
    }
    std::cout << "report: " << reports.size() << " cells, " << by_pair.size()
              << " pairs, " << recovery_rows << " recovery rows, " << curves
              << " curve files -> " << out;
    if (skipped) std::cout << " (" << skipped << " non-report files skipped)";
    std::cout << "\n";
  } else {
    std::cout << "report: " << reports.size() << " cells, " << by_pair.size()
              << " pairs\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Cross-subject transfer toolkit: synthesize or ingest wearable-sensor "
      "recordings, learn an adversarial source-to-target feature map, and "
      "benchmark the transferred classifier."};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand(
      "synth", "Write a synthetic multi-subject raw dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd
      ->add_option("--magnitudes", synth.magnitudes,
                   "Ascending translation magnitude per subject")
      ->delimiter(',');
  synth_cmd->add_option("--channels", synth.channels, "Sensor channels");
  synth_cmd->add_option("--classes", synth.classes, "Activity classes");
  synth_cmd->add_option("--seed", synth.seed, "Base random seed");
  synth_cmd->add_option("--stddev", synth.stddev, "Per-class sample spread");
  synth_cmd->add_option("--label-noise", synth.label_noise,
                        "Fraction of flipped labels");
  synth_cmd->add_option("--rate", synth.rate, "Sample rate in Hz");
  synth_cmd->add_option("--bout-seconds", synth.bout_seconds,
                        "Length of one labeled activity bout");
  synth_cmd->add_option("--gap-seconds", synth.gap_seconds,
                        "Unlabeled gap between bouts");
  synth_cmd->add_option("--bouts", synth.bouts, "Bouts per class per file");
  synth_cmd->add_option("--missing-rate", synth.missing_rate,
                        "Probability of a missing sensor reading");
  synth_cmd->add_option("--files", synth.files,
                        "Recordings per subject (runs 1-3 train, 4 "
                        "validation, 5 test)");
  synth_cmd->callback([&] { cmd_synth(synth); });

  PreprocessArgs pre;
  CLI::App* pre_cmd = app.add_subcommand(
      "preprocess",
      "Clean, window, and project raw recordings into per-subject domains");
  pre_cmd->add_option("--in", pre.in, "Raw dataset directory")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre_cmd->add_option("--config", pre.config, "Run-config file")
      ->check(CLI::ExistingFile);
  pre_cmd->add_option("--channel-spec", pre.channel_spec,
                      "Channel spec path (default <in>/channel.spec)");
  pre_cmd->add_option("--label-map", pre.label_map,
                      "Label map path (default <in>/labels.map)");
  pre_cmd->callback([&] { cmd_preprocess(pre); });

  DistanceArgs dist;
  CLI::App* dist_cmd = app.add_subcommand(
      "distance", "Rank candidate source subjects by transport distance");
  dist_cmd->add_option("--data", dist.data, "Preprocessed directory")
      ->required();
  dist_cmd->add_option("--target", dist.target, "Target subject")->required();
  dist_cmd
      ->add_option("--sources", dist.sources,
                   "Candidate sources (default: all other subjects)")
      ->delimiter(',');
  dist_cmd->add_option("--config", dist.config, "Run-config file")
      ->check(CLI::ExistingFile);
  dist_cmd->add_option("--out", dist.out, "Write the ranked table here");
  dist_cmd->callback([&] { cmd_distance(dist); });

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "Adversarially fit the source-to-target map and classifier");
  train_cmd->add_option("--data", train.data, "Preprocessed directory")
      ->required();
  train_cmd->add_option("--source", train.source, "Source subject")
      ->required();
  train_cmd->add_option("--target", train.target, "Target subject")
      ->required();
  train_cmd->add_option("--config", train.config, "Run-config file")
      ->check(CLI::ExistingFile);
  CLI::Option* seed_opt =
      train_cmd->add_option("--seed", train.seed, "Override the config seed");
  train_cmd->add_option(
      "--out", train.out,
      "Checkpoint path (default <source>-to-<target>.ck)");
  train_cmd->callback([&] {
    train.seed_set = seed_opt->count() > 0;
    cmd_train(train);
  });

  EvaluateArgs eval;
  CLI::App* eval_cmd = app.add_subcommand(
      "evaluate",
      "Score a checkpoint, a confusion-matrix file, or the full "
      "source-target matrix");
  CLI::Option* conf_opt = eval_cmd->add_option(
      "--confusion", eval.confusion, "Confusion-matrix text file to score");
  CLI::Option* ck_opt = eval_cmd->add_option(
      "--checkpoint", eval.checkpoint, "Classifier checkpoint to score");
  CLI::Option* matrix_opt = eval_cmd->add_flag(
      "--matrix", eval.matrix,
      "Run every ordered source-target pair under --modes");
  conf_opt->excludes(ck_opt)->excludes(matrix_opt);
  ck_opt->excludes(matrix_opt);
  eval_cmd->add_option("--data", eval.data, "Preprocessed directory");
  eval_cmd->add_option("--source", eval.source,
                       "Source subject (labels the report)");
  eval_cmd->add_option("--target", eval.target, "Target subject");
  eval_cmd->add_option("--split", eval.split,
                       "Target split to score (train, validation, test)");
  eval_cmd->add_option("--mode", eval.mode,
                       "Mode label for single-checkpoint reports");
  eval_cmd->add_option("--modes", eval.modes,
                       "Comma-separated modes for --matrix");
  eval_cmd->add_option("--config", eval.config, "Run-config file")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval.out,
                       "Report file (or directory for --matrix)");
  eval_cmd->callback([&] { cmd_evaluate(eval); });

  ReportArgs report;
  CLI::App* report_cmd = app.add_subcommand(
      "report", "Merge report files into comparison and recovery tables");
  report_cmd->add_option("--in", report.in, "Directory of report files")
      ->required();
  report_cmd->add_option("--reference", report.reference,
                         "External baseline scores to juxtapose")
      ->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report.out,
                         "Write table, recovery, and curve files here");
  report_cmd->callback([&] { cmd_report(report); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const PipelineError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SaganError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
