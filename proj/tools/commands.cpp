#include "commands.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "nsda/aggregation.hpp"
#include "nsda/detector.hpp"
#include "nsda/filter.hpp"
#include "nsda/io.hpp"
#include "nsda/metrics.hpp"
#include "nsda/segmentation.hpp"
#include "nsda/simulation.hpp"
#include "nsda/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Relative --out paths resolve under $NSDA_OUT_ROOT when it is set.
fs::path resolve_out(const fs::path& path) {
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("NSDA_OUT_ROOT")) return fs::path(root) / path;
  return path;
}

struct FilterDesignOpts {
  int order = 6;
  double low = 0.5, high = 16.0, atten = 40.0, rate = 256.0;
  int response_points = 200;
  std::string out;
};

int run_filter_design(const FilterDesignOpts& opt) {
  const auto filter =
      nsda::signal::design_cheby2_bandpass(opt.order, opt.low, opt.high, opt.atten, opt.rate);

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!opt.out.empty()) {
    file.open(resolve_out(opt.out));
    if (!file) throw nsda::DataError("cannot write " + opt.out);
    os = &file;
  }

  *os << "b0,b1,b2,a1,a2\n";
  for (const auto& s : filter.sections)
    *os << nsda::format_double(s.b0) << ',' << nsda::format_double(s.b1) << ','
        << nsda::format_double(s.b2) << ',' << nsda::format_double(s.a1) << ','
        << nsda::format_double(s.a2) << '\n';

  *os << "\nfreq_hz,magnitude_db\n";
  const double f_min = std::min(0.01, opt.low / 10.0);
  const double f_max = opt.rate / 2.0 * 0.999;
  std::vector<double> freqs;
  for (int i = 0; i < opt.response_points; ++i) {
    const double t = static_cast<double>(i) / (opt.response_points - 1);
    freqs.push_back(f_min * std::pow(f_max / f_min, t));
  }
  freqs.push_back(opt.low);
  freqs.push_back(opt.high);
  std::sort(freqs.begin(), freqs.end());
  for (double f : freqs) {
    const double mag = std::abs(nsda::signal::frequency_response(filter, f));
    *os << nsda::format_double(f) << ',' << nsda::format_double(20.0 * std::log10(mag + 1e-300))
        << '\n';
  }
  return 0;
}

// Full preprocessing chain for one raw recording. Inputs already at 32 Hz
// are taken as preprocessed.
nsda::Recording preprocess(const nsda::Recording& raw) {
  if (raw.sample_rate_hz == nsda::kTargetRateHz) return raw;
  const auto filter =
      nsda::signal::design_cheby2_bandpass(6, 0.5, 16.0, 40.0, raw.sample_rate_hz);
  const auto rec32 = nsda::signal::filter_and_decimate(raw, filter, nsda::kTargetRateHz);
  return nsda::signal::rescale_to_int16(rec32).recording;
}

std::vector<nsda::AnnotationTrack> annotations_for(const std::vector<nsda::AnnotationTrack>& all,
                                                   const std::string& patient_id,
                                                   int duration_s) {
  std::vector<nsda::AnnotationTrack> out;
  for (const auto& t : all) {
    if (t.patient_id != patient_id) continue;
    auto track = t;
    if (track.labels.size() < static_cast<std::size_t>(duration_s))
      track.labels.resize(duration_s, 0);
    out.push_back(std::move(track));
  }
  if (out.empty()) throw nsda::DataError("no annotations for patient " + patient_id);
  return out;
}

int run_segment(const std::string& recording, const std::string& annotations,
                const std::string& out) {
  const auto raw = nsda::load_recording(recording);
  const auto rec = preprocess(raw);
  const int duration = static_cast<int>(std::floor(rec.duration_s()));
  const auto tracks =
      annotations_for(nsda::load_annotations_csv(annotations), rec.patient_id, duration);
  const auto set = nsda::signal::segment_recording(rec, tracks);

  std::ofstream os(resolve_out(out));
  if (!os) throw nsda::DataError("cannot write " + out);
  os << "patient_id,start_s,label\n";
  for (const auto& seg : set.segments)
    os << seg.patient_id << ',' << seg.start_s << ',' << nsda::to_string(seg.label) << '\n';
  std::cerr << "wrote " << set.size() << " segments to " << out << "\n";
  return 0;
}

struct TrainOpts {
  std::vector<std::string> recordings;
  std::string annotations;
  std::string out;
  std::uint64_t seed = 1;
  std::string detector_id = "detector";
  nsda::detect::TrainHyper hyper;
};

int run_train(const TrainOpts& opt) {
  const auto all_tracks = nsda::load_annotations_csv(opt.annotations);
  nsda::SegmentSet training;
  for (const auto& path : opt.recordings) {
    const auto rec = preprocess(nsda::load_recording(path));
    const int duration = static_cast<int>(std::floor(rec.duration_s()));
    const auto tracks = annotations_for(all_tracks, rec.patient_id, duration);
    for (auto& seg : nsda::signal::segment_recording(rec, tracks).segments) {
      if (seg.label == nsda::SegmentLabel::Seizure || seg.label == nsda::SegmentLabel::NonSeizure)
        training.segments.push_back(std::move(seg));
    }
  }
  nsda::Rng rng(opt.seed);
  const auto balanced = nsda::signal::balance_training_set(training, rng);
  const auto result =
      nsda::detect::train_feature_detector(balanced, rng, opt.hyper, opt.detector_id);
  result.model.save(resolve_out(opt.out));
  std::cerr << "trained on " << balanced.size() << " segments; loss " << result.initial_loss
            << " -> " << result.final_loss << "; model " << opt.out << "\n";
  return 0;
}

int run_predict(const std::string& model_path, const std::string& recording,
                const std::string& out) {
  const auto model = nsda::detect::FeatureDetector::load(model_path);
  const auto rec = preprocess(nsda::load_recording(recording));
  const auto set = nsda::signal::segment_recording_unlabeled(rec);

  nsda::PredictionMatrix m;
  m.detector_ids.push_back(model.detector_id());
  for (const auto& seg : set.segments) {
    if (seg.label == nsda::SegmentLabel::Excluded) continue;
    m.segment_ids.push_back(seg.id());
    m.probs.push_back(model.predict(seg));
  }
  nsda::write_predictions_csv(resolve_out(out), m);
  std::cerr << "wrote " << m.rows() << " predictions to " << out << "\n";
  return 0;
}

struct AggregateOpts {
  std::string scheme;
  std::string pred;
  std::string stacking;
  std::string out;
  std::string ds_params_out;
  double tau = 0.5;
  double eps = 1e-5;
  int k_max = 5000;
};

int run_aggregate(const AggregateOpts& opt) {
  const auto matrix = nsda::load_predictions_csv(opt.pred);
  std::vector<double> scores;

  if (opt.scheme == "mv") {
    scores = nsda::agg::majority_vote(matrix);
  } else if (opt.scheme == "mean") {
    scores = nsda::agg::mean_aggregate(matrix);
  } else if (opt.scheme == "wmean") {
    if (opt.stacking.empty())
      throw nsda::DataError("--stacking model.json is required for scheme wmean");
    std::ifstream in(opt.stacking);
    if (!in) throw nsda::DataError("cannot open " + opt.stacking);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto stacking = nsda::agg::StackingModel::from_json(text);
    scores = nsda::agg::weighted_mean(matrix, stacking);
  } else if (opt.scheme == "ds") {
    const auto state = nsda::agg::dawid_skene(matrix, opt.eps, opt.k_max);
    scores = state.mu;
    json params = {
        {"t", state.theta.t},
        {"alpha", state.theta.alpha},
        {"beta", state.theta.beta},
        {"detector_ids", matrix.detector_ids},
        {"iterations", state.iterations},
        {"log_likelihood", state.log_likelihood.back()},
    };
    const fs::path params_path = opt.ds_params_out.empty()
                                     ? resolve_out(opt.out).parent_path() / "ds_params.json"
                                     : resolve_out(opt.ds_params_out);
    std::ofstream ps(params_path);
    if (!ps) throw nsda::DataError("cannot write " + params_path.string());
    ps << params.dump(2) << "\n";
  } else {
    throw nsda::DataError("unknown scheme " + opt.scheme);
  }

  const auto labels = nsda::agg::threshold_labels(scores, opt.tau);
  std::vector<nsda::ConsensusRow> rows;
  rows.reserve(matrix.rows());
  for (std::size_t i = 0; i < matrix.rows(); ++i)
    rows.push_back({matrix.segment_ids[i], scores[i], labels[i]});
  nsda::write_consensus_csv(resolve_out(opt.out), rows);
  return 0;
}

std::pair<std::string, int> split_segment_id(const std::string& id) {
  const auto pos = id.rfind(':');
  if (pos == std::string::npos)
    throw nsda::DataError("segment id '" + id + "' is not of the form <patient>:<start_s>");
  return {id.substr(0, pos), std::stoi(id.substr(pos + 1))};
}

json stat_json(const nsda::metrics::Stat& s) {
  return {{"mean", s.mean}, {"median", s.median}, {"count", s.count}};
}

int run_evaluate(const std::string& pred, const std::string& annotations, const std::string& out,
                 double tau) {
  const auto rows = nsda::load_consensus_csv(pred);
  const auto all_tracks = nsda::load_annotations_csv(annotations);

  std::map<std::string, std::map<int, const nsda::ConsensusRow*>> by_patient;
  for (const auto& row : rows) {
    const auto [patient, start] = split_segment_id(row.segment_id);
    by_patient[patient][start] = &row;
  }

  std::vector<nsda::metrics::PatientMetrics> patients;
  for (const auto& [patient, cells] : by_patient) {
    const auto tracks = annotations_for(all_tracks, patient, 0);
    std::size_t duration = tracks.front().labels.size();
    for (const auto& t : tracks) duration = std::min(duration, t.labels.size());
    const int n_grid = nsda::segment_count_for_duration(static_cast<double>(duration));
    if (n_grid <= 0) throw nsda::DataError("annotations for " + patient + " cover under 16 s");

    std::vector<double> grid_scores(n_grid, 0.0);
    std::vector<std::uint8_t> present(n_grid, 0);
    std::vector<double> eval_scores;
    std::vector<int> eval_pred, eval_truth;
    for (const auto& [start, row] : cells) {
      if (start % nsda::kSegmentStrideS != 0 || start / nsda::kSegmentStrideS >= n_grid)
        throw nsda::DataError("segment " + row->segment_id + " is off the 4 s grid");
      grid_scores[start / nsda::kSegmentStrideS] = row->score;
      present[start / nsda::kSegmentStrideS] = 1;
      const auto label = nsda::signal::window_label(tracks, start);
      if (label == nsda::SegmentLabel::Seizure || label == nsda::SegmentLabel::NonSeizure) {
        eval_scores.push_back(row->score);
        eval_pred.push_back(row->label);
        eval_truth.push_back(label == nsda::SegmentLabel::Seizure ? 1 : 0);
      }
    }

    nsda::metrics::PatientMetrics pm;
    pm.patient_id = patient;
    if (!eval_truth.empty()) {
      const auto sm = nsda::metrics::segment_metrics(eval_pred, eval_truth);
      pm.se = sm.se;
      pm.sp = sm.sp;
      try {
        pm.auc = nsda::metrics::auc(eval_scores, eval_truth);
      } catch (const nsda::DataError&) {
      }
    }
    const auto cells_avg = nsda::metrics::overlap_average_masked(grid_scores, present);
    const auto events = nsda::metrics::extract_events(cells_avg, tau, 10.0, "pred");
    const auto ev = nsda::metrics::event_metrics(
        events, nsda::metrics::consensus_timeline(tracks), nsda::metrics::any_expert_timeline(tracks),
        static_cast<double>(duration) / 3600.0);
    pm.sdr = ev.sdr;
    pm.fd_per_h = ev.fd_per_h;
    pm.mfdd_s = ev.mfdd_s;
    patients.push_back(std::move(pm));
  }
  if (patients.empty()) throw nsda::DataError("no patients found in " + pred);

  const auto summary = nsda::metrics::summarize(patients);
  json jp = json::array();
  for (const auto& p : patients) {
    json e = {{"patient_id", p.patient_id},
              {"fd_per_h", p.fd_per_h},
              {"mfdd_s", p.mfdd_s}};
    if (p.se) e["se"] = *p.se;
    if (p.sp) e["sp"] = *p.sp;
    if (p.auc) e["auc"] = *p.auc;
    if (p.sdr) e["sdr"] = *p.sdr;
    jp.push_back(std::move(e));
  }
  json doc = {
      {"patients", jp},
      {"summary",
       {{"segment_based",
         {{"auc", stat_json(summary.auc)}, {"se", stat_json(summary.se)},
          {"sp", stat_json(summary.sp)}}},
        {"event_based",
         {{"sdr", stat_json(summary.sdr)}, {"fd_per_h", stat_json(summary.fd_per_h)},
          {"mfdd_s", stat_json(summary.mfdd_s)}}}}},
  };
  std::ofstream os(resolve_out(out));
  if (!os) throw nsda::DataError("cannot write " + out);
  os << doc.dump(2) << "\n";
  return 0;
}

struct SimulateOpts {
  std::string config;
  std::string out = "sim_out";
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> jobs;
  bool full_grid = false;
};

int run_simulate(const SimulateOpts& opt) {
  nsda::sim::CohortSpec cohort_spec;
  nsda::sim::ExperimentConfig config;
  if (!opt.config.empty()) {
    std::ifstream in(opt.config);
    if (!in) throw nsda::DataError("cannot open config " + opt.config);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw nsda::DataError(std::string("malformed config: ") + e.what());
    }
    if (j.contains("cohort")) cohort_spec = nsda::sim::CohortSpec::from_json(j["cohort"].dump());
    if (j.contains("experiment"))
      config = nsda::sim::ExperimentConfig::from_json(j["experiment"].dump());
  }
  if (opt.full_grid) {
    cohort_spec.patient_count = 38;
    config.k_values = {3, 4, 5, 6, 7, 8, 9, 10};
    config.runs = 10;
  }
  if (opt.seed) {
    cohort_spec.seed = *opt.seed;
    config.seed = *opt.seed;
  }
  if (opt.runs) config.runs = *opt.runs;
  if (opt.jobs) config.jobs = *opt.jobs;

  const fs::path out_dir = resolve_out(opt.out);
  fs::create_directories(out_dir);

  std::cerr << "preparing cohort (" << cohort_spec.patient_count << " patients)...\n";
  const auto cohort = nsda::sim::prepare_cohort(cohort_spec);
  std::cerr << "running LOSO (" << config.runs << " runs, " << cohort.patients.size()
            << " folds)...\n";
  const auto result = nsda::sim::run_loso(cohort, config);
  const auto trend = nsda::sim::trend_report(result);

  nsda::sim::write_per_patient_csv(out_dir / "per_patient.csv", result.rows);
  nsda::sim::write_trend_csv(out_dir / "trend.csv", trend);
  nsda::sim::write_institution_csv(out_dir / "institution_sizes.csv", trend);
  nsda::sim::write_ds_params(out_dir / "ds_params", result.ds_params);

  json manifest = {
      {"tool", "nsda"},
      {"version", kVersion},
      {"command", "simulate"},
      {"cohort", json::parse(cohort_spec.to_json())},
      {"experiment", json::parse(config.to_json())},
      {"outputs", {"trend.csv", "per_patient.csv", "institution_sizes.csv", "ds_params/"}},
  };
  std::ofstream ms(out_dir / "manifest.json");
  if (!ms) throw nsda::DataError("cannot write manifest");
  ms << manifest.dump(2) << "\n";
  std::cerr << "outputs in " << out_dir.string() << "\n";
  return 0;
}

int run_report(const std::string& per_patient, const std::string& out) {
  nsda::sim::LosoResult result;
  result.rows = nsda::sim::load_per_patient_csv(per_patient);
  const auto trend = nsda::sim::trend_report(result);
  nsda::sim::write_trend_csv(resolve_out(out), trend);
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Distributed neonatal seizure detection: preprocessing, local detectors, "
               "trusted-agent fusion and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // filter-design
  FilterDesignOpts fd;
  auto* c_fd = app.add_subcommand("filter-design", "Design the band-pass filter, print SOS + response");
  c_fd->add_option("--order", fd.order, "Band-pass filter order (even)")->capture_default_str();
  c_fd->add_option("--low", fd.low, "Lower stopband edge (Hz)")->capture_default_str();
  c_fd->add_option("--high", fd.high, "Upper stopband edge (Hz)")->capture_default_str();
  c_fd->add_option("--atten", fd.atten, "Stopband attenuation (dB)")->capture_default_str();
  c_fd->add_option("--rate", fd.rate, "Sample rate (Hz)")->capture_default_str();
  c_fd->add_option("--response-points", fd.response_points, "Frequency grid size")
      ->capture_default_str();
  c_fd->add_option("--out", fd.out, "Write to file instead of stdout");

  // segment
  std::string seg_rec, seg_ann, seg_out;
  auto* c_seg = app.add_subcommand("segment", "Preprocess + segment a recording, label windows");
  c_seg->add_option("--recording", seg_rec, "Recording header (.json)")->required();
  c_seg->add_option("--annotations", seg_ann, "Annotations CSV")->required();
  c_seg->add_option("--out", seg_out, "Output segments CSV")->required();

  // train
  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "Train a feature detector on annotated recordings");
  c_tr->add_option("--recordings", tr.recordings, "Recording headers (.json)")->required();
  c_tr->add_option("--annotations", tr.annotations, "Annotations CSV")->required();
  c_tr->add_option("--out", tr.out, "Output model JSON")->required();
  c_tr->add_option("--seed", tr.seed, "RNG seed")->capture_default_str();
  c_tr->add_option("--id", tr.detector_id, "Detector id")->capture_default_str();
  c_tr->add_option("--lr", tr.hyper.learning_rate, "Initial learning rate")->capture_default_str();
  c_tr->add_option("--epochs", tr.hyper.epochs, "Training epochs")->capture_default_str();
  c_tr->add_option("--batch", tr.hyper.batch_size, "Mini-batch size")->capture_default_str();
  c_tr->add_option("--halve-every", tr.hyper.halve_every_epochs, "Halve lr every N epochs")
      ->capture_default_str();
  c_tr->add_option("--hidden", tr.hyper.attention_hidden, "Attention inner size")
      ->capture_default_str();

  // predict
  std::string pr_model, pr_rec, pr_out;
  auto* c_pr = app.add_subcommand("predict", "Run a saved detector over a recording");
  c_pr->add_option("--model", pr_model, "Model JSON")->required();
  c_pr->add_option("--recording", pr_rec, "Recording header (.json)")->required();
  c_pr->add_option("--out", pr_out, "Output predictions CSV")->required();

  // aggregate
  AggregateOpts ag;
  auto* c_ag = app.add_subcommand("aggregate", "Fuse detector predictions into consensus scores");
  c_ag->add_option("--scheme", ag.scheme, "mv | mean | wmean | ds")->required();
  c_ag->add_option("--pred", ag.pred, "Predictions CSV")->required();
  c_ag->add_option("--stacking", ag.stacking, "Stacking model JSON (wmean)");
  c_ag->add_option("--out", ag.out, "Output consensus CSV")->required();
  c_ag->add_option("--ds-params", ag.ds_params_out, "Where to write ds_params.json");
  c_ag->add_option("--tau", ag.tau, "Decision threshold")->capture_default_str();
  c_ag->add_option("--eps", ag.eps, "EM log-likelihood tolerance")->capture_default_str();
  c_ag->add_option("--k-max", ag.k_max, "EM iteration cap")->capture_default_str();

  // evaluate
  std::string ev_pred, ev_ann, ev_out;
  double ev_tau = 0.5;
  auto* c_ev = app.add_subcommand("evaluate", "Segment- and event-based metrics for consensus scores");
  c_ev->add_option("--pred", ev_pred, "Consensus CSV")->required();
  c_ev->add_option("--annotations", ev_ann, "Annotations CSV")->required();
  c_ev->add_option("--out", ev_out, "Output metrics JSON")->required();
  c_ev->add_option("--tau", ev_tau, "Decision threshold")->capture_default_str();

  // simulate
  SimulateOpts sm;
  auto* c_sm = app.add_subcommand("simulate", "End-to-end synthetic LOSO experiment");
  c_sm->add_option("--config", sm.config, "Experiment config JSON");
  c_sm->add_option("--out", sm.out, "Output directory")->capture_default_str();
  std::uint64_t sm_seed = 0;
  int sm_runs = 0, sm_jobs = 0;
  auto* o_seed = c_sm->add_option("--seed", sm_seed, "Override master seed");
  auto* o_runs = c_sm->add_option("--runs", sm_runs, "Override run count");
  auto* o_jobs = c_sm->add_option("--jobs", sm_jobs, "Worker threads (0 = cores)");
  c_sm->add_flag("--full", sm.full_grid, "Paper-scale grid: 38 patients, k = 3..10, 10 runs");

  // report
  std::string rp_in, rp_out;
  auto* c_rp = app.add_subcommand("report", "Recompute the trend table from per-patient metrics");
  c_rp->add_option("--per-patient", rp_in, "per_patient.csv from simulate")->required();
  c_rp->add_option("--out", rp_out, "Output trend CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*c_fd) return run_filter_design(fd);
    if (*c_seg) return run_segment(seg_rec, seg_ann, seg_out);
    if (*c_tr) return run_train(tr);
    if (*c_pr) return run_predict(pr_model, pr_rec, pr_out);
    if (*c_ag) return run_aggregate(ag);
    if (*c_ev) return run_evaluate(ev_pred, ev_ann, ev_out, ev_tau);
    if (*c_sm) {
      if (*o_seed) sm.seed = sm_seed;
      if (*o_runs) sm.runs = sm_runs;
      if (*o_jobs) sm.jobs = sm_jobs;
      return run_simulate(sm);
    }
    if (*c_rp) return run_report(rp_in, rp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
