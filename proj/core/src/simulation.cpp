#include "nsda/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nsda/io.hpp"
#include "nsda/segmentation.hpp"

namespace nsda::sim {

using nlohmann::json;

namespace {

// Seed-stream tags keeping generation and experiment draws apart.
constexpr std::uint64_t kTagTruth = 0x7472757468ULL;
constexpr std::uint64_t kTagSignal = 0x7369676eULL;
constexpr std::uint64_t kTagAnnot = 0x616e6e6fULL;
constexpr std::uint64_t kTagBaseline = 0x62617365ULL;

std::string patient_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%02d", index);
  return buf;
}

double draw_exponential(Rng& rng, double mean) { return -mean * std::log(rng.next_double_open()); }

}  // namespace

void CohortSpec::validate() const {
  if (patient_count < 1) throw DataError("cohort needs at least one patient");
  if (!(duration_s > 32.0)) throw DataError("recording duration must exceed 32 s");
  if (!(seizure_fraction > 0.0 && seizure_fraction < 1.0))
    throw DataError("seizure fraction must lie in (0, 1)");
  if (!(mean_seizure_s > static_cast<double>(kSegmentDurationS)))
    throw DataError("mean seizure duration must exceed the 16 s segment length");
  if (channel_count < 1 || expert_count < 1) throw DataError("invalid cohort spec");
  const double factor = sample_rate_hz / kTargetRateHz;
  if (std::abs(factor - std::round(factor)) > 1e-9)
    throw DataError("sample rate must be an integer multiple of 32 Hz");
}

std::string CohortSpec::to_json() const {
  json j = {
      {"patient_count", patient_count},
      {"duration_s", duration_s},
      {"seizure_fraction", seizure_fraction},
      {"mean_seizure_s", mean_seizure_s},
      {"channel_count", channel_count},
      {"sample_rate_hz", sample_rate_hz},
      {"expert_count", expert_count},
      {"expert_jitter_s", expert_jitter_s},
      {"expert_miss_prob", expert_miss_prob},
      {"seed", seed},
  };
  return j.dump(2);
}

CohortSpec CohortSpec::from_json(const std::string& text) {
  CohortSpec spec;
  try {
    json j = json::parse(text);
    spec.patient_count = j.value("patient_count", spec.patient_count);
    spec.duration_s = j.value("duration_s", spec.duration_s);
    spec.seizure_fraction = j.value("seizure_fraction", spec.seizure_fraction);
    spec.mean_seizure_s = j.value("mean_seizure_s", spec.mean_seizure_s);
    spec.channel_count = j.value("channel_count", spec.channel_count);
    spec.sample_rate_hz = j.value("sample_rate_hz", spec.sample_rate_hz);
    spec.expert_count = j.value("expert_count", spec.expert_count);
    spec.expert_jitter_s = j.value("expert_jitter_s", spec.expert_jitter_s);
    spec.expert_miss_prob = j.value("expert_miss_prob", spec.expert_miss_prob);
    spec.seed = j.value("seed", spec.seed);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed cohort spec: ") + e.what());
  }
  return spec;
}

std::string ExperimentConfig::to_json() const {
  json j = {
      {"k_values", k_values},
      {"runs", runs},
      {"schemes", schemes},
      {"tau", tau},
      {"ds_eps", ds_eps},
      {"ds_k_max", ds_k_max},
      {"ds_pooled", ds_pooled},
      {"seed", seed},
      {"jobs", jobs},
      {"learning_rate", hyper.learning_rate},
      {"halve_every_epochs", hyper.halve_every_epochs},
      {"epochs", hyper.epochs},
      {"batch_size", hyper.batch_size},
      {"attention_hidden", hyper.attention_hidden},
  };
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ExperimentConfig cfg;
  try {
    json j = json::parse(text);
    cfg.k_values = j.value("k_values", cfg.k_values);
    cfg.runs = j.value("runs", cfg.runs);
    cfg.schemes = j.value("schemes", cfg.schemes);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.ds_eps = j.value("ds_eps", cfg.ds_eps);
    cfg.ds_k_max = j.value("ds_k_max", cfg.ds_k_max);
    cfg.ds_pooled = j.value("ds_pooled", cfg.ds_pooled);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.jobs = j.value("jobs", cfg.jobs);
    cfg.hyper.learning_rate = j.value("learning_rate", cfg.hyper.learning_rate);
    cfg.hyper.halve_every_epochs = j.value("halve_every_epochs", cfg.hyper.halve_every_epochs);
    cfg.hyper.epochs = j.value("epochs", cfg.hyper.epochs);
    cfg.hyper.batch_size = j.value("batch_size", cfg.hyper.batch_size);
    cfg.hyper.attention_hidden = j.value("attention_hidden", cfg.hyper.attention_hidden);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed experiment config: ") + e.what());
  }
  return cfg;
}

PatientData generate_patient(const CohortSpec& spec, int patient_index) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, kTagTruth, static_cast<std::uint64_t>(patient_index)));

  // Patient character: seizure rhythm, amplitudes and focus channels vary
  // across patients so detectors trained on few patients generalize worse.
  const double seizure_freq_hz = rng.next_uniform(1.5, 4.0);
  const double background_rms_uv = rng.next_uniform(20.0, 40.0);
  const double seizure_amp_ratio = rng.next_uniform(2.0, 3.5);
  const double ar_coeff = rng.next_uniform(0.90, 0.97);

  std::vector<std::size_t> channel_order(spec.channel_count);
  std::iota(channel_order.begin(), channel_order.end(), 0);
  rng.shuffle(channel_order);
  const std::size_t focus_count = std::max<std::size_t>(1, spec.channel_count / 3);
  std::vector<char> is_focus(spec.channel_count, 0);
  for (std::size_t i = 0; i < focus_count; ++i) is_focus[channel_order[i]] = 1;

  // Ground-truth seizures. The target fraction applies to the *consensus*
  // annotation, so the truth fraction is inflated to compensate for expert
  // misses and boundary jitter.
  const double n_exp = static_cast<double>(spec.expert_count);
  const double jitter_shrink = std::max(
      0.3, 1.0 - 2.0 * spec.expert_jitter_s * (n_exp - 1.0) / (n_exp + 1.0) / spec.mean_seizure_s);
  const double survive = std::pow(1.0 - spec.expert_miss_prob, n_exp) * jitter_shrink;
  const double truth_fraction = std::min(0.85, spec.seizure_fraction / survive);
  if (truth_fraction >= 0.85 && spec.seizure_fraction / survive > 0.9)
    throw DataError("infeasible cohort spec: seizure fraction too high for the annotation noise");

  const double mean_gap = spec.mean_seizure_s * (1.0 - truth_fraction) / truth_fraction;
  const double min_seizure = kSegmentDurationS;
  std::vector<std::pair<double, double>> truth;
  double t = draw_exponential(rng, mean_gap / 2.0);
  while (t + min_seizure < spec.duration_s) {
    double dur = min_seizure + draw_exponential(rng, std::max(1.0, spec.mean_seizure_s - min_seizure));
    dur = std::min(dur, spec.duration_s - t);
    if (dur >= min_seizure) truth.emplace_back(t, t + dur);
    t += dur + draw_exponential(rng, mean_gap);
  }

  // Anchor seizure: long enough to survive jitter at every expert, so each
  // patient keeps at least one consensus seizure covering a full window.
  const double anchor_min = min_seizure + 2.0 * spec.expert_jitter_s + 6.0;
  std::size_t anchor = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].second - truth[i].first >= anchor_min &&
        (anchor == truth.size() ||
         truth[i].second - truth[i].first > truth[anchor].second - truth[anchor].first))
      anchor = i;
  }
  if (anchor == truth.size()) {
    const double mid = spec.duration_s / 2.0;
    const double half = anchor_min / 2.0 + 1.0;
    std::erase_if(truth, [&](const auto& e) {
      return e.first < mid + half && mid - half < e.second;
    });
    truth.emplace_back(mid - half, mid + half);
    std::sort(truth.begin(), truth.end());
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (truth[i].first == mid - half) anchor = i;
  }

  PatientData data;
  data.ground_truth = EventTimeline::merged("truth", truth);

  // Expert annotations: per-seizure miss probability plus uniform boundary
  // jitter, rounded to the 1 s label grid.
  const int duration = static_cast<int>(std::floor(spec.duration_s));
  for (int attempt = 0;; ++attempt) {
    data.annotations.clear();
    Rng arng(derive_seed(spec.seed, kTagAnnot, static_cast<std::uint64_t>(patient_index),
                         static_cast<std::uint64_t>(attempt)));
    for (int e = 0; e < spec.expert_count; ++e) {
      AnnotationTrack track;
      track.patient_id = patient_name(patient_index);
      track.expert_id = "expert" + std::to_string(e);
      track.labels.assign(duration, 0);
      for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool missed = i != anchor && arng.next_double() < spec.expert_miss_prob;
        const double s_jit =
            truth[i].first + arng.next_uniform(-spec.expert_jitter_s, spec.expert_jitter_s);
        const double e_jit =
            truth[i].second + arng.next_uniform(-spec.expert_jitter_s, spec.expert_jitter_s);
        if (missed) continue;
        const int s0 = std::clamp(static_cast<int>(std::lround(s_jit)), 0, duration);
        const int s1 = std::clamp(static_cast<int>(std::lround(e_jit)), 0, duration);
        for (int s = s0; s < s1; ++s) track.labels[s] = 1;
      }
      data.annotations.push_back(std::move(track));
    }
    const auto consensus = metrics::consensus_timeline(data.annotations);
    bool long_enough = false;
    for (const auto& ev : consensus.events)
      if (ev.second - ev.first >= static_cast<double>(kSegmentDurationS)) long_enough = true;
    if (long_enough) break;
    if (attempt >= 20) {
      // Deterministic fallback: every expert marks the anchor exactly.
      const int s0 = std::clamp(static_cast<int>(std::lround(truth[anchor].first)), 0, duration);
      const int s1 = std::clamp(static_cast<int>(std::lround(truth[anchor].second)), 0, duration);
      for (auto& track : data.annotations)
        for (int s = s0; s < s1; ++s) track.labels[s] = 1;
      break;
    }
  }

  // Signal: AR(1) background per channel plus a patient-specific rhythmic
  // component inside ground-truth seizures, strongest on focus channels.
  auto& rec = data.recording;
  rec.patient_id = patient_name(patient_index);
  rec.sample_rate_hz = spec.sample_rate_hz;
  const auto n_samples = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
  const double innov_sd = background_rms_uv * std::sqrt(1.0 - ar_coeff * ar_coeff);

  for (int c = 0; c < spec.channel_count; ++c) {
    char label[16];
    std::snprintf(label, sizeof(label), "ch%02d", c);
    rec.channels.emplace_back(label);

    Rng srng(derive_seed(spec.seed, kTagSignal,
                         static_cast<std::uint64_t>(patient_index) * 1024 + c));
    std::vector<double> phases;
    phases.reserve(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i)
      phases.push_back(srng.next_uniform(0.0, 2.0 * std::numbers::pi));

    std::vector<double> x(n_samples);
    double prev = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
      prev = ar_coeff * prev + innov_sd * srng.next_normal();
      x[i] = prev;
    }
    const double amp = (is_focus[c] ? 1.0 : 0.15) * seizure_amp_ratio * background_rms_uv;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const auto lo = static_cast<std::size_t>(
          std::clamp(truth[i].first * spec.sample_rate_hz, 0.0, static_cast<double>(n_samples)));
      const auto hi = static_cast<std::size_t>(
          std::clamp(truth[i].second * spec.sample_rate_hz, 0.0, static_cast<double>(n_samples)));
      for (std::size_t s = lo; s < hi; ++s) {
        const double tt = static_cast<double>(s) / spec.sample_rate_hz;
        const double envelope = 0.7 + 0.3 * std::sin(2.0 * std::numbers::pi * tt / 13.0 + phases[i]);
        x[s] += amp * envelope *
                std::sin(2.0 * std::numbers::pi * seizure_freq_hz * tt + phases[i]);
      }
    }
    rec.samples.push_back(std::move(x));
  }
  return data;
}

Cohort generate_cohort(const CohortSpec& spec) {
  Cohort cohort;
  cohort.spec = spec;
  cohort.patients.reserve(spec.patient_count);
  for (int p = 0; p < spec.patient_count; ++p) cohort.patients.push_back(generate_patient(spec, p));
  return cohort;
}

PatientFeatures prepare_patient(const PatientData& data, const signal::IirFilter& filter) {
  PatientFeatures out;
  out.patient_id = data.recording.patient_id;

  const Recording rec32 = signal::filter_and_decimate(data.recording, filter, kTargetRateHz);
  const Recording quantized = signal::rescale_to_int16(rec32).recording;
  const SegmentSet set = signal::segment_recording(quantized, data.annotations);

  out.duration_s = std::floor(quantized.duration_s());
  out.segments.reserve(set.size());
  for (const auto& seg : set.segments) {
    SegmentRecord record;
    record.start_s = seg.start_s;
    record.label = seg.label;
    if (seg.label != SegmentLabel::Excluded) record.features = detect::extract_features(seg);
    out.segments.push_back(std::move(record));
  }
  out.consensus_events = metrics::consensus_timeline(data.annotations);
  out.any_expert_events = metrics::any_expert_timeline(data.annotations);
  return out;
}

PreparedCohort prepare_cohort(const CohortSpec& spec) {
  spec.validate();
  const auto filter = signal::design_cheby2_bandpass(6, 0.5, 16.0, 40.0, spec.sample_rate_hz);
  PreparedCohort cohort;
  cohort.spec = spec;
  cohort.patients.reserve(spec.patient_count);
  for (int p = 0; p < spec.patient_count; ++p) {
    // Raw samples are dropped as soon as features are extracted.
    cohort.patients.push_back(prepare_patient(generate_patient(spec, p), filter));
  }
  return cohort;
}

std::vector<std::vector<std::string>> partition_patients(const std::vector<std::string>& patients,
                                                         int k, Rng& rng, int min_size) {
  if (k < 1) throw std::invalid_argument("k must be positive");
  if (min_size < 1) throw std::invalid_argument("min_size must be positive");
  if (patients.size() < static_cast<std::size_t>(k) * min_size)
    throw DataError("cannot partition " + std::to_string(patients.size()) + " patients into " +
                    std::to_string(k) + " subsets of at least " + std::to_string(min_size));

  std::vector<std::string> shuffled = patients;
  rng.shuffle(shuffled);
  std::vector<std::vector<std::string>> subsets(k);
  std::size_t next = 0;
  for (int s = 0; s < k; ++s)
    for (int i = 0; i < min_size; ++i) subsets[s].push_back(shuffled[next++]);
  while (next < shuffled.size())
    subsets[rng.next_below(static_cast<std::uint64_t>(k))].push_back(shuffled[next++]);
  return subsets;
}

namespace {

struct TrainingView {
  std::vector<const detect::FeatureMatrix*> features;
  std::vector<int> labels;
};

// Seizure/NonSeizure segments of the given patients, in cohort order.
TrainingView gather_training(const PreparedCohort& cohort, const std::vector<std::size_t>& patients) {
  TrainingView view;
  for (auto p : patients) {
    for (const auto& seg : cohort.patients[p].segments) {
      if (seg.label == SegmentLabel::Seizure || seg.label == SegmentLabel::NonSeizure) {
        view.features.push_back(&seg.features);
        view.labels.push_back(seg.label == SegmentLabel::Seizure ? 1 : 0);
      }
    }
  }
  return view;
}

TrainingView balanced(const TrainingView& view, Rng& rng) {
  const auto keep = signal::balance_indices(view.labels, rng);
  TrainingView out;
  out.features.reserve(keep.size());
  out.labels.reserve(keep.size());
  for (auto i : keep) {
    out.features.push_back(view.features[i]);
    out.labels.push_back(view.labels[i]);
  }
  return out;
}

detect::FeatureDetector train_view(const TrainingView& view, Rng& rng,
                                   const detect::TrainHyper& hyper, const std::string& id) {
  std::vector<detect::FeatureMatrix> features;
  features.reserve(view.features.size());
  for (const auto* f : view.features) features.push_back(*f);
  return detect::train_on_features(features, view.labels, rng, hyper, id).model;
}

std::vector<double> predict_on(const detect::FeatureDetector& model,
                               const PatientFeatures& patient,
                               const std::vector<std::size_t>& segment_idx) {
  std::vector<double> probs;
  probs.reserve(segment_idx.size());
  for (auto i : segment_idx) probs.push_back(model.predict_features(patient.segments[i].features));
  return probs;
}

metrics::PatientMetrics evaluate_scores(const PatientFeatures& patient,
                                        const std::vector<std::size_t>& segment_idx,
                                        const std::vector<double>& scores, double tau) {
  metrics::PatientMetrics out;
  out.patient_id = patient.patient_id;

  std::vector<double> eval_scores;
  std::vector<int> eval_truth;
  for (std::size_t i = 0; i < segment_idx.size(); ++i) {
    const auto& seg = patient.segments[segment_idx[i]];
    if (seg.label == SegmentLabel::Seizure || seg.label == SegmentLabel::NonSeizure) {
      eval_scores.push_back(scores[i]);
      eval_truth.push_back(seg.label == SegmentLabel::Seizure ? 1 : 0);
    }
  }
  if (!eval_truth.empty()) {
    const auto pred = agg::threshold_labels(eval_scores, tau);
    const auto seg_metrics = metrics::segment_metrics(pred, eval_truth);
    out.se = seg_metrics.se;
    out.sp = seg_metrics.sp;
    try {
      out.auc = metrics::auc(eval_scores, eval_truth);
    } catch (const DataError&) {
      // single-class patient: AUC stays absent
    }
  }

  std::vector<double> grid_scores(patient.segments.size(), 0.0);
  std::vector<std::uint8_t> present(patient.segments.size(), 0);
  for (std::size_t i = 0; i < segment_idx.size(); ++i) {
    const auto g = static_cast<std::size_t>(patient.segments[segment_idx[i]].start_s / kSegmentStrideS);
    grid_scores[g] = scores[i];
    present[g] = 1;
  }
  const auto cells = metrics::overlap_average_masked(grid_scores, present);
  const auto events = metrics::extract_events(cells, tau, 10.0, "pred");
  const auto ev = metrics::event_metrics(events, patient.consensus_events,
                                         patient.any_expert_events, patient.duration_s / 3600.0);
  out.sdr = ev.sdr;
  out.fd_per_h = ev.fd_per_h;
  out.mfdd_s = ev.mfdd_s;
  return out;
}

std::optional<double> mean_defined(const std::vector<std::optional<double>>& values) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& v : values) {
    if (v) {
      total += *v;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

struct FoldOutput {
  std::vector<ResultRow> rows;
  std::vector<DsParamsRecord> ds_params;
  std::vector<FoldSizes> fold_sizes;
  // pooled-DS bookkeeping: per k, the fold's full prediction matrix and the
  // indices it covers
  struct PooledPiece {
    int k = 0;
    std::vector<double> probs;  // n_test x k
    std::vector<std::size_t> segment_idx;
  };
  std::vector<PooledPiece> pooled;
};

}  // namespace

LosoResult run_loso(const PreparedCohort& cohort, const ExperimentConfig& config) {
  const std::size_t n_patients = cohort.patients.size();
  if (n_patients < 2) throw DataError("LOSO needs at least two patients");
  for (int k : config.k_values) {
    if (k < 1) throw DataError("k must be positive");
    if (static_cast<std::size_t>(k) > n_patients - 1)
      throw DataError("k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(n_patients - 1) + " patients left after holding one out");
  }
  if (config.runs < 1) throw DataError("need at least one run");

  struct Task {
    int run;
    std::size_t fold;
  };
  std::vector<Task> tasks;
  for (int run = 0; run < config.runs; ++run)
    for (std::size_t q = 0; q < n_patients; ++q) tasks.push_back({run, q});

  auto scheme_enabled = [&](const std::string& s) {
    return std::find(config.schemes.begin(), config.schemes.end(), s) != config.schemes.end();
  };

  auto process_fold = [&](const Task& task) {
    FoldOutput out;
    const std::size_t q = task.fold;
    const PatientFeatures& test = cohort.patients[q];

    std::vector<std::size_t> remaining;
    for (std::size_t p = 0; p < n_patients; ++p)
      if (p != q) remaining.push_back(p);

    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < test.segments.size(); ++i)
      if (test.segments[i].label != SegmentLabel::Excluded) test_idx.push_back(i);

    // Baseline: one detector over the union of the remaining patients.
    {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(task.run), q, kTagBaseline));
      auto pool = balanced(gather_training(cohort, remaining), rng);
      const auto model = train_view(pool, rng, config.hyper, "baseline");
      const auto probs = predict_on(model, test, test_idx);
      ResultRow row{task.run, 0, test.patient_id, "baseline",
                    evaluate_scores(test, test_idx, probs, config.tau), std::nullopt};
      out.rows.push_back(std::move(row));
    }

    std::map<std::size_t, std::string> id_of;
    for (auto p : remaining) id_of[p] = cohort.patients[p].patient_id;

    for (int k : config.k_values) {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(task.run), q,
                          static_cast<std::uint64_t>(k)));

      std::vector<std::string> ids;
      for (auto p : remaining) ids.push_back(id_of[p]);
      const int eff_min = std::min<int>(3, static_cast<int>(remaining.size()) / k);
      const auto partition = partition_patients(ids, k, rng, std::max(1, eff_min));

      FoldSizes sizes{task.run, k, test.patient_id, {}};
      for (const auto& subset : partition) sizes.subset_sizes.push_back(static_cast<int>(subset.size()));
      out.fold_sizes.push_back(std::move(sizes));

      // Train one local detector per subset; keep its balanced training view
      // for the stacking fit.
      std::vector<detect::FeatureDetector> locals;
      std::vector<TrainingView> training_views;
      for (int s = 0; s < k; ++s) {
        std::vector<std::size_t> subset_patients;
        for (const auto& id : partition[s])
          for (auto p : remaining)
            if (id_of[p] == id) subset_patients.push_back(p);
        auto view = balanced(gather_training(cohort, subset_patients), rng);
        locals.push_back(train_view(view, rng, config.hyper, "d" + std::to_string(s)));
        training_views.push_back(std::move(view));
      }
      const std::size_t holdout = rng.next_below(static_cast<std::uint64_t>(k));

      std::vector<std::vector<double>> local_probs;
      for (const auto& model : locals) local_probs.push_back(predict_on(model, test, test_idx));

      PredictionMatrix full;
      for (auto i : test_idx)
        full.segment_ids.push_back(test.patient_id + ":" +
                                   std::to_string(test.segments[i].start_s));
      for (int j = 0; j < k; ++j) full.detector_ids.push_back("d" + std::to_string(j));
      full.probs.resize(test_idx.size() * k);
      for (std::size_t i = 0; i < test_idx.size(); ++i)
        for (int j = 0; j < k; ++j) full.at(i, j) = local_probs[j][i];

      auto push_row = [&](const std::string& scheme, const std::vector<double>& scores) {
        ResultRow row{task.run, k, test.patient_id, scheme,
                      evaluate_scores(test, test_idx, scores, config.tau), std::nullopt};
        out.rows.push_back(std::move(row));
      };

      // Average individual local detector, plus their inter-rater agreement.
      {
        std::vector<std::optional<double>> se, sp, aucs, sdr;
        std::vector<double> fd, mfdd;
        for (int j = 0; j < k; ++j) {
          const auto m = evaluate_scores(test, test_idx, local_probs[j], config.tau);
          se.push_back(m.se);
          sp.push_back(m.sp);
          aucs.push_back(m.auc);
          sdr.push_back(m.sdr);
          fd.push_back(m.fd_per_h);
          mfdd.push_back(m.mfdd_s);
        }
        ResultRow row{task.run, k, test.patient_id, "local", {}, std::nullopt};
        row.metrics.patient_id = test.patient_id;
        row.metrics.se = mean_defined(se);
        row.metrics.sp = mean_defined(sp);
        row.metrics.auc = mean_defined(aucs);
        row.metrics.sdr = mean_defined(sdr);
        row.metrics.fd_per_h = std::accumulate(fd.begin(), fd.end(), 0.0) / k;
        row.metrics.mfdd_s = std::accumulate(mfdd.begin(), mfdd.end(), 0.0) / k;
        if (k >= 2) {
          LabelMatrix lm;
          std::vector<std::size_t> eval_rows;
          for (std::size_t i = 0; i < test_idx.size(); ++i) {
            const auto label = test.segments[test_idx[i]].label;
            if (label == SegmentLabel::Seizure || label == SegmentLabel::NonSeizure)
              eval_rows.push_back(i);
          }
          if (!eval_rows.empty()) {
            lm.n = eval_rows.size();
            lm.r = static_cast<std::size_t>(k);
            lm.values.resize(lm.n * lm.r);
            for (std::size_t i = 0; i < eval_rows.size(); ++i)
              for (int j = 0; j < k; ++j)
                lm.values[i * lm.r + j] = local_probs[j][eval_rows[i]] >= 0.5 ? 1 : 0;
            row.ac1 = metrics::gwet_ac1(lm);
          }
        }
        out.rows.push_back(std::move(row));
      }

      if (scheme_enabled("mv")) push_row("mv", agg::majority_vote(full));
      if (scheme_enabled("mean")) push_row("mean", agg::mean_aggregate(full));

      if (scheme_enabled("wmean") && k >= 2) {
        // Stacking is fit on the held-out detector's training segments,
        // featurized as the other detectors' predictions on them.
        const auto& ho_view = training_views[holdout];
        PredictionMatrix stack;
        for (std::size_t i = 0; i < ho_view.features.size(); ++i)
          stack.segment_ids.push_back("s" + std::to_string(i));
        for (int j = 0; j < k; ++j)
          if (static_cast<std::size_t>(j) != holdout)
            stack.detector_ids.push_back("d" + std::to_string(j));
        stack.probs.resize(stack.rows() * stack.cols());
        for (std::size_t i = 0; i < ho_view.features.size(); ++i) {
          std::size_t col = 0;
          for (int j = 0; j < k; ++j) {
            if (static_cast<std::size_t>(j) == holdout) continue;
            stack.at(i, col++) = locals[j].predict_features(*ho_view.features[i]);
          }
        }
        auto stacking = agg::fit_stacking(stack, ho_view.labels);
        stacking.trained_on_detector_id = "d" + std::to_string(holdout);

        PredictionMatrix reduced;
        reduced.segment_ids = full.segment_ids;
        reduced.detector_ids = stack.detector_ids;
        reduced.probs.resize(test_idx.size() * (k - 1));
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
          std::size_t col = 0;
          for (int j = 0; j < k; ++j) {
            if (static_cast<std::size_t>(j) == holdout) continue;
            reduced.at(i, col++) = local_probs[j][i];
          }
        }
        push_row("wmean", agg::weighted_mean(reduced, stacking));
      }

      if (scheme_enabled("ds")) {
        if (config.ds_pooled) {
          FoldOutput::PooledPiece piece;
          piece.k = k;
          piece.probs = full.probs;
          piece.segment_idx = test_idx;
          out.pooled.push_back(std::move(piece));
        } else {
          const auto state = agg::dawid_skene(full, config.ds_eps, config.ds_k_max);
          push_row("ds", state.mu);
          out.ds_params.push_back({task.run, k, test.patient_id, state.theta.t, state.theta.alpha,
                                   state.theta.beta, state.iterations,
                                   state.log_likelihood.back()});
        }
      }
    }
    return out;
  };

  // Parallel fold execution with deterministic collection order.
  std::vector<FoldOutput> outputs(tasks.size());
  std::atomic<std::size_t> cursor{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  unsigned jobs = config.jobs > 0 ? static_cast<unsigned>(config.jobs)
                                  : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(tasks.size()));

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= tasks.size() || failed.load()) return;
      try {
        outputs[i] = process_fold(tasks[i]);
      } catch (...) {
        std::scoped_lock lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (unsigned t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);

  LosoResult result;
  for (auto& fold : outputs) {
    result.rows.insert(result.rows.end(), fold.rows.begin(), fold.rows.end());
    result.ds_params.insert(result.ds_params.end(), fold.ds_params.begin(), fold.ds_params.end());
    result.fold_sizes.insert(result.fold_sizes.end(), fold.fold_sizes.begin(),
                             fold.fold_sizes.end());
  }

  // Pooled Dawid-Skene: one EM per (run, k) over every fold's test segments;
  // detector slot j acts as annotator j across folds.
  if (config.ds_pooled && scheme_enabled("ds")) {
    for (int run = 0; run < config.runs; ++run) {
      for (int k : config.k_values) {
        PredictionMatrix pooled;
        std::vector<std::pair<std::size_t, std::size_t>> spans;  // (fold, segment count)
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
          if (tasks[ti].run != run) continue;
          for (const auto& piece : outputs[ti].pooled) {
            if (piece.k != k) continue;
            spans.emplace_back(ti, piece.segment_idx.size());
            pooled.probs.insert(pooled.probs.end(), piece.probs.begin(), piece.probs.end());
          }
        }
        if (spans.empty()) continue;
        for (int j = 0; j < k; ++j) pooled.detector_ids.push_back("d" + std::to_string(j));
        pooled.segment_ids.resize(pooled.probs.size() / k);
        const auto state = agg::dawid_skene(pooled, config.ds_eps, config.ds_k_max);
        result.ds_params.push_back({run, k, "pooled", state.theta.t, state.theta.alpha,
                                    state.theta.beta, state.iterations,
                                    state.log_likelihood.back()});
        std::size_t offset = 0;
        for (const auto& [ti, count] : spans) {
          const PatientFeatures& test = cohort.patients[tasks[ti].fold];
          const FoldOutput::PooledPiece* piece = nullptr;
          for (const auto& p : outputs[ti].pooled)
            if (p.k == k) piece = &p;
          std::vector<double> scores(state.mu.begin() + offset,
                                     state.mu.begin() + offset + count);
          ResultRow row{run, k, test.patient_id, "ds",
                        evaluate_scores(test, piece->segment_idx, scores, config.tau),
                        std::nullopt};
          result.rows.push_back(std::move(row));
          offset += count;
        }
      }
    }
  }
  return result;
}

namespace {

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"auc", "se", "sp", "sdr", "fd_per_h", "mfdd_s"};
  return names;
}

std::optional<double> metric_value(const ResultRow& row, const std::string& metric) {
  if (metric == "auc") return row.metrics.auc;
  if (metric == "se") return row.metrics.se;
  if (metric == "sp") return row.metrics.sp;
  if (metric == "sdr") return row.metrics.sdr;
  if (metric == "fd_per_h") return row.metrics.fd_per_h;
  if (metric == "mfdd_s") return row.metrics.mfdd_s;
  if (metric == "ac1") return row.ac1;
  return std::nullopt;
}

int scheme_rank(const std::string& scheme) {
  if (scheme == "baseline") return 0;
  if (scheme == "local") return 1;
  if (scheme == "mv") return 2;
  if (scheme == "mean") return 3;
  if (scheme == "wmean") return 4;
  if (scheme == "ds") return 5;
  return 6;
}

}  // namespace

TrendTable trend_report(const LosoResult& result) {
  if (result.rows.empty()) throw DataError("no completed runs to report");

  std::map<std::pair<std::string, int>, std::map<int, std::vector<const ResultRow*>>> groups;
  for (const auto& row : result.rows)
    groups[{row.scheme, row.k}][row.run].push_back(&row);

  TrendTable table;
  for (const auto& [key, runs] : groups) {
    std::vector<std::string> metrics_here = metric_names();
    if (key.first == "local") metrics_here.push_back("ac1");
    for (const auto& metric : metrics_here) {
      std::vector<double> per_run;
      for (const auto& [run, rows] : runs) {
        double total = 0.0;
        std::size_t count = 0;
        for (const auto* row : rows) {
          if (auto v = metric_value(*row, metric)) {
            total += *v;
            ++count;
          }
        }
        if (count > 0) per_run.push_back(total / static_cast<double>(count));
      }
      if (per_run.empty()) continue;
      TrendRow tr;
      tr.scheme = key.first;
      tr.k = key.second;
      tr.metric = metric;
      tr.median = metrics::quantile(per_run, 0.5);
      tr.q1 = metrics::quantile(per_run, 0.25);
      tr.q3 = metrics::quantile(per_run, 0.75);
      table.rows.push_back(std::move(tr));
    }
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const TrendRow& a, const TrendRow& b) {
    if (scheme_rank(a.scheme) != scheme_rank(b.scheme))
      return scheme_rank(a.scheme) < scheme_rank(b.scheme);
    if (a.k != b.k) return a.k < b.k;
    return a.metric < b.metric;
  });

  std::map<int, std::vector<double>> size_medians;
  for (const auto& fs : result.fold_sizes) {
    std::vector<double> sizes(fs.subset_sizes.begin(), fs.subset_sizes.end());
    size_medians[fs.k].push_back(metrics::median(sizes));
  }
  for (const auto& [k, medians] : size_medians) {
    const double mean =
        std::accumulate(medians.begin(), medians.end(), 0.0) / static_cast<double>(medians.size());
    table.institution_sizes.push_back({k, mean});
  }
  return table;
}

namespace {

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

void write_per_patient_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "run,k,patient,scheme,auc,se,sp,sdr,fd_per_h,mfdd_s,ac1\n";
  for (const auto& row : rows) {
    out << row.run << ',' << row.k << ',' << row.patient << ',' << row.scheme << ','
        << opt_str(row.metrics.auc) << ',' << opt_str(row.metrics.se) << ','
        << opt_str(row.metrics.sp) << ',' << opt_str(row.metrics.sdr) << ','
        << format_double(row.metrics.fd_per_h) << ',' << format_double(row.metrics.mfdd_s) << ','
        << opt_str(row.ac1) << '\n';
  }
}

std::vector<ResultRow> load_per_patient_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("run,", 0) == 0) continue;
    }
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    fields.resize(11);
    ResultRow row;
    row.run = std::stoi(fields[0]);
    row.k = std::stoi(fields[1]);
    row.patient = fields[2];
    row.scheme = fields[3];
    row.metrics.patient_id = row.patient;
    row.metrics.auc = parse_opt(fields[4]);
    row.metrics.se = parse_opt(fields[5]);
    row.metrics.sp = parse_opt(fields[6]);
    row.metrics.sdr = parse_opt(fields[7]);
    row.metrics.fd_per_h = fields[8].empty() ? 0.0 : std::stod(fields[8]);
    row.metrics.mfdd_s = fields[9].empty() ? 0.0 : std::stod(fields[9]);
    row.ac1 = parse_opt(fields[10]);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_trend_csv(const std::filesystem::path& path, const TrendTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "scheme,k,metric,median,q1,q3\n";
  for (const auto& row : table.rows)
    out << row.scheme << ',' << row.k << ',' << row.metric << ',' << format_double(row.median)
        << ',' << format_double(row.q1) << ',' << format_double(row.q3) << '\n';
}

void write_institution_csv(const std::filesystem::path& path, const TrendTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "k,mean_median_patients\n";
  for (const auto& row : table.institution_sizes)
    out << row.k << ',' << format_double(row.mean_median_patients) << '\n';
}

void write_ds_params(const std::filesystem::path& dir, const std::vector<DsParamsRecord>& records) {
  std::filesystem::create_directories(dir);
  for (const auto& rec : records) {
    json j = {
        {"run", rec.run},
        {"k", rec.k},
        {"patient", rec.patient},
        {"t", rec.t},
        {"alpha", rec.alpha},
        {"beta", rec.beta},
        {"iterations", rec.iterations},
        {"log_likelihood", rec.final_log_likelihood},
    };
    const auto name =
        "run" + std::to_string(rec.run) + "_" + rec.patient + "_k" + std::to_string(rec.k) + ".json";
    std::ofstream out(dir / name);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out << j.dump(2) << "\n";
  }
}

}  // namespace nsda::sim
