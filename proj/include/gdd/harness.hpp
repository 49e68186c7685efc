#pragma once
// Experiment harness: config parsing, the teacher/student training loops,
// sweep execution, and CSV/JSON reporting.
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdd/distill.hpp"
#include "gdd/nn.hpp"
#include "gdd/synth.hpp"

namespace gdd {

struct TrainConfig {
    std::string role;          // "teacher" | "student"
    std::vector<int> widths;   // empty = role default ([32,64,64] / [8,16,16])
    int feature_tap = -1;      // -1 = last block
    int epochs = -1;           // -1 = role default (30 / 20)
    SgdConfig sgd;
    DistillConfig distill;
    std::string teacher_checkpoint;  // required for students with method != none
    bool inherit = false;
    std::uint64_t seed = 1;
    SynthSpec dataset;
    std::string output_dir = "runs/out";

    // Fills role defaults and checks invariants; throws ConfigError.
    void finalize();
};

TrainConfig config_from_json(const nlohmann::json& j);       // strict: unknown keys rejected
TrainConfig config_from_file(const std::string& path);
nlohmann::json config_to_json(const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double task_loss = 0, distill_loss = 0, total_loss = 0;
    double val_miou = 0, val_pixel_acc = 0;
};

struct RunReport {
    TrainConfig config;  // exact echo: a report can be re-run
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    std::vector<double> per_class_iou;
    double miou = 0, pixel_acc = 0;
    std::vector<std::vector<std::uint64_t>> confusion;
    std::uint64_t aux_param_count = 0;
    double wall_seconds = 0;
};

nlohmann::json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

struct TrainResult {
    std::string checkpoint_path;
    RunReport report;
};

// Supervised training of the wide net; writes teacher.ckpt.json + report.json
// into cfg.output_dir.
TrainResult train_teacher(const TrainConfig& cfg);

// Full distillation loop: student forward, frozen-teacher targets, the
// configured distillation loss, SGD on student + auxiliaries. Writes
// student.ckpt.json (+ aux.ckpt.json when auxiliaries exist) + report.json.
TrainResult train_student(const TrainConfig& cfg);

struct SweepValueSummary {
    std::string value;
    double mean_miou = 0, std_miou = 0;  // over the runs that finished (NaN if none)
    std::vector<std::string> run_ids;
    std::vector<std::string> failed_run_ids;
};

struct SweepReport {
    std::string axis;
    std::vector<std::string> values;
    std::vector<std::uint64_t> seeds;
    std::vector<RunReport> runs;      // values-major, seeds-minor order
    std::vector<std::string> errors;  // parallel to runs; "" = finished
    std::vector<SweepValueSummary> summary;

    bool all_ok() const;
};

// Runs the cross product values x seeds of student trainings derived from
// `base`, one subdirectory per run under base.output_dir. Axes: sigma, alpha,
// tau, inject_location, module_ablation (none|cwd|sn_only|gdd). Honors the
// GDD_THREADS env var (default 1) for parallel runs. Writes sweep.csv +
// summary.json. A run that throws (a diverged arm hitting a numeric error)
// is recorded in `errors` and does not stop its siblings; config errors in
// the plan itself still throw before anything runs.
SweepReport run_sweep(const TrainConfig& base, const std::string& axis,
                      const std::vector<std::string>& values,
                      const std::vector<std::uint64_t>& seeds);

// CSV columns: run_id, method, alpha, tau, sigma, inject_location, seed,
// epochs, final_miou, final_pixel_acc, wall_seconds.
std::string reports_to_csv(const std::vector<RunReport>& reports);
std::string reports_to_json(const std::vector<RunReport>& reports);
// Collects every report.json found under `dir` (depth <= 2), run-id sorted.
std::vector<RunReport> collect_reports(const std::string& dir);

// Derived stream ids for the per-run rngs; fixed so runs are reproducible.
enum : std::uint64_t {
    kStreamInit = 10,     // network parameter init
    kStreamAux = 11,      // align + generator init
    kStreamShuffle = 12,  // epoch shuffles
    kStreamNoise = 13,    // distillation noise
    kStreamMask = 14,     // mgd masks
};

}  // namespace gdd
