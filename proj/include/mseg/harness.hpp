#pragma once

// Experiment orchestration: cross-validation split planners, dataset
// manifests, key-value run configuration, and runners that train every plan
// member, fuse member predictions per test case, and emit metric reports.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mseg/fusion.hpp"
#include "mseg/metrics.hpp"
#include "mseg/network.hpp"
#include "mseg/training.hpp"
#include "mseg/volume.hpp"

namespace mseg {

// One cross-validation member: disjoint id sets drawn from a dataset.
struct Split {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

// A full experiment: the splits plus the configuration shared by every
// member. Member i trains with model seed model.seed + i and train seed
// train.seed + i so runs are reproducible yet members are decorrelated.
struct ExperimentPlan {
    std::vector<Split> splits;
    ModelConfig model;
    TrainConfig train;
    FusionMethod fusion = FusionMethod::MajorityVote;
    float threshold = 0.5f;  // probability binarization cut
    int connectivity = 26;   // lesion neighborhood used by reports
};

// Nested leave-one-subject-out: every (test id, validation id) ordered pair
// of distinct ids yields one split, the rest train. Test ids run through the
// input list in reverse; for each, validation ids run through the remaining
// ids in reverse; training ids keep input order. n ids -> n*(n-1) splits.
// Throws std::invalid_argument on fewer than 3 ids or duplicates.
ExperimentPlan plan_nested_loso(const std::vector<std::string>& ids);

// Leave-one-subject-out ensemble over a fixed external test set: validation
// ids run through train_ids in reverse, the rest train, every member shares
// test_ids. Throws on fewer than 2 train ids, an empty test set, duplicates,
// or train/test overlap.
ExperimentPlan plan_loso_ensemble(const std::vector<std::string>& train_ids,
                                  const std::vector<std::string>& test_ids);

// Nested k-fold: the ids are cut into k contiguous outer folds (sizes differ
// by at most one, any remainder widening the LAST folds); each outer fold is
// the test set of k members whose validation sets rotate over the k
// contiguous inner folds of the remaining ids (any remainder widening the
// FIRST folds), ascending. n ids -> k*k splits. Throws when k < 2 or
// |ids| < k*k or ids repeat.
ExperimentPlan plan_nested_kfold(const std::vector<std::string>& ids, int k = 4);

// Dataset manifest: one line per case, `id name=path ... truth=path`,
// whitespace separated; blank lines and lines starting with '#' are skipped.
// The truth entry may be absent for unlabeled cases.
struct ManifestEntry {
    std::string id;
    std::vector<std::pair<std::string, std::string>> inputs;  // name -> volume path
    std::string truth_path;                                   // empty when unlabeled

    bool has_truth() const { return !truth_path.empty(); }
};

std::vector<ManifestEntry> parse_manifest(std::istream& in);
std::vector<ManifestEntry> load_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

// Reads every referenced volume of one manifest entry into a case and
// validates the shared grid. Throws when need_truth and the entry has none.
MultiModalCase load_case(const ManifestEntry& entry, bool need_truth);

// Branch grammar for config files and ablation variants: '|' separates
// branches, '+' stacks input names inside one branch as channels.
// "flair|t1|t2" -> three one-modality branches; "flair+t1+t2" -> one
// three-channel branch. Throws on empty names or duplicates.
std::vector<std::vector<std::string>> parse_branches(const std::string& text);
std::string format_branches(const std::vector<std::vector<std::string>>& branches);

// Run configuration parsed from `key = value` text ('#' comments, blank
// lines ignored). Unknown or repeated keys and malformed values throw.
// Keys: branches, input_size, stem_width, width_mult, stage_depths,
// model_seed, lr0, lr_decay, lr_decay_interval, batch_size, max_epochs,
// seed, val_interval, fusion, threshold, connectivity.
struct HarnessConfig {
    ModelConfig model;
    TrainConfig train;
    FusionMethod fusion = FusionMethod::MajorityVote;
    float threshold = 0.5f;
    int connectivity = 26;
};

HarnessConfig parse_harness_config(std::istream& in);
HarnessConfig load_harness_config(const std::string& path);

// Applies a config's shared fields onto a plan (splits are untouched).
void apply_config(ExperimentPlan& plan, const HarnessConfig& cfg);

struct RunPlanResult {
    MetricsReport report;                // rows for every fused+evaluated test case
    std::vector<std::string> failures;   // one message per failed member, split-tagged
    int trained = 0;                     // members trained by this invocation
    int skipped = 0;                     // members restored from finished artifacts

    bool ok() const { return failures.empty(); }
};

// Trains every split of the plan, writes per-member artifacts under
// out_dir/member-<i> (best.ckpt, train.log, pred-<id>.mvol, done), fuses the
// member predictions of each distinct test set, evaluates the fused masks
// against the manifest truths, and writes report.tsv / report.json under
// out_dir. Members whose done marker and predictions already exist are
// skipped, so finished runs are idempotent and interrupted ones resume.
// Structural problems (empty plan, unknown ids, overlapping or empty sets,
// missing truths, duplicate manifest ids) throw before any training. A
// member failure is recorded, aborts fusion for that member's test set only,
// and leaves the remaining splits running.
RunPlanResult run_plan(const ExperimentPlan& plan,
                       const std::vector<ManifestEntry>& manifest,
                       const std::string& out_dir);

// One ablation variant: a named branch layout trained on the fixed split.
struct AblationResult {
    std::vector<std::pair<std::string, MetricsReport>> rows;  // variant name -> report
};

// Trains one model per branch layout on a single fixed split and evaluates
// each on the shared test cases. Artifacts go under out_dir/<variant>/;
// the comparative table lands in out_dir/ablation.tsv. Throws on an empty
// variant list, a variant naming a modality the manifest lacks, or split
// problems (overlap, unknown ids, missing truth).
AblationResult run_ablation(const std::vector<ManifestEntry>& manifest,
                            const std::vector<std::vector<std::vector<std::string>>>& variants,
                            const Split& split, const HarnessConfig& base,
                            const std::string& out_dir);

// `variant` + the seven per-case metric means, one row per variant, "na" for
// undefined means.
std::string ablation_report_tsv(const AblationResult& result);

}  // namespace mseg
