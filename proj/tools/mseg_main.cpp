// mseg command-line front end. Subcommands cover the full pipeline: generate
// synthetic data, train, predict, evaluate, run cross-validation studies,
// ablate input modalities, and fuse label maps.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mseg/harness.hpp"
#include "mseg/inference.hpp"
#include "mseg/phantom.hpp"
#include "mseg/training.hpp"
#include "mseg/volume.hpp"

namespace fs = std::filesystem;
using namespace mseg;

namespace {

std::vector<std::string> split_ids(const std::string& text) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= text.size()) {
        const size_t p = text.find(',', start);
        const std::string tok =
            text.substr(start, p == std::string::npos ? std::string::npos : p - start);
        if (!tok.empty()) out.push_back(tok);
        if (p == std::string::npos) break;
        start = p + 1;
    }
    return out;
}

const ManifestEntry& entry_by_id(const std::vector<ManifestEntry>& manifest,
                                 const std::string& id) {
    for (const auto& e : manifest)
        if (e.id == id) return e;
    throw std::invalid_argument("id '" + id + "' not in manifest");
}

std::vector<std::string> all_ids(const std::vector<ManifestEntry>& manifest) {
    std::vector<std::string> out;
    out.reserve(manifest.size());
    for (const auto& e : manifest) out.push_back(e.id);
    return out;
}

std::vector<MultiModalCase> load_ids(const std::vector<ManifestEntry>& manifest,
                                     const std::vector<std::string>& ids) {
    std::vector<MultiModalCase> cases;
    for (const auto& id : ids) cases.push_back(load_case(entry_by_id(manifest, id), true));
    return cases;
}

// Global flags applied on top of the config file (when given).
struct Overrides {
    std::string config_path;
    std::string outdir = "out";
    uint64_t seed = 0;
    bool seed_set = false;
    std::string fusion;
    int connectivity = 0;
};

HarnessConfig resolve_config(const Overrides& g) {
    HarnessConfig cfg;
    if (!g.config_path.empty()) cfg = load_harness_config(g.config_path);
    if (g.seed_set) cfg.train.seed = g.seed;
    if (!g.fusion.empty()) cfg.fusion = parse_fusion_method(g.fusion);
    if (g.connectivity != 0) {
        if (g.connectivity != 6 && g.connectivity != 18 && g.connectivity != 26)
            throw std::invalid_argument("--connectivity must be 6, 18 or 26");
        cfg.connectivity = g.connectivity;
    }
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

int cmd_phantom(const std::string& out_dir, int count, PhantomSpec spec) {
    fs::create_directories(out_dir);
    std::vector<ManifestEntry> manifest;
    for (int i = 0; i < count; ++i) {
        PhantomSpec s = spec;
        s.seed = spec.seed + static_cast<uint64_t>(i);
        const MultiModalCase mc = generate_phantom(s);
        const fs::path dir = fs::path(out_dir) / mc.case_id;
        fs::create_directories(dir);
        ManifestEntry e;
        e.id = mc.case_id;
        for (const auto& [name, vol] : mc.modalities) {
            const fs::path p = dir / (name + ".mvol");
            write_volume(vol, p.string());
            e.inputs.emplace_back(name, p.string());
        }
        const fs::path tp = dir / "truth.mvol";
        write_volume(*mc.truth, tp.string());
        e.truth_path = tp.string();
        manifest.push_back(std::move(e));
        std::printf("wrote case %s (%lld lesion voxels)\n", mc.case_id.c_str(),
                    static_cast<long long>(mc.truth->foreground_count()));
    }
    const fs::path mpath = fs::path(out_dir) / "manifest.txt";
    write_manifest(manifest, mpath.string());
    std::printf("manifest: %s\n", mpath.string().c_str());
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& train_csv,
              const std::string& val_csv, const Overrides& g) {
    const HarnessConfig cfg = resolve_config(g);
    const auto manifest = load_manifest(manifest_path);
    const auto train_cases = load_ids(manifest, split_ids(train_csv));
    const auto val_cases = load_ids(manifest, split_ids(val_csv));
    fs::create_directories(g.outdir);
    std::ofstream log(fs::path(g.outdir) / "train.log", std::ios::binary);
    const TrainOutcome outcome =
        train(cfg.model, train_cases, val_cases, cfg.train, g.outdir, &log);
    double best_dsc = 0.0;
    for (const auto& [epoch, dsc] : outcome.report.val_dsc)
        if (epoch == outcome.report.best_epoch) best_dsc = dsc;
    std::printf("best epoch %d (val dsc %.4f), checkpoint %s\n", outcome.report.best_epoch,
                best_dsc, outcome.report.best_checkpoint.c_str());
    return 0;
}

int cmd_predict(const std::string& manifest_path, const std::string& ids_csv,
                const std::string& ckpt, float threshold, const Overrides& g) {
    const HarnessConfig cfg = resolve_config(g);
    const auto manifest = load_manifest(manifest_path);
    std::vector<std::string> ids = split_ids(ids_csv);
    if (ids.empty()) ids = all_ids(manifest);
    Model model = build_model(cfg.model);
    load_checkpoint(model.params, ckpt);
    fs::create_directories(g.outdir);
    for (const auto& id : ids) {
        const MultiModalCase mcase = load_case(entry_by_id(manifest, id), false);
        const Volume3D pred =
            predict_case(model, mcase, cfg.fusion, threshold, cfg.train.batch_size);
        const fs::path p = fs::path(g.outdir) / ("pred-" + id + ".mvol");
        write_volume(pred, p.string());
        std::printf("wrote %s (%lld lesion voxels)\n", p.string().c_str(),
                    static_cast<long long>(pred.foreground_count()));
    }
    return 0;
}

int cmd_evaluate(const std::string& manifest_path, const std::string& ids_csv,
                 const std::string& pred_dir, const Overrides& g) {
    const HarnessConfig cfg = resolve_config(g);
    const auto manifest = load_manifest(manifest_path);
    std::vector<std::string> ids = split_ids(ids_csv);
    if (ids.empty()) ids = all_ids(manifest);
    std::vector<CaseMetrics> rows;
    for (const auto& id : ids) {
        const ManifestEntry& e = entry_by_id(manifest, id);
        if (!e.has_truth()) throw std::invalid_argument("case '" + id + "' has no truth mask");
        const Volume3D seg =
            read_volume((fs::path(pred_dir) / ("pred-" + id + ".mvol")).string());
        const Volume3D truth = read_volume(e.truth_path);
        rows.push_back(evaluate_case(id, seg, truth, cfg.connectivity));
    }
    const MetricsReport report = make_metrics_report(std::move(rows));
    fs::create_directories(g.outdir);
    write_file(fs::path(g.outdir) / "report.tsv", metrics_report_tsv(report));
    write_file(fs::path(g.outdir) / "report.json", metrics_report_json(report));
    std::fputs(metrics_report_tsv(report).c_str(), stdout);
    return 0;
}

int cmd_crossval(const std::string& manifest_path, const std::string& protocol,
                 const std::string& ids_csv, const std::string& test_csv, int k,
                 const Overrides& g) {
    const HarnessConfig cfg = resolve_config(g);
    const auto manifest = load_manifest(manifest_path);
    std::vector<std::string> ids = split_ids(ids_csv);
    if (ids.empty()) ids = all_ids(manifest);

    ExperimentPlan plan;
    if (protocol == "nested-loso") {
        plan = plan_nested_loso(ids);
    } else if (protocol == "loso-ensemble") {
        const std::vector<std::string> test_ids = split_ids(test_csv);
        if (test_ids.empty())
            throw std::invalid_argument("loso-ensemble needs --test-ids");
        std::vector<std::string> train_ids;
        for (const auto& id : ids) {
            if (std::find(test_ids.begin(), test_ids.end(), id) == test_ids.end())
                train_ids.push_back(id);
        }
        plan = plan_loso_ensemble(train_ids, test_ids);
    } else if (protocol == "nested-kfold") {
        plan = plan_nested_kfold(ids, k);
    } else {
        throw std::invalid_argument("unknown protocol '" + protocol +
                                    "' (nested-loso, loso-ensemble, nested-kfold)");
    }
    apply_config(plan, cfg);

    const RunPlanResult result = run_plan(plan, manifest, g.outdir);
    std::printf("%d member(s) trained, %d restored\n", result.trained, result.skipped);
    std::fputs(metrics_report_tsv(result.report).c_str(), stdout);
    for (const auto& f : result.failures) std::fprintf(stderr, "failed: %s\n", f.c_str());
    return result.ok() ? 0 : 1;
}

int cmd_ablate(const std::string& manifest_path, const std::string& train_csv,
               const std::string& val_csv, const std::string& test_csv,
               const std::string& variants_text, const Overrides& g) {
    const HarnessConfig cfg = resolve_config(g);
    const auto manifest = load_manifest(manifest_path);
    const Split split{split_ids(train_csv), split_ids(val_csv), split_ids(test_csv)};
    std::vector<std::vector<std::vector<std::string>>> variants;
    size_t start = 0;
    while (start <= variants_text.size()) {
        const size_t p = variants_text.find(';', start);
        const std::string tok = variants_text.substr(
            start, p == std::string::npos ? std::string::npos : p - start);
        if (!tok.empty()) variants.push_back(parse_branches(tok));
        if (p == std::string::npos) break;
        start = p + 1;
    }
    const AblationResult result = run_ablation(manifest, variants, split, cfg, g.outdir);
    std::fputs(ablation_report_tsv(result).c_str(), stdout);
    return 0;
}

int cmd_fuse(const std::string& inputs_csv, float threshold, const std::string& out_path,
             const Overrides& g) {
    const HarnessConfig cfg = resolve_config(g);
    const std::vector<std::string> paths = split_ids(inputs_csv);
    if (paths.empty()) throw std::invalid_argument("fuse needs --inputs");
    std::vector<Volume3D> volumes;
    for (const auto& p : paths) volumes.push_back(read_volume(p));

    Volume3D fused;
    if (cfg.fusion == FusionMethod::Averaging) {
        // Averaging consumes probability maps; masks are lifted to {0,1}.
        for (auto& v : volumes) {
            if (v.kind == ElementKind::u8) {
                Volume3D probs = Volume3D::zeros_f32(v.dims, v.spacing);
                for (size_t i = 0; i < v.u8.size(); ++i) probs.f32[i] = float(v.u8[i]);
                v = std::move(probs);
            }
        }
        fused = average_fusion(volumes, threshold);
    } else {
        // Vote-style methods consume masks; probability maps are thresholded.
        for (auto& v : volumes)
            if (v.kind == ElementKind::f32) v = binarize_volume(v, threshold);
        fused = cfg.fusion == FusionMethod::Staple ? staple(volumes).consensus
                                                   : majority_vote(volumes);
    }
    write_volume(fused, out_path);
    std::printf("wrote %s (%lld foreground voxels)\n", out_path.c_str(),
                static_cast<long long>(fused.foreground_count()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-branch lesion segmentation pipeline"};
    app.require_subcommand(1);

    Overrides g;
    app.add_option("--config", g.config_path, "key = value run configuration file");
    app.add_option("--outdir", g.outdir, "output directory (default: out)");
    auto* seed_opt = app.add_option("--seed", g.seed, "training seed override");
    app.add_option("--fusion", g.fusion, "fusion method: majority, averaging, staple");
    app.add_option("--connectivity", g.connectivity, "lesion neighborhood: 6, 18 or 26");

    // -- phantom: generate a synthetic dataset.
    auto* ph = app.add_subcommand("phantom", "generate synthetic multi-modal cases");
    int ph_count = 1;
    PhantomSpec ph_spec;
    ph->add_option("--count", ph_count, "number of cases (seeds seed..seed+count-1)");
    ph->add_option("--dim", ph_spec.dims[0], "cubic volume side length")
        ->check(CLI::Range(16, 4096));
    ph->add_option("--lesions-min", ph_spec.lesion_count_range[0], "min lesion count");
    ph->add_option("--lesions-max", ph_spec.lesion_count_range[1], "max lesion count");
    ph->add_option("--radius-min", ph_spec.lesion_radius_range_mm[0], "min lesion radius (mm)");
    ph->add_option("--radius-max", ph_spec.lesion_radius_range_mm[1], "max lesion radius (mm)");
    ph->add_option("--noise", ph_spec.noise_sigma, "Gaussian noise sigma");

    // -- train: fit one model on explicit train/validation cases.
    auto* tr = app.add_subcommand("train", "train one model");
    std::string tr_manifest, tr_train, tr_val;
    tr->add_option("--manifest", tr_manifest, "dataset manifest")->required();
    tr->add_option("--train-ids", tr_train, "comma-separated training case ids")->required();
    tr->add_option("--val-ids", tr_val, "comma-separated validation case ids")->required();

    // -- predict: segment cases with a trained checkpoint.
    auto* pr = app.add_subcommand("predict", "predict lesion masks");
    std::string pr_manifest, pr_ids, pr_ckpt;
    float pr_threshold = 0.5f;
    pr->add_option("--manifest", pr_manifest, "dataset manifest")->required();
    pr->add_option("--ids", pr_ids, "comma-separated case ids (default: all)");
    pr->add_option("--ckpt", pr_ckpt, "model checkpoint")->required();
    pr->add_option("--threshold", pr_threshold, "probability cut (default 0.5)");

    // -- evaluate: compare predicted masks against manifest truths.
    auto* ev = app.add_subcommand("evaluate", "evaluate predictions");
    std::string ev_manifest, ev_ids, ev_pred;
    ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
    ev->add_option("--ids", ev_ids, "comma-separated case ids (default: all)");
    ev->add_option("--pred", ev_pred, "directory holding pred-<id>.mvol files")->required();

    // -- crossval: plan and run a cross-validation protocol.
    auto* cv = app.add_subcommand("crossval", "run a cross-validation study");
    std::string cv_manifest, cv_protocol = "nested-loso", cv_ids, cv_test;
    int cv_k = 4;
    cv->add_option("--manifest", cv_manifest, "dataset manifest")->required();
    cv->add_option("--protocol", cv_protocol,
                   "nested-loso, loso-ensemble or nested-kfold (default nested-loso)");
    cv->add_option("--ids", cv_ids, "subject ids (default: all manifest ids)");
    cv->add_option("--test-ids", cv_test, "held-out test ids (loso-ensemble only)");
    cv->add_option("--k", cv_k, "fold count for nested-kfold (default 4)");

    // -- ablate: compare branch layouts on one fixed split.
    auto* ab = app.add_subcommand("ablate", "compare modality combinations");
    std::string ab_manifest, ab_train, ab_val, ab_test, ab_variants;
    ab->add_option("--manifest", ab_manifest, "dataset manifest")->required();
    ab->add_option("--train-ids", ab_train, "training case ids")->required();
    ab->add_option("--val-ids", ab_val, "validation case ids")->required();
    ab->add_option("--test-ids", ab_test, "test case ids")->required();
    ab->add_option("--variants", ab_variants,
                   "semicolon-separated branch layouts, e.g. 'flair|t1|t2;t1;flair+t1+t2'")
        ->required();

    // -- fuse: combine predicted volumes into one mask.
    auto* fu = app.add_subcommand("fuse", "fuse masks or probability maps");
    std::string fu_inputs, fu_out = "fused.mvol";
    float fu_threshold = 0.5f;
    fu->add_option("--inputs", fu_inputs, "comma-separated volume paths")->required();
    fu->add_option("--out", fu_out, "output volume path (default fused.mvol)");
    fu->add_option("--threshold", fu_threshold, "probability cut (default 0.5)");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        if (ph->parsed()) {
            ph_spec.dims = {ph_spec.dims[0], ph_spec.dims[0], ph_spec.dims[0]};
            if (g.seed_set) ph_spec.seed = g.seed;
            return cmd_phantom(g.outdir, ph_count, ph_spec);
        }
        if (tr->parsed()) return cmd_train(tr_manifest, tr_train, tr_val, g);
        if (pr->parsed()) return cmd_predict(pr_manifest, pr_ids, pr_ckpt, pr_threshold, g);
        if (ev->parsed()) return cmd_evaluate(ev_manifest, ev_ids, ev_pred, g);
        if (cv->parsed()) return cmd_crossval(cv_manifest, cv_protocol, cv_ids, cv_test, cv_k, g);
        if (ab->parsed()) return cmd_ablate(ab_manifest, ab_train, ab_val, ab_test, ab_variants, g);
        if (fu->parsed()) return cmd_fuse(fu_inputs, fu_threshold, fu_out, g);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
