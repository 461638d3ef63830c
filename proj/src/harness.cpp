#include "mseg/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "mseg/inference.hpp"

namespace fs = std::filesystem;

namespace mseg {

namespace {

void check_unique_ids(const std::vector<std::string>& ids, const char* what) {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
        if (id.empty()) throw std::invalid_argument(std::string(what) + ": empty id");
        if (!seen.insert(id).second)
            throw std::invalid_argument(std::string(what) + ": duplicate id '" + id + "'");
    }
}

std::vector<std::string> ids_without(const std::vector<std::string>& ids, size_t skip) {
    std::vector<std::string> out;
    out.reserve(ids.size() - 1);
    for (size_t i = 0; i < ids.size(); ++i)
        if (i != skip) out.push_back(ids[i]);
    return out;
}

std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ',';
        out += ids[i];
    }
    return out;
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    size_t pos = 0;
    int64_t r = 0;
    try {
        r = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config " + key + ": '" + v + "' is not an integer");
    }
    if (pos != v.size())
        throw std::invalid_argument("config " + key + ": '" + v + "' is not an integer");
    return r;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    size_t pos = 0;
    uint64_t r = 0;
    try {
        r = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config " + key + ": '" + v + "' is not an unsigned integer");
    }
    if (pos != v.size() || (!v.empty() && v[0] == '-'))
        throw std::invalid_argument("config " + key + ": '" + v + "' is not an unsigned integer");
    return r;
}

double parse_f64(const std::string& key, const std::string& v) {
    size_t pos = 0;
    double r = 0.0;
    try {
        r = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config " + key + ": '" + v + "' is not a number");
    }
    if (pos != v.size())
        throw std::invalid_argument("config " + key + ": '" + v + "' is not a number");
    return r;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) out.push_back(int(parse_i64(key, trim(item))));
    if (out.empty()) throw std::invalid_argument("config " + key + ": empty list");
    return out;
}

// File names derived from user-supplied ids keep only portable characters.
std::string sanitize_name(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' ||
                        c == '-' || c == '+';
        if (!ok) c = '_';
    }
    return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

using ManifestIndex = std::unordered_map<std::string, const ManifestEntry*>;

ManifestIndex index_manifest(const std::vector<ManifestEntry>& manifest) {
    ManifestIndex index;
    for (const auto& e : manifest) {
        if (!index.emplace(e.id, &e).second)
            throw std::invalid_argument("manifest: duplicate id '" + e.id + "'");
    }
    return index;
}

const ManifestEntry& entry_for(const ManifestIndex& index, const std::string& id) {
    const auto it = index.find(id);
    if (it == index.end()) throw std::invalid_argument("id '" + id + "' not in manifest");
    return *it->second;
}

// Every id present, sets non-empty and pairwise disjoint, truths available.
void check_split(const Split& s, const ManifestIndex& index, const std::string& where) {
    if (s.train_ids.empty() || s.val_ids.empty() || s.test_ids.empty())
        throw std::invalid_argument(where + ": train/validation/test sets must be non-empty");
    std::unordered_set<std::string> seen;
    for (const auto* ids : {&s.train_ids, &s.val_ids, &s.test_ids}) {
        for (const auto& id : *ids) {
            if (!seen.insert(id).second)
                throw std::invalid_argument(where + ": id '" + id +
                                            "' appears in two sets of one split");
            const ManifestEntry& e = entry_for(index, id);
            if (!e.has_truth())
                throw std::invalid_argument(where + ": case '" + id + "' has no truth mask");
        }
    }
    std::unordered_set<std::string> files;
    for (const auto& id : s.test_ids) {
        if (!files.insert(sanitize_name(id)).second)
            throw std::invalid_argument(where + ": test ids '" + id +
                                        "' collide after file-name sanitization");
    }
}

std::vector<MultiModalCase> load_cases(const std::vector<std::string>& ids,
                                       const ManifestIndex& index, bool need_truth) {
    std::vector<MultiModalCase> cases;
    cases.reserve(ids.size());
    for (const auto& id : ids) cases.push_back(load_case(entry_for(index, id), need_truth));
    return cases;
}

// Ensemble aggregation of binary member masks. Averaging binary masks and
// cutting strictly above one half picks exactly the strict-majority label, so
// both vote-style methods share one code path.
Volume3D fuse_masks(const std::vector<Volume3D>& masks, FusionMethod method) {
    if (masks.size() == 1) return masks.front();
    if (method == FusionMethod::Staple) return staple(masks).consensus;
    return ensemble_fuse(masks);
}

std::string format_mean(const std::optional<double>& v) {
    if (!v) return "na";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", *v);
    return buf;
}

}  // namespace

ExperimentPlan plan_nested_loso(const std::vector<std::string>& ids) {
    check_unique_ids(ids, "plan_nested_loso");
    if (ids.size() < 3)
        throw std::invalid_argument("plan_nested_loso: needs at least 3 ids, got " +
                                    std::to_string(ids.size()));
    ExperimentPlan plan;
    for (size_t t = ids.size(); t-- > 0;) {
        const std::vector<std::string> rest = ids_without(ids, t);
        for (size_t v = rest.size(); v-- > 0;) {
            Split s;
            s.train_ids = ids_without(rest, v);
            s.val_ids = {rest[v]};
            s.test_ids = {ids[t]};
            plan.splits.push_back(std::move(s));
        }
    }
    return plan;
}

ExperimentPlan plan_loso_ensemble(const std::vector<std::string>& train_ids,
                                  const std::vector<std::string>& test_ids) {
    check_unique_ids(train_ids, "plan_loso_ensemble train");
    check_unique_ids(test_ids, "plan_loso_ensemble test");
    if (train_ids.size() < 2)
        throw std::invalid_argument("plan_loso_ensemble: needs at least 2 train ids");
    if (test_ids.empty()) throw std::invalid_argument("plan_loso_ensemble: empty test set");
    for (const auto& id : train_ids) {
        if (std::find(test_ids.begin(), test_ids.end(), id) != test_ids.end())
            throw std::invalid_argument("plan_loso_ensemble: id '" + id +
                                        "' is in both train and test sets");
    }
    ExperimentPlan plan;
    for (size_t v = train_ids.size(); v-- > 0;) {
        Split s;
        s.train_ids = ids_without(train_ids, v);
        s.val_ids = {train_ids[v]};
        s.test_ids = test_ids;
        plan.splits.push_back(std::move(s));
    }
    return plan;
}

ExperimentPlan plan_nested_kfold(const std::vector<std::string>& ids, int k) {
    check_unique_ids(ids, "plan_nested_kfold");
    if (k < 2) throw std::invalid_argument("plan_nested_kfold: k must be at least 2");
    const size_t n = ids.size();
    if (n < size_t(k) * size_t(k))
        throw std::invalid_argument("plan_nested_kfold: needs at least k*k ids, got " +
                                    std::to_string(n));

    // Contiguous chunking. Outer folds grow from the back, inner folds from
    // the front: with 37 ids at k=4 the outer test folds hold 9/9/9/10 and a
    // 27-id remainder splits into validation folds of 7/7/7/6.
    const auto chunk_sizes = [](size_t count, int parts, bool remainder_first) {
        std::vector<size_t> sizes(size_t(parts), count / size_t(parts));
        const size_t rem = count % size_t(parts);
        for (size_t r = 0; r < rem; ++r) {
            if (remainder_first)
                ++sizes[r];
            else
                ++sizes[sizes.size() - 1 - r];
        }
        return sizes;
    };

    ExperimentPlan plan;
    const std::vector<size_t> outer = chunk_sizes(n, k, /*remainder_first=*/false);
    size_t off = 0;
    for (int o = 0; o < k; ++o) {
        const std::vector<std::string> test(ids.begin() + long(off),
                                            ids.begin() + long(off + outer[size_t(o)]));
        std::vector<std::string> rest;
        rest.reserve(n - test.size());
        rest.insert(rest.end(), ids.begin(), ids.begin() + long(off));
        rest.insert(rest.end(), ids.begin() + long(off + outer[size_t(o)]), ids.end());
        off += outer[size_t(o)];

        const std::vector<size_t> inner = chunk_sizes(rest.size(), k, /*remainder_first=*/true);
        size_t ioff = 0;
        for (int j = 0; j < k; ++j) {
            Split s;
            s.val_ids.assign(rest.begin() + long(ioff), rest.begin() + long(ioff + inner[size_t(j)]));
            s.train_ids.insert(s.train_ids.end(), rest.begin(), rest.begin() + long(ioff));
            s.train_ids.insert(s.train_ids.end(), rest.begin() + long(ioff + inner[size_t(j)]),
                               rest.end());
            s.test_ids = test;
            ioff += inner[size_t(j)];
            plan.splits.push_back(std::move(s));
        }
    }
    return plan;
}

std::vector<ManifestEntry> parse_manifest(std::istream& in) {
    std::vector<ManifestEntry> entries;
    std::unordered_set<std::string> ids;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        std::istringstream tokens(text);
        ManifestEntry e;
        tokens >> e.id;
        std::string tok;
        while (tokens >> tok) {
            const size_t eq = tok.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == tok.size())
                throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                            ": expected name=path, got '" + tok + "'");
            const std::string name = tok.substr(0, eq);
            const std::string path = tok.substr(eq + 1);
            if (name == "truth") {
                if (e.has_truth())
                    throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                                ": duplicate truth");
                e.truth_path = path;
            } else {
                for (const auto& [n, p] : e.inputs) {
                    (void)p;
                    if (n == name)
                        throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                                    ": duplicate input '" + name + "'");
                }
                e.inputs.emplace_back(name, path);
            }
        }
        if (e.inputs.empty())
            throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                        ": case '" + e.id + "' lists no input volumes");
        if (!ids.insert(e.id).second)
            throw std::invalid_argument("manifest: duplicate id '" + e.id + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read manifest " + path);
    return parse_manifest(in);
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::string text;
    for (const auto& e : entries) {
        if (e.id.empty() || e.inputs.empty())
            throw std::invalid_argument("manifest entry needs an id and at least one input");
        text += e.id;
        for (const auto& [name, p] : e.inputs) text += " " + name + "=" + p;
        if (e.has_truth()) text += " truth=" + e.truth_path;
        text += '\n';
    }
    write_text_file(path, text);
}

MultiModalCase load_case(const ManifestEntry& entry, bool need_truth) {
    if (need_truth && !entry.has_truth())
        throw std::invalid_argument("case '" + entry.id + "' has no truth mask");
    MultiModalCase c;
    c.case_id = entry.id;
    for (const auto& [name, path] : entry.inputs) c.modalities.emplace_back(name, read_volume(path));
    if (entry.has_truth()) c.truth = read_volume(entry.truth_path);
    validate_case(c);
    return c;
}

// Splits on every delimiter occurrence; unlike getline, a trailing delimiter
// still produces its (empty) final token so it can be rejected.
static std::vector<std::string> split_all(const std::string& s, char delim) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t p = s.find(delim, start);
        if (p == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, p - start));
        start = p + 1;
    }
}

std::vector<std::vector<std::string>> parse_branches(const std::string& text) {
    std::vector<std::vector<std::string>> branches;
    std::unordered_set<std::string> seen;
    for (const std::string& branch : split_all(text, '|')) {
        std::vector<std::string> names;
        for (const std::string& name : split_all(branch, '+')) {
            const std::string t = trim(name);
            if (t.empty()) throw std::invalid_argument("branches: empty input name in '" + text + "'");
            if (!seen.insert(t).second)
                throw std::invalid_argument("branches: duplicate input name '" + t + "'");
            names.push_back(t);
        }
        if (names.empty()) throw std::invalid_argument("branches: empty branch in '" + text + "'");
        branches.push_back(std::move(names));
    }
    if (branches.empty()) throw std::invalid_argument("branches: no branches in '" + text + "'");
    return branches;
}

std::string format_branches(const std::vector<std::vector<std::string>>& branches) {
    std::string out;
    for (size_t b = 0; b < branches.size(); ++b) {
        if (b) out += '|';
        for (size_t i = 0; i < branches[b].size(); ++i) {
            if (i) out += '+';
            out += branches[b][i];
        }
    }
    return out;
}

HarnessConfig parse_harness_config(std::istream& in) {
    HarnessConfig cfg;
    std::unordered_set<std::string> used;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        const std::string text = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (text.empty()) continue;
        const size_t eq = text.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        if (!used.insert(key).second)
            throw std::invalid_argument("config: key '" + key + "' set twice");

        if (key == "branches") {
            cfg.model.branches = parse_branches(value);
        } else if (key == "input_size") {
            cfg.model.input_size = int(parse_i64(key, value));
        } else if (key == "stem_width") {
            cfg.model.stem_width = int(parse_i64(key, value));
        } else if (key == "width_mult") {
            const std::vector<int> v = parse_int_list(key, value);
            if (v.size() != cfg.model.width_mult.size())
                throw std::invalid_argument("config width_mult: expected 5 values");
            std::copy(v.begin(), v.end(), cfg.model.width_mult.begin());
        } else if (key == "stage_depths") {
            const std::vector<int> v = parse_int_list(key, value);
            if (v.size() != cfg.model.stage_depths.size())
                throw std::invalid_argument("config stage_depths: expected 4 values");
            std::copy(v.begin(), v.end(), cfg.model.stage_depths.begin());
        } else if (key == "model_seed") {
            cfg.model.seed = parse_u64(key, value);
        } else if (key == "lr0") {
            cfg.train.lr0 = parse_f64(key, value);
        } else if (key == "lr_decay") {
            cfg.train.lr_decay = parse_f64(key, value);
        } else if (key == "lr_decay_interval") {
            cfg.train.lr_decay_interval = int(parse_i64(key, value));
        } else if (key == "batch_size") {
            cfg.train.batch_size = int(parse_i64(key, value));
        } else if (key == "max_epochs") {
            cfg.train.max_epochs = int(parse_i64(key, value));
        } else if (key == "seed") {
            cfg.train.seed = parse_u64(key, value);
        } else if (key == "val_interval") {
            cfg.train.val_interval = int(parse_i64(key, value));
        } else if (key == "fusion") {
            cfg.fusion = parse_fusion_method(value);
        } else if (key == "threshold") {
            const double t = parse_f64(key, value);
            if (!(t >= 0.0 && t < 1.0))
                throw std::invalid_argument("config threshold: must be in [0, 1)");
            cfg.threshold = float(t);
        } else if (key == "connectivity") {
            const int c = int(parse_i64(key, value));
            if (c != 6 && c != 18 && c != 26)
                throw std::invalid_argument("config connectivity: must be 6, 18 or 26");
            cfg.connectivity = c;
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    validate_model_config(cfg.model);
    validate_train_config(cfg.train);
    return cfg;
}

HarnessConfig load_harness_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read config " + path);
    return parse_harness_config(in);
}

void apply_config(ExperimentPlan& plan, const HarnessConfig& cfg) {
    plan.model = cfg.model;
    plan.train = cfg.train;
    plan.fusion = cfg.fusion;
    plan.threshold = cfg.threshold;
    plan.connectivity = cfg.connectivity;
}

RunPlanResult run_plan(const ExperimentPlan& plan, const std::vector<ManifestEntry>& manifest,
                       const std::string& out_dir) {
    validate_model_config(plan.model);
    validate_train_config(plan.train);
    if (plan.splits.empty()) throw std::invalid_argument("run_plan: plan has no splits");
    if (out_dir.empty()) throw std::invalid_argument("run_plan: output directory required");

    const ManifestIndex index = index_manifest(manifest);
    for (size_t i = 0; i < plan.splits.size(); ++i)
        check_split(plan.splits[i], index, "split " + std::to_string(i));

    fs::create_directories(out_dir);
    RunPlanResult result;
    std::vector<char> member_ok(plan.splits.size(), 0);
    std::vector<fs::path> member_dirs(plan.splits.size());

    for (size_t i = 0; i < plan.splits.size(); ++i) {
        const Split& split = plan.splits[i];
        char name[32];
        std::snprintf(name, sizeof name, "member-%03zu", i);
        const fs::path dir = fs::path(out_dir) / name;
        member_dirs[i] = dir;

        const auto pred_path = [&dir](const std::string& id) {
            return dir / ("pred-" + sanitize_name(id) + ".mvol");
        };
        bool finished = fs::exists(dir / "done");
        for (const auto& id : split.test_ids) finished = finished && fs::exists(pred_path(id));
        if (finished) {
            ++result.skipped;
            member_ok[i] = 1;
            continue;
        }

        try {
            fs::create_directories(dir);
            const std::vector<MultiModalCase> train_cases = load_cases(split.train_ids, index, true);
            const std::vector<MultiModalCase> val_cases = load_cases(split.val_ids, index, true);

            ModelConfig mcfg = plan.model;
            mcfg.seed = plan.model.seed + i;
            TrainConfig tcfg = plan.train;
            tcfg.seed = plan.train.seed + i;

            std::ofstream log(dir / "train.log", std::ios::binary);
            const TrainOutcome outcome =
                train(mcfg, train_cases, val_cases, tcfg, dir.string(), &log);

            for (const auto& id : split.test_ids) {
                const MultiModalCase mcase = load_case(entry_for(index, id), false);
                const Volume3D pred =
                    predict_case(outcome.model, mcase, plan.fusion, plan.threshold, tcfg.batch_size);
                write_volume(pred, pred_path(id).string());
            }
            write_text_file(dir / "done", "ok\n");
            ++result.trained;
            member_ok[i] = 1;
        } catch (const std::exception& e) {
            result.failures.push_back("member " + std::to_string(i) + " (test=" +
                                      join_ids(split.test_ids) + ", val=" +
                                      join_ids(split.val_ids) + "): " + e.what());
        }
    }

    // Members sharing one test set form an ensemble; fuse them per test case.
    std::vector<std::pair<std::vector<std::string>, std::vector<size_t>>> groups;
    for (size_t i = 0; i < plan.splits.size(); ++i) {
        const auto& test = plan.splits[i].test_ids;
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&test](const auto& g) { return g.first == test; });
        if (it == groups.end()) {
            groups.push_back({test, {i}});
        } else {
            it->second.push_back(i);
        }
    }

    std::vector<CaseMetrics> rows;
    const fs::path fused_dir = fs::path(out_dir) / "fused";
    for (const auto& [test_ids, members] : groups) {
        const bool complete = std::all_of(members.begin(), members.end(),
                                          [&member_ok](size_t i) { return member_ok[i] != 0; });
        if (!complete) continue;  // the member failure is already recorded
        try {
            fs::create_directories(fused_dir);
            for (const auto& id : test_ids) {
                std::vector<Volume3D> masks;
                masks.reserve(members.size());
                for (size_t i : members) {
                    masks.push_back(read_volume(
                        (member_dirs[i] / ("pred-" + sanitize_name(id) + ".mvol")).string()));
                }
                const Volume3D fused = fuse_masks(masks, plan.fusion);
                write_volume(fused, (fused_dir / ("pred-" + sanitize_name(id) + ".mvol")).string());
                const Volume3D truth = read_volume(entry_for(index, id).truth_path);
                rows.push_back(evaluate_case(id, fused, truth, plan.connectivity));
            }
        } catch (const std::exception& e) {
            result.failures.push_back("fusion (test=" + join_ids(test_ids) + "): " + e.what());
        }
    }

    result.report = make_metrics_report(std::move(rows));
    write_text_file(fs::path(out_dir) / "report.tsv", metrics_report_tsv(result.report));
    write_text_file(fs::path(out_dir) / "report.json", metrics_report_json(result.report));
    return result;
}

AblationResult run_ablation(const std::vector<ManifestEntry>& manifest,
                            const std::vector<std::vector<std::vector<std::string>>>& variants,
                            const Split& split, const HarnessConfig& base,
                            const std::string& out_dir) {
    if (variants.empty()) throw std::invalid_argument("run_ablation: no variants");
    if (out_dir.empty()) throw std::invalid_argument("run_ablation: output directory required");
    validate_train_config(base.train);

    const ManifestIndex index = index_manifest(manifest);
    check_split(split, index, "ablation split");

    std::vector<std::string> all_ids;
    for (const auto* ids : {&split.train_ids, &split.val_ids, &split.test_ids})
        all_ids.insert(all_ids.end(), ids->begin(), ids->end());

    // Validate every variant before training any: each must be a sound model
    // layout whose modalities exist in every referenced case.
    std::vector<std::string> names;
    for (const auto& branches : variants) {
        ModelConfig mcfg = base.model;
        mcfg.branches = branches;
        validate_model_config(mcfg);
        const std::string name = format_branches(branches);
        if (std::find(names.begin(), names.end(), name) != names.end())
            throw std::invalid_argument("run_ablation: duplicate variant '" + name + "'");
        names.push_back(name);
        for (const auto& modality : mcfg.input_names()) {
            for (const auto& id : all_ids) {
                const ManifestEntry& e = entry_for(index, id);
                const bool found =
                    std::any_of(e.inputs.begin(), e.inputs.end(),
                                [&modality](const auto& in) { return in.first == modality; });
                if (!found)
                    throw std::invalid_argument("run_ablation: variant '" + name +
                                                "' needs modality '" + modality +
                                                "' but case '" + id + "' lacks it");
            }
        }
    }

    const std::vector<MultiModalCase> train_cases = load_cases(split.train_ids, index, true);
    const std::vector<MultiModalCase> val_cases = load_cases(split.val_ids, index, true);

    fs::create_directories(out_dir);
    AblationResult result;
    for (size_t v = 0; v < variants.size(); ++v) {
        ModelConfig mcfg = base.model;
        mcfg.branches = variants[v];
        const fs::path dir = fs::path(out_dir) / sanitize_name(names[v]);
        fs::create_directories(dir);

        std::ofstream log(dir / "train.log", std::ios::binary);
        const TrainOutcome outcome =
            train(mcfg, train_cases, val_cases, base.train, dir.string(), &log);

        std::vector<CaseMetrics> rows;
        for (const auto& id : split.test_ids) {
            const MultiModalCase mcase = load_case(entry_for(index, id), true);
            const Volume3D pred =
                predict_case(outcome.model, mcase, base.fusion, base.threshold,
                             base.train.batch_size);
            write_volume(pred, (dir / ("pred-" + sanitize_name(id) + ".mvol")).string());
            rows.push_back(evaluate_case(id, pred, *mcase.truth, base.connectivity));
        }
        MetricsReport report = make_metrics_report(std::move(rows));
        write_text_file(dir / "report.tsv", metrics_report_tsv(report));
        write_text_file(dir / "report.json", metrics_report_json(report));
        result.rows.emplace_back(names[v], std::move(report));
    }

    write_text_file(fs::path(out_dir) / "ablation.tsv", ablation_report_tsv(result));
    return result;
}

std::string ablation_report_tsv(const AblationResult& result) {
    std::string out = "variant\tdsc\tppv\tltpr\tlfpr\tvd\tsd_mm\thd_mm\n";
    for (const auto& [name, report] : result.rows) {
        out += name;
        for (const auto& v : {report.mean_dsc, report.mean_ppv, report.mean_ltpr, report.mean_lfpr,
                              report.mean_vd, report.mean_sd, report.mean_hd}) {
            out += '\t';
            out += format_mean(v);
        }
        out += '\n';
    }
    return out;
}

}  // namespace mseg
