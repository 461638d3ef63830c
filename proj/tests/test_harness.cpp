#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mseg/harness.hpp"
#include "mseg/phantom.hpp"

using namespace mseg;
namespace fs = std::filesystem;

namespace {

using IdList = std::vector<std::string>;

IdList seq(int lo, int hi) {
    IdList out;
    for (int i = lo; i <= hi; ++i) out.push_back(std::to_string(i));
    return out;
}

IdList cat(std::initializer_list<IdList> parts) {
    IdList out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

bool same_split(const Split& s, const IdList& train, const IdList& val, const IdList& test) {
    return s.train_ids == train && s.val_ids == val && s.test_ids == test;
}

void check_disjoint_and_covering(const Split& s, const IdList& universe, bool covering) {
    std::set<std::string> seen;
    size_t total = 0;
    for (const auto* ids : {&s.train_ids, &s.val_ids, &s.test_ids}) {
        total += ids->size();
        for (const auto& id : *ids) {
            CHECK(std::find(universe.begin(), universe.end(), id) != universe.end());
            seen.insert(id);
        }
    }
    CHECK(seen.size() == total);  // pairwise disjoint
    if (covering) CHECK(seen.size() == universe.size());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

ModelConfig tiny_model_cfg() {
    ModelConfig cfg;
    cfg.input_size = 24;
    cfg.stem_width = 4;
    cfg.width_mult = {1, 2, 4, 8, 16};
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.seed = 7;
    return cfg;
}

TrainConfig quick_train_cfg() {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 1;
    cfg.seed = 9;
    return cfg;
}

// Writes phantom cases (modalities + truth) as volume files under root and
// returns the matching manifest.
std::vector<ManifestEntry> make_disk_dataset(const fs::path& root,
                                             const std::vector<std::pair<std::string, uint64_t>>& ids,
                                             std::array<int, 3> dims = {20, 20, 20}) {
    fs::create_directories(root);
    std::vector<ManifestEntry> manifest;
    for (const auto& [id, seed] : ids) {
        PhantomSpec spec;
        spec.dims = dims;
        spec.lesion_count_range = {1, 2};
        spec.lesion_radius_range_mm = {2.0, 3.0};
        spec.seed = seed;
        const MultiModalCase mc = generate_phantom(spec);
        const fs::path dir = root / id;
        fs::create_directories(dir);
        ManifestEntry e;
        e.id = id;
        for (const auto& [name, vol] : mc.modalities) {
            const fs::path p = dir / (name + ".mvol");
            write_volume(vol, p.string());
            e.inputs.emplace_back(name, p.string());
        }
        const fs::path tp = dir / "truth.mvol";
        write_volume(*mc.truth, tp.string());
        e.truth_path = tp.string();
        manifest.push_back(std::move(e));
    }
    return manifest;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("nested leave-one-out enumerates every test and validation pair") {
    const auto plan = plan_nested_loso(seq(1, 5));
    REQUIRE(plan.splits.size() == 20);

    // (train, val, test) rows in generation order.
    const std::vector<std::array<IdList, 3>> expect{
        {{{"1", "2", "3"}, {"4"}, {"5"}}}, {{{"1", "2", "4"}, {"3"}, {"5"}}},
        {{{"1", "3", "4"}, {"2"}, {"5"}}}, {{{"2", "3", "4"}, {"1"}, {"5"}}},
        {{{"1", "2", "3"}, {"5"}, {"4"}}}, {{{"1", "2", "5"}, {"3"}, {"4"}}},
        {{{"1", "3", "5"}, {"2"}, {"4"}}}, {{{"2", "3", "5"}, {"1"}, {"4"}}},
        {{{"1", "2", "4"}, {"5"}, {"3"}}}, {{{"1", "2", "5"}, {"4"}, {"3"}}},
        {{{"1", "4", "5"}, {"2"}, {"3"}}}, {{{"2", "4", "5"}, {"1"}, {"3"}}},
        {{{"1", "3", "4"}, {"5"}, {"2"}}}, {{{"1", "3", "5"}, {"4"}, {"2"}}},
        {{{"1", "4", "5"}, {"3"}, {"2"}}}, {{{"3", "4", "5"}, {"1"}, {"2"}}},
        {{{"2", "3", "4"}, {"5"}, {"1"}}}, {{{"2", "3", "5"}, {"4"}, {"1"}}},
        {{{"2", "4", "5"}, {"3"}, {"1"}}}, {{{"3", "4", "5"}, {"2"}, {"1"}}},
    };
    for (size_t i = 0; i < expect.size(); ++i) {
        CAPTURE(i);
        CHECK(same_split(plan.splits[i], expect[i][0], expect[i][1], expect[i][2]));
        check_disjoint_and_covering(plan.splits[i], seq(1, 5), true);
    }

    CHECK(plan_nested_loso(seq(1, 3)).splits.size() == 6);
    CHECK_THROWS(plan_nested_loso(seq(1, 2)));
    CHECK_THROWS(plan_nested_loso({"a", "b", "a"}));
    CHECK_THROWS(plan_nested_loso({"a", "", "b"}));

    // Renaming ids permutes nothing: the structure depends on positions only.
    const IdList letters{"a", "b", "c", "d", "e"};
    const auto renamed = plan_nested_loso(letters);
    REQUIRE(renamed.splits.size() == plan.splits.size());
    const auto rename = [&letters](const IdList& ids) {
        IdList out;
        for (const auto& id : ids) out.push_back(letters[size_t(std::stoi(id) - 1)]);
        return out;
    };
    for (size_t i = 0; i < plan.splits.size(); ++i) {
        CHECK(renamed.splits[i].train_ids == rename(plan.splits[i].train_ids));
        CHECK(renamed.splits[i].val_ids == rename(plan.splits[i].val_ids));
        CHECK(renamed.splits[i].test_ids == rename(plan.splits[i].test_ids));
    }
}

TEST_CASE("ensemble planning rotates validation over a fixed test set") {
    const IdList test{"x", "y"};
    const auto plan = plan_loso_ensemble(seq(1, 5), test);
    REQUIRE(plan.splits.size() == 5);
    const std::vector<std::array<IdList, 2>> expect{
        {{{"1", "2", "3", "4"}, {"5"}}}, {{{"1", "2", "3", "5"}, {"4"}}},
        {{{"1", "2", "4", "5"}, {"3"}}}, {{{"1", "3", "4", "5"}, {"2"}}},
        {{{"2", "3", "4", "5"}, {"1"}}},
    };
    for (size_t i = 0; i < expect.size(); ++i) {
        CAPTURE(i);
        CHECK(same_split(plan.splits[i], expect[i][0], expect[i][1], test));
        check_disjoint_and_covering(plan.splits[i], cat({seq(1, 5), test}), true);
    }

    CHECK(plan_loso_ensemble({"1", "2"}, test).splits.size() == 2);
    CHECK_THROWS(plan_loso_ensemble({"1"}, test));
    CHECK_THROWS(plan_loso_ensemble(seq(1, 5), {}));
    CHECK_THROWS(plan_loso_ensemble({"1", "2", "x"}, test));  // overlap
}

TEST_CASE("nested k-fold reproduces the published fold pattern") {
    const auto plan = plan_nested_kfold(seq(1, 37), 4);
    REQUIRE(plan.splits.size() == 16);

    // Expected (train, val, test) per member. Outer test folds are 9/9/9/10
    // contiguous blocks (remainder widens the last); each leaves a remainder
    // whose contiguous quarters (remainder widens the first) rotate as
    // validation, ascending.
    const std::vector<std::array<IdList, 3>> expect{
        {{seq(17, 37), seq(10, 16), seq(1, 9)}},
        {{cat({seq(10, 16), seq(24, 37)}), seq(17, 23), seq(1, 9)}},
        {{cat({seq(10, 23), seq(31, 37)}), seq(24, 30), seq(1, 9)}},
        {{seq(10, 30), seq(31, 37), seq(1, 9)}},
        {{cat({seq(8, 9), seq(19, 37)}), seq(1, 7), seq(10, 18)}},
        {{cat({seq(1, 7), seq(24, 37)}), cat({seq(8, 9), seq(19, 23)}), seq(10, 18)}},
        {{cat({seq(1, 9), seq(19, 23), seq(31, 37)}), seq(24, 30), seq(10, 18)}},
        {{cat({seq(1, 9), seq(19, 30)}), seq(31, 37), seq(10, 18)}},
        {{cat({seq(8, 18), seq(28, 37)}), seq(1, 7), seq(19, 27)}},
        {{cat({seq(1, 7), seq(15, 18), seq(28, 37)}), seq(8, 14), seq(19, 27)}},
        {{cat({seq(1, 14), seq(31, 37)}), cat({seq(15, 18), seq(28, 30)}), seq(19, 27)}},
        {{cat({seq(1, 18), seq(28, 30)}), seq(31, 37), seq(19, 27)}},
        {{seq(8, 27), seq(1, 7), seq(28, 37)}},
        {{cat({seq(1, 7), seq(15, 27)}), seq(8, 14), seq(28, 37)}},
        {{cat({seq(1, 14), seq(22, 27)}), seq(15, 21), seq(28, 37)}},
        {{seq(1, 21), seq(22, 27), seq(28, 37)}},
    };
    for (size_t i = 0; i < expect.size(); ++i) {
        CAPTURE(i);
        CHECK(same_split(plan.splits[i], expect[i][0], expect[i][1], expect[i][2]));
        check_disjoint_and_covering(plan.splits[i], seq(1, 37), true);
    }

    const auto even = plan_nested_kfold(seq(1, 16), 4);
    REQUIRE(even.splits.size() == 16);
    for (size_t i = 0; i < even.splits.size(); ++i) {
        CHECK(even.splits[i].test_ids.size() == 4);
        CHECK(even.splits[i].val_ids.size() == 3);
        CHECK(even.splits[i].train_ids.size() == 9);
        check_disjoint_and_covering(even.splits[i], seq(1, 16), true);
    }
    CHECK(even.splits[0].test_ids == seq(1, 4));
    CHECK(even.splits[15].test_ids == seq(13, 16));

    CHECK_THROWS(plan_nested_kfold(seq(1, 37), 1));
    CHECK_THROWS(plan_nested_kfold(seq(1, 15), 4));  // below k*k
    CHECK(plan_nested_kfold(seq(1, 4), 2).splits.size() == 4);
}

TEST_CASE("branch grammar round-trips") {
    const auto mb = parse_branches("flair|t1|t2");
    REQUIRE(mb.size() == 3);
    CHECK(mb[0] == IdList{"flair"});
    CHECK(mb[2] == IdList{"t2"});
    CHECK(format_branches(mb) == "flair|t1|t2");

    const auto sb = parse_branches("flair+t1+t2");
    REQUIRE(sb.size() == 1);
    CHECK(sb[0] == (IdList{"flair", "t1", "t2"}));
    CHECK(format_branches(sb) == "flair+t1+t2");

    const auto mixed = parse_branches(" flair + t1 | t2 ");
    REQUIRE(mixed.size() == 2);
    CHECK(mixed[0] == (IdList{"flair", "t1"}));
    CHECK(mixed[1] == IdList{"t2"});

    CHECK_THROWS(parse_branches(""));
    CHECK_THROWS(parse_branches("flair||t1"));
    CHECK_THROWS(parse_branches("flair+"));
    CHECK_THROWS(parse_branches("flair|flair"));
}

TEST_CASE("config text populates every knob") {
    std::istringstream in(
        "# run configuration\n"
        "branches = flair+t1|t2\n"
        "input_size = 32\n"
        "stem_width = 8\n"
        "width_mult = 1, 2, 4, 8, 16\n"
        "stage_depths = 1,1,2,1\n"
        "model_seed = 11\n"
        "\n"
        "lr0 = 2e-4\n"
        "lr_decay = 0.9   # stepwise\n"
        "lr_decay_interval = 100\n"
        "batch_size = 4\n"
        "max_epochs = 3\n"
        "seed = 21\n"
        "val_interval = 2\n"
        "fusion = staple\n"
        "threshold = 0.4\n"
        "connectivity = 18\n");
    const HarnessConfig cfg = parse_harness_config(in);
    CHECK(cfg.model.branches == (std::vector<IdList>{{"flair", "t1"}, {"t2"}}));
    CHECK(cfg.model.input_size == 32);
    CHECK(cfg.model.stem_width == 8);
    CHECK(cfg.model.width_mult == (std::array<int, 5>{1, 2, 4, 8, 16}));
    CHECK(cfg.model.stage_depths == (std::array<int, 4>{1, 1, 2, 1}));
    CHECK(cfg.model.seed == 11);
    CHECK(cfg.train.lr0 == 2e-4);
    CHECK(cfg.train.lr_decay == 0.9);
    CHECK(cfg.train.lr_decay_interval == 100);
    CHECK(cfg.train.batch_size == 4);
    CHECK(cfg.train.max_epochs == 3);
    CHECK(cfg.train.seed == 21);
    CHECK(cfg.train.val_interval == 2);
    CHECK(cfg.fusion == FusionMethod::Staple);
    CHECK(cfg.threshold == 0.4f);
    CHECK(cfg.connectivity == 18);

    const auto parse = [](const std::string& text) {
        std::istringstream s(text);
        return parse_harness_config(s);
    };
    CHECK_NOTHROW(parse(""));  // all defaults
    CHECK_THROWS(parse("volume = 3\n"));            // unknown key
    CHECK_THROWS(parse("seed = 1\nseed = 2\n"));    // repeated key
    CHECK_THROWS(parse("batch_size = many\n"));     // malformed int
    CHECK_THROWS(parse("width_mult = 1,2,3\n"));    // wrong arity
    CHECK_THROWS(parse("fusion = consensus\n"));    // unknown method
    CHECK_THROWS(parse("threshold = 1.0\n"));       // out of range
    CHECK_THROWS(parse("connectivity = 10\n"));     // not a neighborhood
    CHECK_THROWS(parse("input_size = 16\n"));       // degenerate level chain
    CHECK_THROWS(parse("seed\n"));                  // no '='

    ExperimentPlan plan = plan_nested_loso(seq(1, 3));
    apply_config(plan, cfg);
    CHECK(plan.model.input_size == 32);
    CHECK(plan.train.seed == 21);
    CHECK(plan.fusion == FusionMethod::Staple);
    CHECK(plan.connectivity == 18);
    CHECK(plan.splits.size() == 6);  // splits untouched
}

TEST_CASE("manifest text round-trips and validates") {
    std::istringstream in(
        "# dataset index\n"
        "\n"
        "case-a flair=/d/a/flair.mvol t1=/d/a/t1.mvol truth=/d/a/truth.mvol\n"
        "case-b t2=/d/b/t2.mvol\n");
    const auto entries = parse_manifest(in);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].id == "case-a");
    REQUIRE(entries[0].inputs.size() == 2);
    CHECK(entries[0].inputs[0].first == "flair");
    CHECK(entries[0].inputs[1].second == "/d/a/t1.mvol");
    CHECK(entries[0].truth_path == "/d/a/truth.mvol");
    CHECK(entries[1].has_truth() == false);

    const fs::path path = fresh_dir("mseg_manifest_test");
    fs::create_directories(path);
    write_manifest(entries, (path / "m.txt").string());
    const auto reread = load_manifest((path / "m.txt").string());
    REQUIRE(reread.size() == 2);
    CHECK(reread[0].inputs == entries[0].inputs);
    CHECK(reread[0].truth_path == entries[0].truth_path);
    CHECK(reread[1].id == "case-b");
    fs::remove_all(path);

    const auto parse = [](const std::string& text) {
        std::istringstream s(text);
        return parse_manifest(s);
    };
    CHECK_THROWS(parse("a flair=f.mvol\na flair=g.mvol\n"));  // duplicate id
    CHECK_THROWS(parse("a flair\n"));                          // token without '='
    CHECK_THROWS(parse("a truth=t.mvol\n"));                   // no inputs
    CHECK_THROWS(parse("a flair=f.mvol flair=g.mvol\n"));      // duplicate input
    CHECK_THROWS(parse("a flair=f.mvol truth=t truth=u\n"));   // duplicate truth
}

TEST_CASE("cases load from manifest volume files") {
    const fs::path root = fresh_dir("mseg_load_case_test");
    const auto manifest = make_disk_dataset(root, {{"a", 31}});
    const MultiModalCase c = load_case(manifest[0], true);
    CHECK(c.case_id == "a");
    REQUIRE(c.modalities.size() == 3);
    CHECK(c.modalities[0].first == "flair");
    CHECK(c.truth.has_value());
    CHECK(c.truth->kind == ElementKind::u8);

    ManifestEntry truthless = manifest[0];
    truthless.truth_path.clear();
    CHECK_NOTHROW(load_case(truthless, false));
    CHECK_THROWS(load_case(truthless, true));

    ManifestEntry missing = manifest[0];
    missing.inputs[0].second = (root / "nowhere.mvol").string();
    CHECK_THROWS(load_case(missing, true));

    // A modality on a different grid must be rejected.
    Volume3D odd = Volume3D::zeros_f32({8, 8, 8}, {1.0, 1.0, 1.0});
    write_volume(odd, (root / "odd.mvol").string());
    ManifestEntry skewed = manifest[0];
    skewed.inputs[0].second = (root / "odd.mvol").string();
    CHECK_THROWS(load_case(skewed, true));
    fs::remove_all(root);
}

TEST_CASE("a plan runs end to end, resumes, and reports") {
    const fs::path root = fresh_dir("mseg_run_plan_test");
    const auto manifest = make_disk_dataset(root, {{"a", 41}, {"b", 42}, {"c", 43}});

    ExperimentPlan plan = plan_nested_loso({"a", "b", "c"});
    plan.model = tiny_model_cfg();
    plan.train = quick_train_cfg();
    REQUIRE(plan.splits.size() == 6);

    const fs::path out = root / "run";
    const RunPlanResult r1 = run_plan(plan, manifest, out.string());
    CHECK(r1.ok());
    CHECK(r1.trained == 6);
    CHECK(r1.skipped == 0);
    REQUIRE(r1.report.cases.size() == 3);
    std::set<std::string> row_ids;
    for (const auto& c : r1.report.cases) {
        row_ids.insert(c.case_id);
        CHECK(c.dsc >= 0.0);
        CHECK(c.dsc <= 1.0);
    }
    CHECK(row_ids == std::set<std::string>{"a", "b", "c"});

    CHECK(fs::exists(out / "report.tsv"));
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "member-000" / "done"));
    CHECK(fs::exists(out / "member-000" / "best.ckpt"));
    CHECK(fs::exists(out / "member-005" / "pred-a.mvol"));
    CHECK(fs::exists(out / "fused" / "pred-c.mvol"));
    const std::string tsv = slurp(out / "report.tsv");
    CHECK(tsv.rfind("case\tdsc\tppv\tltpr\tlfpr\tvd\tsd_mm\thd_mm\n", 0) == 0);

    // A second invocation restores everything and rewrites identical reports.
    const RunPlanResult r2 = run_plan(plan, manifest, out.string());
    CHECK(r2.trained == 0);
    CHECK(r2.skipped == 6);
    CHECK(slurp(out / "report.tsv") == tsv);
    for (size_t i = 0; i < r1.report.cases.size(); ++i) {
        CHECK(r1.report.cases[i].case_id == r2.report.cases[i].case_id);
        CHECK(r1.report.cases[i].dsc == r2.report.cases[i].dsc);
    }

    // A fresh directory reproduces the same report bytes from scratch.
    const fs::path out2 = root / "run2";
    const RunPlanResult r3 = run_plan(plan, manifest, out2.string());
    CHECK(r3.trained == 6);
    CHECK(slurp(out2 / "report.tsv") == tsv);
    CHECK(slurp(out2 / "report.json") == slurp(out / "report.json"));
    fs::remove_all(root);
}

TEST_CASE("structural problems are rejected before any training") {
    const fs::path root = fresh_dir("mseg_run_plan_reject_test");
    const auto manifest = make_disk_dataset(root, {{"a", 51}, {"b", 52}});

    ExperimentPlan plan;
    plan.model = tiny_model_cfg();
    plan.train = quick_train_cfg();
    plan.splits.push_back({{"a"}, {"b"}, {"a"}});  // train/test overlap
    const fs::path out = root / "run";
    CHECK_THROWS(run_plan(plan, manifest, out.string()));
    CHECK(!fs::exists(out));

    plan.splits = {{{"a"}, {"b"}, {"nope"}}};  // unknown id
    CHECK_THROWS(run_plan(plan, manifest, out.string()));
    plan.splits = {{{"a"}, {}, {"b"}}};  // empty validation set
    CHECK_THROWS(run_plan(plan, manifest, out.string()));
    plan.splits.clear();
    CHECK_THROWS(run_plan(plan, manifest, out.string()));
    CHECK(!fs::exists(out));

    // A labeled plan over a case with no truth path is rejected up front.
    auto truthless = manifest;
    truthless[1].truth_path.clear();
    plan = plan_nested_loso({"a", "b", "c"});
    plan.model = tiny_model_cfg();
    plan.train = quick_train_cfg();
    CHECK_THROWS(run_plan(plan, truthless, out.string()));
    fs::remove_all(root);
}

TEST_CASE("a failing member silences only its own test set") {
    const fs::path root = fresh_dir("mseg_run_plan_failure_test");
    auto manifest = make_disk_dataset(root, {{"a", 61}, {"b", 62}, {"c", 63}});

    // Rewrite case c's truth as all-background: any member training on c has
    // no lesion slices to learn from and must fail.
    Volume3D empty_truth = read_volume(manifest[2].truth_path);
    std::fill(empty_truth.u8.begin(), empty_truth.u8.end(), uint8_t(0));
    write_volume(empty_truth, manifest[2].truth_path);

    ExperimentPlan plan = plan_nested_loso({"a", "b", "c"});
    plan.model = tiny_model_cfg();
    plan.train = quick_train_cfg();

    const fs::path out = root / "run";
    const RunPlanResult r1 = run_plan(plan, manifest, out.string());
    CHECK(!r1.ok());
    CHECK(r1.failures.size() == 2);  // the two members trained on c alone
    for (const auto& f : r1.failures) CHECK(f.find("member ") == 0);
    CHECK(r1.trained == 4);
    // Only the fold testing on c has both members intact.
    REQUIRE(r1.report.cases.size() == 1);
    CHECK(r1.report.cases[0].case_id == "c");

    // Completed members are kept; failed ones retry (and fail again).
    const RunPlanResult r2 = run_plan(plan, manifest, out.string());
    CHECK(r2.skipped == 4);
    CHECK(r2.trained == 0);
    CHECK(r2.failures.size() == 2);
    CHECK(r2.report.cases.size() == 1);
    fs::remove_all(root);
}

TEST_CASE("ablation trains one model per branch layout") {
    const fs::path root = fresh_dir("mseg_ablation_test");
    const auto manifest = make_disk_dataset(root, {{"a", 71}, {"b", 72}, {"c", 73}});
    const Split split{{"a"}, {"b"}, {"c"}};
    HarnessConfig base;
    base.model = tiny_model_cfg();
    base.train = quick_train_cfg();

    const std::vector<std::vector<IdList>> variants{
        {{"t1"}},                      // single branch, one modality
        {{"flair", "t1", "t2"}},       // single branch, stacked channels
    };
    const fs::path out = root / "ablate";
    const AblationResult res = run_ablation(manifest, variants, split, base, out.string());
    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].first == "t1");
    CHECK(res.rows[1].first == "flair+t1+t2");
    for (const auto& [name, report] : res.rows) {
        CAPTURE(name);
        REQUIRE(report.cases.size() == 1);
        CHECK(report.cases[0].case_id == "c");
        CHECK(report.cases[0].dsc >= 0.0);
    }
    CHECK(fs::exists(out / "ablation.tsv"));
    CHECK(fs::exists(out / "t1" / "best.ckpt"));
    CHECK(fs::exists(out / "flair+t1+t2" / "report.tsv"));
    const std::string table = slurp(out / "ablation.tsv");
    CHECK(table.rfind("variant\tdsc\tppv\tltpr\tlfpr\tvd\tsd_mm\thd_mm\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);

    CHECK_THROWS(run_ablation(manifest, {}, split, base, out.string()));
    CHECK_THROWS(run_ablation(manifest, {{{"dwi"}}}, split, base, out.string()));
    CHECK_THROWS(run_ablation(manifest, {{{"t1"}}, {{"t1"}}}, split, base, out.string()));
    fs::remove_all(root);
}

}  // TEST_SUITE
