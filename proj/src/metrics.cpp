#include "mseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace mseg {

namespace {

void check_mask(const Volume3D& m, const char* what) {
    validate_volume(m);
    if (m.kind != ElementKind::u8) {
        throw std::invalid_argument(std::string(what) + ": expected a binary u8 mask");
    }
}

void check_pair(const Volume3D& seg, const Volume3D& ref, const char* what) {
    check_mask(seg, what);
    check_mask(ref, what);
    if (!seg.same_grid(ref)) {
        throw std::invalid_argument(std::string(what) +
                                    ": seg and ref disagree on dims/spacing");
    }
}

const std::vector<std::array<int, 3>>& neighbor_offsets(int connectivity) {
    static const auto build = [](int conn) {
        std::vector<std::array<int, 3>> offs;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int m = std::abs(dx) + std::abs(dy) + std::abs(dz);
                    if (m == 0) continue;
                    if ((conn == 6 && m == 1) || (conn == 18 && m <= 2) || conn == 26) {
                        offs.push_back({dx, dy, dz});
                    }
                }
        return offs;
    };
    static const std::vector<std::array<int, 3>> o6 = build(6);
    static const std::vector<std::array<int, 3>> o18 = build(18);
    static const std::vector<std::array<int, 3>> o26 = build(26);
    switch (connectivity) {
        case 6: return o6;
        case 18: return o18;
        case 26: return o26;
        default:
            throw std::invalid_argument("connectivity must be 6, 18, or 26, got " +
                                        std::to_string(connectivity));
    }
}

struct Counts {
    int64_t tp = 0, fp = 0, fn = 0;
};

Counts overlap_counts(const Volume3D& seg, const Volume3D& ref) {
    Counts c;
    for (size_t i = 0; i < seg.u8.size(); ++i) {
        if (seg.u8[i] && ref.u8[i]) ++c.tp;
        else if (seg.u8[i]) ++c.fp;
        else if (ref.u8[i]) ++c.fn;
    }
    return c;
}

// Spacing-scaled coordinates of the surface voxels, for distance metrics.
std::vector<std::array<double, 3>> surface_points(const Volume3D& mask) {
    std::vector<std::array<double, 3>> pts;
    for (const auto& v : surface_voxels(mask)) {
        pts.push_back({v[0] * mask.spacing[0], v[1] * mask.spacing[1], v[2] * mask.spacing[2]});
    }
    return pts;
}

// Sum and max of each point's distance to its nearest point in `other`.
struct DirectedDistances {
    double sum = 0.0, max = 0.0;
};

DirectedDistances directed_distances(const std::vector<std::array<double, 3>>& from,
                                     const std::vector<std::array<double, 3>>& other) {
    DirectedDistances d;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : other) {
            const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        const double dist = std::sqrt(best);
        d.sum += dist;
        d.max = std::max(d.max, dist);
    }
    return d;
}

struct SurfaceMetrics {
    double assd = 0.0, hd = 0.0;
};

std::optional<SurfaceMetrics> surface_metrics(const Volume3D& seg, const Volume3D& ref) {
    if (seg.foreground_count() == 0 || ref.foreground_count() == 0) return std::nullopt;
    const auto s = surface_points(seg);
    const auto r = surface_points(ref);
    const DirectedDistances sr = directed_distances(s, r);
    const DirectedDistances rs = directed_distances(r, s);
    SurfaceMetrics m;
    m.assd = (sr.sum + rs.sum) / double(s.size() + r.size());
    m.hd = std::max(sr.max, rs.max);
    return m;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "na"; }

nlohmann::json to_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::vector<LesionComponent> connected_components(const Volume3D& mask, int connectivity) {
    check_mask(mask, "connected_components");
    const auto& offs = neighbor_offsets(connectivity);
    const auto [nx, ny, nz] = mask.dims;
    const double vox_mm3 = mask.voxel_volume_mm3();

    std::vector<LesionComponent> comps;
    std::vector<int32_t> label(mask.u8.size(), 0);
    std::vector<int64_t> stack;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const size_t idx = mask.index(x, y, z);
                if (!mask.u8[idx] || label[idx]) continue;
                LesionComponent comp;
                comp.label = int(comps.size()) + 1;
                label[idx] = comp.label;
                stack.assign(1, int64_t(idx));
                comp.voxels.push_back(int64_t(idx));
                while (!stack.empty()) {
                    const int64_t cur = stack.back();
                    stack.pop_back();
                    const int cx = int(cur % nx);
                    const int cy = int((cur / nx) % ny);
                    const int cz = int(cur / (int64_t(nx) * ny));
                    for (const auto& o : offs) {
                        const int px = cx + o[0], py = cy + o[1], pz = cz + o[2];
                        if (px < 0 || px >= nx || py < 0 || py >= ny || pz < 0 || pz >= nz)
                            continue;
                        const size_t nidx = mask.index(px, py, pz);
                        if (!mask.u8[nidx] || label[nidx]) continue;
                        label[nidx] = comp.label;
                        stack.push_back(int64_t(nidx));
                        comp.voxels.push_back(int64_t(nidx));
                    }
                }
                std::sort(comp.voxels.begin(), comp.voxels.end());
                comp.volume_mm3 = double(comp.voxels.size()) * vox_mm3;
                comps.push_back(std::move(comp));
            }
    return comps;
}

double dsc(const Volume3D& seg, const Volume3D& ref) {
    check_pair(seg, ref, "dsc");
    const Counts c = overlap_counts(seg, ref);
    const int64_t den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : 2.0 * double(c.tp) / double(den);
}

std::optional<double> ppv(const Volume3D& seg, const Volume3D& ref) {
    check_pair(seg, ref, "ppv");
    const Counts c = overlap_counts(seg, ref);
    if (c.tp + c.fp == 0) return std::nullopt;
    return double(c.tp) / double(c.tp + c.fp);
}

std::optional<double> ltpr(const Volume3D& seg, const Volume3D& ref, int connectivity) {
    check_pair(seg, ref, "ltpr");
    const auto ref_comps = connected_components(ref, connectivity);
    if (ref_comps.empty()) return std::nullopt;
    int64_t hit = 0;
    for (const auto& comp : ref_comps) {
        for (int64_t v : comp.voxels) {
            if (seg.u8[size_t(v)]) {
                ++hit;
                break;
            }
        }
    }
    return double(hit) / double(ref_comps.size());
}

std::optional<double> lfpr(const Volume3D& seg, const Volume3D& ref, int connectivity) {
    check_pair(seg, ref, "lfpr");
    const auto seg_comps = connected_components(seg, connectivity);
    if (seg_comps.empty()) return std::nullopt;
    int64_t false_comps = 0;
    for (const auto& comp : seg_comps) {
        bool touches = false;
        for (int64_t v : comp.voxels) {
            if (ref.u8[size_t(v)]) {
                touches = true;
                break;
            }
        }
        if (!touches) ++false_comps;
    }
    return double(false_comps) / double(seg_comps.size());
}

double volume_difference(const Volume3D& seg, const Volume3D& ref) {
    check_pair(seg, ref, "volume_difference");
    const int64_t vr = ref.foreground_count();
    if (vr == 0) {
        throw std::invalid_argument("volume_difference: reference mask is empty");
    }
    const int64_t vs = seg.foreground_count();
    return double(std::abs(vs - vr)) / double(vr);
}

std::vector<std::array<int, 3>> surface_voxels(const Volume3D& mask) {
    check_mask(mask, "surface_voxels");
    const auto [nx, ny, nz] = mask.dims;
    static constexpr std::array<std::array<int, 3>, 6> kFaces{
        {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                if (!mask.u8[mask.index(x, y, z)]) continue;
                for (const auto& f : kFaces) {
                    const int px = x + f[0], py = y + f[1], pz = z + f[2];
                    const bool outside =
                        px < 0 || px >= nx || py < 0 || py >= ny || pz < 0 || pz >= nz;
                    if (outside || !mask.u8[mask.index(px, py, pz)]) {
                        out.push_back({x, y, z});
                        break;
                    }
                }
            }
    return out;
}

std::optional<double> assd(const Volume3D& seg, const Volume3D& ref) {
    check_pair(seg, ref, "assd");
    const auto m = surface_metrics(seg, ref);
    if (!m) return std::nullopt;
    return m->assd;
}

std::optional<double> hausdorff(const Volume3D& seg, const Volume3D& ref) {
    check_pair(seg, ref, "hausdorff");
    const auto m = surface_metrics(seg, ref);
    if (!m) return std::nullopt;
    return m->hd;
}

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("pearson_correlation: need two equal-length lists of >=2");
    }
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw std::invalid_argument("pearson_correlation: an input has zero variance");
    }
    return sxy / std::sqrt(sxx * syy);
}

double overall_score(const std::vector<std::vector<ScoreCaseInput>>& raters) {
    if (raters.empty()) throw std::invalid_argument("overall_score: no raters");
    const size_t cases = raters[0].size();
    if (cases < 2) throw std::invalid_argument("overall_score: need >=2 cases per rater");
    for (const auto& r : raters) {
        if (r.size() != cases) {
            throw std::invalid_argument("overall_score: raters cover different case counts");
        }
        for (const auto& c : r) {
            for (double rate : {c.dsc, c.ppv, c.ltpr, c.lfpr}) {
                if (!(rate >= 0.0 && rate <= 1.0)) {
                    throw std::invalid_argument("overall_score: rate outside [0,1]");
                }
            }
        }
    }
    double total = 0.0;
    for (const auto& r : raters) {
        std::vector<double> seg_vols, ref_vols;
        for (const auto& c : r) {
            seg_vols.push_back(c.seg_volume_mm3);
            ref_vols.push_back(c.ref_volume_mm3);
        }
        const double cor = pearson_correlation(seg_vols, ref_vols);
        for (const auto& c : r) {
            total += c.dsc / 8.0 + c.ppv / 8.0 + (1.0 - c.lfpr) / 4.0 + c.ltpr / 4.0 + cor / 4.0;
        }
    }
    return 100.0 * total / (double(raters.size()) * double(cases));
}

RegressionResult lesion_volume_regression(const Volume3D& seg, const Volume3D& ref,
                                          int connectivity) {
    check_pair(seg, ref, "lesion_volume_regression");
    const auto seg_comps = connected_components(seg, connectivity);
    const auto ref_comps = connected_components(ref, connectivity);

    // Label image of the segmentation for overlap counting.
    std::vector<int32_t> seg_label(seg.u8.size(), 0);
    for (const auto& c : seg_comps)
        for (int64_t v : c.voxels) seg_label[size_t(v)] = c.label;

    RegressionResult r;
    std::vector<int64_t> overlap(seg_comps.size() + 1, 0);
    for (const auto& rc : ref_comps) {
        std::fill(overlap.begin(), overlap.end(), 0);
        for (int64_t v : rc.voxels) ++overlap[size_t(seg_label[size_t(v)])];
        size_t best = 0;  // 0 = unmatched; ties keep the lower label
        int64_t best_count = 0;
        for (size_t l = 1; l < overlap.size(); ++l) {
            if (overlap[l] > best_count) {
                best = l;
                best_count = overlap[l];
            }
        }
        if (best != 0) {
            r.pairs.emplace_back(rc.volume_mm3, seg_comps[best - 1].volume_mm3);
        }
    }
    if (r.pairs.size() < 2) {
        throw std::invalid_argument("lesion_volume_regression: fewer than 2 matched lesions");
    }

    std::vector<double> x, y;
    for (const auto& [rv, sv] : r.pairs) {
        x.push_back(rv);
        y.push_back(sv);
    }
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) {
        throw std::invalid_argument(
            "lesion_volume_regression: reference volumes are all equal, fit is degenerate");
    }
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    r.pearson_r = pearson_correlation(x, y);
    return r;
}

CaseMetrics evaluate_case(const std::string& case_id, const Volume3D& seg, const Volume3D& ref,
                          int connectivity) {
    check_pair(seg, ref, "evaluate_case");
    CaseMetrics m;
    m.case_id = case_id;
    m.dsc = dsc(seg, ref);
    m.ppv = ppv(seg, ref);
    m.ltpr = ltpr(seg, ref, connectivity);
    m.lfpr = lfpr(seg, ref, connectivity);
    if (ref.foreground_count() > 0) m.vd = volume_difference(seg, ref);
    if (const auto sm = surface_metrics(seg, ref)) {
        m.sd_mm = sm->assd;
        m.hd_mm = sm->hd;
    }
    return m;
}

MetricsReport make_metrics_report(std::vector<CaseMetrics> cases, std::optional<double> sc) {
    MetricsReport rep;
    rep.cases = std::move(cases);
    rep.sc = sc;
    const auto mean_of = [&](auto field) -> std::optional<double> {
        double sum = 0.0;
        size_t n = 0;
        for (const auto& c : rep.cases) {
            if (const std::optional<double> v = field(c)) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / double(n);
    };
    rep.mean_dsc = mean_of([](const CaseMetrics& c) { return std::optional<double>(c.dsc); });
    rep.mean_ppv = mean_of([](const CaseMetrics& c) { return c.ppv; });
    rep.mean_ltpr = mean_of([](const CaseMetrics& c) { return c.ltpr; });
    rep.mean_lfpr = mean_of([](const CaseMetrics& c) { return c.lfpr; });
    rep.mean_vd = mean_of([](const CaseMetrics& c) { return c.vd; });
    rep.mean_sd = mean_of([](const CaseMetrics& c) { return c.sd_mm; });
    rep.mean_hd = mean_of([](const CaseMetrics& c) { return c.hd_mm; });
    return rep;
}

std::string metrics_report_tsv(const MetricsReport& r) {
    std::string out = "case\tdsc\tppv\tltpr\tlfpr\tvd\tsd_mm\thd_mm\n";
    const auto row = [&out](const std::string& id, const std::string& d, const CaseMetrics* c,
                            const MetricsReport* m) {
        out += id;
        out += '\t';
        out += d;
        if (c) {
            for (const auto& v : {c->ppv, c->ltpr, c->lfpr, c->vd, c->sd_mm, c->hd_mm}) {
                out += '\t';
                out += fmt(v);
            }
        } else {
            for (const auto& v : {m->mean_ppv, m->mean_ltpr, m->mean_lfpr, m->mean_vd,
                                  m->mean_sd, m->mean_hd}) {
                out += '\t';
                out += fmt(v);
            }
        }
        out += '\n';
    };
    for (const auto& c : r.cases) row(c.case_id, fmt(c.dsc), &c, nullptr);
    row("mean", fmt(r.mean_dsc), nullptr, &r);
    if (r.sc) out += "sc\t" + fmt(*r.sc) + "\n";
    return out;
}

std::string metrics_report_json(const MetricsReport& r) {
    nlohmann::json j;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : r.cases) {
        nlohmann::json jc;
        jc["case_id"] = c.case_id;
        jc["dsc"] = c.dsc;
        jc["ppv"] = to_json(c.ppv);
        jc["ltpr"] = to_json(c.ltpr);
        jc["lfpr"] = to_json(c.lfpr);
        jc["vd"] = to_json(c.vd);
        jc["sd_mm"] = to_json(c.sd_mm);
        jc["hd_mm"] = to_json(c.hd_mm);
        j["cases"].push_back(jc);
    }
    j["mean"] = {
        {"dsc", to_json(r.mean_dsc)},     {"ppv", to_json(r.mean_ppv)},
        {"ltpr", to_json(r.mean_ltpr)},   {"lfpr", to_json(r.mean_lfpr)},
        {"vd", to_json(r.mean_vd)},       {"sd_mm", to_json(r.mean_sd)},
        {"hd_mm", to_json(r.mean_hd)},
    };
    j["sc"] = to_json(r.sc);
    return j.dump(2) + "\n";
}

}  // namespace mseg
