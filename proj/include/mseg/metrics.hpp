#pragma once

// Segmentation quality metrics over binary Volume3D masks: voxel-wise overlap
// (DSC, PPV, volume difference), lesion-wise detection rates over 3D connected
// components (LTPR, LFPR), surface-distance metrics in millimetres (average
// symmetric surface distance, Hausdorff), a combined multi-case score, and a
// lesion-volume regression analysis.
//
// Empty-mask conventions are explicit: dsc(empty, empty) = 1; ppv and lfpr are
// undefined (missing) when the segmentation is empty; ltpr is undefined when
// the reference is empty; volume_difference requires a non-empty reference;
// both distance metrics are undefined when either mask is empty. Missing
// values are returned as empty optionals, never as silent zeros.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mseg/volume.hpp"

namespace mseg {

// One connected foreground region. Labels are 1-based in scan-order of the
// first voxel; voxel lists hold ascending linear indices and together
// partition the mask's foreground.
struct LesionComponent {
    int label = 0;
    std::vector<int64_t> voxels;
    double volume_mm3 = 0.0;
};

// Label the mask's foreground under 6-, 18-, or 26-connectivity.
std::vector<LesionComponent> connected_components(const Volume3D& mask, int connectivity = 26);

// Dice similarity 2TP / (2TP + FP + FN); two empty masks count as a perfect 1.
double dsc(const Volume3D& seg, const Volume3D& ref);

// Positive predictive value TP / (TP + FP); missing when seg is empty.
std::optional<double> ppv(const Volume3D& seg, const Volume3D& ref);

// Fraction of reference lesions touched by the segmentation (>=1 shared
// voxel); missing when the reference is empty.
std::optional<double> ltpr(const Volume3D& seg, const Volume3D& ref, int connectivity = 26);

// Fraction of segmentation lesions that touch no reference lesion; missing
// when the segmentation is empty.
std::optional<double> lfpr(const Volume3D& seg, const Volume3D& ref, int connectivity = 26);

// |V_seg - V_ref| / V_ref over foreground voxel counts; throws when the
// reference is empty.
double volume_difference(const Volume3D& seg, const Volume3D& ref);

// Foreground voxels with at least one background 6-neighbor; the volume
// border counts as background.
std::vector<std::array<int, 3>> surface_voxels(const Volume3D& mask);

// Average symmetric surface distance in mm: all surface voxels of both masks
// pooled, each contributing its minimum Euclidean distance (spacing-scaled)
// to the other surface. Missing when either mask is empty.
std::optional<double> assd(const Volume3D& seg, const Volume3D& ref);

// Full symmetric Hausdorff distance in mm over the same surface sets.
// Missing when either mask is empty.
std::optional<double> hausdorff(const Volume3D& seg, const Volume3D& ref);

// Pearson correlation coefficient; throws when either input has zero
// variance or the lengths differ / are < 2.
double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y);

// Per-case inputs to the combined score. Volumes are total foreground
// volumes in mm^3 and feed the per-rater Pearson term.
struct ScoreCaseInput {
    double dsc = 0.0;
    double ppv = 0.0;
    double ltpr = 0.0;
    double lfpr = 0.0;
    double seg_volume_mm3 = 0.0;
    double ref_volume_mm3 = 0.0;
};

// Combined score scaled to [0, 100]: mean over raters and subjects of
// DSC/8 + PPV/8 + (1-LFPR)/4 + LTPR/4 + Cor/4, where Cor is each rater's
// Pearson correlation between segmented and reference volumes across its
// subjects. Requires every rater to cover the same >=2 subjects; throws on
// degenerate (zero-variance) volume sets.
double overall_score(const std::vector<std::vector<ScoreCaseInput>>& raters);

struct RegressionResult {
    double slope = 0.0;
    double intercept = 0.0;
    double pearson_r = 0.0;
    std::vector<std::pair<double, double>> pairs;  // (reference mm^3, segmented mm^3)
};

// Pair each reference lesion with the overlapping segmentation lesion of
// maximal intersection (ties to the lower label; unmatched lesions on either
// side are dropped), then fit segmented volume = slope * reference volume +
// intercept by least squares. Throws with fewer than 2 pairs or a degenerate
// fit.
RegressionResult lesion_volume_regression(const Volume3D& seg, const Volume3D& ref,
                                          int connectivity = 26);

struct CaseMetrics {
    std::string case_id;
    double dsc = 0.0;
    std::optional<double> ppv;
    std::optional<double> ltpr;
    std::optional<double> lfpr;
    std::optional<double> vd;
    std::optional<double> sd_mm;
    std::optional<double> hd_mm;
};

// All per-case metrics in one pass; undefined entries left missing.
CaseMetrics evaluate_case(const std::string& case_id, const Volume3D& seg, const Volume3D& ref,
                          int connectivity = 26);

struct MetricsReport {
    std::vector<CaseMetrics> cases;
    // Means over the cases where each metric is defined; missing when none is.
    std::optional<double> mean_dsc, mean_ppv, mean_ltpr, mean_lfpr, mean_vd, mean_sd, mean_hd;
    std::optional<double> sc;
};

MetricsReport make_metrics_report(std::vector<CaseMetrics> cases,
                                  std::optional<double> sc = std::nullopt);

// Tab-separated table: header, one row per case, one trailing mean row, then
// an `sc` row when present. Missing values print as `na`.
std::string metrics_report_tsv(const MetricsReport& r);

// The same content as a JSON document (missing values are null).
std::string metrics_report_json(const MetricsReport& r);

}  // namespace mseg
