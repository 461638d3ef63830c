#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mseg {

enum class ElementKind { f32, u8 };

// Errors raised by volume validation and MVOL I/O. Each failure mode carries
// a distinct code so callers can dispatch without string matching.
struct VolioError : std::runtime_error {
    enum class Code {
        bad_header,      // header line does not parse as MVOL1
        dims_mismatch,   // payload size disagrees with declared dims
        bad_kind,        // element kind not one of {f32, u8}
        io_failure,      // file cannot be opened / read / written
        invalid_volume,  // in-memory volume violates an invariant
    };
    Code code;
    VolioError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// Dense 3D scalar grid with voxel spacing in millimetres. Row-major with x
// fastest: voxel (x,y,z) lives at index x + nx*(y + ny*z). uint8 volumes are
// binary masks and may only hold {0,1}.
struct Volume3D {
    std::array<int, 3> dims{0, 0, 0};           // nx, ny, nz
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm, strictly positive
    ElementKind kind = ElementKind::f32;
    std::vector<float> f32;
    std::vector<uint8_t> u8;

    static Volume3D zeros_f32(std::array<int, 3> dims, std::array<double, 3> spacing);
    static Volume3D zeros_u8(std::array<int, 3> dims, std::array<double, 3> spacing);

    int64_t voxel_count() const {
        return static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
    }
    double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) +
               static_cast<size_t>(dims[0]) *
                   (static_cast<size_t>(y) + static_cast<size_t>(dims[1]) * static_cast<size_t>(z));
    }
    float& at_f(int x, int y, int z) { return f32[index(x, y, z)]; }
    float at_f(int x, int y, int z) const { return f32[index(x, y, z)]; }
    uint8_t& at_u(int x, int y, int z) { return u8[index(x, y, z)]; }
    uint8_t at_u(int x, int y, int z) const { return u8[index(x, y, z)]; }

    bool same_grid(const Volume3D& o) const {
        return dims == o.dims && spacing == o.spacing;
    }
    int64_t foreground_count() const;  // masks only
};

// Throws VolioError(invalid_volume) unless all Volume3D invariants hold.
void validate_volume(const Volume3D& v);

// One subject: named modality volumes plus optional ground-truth mask.
// All member volumes share dims and spacing; modality names are unique.
struct MultiModalCase {
    std::string case_id;
    std::vector<std::pair<std::string, Volume3D>> modalities;  // insertion-ordered
    std::optional<Volume3D> truth;

    const Volume3D* find_modality(const std::string& name) const;
};

void validate_case(const MultiModalCase& c);

// MVOL format: line 1 is `MVOL1 nx ny nz sx sy sz kind\n` (ASCII, kind in
// {f32,u8}), the rest is the raw little-endian row-major payload (x fastest).
// No padding, no compression. write/read round-trip bit-exactly.
void write_volume(const Volume3D& v, const std::string& path);
Volume3D read_volume(const std::string& path);

}  // namespace mseg
