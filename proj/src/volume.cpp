#include "mseg/volume.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace mseg {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

void swap_f32_inplace(std::vector<float>& buf) {
    for (auto& f : buf) {
        uint32_t u;
        std::memcpy(&u, &f, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&f, &u, 4);
    }
}

std::string format_spacing(double s) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", s);
    return buf;
}

}  // namespace

Volume3D Volume3D::zeros_f32(std::array<int, 3> dims, std::array<double, 3> spacing) {
    Volume3D v;
    v.dims = dims;
    v.spacing = spacing;
    v.kind = ElementKind::f32;
    v.f32.assign(static_cast<size_t>(v.voxel_count()), 0.0f);
    return v;
}

Volume3D Volume3D::zeros_u8(std::array<int, 3> dims, std::array<double, 3> spacing) {
    Volume3D v;
    v.dims = dims;
    v.spacing = spacing;
    v.kind = ElementKind::u8;
    v.u8.assign(static_cast<size_t>(v.voxel_count()), 0);
    return v;
}

int64_t Volume3D::foreground_count() const {
    int64_t n = 0;
    for (uint8_t b : u8) n += b;
    return n;
}

void validate_volume(const Volume3D& v) {
    using Code = VolioError::Code;
    for (int d : v.dims)
        if (d <= 0) throw VolioError(Code::invalid_volume, "non-positive dimension");
    for (double s : v.spacing)
        if (!(s > 0.0)) throw VolioError(Code::invalid_volume, "non-positive spacing");
    const size_t n = static_cast<size_t>(v.voxel_count());
    if (v.kind == ElementKind::f32) {
        if (v.f32.size() != n || !v.u8.empty())
            throw VolioError(Code::invalid_volume, "f32 buffer length does not match dims");
    } else {
        if (v.u8.size() != n || !v.f32.empty())
            throw VolioError(Code::invalid_volume, "u8 buffer length does not match dims");
        for (uint8_t b : v.u8)
            if (b > 1) throw VolioError(Code::invalid_volume, "mask voxel outside {0,1}");
    }
}

const Volume3D* MultiModalCase::find_modality(const std::string& name) const {
    for (const auto& [n, v] : modalities)
        if (n == name) return &v;
    return nullptr;
}

void validate_case(const MultiModalCase& c) {
    using Code = VolioError::Code;
    if (c.modalities.empty())
        throw VolioError(Code::invalid_volume, "case has no modalities");
    std::set<std::string> names;
    const Volume3D& first = c.modalities.front().second;
    for (const auto& [name, v] : c.modalities) {
        if (!names.insert(name).second)
            throw VolioError(Code::invalid_volume, "duplicate modality name: " + name);
        validate_volume(v);
        if (!v.same_grid(first))
            throw VolioError(Code::invalid_volume, "modality grids disagree");
    }
    if (c.truth) {
        validate_volume(*c.truth);
        if (c.truth->kind != ElementKind::u8)
            throw VolioError(Code::invalid_volume, "truth mask must be u8");
        if (!c.truth->same_grid(first))
            throw VolioError(Code::invalid_volume, "truth grid disagrees");
    }
}

void write_volume(const Volume3D& v, const std::string& path) {
    using Code = VolioError::Code;
    validate_volume(v);

    std::ostringstream header;
    header << "MVOL1 " << v.dims[0] << ' ' << v.dims[1] << ' ' << v.dims[2] << ' '
           << format_spacing(v.spacing[0]) << ' ' << format_spacing(v.spacing[1]) << ' '
           << format_spacing(v.spacing[2]) << ' '
           << (v.kind == ElementKind::f32 ? "f32" : "u8") << '\n';

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw VolioError(Code::io_failure, "cannot open for write: " + path);
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    if (v.kind == ElementKind::f32) {
        if (std::endian::native == std::endian::big) {
            std::vector<float> tmp = v.f32;
            swap_f32_inplace(tmp);
            out.write(reinterpret_cast<const char*>(tmp.data()),
                      static_cast<std::streamsize>(tmp.size() * 4));
        } else {
            out.write(reinterpret_cast<const char*>(v.f32.data()),
                      static_cast<std::streamsize>(v.f32.size() * 4));
        }
    } else {
        out.write(reinterpret_cast<const char*>(v.u8.data()),
                  static_cast<std::streamsize>(v.u8.size()));
    }
    out.flush();
    if (!out) throw VolioError(Code::io_failure, "write failed: " + path);
}

Volume3D read_volume(const std::string& path) {
    using Code = VolioError::Code;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VolioError(Code::io_failure, "cannot open for read: " + path);

    std::string header;
    if (!std::getline(in, header))
        throw VolioError(Code::bad_header, "missing header line");

    std::istringstream hs(header);
    std::string magic, kind_str;
    Volume3D v;
    hs >> magic >> v.dims[0] >> v.dims[1] >> v.dims[2] >> v.spacing[0] >> v.spacing[1] >>
        v.spacing[2] >> kind_str;
    if (!hs || magic != "MVOL1")
        throw VolioError(Code::bad_header, "malformed MVOL header: " + header);
    std::string trailing;
    if (hs >> trailing)
        throw VolioError(Code::bad_header, "trailing tokens in header");
    if (v.dims[0] <= 0 || v.dims[1] <= 0 || v.dims[2] <= 0)
        throw VolioError(Code::bad_header, "non-positive dims in header");
    if (!(v.spacing[0] > 0) || !(v.spacing[1] > 0) || !(v.spacing[2] > 0))
        throw VolioError(Code::bad_header, "non-positive spacing in header");

    if (kind_str == "f32")
        v.kind = ElementKind::f32;
    else if (kind_str == "u8")
        v.kind = ElementKind::u8;
    else
        throw VolioError(Code::bad_kind, "unsupported element kind: " + kind_str);

    const size_t n = static_cast<size_t>(v.voxel_count());
    const size_t elem = v.kind == ElementKind::f32 ? 4 : 1;

    // Payload must be exactly n elements: read n*elem bytes and require EOF after.
    std::vector<char> payload(n * elem);
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (static_cast<size_t>(in.gcount()) != payload.size())
        throw VolioError(Code::dims_mismatch, "payload shorter than dims require");
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw VolioError(Code::dims_mismatch, "payload longer than dims require");

    if (v.kind == ElementKind::f32) {
        v.f32.resize(n);
        std::memcpy(v.f32.data(), payload.data(), payload.size());
        if (std::endian::native == std::endian::big) swap_f32_inplace(v.f32);
    } else {
        v.u8.assign(payload.begin(), payload.end());
    }
    validate_volume(v);
    return v;
}

}  // namespace mseg
