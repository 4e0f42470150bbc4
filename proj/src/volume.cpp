#include "dnp/volume.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dnp {
namespace {

#pragma pack(push, 1)
struct NiftiHeader {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t DT_UINT8 = 2;
constexpr int16_t DT_INT16 = 4;
constexpr int16_t DT_INT32 = 8;
constexpr int16_t DT_FLOAT32 = 16;
constexpr int16_t DT_FLOAT64 = 64;

struct GzFile {
    gzFile f = nullptr;
    GzFile(const std::string& path, const char* mode) {
        if (path.empty()) throw IoError("empty path");
        f = gzopen(path.c_str(), mode);
        if (!f) throw IoError("cannot open " + path);
    }
    ~GzFile() {
        if (f) gzclose(f);
    }
    void read(void* buf, std::size_t n, const std::string& path) {
        if (gzread(f, buf, unsigned(n)) != int(n))
            throw IoError("short read from " + path);
    }
    void write(const void* buf, std::size_t n, const std::string& path) {
        if (gzwrite(f, buf, unsigned(n)) != int(n))
            throw IoError("short write to " + path);
    }
};

Affine affine_from_header(const NiftiHeader& h, int ndim) {
    Affine a = Affine::identity(3);
    if (h.sform_code > 0) {
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) a.m[size_t(i)][size_t(j)] = rows[i][j];
            a.m[size_t(i)][3] = rows[i][3];
        }
    } else if (h.qform_code > 0) {
        double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
        double t = 1.0 - b * b - c * c - d * d;
        double qa = t > 0 ? std::sqrt(t) : 0.0;
        double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
        double r[3][3] = {
            {qa * qa + b * b - c * c - d * d, 2 * (b * c - qa * d), 2 * (b * d + qa * c)},
            {2 * (b * c + qa * d), qa * qa + c * c - b * b - d * d, 2 * (c * d - qa * b)},
            {2 * (b * d - qa * c), 2 * (c * d + qa * b), qa * qa + d * d - b * b - c * c}};
        double off[3] = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double px = h.pixdim[j + 1];
                a.m[size_t(i)][size_t(j)] = r[i][j] * px * (j == 2 ? qfac : 1.0);
            }
            a.m[size_t(i)][3] = off[i];
        }
    } else {
        for (int i = 0; i < 3; ++i)
            a.m[size_t(i)][size_t(i)] = h.pixdim[i + 1] != 0 ? h.pixdim[i + 1] : 1.0;
    }
    if (ndim == 2) {
        Affine a2 = Affine::identity(2);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) a2.m[size_t(i)][size_t(j)] = a.m[size_t(i)][size_t(j)];
            a2.m[size_t(i)][3] = a.m[size_t(i)][3];
        }
        return a2;
    }
    return a;
}

} // namespace

Volume read_nifti(const std::string& path) {
    GzFile f(path, "rb");
    NiftiHeader h{};
    f.read(&h, sizeof(h), path);
    if (h.sizeof_hdr != 348) throw MalformedHeader("sizeof_hdr != 348 in " + path);
    if (std::memcmp(h.magic, "n+1", 4) != 0 && std::memcmp(h.magic, "ni1", 4) != 0)
        throw MalformedHeader("bad magic in " + path);

    int nd = h.dim[0];
    if (nd < 2 || nd > 4) throw MalformedHeader("unsupported dim[0] in " + path);
    int nx = std::max<int>(1, h.dim[1]);
    int ny = std::max<int>(1, h.dim[2]);
    int nz = nd >= 3 ? std::max<int>(1, h.dim[3]) : 1;
    int nf = nd >= 4 ? std::max<int>(1, h.dim[4]) : 1;
    const int ndim = (nd == 2 || nz == 1) ? 2 : 3;

    std::size_t count = std::size_t(nx) * ny * nz * nf;
    int bytes;
    switch (h.datatype) {
        case DT_UINT8: bytes = 1; break;
        case DT_INT16: bytes = 2; break;
        case DT_INT32: bytes = 4; break;
        case DT_FLOAT32: bytes = 4; break;
        case DT_FLOAT64: bytes = 8; break;
        default: throw UnsupportedDatatype("datatype " + std::to_string(h.datatype));
    }
    if (std::memcmp(h.magic, "n+1", 4) == 0) {
        long off = long(h.vox_offset) - long(sizeof(h));
        if (off < 0) throw MalformedHeader("vox_offset < 348");
        std::vector<char> skip(static_cast<std::size_t>(off));
        if (off > 0) f.read(skip.data(), size_t(off), path);
    }
    std::vector<char> raw(count * size_t(bytes));
    f.read(raw.data(), raw.size(), path);

    double slope = (h.scl_slope != 0.0f) ? double(h.scl_slope) : 1.0;
    double inter = (h.scl_slope != 0.0f) ? double(h.scl_inter) : 0.0;

    Volume v;
    v.ndim = ndim;
    if (ndim == 2)
        v.data = NdArray({nx, ny, nf});
    else
        v.data = NdArray({nx, ny, nz, nf});
    v.affine = affine_from_header(h, ndim);

    auto fetch = [&](std::size_t i) -> double {
        switch (h.datatype) {
            case DT_UINT8: return double(reinterpret_cast<const uint8_t*>(raw.data())[i]);
            case DT_INT16: { int16_t x; std::memcpy(&x, raw.data() + i * 2, 2); return double(x); }
            case DT_INT32: { int32_t x; std::memcpy(&x, raw.data() + i * 4, 4); return double(x); }
            case DT_FLOAT32: { float x; std::memcpy(&x, raw.data() + i * 4, 4); return double(x); }
            default: { double x; std::memcpy(&x, raw.data() + i * 8, 8); return x; }
        }
    };
    // file order: x fastest, then y, z, feature; internal: feature fastest
    std::size_t i = 0;
    for (int c = 0; c < nf; ++c)
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x, ++i) {
                    double val = fetch(i) * slope + inter;
                    std::size_t lin = ndim == 2
                        ? (std::size_t(x) * ny + y) * nf + c
                        : ((std::size_t(x) * ny + y) * nz + z) * nf + c;
                    v.data[lin] = val;
                }
    return v;
}

void write_nifti(const Volume& v, const std::string& path, NiftiDtype dtype) {
    if (path.empty()) throw IoError("empty path");
    NiftiHeader h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    const auto s = v.spatial_shape();
    const int nf = v.channels();
    h.dim[0] = 4;
    h.dim[1] = int16_t(s[0]);
    h.dim[2] = int16_t(s[1]);
    h.dim[3] = int16_t(v.ndim == 3 ? s[2] : 1);
    h.dim[4] = int16_t(nf);
    for (int i = 5; i < 8; ++i) h.dim[i] = 1;
    h.pixdim[0] = 1.0f;
    for (int i = 0; i < 3; ++i)
        h.pixdim[i + 1] = float(i < v.ndim ? v.affine.col_norm(i) : 1.0);
    h.vox_offset = 352.0f;
    h.sform_code = 1;
    h.qform_code = 0;
    // embed a 2D affine into the 3D rows
    float rows[3][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 1, 0}};
    for (int i = 0; i < v.ndim; ++i) {
        for (int j = 0; j < v.ndim; ++j) rows[i][j] = float(v.affine.m[size_t(i)][size_t(j)]);
        rows[i][3] = float(v.affine.m[size_t(i)][3]);
    }
    if (v.ndim == 3) rows[2][2] = float(v.affine.m[2][2]);
    std::memcpy(h.srow_x, rows[0], sizeof(rows[0]));
    std::memcpy(h.srow_y, rows[1], sizeof(rows[1]));
    std::memcpy(h.srow_z, rows[2], sizeof(rows[2]));
    std::memcpy(h.magic, "n+1", 4);

    double slope = 1.0, maxabs = 0.0;
    for (double x : v.data.v)
        if (std::isfinite(x)) maxabs = std::max(maxabs, std::abs(x));
    switch (dtype) {
        case NiftiDtype::Uint8:
            h.datatype = DT_UINT8; h.bitpix = 8;
            slope = maxabs > 0 ? maxabs / 255.0 : 1.0;
            break;
        case NiftiDtype::Int16:
            h.datatype = DT_INT16; h.bitpix = 16;
            slope = maxabs > 0 ? maxabs / 32767.0 : 1.0;
            break;
        case NiftiDtype::Float32:
            h.datatype = DT_FLOAT32; h.bitpix = 32;
            break;
    }
    h.scl_slope = float(slope);
    h.scl_inter = 0.0f;

    const int nx = s[0], ny = s[1], nz = v.ndim == 3 ? s[2] : 1;
    std::vector<char> raw;
    raw.reserve(v.data.size() * 4);
    auto put = [&](double val) {
        switch (dtype) {
            case NiftiDtype::Uint8: {
                double q = std::clamp(std::round(val / slope), 0.0, 255.0);
                uint8_t b = uint8_t(q);
                raw.push_back(char(b));
                break;
            }
            case NiftiDtype::Int16: {
                double q = std::clamp(std::round(val / slope), -32768.0, 32767.0);
                int16_t b = int16_t(q);
                raw.insert(raw.end(), reinterpret_cast<char*>(&b), reinterpret_cast<char*>(&b) + 2);
                break;
            }
            case NiftiDtype::Float32: {
                float b = float(val);
                raw.insert(raw.end(), reinterpret_cast<char*>(&b), reinterpret_cast<char*>(&b) + 4);
                break;
            }
        }
    };
    for (int c = 0; c < nf; ++c)
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    std::size_t lin = v.ndim == 2
                        ? (std::size_t(x) * ny + y) * nf + c
                        : ((std::size_t(x) * ny + y) * nz + z) * nf + c;
                    put(v.data[lin]);
                }

    const char pad[4] = {0, 0, 0, 0};
    bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (gz) {
        GzFile f(path, "wb");
        f.write(&h, sizeof(h), path);
        f.write(pad, 4, path);
        f.write(raw.data(), raw.size(), path);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open " + path);
        f.write(reinterpret_cast<const char*>(&h), sizeof(h));
        f.write(pad, 4);
        f.write(raw.data(), std::streamsize(raw.size()));
        if (!f) throw IoError("short write to " + path);
    }
}

NormalizeMode parse_normalize(const std::string& s) {
    if (s.empty() || s == "none") return NormalizeMode::None;
    if (s == "max") return NormalizeMode::Max;
    if (s == "mean") return NormalizeMode::Mean;
    if (s == "m0s1") return NormalizeMode::M0S1;
    if (s == "patch_m0s1") return NormalizeMode::PatchM0S1;
    throw InvalidConfig("unknown normalize_input '" + s + "'");
}

Volume normalize(const Volume& v, NormalizeMode mode) {
    if (mode == NormalizeMode::None || mode == NormalizeMode::PatchM0S1) return v;
    Volume out = v;
    const std::size_t n = v.data.size();
    if (n == 0) throw DegenerateImage("empty volume");
    if (mode == NormalizeMode::Max) {
        double mx = 0;
        for (double x : v.data.v) mx = std::max(mx, std::abs(x));
        if (mx == 0) throw DegenerateImage("all-zero image under max normalization");
        for (double& x : out.data.v) x /= mx;
    } else if (mode == NormalizeMode::Mean) {
        double mean = 0;
        for (double x : v.data.v) mean += x;
        mean /= double(n);
        if (mean == 0) throw DegenerateImage("zero-mean image under mean normalization");
        for (double& x : out.data.v) x /= mean;
    } else { // M0S1
        double mean = 0;
        for (double x : v.data.v) mean += x;
        mean /= double(n);
        double var = 0;
        for (double x : v.data.v) var += (x - mean) * (x - mean);
        var /= double(n);
        if (var <= 0) throw DegenerateImage("constant image under m0s1 normalization");
        double sd = std::sqrt(var);
        for (double& x : out.data.v) x = (x - mean) / sd;
    }
    return out;
}

PrefilterSpec parse_prefilter(const std::string& s) {
    PrefilterSpec p;
    if (s.empty() || s == "0" || s == "none") return p;
    if (s == "boxcar") { p.kind = PrefilterKind::Boxcar; return p; }
    if (s == "max") { p.kind = PrefilterKind::Max; return p; }
    if (s == "mixture") { p.kind = PrefilterKind::Mixture; return p; }
    try {
        std::size_t pos = 0;
        double w = std::stod(s, &pos);
        if (pos != s.size() || w < 0) throw InvalidConfig("bad smoothing factor '" + s + "'");
        if (w > 0) { p.kind = PrefilterKind::Gaussian; p.width = w; }
        return p;
    } catch (const std::invalid_argument&) {
        throw InvalidConfig("bad smoothing factor '" + s + "'");
    }
}

std::string prefilter_to_string(const PrefilterSpec& s) {
    switch (s.kind) {
        case PrefilterKind::None: return "0";
        case PrefilterKind::Gaussian: return std::to_string(s.width);
        case PrefilterKind::Boxcar: return "boxcar";
        case PrefilterKind::Max: return "max";
        case PrefilterKind::Mixture: return "mixture";
    }
    return "0";
}

namespace {

enum class AxisOp { Mean, Max, Min, Gauss };

// Separable pass along `axis` with integer offsets [lo, lo+w) and clamped
// borders. For Gauss, `kernel` holds the normalized weights.
NdArray axis_filter(const NdArray& in, int ndim, int axis, int lo, int w,
                    AxisOp op, const std::vector<double>* kernel = nullptr) {
    NdArray out(in.shape);
    const int f = in.shape.back();
    const int sa = in.shape[size_t(axis)];
    // strides
    std::vector<std::size_t> stride(in.shape.size());
    std::size_t st = 1;
    for (int i = int(in.shape.size()) - 1; i >= 0; --i) {
        stride[size_t(i)] = st;
        st *= std::size_t(in.shape[size_t(i)]);
    }
    for_each_coord(in.shape.data(), ndim, [&](std::size_t, const int* c) {
        std::size_t base = 0;
        for (int i = 0; i < ndim; ++i) base += std::size_t(c[i]) * stride[size_t(i)];
        for (int ch = 0; ch < f; ++ch) {
            double acc = (op == AxisOp::Max) ? -1e300 : (op == AxisOp::Min ? 1e300 : 0.0);
            for (int j = 0; j < w; ++j) {
                int q = std::clamp(c[axis] + lo + j, 0, sa - 1);
                std::size_t idx = base - std::size_t(c[axis]) * stride[size_t(axis)] +
                                  std::size_t(q) * stride[size_t(axis)] + std::size_t(ch);
                double x = in[idx];
                switch (op) {
                    case AxisOp::Mean: acc += x / w; break;
                    case AxisOp::Max: acc = std::max(acc, x); break;
                    case AxisOp::Min: acc = std::min(acc, x); break;
                    case AxisOp::Gauss: acc += x * (*kernel)[size_t(j)]; break;
                }
            }
            out[base + std::size_t(ch)] = acc;
        }
    });
    return out;
}

NdArray separable(const NdArray& in, int ndim, const Vec& factor, AxisOp op, double gw) {
    NdArray cur = in;
    for (int axis = 0; axis < ndim; ++axis) {
        double fac = factor[size_t(axis)];
        if (op == AxisOp::Gauss) {
            double sigma = gw * fac;
            if (sigma <= 1e-12) continue;
            int r = int(std::ceil(3.0 * sigma));
            std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
            double sum = 0;
            for (int j = -r; j <= r; ++j) {
                double x = std::exp(-0.5 * (j / sigma) * (j / sigma));
                k[size_t(j + r)] = x;
                sum += x;
            }
            for (double& x : k) x /= sum;
            cur = axis_filter(cur, ndim, axis, -r, 2 * r + 1, AxisOp::Gauss, &k);
        } else {
            int w = int(std::lround(fac));
            if (w <= 1) continue;
            int lo = -(w - 1) / 2;
            cur = axis_filter(cur, ndim, axis, lo, w, op);
        }
    }
    return cur;
}

} // namespace

Volume prefilter(const Volume& v, const PrefilterSpec& spec, const Vec& factor) {
    for (int i = 0; i < v.ndim; ++i)
        if (factor[size_t(i)] < 1.0 - 1e-9) throw InvalidFactor("undersampling factor < 1");
    if (spec.kind == PrefilterKind::None) return v;
    Volume out = v;
    switch (spec.kind) {
        case PrefilterKind::Gaussian:
            out.data = separable(v.data, v.ndim, factor, AxisOp::Gauss, spec.width);
            break;
        case PrefilterKind::Boxcar:
            out.data = separable(v.data, v.ndim, factor, AxisOp::Mean, 0);
            break;
        case PrefilterKind::Max:
            out.data = separable(v.data, v.ndim, factor, AxisOp::Max, 0);
            break;
        case PrefilterKind::Mixture: {
            NdArray box = separable(v.data, v.ndim, factor, AxisOp::Mean, 0);
            NdArray mx = separable(v.data, v.ndim, factor, AxisOp::Max, 0);
            NdArray mn = separable(v.data, v.ndim, factor, AxisOp::Min, 0);
            const int f = v.channels();
            std::vector<int> shape = v.data.shape;
            shape.back() = 3 * f;
            NdArray cat(shape);
            const std::size_t nvox = v.spatial_count();
            for (std::size_t i = 0; i < nvox; ++i)
                for (int c = 0; c < f; ++c) {
                    cat[i * std::size_t(3 * f) + std::size_t(c)] = box[i * std::size_t(f) + std::size_t(c)];
                    cat[i * std::size_t(3 * f) + std::size_t(f + c)] = mx[i * std::size_t(f) + std::size_t(c)];
                    cat[i * std::size_t(3 * f) + std::size_t(2 * f + c)] = mn[i * std::size_t(f) + std::size_t(c)];
                }
            out.data = std::move(cat);
            break;
        }
        case PrefilterKind::None: break;
    }
    return out;
}

Volume one_hot_labels(const Volume& labels, const std::vector<int>& values) {
    if (labels.channels() != 1)
        throw ShapeMismatch("categorial_label conversion expects a single-channel volume");
    Volume out;
    out.ndim = labels.ndim;
    out.affine = labels.affine;
    std::vector<int> shape = labels.data.shape;
    shape.back() = int(values.size());
    out.data = NdArray(shape);
    const std::size_t nvox = labels.spatial_count();
    const int k = int(values.size());
    for (std::size_t i = 0; i < nvox; ++i) {
        double x = labels.data[i];
        if (std::isnan(x) || x == -1.0) {
            for (int c = 0; c < k; ++c) out.data[i * std::size_t(k) + std::size_t(c)] = -1.0;
            continue;
        }
        int lab = int(std::lround(x));
        for (int c = 0; c < k; ++c)
            out.data[i * std::size_t(k) + std::size_t(c)] = (lab == values[size_t(c)]) ? 1.0 : 0.0;
    }
    return out;
}

} // namespace dnp
