#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zoomseg {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Row-major H x W grid of scalars.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(checked_area(height, width)), fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int r, int c) { return data_[index(r, c)]; }
    const T& operator()(int r, int c) const { return data_[index(r, c)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    bool contains(int r, int c) const { return r >= 0 && c >= 0 && r < height_ && c < width_; }
    std::size_t index(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c);
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }
    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
    }

private:
    static long long checked_area(int height, int width) {
        if (height < 0 || width < 0) throw DimensionError("negative grid dimension");
        return static_cast<long long>(height) * width;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using BinaryMask = Grid<std::uint8_t>;
using LogitMap = Grid<double>;

/// RGB image with channel values in [0,1].
struct RasterImage {
    Grid<float> r, g, b;

    RasterImage() = default;
    RasterImage(int height, int width, float fill = 0.f)
        : r(height, width, fill), g(height, width, fill), b(height, width, fill) {}

    int height() const { return r.height(); }
    int width() const { return r.width(); }

    Grid<float>& channel(int k) { return k == 0 ? r : (k == 1 ? g : b); }
    const Grid<float>& channel(int k) const { return k == 0 ? r : (k == 1 ? g : b); }

    friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

enum class Polarity : std::uint8_t { positive, negative };

inline const char* to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

struct Click {
    int row = 0;
    int col = 0;
    Polarity polarity = Polarity::positive;
    int round = 1;

    friend bool operator==(const Click&, const Click&) = default;
};

using ClickList = std::vector<Click>;

struct DiscMap {
    BinaryMask positive;
    BinaryMask negative;

    DiscMap() = default;
    DiscMap(int height, int width) : positive(height, width, 0), negative(height, width, 0) {}

    int height() const { return positive.height(); }
    int width() const { return positive.width(); }

    const BinaryMask& channel(Polarity p) const { return p == Polarity::positive ? positive : negative; }

    friend bool operator==(const DiscMap&, const DiscMap&) = default;
};

/// Axis-aligned pixel rectangle.
struct CropRegion {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;

    int bottom() const { return top + height; }
    int right() const { return left + width; }
    bool contains(int r, int c) const { return r >= top && r < bottom() && c >= left && c < right(); }

    friend bool operator==(const CropRegion&, const CropRegion&) = default;
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a.height()) + "x" +
                             std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                             std::to_string(b.width()) + ")");
    }
}

inline std::size_t count(const BinaryMask& m) {
    return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }));
}

inline BinaryMask threshold(const LogitMap& logits, double level = 0.0) {
    BinaryMask out(logits.height(), logits.width(), 0);
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > level ? 1 : 0;
    return out;
}

/// Intersection over union; two empty masks count as a perfect match.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        inter += (x && y);
        uni += (x || y);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
inline void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n) + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == inf) continue;
        if (f[v[k]] == inf) {
            v[k] = q;
            continue;
        }
        double s = ((f[q] + q * double(q)) - (f[v[k]] + v[k] * double(v[k]))) / (2.0 * q - 2.0 * v[k]);
        while (k > 0 && s <= z[k]) {
            --k;
            s = ((f[q] + q * double(q)) - (f[v[k]] + v[k] * double(v[k]))) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = f[v[k]] == inf ? inf : dq * dq + f[v[k]];
    }
}

}  // namespace detail

/// Squared Euclidean distance from every pixel to the nearest pixel where `is_feature` holds.
/// With `outside_is_feature`, the ring of pixels just beyond the border also counts as feature.
template <typename Pred>
Grid<double> squared_distance_transform(int height, int width, Pred is_feature, bool outside_is_feature) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    Grid<double> out(height, width, inf);
    if (height == 0 || width == 0) return out;
    // Pad by one so the outside ring participates as a feature row/column.
    const int pad = outside_is_feature ? 1 : 0;
    const int ph = height + 2 * pad, pw = width + 2 * pad;
    std::vector<double> buf(static_cast<std::size_t>(ph) * pw, inf);
    for (int r = 0; r < ph; ++r) {
        for (int c = 0; c < pw; ++c) {
            const int ir = r - pad, ic = c - pad;
            const bool inside = ir >= 0 && ic >= 0 && ir < height && ic < width;
            const bool feature = inside ? is_feature(ir, ic) : true;
            buf[static_cast<std::size_t>(r) * pw + c] = feature ? 0.0 : inf;
        }
    }
    std::vector<int> v;
    std::vector<double> z;
    std::vector<double> f(static_cast<std::size_t>(std::max(ph, pw)));
    std::vector<double> d(f.size());
    for (int c = 0; c < pw; ++c) {
        for (int r = 0; r < ph; ++r) f[r] = buf[static_cast<std::size_t>(r) * pw + c];
        detail::edt_1d(f.data(), d.data(), ph, v, z);
        for (int r = 0; r < ph; ++r) buf[static_cast<std::size_t>(r) * pw + c] = d[r];
    }
    for (int r = 0; r < ph; ++r) {
        double* row = &buf[static_cast<std::size_t>(r) * pw];
        std::copy(row, row + pw, f.begin());
        detail::edt_1d(f.data(), row, pw, v, z);
    }
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out(r, c) = buf[static_cast<std::size_t>(r + pad) * pw + (c + pad)];
    return out;
}

/// Squared distance from each foreground pixel to the nearest background pixel
/// (the image exterior is background). Zero on background pixels.
inline Grid<double> inner_distance_sq(const BinaryMask& m) {
    return squared_distance_transform(m.height(), m.width(), [&](int r, int c) { return m(r, c) == 0; }, true);
}

/// Pixels of `m` that lie within `band` (Euclidean) of the mask's boundary.
inline BinaryMask boundary_band(const BinaryMask& m, int band) {
    const auto dist = inner_distance_sq(m);
    const double limit = static_cast<double>(band) * band;
    BinaryMask out(m.height(), m.width(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = (m[i] != 0 && dist[i] <= limit) ? 1 : 0;
    return out;
}

/// Band width used for boundary IoU: 2% of the image diagonal, at least one pixel.
inline int default_boundary_band(int height, int width) {
    const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
    return std::max(1, static_cast<int>(std::lround(0.02 * diag)));
}

inline double boundary_iou(const BinaryMask& a, const BinaryMask& b, int band) {
    require_same_shape(a, b, "boundary_iou");
    if (band < 1) throw std::invalid_argument("boundary_iou: band must be >= 1");
    return iou(boundary_band(a, band), boundary_band(b, band));
}

inline double boundary_iou(const BinaryMask& a, const BinaryMask& b) {
    return boundary_iou(a, b, default_boundary_band(a.height(), a.width()));
}

/// One 4-connected foreground component.
struct Component {
    int label = 0;
    std::size_t area = 0;
    int first_row = 0;  // raster-order first pixel
    int first_col = 0;
    int top = 0, left = 0, bottom = 0, right = 0;  // inclusive bounding box
};

struct Labeling {
    Grid<int> labels;  // 0 = background, components numbered from 1 in raster order of first pixel
    std::vector<Component> components;
};

inline Labeling label_components(const BinaryMask& m) {
    Labeling out{Grid<int>(m.height(), m.width(), 0), {}};
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            if (m(r, c) == 0 || out.labels(r, c) != 0) continue;
            Component comp;
            comp.label = static_cast<int>(out.components.size()) + 1;
            comp.first_row = r;
            comp.first_col = c;
            comp.top = comp.bottom = r;
            comp.left = comp.right = c;
            out.labels(r, c) = comp.label;
            stack.assign(1, {r, c});
            while (!stack.empty()) {
                const auto [y, x] = stack.back();
                stack.pop_back();
                ++comp.area;
                comp.top = std::min(comp.top, y);
                comp.bottom = std::max(comp.bottom, y);
                comp.left = std::min(comp.left, x);
                comp.right = std::max(comp.right, x);
                constexpr int dy[4] = {-1, 1, 0, 0};
                constexpr int dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = y + dy[k], nx = x + dx[k];
                    if (m.contains(ny, nx) && m(ny, nx) != 0 && out.labels(ny, nx) == 0) {
                        out.labels(ny, nx) = comp.label;
                        stack.emplace_back(ny, nx);
                    }
                }
            }
            out.components.push_back(comp);
        }
    }
    return out;
}

/// Larger area wins; equal areas fall back to the raster-earlier first pixel.
inline bool bigger_component(const Component& a, const Component& b) {
    if (a.area != b.area) return a.area > b.area;
    return std::pair(a.first_row, a.first_col) < std::pair(b.first_row, b.first_col);
}

inline BinaryMask component_mask(const Labeling& lab, int label) {
    BinaryMask out(lab.labels.height(), lab.labels.width(), 0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lab.labels[i] == label ? 1 : 0;
    return out;
}

inline BinaryMask largest_connected_component(const BinaryMask& m) {
    const auto lab = label_components(m);
    if (lab.components.empty()) return BinaryMask(m.height(), m.width(), 0);
    const auto best = std::min_element(lab.components.begin(), lab.components.end(), bigger_component);
    return component_mask(lab, best->label);
}

inline void stamp_disc(BinaryMask& m, int row, int col, int radius) {
    const long long r2 = static_cast<long long>(radius) * radius;
    for (int y = std::max(0, row - radius); y <= std::min(m.height() - 1, row + radius); ++y) {
        for (int x = std::max(0, col - radius); x <= std::min(m.width() - 1, col + radius); ++x) {
            const long long dy = y - row, dx = x - col;
            if (dy * dy + dx * dx <= r2) m(y, x) = 1;
        }
    }
}

/// Default click-disc radius at the model's working resolution.
inline constexpr int kDiscRadius = 5;

inline DiscMap render_discs(const ClickList& clicks, int height, int width, int radius = kDiscRadius) {
    DiscMap out(height, width);
    for (const auto& c : clicks) {
        stamp_disc(c.polarity == Polarity::positive ? out.positive : out.negative, c.row, c.col, radius);
    }
    return out;
}

/// Morphological gradient with a 3x3 cross (dilation minus erosion). Pixels outside
/// the image are treated as background for the erosion.
inline BinaryMask edge_map(const BinaryMask& m) {
    BinaryMask out(m.height(), m.width(), 0);
    constexpr int dy[5] = {0, -1, 1, 0, 0};
    constexpr int dx[5] = {0, 0, 0, -1, 1};
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            bool dil = false, ero = true;
            for (int k = 0; k < 5; ++k) {
                const int y = r + dy[k], x = c + dx[k];
                const bool v = m.contains(y, x) && m(y, x) != 0;
                dil = dil || v;
                ero = ero && v;
            }
            out(r, c) = (dil && !ero) ? 1 : 0;
        }
    }
    return out;
}

inline BinaryMask xor_mask(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "xor_mask");
    BinaryMask out(a.height(), a.width(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] != 0) != (b[i] != 0) ? 1 : 0;
    return out;
}

inline void check_crop(int height, int width, const CropRegion& region) {
    if (region.height < 1 || region.width < 1 || region.top < 0 || region.left < 0 || region.bottom() > height ||
        region.right() > width)
        throw DimensionError("crop region outside the raster or empty");
}

template <typename T>
Grid<T> crop(const Grid<T>& g, const CropRegion& region) {
    check_crop(g.height(), g.width(), region);
    Grid<T> out(region.height, region.width);
    for (int r = 0; r < region.height; ++r)
        for (int c = 0; c < region.width; ++c) out(r, c) = g(region.top + r, region.left + c);
    return out;
}

inline RasterImage crop(const RasterImage& img, const CropRegion& region) {
    RasterImage out;
    out.r = crop(img.r, region);
    out.g = crop(img.g, region);
    out.b = crop(img.b, region);
    return out;
}

inline DiscMap crop(const DiscMap& d, const CropRegion& region) {
    DiscMap out;
    out.positive = crop(d.positive, region);
    out.negative = crop(d.negative, region);
    return out;
}

/// Bilinear sample at fractional (row, col), clamped to the grid.
template <typename T>
double sample_bilinear(const Grid<T>& g, double row, double col) {
    const int h = g.height(), w = g.width();
    row = std::clamp(row, 0.0, static_cast<double>(h - 1));
    col = std::clamp(col, 0.0, static_cast<double>(w - 1));
    const int r0 = static_cast<int>(std::floor(row));
    const int c0 = static_cast<int>(std::floor(col));
    const int r1 = std::min(r0 + 1, h - 1);
    const int c1 = std::min(c0 + 1, w - 1);
    const double fr = row - r0, fc = col - c0;
    const double top = (1.0 - fc) * static_cast<double>(g(r0, c0)) + fc * static_cast<double>(g(r0, c1));
    const double bot = (1.0 - fc) * static_cast<double>(g(r1, c0)) + fc * static_cast<double>(g(r1, c1));
    return (1.0 - fr) * top + fr * bot;
}

/// Coordinates of an output grid of `n` samples spread evenly over a source axis of `src` pixels
/// (first and last samples land on the first and last source pixels).
inline std::vector<double> resize_coords(int src, int n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out[i] = n == 1 ? 0.5 * (src - 1) : static_cast<double>(i) * (src - 1) / (n - 1);
    }
    return out;
}

/// Resample through separable per-axis source coordinates.
template <typename T>
Grid<double> resample(const Grid<T>& g, const std::vector<double>& rows, const std::vector<double>& cols) {
    Grid<double> out(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) out(r, c) = sample_bilinear(g, rows[r], cols[c]);
    return out;
}

inline RasterImage resample(const RasterImage& img, const std::vector<double>& rows, const std::vector<double>& cols) {
    RasterImage out(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
    for (int k = 0; k < 3; ++k) {
        const auto ch = resample(img.channel(k), rows, cols);
        for (std::size_t i = 0; i < ch.size(); ++i) out.channel(k)[i] = static_cast<float>(ch[i]);
    }
    return out;
}

template <typename T>
Grid<double> resize_bilinear(const Grid<T>& g, int height, int width) {
    return resample(g, resize_coords(g.height(), height), resize_coords(g.width(), width));
}

inline RasterImage resize_bilinear(const RasterImage& img, int height, int width) {
    return resample(img, resize_coords(img.height(), height), resize_coords(img.width(), width));
}

/// Resize a hard mask through its [0,1] indicator, re-binarized at 0.5.
inline BinaryMask resize_mask(const BinaryMask& m, int height, int width) {
    const auto soft = resize_bilinear(m, height, width);
    BinaryMask out(height, width, 0);
    for (std::size_t i = 0; i < soft.size(); ++i) out[i] = soft[i] >= 0.5 ? 1 : 0;
    return out;
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace zoomseg
