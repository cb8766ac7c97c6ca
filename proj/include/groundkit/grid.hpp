#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace groundkit {

// Row-major 2D array.
template <typename T>
struct Grid2 {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid2() = default;
    Grid2(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {
        if (h < 0 || w < 0) throw std::invalid_argument("negative grid extent");
    }
    Grid2(int h, int w, std::vector<T> values) : height(h), width(w), data(std::move(values)) {
        if (data.size() != static_cast<size_t>(h) * w) throw std::invalid_argument("grid data size mismatch");
    }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    T& operator()(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
    bool same_shape(const Grid2& o) const { return height == o.height && width == o.width; }
    template <typename U>
    bool same_shape(const Grid2<U>& o) const { return height == o.height && width == o.width; }

    bool operator==(const Grid2&) const = default;
};

// Row-major 3D array, axial axis first (D x H x W).
template <typename T>
struct Grid3 {
    int depth = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid3() = default;
    Grid3(int d, int h, int w, T fill = T{})
        : depth(d), height(h), width(w), data(static_cast<size_t>(d) * h * w, fill) {
        if (d < 0 || h < 0 || w < 0) throw std::invalid_argument("negative grid extent");
    }

    size_t size() const { return data.size(); }
    size_t slice_size() const { return static_cast<size_t>(height) * width; }
    T& operator()(int z, int r, int c) { return data[(static_cast<size_t>(z) * height + r) * width + c]; }
    const T& operator()(int z, int r, int c) const { return data[(static_cast<size_t>(z) * height + r) * width + c]; }

    Grid2<T> slice(int z) const {
        Grid2<T> out(height, width);
        std::copy(data.begin() + static_cast<std::ptrdiff_t>(z * slice_size()),
                  data.begin() + static_cast<std::ptrdiff_t>((z + 1) * slice_size()), out.data.begin());
        return out;
    }
    void set_slice(int z, const Grid2<T>& s) {
        if (s.height != height || s.width != width) throw std::invalid_argument("slice shape mismatch");
        std::copy(s.data.begin(), s.data.end(), data.begin() + static_cast<std::ptrdiff_t>(z * slice_size()));
    }

    bool operator==(const Grid3&) const = default;
};

using Image = Grid2<float>;
using Mask = Grid2<std::uint8_t>;

inline size_t count_foreground(const Mask& m) {
    size_t n = 0;
    for (auto v : m.data) n += (v != 0);
    return n;
}

inline bool is_all_zero(const Mask& m) { return count_foreground(m) == 0; }

}  // namespace groundkit
