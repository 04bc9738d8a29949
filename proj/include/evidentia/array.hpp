#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace evidentia {

// Raised on any shape-contract violation; message names the op and both shapes.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major array of doubles. The shape product always equals data.size().
struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Array() = default;

    explicit Array(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)),
          data(shape_product(shape), fill) {}

    Array(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (shape_product(shape) != data.size())
            throw ShapeError("Array: shape product " + std::to_string(shape_product(shape)) +
                             " != data size " + std::to_string(data.size()));
    }

    static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }

    static std::size_t shape_product(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Array& other) const { return shape == other.shape; }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void require_same_shape(const char* op, const Array& a, const Array& b) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

}  // namespace evidentia
