#include "imma/tensor.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

namespace imma {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<float> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match data size " +
                                    std::to_string(data.size()));
    for (int d2 : shape)
        if (d2 < 0) throw std::invalid_argument("Tensor: negative dimension in " + shape_str(shape));
}

Tensor Tensor::zeros(Shape s, bool rg) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<std::size_t>(n), 0.0f), rg);
}

Tensor Tensor::full(Shape s, float v, bool rg) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<std::size_t>(n), v), rg);
}

Tensor Tensor::scalar(float v, bool rg) { return Tensor({1}, {v}, rg); }

Tensor Tensor::randn(Shape s, Rng& rng, float stddev, bool rg) {
    Tensor t = zeros(std::move(s), rg);
    for (auto& x : t.data) x = stddev * rng.normal();
    return t;
}

std::int64_t Tensor::numel() const { return shape_numel(shape); }

int Tensor::rows() const {
    if (shape.size() != 2) throw std::invalid_argument("Tensor::rows on non-matrix " + shape_str(shape));
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() != 2) throw std::invalid_argument("Tensor::cols on non-matrix " + shape_str(shape));
    return shape[1];
}

float& Tensor::at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
float Tensor::at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

bool Tensor::bit_equal(const Tensor& o) const {
    if (shape != o.shape) return false;
    return std::memcmp(data.data(), o.data.data(), data.size() * sizeof(float)) == 0;
}

ParamStore clone_store(const ParamStore& s) { return s; }

bool stores_bit_equal(const ParamStore& a, const ParamStore& b) {
    if (a.size() != b.size()) return false;
    auto ia = a.begin();
    auto ib = b.begin();
    for (; ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first) return false;
        if (!ia->second.bit_equal(ib->second)) return false;
    }
    return true;
}

std::set<std::string> select_params(const ParamStore& store, const std::vector<std::string>& prefixes) {
    std::set<std::string> out;
    for (const auto& [name, t] : store) {
        (void)t;
        for (const auto& p : prefixes) {
            if (name.rfind(p, 0) == 0) {
                out.insert(name);
                break;
            }
        }
    }
    return out;
}

std::uint64_t store_hash(const ParamStore& s) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : s) {
        mix(name.data(), name.size());
        for (int d : t.shape) mix(&d, sizeof(d));
        mix(t.data.data(), t.data.size() * sizeof(float));
    }
    return h;
}

} // namespace imma
