#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "imma/rng.hpp"

namespace imma {

using Shape = std::vector<int>;

/// Dense row-major 32-bit float array. No views, no strides.
struct Tensor {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<float> d, bool rg = false);

    static Tensor zeros(Shape s, bool rg = false);
    static Tensor full(Shape s, float v, bool rg = false);
    static Tensor scalar(float v, bool rg = false);
    static Tensor randn(Shape s, Rng& rng, float stddev = 1.0f, bool rg = false);

    std::int64_t numel() const;
    bool is_scalar() const { return numel() == 1; }

    // 2-D accessors; reject use on other ranks.
    int rows() const;
    int cols() const;
    float& at(int r, int c);
    float at(int r, int c) const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool bit_equal(const Tensor& o) const;
};

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Named trainable arrays; lexicographic iteration order by construction.
using ParamStore = std::map<std::string, Tensor>;

ParamStore clone_store(const ParamStore& s);
bool stores_bit_equal(const ParamStore& a, const ParamStore& b);

/// Names in `store` matched by any of the selector prefixes.
std::set<std::string> select_params(const ParamStore& store,
                                    const std::vector<std::string>& prefixes);

/// FNV-1a over shapes and raw float bytes; order-sensitive via the map order.
std::uint64_t store_hash(const ParamStore& s);

} // namespace imma
