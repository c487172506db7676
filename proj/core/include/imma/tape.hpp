#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "imma/tensor.hpp"

namespace imma {

/// Handle into a Tape. Valid only for the tape that produced it.
struct Value {
    int id = -1;
};

using GradMap = std::map<std::string, Tensor>;

enum class Op {
    Leaf,          // named parameter or anonymous constant
    Add,
    Sub,
    Mul,           // elementwise
    MatMul,        // (n x k) * (k x m)
    Affine,        // x*W + b, b broadcast across rows
    Silu,
    Square,
    MeanAll,       // mean over all elements -> scalar
    ConcatCols,    // along last axis, matching row counts
    BroadcastRows, // vector (m) -> (rows x m)
    GatherRows,    // embedding lookup, constant integer indices
    StopGrad,
    ScaleConst,    // multiply by a compile-time float constant
};

/// Append-only record of primitive ops. Forward values are computed eagerly
/// in f32; the recorded program can be re-executed (optionally in f64, and
/// optionally with leaf values overridden by name) via replay().
///
/// Topological order holds by construction: inputs are created before use.
class Tape {
public:
    /// Named differentiable leaf. Named leaves must be unique per tape.
    Value leaf(const Tensor& t, const std::string& name);
    /// Anonymous non-differentiable input.
    Value constant(Tensor t);

    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value matmul(Value a, Value b);
    Value affine(Value x, Value w, Value b);
    Value silu(Value x);
    Value square(Value x);
    Value mean_all(Value x);
    Value concat_cols(Value a, Value b);
    Value broadcast_rows(Value v, int rows);
    Value gather_rows(Value table, std::vector<int> indices);
    Value stop_gradient(Value x);
    Value scale(Value x, float c);

    const Tensor& value(Value v) const;
    float scalar(Value v) const;

    /// Gradients of a scalar loss for every named requires_grad leaf.
    /// Leaves the loss does not reach get exact zeros.
    GradMap backward(Value loss) const;

    /// Re-execute the recorded program in scalar type T and return the flat
    /// buffer of `out`. `overrides` substitutes leaf values by name.
    /// T = float reproduces the eager forward bit-identically.
    template <typename T>
    std::vector<T> replay(Value out, const std::map<std::string, const Tensor*>& overrides) const;

    template <typename T>
    T replay_scalar(Value out, const std::map<std::string, const Tensor*>& overrides) const {
        auto buf = replay<T>(out, overrides);
        return buf.at(0);
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Op op = Op::Leaf;
        std::array<int, 3> in{-1, -1, -1};
        Tensor val;
        std::string name;           // Leaf only
        bool needs_grad = false;    // any requires_grad leaf beneath
        std::vector<int> indices;   // GatherRows
        int aux = 0;                // BroadcastRows target rows, ConcatCols left width
        float c = 1.0f;             // ScaleConst
    };

    std::vector<Node> nodes_;
    std::map<std::string, int> leaf_by_name_;

    int push(Node n);
    const Node& node(Value v) const;
};

} // namespace imma
