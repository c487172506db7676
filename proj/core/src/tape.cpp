#include "imma/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace imma {

namespace {

[[noreturn]] void op_error(const char* op, const std::string& detail) {
    throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_matrix(const char* op, const Tensor& t, const char* which) {
    if (t.shape.size() != 2) op_error(op, std::string(which) + " must be a matrix, got " + shape_str(t.shape));
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Single forward implementation shared by the eager pass (T = float) and
// replay (any T); keeps the two paths bit-identical for float.
template <typename T>
void exec_op(Op op, const T* a, const Shape* sa, const T* b, const Shape* sb, const T* c3,
             const std::vector<int>& indices, int aux, float cconst, T* out, const Shape& so) {
    const std::int64_t n_out = shape_numel(so);
    switch (op) {
        case Op::Leaf:
            break;
        case Op::Add:
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = a[i] + b[i];
            break;
        case Op::Sub:
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = a[i] - b[i];
            break;
        case Op::Mul:
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = a[i] * b[i];
            break;
        case Op::MatMul: {
            const int n = (*sa)[0], k = (*sa)[1], m = (*sb)[1];
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = T(0);
            for (int i = 0; i < n; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const T av = a[static_cast<std::size_t>(i) * k + kk];
                    const T* brow = b + static_cast<std::size_t>(kk) * m;
                    T* orow = out + static_cast<std::size_t>(i) * m;
                    for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
                }
            break;
        }
        case Op::Affine: {
            const int n = (*sa)[0], k = (*sa)[1], m = (*sb)[1];
            for (int i = 0; i < n; ++i) {
                T* orow = out + static_cast<std::size_t>(i) * m;
                for (int j = 0; j < m; ++j) orow[j] = c3[j];
            }
            for (int i = 0; i < n; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const T av = a[static_cast<std::size_t>(i) * k + kk];
                    const T* brow = b + static_cast<std::size_t>(kk) * m;
                    T* orow = out + static_cast<std::size_t>(i) * m;
                    for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
                }
            break;
        }
        case Op::Silu:
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = a[i] * sigmoid(a[i]);
            break;
        case Op::Square:
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = a[i] * a[i];
            break;
        case Op::MeanAll: {
            const std::int64_t n = shape_numel(*sa);
            T sum = T(0);
            for (std::int64_t i = 0; i < n; ++i) sum += a[i];
            out[0] = sum / T(n);
            break;
        }
        case Op::ConcatCols: {
            const int rows = (*sa)[0], p = (*sa)[1], q = (*sb)[1];
            for (int i = 0; i < rows; ++i) {
                T* orow = out + static_cast<std::size_t>(i) * (p + q);
                const T* arow = a + static_cast<std::size_t>(i) * p;
                const T* brow = b + static_cast<std::size_t>(i) * q;
                for (int j = 0; j < p; ++j) orow[j] = arow[j];
                for (int j = 0; j < q; ++j) orow[p + j] = brow[j];
            }
            break;
        }
        case Op::BroadcastRows: {
            const std::int64_t m = shape_numel(*sa);
            for (int i = 0; i < aux; ++i)
                for (std::int64_t j = 0; j < m; ++j) out[static_cast<std::size_t>(i) * m + j] = a[j];
            break;
        }
        case Op::GatherRows: {
            const int d = (*sa)[1];
            for (std::size_t i = 0; i < indices.size(); ++i) {
                const T* arow = a + static_cast<std::size_t>(indices[i]) * d;
                for (int j = 0; j < d; ++j) out[i * d + j] = arow[j];
            }
            break;
        }
        case Op::StopGrad:
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = a[i];
            break;
        case Op::ScaleConst:
            for (std::int64_t i = 0; i < n_out; ++i) out[i] = T(cconst) * a[i];
            break;
    }
}

} // namespace

int Tape::push(Node n) {
    const int id = static_cast<int>(nodes_.size());
    if (n.op != Op::Leaf && n.op != Op::StopGrad) {
        for (int in : n.in)
            if (in >= 0 && nodes_[in].needs_grad) n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    Node& nn = nodes_.back();
    if (nn.op != Op::Leaf) {
        const Node* i0 = nn.in[0] >= 0 ? &nodes_[nn.in[0]] : nullptr;
        const Node* i1 = nn.in[1] >= 0 ? &nodes_[nn.in[1]] : nullptr;
        const Node* i2 = nn.in[2] >= 0 ? &nodes_[nn.in[2]] : nullptr;
        exec_op<float>(nn.op, i0 ? i0->val.data.data() : nullptr, i0 ? &i0->val.shape : nullptr,
                       i1 ? i1->val.data.data() : nullptr, i1 ? &i1->val.shape : nullptr,
                       i2 ? i2->val.data.data() : nullptr, nn.indices, nn.aux, nn.c,
                       nn.val.data.data(), nn.val.shape);
    }
    return id;
}

const Tape::Node& Tape::node(Value v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Tape: invalid value handle");
    return nodes_[v.id];
}

Value Tape::leaf(const Tensor& t, const std::string& name) {
    if (name.empty()) op_error("leaf", "leaves must be named");
    if (leaf_by_name_.count(name)) op_error("leaf", "duplicate leaf name '" + name + "'");
    Node n;
    n.op = Op::Leaf;
    n.val = t;
    n.name = name;
    n.needs_grad = t.requires_grad;
    const int id = push(std::move(n));
    leaf_by_name_[name] = id;
    return {id};
}

Value Tape::constant(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    t.requires_grad = false;
    n.val = std::move(t);
    n.needs_grad = false;
    return {push(std::move(n))};
}

Value Tape::add(Value a, Value b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    if (!ta.same_shape(tb)) op_error("add", "shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::Add;
    n.in = {a.id, b.id, -1};
    n.val = Tensor::zeros(ta.shape);
    return {push(std::move(n))};
}

Value Tape::sub(Value a, Value b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    if (!ta.same_shape(tb)) op_error("sub", "shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::Sub;
    n.in = {a.id, b.id, -1};
    n.val = Tensor::zeros(ta.shape);
    return {push(std::move(n))};
}

Value Tape::mul(Value a, Value b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    if (!ta.same_shape(tb)) op_error("mul", "shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::Mul;
    n.in = {a.id, b.id, -1};
    n.val = Tensor::zeros(ta.shape);
    return {push(std::move(n))};
}

Value Tape::matmul(Value a, Value b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    require_matrix("matmul", ta, "lhs");
    require_matrix("matmul", tb, "rhs");
    if (ta.cols() != tb.rows())
        op_error("matmul", "inner dimensions disagree " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::MatMul;
    n.in = {a.id, b.id, -1};
    n.val = Tensor::zeros({ta.rows(), tb.cols()});
    return {push(std::move(n))};
}

Value Tape::affine(Value x, Value w, Value b) {
    const Tensor &tx = node(x).val, &tw = node(w).val, &tb = node(b).val;
    require_matrix("affine", tx, "input");
    require_matrix("affine", tw, "weight");
    if (tx.cols() != tw.rows())
        op_error("affine", "inner dimensions disagree " + shape_str(tx.shape) + " vs " + shape_str(tw.shape));
    if (tb.shape.size() != 1 || tb.shape[0] != tw.cols())
        op_error("affine", "bias shape " + shape_str(tb.shape) + " does not match weight " + shape_str(tw.shape));
    Node n;
    n.op = Op::Affine;
    n.in = {x.id, w.id, b.id};
    n.val = Tensor::zeros({tx.rows(), tw.cols()});
    return {push(std::move(n))};
}

Value Tape::silu(Value x) {
    Node n;
    n.op = Op::Silu;
    n.in = {x.id, -1, -1};
    n.val = Tensor::zeros(node(x).val.shape);
    return {push(std::move(n))};
}

Value Tape::square(Value x) {
    Node n;
    n.op = Op::Square;
    n.in = {x.id, -1, -1};
    n.val = Tensor::zeros(node(x).val.shape);
    return {push(std::move(n))};
}

Value Tape::mean_all(Value x) {
    if (node(x).val.numel() == 0) op_error("mean_all", "empty input");
    Node n;
    n.op = Op::MeanAll;
    n.in = {x.id, -1, -1};
    n.val = Tensor::zeros({1});
    return {push(std::move(n))};
}

Value Tape::concat_cols(Value a, Value b) {
    const Tensor &ta = node(a).val, &tb = node(b).val;
    require_matrix("concat_cols", ta, "lhs");
    require_matrix("concat_cols", tb, "rhs");
    if (ta.rows() != tb.rows())
        op_error("concat_cols", "row counts differ " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::ConcatCols;
    n.in = {a.id, b.id, -1};
    n.aux = ta.cols();
    n.val = Tensor::zeros({ta.rows(), ta.cols() + tb.cols()});
    return {push(std::move(n))};
}

Value Tape::broadcast_rows(Value v, int rows) {
    const Tensor& tv = node(v).val;
    if (tv.shape.size() != 1) op_error("broadcast_rows", "input must be a vector, got " + shape_str(tv.shape));
    if (rows < 0) op_error("broadcast_rows", "negative row count");
    Node n;
    n.op = Op::BroadcastRows;
    n.in = {v.id, -1, -1};
    n.aux = rows;
    n.val = Tensor::zeros({rows, tv.shape[0]});
    return {push(std::move(n))};
}

Value Tape::gather_rows(Value table, std::vector<int> indices) {
    const Tensor& tt = node(table).val;
    require_matrix("gather_rows", tt, "table");
    for (int i : indices)
        if (i < 0 || i >= tt.rows())
            op_error("gather_rows", "index " + std::to_string(i) + " outside table " + shape_str(tt.shape));
    Node n;
    n.op = Op::GatherRows;
    n.in = {table.id, -1, -1};
    n.val = Tensor::zeros({static_cast<int>(indices.size()), tt.cols()});
    n.indices = std::move(indices);
    return {push(std::move(n))};
}

Value Tape::stop_gradient(Value x) {
    Node n;
    n.op = Op::StopGrad;
    n.in = {x.id, -1, -1};
    n.needs_grad = false;
    n.val = Tensor::zeros(node(x).val.shape);
    return {push(std::move(n))};
}

Value Tape::scale(Value x, float c) {
    Node n;
    n.op = Op::ScaleConst;
    n.in = {x.id, -1, -1};
    n.c = c;
    n.val = Tensor::zeros(node(x).val.shape);
    return {push(std::move(n))};
}

const Tensor& Tape::value(Value v) const { return node(v).val; }

float Tape::scalar(Value v) const {
    const Tensor& t = node(v).val;
    if (!t.is_scalar()) throw std::invalid_argument("scalar: value has shape " + shape_str(t.shape));
    return t.data[0];
}

GradMap Tape::backward(Value loss) const {
    const Node& ln = node(loss);
    if (!ln.val.is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(ln.val.shape));

    std::vector<std::vector<float>> grad(nodes_.size());
    auto acc = [this, &grad](int id) -> std::vector<float>& {
        if (grad[id].empty()) grad[id].assign(static_cast<std::size_t>(nodes_[id].val.numel()), 0.0f);
        return grad[id];
    };
    if (ln.needs_grad) acc(loss.id)[0] = 1.0f;

    for (int id = loss.id; id >= 0; --id) {
        const Node& n = nodes_[id];
        if (!n.needs_grad || grad[id].empty()) continue;
        const std::vector<float>& g = grad[id];
        auto wants = [this](int in) { return in >= 0 && nodes_[in].needs_grad; };
        switch (n.op) {
            case Op::Leaf:
            case Op::StopGrad:
                break;
            case Op::Add: {
                for (int s = 0; s < 2; ++s)
                    if (wants(n.in[s])) {
                        auto& gi = acc(n.in[s]);
                        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                    }
                break;
            }
            case Op::Sub: {
                if (wants(n.in[0])) {
                    auto& gi = acc(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                }
                if (wants(n.in[1])) {
                    auto& gi = acc(n.in[1]);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const auto& av = nodes_[n.in[0]].val.data;
                const auto& bv = nodes_[n.in[1]].val.data;
                if (wants(n.in[0])) {
                    auto& gi = acc(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * bv[i];
                }
                if (wants(n.in[1])) {
                    auto& gi = acc(n.in[1]);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * av[i];
                }
                break;
            }
            case Op::MatMul:
            case Op::Affine: {
                const Tensor& ta = nodes_[n.in[0]].val;
                const Tensor& tb = nodes_[n.in[1]].val;
                const int nr = ta.rows(), k = ta.cols(), m = tb.cols();
                if (wants(n.in[0])) { // g . B^T
                    auto& ga = acc(n.in[0]);
                    for (int i = 0; i < nr; ++i)
                        for (int j = 0; j < m; ++j) {
                            const float gv = g[static_cast<std::size_t>(i) * m + j];
                            const float* bcol = tb.data.data() + j;
                            float* garow = ga.data() + static_cast<std::size_t>(i) * k;
                            for (int kk = 0; kk < k; ++kk) garow[kk] += gv * bcol[static_cast<std::size_t>(kk) * m];
                        }
                }
                if (wants(n.in[1])) { // A^T . g
                    auto& gb = acc(n.in[1]);
                    for (int i = 0; i < nr; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            const float av = ta.data[static_cast<std::size_t>(i) * k + kk];
                            const float* grow = g.data() + static_cast<std::size_t>(i) * m;
                            float* gbrow = gb.data() + static_cast<std::size_t>(kk) * m;
                            for (int j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                        }
                }
                if (n.op == Op::Affine && wants(n.in[2])) { // column sums
                    auto& gbias = acc(n.in[2]);
                    for (int i = 0; i < nr; ++i) {
                        const float* grow = g.data() + static_cast<std::size_t>(i) * m;
                        for (int j = 0; j < m; ++j) gbias[j] += grow[j];
                    }
                }
                break;
            }
            case Op::Silu: {
                if (wants(n.in[0])) {
                    const auto& x = nodes_[n.in[0]].val.data;
                    auto& gi = acc(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const float s = sigmoid(x[i]);
                        gi[i] += g[i] * (s * (1.0f + x[i] * (1.0f - s)));
                    }
                }
                break;
            }
            case Op::Square: {
                if (wants(n.in[0])) {
                    const auto& x = nodes_[n.in[0]].val.data;
                    auto& gi = acc(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * 2.0f * x[i];
                }
                break;
            }
            case Op::MeanAll: {
                if (wants(n.in[0])) {
                    auto& gi = acc(n.in[0]);
                    const float gv = g[0] / static_cast<float>(gi.size());
                    for (auto& v : gi) v += gv;
                }
                break;
            }
            case Op::ConcatCols: {
                const int rows = n.val.rows();
                const int p = n.aux;
                const int q = n.val.cols() - p;
                if (wants(n.in[0])) {
                    auto& ga = acc(n.in[0]);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < p; ++j)
                            ga[static_cast<std::size_t>(i) * p + j] += g[static_cast<std::size_t>(i) * (p + q) + j];
                }
                if (wants(n.in[1])) {
                    auto& gb = acc(n.in[1]);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < q; ++j)
                            gb[static_cast<std::size_t>(i) * q + j] += g[static_cast<std::size_t>(i) * (p + q) + p + j];
                }
                break;
            }
            case Op::BroadcastRows: {
                if (wants(n.in[0])) {
                    auto& gv = acc(n.in[0]);
                    const std::size_t m = gv.size();
                    for (int i = 0; i < n.aux; ++i)
                        for (std::size_t j = 0; j < m; ++j) gv[j] += g[static_cast<std::size_t>(i) * m + j];
                }
                break;
            }
            case Op::GatherRows: {
                if (wants(n.in[0])) {
                    auto& gt = acc(n.in[0]);
                    const int d = n.val.cols();
                    for (std::size_t i = 0; i < n.indices.size(); ++i)
                        for (int j = 0; j < d; ++j)
                            gt[static_cast<std::size_t>(n.indices[i]) * d + j] += g[i * d + j];
                }
                break;
            }
            case Op::ScaleConst: {
                if (wants(n.in[0])) {
                    auto& gi = acc(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += n.c * g[i];
                }
                break;
            }
        }
    }

    GradMap out;
    for (const auto& [name, id] : leaf_by_name_) {
        const Node& n = nodes_[id];
        if (!n.val.requires_grad) continue;
        if (grad[id].empty())
            out[name] = Tensor::zeros(n.val.shape);
        else
            out[name] = Tensor(n.val.shape, std::move(grad[id]));
    }
    return out;
}

template <typename T>
std::vector<T> Tape::replay(Value out, const std::map<std::string, const Tensor*>& overrides) const {
    node(out); // validate handle
    std::vector<std::vector<T>> bufs(static_cast<std::size_t>(out.id) + 1);
    for (int id = 0; id <= out.id; ++id) {
        const Node& n = nodes_[id];
        if (n.op == Op::Leaf) {
            const Tensor* src = &n.val;
            if (!n.name.empty()) {
                auto it = overrides.find(n.name);
                if (it != overrides.end()) {
                    if (it->second->shape != n.val.shape)
                        op_error("replay", "override shape mismatch for '" + n.name + "'");
                    src = it->second;
                }
            }
            bufs[id].assign(src->data.begin(), src->data.end());
        } else {
            bufs[id].assign(static_cast<std::size_t>(n.val.numel()), T(0));
            const Node* i0 = n.in[0] >= 0 ? &nodes_[n.in[0]] : nullptr;
            const Node* i1 = n.in[1] >= 0 ? &nodes_[n.in[1]] : nullptr;
            exec_op<T>(n.op, i0 ? bufs[n.in[0]].data() : nullptr, i0 ? &i0->val.shape : nullptr,
                       i1 ? bufs[n.in[1]].data() : nullptr, i1 ? &i1->val.shape : nullptr,
                       n.in[2] >= 0 ? bufs[n.in[2]].data() : nullptr, n.indices, n.aux, n.c,
                       bufs[id].data(), n.val.shape);
        }
    }
    return std::move(bufs[out.id]);
}

template std::vector<float> Tape::replay<float>(Value, const std::map<std::string, const Tensor*>&) const;
template std::vector<double> Tape::replay<double>(Value, const std::map<std::string, const Tensor*>&) const;

} // namespace imma
