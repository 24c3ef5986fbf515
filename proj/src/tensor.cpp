#include "mrio/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "mrio/parallel.hpp"

namespace mrio {

namespace {

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

thread_local Tape* t_active = nullptr;
thread_local int t_nograd_depth = 0;
uint64_t g_epoch_counter = 0;

Tape* recording_tape() { return t_nograd_depth > 0 ? nullptr : t_active; }

void assert_finite(const std::vector<double>& v, const char* op) {
    if (!g_finite_checks) return;
    for (double x : v)
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("non-finite value produced by op ") + op);
}

}  // namespace

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void domain_check(bool cond, const std::string& msg) {
    if (!cond) throw std::domain_error(msg);
}

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

// ---- Tensor construction -------------------------------------------------

Tensor make_op_output(Shape shape, std::vector<double> values) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    return Tensor(std::move(d));
}

Tensor Tensor::zeros(const Shape& shape) {
    return make_op_output(shape, std::vector<double>(shape_numel(shape), 0.0));
}

Tensor Tensor::full(const Shape& shape, double v) {
    return make_op_output(shape, std::vector<double>(shape_numel(shape), v));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
    check(values.size() == shape_numel(shape),
          "tensor values length " + std::to_string(values.size()) + " does not match shape " +
              shape_str(shape));
    return make_op_output(shape, std::move(values));
}

Tensor Tensor::scalar(double v) { return make_op_output(Shape{}, {v}); }

Tensor Tensor::param(const Shape& shape, std::vector<double> values) {
    Tensor t = from(shape, std::move(values));
    t.set_requires_grad(true);
    return t;
}

double Tensor::value() const {
    check(is_scalar(), "Tensor::value() requires a scalar tensor");
    return d_->values[0];
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() : epoch_(++g_epoch_counter) {
    prev_ = t_active;
    t_active = this;
}

Tape::~Tape() { t_active = prev_; }

Tape* Tape::active() { return recording_tape(); }

int Tape::register_leaf(const Tensor& t) {
    TensorData* d = t.d_.get();
    if (d->tape_epoch == epoch_ && d->tape_node >= 0) return d->tape_node;
    TapeNode node;
    node.output = t.d_;
    node.is_leaf = true;
    nodes_.push_back(std::move(node));
    int id = int(nodes_.size()) - 1;
    d->tape_epoch = epoch_;
    d->tape_node = id;
    leaves_.push_back(id);
    return id;
}

void Tape::touch(const Tensor& t) {
    check(t.requires_grad(), "Tape::touch expects a requires_grad tensor");
    register_leaf(t);
}

NoGrad::NoGrad() { ++t_nograd_depth; }
NoGrad::~NoGrad() { --t_nograd_depth; }

// Returns the tape node id feeding this input, registering leaves on demand.
// -1 means the input is a constant for gradient purposes.
int record_input(Tape& tape, const Tensor& t) {
    TensorData* d = t.ptr().get();
    if (d->tape_epoch == tape.epoch_ && d->tape_node >= 0) return d->tape_node;
    if (d->requires_grad) return tape.register_leaf(t);
    return -1;
}

void record_node(Tape& tape, TapeNode node, const Tensor& out) {
    node.output = out.ptr();
    tape.nodes_.push_back(std::move(node));
    TensorData* d = out.ptr().get();
    d->tape_epoch = tape.epoch_;
    d->tape_node = int(tape.nodes_.size()) - 1;
}

namespace {

// Records an op node if a tape is active and any input participates.
void maybe_record(const std::vector<Tensor>& inputs, const Tensor& out,
                  std::function<void(const std::vector<double>&,
                                     const std::vector<std::vector<double>*>&)>
                      backward_fn) {
    Tape* tape = recording_tape();
    if (!tape) return;
    TapeNode node;
    bool any = false;
    node.inputs.reserve(inputs.size());
    node.input_nodes.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        int id = record_input(*tape, t);
        node.inputs.push_back(t.ptr());
        node.input_nodes.push_back(id);
        any = any || id >= 0;
    }
    if (!any) return;
    node.backward = std::move(backward_fn);
    record_node(*tape, std::move(node), out);
}

}  // namespace

GradientMap backward(Tape& tape, const Tensor& loss) {
    check(loss.defined() && loss.is_scalar(), "backward: loss must be scalar");
    const TensorData* ld = loss.key();
    check(ld->tape_epoch == tape.epoch() && ld->tape_node >= 0,
          "backward: loss is not recorded on this tape");

    std::vector<std::vector<double>> adjoints(tape.nodes_.size());
    adjoints[size_t(ld->tape_node)] = {1.0};

    for (int i = ld->tape_node; i >= 0; --i) {
        TapeNode& node = tape.nodes_[size_t(i)];
        std::vector<double>& adj = adjoints[size_t(i)];
        if (adj.empty() || node.is_leaf || !node.backward) continue;
        std::vector<std::vector<double>*> in_adj(node.inputs.size(), nullptr);
        for (size_t k = 0; k < node.inputs.size(); ++k) {
            int id = node.input_nodes[k];
            if (id < 0) continue;
            std::vector<double>& dst = adjoints[size_t(id)];
            if (dst.empty()) dst.assign(node.inputs[k]->values.size(), 0.0);
            in_adj[k] = &dst;
        }
        node.backward(adj, in_adj);
        adj.clear();
        adj.shrink_to_fit();
    }

    GradientMap grads;
    for (int id : tape.leaves_) {
        const TapeNode& leaf = tape.nodes_[size_t(id)];
        std::vector<double>& adj = adjoints[size_t(id)];
        if (adj.empty()) adj.assign(leaf.output->values.size(), 0.0);
        grads[leaf.output.get()] = Tensor::from(leaf.output->shape, std::move(adj));
    }
    return grads;
}

const Tensor* find_grad(const GradientMap& grads, const Tensor& param) {
    auto it = grads.find(param.key());
    return it == grads.end() ? nullptr : &it->second;
}

// ---- broadcasting helpers --------------------------------------------------

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    for (size_t i = 0; i < small.size(); ++i)
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    return true;
}

enum class Bcast { None, BOverA, AOverB };

// Decides the broadcast pattern for a binary op; throws on mismatch.
Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::None;
    if (b.size() == 1 || is_suffix(b.shape(), a.shape())) return Bcast::BOverA;
    if (a.size() == 1 || is_suffix(a.shape(), b.shape())) return Bcast::AOverB;
    throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " do not conform");
    }

void reduce_to_suffix(const std::vector<double>& big_adj, size_t small_n,
                      std::vector<double>& out) {
    // sums the leading (tiled) axis of big_adj into a buffer of small_n
    for (size_t i = 0; i < big_adj.size(); ++i) out[i % small_n] += big_adj[i];
}

template <class Fwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 double dfda, double dfdb) {
    // dfda / dfdb are the constant partials for add/sub; mul handles its own.
    Bcast k = bcast_kind(a, b, name);
    const Shape& out_shape = (k == Bcast::AOverB) ? b.shape() : a.shape();
    size_t n = shape_numel(out_shape);
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    const size_t an = av.size(), bn = bv.size();
    for (size_t i = 0; i < n; ++i) fwd(out[i], av[i % an], bv[i % bn]);
    Tensor result = make_op_output(out_shape, std::move(out));
    assert_finite(result.data(), name);
    maybe_record({a, b}, result,
                 [an, bn, dfda, dfdb](const std::vector<double>& g,
                                      const std::vector<std::vector<double>*>& in) {
                     if (in[0]) {
                         if (an == g.size())
                             for (size_t i = 0; i < g.size(); ++i) (*in[0])[i] += dfda * g[i];
                         else {
                             std::vector<double> scaled(g.size());
                             for (size_t i = 0; i < g.size(); ++i) scaled[i] = dfda * g[i];
                             reduce_to_suffix(scaled, an, *in[0]);
                         }
                     }
                     if (in[1]) {
                         if (bn == g.size())
                             for (size_t i = 0; i < g.size(); ++i) (*in[1])[i] += dfdb * g[i];
                         else {
                             std::vector<double> scaled(g.size());
                             for (size_t i = 0; i < g.size(); ++i) scaled[i] = dfdb * g[i];
                             reduce_to_suffix(scaled, bn, *in[1]);
                         }
                     }
                 });
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "add", [](double& o, double x, double y) { o = x + y; }, 1.0, 1.0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "sub", [](double& o, double x, double y) { o = x - y; }, 1.0, -1.0);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Bcast k = bcast_kind(a, b, "mul");
    const Shape& out_shape = (k == Bcast::AOverB) ? b.shape() : a.shape();
    size_t n = shape_numel(out_shape);
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    const size_t an = av.size(), bn = bv.size();
    for (size_t i = 0; i < n; ++i) out[i] = av[i % an] * bv[i % bn];
    Tensor result = make_op_output(out_shape, std::move(out));
    assert_finite(result.data(), "mul");
    auto ap = a.ptr(), bp = b.ptr();
    maybe_record({a, b}, result,
                 [ap, bp, an, bn](const std::vector<double>& g,
                                  const std::vector<std::vector<double>*>& in) {
                     if (in[0]) {
                         if (an == g.size())
                             for (size_t i = 0; i < g.size(); ++i)
                                 (*in[0])[i] += g[i] * bp->values[i % bn];
                         else {
                             std::vector<double> scaled(g.size());
                             for (size_t i = 0; i < g.size(); ++i)
                                 scaled[i] = g[i] * bp->values[i % bn];
                             reduce_to_suffix(scaled, an, *in[0]);
                         }
                     }
                     if (in[1]) {
                         if (bn == g.size())
                             for (size_t i = 0; i < g.size(); ++i)
                                 (*in[1])[i] += g[i] * ap->values[i % an];
                         else {
                             std::vector<double> scaled(g.size());
                             for (size_t i = 0; i < g.size(); ++i)
                                 scaled[i] = g[i] * ap->values[i % an];
                             reduce_to_suffix(scaled, bn, *in[1]);
                         }
                     }
                 });
    return result;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    check(a.ndim() == 2 && b.ndim() == 2, "matmul expects rank-2 tensors");
    const size_t n = a.shape()[0], k = a.shape()[1];
    const size_t m = transpose_b ? b.shape()[0] : b.shape()[1];
    const size_t bk = transpose_b ? b.shape()[1] : b.shape()[0];
    check(bk == k, "matmul: inner extents differ " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    std::vector<double> out(n * m, 0.0);
    const auto& av = a.data();
    const auto& bv = b.data();
    parallel_for_chunks(0, n, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i)
            for (size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                if (transpose_b)
                    for (size_t t = 0; t < k; ++t) acc += av[i * k + t] * bv[j * k + t];
                else
                    for (size_t t = 0; t < k; ++t) acc += av[i * k + t] * bv[t * m + j];
                out[i * m + j] = acc;
            }
    });
    Tensor result = make_op_output({n, m}, std::move(out));
    assert_finite(result.data(), "matmul");
    auto ap = a.ptr(), bp = b.ptr();
    maybe_record({a, b}, result,
                 [ap, bp, n, m, k, transpose_b](const std::vector<double>& g,
                                                const std::vector<std::vector<double>*>& in) {
                     // dA = G * B^T (or G * B when B was transposed)
                     if (in[0]) {
                         std::vector<double>& da = *in[0];
                         for (size_t i = 0; i < n; ++i)
                             for (size_t t = 0; t < k; ++t) {
                                 double acc = 0.0;
                                 for (size_t j = 0; j < m; ++j) {
                                     double bvv = transpose_b ? bp->values[j * k + t]
                                                              : bp->values[t * m + j];
                                     acc += g[i * m + j] * bvv;
                                 }
                                 da[i * k + t] += acc;
                             }
                     }
                     if (in[1]) {
                         std::vector<double>& db = *in[1];
                         if (transpose_b) {
                             // B is (m,k); dB[j,t] = sum_i G[i,j] A[i,t]
                             for (size_t j = 0; j < m; ++j)
                                 for (size_t t = 0; t < k; ++t) {
                                     double acc = 0.0;
                                     for (size_t i = 0; i < n; ++i)
                                         acc += g[i * m + j] * ap->values[i * k + t];
                                     db[j * k + t] += acc;
                                 }
                         } else {
                             // B is (k,m); dB[t,j] = sum_i A[i,t] G[i,j]
                             for (size_t t = 0; t < k; ++t)
                                 for (size_t j = 0; j < m; ++j) {
                                     double acc = 0.0;
                                     for (size_t i = 0; i < n; ++i)
                                         acc += ap->values[i * k + t] * g[i * m + j];
                                     db[t * m + j] += acc;
                                 }
                         }
                     }
                 });
    return result;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor result = Tensor::scalar(acc);
    size_t n = x.size();
    maybe_record({x}, result,
                 [n](const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     if (in[0])
                         for (size_t i = 0; i < n; ++i) (*in[0])[i] += g[0];
                 });
    return result;
}

Tensor mean(const Tensor& x) {
    check(x.size() > 0, "mean of empty tensor");
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    size_t n = x.size();
    Tensor result = Tensor::scalar(acc / double(n));
    maybe_record({x}, result,
                 [n](const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     if (in[0]) {
                         double s = g[0] / double(n);
                         for (size_t i = 0; i < n; ++i) (*in[0])[i] += s;
                     }
                 });
    return result;
}

namespace {

// Iteration helper for axis ops on row-major data: the tensor is viewed as
// (outer, axis_extent, inner).
struct AxisView {
    size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, size_t axis) {
    check(axis < s.size(), "axis out of range");
    AxisView v;
    for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.extent = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

Shape drop_axis(const Shape& s, size_t axis) {
    Shape r;
    for (size_t i = 0; i < s.size(); ++i)
        if (i != axis) r.push_back(s[i]);
    return r;
}

}  // namespace

Tensor sum_axis(const Tensor& x, size_t axis) {
    AxisView v = axis_view(x.shape(), axis);
    std::vector<double> out(v.outer * v.inner, 0.0);
    const auto& xv = x.data();
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t e = 0; e < v.extent; ++e)
            for (size_t i = 0; i < v.inner; ++i)
                out[o * v.inner + i] += xv[(o * v.extent + e) * v.inner + i];
    Tensor result = make_op_output(drop_axis(x.shape(), axis), std::move(out));
    maybe_record({x}, result,
                 [v](const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t o = 0; o < v.outer; ++o)
                         for (size_t e = 0; e < v.extent; ++e)
                             for (size_t i = 0; i < v.inner; ++i)
                                 (*in[0])[(o * v.extent + e) * v.inner + i] +=
                                     g[o * v.inner + i];
                 });
    return result;
}

namespace {

template <class F, class DF>
Tensor unary_op(const Tensor& x, const char* name, F f, DF dfdx_from_in_out) {
    std::vector<double> out(x.size());
    const auto& xv = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    Tensor result = make_op_output(x.shape(), std::move(out));
    assert_finite(result.data(), name);
    auto xp = x.ptr();
    auto rp = result.ptr();
    maybe_record({x}, result,
                 [xp, rp, dfdx_from_in_out](const std::vector<double>& g,
                                            const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t i = 0; i < g.size(); ++i)
                         (*in[0])[i] += g[i] * dfdx_from_in_out(xp->values[i], rp->values[i]);
                 });
    return result;
}

}  // namespace

Tensor exp(const Tensor& x) {
    return unary_op(x, "exp", [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) domain_check(v > 0.0, "log: non-positive input");
    return unary_op(x, "log", [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, "sigmoid",
                    [](double v) {
                        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                        : std::exp(v) / (1.0 + std::exp(v));
                    },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                    [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
    return unary_op(x, "abs", [](double v) { return std::fabs(v); },
                    [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor power(const Tensor& x, double p) {
    bool integer_p = p == std::floor(p);
    for (double v : x.data()) {
        if (!integer_p) domain_check(v >= 0.0, "power: negative base with fractional exponent");
        if (p < 0.0) domain_check(v != 0.0, "power: zero base with negative exponent");
    }
    return unary_op(x, "power", [p](double v) { return std::pow(v, p); },
                    [p](double v, double) {
                        if (p == 0.0) return 0.0;  // constant map even at v == 0
                        return p * std::pow(v, p - 1.0);
                    });
}

Tensor softmax_axis(const Tensor& x, size_t axis) {
    AxisView v = axis_view(x.shape(), axis);
    std::vector<double> out(x.size());
    const auto& xv = x.data();
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (size_t e = 0; e < v.extent; ++e)
                mx = std::max(mx, xv[(o * v.extent + e) * v.inner + i]);
            double den = 0.0;
            for (size_t e = 0; e < v.extent; ++e) {
                size_t idx = (o * v.extent + e) * v.inner + i;
                out[idx] = std::exp(xv[idx] - mx);
                den += out[idx];
            }
            for (size_t e = 0; e < v.extent; ++e) out[(o * v.extent + e) * v.inner + i] /= den;
        }
    Tensor result = make_op_output(x.shape(), std::move(out));
    assert_finite(result.data(), "softmax");
    auto rp = result.ptr();
    maybe_record({x}, result,
                 [rp, v](const std::vector<double>& g,
                         const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t o = 0; o < v.outer; ++o)
                         for (size_t i = 0; i < v.inner; ++i) {
                             double dot = 0.0;
                             for (size_t e = 0; e < v.extent; ++e) {
                                 size_t idx = (o * v.extent + e) * v.inner + i;
                                 dot += g[idx] * rp->values[idx];
                             }
                             for (size_t e = 0; e < v.extent; ++e) {
                                 size_t idx = (o * v.extent + e) * v.inner + i;
                                 (*in[0])[idx] += rp->values[idx] * (g[idx] - dot);
                             }
                         }
                 });
    return result;
}

Tensor max_axis(const Tensor& x, size_t axis) {
    AxisView v = axis_view(x.shape(), axis);
    std::vector<double> out(v.outer * v.inner);
    std::vector<size_t> arg(v.outer * v.inner, 0);
    const auto& xv = x.data();
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
            double best = xv[(o * v.extent) * v.inner + i];
            size_t bi = 0;
            for (size_t e = 1; e < v.extent; ++e) {
                double val = xv[(o * v.extent + e) * v.inner + i];
                if (val > best) {
                    best = val;
                    bi = e;
                }
            }
            out[o * v.inner + i] = best;
            arg[o * v.inner + i] = bi;
        }
    Tensor result = make_op_output(drop_axis(x.shape(), axis), std::move(out));
    maybe_record({x}, result,
                 [v, arg = std::move(arg)](const std::vector<double>& g,
                                           const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t o = 0; o < v.outer; ++o)
                         for (size_t i = 0; i < v.inner; ++i) {
                             size_t e = arg[o * v.inner + i];
                             (*in[0])[(o * v.extent + e) * v.inner + i] += g[o * v.inner + i];
                         }
                 });
    return result;
}

Tensor concat(const std::vector<Tensor>& xs, size_t axis) {
    check(!xs.empty(), "concat of empty list");
    const Shape& s0 = xs[0].shape();
    check(axis < s0.size(), "concat axis out of range");
    size_t total_axis = 0;
    for (const Tensor& t : xs) {
        check(t.ndim() == s0.size(), "concat rank mismatch");
        for (size_t i = 0; i < s0.size(); ++i)
            check(i == axis || t.shape()[i] == s0[i], "concat extent mismatch off-axis");
        total_axis += t.shape()[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = total_axis;
    AxisView ov = axis_view(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    size_t offset = 0;
    std::vector<size_t> offsets;
    for (const Tensor& t : xs) {
        offsets.push_back(offset);
        AxisView tv = axis_view(t.shape(), axis);
        const auto& tvd = t.data();
        for (size_t o = 0; o < tv.outer; ++o)
            for (size_t e = 0; e < tv.extent; ++e)
                std::memcpy(&out[(o * ov.extent + offset + e) * ov.inner],
                            &tvd[(o * tv.extent + e) * tv.inner], tv.inner * sizeof(double));
        offset += t.shape()[axis];
    }
    Tensor result = make_op_output(out_shape, std::move(out));
    std::vector<size_t> extents;
    for (const Tensor& t : xs) extents.push_back(t.shape()[axis]);
    maybe_record(xs, result,
                 [ov, offsets, extents](const std::vector<double>& g,
                                        const std::vector<std::vector<double>*>& in) {
                     for (size_t k = 0; k < in.size(); ++k) {
                         if (!in[k]) continue;
                         size_t ext = extents[k], off = offsets[k];
                         for (size_t o = 0; o < ov.outer; ++o)
                             for (size_t e = 0; e < ext; ++e)
                                 for (size_t i = 0; i < ov.inner; ++i)
                                     (*in[k])[(o * ext + e) * ov.inner + i] +=
                                         g[(o * ov.extent + off + e) * ov.inner + i];
                     }
                 });
    return result;
}

Tensor slice(const Tensor& x, const std::vector<size_t>& offsets,
             const std::vector<size_t>& extents) {
    const Shape& s = x.shape();
    check(offsets.size() == s.size() && extents.size() == s.size(),
          "slice: offsets/extents rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
        check(offsets[i] + extents[i] <= s[i], "slice: out of bounds on axis " + std::to_string(i));
    Shape out_shape(extents.begin(), extents.end());
    size_t n = shape_numel(out_shape);
    std::vector<double> out(n);
    const auto& xv = x.data();
    const size_t rank = s.size();
    std::vector<size_t> strides(rank, 1);
    for (size_t i = rank; i-- > 1;) strides[i - 1] = strides[i] * s[i];
    std::vector<size_t> src_index(n);
    std::vector<size_t> idx(rank, 0);
    for (size_t flat = 0; flat < n; ++flat) {
        size_t src = 0;
        for (size_t i = 0; i < rank; ++i) src += (offsets[i] + idx[i]) * strides[i];
        out[flat] = xv[src];
        src_index[flat] = src;
        for (size_t i = rank; i-- > 0;) {
            if (++idx[i] < extents[i]) break;
            idx[i] = 0;
        }
    }
    Tensor result = make_op_output(out_shape, std::move(out));
    maybe_record({x}, result,
                 [src_index = std::move(src_index)](const std::vector<double>& g,
                                                    const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t i = 0; i < g.size(); ++i) (*in[0])[src_index[i]] += g[i];
                 });
    return result;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    check(shape_numel(shape) == x.size(), "reshape: element count mismatch");
    Tensor result = make_op_output(shape, x.data());
    maybe_record({x}, result,
                 [](const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     if (!in[0])
                         return;
                     for (size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                 });
    return result;
}

// ---- convolutions ----------------------------------------------------------

Tensor conv2d3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    check(x.ndim() == 3 && w.ndim() == 4 && b.ndim() == 1, "conv2d3x3: bad ranks");
    check(stride == 1 || stride == 2, "conv2d3x3: stride must be 1 or 2");
    const size_t H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2];
    const size_t Cout = w.shape()[0];
    check(w.shape()[1] == Cin && w.shape()[2] == 3 && w.shape()[3] == 3,
          "conv2d3x3: weight shape mismatch");
    check(b.shape()[0] == Cout, "conv2d3x3: bias extent mismatch");
    const size_t Ho = (H - 1) / size_t(stride) + 1, Wo = (W - 1) / size_t(stride) + 1;
    std::vector<double> out(Ho * Wo * Cout, 0.0);
    const auto& xv = x.data();
    const auto& wv = w.data();
    const auto& bv = b.data();
    parallel_for_chunks(0, Ho, [&](size_t lo, size_t hi) {
        for (size_t oy = lo; oy < hi; ++oy)
            for (size_t ox = 0; ox < Wo; ++ox)
                for (size_t co = 0; co < Cout; ++co) {
                    double acc = bv[co];
                    for (int ky = 0; ky < 3; ++ky) {
                        long iy = long(oy) * stride + ky - 1;
                        if (iy < 0 || iy >= long(H)) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            long ix = long(ox) * stride + kx - 1;
                            if (ix < 0 || ix >= long(W)) continue;
                            const double* xr = &xv[(size_t(iy) * W + size_t(ix)) * Cin];
                            const double* wr = &wv[((co * Cin) * 3 + size_t(ky)) * 3 + size_t(kx)];
                            for (size_t ci = 0; ci < Cin; ++ci) acc += xr[ci] * wr[ci * 9];
                        }
                    }
                    out[(oy * Wo + ox) * Cout + co] = acc;
                }
    });
    Tensor result = make_op_output({Ho, Wo, Cout}, std::move(out));
    assert_finite(result.data(), "conv2d3x3");
    auto xp = x.ptr(), wp = w.ptr();
    maybe_record({x, w, b}, result,
                 [xp, wp, H, W, Cin, Cout, Ho, Wo, stride](
                     const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     for (size_t oy = 0; oy < Ho; ++oy)
                         for (size_t ox = 0; ox < Wo; ++ox)
                             for (size_t co = 0; co < Cout; ++co) {
                                 double go = g[(oy * Wo + ox) * Cout + co];
                                 if (go == 0.0) continue;
                                 if (in[2]) (*in[2])[co] += go;
                                 for (int ky = 0; ky < 3; ++ky) {
                                     long iy = long(oy) * stride + ky - 1;
                                     if (iy < 0 || iy >= long(H)) continue;
                                     for (int kx = 0; kx < 3; ++kx) {
                                         long ix = long(ox) * stride + kx - 1;
                                         if (ix < 0 || ix >= long(W)) continue;
                                         size_t xbase = (size_t(iy) * W + size_t(ix)) * Cin;
                                         for (size_t ci = 0; ci < Cin; ++ci) {
                                             size_t wi = (co * Cin + ci) * 9 +
                                                         size_t(ky) * 3 + size_t(kx);
                                             if (in[0]) (*in[0])[xbase + ci] += go * wp->values[wi];
                                             if (in[1]) (*in[1])[wi] += go * xp->values[xbase + ci];
                                         }
                                     }
                                 }
                             }
                 });
    return result;
}

Tensor conv3d3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    check(x.ndim() == 4 && w.ndim() == 5 && b.ndim() == 1, "conv3d3x3: bad ranks");
    check(stride == 1 || stride == 2, "conv3d3x3: stride must be 1 or 2");
    const size_t D = x.shape()[0], H = x.shape()[1], W = x.shape()[2], Cin = x.shape()[3];
    const size_t Cout = w.shape()[0];
    check(w.shape()[1] == Cin && w.shape()[2] == 3 && w.shape()[3] == 3 && w.shape()[4] == 3,
          "conv3d3x3: weight shape mismatch");
    check(b.shape()[0] == Cout, "conv3d3x3: bias extent mismatch");
    const size_t Do = (D - 1) / size_t(stride) + 1, Ho = (H - 1) / size_t(stride) + 1,
                 Wo = (W - 1) / size_t(stride) + 1;
    std::vector<double> out(Do * Ho * Wo * Cout, 0.0);
    const auto& xv = x.data();
    const auto& wv = w.data();
    const auto& bv = b.data();
    parallel_for_chunks(0, Do, [&](size_t dlo, size_t dhi) {
        for (size_t od = dlo; od < dhi; ++od)
            for (size_t oy = 0; oy < Ho; ++oy)
                for (size_t ox = 0; ox < Wo; ++ox)
                    for (size_t co = 0; co < Cout; ++co) {
                        double acc = bv[co];
                        for (int kd = 0; kd < 3; ++kd) {
                            long id = long(od) * stride + kd - 1;
                            if (id < 0 || id >= long(D)) continue;
                            for (int ky = 0; ky < 3; ++ky) {
                                long iy = long(oy) * stride + ky - 1;
                                if (iy < 0 || iy >= long(H)) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    long ix = long(ox) * stride + kx - 1;
                                    if (ix < 0 || ix >= long(W)) continue;
                                    const double* xr =
                                        &xv[((size_t(id) * H + size_t(iy)) * W + size_t(ix)) * Cin];
                                    for (size_t ci = 0; ci < Cin; ++ci)
                                        acc += xr[ci] *
                                               wv[(((co * Cin + ci) * 3 + size_t(kd)) * 3 +
                                                   size_t(ky)) * 3 + size_t(kx)];
                                }
                            }
                        }
                        out[((od * Ho + oy) * Wo + ox) * Cout + co] = acc;
                    }
    });
    Tensor result = make_op_output({Do, Ho, Wo, Cout}, std::move(out));
    assert_finite(result.data(), "conv3d3x3");
    auto xp = x.ptr(), wp = w.ptr();
    maybe_record(
        {x, w, b}, result,
        [xp, wp, D, H, W, Cin, Cout, Do, Ho, Wo, stride](
            const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
            for (size_t od = 0; od < Do; ++od)
                for (size_t oy = 0; oy < Ho; ++oy)
                    for (size_t ox = 0; ox < Wo; ++ox)
                        for (size_t co = 0; co < Cout; ++co) {
                            double go = g[((od * Ho + oy) * Wo + ox) * Cout + co];
                            if (go == 0.0) continue;
                            if (in[2]) (*in[2])[co] += go;
                            for (int kd = 0; kd < 3; ++kd) {
                                long id = long(od) * stride + kd - 1;
                                if (id < 0 || id >= long(D)) continue;
                                for (int ky = 0; ky < 3; ++ky) {
                                    long iy = long(oy) * stride + ky - 1;
                                    if (iy < 0 || iy >= long(H)) continue;
                                    for (int kx = 0; kx < 3; ++kx) {
                                        long ix = long(ox) * stride + kx - 1;
                                        if (ix < 0 || ix >= long(W)) continue;
                                        size_t xbase =
                                            ((size_t(id) * H + size_t(iy)) * W + size_t(ix)) * Cin;
                                        for (size_t ci = 0; ci < Cin; ++ci) {
                                            size_t wi = (((co * Cin + ci) * 3 + size_t(kd)) * 3 +
                                                         size_t(ky)) * 3 + size_t(kx);
                                            if (in[0]) (*in[0])[xbase + ci] += go * wp->values[wi];
                                            if (in[1]) (*in[1])[wi] += go * xp->values[xbase + ci];
                                        }
                                    }
                                }
                            }
                        }
        });
    return result;
}

Tensor upsample2_2d(const Tensor& x) {
    check(x.ndim() == 3, "upsample2_2d expects (H,W,C)");
    const size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    std::vector<double> out(4 * H * W * C);
    const auto& xv = x.data();
    for (size_t y = 0; y < 2 * H; ++y)
        for (size_t xcol = 0; xcol < 2 * W; ++xcol)
            std::memcpy(&out[(y * 2 * W + xcol) * C], &xv[((y / 2) * W + xcol / 2) * C],
                        C * sizeof(double));
    Tensor result = make_op_output({2 * H, 2 * W, C}, std::move(out));
    maybe_record({x}, result,
                 [H, W, C](const std::vector<double>& g,
                           const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t y = 0; y < 2 * H; ++y)
                         for (size_t xc = 0; xc < 2 * W; ++xc)
                             for (size_t c = 0; c < C; ++c)
                                 (*in[0])[((y / 2) * W + xc / 2) * C + c] +=
                                     g[(y * 2 * W + xc) * C + c];
                 });
    return result;
}

Tensor upsample2_3d(const Tensor& x) {
    check(x.ndim() == 4, "upsample2_3d expects (D,H,W,C)");
    const size_t D = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
    std::vector<double> out(8 * D * H * W * C);
    const auto& xv = x.data();
    for (size_t d = 0; d < 2 * D; ++d)
        for (size_t y = 0; y < 2 * H; ++y)
            for (size_t xc = 0; xc < 2 * W; ++xc)
                std::memcpy(&out[((d * 2 * H + y) * 2 * W + xc) * C],
                            &xv[(((d / 2) * H + y / 2) * W + xc / 2) * C], C * sizeof(double));
    Tensor result = make_op_output({2 * D, 2 * H, 2 * W, C}, std::move(out));
    maybe_record({x}, result,
                 [D, H, W, C](const std::vector<double>& g,
                              const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t d = 0; d < 2 * D; ++d)
                         for (size_t y = 0; y < 2 * H; ++y)
                             for (size_t xc = 0; xc < 2 * W; ++xc)
                                 for (size_t c = 0; c < C; ++c)
                                     (*in[0])[(((d / 2) * H + y / 2) * W + xc / 2) * C + c] +=
                                         g[((d * 2 * H + y) * 2 * W + xc) * C + c];
                 });
    return result;
}

Tensor bilinear_sample(const Tensor& feat, const std::vector<double>& xy,
                       std::vector<uint8_t>* valid) {
    check(feat.ndim() == 3, "bilinear_sample expects (H,W,F)");
    check(xy.size() % 2 == 0, "bilinear_sample: xy must be pairs");
    const size_t H = feat.shape()[0], W = feat.shape()[1], F = feat.shape()[2];
    const size_t n = xy.size() / 2;
    if (valid) valid->assign(n, 0);
    std::vector<double> out(n * F, 0.0);
    // saved taps for backward: 4 (index, weight) pairs per sample
    std::vector<size_t> tap_idx(n * 4, 0);
    std::vector<double> tap_w(n * 4, 0.0);
    const auto& fv = feat.data();
    for (size_t s = 0; s < n; ++s) {
        double xs = xy[2 * s], ys = xy[2 * s + 1];
        bool ok = std::isfinite(xs) && std::isfinite(ys) && xs >= 0.0 && xs <= double(W - 1) &&
                  ys >= 0.0 && ys <= double(H - 1);
        if (valid) (*valid)[s] = ok ? 1 : 0;
        if (!ok) continue;
        double xc = std::min(std::max(xs, 0.0), double(W - 1));
        double yc = std::min(std::max(ys, 0.0), double(H - 1));
        size_t x0 = size_t(std::min(double(W - 2), std::floor(xc)));
        size_t y0 = size_t(std::min(double(H - 2), std::floor(yc)));
        if (W == 1) x0 = 0;
        if (H == 1) y0 = 0;
        double fx = xc - double(x0), fy = yc - double(y0);
        size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        const size_t idx[4] = {y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1};
        const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        for (int t = 0; t < 4; ++t) {
            tap_idx[4 * s + size_t(t)] = idx[t];
            tap_w[4 * s + size_t(t)] = wts[t];
            const double* src = &fv[idx[t] * F];
            double* dst = &out[s * F];
            for (size_t c = 0; c < F; ++c) dst[c] += wts[t] * src[c];
        }
    }
    Tensor result = make_op_output({n, F}, std::move(out));
    assert_finite(result.data(), "bilinear_sample");
    maybe_record({feat}, result,
                 [n, F, tap_idx = std::move(tap_idx), tap_w = std::move(tap_w)](
                     const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t s = 0; s < n; ++s)
                         for (int t = 0; t < 4; ++t) {
                             double w = tap_w[4 * s + size_t(t)];
                             if (w == 0.0) continue;
                             double* dst = &(*in[0])[tap_idx[4 * s + size_t(t)] * F];
                             const double* src = &g[s * F];
                             for (size_t c = 0; c < F; ++c) dst[c] += w * src[c];
                         }
                 });
    return result;
}

Tensor trilinear_sample(const Tensor& vol, const std::vector<double>& dhw) {
    check(vol.ndim() == 4, "trilinear_sample expects (D,H,W,F)");
    check(dhw.size() % 3 == 0, "trilinear_sample: dhw must be triples");
    const size_t D = vol.shape()[0], H = vol.shape()[1], W = vol.shape()[2], F = vol.shape()[3];
    const size_t n = dhw.size() / 3;
    std::vector<double> out(n * F, 0.0);
    std::vector<size_t> tap_idx(n * 8, 0);
    std::vector<double> tap_w(n * 8, 0.0);
    const auto& fv = vol.data();
    auto clamp_axis = [](double v, size_t extent) {
        return std::min(std::max(v, 0.0), double(extent - 1));
    };
    for (size_t s = 0; s < n; ++s) {
        double dc = clamp_axis(dhw[3 * s], D);
        double hc = clamp_axis(dhw[3 * s + 1], H);
        double wc = clamp_axis(dhw[3 * s + 2], W);
        size_t d0 = D > 1 ? size_t(std::min(double(D - 2), std::floor(dc))) : 0;
        size_t h0 = H > 1 ? size_t(std::min(double(H - 2), std::floor(hc))) : 0;
        size_t w0 = W > 1 ? size_t(std::min(double(W - 2), std::floor(wc))) : 0;
        double fd = dc - double(d0), fh = hc - double(h0), fw = wc - double(w0);
        size_t d1 = std::min(d0 + 1, D - 1), h1 = std::min(h0 + 1, H - 1),
               w1 = std::min(w0 + 1, W - 1);
        int t = 0;
        for (int dd = 0; dd < 2; ++dd)
            for (int hh = 0; hh < 2; ++hh)
                for (int ww = 0; ww < 2; ++ww, ++t) {
                    size_t di = dd ? d1 : d0, hi = hh ? h1 : h0, wi = ww ? w1 : w0;
                    double wt = (dd ? fd : 1 - fd) * (hh ? fh : 1 - fh) * (ww ? fw : 1 - fw);
                    size_t idx = (di * H + hi) * W + wi;
                    tap_idx[8 * s + size_t(t)] = idx;
                    tap_w[8 * s + size_t(t)] = wt;
                    const double* src = &fv[idx * F];
                    double* dst = &out[s * F];
                    for (size_t c = 0; c < F; ++c) dst[c] += wt * src[c];
                }
    }
    Tensor result = make_op_output({n, F}, std::move(out));
    assert_finite(result.data(), "trilinear_sample");
    maybe_record({vol}, result,
                 [n, F, tap_idx = std::move(tap_idx), tap_w = std::move(tap_w)](
                     const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t s = 0; s < n; ++s)
                         for (int t = 0; t < 8; ++t) {
                             double w = tap_w[8 * s + size_t(t)];
                             if (w == 0.0) continue;
                             double* dst = &(*in[0])[tap_idx[8 * s + size_t(t)] * F];
                             const double* src = &g[s * F];
                             for (size_t c = 0; c < F; ++c) dst[c] += w * src[c];
                         }
                 });
    return result;
}

Tensor voxel_pool(const std::vector<double>& points_xyz, const Tensor& feats, size_t grid) {
    check(feats.ndim() == 2, "voxel_pool expects (n,F) features");
    check(points_xyz.size() == feats.shape()[0] * 3, "voxel_pool: points/features count mismatch");
    check(grid >= 1, "voxel_pool: grid must be >= 1");
    const size_t n = feats.shape()[0], F = feats.shape()[1], G = grid;
    auto cell_of = [G](double v) {
        long c = long(std::floor(v * double(G)));
        return size_t(std::min(std::max(c, 0l), long(G) - 1));
    };
    std::vector<size_t> voxel(n);
    for (size_t i = 0; i < n; ++i) {
        size_t cx = cell_of(points_xyz[3 * i]);
        size_t cy = cell_of(points_xyz[3 * i + 1]);
        size_t cz = cell_of(points_xyz[3 * i + 2]);
        voxel[i] = (cx * G + cy) * G + cz;
    }
    // fixed accumulation order keyed by (voxel, coordinates): bit-stable under
    // both threading and permutations of the input points
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (voxel[a] != voxel[b]) return voxel[a] < voxel[b];
        for (int c = 0; c < 3; ++c) {
            double xa = points_xyz[3 * a + size_t(c)], xb = points_xyz[3 * b + size_t(c)];
            if (xa != xb) return xa < xb;
        }
        return a < b;
    });
    std::vector<double> out(G * G * G * F, 0.0);
    std::vector<double> counts(G * G * G, 0.0);
    const auto& fv = feats.data();
    for (size_t k = 0; k < n; ++k) {
        size_t i = order[k];
        size_t vx = voxel[i];
        counts[vx] += 1.0;
        double* dst = &out[vx * F];
        const double* src = &fv[i * F];
        for (size_t c = 0; c < F; ++c) dst[c] += src[c];
    }
    for (size_t vx = 0; vx < counts.size(); ++vx)
        if (counts[vx] > 0.0)
            for (size_t c = 0; c < F; ++c) out[vx * F + c] /= counts[vx];
    Tensor result = make_op_output({G, G, G, F}, std::move(out));
    assert_finite(result.data(), "voxel_pool");
    maybe_record({feats}, result,
                 [n, F, voxel = std::move(voxel), counts = std::move(counts)](
                     const std::vector<double>& g, const std::vector<std::vector<double>*>& in) {
                     if (!in[0]) return;
                     for (size_t i = 0; i < n; ++i) {
                         size_t vx = voxel[i];
                         double inv = 1.0 / counts[vx];
                         const double* src = &g[vx * F];
                         double* dst = &(*in[0])[i * F];
                         for (size_t c = 0; c < F; ++c) dst[c] += inv * src[c];
                     }
                 });
    return result;
}

Tensor custom_op(const std::vector<Tensor>& inputs, Shape out_shape,
                 std::vector<double> out_values,
                 std::function<void(const std::vector<double>&,
                                    const std::vector<std::vector<double>*>&)>
                     backward_fn) {
    Tensor result = Tensor::from(std::move(out_shape), std::move(out_values));
    assert_finite(result.data(), "custom_op");
    maybe_record(inputs, result, std::move(backward_fn));
    return result;
}

// ---- optimizers --------------------------------------------------------

double OptimizerState::current_lr() const {
    if (decay_interval <= 0) return learning_rate;
    return learning_rate * std::pow(decay_factor, double(step_count / decay_interval));
}

void optimizer_step(OptimizerState& state, const std::vector<Tensor>& params,
                    const GradientMap& grads) {
    check(state.learning_rate > 0.0, "optimizer: learning_rate must be > 0");
    check(state.decay_factor > 0.0 && state.decay_factor <= 1.0,
          "optimizer: decay factor must be in (0,1]");
    const double lr = state.current_lr();
    const long long t = state.step_count + 1;
    for (const Tensor& p : params) {
        const Tensor* g = find_grad(grads, p);
        check(g != nullptr, "optimizer_step: missing gradient for a parameter");
        auto& pv = const_cast<Tensor&>(p).mutable_data();
        const auto& gv = g->data();
        if (state.kind == OptKind::Sgd) {
            for (size_t i = 0; i < pv.size(); ++i) pv[i] -= lr * gv[i];
        } else {
            auto& [m, v] = state.moments[p.key()];
            if (m.size() != pv.size()) {
                m.assign(pv.size(), 0.0);
                v.assign(pv.size(), 0.0);
            }
            const double b1 = state.beta1, b2 = state.beta2;
            const double bc1 = 1.0 - std::pow(b1, double(t));
            const double bc2 = 1.0 - std::pow(b2, double(t));
            for (size_t i = 0; i < pv.size(); ++i) {
                m[i] = b1 * m[i] + (1.0 - b1) * gv[i];
                v[i] = b2 * v[i] + (1.0 - b2) * gv[i] * gv[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                pv[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
            }
        }
    }
    ++state.step_count;
}

// ---- finite differences --------------------------------------------------

double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps) {
    check(eps >= 1e-7 && eps <= 1e-3, "finite_diff_check: eps out of [1e-7, 1e-3]");
    GradientMap grads;
    {
        Tape tape;
        for (const Tensor& p : params) tape.touch(p);
        Tensor loss = f();
        grads = backward(tape, loss);
    }
    double max_err = 0.0;
    NoGrad ng;
    for (const Tensor& p : params) {
        const Tensor* g = find_grad(grads, p);
        check(g != nullptr, "finite_diff_check: parameter not on tape");
        auto& pv = const_cast<Tensor&>(p).mutable_data();
        for (size_t i = 0; i < pv.size(); ++i) {
            const double orig = pv[i];
            pv[i] = orig + eps;
            double fp = f().value();
            pv[i] = orig - eps;
            double fm = f().value();
            pv[i] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double analytic = g->at(i);
            double err = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(analytic));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace mrio
