#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrio {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Throws std::invalid_argument on broken caller contracts.
void check(bool cond, const std::string& msg);
// Throws std::domain_error on math-domain violations.
void domain_check(bool cond, const std::string& msg);

// When enabled, every forward op asserts its output is NaN/Inf free.
// Defaults to on in debug builds.
void set_finite_checks(bool on);
bool finite_checks();

struct TensorData {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    uint64_t tape_epoch = 0;  // which tape the node id below refers to
    int tape_node = -1;
};

// Value-semantics handle to a dense 64-bit float array. Cheap to copy; the
// payload is shared. Payloads are treated as immutable once produced by an op;
// only parameter initialisation and optimizer_step write in place.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double v);
    static Tensor from(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double v);
    static Tensor param(const Shape& shape, std::vector<double> values);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    size_t size() const { return d_->values.size(); }
    size_t ndim() const { return d_->shape.size(); }
    bool is_scalar() const { return d_ && d_->values.size() == 1; }
    double value() const;
    double at(size_t flat) const { return d_->values[flat]; }
    const std::vector<double>& data() const { return d_->values; }
    std::vector<double>& mutable_data() { return d_->values; }
    bool requires_grad() const { return d_ && d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }
    const std::shared_ptr<TensorData>& ptr() const { return d_; }
    const TensorData* key() const { return d_.get(); }

  private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
    friend class Tape;
    friend Tensor make_op_output(Shape shape, std::vector<double> values);
};

struct TapeNode {
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::vector<int> input_nodes;  // -1 where the input carries no gradient
    std::shared_ptr<TensorData> output;
    // Accumulates d(loss)/d(input_i) into *in_adj[i] given d(loss)/d(output).
    // in_adj[i] is null when input i needs no gradient.
    std::function<void(const std::vector<double>& out_adj,
                       const std::vector<std::vector<double>*>& in_adj)>
        backward;
    bool is_leaf = false;
};

using GradientMap = std::map<const TensorData*, Tensor>;

// Define-by-run gradient tape. Constructing a Tape makes it the active
// recorder for the current thread; destruction restores the previous one.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a requires_grad tensor as a leaf so backward() reports a
    // gradient for it even if no op consumes it.
    void touch(const Tensor& t);

    size_t node_count() const { return nodes_.size(); }
    uint64_t epoch() const { return epoch_; }

    static Tape* active();

  private:
    friend GradientMap backward(Tape& tape, const Tensor& loss);
    friend int record_input(Tape& tape, const Tensor& t);
    friend void record_node(Tape& tape, TapeNode node, const Tensor& out);

    int register_leaf(const Tensor& t);

    std::vector<TapeNode> nodes_;
    std::vector<int> leaves_;  // node ids of leaves
    uint64_t epoch_;
    Tape* prev_ = nullptr;
};

// Suspends recording on the active tape for the lifetime of the object.
class NoGrad {
  public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

// Reverse-mode sweep from a scalar loss recorded on `tape`. Returns a
// gradient per registered leaf; leaves that do not reach the loss get zeros.
GradientMap backward(Tape& tape, const Tensor& loss);

const Tensor* find_grad(const GradientMap& grads, const Tensor& param);

// ---- forward ops ------------------------------------------------------
// Binary elementwise ops broadcast when one side is scalar or its shape is a
// trailing suffix of the other (bias rows); anything else is a shape error.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor sum(const Tensor& x);
Tensor sum_axis(const Tensor& x, size_t axis);
Tensor mean(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor power(const Tensor& x, double p);
Tensor softmax_axis(const Tensor& x, size_t axis);
Tensor max_axis(const Tensor& x, size_t axis);
Tensor concat(const std::vector<Tensor>& xs, size_t axis);
Tensor slice(const Tensor& x, const std::vector<size_t>& offsets,
             const std::vector<size_t>& extents);
Tensor reshape(const Tensor& x, const Shape& shape);

// 3x3 / 3x3x3 convolutions, zero padding 1, stride 1 or 2.
// x: (H,W,Cin), w: (Cout,Cin,3,3), b: (Cout) -> (H',W',Cout)
Tensor conv2d3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1);
// x: (D,H,W,Cin), w: (Cout,Cin,3,3,3), b: (Cout) -> (D',H',W',Cout)
Tensor conv3d3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1);

// Nearest-neighbour 2x upsampling of (H,W,C) / (D,H,W,C).
Tensor upsample2_2d(const Tensor& x);
Tensor upsample2_3d(const Tensor& x);

// Samples feat (H,W,F) at n continuous (x,y) positions, pixel centres on the
// integer lattice. Coordinates are clamped to the border; samples outside the
// raster are reported invalid (and zeroed) instead of extrapolated.
// xy is packed x0,y0,x1,y1,...
Tensor bilinear_sample(const Tensor& feat, const std::vector<double>& xy,
                       std::vector<uint8_t>* valid = nullptr);

// Samples vol (D,H,W,F) at n continuous (d,h,w) lattice positions, clamped.
Tensor trilinear_sample(const Tensor& vol, const std::vector<double>& dhw);

// Averages per-point feature rows (n,F) into a (G,G,G,F) grid over the unit
// cube; empty cells stay zero. Accumulation follows a fixed point order, so
// the result is independent of thread count.
Tensor voxel_pool(const std::vector<double>& points_xyz, const Tensor& feats,
                  size_t grid);

// Registers a custom differentiable op on the active tape. backward_fn
// receives d(loss)/d(output) and accumulates into the per-input adjoint
// buffers (null when an input carries no gradient).
Tensor custom_op(const std::vector<Tensor>& inputs, Shape out_shape,
                 std::vector<double> out_values,
                 std::function<void(const std::vector<double>&,
                                    const std::vector<std::vector<double>*>&)>
                     backward_fn);

// ---- optimizers --------------------------------------------------------

enum class OptKind { Sgd, Adam };

struct OptimizerState {
    OptKind kind = OptKind::Adam;
    double learning_rate = 1e-3;
    double decay_factor = 1.0;     // multiplicative, in (0,1]
    long long decay_interval = 0;  // steps between decays; 0 disables
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long step_count = 0;
    std::map<const TensorData*, std::pair<std::vector<double>, std::vector<double>>> moments;

    double current_lr() const;
};

// In-place update of params from grads; every param must have a gradient.
void optimizer_step(OptimizerState& state, const std::vector<Tensor>& params,
                    const GradientMap& grads);

// ---- gradient verification ---------------------------------------------

// Compares tape gradients of the scalar f() against central differences over
// every coordinate of every param. Returns max |analytic - numeric| /
// max(1, |analytic|). f must be deterministic.
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double eps = 1e-5);

}  // namespace mrio
