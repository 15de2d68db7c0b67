#include "citrinet/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "citrinet/error.hpp"

namespace citrinet {

namespace {
thread_local Tape *g_active_tape = nullptr;
} // namespace

std::size_t numel(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : node_(std::make_shared<detail::Node>()) {
    if (numel(shape) != data.size())
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

const Shape &Tensor::shape() const {
    if (!node_)
        throw ContractError("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto &s = shape();
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(s));
    return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
    if (!node_)
        throw ContractError("use of undefined tensor");
    return node_->value;
}

std::span<double> Tensor::mutable_data() {
    if (!node_)
        throw ContractError("use of undefined tensor");
    return node_->value;
}

double Tensor::item() const {
    if (size() != 1)
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto &s = shape();
    if (index.size() != s.size())
        throw DimensionError("index rank mismatch for shape " + shape_str(s));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis])
            throw DimensionError("index out of range for shape " + shape_str(s));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor &Tensor::set_requires_grad(bool on) {
    if (!node_)
        throw ContractError("use of undefined tensor");
    node_->requires_grad = on;
    return *this;
}

std::vector<double> Tensor::grad() const {
    if (!node_)
        throw ContractError("use of undefined tensor");
    if (node_->grad.empty())
        return std::vector<double>(node_->value.size(), 0.0);
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<double> Tensor::mutable_grad() {
    if (!node_)
        throw ContractError("use of undefined tensor");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty())
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

void Tape::record(std::shared_ptr<detail::Node> out, BackwardFn fn) {
    entries_.push_back(Entry{std::move(out), std::move(fn)});
}

TapeScope::TapeScope(Tape &tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape *active_tape() { return g_active_tape; }

void backward(Tape &tape, const Tensor &loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (tape.entries_.empty())
        throw ContractError("backward() on an empty tape");
    // Intermediate gradients are per-pass; only leaves accumulate across calls.
    for (auto &entry : tape.entries_)
        entry.out->grad.clear();
    auto &root = *loss.node();
    root.ensure_grad();
    root.grad[0] += 1.0;
    for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
        if (it->out->grad.empty())
            continue;
        it->fn(*it->out);
    }
}

} // namespace citrinet
