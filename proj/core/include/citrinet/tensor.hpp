#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace citrinet {

using Shape = std::vector<std::size_t>;

// Number of elements described by a shape. A rank-0 shape is a scalar.
std::size_t numel(const Shape &shape);
std::string shape_str(const Shape &shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until a gradient reaches this node
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty())
            grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

// Dense row-major tensor of 64-bit reals.
//
// A Tensor is a cheap handle: copies share the same storage. Ops never
// mutate their inputs; the only in-place writers are initializers and the
// optimizer, which go through mutable_data().
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor &set_requires_grad(bool on);

    // Gradient accumulated by backward(); all zeros when none reached here.
    std::vector<double> grad() const;
    bool has_grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Fresh copy of the value with no gradient tracking.
    Tensor detach() const;

    const std::shared_ptr<detail::Node> &node() const { return node_; }
    static Tensor from_node(std::shared_ptr<detail::Node> node);

  private:
    std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable ops. Ops executed while a tape is active
// (see TapeScope) append one entry per output whose inputs require grad, so
// entries are always in topological order.
class Tape {
  public:
    using BackwardFn = std::function<void(const detail::Node &out)>;

    void record(std::shared_ptr<detail::Node> out, BackwardFn fn);
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear() { entries_.clear(); }

    friend void backward(Tape &tape, const Tensor &loss);

  private:
    struct Entry {
        std::shared_ptr<detail::Node> out;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
};

// Makes a tape the active recording target for the current thread.
class TapeScope {
  public:
    explicit TapeScope(Tape &tape);
    ~TapeScope();
    TapeScope(const TapeScope &) = delete;
    TapeScope &operator=(const TapeScope &) = delete;

  private:
    Tape *previous_;
};

Tape *active_tape();

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, accumulating
// into every node that requires grad. Throws ContractError for a non-scalar
// loss or an empty tape.
void backward(Tape &tape, const Tensor &loss);

} // namespace citrinet
