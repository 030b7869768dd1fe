#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hsifuse/tensor.hpp"

namespace hsifuse {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded operation. The graph is rebuilt on every forward pass and
/// owned through the parent pointers of the nodes reachable from an output.
struct Node {
    uint64_t id = 0;
    std::string op;
    Tensor value;
    Tensor grad;  // empty until backward reaches the node
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    // Reads `grad` of this node and accumulates into the parents.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
};

/// Handle to a graph node. Cheap to copy.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    int64_t dim(int64_t axis) const { return value().dim(axis); }
    int64_t rank() const { return value().rank(); }
    DType dtype() const { return value().dtype(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::string& op() const;
    const NodePtr& node() const { return node_; }

    /// Replaces the stored value of a leaf (used by the optimizer).
    void set_value(Tensor value) const;
    void zero_grad() const;

    static Var from_node(NodePtr n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    NodePtr node_;
};

/// While alive, operations do not record backward information.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

bool grad_enabled();

/// Creates the output node of an operation. When no parent requires a
/// gradient (or recording is disabled) the parents and backward rule are
/// dropped.
Var make_result(std::string op, Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Adds g into n.grad, allocating it on first use.
void accumulate_grad(Node& n, const Tensor& g);

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; interior gradients are reset at the start of each sweep.
void backward(const Var& root);

}  // namespace hsifuse
