#include "hsifuse/autograd.hpp"

#include <unordered_set>

namespace hsifuse {

namespace {
bool g_grad_enabled = true;
uint64_t g_next_id = 1;
}  // namespace

Var::Var(Tensor value, bool requires_grad) {
    if (!value.defined()) throw ContractError("Var from an empty tensor");
    node_ = std::make_shared<Node>();
    node_->id = g_next_id++;
    node_->op = "leaf";
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
    if (!node_) throw ContractError("use of an undefined Var");
    return node_->value;
}

const Tensor& Var::grad() const {
    if (!node_) throw ContractError("use of an undefined Var");
    return node_->grad;
}

const std::string& Var::op() const {
    if (!node_) throw ContractError("use of an undefined Var");
    return node_->op;
}

void Var::set_value(Tensor value) const {
    if (!node_ || !node_->is_leaf()) throw ContractError("set_value on a non-leaf Var");
    if (value.shape() != node_->value.shape() || value.dtype() != node_->value.dtype())
        throw ShapeError("set_value shape/dtype mismatch");
    node_->value = std::move(value);
}

void Var::zero_grad() const {
    if (node_) node_->grad = Tensor();
}

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_result(std::string op, Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->id = g_next_id++;
    n->op = std::move(op);
    n->value = std::move(value);
    bool any = false;
    for (const Var& p : parents) any = any || p.requires_grad();
    if (any && g_grad_enabled) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const Var& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Var::from_node(std::move(n));
}

void accumulate_grad(Node& n, const Tensor& g) {
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
        throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                         shape_str(n.value.shape()) + " in op '" + n.op + "'");
    if (!n.grad.defined()) {
        n.grad = g;
        return;
    }
    dispatch(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dst = n.grad.mutable_data<T>();
        auto src = g.data<T>();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
}

void backward(const Var& root) {
    if (!root.defined()) throw ContractError("backward on an undefined Var");
    if (root.value().numel() != 1)
        throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order with parents first.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (!n->is_leaf()) n->grad = Tensor();

    Node& r = *root.node();
    accumulate_grad(r, Tensor::ones(r.value.shape(), r.value.dtype()));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf() || !n->grad.defined() || !n->backward_fn) continue;
        n->backward_fn(*n);
    }
}

}  // namespace hsifuse
