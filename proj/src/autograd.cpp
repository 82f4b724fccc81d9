#include "vidguide/autograd.hpp"

#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "vidguide/errors.hpp"

namespace vidguide {

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->rule = "constant";
    return Var(std::move(node));
}

Var leaf(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->rule = "leaf";
    node->requires_grad = true;
    return Var(std::move(node));
}

Var record(Tensor value, std::vector<Var> parents, std::string_view rule, BackwardRule backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->rule = rule;
    for (const Var& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
    if (node->requires_grad) {
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

namespace {

// Post-order DFS without recursion; graphs from the denoiser are a few
// hundred nodes deep.
std::vector<const Node*> topo_order(const Node* root) {
    std::vector<const Node*> order;
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<const Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            const Node* parent = node->parents[next++].node();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void accumulate(Tensor& into, const Tensor& g) {
    if (into.empty()) {
        into = g;
        return;
    }
    if (into.shape() != g.shape()) {
        throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match " +
                             shape_str(into.shape()));
    }
    std::vector<double> sum(into.vec());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
    into = Tensor(into.shape(), std::move(sum));
}

}  // namespace

std::vector<Tensor> backward(const Var& loss, std::span<const Var> leaves) {
    if (loss.value().size() != 1 || loss.value().rank() > 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    std::unordered_map<const Node*, Tensor> grads;
    if (loss.requires_grad()) {
        const std::vector<const Node*> order = topo_order(loss.node());
        grads[loss.node()] = Tensor::filled(loss.shape(), 1.0);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const Node* node = *it;
            if (!node->backward) continue;
            auto found = grads.find(node);
            if (found == grads.end()) continue;
            std::vector<Tensor> parent_grads = node->backward(found->second);
            for (std::size_t p = 0; p < node->parents.size(); ++p) {
                const Var& parent = node->parents[p];
                if (!parent.requires_grad() || p >= parent_grads.size() || parent_grads[p].empty()) continue;
                accumulate(grads[parent.node()], parent_grads[p]);
            }
            if (!node->parents.empty()) grads.erase(node);
        }
    }
    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (const Var& l : leaves) {
        auto found = grads.find(l.node());
        out.push_back(found == grads.end() ? Tensor::zeros(l.shape()) : found->second);
    }
    return out;
}

Tensor backward(const Var& loss, const Var& leaf) {
    const Var leaves[] = {leaf};
    return std::move(backward(loss, leaves).front());
}

}  // namespace vidguide
