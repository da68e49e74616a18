#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairstitch/autodiff.hpp"
#include "fairstitch/errors.hpp"
#include "fairstitch/rng.hpp"
#include "fairstitch/tensor.hpp"

namespace fairstitch {

// ============================================================================
// Feed-forward network made of affine(+relu) blocks, with per-block freezing
// and an optional trainable stitch layer inserted between two frozen blocks.
// Networks are value-like: clone freely, one instance per training run.
// ============================================================================

enum class Activation { None, Relu };

struct LayerBlock {
    Tensor weight;     // in x out
    Tensor bias;       // 1 x out
    Activation activation = Activation::None;
    bool trainable = true;

    std::size_t in_dim() const { return weight.rows; }
    std::size_t out_dim() const { return weight.cols; }
};

// Pure affine layer applied before blocks[position].
struct Stitch {
    LayerBlock layer;
    std::size_t position = 0;
};

struct Network {
    std::vector<LayerBlock> blocks;
    std::optional<Stitch> stitch;
    std::uint64_t init_seed = 0;

    std::size_t input_dim() const { return blocks.front().in_dim(); }
    std::size_t output_dim() const { return blocks.back().out_dim(); }
    std::size_t block_count() const { return blocks.size(); }

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        d.reserve(blocks.size() + 1);
        d.push_back(input_dim());
        for (const LayerBlock& b : blocks) d.push_back(b.out_dim());
        return d;
    }
};

inline void check_chain(const Network& net) {
    if (net.blocks.empty()) throw ContractError("network: no blocks");
    for (std::size_t k = 0; k + 1 < net.blocks.size(); ++k) {
        if (net.blocks[k].out_dim() != net.blocks[k + 1].in_dim()) {
            throw ShapeError("network: block " + std::to_string(k) + " out dim " +
                             std::to_string(net.blocks[k].out_dim()) +
                             " does not chain into block " + std::to_string(k + 1) +
                             " in dim " + std::to_string(net.blocks[k + 1].in_dim()));
        }
    }
    if (net.stitch) {
        const std::size_t pos = net.stitch->position;
        if (pos < 1 || pos >= net.blocks.size()) {
            throw RangeError("network: stitch position " + std::to_string(pos) +
                             " outside [1, " + std::to_string(net.blocks.size() - 1) + "]");
        }
        if (net.stitch->layer.in_dim() != net.blocks[pos - 1].out_dim() ||
            net.stitch->layer.out_dim() != net.blocks[pos].in_dim()) {
            throw ShapeError("network: stitch shape " + net.stitch->layer.weight.shape() +
                             " does not fit between blocks " + std::to_string(pos - 1) +
                             " and " + std::to_string(pos));
        }
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w(fan_in, fan_out);
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    return w;
}

} // namespace detail

// MLP with relu hidden blocks and a linear 2-logit head. Weights are
// Glorot-uniform, biases zero, everything trainable; fully determined by the
// seed.
inline Network init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    if (dims.size() < 3) {
        throw ConfigError("init_mlp: need at least [input, hidden, output] dims, got " +
                          std::to_string(dims.size()) + " entries");
    }
    for (std::size_t d : dims) {
        if (d == 0) throw ConfigError("init_mlp: zero entry in dims");
    }
    if (dims.back() != 2) {
        throw ConfigError("init_mlp: final dim must be 2 (binary logits), got " +
                          std::to_string(dims.back()));
    }
    Rng rng(seed);
    Network net;
    net.init_seed = seed;
    const std::size_t n_blocks = dims.size() - 1;
    net.blocks.reserve(n_blocks);
    for (std::size_t k = 0; k < n_blocks; ++k) {
        LayerBlock block;
        block.weight = detail::glorot_uniform(dims[k], dims[k + 1], rng);
        block.bias = Tensor(1, dims[k + 1], 0.0);
        block.activation = (k + 1 == n_blocks) ? Activation::None : Activation::Relu;
        block.trainable = true;
        net.blocks.push_back(std::move(block));
    }
    check_chain(net);
    return net;
}

enum class StitchInit { Identity, Random };

// Inserts a trainable affine stitch before blocks[position] and freezes every
// original block. Original weights are untouched.
inline Network insert_stitch(Network net, std::size_t position, StitchInit init,
                             std::uint64_t seed = 0) {
    if (net.stitch) throw ContractError("insert_stitch: network already has a stitch");
    if (position < 1 || position >= net.blocks.size()) {
        throw RangeError("insert_stitch: position " + std::to_string(position) +
                         " outside [1, " + std::to_string(net.blocks.size() - 1) + "]");
    }
    const std::size_t in = net.blocks[position - 1].out_dim();
    const std::size_t out = net.blocks[position].in_dim();
    Stitch stitch;
    stitch.position = position;
    stitch.layer.activation = Activation::None;
    stitch.layer.trainable = true;
    stitch.layer.bias = Tensor(1, out, 0.0);
    if (init == StitchInit::Identity) {
        if (in != out) {
            throw ShapeError("insert_stitch: identity init needs square stitch, got " +
                             Tensor::shape_str(in, out));
        }
        stitch.layer.weight = Tensor::identity(in);
    } else {
        Rng rng(seed);
        stitch.layer.weight = detail::glorot_uniform(in, out, rng);
    }
    for (LayerBlock& b : net.blocks) b.trainable = false;
    net.stitch = std::move(stitch);
    check_chain(net);
    return net;
}

enum class TrainableSelector { All, LastBlockOnly, StitchOnly, None };

inline Network set_trainable(Network net, TrainableSelector selector) {
    if (selector == TrainableSelector::StitchOnly && !net.stitch) {
        throw ContractError("set_trainable: stitch_only selected but network has no stitch");
    }
    for (LayerBlock& b : net.blocks) b.trainable = false;
    if (net.stitch) net.stitch->layer.trainable = false;
    switch (selector) {
    case TrainableSelector::All:
        for (LayerBlock& b : net.blocks) b.trainable = true;
        if (net.stitch) net.stitch->layer.trainable = true;
        break;
    case TrainableSelector::LastBlockOnly:
        net.blocks.back().trainable = true;
        break;
    case TrainableSelector::StitchOnly:
        net.stitch->layer.trainable = true;
        break;
    case TrainableSelector::None:
        break;
    }
    return net;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

// Tape variables of one recorded forward pass; used to pull gradients out
// after backward().
struct ForwardVars {
    Tape::Var logits;
    std::vector<std::pair<Tape::Var, Tape::Var>> block_params; // (weight, bias) per block
    std::optional<std::pair<Tape::Var, Tape::Var>> stitch_params;
};

// Applies blocks in order, inserting the stitch (affine, no activation) at
// its position. Parameters enter the tape with their trainable flag as
// requires_grad.
inline ForwardVars forward(const Network& net, const Tensor& x, Tape& tape) {
    check_chain(net);
    if (x.cols != net.input_dim()) {
        throw ShapeError("forward: input shape " + x.shape() + " does not match d0=" +
                         std::to_string(net.input_dim()));
    }
    ForwardVars vars;
    Tape::Var h = tape.constant(x);
    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        if (net.stitch && net.stitch->position == k) {
            Tensor sw = net.stitch->layer.weight;
            Tensor sb = net.stitch->layer.bias;
            sw.requires_grad = net.stitch->layer.trainable;
            sb.requires_grad = net.stitch->layer.trainable;
            Tape::Var wv = tape.leaf(std::move(sw));
            Tape::Var bv = tape.leaf(std::move(sb));
            vars.stitch_params = {wv, bv};
            h = tape.affine(h, wv, bv);
        }
        const LayerBlock& block = net.blocks[k];
        Tensor w = block.weight;
        Tensor b = block.bias;
        w.requires_grad = block.trainable;
        b.requires_grad = block.trainable;
        Tape::Var wv = tape.leaf(std::move(w));
        Tape::Var bv = tape.leaf(std::move(b));
        vars.block_params.emplace_back(wv, bv);
        h = tape.affine(h, wv, bv);
        if (block.activation == Activation::Relu) h = tape.relu(h);
    }
    vars.logits = h;
    return vars;
}

inline Tensor logits_of(const Network& net, const Tensor& x) {
    Tape tape;
    return tape.value(forward(net, x, tape).logits);
}

// Class-1 probability per row via a scratch tape, so inference shares the
// exact arithmetic of the recorded forward pass.
inline Tensor class1_probs(const Network& net, const Tensor& x) {
    Tape tape;
    ForwardVars vars = forward(net, x, tape);
    return tape.value(tape.softmax_probs(vars.logits));
}

// ---------------------------------------------------------------------------
// Parameter flattening
// ---------------------------------------------------------------------------

namespace detail {

// Chain order: stitch (at its position) and blocks, weight before bias,
// row-major within each tensor.
template <typename Fn>
void visit_chain(const Network& net, bool trainable_only, Fn&& fn) {
    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        if (net.stitch && net.stitch->position == k &&
            (!trainable_only || net.stitch->layer.trainable)) {
            fn(net.stitch->layer);
        }
        if (!trainable_only || net.blocks[k].trainable) fn(net.blocks[k]);
    }
}

template <typename Fn>
void visit_chain_mut(Network& net, bool trainable_only, Fn&& fn) {
    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        if (net.stitch && net.stitch->position == k &&
            (!trainable_only || net.stitch->layer.trainable)) {
            fn(net.stitch->layer);
        }
        if (!trainable_only || net.blocks[k].trainable) fn(net.blocks[k]);
    }
}

} // namespace detail

inline std::size_t param_count(const Network& net, bool trainable_only) {
    std::size_t n = 0;
    detail::visit_chain(net, trainable_only,
                        [&](const LayerBlock& b) { n += b.weight.size() + b.bias.size(); });
    return n;
}

inline std::vector<double> params(const Network& net, bool trainable_only) {
    std::vector<double> flat;
    flat.reserve(param_count(net, trainable_only));
    detail::visit_chain(net, trainable_only, [&](const LayerBlock& b) {
        flat.insert(flat.end(), b.weight.data.begin(), b.weight.data.end());
        flat.insert(flat.end(), b.bias.data.begin(), b.bias.data.end());
    });
    return flat;
}

// Inverse of params(): writes a flat vector back into the selected blocks.
inline Network with_params(Network net, std::span<const double> flat, bool trainable_only) {
    if (flat.size() != param_count(net, trainable_only)) {
        throw ContractError("with_params: flat vector has " + std::to_string(flat.size()) +
                            " entries, selection needs " +
                            std::to_string(param_count(net, trainable_only)));
    }
    std::size_t offset = 0;
    detail::visit_chain_mut(net, trainable_only, [&](LayerBlock& b) {
        std::copy(flat.begin() + offset, flat.begin() + offset + b.weight.size(),
                  b.weight.data.begin());
        offset += b.weight.size();
        std::copy(flat.begin() + offset, flat.begin() + offset + b.bias.size(),
                  b.bias.data.begin());
        offset += b.bias.size();
    });
    return net;
}

// Gradient of the current tape in the same flat order as params(trainable_only=true).
inline std::vector<double> trainable_grad(const Network& net, const Tape& tape,
                                          const ForwardVars& vars) {
    std::vector<double> flat;
    flat.reserve(param_count(net, true));
    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        if (net.stitch && net.stitch->position == k && net.stitch->layer.trainable) {
            const auto& [wv, bv] = *vars.stitch_params;
            const Tensor& gw = tape.grad(wv);
            const Tensor& gb = tape.grad(bv);
            flat.insert(flat.end(), gw.data.begin(), gw.data.end());
            flat.insert(flat.end(), gb.data.begin(), gb.data.end());
        }
        if (net.blocks[k].trainable) {
            const auto& [wv, bv] = vars.block_params[k];
            const Tensor& gw = tape.grad(wv);
            const Tensor& gb = tape.grad(bv);
            flat.insert(flat.end(), gw.data.begin(), gw.data.end());
            flat.insert(flat.end(), gb.data.begin(), gb.data.end());
        }
    }
    return flat;
}

inline bool frozen_params_equal(const Network& a, const Network& b) {
    if (a.blocks.size() != b.blocks.size()) return false;
    for (std::size_t k = 0; k < a.blocks.size(); ++k) {
        if (a.blocks[k].trainable != b.blocks[k].trainable) return false;
        if (a.blocks[k].trainable) continue;
        if (!bitwise_equal(a.blocks[k].weight, b.blocks[k].weight)) return false;
        if (!bitwise_equal(a.blocks[k].bias, b.blocks[k].bias)) return false;
    }
    return true;
}

} // namespace fairstitch
