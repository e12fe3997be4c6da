#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "jmvl/arch.hpp"
#include "jmvl/common.hpp"
#include "jmvl/dists.hpp"
#include "jmvl/rng.hpp"
#include "jmvl/tensor.hpp"

namespace jmvl {

enum class HeadKind { diag_gaussian, bernoulli, categorical, fixed_var_gaussian };

inline const char* head_kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::diag_gaussian: return "gaussian";
        case HeadKind::bernoulli: return "bernoulli";
        case HeadKind::categorical: return "categorical";
        case HeadKind::fixed_var_gaussian: return "fixed_var_gaussian";
    }
    return "?";
}

template <typename T>
struct DenseLayer {
    Parameter<T> weight;  // [in, out]
    Parameter<T> bias;    // [out]
    bool relu = false;
};

/// Head outputs plus the trunk activation they were computed from. The trunk
/// tensor is what the hierarchical model taps as h_l.
template <typename T>
struct NetworkOutput {
    Tensor<T> trunk;
    Tensor<T> mean;
    Tensor<T> var;  // valid only for diag_gaussian heads

    DiagGaussianParams<T> gaussian() const { return {mean, var}; }
    BernoulliParams<T> bernoulli() const { return {mean}; }
    CategoricalParams<T> categorical() const { return {mean}; }
    FixedVarGaussianParams<T> fixed_var_gaussian() const { return {mean}; }
};

/// MLP trunk (optionally two input branches concatenated) with linear
/// distribution heads: f_mu always, f_var for Gaussian outputs.
template <typename T>
class Network {
public:
    Network() = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    const std::string& name() const { return name_; }
    const ArchSpec& spec() const { return spec_; }
    std::string arch_string() const { return render_arch(spec_); }
    HeadKind head() const { return head_; }
    std::size_t out_dim() const { return out_dim_; }
    std::size_t trunk_dim() const { return trunk_dim_; }
    const std::vector<std::size_t>& input_dims() const { return input_dims_; }

    /// Forward through the trunk only.
    Tensor<T> trunk_forward(Tape<T>& tape, const Tensor<T>& in_a, const Tensor<T>* in_b = nullptr) const {
        if (spec_.has_branches()) {
            if (in_b == nullptr) throw ShapeError(name_ + ": two-branch network needs two inputs");
            Tensor<T> ha = run_chain(tape, branch_a_, in_a);
            Tensor<T> hb = run_chain(tape, branch_b_, *in_b);
            Tensor<T> h = tape.concat_cols(ha, hb);
            return run_chain(tape, tail_, h);
        }
        if (in_b != nullptr) throw ShapeError(name_ + ": single-branch network takes one input");
        return run_chain(tape, tail_, in_a);
    }

    NetworkOutput<T> forward(Tape<T>& tape, const Tensor<T>& in_a, const Tensor<T>* in_b = nullptr) const {
        Tensor<T> h = trunk_forward(tape, in_a, in_b);
        return heads_from_trunk(tape, h);
    }

    NetworkOutput<T> heads_from_trunk(Tape<T>& tape, const Tensor<T>& h) const {
        NetworkOutput<T> out;
        out.trunk = h;
        Tensor<T> mu_pre = dense(tape, head_mu_, h);
        switch (head_) {
            case HeadKind::diag_gaussian: {
                out.mean = mu_pre;
                Tensor<T> var_pre = dense(tape, *head_var_, h);
                out.var = tape.add_scalar(tape.softplus(var_pre), T(kVarFloor));
                break;
            }
            case HeadKind::bernoulli:
                out.mean = tape.sigmoid(mu_pre);
                break;
            case HeadKind::categorical:
                out.mean = tape.softmax_rows(mu_pre);
                break;
            case HeadKind::fixed_var_gaussian:
                out.mean = mu_pre;
                break;
        }
        return out;
    }

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        auto push = [&out](std::vector<DenseLayer<T>>& layers) {
            for (auto& l : layers) {
                out.push_back(&l.weight);
                out.push_back(&l.bias);
            }
        };
        push(branch_a_);
        push(branch_b_);
        push(tail_);
        out.push_back(&head_mu_.weight);
        out.push_back(&head_mu_.bias);
        if (head_var_) {
            out.push_back(&head_var_->weight);
            out.push_back(&head_var_->bias);
        }
        return out;
    }

    static Network build(std::string name, const ArchSpec& spec,
                         const std::vector<std::size_t>& input_dims, HeadKind head,
                         std::size_t head_dim, Rng& init_rng) {
        if (spec.input_count() != input_dims.size())
            throw ShapeError(name + ": architecture takes " + std::to_string(spec.input_count()) +
                             " input(s), got " + std::to_string(input_dims.size()));
        for (std::size_t d : input_dims)
            if (d == 0) throw ShapeError(name + ": input dimension must be positive");

        Network net;
        net.name_ = std::move(name);
        net.spec_ = spec;
        net.head_ = head;
        net.out_dim_ = head_dim;
        net.input_dims_ = input_dims;

        auto build_chain = [&](const std::vector<LayerAtom>& atoms, std::size_t in_dim,
                               const std::string& prefix) {
            std::vector<DenseLayer<T>> layers;
            std::size_t d = in_dim;
            for (std::size_t i = 0; i < atoms.size(); ++i) {
                const LayerAtom& a = atoms[i];
                if (a.batch_norm)
                    throw UnsupportedLayer(net.name_ + ": batch-norm layer '" + detail::render_atom(a) +
                                           "' is not executable");
                if (a.sigmoid)
                    throw UnsupportedLayer(net.name_ + ": sigmoid layer '" + detail::render_atom(a) +
                                           "' is not executable");
                layers.push_back(make_dense(net.name_ + "." + prefix + std::to_string(i), d, a.units,
                                            a.relu, init_rng));
                d = a.units;
            }
            return std::pair{std::move(layers), d};
        };

        std::size_t trunk_in;
        if (spec.has_branches()) {
            auto [la, da] = build_chain(spec.branches->first, input_dims[0], "a");
            auto [lb, db] = build_chain(spec.branches->second, input_dims[1], "b");
            net.branch_a_ = std::move(la);
            net.branch_b_ = std::move(lb);
            trunk_in = da + db;
        } else {
            trunk_in = input_dims[0];
        }
        auto [lt, dt] = build_chain(spec.tail, trunk_in, "t");
        net.tail_ = std::move(lt);
        net.trunk_dim_ = dt;

        net.head_mu_ = make_dense(net.name_ + ".mu", net.trunk_dim_, head_dim, false, init_rng);
        if (head == HeadKind::diag_gaussian)
            net.head_var_ = make_dense(net.name_ + ".var", net.trunk_dim_, head_dim, false, init_rng);
        return net;
    }

private:
    std::string name_;
    ArchSpec spec_;
    HeadKind head_ = HeadKind::diag_gaussian;
    std::size_t out_dim_ = 0;
    std::size_t trunk_dim_ = 0;
    std::vector<std::size_t> input_dims_;
    std::vector<DenseLayer<T>> branch_a_, branch_b_, tail_;
    DenseLayer<T> head_mu_;
    std::optional<DenseLayer<T>> head_var_;

    static DenseLayer<T> make_dense(const std::string& name, std::size_t in, std::size_t out, bool relu,
                                    Rng& rng) {
        DenseLayer<T> l;
        l.weight = Parameter<T>(name + ".w", {in, out});
        l.bias = Parameter<T>(name + ".b", {out});
        l.relu = relu;
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (auto& v : l.weight.value) v = static_cast<T>(rng.uniform(-limit, limit));
        return l;
    }

    static Tensor<T> dense(Tape<T>& tape, const DenseLayer<T>& l, const Tensor<T>& x) {
        // const_cast is confined here: leaf() copies the current values and
        // never writes back through the pointer during forward/backward.
        Tensor<T> w = tape.leaf(const_cast<Parameter<T>&>(l.weight));
        Tensor<T> b = tape.leaf(const_cast<Parameter<T>&>(l.bias));
        Tensor<T> y = tape.add(tape.matmul(x, w), b);
        return l.relu ? tape.relu(y) : y;
    }

    static Tensor<T> run_chain(Tape<T>& tape, const std::vector<DenseLayer<T>>& layers, Tensor<T> x) {
        for (const auto& l : layers) x = dense(tape, l, x);
        return x;
    }
};

template <typename T>
Network<T> build_network(std::string name, const ArchSpec& spec,
                         const std::vector<std::size_t>& input_dims, HeadKind head,
                         std::size_t head_dim, Rng& init_rng) {
    return Network<T>::build(std::move(name), spec, input_dims, head, head_dim, init_rng);
}

}  // namespace jmvl
