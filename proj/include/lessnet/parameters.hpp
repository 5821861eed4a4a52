#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lessnet/autodiff.hpp"
#include "lessnet/tensor.hpp"

namespace lessnet {

/// One learnable layer: weight, bias and whether the optimizer may touch them.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> weight;
    Tensor<T> bias;
    bool trainable = true;

    std::size_t scalar_count() const { return weight.size() + bias.size(); }
    bool operator==(const Parameter&) const = default;
};

/// Ordered, uniquely named layer parameters. Names follow "<group>/<layer>"
/// where group is encoder, decoder or output.
template <typename T>
class ParameterSet {
public:
    void add(Parameter<T> p)
    {
        if (find(p.name)) throw std::invalid_argument("duplicate parameter name " + p.name);
        entries_.push_back(std::move(p));
    }

    const Parameter<T>* find(std::string_view name) const
    {
        for (const auto& p : entries_)
            if (p.name == name) return &p;
        return nullptr;
    }
    Parameter<T>* find(std::string_view name)
    {
        for (auto& p : entries_)
            if (p.name == name) return &p;
        return nullptr;
    }
    const Parameter<T>& at(std::string_view name) const
    {
        if (const auto* p = find(name)) return *p;
        throw std::out_of_range("no parameter named " + std::string(name));
    }
    Parameter<T>& at(std::string_view name)
    {
        if (auto* p = find(name)) return *p;
        throw std::out_of_range("no parameter named " + std::string(name));
    }

    std::size_t scalar_count() const
    {
        std::size_t n = 0;
        for (const auto& p : entries_) n += p.scalar_count();
        return n;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

    template <typename U>
    ParameterSet<U> cast() const
    {
        ParameterSet<U> out;
        for (const auto& p : entries_)
            out.add(Parameter<U>{p.name, p.weight.template cast<U>(), p.bias.template cast<U>(), p.trainable});
        return out;
    }

    bool operator==(const ParameterSet&) const = default;

private:
    std::vector<Parameter<T>> entries_;
};

/// A ParameterSet placed on a Tape. Trainable layers become differentiable
/// leaves; frozen ones (or all, when `differentiable` is false) are constants.
template <typename T>
class BoundParameters {
public:
    BoundParameters(Tape<T>& tape, const ParameterSet<T>& params, bool differentiable = true)
    {
        for (const auto& p : params) {
            const bool leaf = differentiable && p.trainable;
            const Var<T> w = leaf ? tape.leaf(p.weight) : tape.constant(p.weight);
            const Var<T> b = leaf ? tape.leaf(p.bias) : tape.constant(p.bias);
            vars_.emplace(p.name, Entry{w, b});
        }
    }

    /// Binds Vars that already live on a tape; vars holds (weight, bias) per name.
    static BoundParameters from_vars(const std::vector<std::string>& names, const std::vector<Var<T>>& vars)
    {
        if (vars.size() != 2 * names.size()) throw std::invalid_argument("from_vars needs a weight and a bias per name");
        BoundParameters b;
        for (std::size_t i = 0; i < names.size(); ++i)
            if (!b.vars_.emplace(names[i], Entry{vars[2 * i], vars[2 * i + 1]}).second)
                throw std::invalid_argument("duplicate parameter name " + names[i]);
        return b;
    }

    Var<T> weight(const std::string& name) const { return entry(name).weight; }
    Var<T> bias(const std::string& name) const { return entry(name).bias; }

    /// Gradients after Tape::backward, keyed like the ParameterSet.
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> gradients(Tape<T>& tape) const
    {
        std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> out;
        for (const auto& [name, e] : vars_) out.emplace(name, std::pair{tape.grad(e.weight), tape.grad(e.bias)});
        return out;
    }

private:
    BoundParameters() = default;

    struct Entry {
        Var<T> weight;
        Var<T> bias;
    };
    const Entry& entry(const std::string& name) const
    {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw std::out_of_range("parameter " + name + " is not bound");
        return it->second;
    }
    std::map<std::string, Entry> vars_;
};

template <typename T>
using Gradients = std::map<std::string, std::pair<Tensor<T>, Tensor<T>>>;

} // namespace lessnet
