#pragma once

#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssp/aligned.hpp"
#include "ssp/errors.hpp"
#include "ssp/random.hpp"

namespace ssp {

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool trainable = true;
};

using ParamId = int;

/// Flat storage for every learnable tensor of a model. Tensors are stored in
/// registration order, which is also the checkpoint order. Complex tensors
/// are stored as interleaved (re, im) pairs with a trailing axis of 2.
class ParamSet {
public:
    ParamId add(std::string name, std::vector<int> shape, bool trainable = true) {
        for (const auto& p : info_)
            if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("parameter " + name + " has a non-positive extent");
            n *= static_cast<std::size_t>(d);
        }
        info_.push_back({std::move(name), std::move(shape), values_.size(), n, trainable});
        values_.resize(values_.size() + n, 0.0);
        return static_cast<ParamId>(info_.size() - 1);
    }

    std::span<double> operator[](ParamId id) {
        const auto& p = info_.at(id);
        return {values_.data() + p.offset, p.size};
    }
    std::span<const double> operator[](ParamId id) const {
        const auto& p = info_.at(id);
        return {values_.data() + p.offset, p.size};
    }

    const ParamInfo& info(ParamId id) const { return info_.at(id); }
    const std::vector<ParamInfo>& infos() const { return info_; }
    int count() const { return static_cast<int>(info_.size()); }
    std::size_t total_size() const { return values_.size(); }

    AlignedVector<double>& values() { return values_; }
    const AlignedVector<double>& values() const { return values_; }

    ParamId find(const std::string& name) const {
        for (std::size_t i = 0; i < info_.size(); ++i)
            if (info_[i].name == name) return static_cast<ParamId>(i);
        return -1;
    }

    /// Which tensor owns flat index k.
    ParamId owner(std::size_t k) const {
        for (std::size_t i = 0; i < info_.size(); ++i)
            if (k >= info_[i].offset && k < info_[i].offset + info_[i].size) return static_cast<ParamId>(i);
        return -1;
    }

    void set_trainable(ParamId id, bool t) { info_.at(id).trainable = t; }

    void fill_normal(ParamId id, Rng& rng, double stddev) {
        for (auto& v : (*this)[id]) v = stddev * rng.normal();
    }

private:
    std::vector<ParamInfo> info_;
    AlignedVector<double> values_;
};

/// Gradient buffer with the same flat layout as a ParamSet.
class Grads {
public:
    Grads() = default;
    explicit Grads(const ParamSet& p) : g_(p.total_size(), 0.0) {
        for (const auto& info : p.infos()) layout_.emplace_back(info.offset, info.size);
    }

    std::span<double> operator[](ParamId id) {
        const auto [off, n] = layout_.at(id);
        return {g_.data() + off, n};
    }
    std::span<const double> operator[](ParamId id) const {
        const auto [off, n] = layout_.at(id);
        return {g_.data() + off, n};
    }
    AlignedVector<double>& values() { return g_; }
    const AlignedVector<double>& values() const { return g_; }
    void zero() { std::fill(g_.begin(), g_.end(), 0.0); }

    Grads& operator+=(const Grads& o) {
        for (std::size_t k = 0; k < g_.size(); ++k) g_[k] += o.g_[k];
        return *this;
    }
    Grads& operator*=(double s) {
        for (auto& v : g_) v *= s;
        return *this;
    }

private:
    std::vector<std::pair<std::size_t, std::size_t>> layout_; // (offset, size) per tensor
    AlignedVector<double> g_;
};

} // namespace ssp
