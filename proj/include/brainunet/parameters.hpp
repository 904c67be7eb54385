#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "brainunet/error.hpp"
#include "brainunet/tensor.hpp"

namespace brainunet {

/// Ordered collection of named tensors. Order is significant: it is the
/// serialization order of checkpoints.
template <class T>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        bool trainable = true;
    };

    void add(std::string name, Tensor<T> value, bool trainable = true) {
        if (index_.count(name)) throw ValueError("duplicate parameter name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(value), trainable});
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return entries_.size(); }

    Entry& entry(std::size_t i) { return entries_[i]; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    Tensor<T>& operator[](const std::string& name) { return entries_[lookup(name)].value; }
    const Tensor<T>& operator[](const std::string& name) const { return entries_[lookup(name)].value; }
    T* data(const std::string& name) { return (*this)[name].data(); }
    const T* data(const std::string& name) const { return (*this)[name].data(); }

    /// Number of trainable scalars.
    std::int64_t trainable_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) {
            if (e.trainable) n += e.value.size();
        }
        return n;
    }
    /// Number of scalars including non-trainable buffers.
    std::int64_t total_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    /// Zero-filled tensors for every trainable entry (gradient buffers).
    ParameterSet zeros_like_trainable() const {
        ParameterSet g;
        for (const auto& e : entries_) {
            if (e.trainable) g.add(e.name, Tensor<T>(e.value.shape()), true);
        }
        return g;
    }

    void fill(T v) {
        for (auto& e : entries_) e.value.fill(v);
    }

    template <class U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
        return out;
    }

    friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
        if (a.entries_.size() != b.entries_.size()) return false;
        for (std::size_t i = 0; i < a.entries_.size(); ++i) {
            const auto& x = a.entries_[i];
            const auto& y = b.entries_[i];
            if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value)) return false;
        }
        return true;
    }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// 64-bit FNV-1a; used for stable per-tensor seeds and checkpoint identities.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace brainunet
