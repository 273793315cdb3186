#include "dex/param_store.hpp"

#include <algorithm>

#include "dex/errors.hpp"

namespace dex {

Tensor ParamStore::add(const std::string& name, const Tensor& init, bool trainable) {
    if (contains(name)) throw ContractError("duplicate parameter name: " + name);
    Tensor leaf = init.clone_leaf(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, leaf, trainable});
    return leaf;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].tensor;
}

std::vector<Tensor> ParamStore::trainable() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_)
        if (e.trainable) out.push_back(e.tensor);
    return out;
}

std::size_t ParamStore::trainable_scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.tensor.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other) {
    if (other.size() != size()) throw InputError("parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& src = other.entries_[i];
        auto& dst = entries_[i];
        if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
            throw InputError("parameter layout mismatch at " + dst.name);
        }
        auto d = dst.tensor.mutable_data();
        std::copy(src.tensor.data().begin(), src.tensor.data().end(), d.begin());
    }
}

}  // namespace dex
