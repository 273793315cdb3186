#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "dex/tensor.hpp"

namespace dex {

/// Named parameter registry with insertion-ordered iteration. Trainable
/// entries require grad; buffers (EMA codebook statistics) do not but are
/// still persisted.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    /// Registers `init` under `name` as a leaf and returns the stored handle.
    Tensor add(const std::string& name, const Tensor& init, bool trainable = true);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::vector<Tensor> trainable() const;
    std::size_t trainable_scalar_count() const;
    void zero_grad();

    /// Overwrites values in place from `other`; names, order and shapes must agree.
    void copy_values_from(const ParamStore& other);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dex
