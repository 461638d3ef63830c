#pragma once

// Named parameter registry shared by the model builder, the optimizer, and
// checkpoint I/O. Batch-norm running statistics live here too, flagged
// non-trainable so the optimizer skips them while checkpoints carry them.
//
// Checkpoint file layout (stable):
//   line 1:      MPARAMS1 <entry-count>
//   next lines:  <name> <ndim> <d0> <d1> ...        (one per entry, in order)
//   remainder:   raw little-endian float32 payloads concatenated in the
//                same order, each of length prod(shape)

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

template <typename T>
struct ParamEntry {
    std::string name;
    TensorPtrT<T> tensor;
    bool trainable = true;
};

template <typename T>
class ParamStoreT {
  public:
    TensorPtrT<T> create(const std::string& name, std::vector<int> shape, bool trainable);
    const TensorPtrT<T>& get(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) > 0; }

    std::vector<ParamEntry<T>>& entries() { return entries_; }
    const std::vector<ParamEntry<T>>& entries() const { return entries_; }
    int64_t total_elements() const;
    void zero_grads();

  private:
    std::vector<ParamEntry<T>> entries_;
    std::unordered_map<std::string, size_t> by_name_;
};

// First/second moment buffers for every trainable entry, plus the shared
// step counter. Build it from the store it will be applied to.
template <typename T>
struct AdamStateT {
    std::vector<std::vector<T>> m, v;  // indexed like the store's trainable entries
    int64_t step = 0;
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);

    static AdamStateT make(const ParamStoreT<T>& store);
};

// One optimizer step over every trainable entry. Entries whose gradient was
// never touched are treated as zero-gradient. Clears no gradients itself.
template <typename T>
void adam_step(ParamStoreT<T>& store, AdamStateT<T>& state, T lr);

// Checkpoint I/O; save writes to a temp file and renames so readers never
// observe a half-written checkpoint. load_checkpoint requires the store to
// already hold identical names/shapes in identical order (build the model
// from its config first).
template <typename T>
void save_checkpoint(const ParamStoreT<T>& store, const std::string& path);
template <typename T>
void load_checkpoint(ParamStoreT<T>& store, const std::string& path);

using ParamStore = ParamStoreT<float>;
using AdamState = AdamStateT<float>;

extern template class ParamStoreT<float>;
extern template class ParamStoreT<double>;
extern template struct AdamStateT<float>;
extern template struct AdamStateT<double>;
extern template void adam_step<float>(ParamStoreT<float>&, AdamStateT<float>&, float);
extern template void adam_step<double>(ParamStoreT<double>&, AdamStateT<double>&, double);
extern template void save_checkpoint<float>(const ParamStoreT<float>&, const std::string&);
extern template void save_checkpoint<double>(const ParamStoreT<double>&, const std::string&);
extern template void load_checkpoint<float>(ParamStoreT<float>&, const std::string&);
extern template void load_checkpoint<double>(ParamStoreT<double>&, const std::string&);

}  // namespace mseg
