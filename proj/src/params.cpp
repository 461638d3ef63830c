#include "mseg/params.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mseg/autodiff.hpp"

namespace mseg {

template <typename T>
TensorPtrT<T> ParamStoreT<T>::create(const std::string& name, std::vector<int> shape,
                                     bool trainable) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto t = TensorT<T>::zeros(std::move(shape), trainable);
    by_name_[name] = entries_.size();
    entries_.push_back({name, t, trainable});
    return t;
}

template <typename T>
const TensorPtrT<T>& ParamStoreT<T>::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return entries_[it->second].tensor;
}

template <typename T>
int64_t ParamStoreT<T>::total_elements() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor->numel();
    return n;
}

template <typename T>
void ParamStoreT<T>::zero_grads() {
    for (auto& e : entries_) e.tensor->zero_grad();
}

template <typename T>
AdamStateT<T> AdamStateT<T>::make(const ParamStoreT<T>& store) {
    AdamStateT<T> s;
    for (const auto& e : store.entries())
        if (e.trainable) {
            s.m.emplace_back(e.tensor->data.size(), T(0));
            s.v.emplace_back(e.tensor->data.size(), T(0));
        }
    return s;
}

template <typename T>
void adam_step(ParamStoreT<T>& store, AdamStateT<T>& state, T lr) {
    state.step += 1;
    size_t ti = 0;
    for (auto& e : store.entries()) {
        if (!e.trainable) continue;
        if (ti >= state.m.size())
            throw std::invalid_argument("adam_step: state does not match store");
        if (e.tensor->grad.empty()) e.tensor->grad_buf();  // untouched gradient == zeros
        adam_update(e.tensor->data, e.tensor->grad, state.m[ti], state.v[ti], state.step, lr,
                    state.beta1, state.beta2, state.eps);
        ++ti;
    }
    if (ti != state.m.size()) throw std::invalid_argument("adam_step: state/store size mismatch");
}

namespace {

void payload_to_file(std::ofstream& out, const std::vector<float>& host) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint writer assumes little-endian host");
    out.write(reinterpret_cast<const char*>(host.data()),
              std::streamsize(host.size() * sizeof(float)));
}

}  // namespace

template <typename T>
void save_checkpoint(const ParamStoreT<T>& store, const std::string& path) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open checkpoint for write: " + tmp.string());
        out << "MPARAMS1 " << store.entries().size() << "\n";
        for (const auto& e : store.entries()) {
            out << e.name << ' ' << e.tensor->shape.size();
            for (int d : e.tensor->shape) out << ' ' << d;
            out << '\n';
        }
        std::vector<float> host;
        for (const auto& e : store.entries()) {
            host.assign(e.tensor->data.begin(), e.tensor->data.end());
            payload_to_file(out, host);
        }
        out.flush();
        if (!out) throw std::runtime_error("checkpoint write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

template <typename T>
void load_checkpoint(ParamStoreT<T>& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint missing header");
    std::istringstream hs(line);
    std::string magic;
    size_t count = 0;
    hs >> magic >> count;
    if (!hs || magic != "MPARAMS1")
        throw std::runtime_error("malformed checkpoint header: " + line);
    if (count != store.entries().size())
        throw std::runtime_error("checkpoint entry count does not match model");

    for (auto& e : store.entries()) {
        if (!std::getline(in, line)) throw std::runtime_error("checkpoint manifest truncated");
        std::istringstream ls(line);
        std::string name;
        size_t ndim = 0;
        ls >> name >> ndim;
        std::vector<int> shape(ndim);
        for (auto& d : shape) ls >> d;
        if (!ls || name != e.name || shape != e.tensor->shape)
            throw std::runtime_error("checkpoint entry mismatch at '" + e.name + "': got '" +
                                     line + "'");
    }
    std::vector<float> host;
    for (auto& e : store.entries()) {
        host.resize(e.tensor->data.size());
        in.read(reinterpret_cast<char*>(host.data()),
                std::streamsize(host.size() * sizeof(float)));
        if (size_t(in.gcount()) != host.size() * sizeof(float))
            throw std::runtime_error("checkpoint payload truncated at '" + e.name + "'");
        for (size_t i = 0; i < host.size(); ++i) e.tensor->data[i] = T(host[i]);
    }
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw std::runtime_error("checkpoint has trailing bytes");
}

template class ParamStoreT<float>;
template class ParamStoreT<double>;
template struct AdamStateT<float>;
template struct AdamStateT<double>;
template void adam_step<float>(ParamStoreT<float>&, AdamStateT<float>&, float);
template void adam_step<double>(ParamStoreT<double>&, AdamStateT<double>&, double);
template void save_checkpoint<float>(const ParamStoreT<float>&, const std::string&);
template void save_checkpoint<double>(const ParamStoreT<double>&, const std::string&);
template void load_checkpoint<float>(ParamStoreT<float>&, const std::string&);
template void load_checkpoint<double>(ParamStoreT<double>&, const std::string&);

}  // namespace mseg
