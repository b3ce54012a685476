#pragma once

#include <map>
#include <string>

#include "tsl/tensor.hpp"

namespace tsl {

// Named parameter tensors, ordered by name for deterministic traversal.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor t) {
    auto [it, fresh] = params_.emplace(name, std::move(t));
    check(fresh, "duplicate parameter name: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    check(it != params_.end(), "unknown parameter: " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    check(it != params_.end(), "unknown parameter: " + name);
    return it->second;
  }
  Map& map() { return params_; }
  const Map& map() const { return params_; }
  std::size_t size() const { return params_.size(); }

 private:
  Map params_;
};

// Container file: textual header (name, dtype, dims, byte offset into the
// payload) then raw little-endian float32 data. Round-trips bit-exactly.
void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

}  // namespace tsl
