#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dspl/graph.hpp"
#include "dspl/ops.hpp"
#include "dspl/serialize.hpp"

namespace dspl::nn {

/// Named parameter store plus a forward closure.
///
/// Tensors are heap-allocated individually so layer structs can keep raw
/// pointers to them across moves of the Model. Buffers (batch-norm running
/// statistics) are checkpointed with the parameters but never trained.
class Model {
 public:
  using ForwardFn = std::function<Var(Graph&, Var, Mode)>;

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  Tensor& add_parameter(std::string name, Tensor init);
  Tensor& add_buffer(std::string name, Tensor init);

  std::vector<Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;
  bool has_parameter(std::string_view name) const;
  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  void zero_grad();

  void set_forward(ForwardFn fn) { forward_ = std::move(fn); }
  Var forward(Graph& g, Var input, Mode mode) const;
  /// Eval-mode forward on a throwaway graph.
  Tensor predict(const Tensor& input) const;

  /// Parameters then buffers, in registration order.
  std::vector<NamedTensor> state() const;
  /// Requires an exact name/shape match for every entry.
  void load_state(std::span<const NamedTensor> state);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  void describe(std::string line);
  const std::string& architecture() const { return architecture_; }

 private:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };
  Entry* find(std::string_view name) const;
  Tensor& add(std::string name, Tensor init, bool trainable);

  std::vector<std::unique_ptr<Entry>> entries_;
  ForwardFn forward_;
  std::string architecture_;
};

}  // namespace dspl::nn
