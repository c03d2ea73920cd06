#include "dspl/model.hpp"

#include <stdexcept>

namespace dspl::nn {

Tensor& Model::add(std::string name, Tensor init, bool trainable) {
  if (find(name) != nullptr) throw std::invalid_argument("model: duplicate parameter " + name);
  entries_.push_back(std::make_unique<Entry>(Entry{std::move(name), std::move(init), trainable}));
  return entries_.back()->tensor;
}

Tensor& Model::add_parameter(std::string name, Tensor init) {
  return add(std::move(name), std::move(init), true);
}

Tensor& Model::add_buffer(std::string name, Tensor init) {
  return add(std::move(name), std::move(init), false);
}

Model::Entry* Model::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e->name == name) return e.get();
  }
  return nullptr;
}

std::vector<Tensor*> Model::parameters() const {
  std::vector<Tensor*> out;
  for (const auto& e : entries_) {
    if (e->trainable) out.push_back(&e->tensor);
  }
  return out;
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e->trainable) out.push_back(e->name);
  }
  return out;
}

Tensor& Model::parameter(std::string_view name) {
  Entry* e = find(name);
  if (!e) throw std::out_of_range("model: no parameter named " + std::string(name));
  return e->tensor;
}

const Tensor& Model::parameter(std::string_view name) const {
  return const_cast<Model*>(this)->parameter(name);
}

bool Model::has_parameter(std::string_view name) const { return find(name) != nullptr; }

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e->trainable) n += e->tensor.numel();
  }
  return n;
}

void Model::zero_grad() {
  for (const auto& e : entries_) e->tensor.clear_grad();
}

Var Model::forward(Graph& g, Var input, Mode mode) const {
  if (!forward_) throw std::logic_error("model: forward function not set");
  return forward_(g, input, mode);
}

Tensor Model::predict(const Tensor& input) const {
  Graph g;
  return forward(g, g.input(input), Mode::Eval).value();
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out;
  for (const auto& e : entries_) {
    if (e->trainable) out.push_back({e->name, e->tensor});
  }
  for (const auto& e : entries_) {
    if (!e->trainable) out.push_back({e->name, e->tensor});
  }
  for (auto& nt : out) nt.tensor.clear_grad();
  return out;
}

void Model::load_state(std::span<const NamedTensor> state) {
  if (state.size() != entries_.size()) {
    throw std::runtime_error("model: checkpoint holds " + std::to_string(state.size()) +
                             " tensors, model expects " + std::to_string(entries_.size()));
  }
  for (const auto& nt : state) {
    Entry* e = find(nt.name);
    if (!e) throw std::runtime_error("model: checkpoint tensor " + nt.name + " is unknown");
    if (e->tensor.shape() != nt.tensor.shape()) {
      throw std::runtime_error("model: checkpoint tensor " + nt.name + " has shape " +
                               shape_str(nt.tensor.shape()) + ", expected " +
                               shape_str(e->tensor.shape()));
    }
  }
  for (const auto& nt : state) {
    Tensor& t = find(nt.name)->tensor;
    std::copy(nt.tensor.data().begin(), nt.tensor.data().end(), t.data().begin());
    t.clear_grad();
  }
}

void Model::save(const std::filesystem::path& path) const {
  const auto s = state();
  save_tensors(path, s);
}

void Model::load(const std::filesystem::path& path) {
  const auto s = load_tensors(path);
  load_state(s);
}

void Model::describe(std::string line) {
  architecture_ += line;
  architecture_ += '\n';
}

}  // namespace dspl::nn
