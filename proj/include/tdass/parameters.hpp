#pragma once

#include <map>
#include <string>
#include <vector>

#include "tdass/errors.hpp"
#include "tdass/tensor.hpp"

namespace tdass {

/// Parameter groups: P = encoder + attention, G = generator (decoder), C = speaker classifier.
enum class Group : char { P = 'P', G = 'G', C = 'C' };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::P: return "P";
    case Group::G: return "G";
    case Group::C: return "C";
  }
  return "?";
}

/// Named parameter tensors, each owned by exactly one group. Iteration is in name order.
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Group group;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void add(const std::string& name, Group group, Tensor value) {
    if (!entries_.emplace(name, Entry{std::move(value), group}).second) {
      throw ContractError("parameter '" + name + "' registered twice");
    }
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& value(const std::string& name) { return const_cast<Entry&>(std::as_const(*this).entry(name)).value; }
  Group group(const std::string& name) const { return entry(name).group; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  std::vector<std::string> names(Group g) const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) {
      if (e.group == g) out.push_back(name);
    }
    return out;
  }

  void erase_group(Group g) { std::erase_if(entries_, [g](const auto& kv) { return kv.second.group == g; }); }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

/// Parameter name -> gradient of identical shape.
using GradientMap = std::map<std::string, Tensor>;

inline GradientMap zero_gradients(const ParameterStore& store) {
  GradientMap g;
  for (const auto& [name, e] : store) g.emplace(name, Tensor::zeros(e.value.shape()));
  return g;
}

}  // namespace tdass
