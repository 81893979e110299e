#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <ATen/ATen.h>

namespace ostk::detail {

struct PyObject;
using PyRef = std::shared_ptr<PyObject>;

struct PyNone {};
struct PyGlobal {
  std::string module;
  std::string name;
};
struct PyTuple {
  std::vector<PyRef> items;
};
using PyList = std::vector<PyRef>;
using PyDict = std::vector<std::pair<PyRef, PyRef>>;
using PyBytes = std::vector<std::uint8_t>;

// An object of a class the reader does not know. Nothing is ever executed:
// the class reference, constructor arguments and BUILD state are recorded.
struct PyInstance {
  PyRef type;
  std::vector<PyRef> args;
  PyRef state;
};

struct PyStorage {
  at::ScalarType dtype = at::kFloat;
  std::string key;
  std::int64_t numel = 0;
};

struct PyObject {
  std::variant<PyNone, bool, std::int64_t, double, std::string, PyBytes, PyList, PyTuple, PyDict, PyGlobal,
               PyInstance, PyStorage, at::Tensor>
      value;

  template <typename T>
  const T* get_if() const noexcept {
    return std::get_if<T>(&value);
  }
  template <typename T>
  T* get_if() noexcept {
    return std::get_if<T>(&value);
  }
  bool is_none() const noexcept { return std::holds_alternative<PyNone>(value); }
};

// Returns the value stored under a string key, or nullptr.
const PyRef* dict_lookup(const PyDict& dict, std::string_view key);

// Loads the raw contents of a tensor storage record as a 1-D tensor.
using StorageLoader = std::function<at::Tensor(const PyStorage&)>;

// Minimal data-only reader for the pickle streams PyTorch writes (protocols
// 2 to 5). Tensors are rebuilt from persistent storage records; every other
// class becomes a PyInstance.
class Unpickler {
 public:
  Unpickler(std::span<const std::uint8_t> data, StorageLoader loader, std::string origin);

  PyRef load();

 private:
  [[noreturn]] void fail(const std::string& what) const;
  std::uint8_t byte();
  template <typename T>
  T read_le();
  std::string read_bytes(std::size_t n);
  std::string read_line();

  PyRef pop();
  PyRef& top();
  std::vector<PyRef> pop_mark();
  PyRef make(auto value) { return std::make_shared<PyObject>(PyObject{std::move(value)}); }

  PyRef reduce(const PyRef& callable, std::vector<PyRef> args);
  PyRef persistent(const PyRef& pid);
  at::Tensor rebuild_tensor(const std::vector<PyRef>& args);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  StorageLoader loader_;
  std::string origin_;
  std::vector<PyRef> stack_;
  std::vector<std::size_t> marks_;
  std::vector<PyRef> memo_;
  std::vector<std::pair<std::string, at::Tensor>> storages_;
};

}  // namespace ostk::detail
