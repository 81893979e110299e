#include "ostk/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <torch/csrc/jit/serialization/pickle.h>

#include "ostk/error.hpp"
#include "unpickler.hpp"
#include "zip_archive.hpp"

namespace ostk {
namespace {

constexpr const char* kNativeFormat = "ostk-yolov8-seg";

using detail::PyDict;
using detail::PyInstance;
using detail::PyList;
using detail::PyRef;

void collect_module(const PyRef& module, const std::string& prefix, std::map<std::string, at::Tensor>& out,
                    const std::string& origin) {
  const auto* inst = module->get_if<PyInstance>();
  const auto* state = inst && inst->state ? inst->state->get_if<PyDict>() : nullptr;
  if (!state) {
    throw Error(ErrorKind::LoadFailure, origin + ": module '" + prefix + "' carries no state");
  }
  for (const char* slot : {"_parameters", "_buffers"}) {
    const PyRef* entries = detail::dict_lookup(*state, slot);
    if (!entries) continue;
    const auto* dict = (*entries)->get_if<PyDict>();
    if (!dict) continue;
    for (const auto& [k, v] : *dict) {
      const auto* name = k->get_if<std::string>();
      const auto* tensor = v->get_if<at::Tensor>();
      if (name && tensor) out.emplace(prefix + *name, tensor->contiguous().clone());
    }
  }
  if (const PyRef* children = detail::dict_lookup(*state, "_modules")) {
    if (const auto* dict = (*children)->get_if<PyDict>()) {
      for (const auto& [k, v] : *dict) {
        const auto* name = k->get_if<std::string>();
        if (name && !v->is_none()) collect_module(v, prefix + *name + ".", out, origin);
      }
    }
  }
}

std::vector<std::string> read_names(const PyRef& ref) {
  std::vector<std::string> names;
  if (const auto* list = ref->get_if<PyList>()) {
    for (const auto& item : *list) {
      if (const auto* s = item->get_if<std::string>()) names.push_back(*s);
    }
  } else if (const auto* dict = ref->get_if<PyDict>()) {
    std::vector<std::pair<std::int64_t, std::string>> indexed;
    for (const auto& [k, v] : *dict) {
      const auto* idx = k->get_if<std::int64_t>();
      const auto* s = v->get_if<std::string>();
      if (idx && s) indexed.emplace_back(*idx, *s);
    }
    std::sort(indexed.begin(), indexed.end());
    for (auto& [idx, s] : indexed) names.push_back(std::move(s));
  }
  return names;
}

}  // namespace

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string origin = path.string();
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorKind::WeightsNotFound, origin);
  }

  const detail::ZipArchive archive(path);
  const auto pkl = archive.find_suffix("data.pkl");
  if (!pkl) {
    throw Error(ErrorKind::LoadFailure, origin + ": archive has no data.pkl");
  }
  const std::string prefix = pkl->substr(0, pkl->size() - std::string_view("data.pkl").size());

  auto loader = [&](const detail::PyStorage& s) {
    const auto bytes = archive.read(prefix + "data/" + s.key);
    const auto elem = static_cast<std::size_t>(c10::elementSize(s.dtype));
    if (bytes.size() < static_cast<std::size_t>(s.numel) * elem) {
      throw Error(ErrorKind::LoadFailure, origin + ": storage " + s.key + " is truncated");
    }
    at::Tensor t = at::empty({s.numel}, at::TensorOptions().dtype(s.dtype));
    std::memcpy(t.data_ptr(), bytes.data(), static_cast<std::size_t>(s.numel) * elem);
    return t;
  };

  const auto pickle = archive.read(*pkl);
  detail::Unpickler unpickler(pickle, loader, origin);
  const PyRef root = unpickler.load();
  const auto* top = root->get_if<PyDict>();
  if (!top) {
    throw Error(ErrorKind::LoadFailure, origin + ": checkpoint root is not a dictionary");
  }

  Checkpoint ckpt;
  if (const PyRef* sd = detail::dict_lookup(*top, "state_dict")) {
    const PyRef* fmt = detail::dict_lookup(*top, "format");
    const auto* fmt_s = fmt ? (*fmt)->get_if<std::string>() : nullptr;
    if (!fmt_s || *fmt_s != kNativeFormat) {
      throw Error(ErrorKind::LoadFailure, origin + ": unrecognised state_dict checkpoint format");
    }
    ckpt.format = Checkpoint::Format::native;
    const auto* dict = (*sd)->get_if<PyDict>();
    if (!dict) throw Error(ErrorKind::LoadFailure, origin + ": state_dict is not a dictionary");
    for (const auto& [k, v] : *dict) {
      const auto* name = k->get_if<std::string>();
      const auto* tensor = v->get_if<at::Tensor>();
      if (name && tensor) ckpt.tensors.emplace(*name, tensor->contiguous().clone());
    }
    if (const PyRef* names = detail::dict_lookup(*top, "names")) ckpt.class_names = read_names(*names);
    return ckpt;
  }

  // Ultralytics checkpoints pickle the whole model; prefer the EMA copy.
  const PyRef* model = detail::dict_lookup(*top, "ema");
  if (!model || (*model)->is_none()) model = detail::dict_lookup(*top, "model");
  if (!model || (*model)->is_none()) {
    throw Error(ErrorKind::LoadFailure, origin + ": checkpoint holds neither 'state_dict' nor 'model'");
  }
  ckpt.format = Checkpoint::Format::ultralytics;
  collect_module(*model, "", ckpt.tensors, origin);
  if (const auto* inst = (*model)->get_if<PyInstance>(); inst && inst->state) {
    if (const auto* state = inst->state->get_if<PyDict>()) {
      if (const PyRef* names = detail::dict_lookup(*state, "names")) ckpt.class_names = read_names(*names);
    }
  }
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  c10::impl::GenericDict state(c10::StringType::get(), c10::TensorType::get());
  for (const auto& [name, tensor] : ckpt.tensors) {
    state.insert(name, tensor.detach().contiguous());
  }
  c10::List<std::string> names;
  for (const auto& n : ckpt.class_names) names.push_back(n);

  c10::impl::GenericDict root(c10::StringType::get(), c10::AnyType::get());
  root.insert("format", std::string(kNativeFormat));
  root.insert("version", static_cast<std::int64_t>(1));
  root.insert("names", names);
  root.insert("state_dict", state);

  const std::vector<char> bytes = torch::jit::pickle_save(root);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorKind::IoError, "short write to " + path.string());
  }
}

}  // namespace ostk
