#include "unpickler.hpp"

#include <cstring>
#include <unordered_map>

#include "ostk/error.hpp"

namespace ostk::detail {
namespace {

namespace op {
constexpr std::uint8_t MARK = '(';
constexpr std::uint8_t STOP = '.';
constexpr std::uint8_t POP = '0';
constexpr std::uint8_t POP_MARK = '1';
constexpr std::uint8_t DUP = '2';
constexpr std::uint8_t FLOAT = 'F';
constexpr std::uint8_t INT = 'I';
constexpr std::uint8_t BININT = 'J';
constexpr std::uint8_t BININT1 = 'K';
constexpr std::uint8_t LONG = 'L';
constexpr std::uint8_t BININT2 = 'M';
constexpr std::uint8_t NONE = 'N';
constexpr std::uint8_t PERSID = 'P';
constexpr std::uint8_t BINPERSID = 'Q';
constexpr std::uint8_t REDUCE = 'R';
constexpr std::uint8_t STRING = 'S';
constexpr std::uint8_t BINSTRING = 'T';
constexpr std::uint8_t SHORT_BINSTRING = 'U';
constexpr std::uint8_t UNICODE = 'V';
constexpr std::uint8_t BINUNICODE = 'X';
constexpr std::uint8_t APPEND = 'a';
constexpr std::uint8_t BUILD = 'b';
constexpr std::uint8_t GLOBAL = 'c';
constexpr std::uint8_t DICT = 'd';
constexpr std::uint8_t EMPTY_DICT = '}';
constexpr std::uint8_t APPENDS = 'e';
constexpr std::uint8_t GET = 'g';
constexpr std::uint8_t BINGET = 'h';
constexpr std::uint8_t LONG_BINGET = 'j';
constexpr std::uint8_t LIST = 'l';
constexpr std::uint8_t EMPTY_LIST = ']';
constexpr std::uint8_t PUT = 'p';
constexpr std::uint8_t BINPUT = 'q';
constexpr std::uint8_t LONG_BINPUT = 'r';
constexpr std::uint8_t SETITEM = 's';
constexpr std::uint8_t TUPLE = 't';
constexpr std::uint8_t EMPTY_TUPLE = ')';
constexpr std::uint8_t SETITEMS = 'u';
constexpr std::uint8_t BINFLOAT = 'G';
constexpr std::uint8_t PROTO = 0x80;
constexpr std::uint8_t NEWOBJ = 0x81;
constexpr std::uint8_t TUPLE1 = 0x85;
constexpr std::uint8_t TUPLE2 = 0x86;
constexpr std::uint8_t TUPLE3 = 0x87;
constexpr std::uint8_t NEWTRUE = 0x88;
constexpr std::uint8_t NEWFALSE = 0x89;
constexpr std::uint8_t LONG1 = 0x8a;
constexpr std::uint8_t LONG4 = 0x8b;
constexpr std::uint8_t BINBYTES = 'B';
constexpr std::uint8_t SHORT_BINBYTES = 'C';
constexpr std::uint8_t SHORT_BINUNICODE = 0x8c;
constexpr std::uint8_t BINUNICODE8 = 0x8d;
constexpr std::uint8_t BINBYTES8 = 0x8e;
constexpr std::uint8_t EMPTY_SET = 0x8f;
constexpr std::uint8_t ADDITEMS = 0x90;
constexpr std::uint8_t FROZENSET = 0x91;
constexpr std::uint8_t NEWOBJ_EX = 0x92;
constexpr std::uint8_t STACK_GLOBAL = 0x93;
constexpr std::uint8_t MEMOIZE = 0x94;
constexpr std::uint8_t FRAME = 0x95;
constexpr std::uint8_t BYTEARRAY8 = 0x96;
}  // namespace op

const std::unordered_map<std::string, at::ScalarType>& storage_dtypes() {
  static const std::unordered_map<std::string, at::ScalarType> table = {
      {"FloatStorage", at::kFloat},   {"DoubleStorage", at::kDouble}, {"HalfStorage", at::kHalf},
      {"BFloat16Storage", at::kBFloat16}, {"LongStorage", at::kLong},  {"IntStorage", at::kInt},
      {"ShortStorage", at::kShort},   {"CharStorage", at::kChar},     {"ByteStorage", at::kByte},
      {"BoolStorage", at::kBool},     {"UntypedStorage", at::kByte},
  };
  return table;
}

bool is_global(const PyRef& ref, std::string_view module, std::string_view name) {
  const auto* g = ref ? ref->get_if<PyGlobal>() : nullptr;
  return g && g->module == module && g->name == name;
}

std::vector<std::int64_t> int_tuple(const PyRef& ref, const std::string& origin) {
  const auto* t = ref ? ref->get_if<PyTuple>() : nullptr;
  if (!t) throw Error(ErrorKind::LoadFailure, origin + ": expected an integer tuple");
  std::vector<std::int64_t> out;
  out.reserve(t->items.size());
  for (const auto& item : t->items) {
    const auto* v = item->get_if<std::int64_t>();
    if (!v) throw Error(ErrorKind::LoadFailure, origin + ": expected an integer tuple");
    out.push_back(*v);
  }
  return out;
}

}  // namespace

const PyRef* dict_lookup(const PyDict& dict, std::string_view key) {
  for (const auto& [k, v] : dict) {
    if (const auto* s = k->get_if<std::string>(); s && *s == key) return &v;
  }
  return nullptr;
}

Unpickler::Unpickler(std::span<const std::uint8_t> data, StorageLoader loader, std::string origin)
    : data_(data), loader_(std::move(loader)), origin_(std::move(origin)) {}

void Unpickler::fail(const std::string& what) const {
  throw Error(ErrorKind::LoadFailure, origin_ + ": " + what + " (pickle offset " + std::to_string(pos_) + ")");
}

std::uint8_t Unpickler::byte() {
  if (pos_ >= data_.size()) fail("unexpected end of pickle stream");
  return data_[pos_++];
}

template <typename T>
T Unpickler::read_le() {
  if (pos_ + sizeof(T) > data_.size()) fail("unexpected end of pickle stream");
  T v;
  std::memcpy(&v, data_.data() + pos_, sizeof(T));  // x86/ARM little-endian
  pos_ += sizeof(T);
  return v;
}

std::string Unpickler::read_bytes(std::size_t n) {
  if (pos_ + n > data_.size()) fail("unexpected end of pickle stream");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::string Unpickler::read_line() {
  std::string s;
  for (std::uint8_t c = byte(); c != '\n'; c = byte()) s.push_back(static_cast<char>(c));
  return s;
}

PyRef Unpickler::pop() {
  if (stack_.empty() || (!marks_.empty() && stack_.size() <= marks_.back())) fail("stack underflow");
  PyRef v = std::move(stack_.back());
  stack_.pop_back();
  return v;
}

PyRef& Unpickler::top() {
  if (stack_.empty()) fail("stack underflow");
  return stack_.back();
}

std::vector<PyRef> Unpickler::pop_mark() {
  if (marks_.empty()) fail("MARK expected");
  const std::size_t m = marks_.back();
  marks_.pop_back();
  std::vector<PyRef> items(std::make_move_iterator(stack_.begin() + static_cast<std::ptrdiff_t>(m)),
                           std::make_move_iterator(stack_.end()));
  stack_.resize(m);
  return items;
}

at::Tensor Unpickler::rebuild_tensor(const std::vector<PyRef>& args) {
  if (args.size() < 4) fail("malformed tensor record");
  const auto* storage = args[0]->get_if<at::Tensor>();
  const auto* offset = args[1]->get_if<std::int64_t>();
  if (!storage || !offset) fail("malformed tensor record");
  const auto sizes = int_tuple(args[2], origin_);
  const auto strides = int_tuple(args[3], origin_);
  if (sizes.size() != strides.size()) fail("tensor size/stride rank mismatch");
  std::int64_t extent = *offset;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 0 || strides[i] < 0) fail("negative tensor size or stride");
    if (sizes[i] > 0) extent += (sizes[i] - 1) * strides[i];
  }
  if (!sizes.empty() && extent >= storage->numel() && storage->numel() > 0) fail("tensor view exceeds its storage");
  return storage->as_strided(sizes, strides, *offset);
}

PyRef Unpickler::persistent(const PyRef& pid) {
  const auto* t = pid->get_if<PyTuple>();
  if (!t || t->items.size() < 5) fail("unsupported persistent id");
  const auto* kind = t->items[0]->get_if<std::string>();
  const auto* type = t->items[1]->get_if<PyGlobal>();
  const auto* key = t->items[2]->get_if<std::string>();
  const auto* numel = t->items[4]->get_if<std::int64_t>();
  if (!kind || *kind != "storage" || !type || !key || !numel) fail("unsupported persistent id");
  const auto it = storage_dtypes().find(type->name);
  if (it == storage_dtypes().end()) fail("unsupported storage type " + type->name);

  for (const auto& [k, tensor] : storages_) {
    if (k == *key) return make(tensor);
  }
  at::Tensor tensor = loader_(PyStorage{it->second, *key, *numel});
  storages_.emplace_back(*key, tensor);
  return make(tensor);
}

PyRef Unpickler::reduce(const PyRef& callable, std::vector<PyRef> args) {
  if (is_global(callable, "torch._utils", "_rebuild_tensor_v2") ||
      is_global(callable, "torch._utils", "_rebuild_tensor")) {
    return make(rebuild_tensor(args));
  }
  if (is_global(callable, "torch._utils", "_rebuild_parameter") ||
      is_global(callable, "torch._utils", "_rebuild_parameter_with_state") ||
      is_global(callable, "torch.jit._pickle", "restore_type_tag")) {
    if (args.empty()) fail("malformed rebuild call");
    return args[0];
  }
  if (is_global(callable, "collections", "OrderedDict")) {
    PyDict dict;
    if (!args.empty()) {
      if (const auto* items = args[0]->get_if<PyList>()) {
        for (const auto& pair : *items) {
          const auto* kv = pair->get_if<PyTuple>();
          if (kv && kv->items.size() == 2) dict.emplace_back(kv->items[0], kv->items[1]);
        }
      }
    }
    return make(std::move(dict));
  }
  if (is_global(callable, "builtins", "set") || is_global(callable, "__builtin__", "set") ||
      is_global(callable, "builtins", "frozenset")) {
    if (!args.empty()) {
      if (const auto* items = args[0]->get_if<PyList>()) return make(PyList(*items));
    }
    return make(PyList{});
  }
  if (is_global(callable, "copyreg", "_reconstructor") && !args.empty()) {
    return make(PyInstance{args[0], {}, nullptr});
  }
  return make(PyInstance{callable, std::move(args), nullptr});
}

PyRef Unpickler::load() {
  for (;;) {
    const std::uint8_t code = byte();
    switch (code) {
      case op::PROTO:
        byte();
        break;
      case op::FRAME:
        read_le<std::uint64_t>();
        break;
      case op::STOP:
        return pop();
      case op::MARK:
        marks_.push_back(stack_.size());
        break;
      case op::POP:
        pop();
        break;
      case op::POP_MARK:
        pop_mark();
        break;
      case op::DUP:
        stack_.push_back(top());
        break;

      case op::NONE:
        stack_.push_back(make(PyNone{}));
        break;
      case op::NEWTRUE:
        stack_.push_back(make(true));
        break;
      case op::NEWFALSE:
        stack_.push_back(make(false));
        break;
      case op::BININT:
        stack_.push_back(make(static_cast<std::int64_t>(read_le<std::int32_t>())));
        break;
      case op::BININT1:
        stack_.push_back(make(static_cast<std::int64_t>(byte())));
        break;
      case op::BININT2:
        stack_.push_back(make(static_cast<std::int64_t>(read_le<std::uint16_t>())));
        break;
      case op::LONG1:
      case op::LONG4: {
        const std::size_t n = code == op::LONG1 ? byte() : read_le<std::uint32_t>();
        if (n > 8) fail("integer too large");
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        if (n > 0 && n < 8 && (v >> (8 * n - 1)) & 1u) v |= ~std::uint64_t{0} << (8 * n);  // sign-extend
        stack_.push_back(make(static_cast<std::int64_t>(v)));
        break;
      }
      case op::INT:
      case op::LONG: {
        std::string s = read_line();
        if (!s.empty() && s.back() == 'L') s.pop_back();
        if (s == "01") {
          stack_.push_back(make(true));
        } else if (s == "00") {
          stack_.push_back(make(false));
        } else {
          stack_.push_back(make(static_cast<std::int64_t>(std::stoll(s))));
        }
        break;
      }
      case op::BINFLOAT: {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits = (bits << 8) | byte();  // big-endian
        double d;
        std::memcpy(&d, &bits, sizeof d);
        stack_.push_back(make(d));
        break;
      }
      case op::FLOAT:
        stack_.push_back(make(std::stod(read_line())));
        break;

      case op::BINUNICODE:
      case op::BINSTRING:
        stack_.push_back(make(read_bytes(read_le<std::uint32_t>())));
        break;
      case op::SHORT_BINUNICODE:
      case op::SHORT_BINSTRING:
        stack_.push_back(make(read_bytes(byte())));
        break;
      case op::BINUNICODE8:
        stack_.push_back(make(read_bytes(read_le<std::uint64_t>())));
        break;
      case op::STRING:
      case op::UNICODE: {
        std::string s = read_line();
        if (code == op::STRING && s.size() >= 2) s = s.substr(1, s.size() - 2);
        stack_.push_back(make(std::move(s)));
        break;
      }
      case op::BINBYTES:
      case op::SHORT_BINBYTES:
      case op::BINBYTES8:
      case op::BYTEARRAY8: {
        std::size_t n = 0;
        if (code == op::SHORT_BINBYTES) {
          n = byte();
        } else if (code == op::BINBYTES) {
          n = read_le<std::uint32_t>();
        } else {
          n = read_le<std::uint64_t>();
        }
        const std::string raw = read_bytes(n);
        stack_.push_back(make(PyBytes(raw.begin(), raw.end())));
        break;
      }

      case op::EMPTY_LIST:
        stack_.push_back(make(PyList{}));
        break;
      case op::LIST:
        stack_.push_back(make(PyList(pop_mark())));
        break;
      case op::APPEND: {
        PyRef v = pop();
        auto* list = top()->get_if<PyList>();
        if (!list) fail("APPEND on non-list");
        list->push_back(std::move(v));
        break;
      }
      case op::APPENDS: {
        auto items = pop_mark();
        auto* list = top()->get_if<PyList>();
        if (!list) fail("APPENDS on non-list");
        list->insert(list->end(), items.begin(), items.end());
        break;
      }
      case op::EMPTY_SET:
        stack_.push_back(make(PyList{}));
        break;
      case op::ADDITEMS: {
        auto items = pop_mark();
        auto* list = top()->get_if<PyList>();
        if (!list) fail("ADDITEMS on non-set");
        list->insert(list->end(), items.begin(), items.end());
        break;
      }
      case op::FROZENSET:
        stack_.push_back(make(PyList(pop_mark())));
        break;

      case op::EMPTY_TUPLE:
        stack_.push_back(make(PyTuple{}));
        break;
      case op::TUPLE:
        stack_.push_back(make(PyTuple{pop_mark()}));
        break;
      case op::TUPLE1:
      case op::TUPLE2:
      case op::TUPLE3: {
        const std::size_t n = code - op::TUPLE1 + 1;
        if (stack_.size() < n) fail("stack underflow");
        PyTuple t;
        t.items.assign(stack_.end() - static_cast<std::ptrdiff_t>(n), stack_.end());
        stack_.resize(stack_.size() - n);
        stack_.push_back(make(std::move(t)));
        break;
      }

      case op::EMPTY_DICT:
        stack_.push_back(make(PyDict{}));
        break;
      case op::DICT: {
        auto items = pop_mark();
        if (items.size() % 2) fail("odd DICT item count");
        PyDict dict;
        for (std::size_t i = 0; i < items.size(); i += 2) dict.emplace_back(items[i], items[i + 1]);
        stack_.push_back(make(std::move(dict)));
        break;
      }
      case op::SETITEM: {
        PyRef v = pop();
        PyRef k = pop();
        auto* dict = top()->get_if<PyDict>();
        if (!dict) fail("SETITEM on non-dict");
        dict->emplace_back(std::move(k), std::move(v));
        break;
      }
      case op::SETITEMS: {
        auto items = pop_mark();
        if (items.size() % 2) fail("odd SETITEMS item count");
        auto* dict = top()->get_if<PyDict>();
        if (!dict) fail("SETITEMS on non-dict");
        for (std::size_t i = 0; i < items.size(); i += 2) dict->emplace_back(items[i], items[i + 1]);
        break;
      }

      case op::GLOBAL: {
        std::string module = read_line();
        std::string name = read_line();
        stack_.push_back(make(PyGlobal{std::move(module), std::move(name)}));
        break;
      }
      case op::STACK_GLOBAL: {
        PyRef name = pop();
        PyRef module = pop();
        const auto* n = name->get_if<std::string>();
        const auto* m = module->get_if<std::string>();
        if (!n || !m) fail("STACK_GLOBAL expects strings");
        stack_.push_back(make(PyGlobal{*m, *n}));
        break;
      }
      case op::REDUCE: {
        PyRef args = pop();
        PyRef callable = pop();
        const auto* t = args->get_if<PyTuple>();
        if (!t) fail("REDUCE expects an argument tuple");
        stack_.push_back(reduce(callable, t->items));
        break;
      }
      case op::NEWOBJ: {
        PyRef args = pop();
        PyRef cls = pop();
        const auto* t = args->get_if<PyTuple>();
        stack_.push_back(make(PyInstance{cls, t ? t->items : std::vector<PyRef>{}, nullptr}));
        break;
      }
      case op::NEWOBJ_EX: {
        pop();  // kwargs
        PyRef args = pop();
        PyRef cls = pop();
        const auto* t = args->get_if<PyTuple>();
        stack_.push_back(make(PyInstance{cls, t ? t->items : std::vector<PyRef>{}, nullptr}));
        break;
      }
      case op::BUILD: {
        PyRef state = pop();
        if (auto* inst = top()->get_if<PyInstance>()) {
          // (dict, slotstate) pairs come from classes with __slots__.
          if (const auto* t = state->get_if<PyTuple>(); t && t->items.size() == 2 && t->items[0]->get_if<PyDict>()) {
            inst->state = t->items[0];
          } else {
            inst->state = std::move(state);
          }
        }
        break;
      }
      case op::BINPERSID:
        stack_.push_back(persistent(pop()));
        break;
      case op::PERSID:
        fail("text persistent ids are not supported");

      case op::BINPUT:
      case op::LONG_BINPUT:
      case op::PUT:
      case op::MEMOIZE: {
        std::size_t idx = 0;
        if (code == op::BINPUT) {
          idx = byte();
        } else if (code == op::LONG_BINPUT) {
          idx = read_le<std::uint32_t>();
        } else if (code == op::PUT) {
          idx = std::stoul(read_line());
        } else {
          idx = memo_.size();
        }
        if (idx >= memo_.size()) memo_.resize(idx + 1);
        memo_[idx] = top();
        break;
      }
      case op::BINGET:
      case op::LONG_BINGET:
      case op::GET: {
        std::size_t idx = 0;
        if (code == op::BINGET) {
          idx = byte();
        } else if (code == op::LONG_BINGET) {
          idx = read_le<std::uint32_t>();
        } else {
          idx = std::stoul(read_line());
        }
        if (idx >= memo_.size() || !memo_[idx]) fail("memo miss");
        stack_.push_back(memo_[idx]);
        break;
      }

      default:
        fail("unsupported pickle opcode 0x" + [&] {
          static constexpr char kHex[] = "0123456789abcdef";
          return std::string{kHex[code >> 4], kHex[code & 15]};
        }());
    }
  }
}

}  // namespace ostk::detail
