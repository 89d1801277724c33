#pragma once
// Runtime values for the embedded Python-subset interpreter.
//
// Containers are reference types (shared_ptr) like their Python
// counterparts; scalars are held by value.

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace codetool::minipy {

struct Value;
struct List;
struct Dict;
struct Tuple;
struct Callable;
struct Module;
struct ExcValue;

struct NoneType {
    bool operator==(const NoneType&) const = default;
};

using ListPtr = std::shared_ptr<List>;
using DictPtr = std::shared_ptr<Dict>;
using TuplePtr = std::shared_ptr<Tuple>;
using CallablePtr = std::shared_ptr<Callable>;
using ModulePtr = std::shared_ptr<Module>;
using ExcPtr = std::shared_ptr<ExcValue>;

struct Value {
    std::variant<NoneType, bool, std::int64_t, double, std::string, ListPtr, DictPtr, TuplePtr, CallablePtr, ModulePtr,
                 ExcPtr>
        v;

    Value() = default;
    Value(NoneType n) : v(n) {}
    Value(bool b) : v(b) {}
    Value(int i) : v(static_cast<std::int64_t>(i)) {}
    Value(std::int64_t i) : v(i) {}
    Value(double d) : v(d) {}
    Value(std::string s) : v(std::move(s)) {}
    Value(const char* s) : v(std::string(s)) {}
    Value(ListPtr p) : v(std::move(p)) {}
    Value(DictPtr p) : v(std::move(p)) {}
    Value(TuplePtr p) : v(std::move(p)) {}
    Value(CallablePtr p) : v(std::move(p)) {}
    Value(ModulePtr p) : v(std::move(p)) {}
    Value(ExcPtr p) : v(std::move(p)) {}

    template <class T>
    bool is() const {
        return std::holds_alternative<T>(v);
    }
    template <class T>
    const T& as() const {
        return std::get<T>(v);
    }
    template <class T>
    T& as() {
        return std::get<T>(v);
    }
    bool is_none() const { return is<NoneType>(); }
    bool is_numeric() const { return is<bool>() || is<std::int64_t>() || is<double>(); }
};

struct List {
    std::vector<Value> items;
};

struct Tuple {
    std::vector<Value> items;
};

// Python-level exception raised inside sandboxed code.
struct PyError {
    std::string type;
    std::string message;
    int line = 0;
};

// Insertion-ordered dict with a hash index over a normalized key string.
struct Dict {
    std::vector<std::pair<Value, Value>> items;
    std::unordered_map<std::string, std::size_t> index;

    static std::string key_of(const Value& k);

    const Value* find(const Value& k) const {
        auto it = index.find(key_of(k));
        return it == index.end() ? nullptr : &items[it->second].second;
    }
    Value* find(const Value& k) {
        auto it = index.find(key_of(k));
        return it == index.end() ? nullptr : &items[it->second].second;
    }
    void set(const Value& k, Value val) {
        auto key = key_of(k);
        auto it = index.find(key);
        if (it != index.end()) {
            items[it->second].second = std::move(val);
            return;
        }
        index.emplace(std::move(key), items.size());
        items.emplace_back(k, std::move(val));
    }
    bool erase(const Value& k) {
        auto it = index.find(key_of(k));
        if (it == index.end()) return false;
        items.erase(items.begin() + static_cast<std::ptrdiff_t>(it->second));
        reindex();
        return true;
    }
    void reindex() {
        index.clear();
        for (std::size_t i = 0; i < items.size(); ++i) index.emplace(key_of(items[i].first), i);
    }
};

struct Module {
    std::string name;
    std::unordered_map<std::string, Value> attrs;
};

struct ExcValue {
    std::string type;
    std::string message;
};

class Interpreter;

struct CallArgs {
    std::vector<Value> positional;
    std::vector<std::pair<std::string, Value>> keywords;
};

struct Callable {
    virtual ~Callable() = default;
    virtual std::string name() const = 0;
    virtual std::string type_name() const { return "builtin_function_or_method"; }
    virtual Value call(Interpreter& in, CallArgs args) = 0;
};

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

inline std::string type_name(const Value& v) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, NoneType>) return "NoneType";
            else if constexpr (std::is_same_v<T, bool>) return "bool";
            else if constexpr (std::is_same_v<T, std::int64_t>) return "int";
            else if constexpr (std::is_same_v<T, double>) return "float";
            else if constexpr (std::is_same_v<T, std::string>) return "str";
            else if constexpr (std::is_same_v<T, ListPtr>) return "list";
            else if constexpr (std::is_same_v<T, DictPtr>) return "dict";
            else if constexpr (std::is_same_v<T, TuplePtr>) return "tuple";
            else if constexpr (std::is_same_v<T, CallablePtr>) return x->type_name();
            else if constexpr (std::is_same_v<T, ModulePtr>) return "module";
            else return x->type;
        },
        v.v);
}

// Python float repr: shortest round-trip digits, fixed notation for
// exponents in [-4, 16), scientific otherwise.
inline std::string float_repr(double d) {
    if (std::isnan(d)) return "nan";
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), d, std::chars_format::scientific);
    std::string sci(buf, res.ptr);
    bool neg = false;
    if (!sci.empty() && sci[0] == '-') {
        neg = true;
        sci.erase(0, 1);
    }
    auto epos = sci.find('e');
    std::string mant = sci.substr(0, epos);
    int exp = std::stoi(sci.substr(epos + 1));
    std::string digits;
    for (char c : mant)
        if (c != '.') digits.push_back(c);
    while (digits.size() > 1 && digits.back() == '0') digits.pop_back();
    std::string out;
    if (exp >= -4 && exp < 16) {
        if (exp >= 0) {
            if (static_cast<int>(digits.size()) <= exp + 1) {
                out = digits + std::string(static_cast<std::size_t>(exp + 1 - static_cast<int>(digits.size())), '0') + ".0";
            } else {
                out = digits.substr(0, static_cast<std::size_t>(exp + 1)) + "." + digits.substr(static_cast<std::size_t>(exp + 1));
            }
        } else {
            out = "0." + std::string(static_cast<std::size_t>(-exp - 1), '0') + digits;
        }
    } else {
        out = digits.substr(0, 1);
        if (digits.size() > 1) out += "." + digits.substr(1);
        char ebuf[16];
        std::snprintf(ebuf, sizeof(ebuf), "e%c%02d", exp < 0 ? '-' : '+', exp < 0 ? -exp : exp);
        out += ebuf;
    }
    return neg ? "-" + out : out;
}

inline std::string string_repr(const std::string& s) {
    bool has_single = s.find('\'') != std::string::npos;
    bool has_double = s.find('"') != std::string::npos;
    char q = (has_single && !has_double) ? '"' : '\'';
    std::string out(1, q);
    for (unsigned char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (c == static_cast<unsigned char>(q)) {
                    out += '\\';
                    out += static_cast<char>(c);
                } else if (c < 0x20 || c == 0x7f) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\x%02x", c);
                    out += buf;
                } else {
                    out += static_cast<char>(c);
                }
        }
    }
    out += q;
    return out;
}

inline std::string repr(const Value& v);

inline std::string to_str(const Value& v) {
    if (v.is<std::string>()) return v.as<std::string>();
    if (v.is<ExcPtr>()) return v.as<ExcPtr>()->message;
    return repr(v);
}

inline std::string repr(const Value& v) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, NoneType>) return "None";
            else if constexpr (std::is_same_v<T, bool>) return x ? "True" : "False";
            else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(x);
            else if constexpr (std::is_same_v<T, double>) return float_repr(x);
            else if constexpr (std::is_same_v<T, std::string>) return string_repr(x);
            else if constexpr (std::is_same_v<T, ListPtr>) {
                std::string out = "[";
                for (std::size_t i = 0; i < x->items.size(); ++i) {
                    if (i) out += ", ";
                    out += repr(x->items[i]);
                }
                return out + "]";
            } else if constexpr (std::is_same_v<T, TuplePtr>) {
                std::string out = "(";
                for (std::size_t i = 0; i < x->items.size(); ++i) {
                    if (i) out += ", ";
                    out += repr(x->items[i]);
                }
                if (x->items.size() == 1) out += ",";
                return out + ")";
            } else if constexpr (std::is_same_v<T, DictPtr>) {
                std::string out = "{";
                bool first = true;
                for (const auto& [k, val] : x->items) {
                    if (!first) out += ", ";
                    first = false;
                    out += repr(k) + ": " + repr(val);
                }
                return out + "}";
            } else if constexpr (std::is_same_v<T, CallablePtr>) {
                return "<" + x->type_name() + " " + x->name() + ">";
            } else if constexpr (std::is_same_v<T, ModulePtr>) {
                return "<module '" + x->name + "'>";
            } else {
                return x->type + "(" + string_repr(x->message) + ")";
            }
        },
        v.v);
}

inline std::string Dict::key_of(const Value& k) {
    if (k.is<bool>()) return "n:" + std::to_string(k.as<bool>() ? 1 : 0);
    if (k.is<std::int64_t>()) return "n:" + std::to_string(k.as<std::int64_t>());
    if (k.is<double>()) {
        double d = k.as<double>();
        if (std::floor(d) == d && std::fabs(d) < 9.2e18) return "n:" + std::to_string(static_cast<std::int64_t>(d));
        return "f:" + float_repr(d);
    }
    if (k.is<std::string>()) return "s:" + k.as<std::string>();
    if (k.is_none()) return "none";
    if (k.is<TuplePtr>()) {
        std::string out = "t:(";
        for (const auto& item : k.as<TuplePtr>()->items) out += key_of(item) + ",";
        return out + ")";
    }
    throw PyError{"TypeError", "unhashable type: '" + type_name(k) + "'"};
}

inline bool truthy(const Value& v) {
    return std::visit(
        [](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, NoneType>) return false;
            else if constexpr (std::is_same_v<T, bool>) return x;
            else if constexpr (std::is_same_v<T, std::int64_t>) return x != 0;
            else if constexpr (std::is_same_v<T, double>) return x != 0.0;
            else if constexpr (std::is_same_v<T, std::string>) return !x.empty();
            else if constexpr (std::is_same_v<T, ListPtr>) return !x->items.empty();
            else if constexpr (std::is_same_v<T, TuplePtr>) return !x->items.empty();
            else if constexpr (std::is_same_v<T, DictPtr>) return !x->items.empty();
            else return true;
        },
        v.v);
}

inline double as_double(const Value& v) {
    if (v.is<bool>()) return v.as<bool>() ? 1.0 : 0.0;
    if (v.is<std::int64_t>()) return static_cast<double>(v.as<std::int64_t>());
    return v.as<double>();
}

inline std::int64_t as_int(const Value& v) {
    if (v.is<bool>()) return v.as<bool>() ? 1 : 0;
    return v.as<std::int64_t>();
}

inline bool values_equal(const Value& a, const Value& b) {
    if (a.is_numeric() && b.is_numeric()) {
        if (a.is<double>() || b.is<double>()) return as_double(a) == as_double(b);
        return as_int(a) == as_int(b);
    }
    if (a.v.index() != b.v.index()) return false;
    if (a.is_none()) return true;
    if (a.is<std::string>()) return a.as<std::string>() == b.as<std::string>();
    auto seq_eq = [](const std::vector<Value>& x, const std::vector<Value>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!values_equal(x[i], y[i])) return false;
        return true;
    };
    if (a.is<ListPtr>()) return seq_eq(a.as<ListPtr>()->items, b.as<ListPtr>()->items);
    if (a.is<TuplePtr>()) return seq_eq(a.as<TuplePtr>()->items, b.as<TuplePtr>()->items);
    if (a.is<DictPtr>()) {
        const auto& da = *a.as<DictPtr>();
        const auto& db = *b.as<DictPtr>();
        if (da.items.size() != db.items.size()) return false;
        for (const auto& [k, v] : da.items) {
            const Value* other = db.find(k);
            if (!other || !values_equal(v, *other)) return false;
        }
        return true;
    }
    if (a.is<CallablePtr>()) return a.as<CallablePtr>() == b.as<CallablePtr>();
    if (a.is<ModulePtr>()) return a.as<ModulePtr>() == b.as<ModulePtr>();
    return a.as<ExcPtr>() == b.as<ExcPtr>();
}

// -1, 0, 1; throws TypeError for unorderable operands.
inline int compare_values(const Value& a, const Value& b) {
    if (a.is_numeric() && b.is_numeric()) {
        if (a.is<double>() || b.is<double>()) {
            double x = as_double(a), y = as_double(b);
            return x < y ? -1 : (x > y ? 1 : 0);
        }
        auto x = as_int(a), y = as_int(b);
        return x < y ? -1 : (x > y ? 1 : 0);
    }
    if (a.is<std::string>() && b.is<std::string>()) {
        int c = a.as<std::string>().compare(b.as<std::string>());
        return c < 0 ? -1 : (c > 0 ? 1 : 0);
    }
    auto seq_cmp = [](const std::vector<Value>& x, const std::vector<Value>& y) {
        for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
            int c = compare_values(x[i], y[i]);
            if (c) return c;
        }
        return x.size() < y.size() ? -1 : (x.size() > y.size() ? 1 : 0);
    };
    if (a.is<ListPtr>() && b.is<ListPtr>()) return seq_cmp(a.as<ListPtr>()->items, b.as<ListPtr>()->items);
    if (a.is<TuplePtr>() && b.is<TuplePtr>()) return seq_cmp(a.as<TuplePtr>()->items, b.as<TuplePtr>()->items);
    throw PyError{"TypeError", "'<' not supported between instances of '" + type_name(a) + "' and '" + type_name(b) + "'"};
}

inline Value make_list(std::vector<Value> items = {}) {
    auto l = std::make_shared<List>();
    l->items = std::move(items);
    return Value(l);
}

inline Value make_tuple(std::vector<Value> items) {
    auto t = std::make_shared<Tuple>();
    t->items = std::move(items);
    return Value(t);
}

inline Value make_dict() { return Value(std::make_shared<Dict>()); }

// ---------------------------------------------------------------------------
// JSON bridge
// ---------------------------------------------------------------------------

template <class J>
Value from_json_value(const J& j) {
    switch (j.type()) {
        case nlohmann::json::value_t::null: return NoneType{};
        case nlohmann::json::value_t::boolean: return j.template get<bool>();
        case nlohmann::json::value_t::number_integer: return j.template get<std::int64_t>();
        case nlohmann::json::value_t::number_unsigned: return static_cast<std::int64_t>(j.template get<std::uint64_t>());
        case nlohmann::json::value_t::number_float: return j.template get<double>();
        case nlohmann::json::value_t::string: return j.template get<std::string>();
        case nlohmann::json::value_t::array: {
            std::vector<Value> items;
            items.reserve(j.size());
            for (const auto& e : j) items.push_back(from_json_value(e));
            return make_list(std::move(items));
        }
        case nlohmann::json::value_t::object: {
            auto d = std::make_shared<Dict>();
            for (auto it = j.begin(); it != j.end(); ++it) d->set(Value(it.key()), from_json_value(it.value()));
            return Value(d);
        }
        default: return NoneType{};
    }
}

inline nlohmann::ordered_json to_json_value(const Value& v) {
    using oj = nlohmann::ordered_json;
    if (v.is_none()) return nullptr;
    if (v.is<bool>()) return v.as<bool>();
    if (v.is<std::int64_t>()) return v.as<std::int64_t>();
    if (v.is<double>()) return v.as<double>();
    if (v.is<std::string>()) return v.as<std::string>();
    if (v.is<ListPtr>() || v.is<TuplePtr>()) {
        const auto& items = v.is<ListPtr>() ? v.as<ListPtr>()->items : v.as<TuplePtr>()->items;
        oj arr = oj::array();
        for (const auto& e : items) arr.push_back(to_json_value(e));
        return arr;
    }
    if (v.is<DictPtr>()) {
        oj obj = oj::object();
        for (const auto& [k, val] : v.as<DictPtr>()->items) {
            if (!k.is<std::string>()) {
                obj[to_str(k)] = to_json_value(val);
            } else {
                obj[k.as<std::string>()] = to_json_value(val);
            }
        }
        return obj;
    }
    throw PyError{"TypeError", "Object of type " + type_name(v) + " is not JSON serializable"};
}

// json.dumps with Python's default separators (", " and ": ").
inline std::string python_json_dumps(const Value& v) {
    if (v.is_none()) return "null";
    if (v.is<bool>()) return v.as<bool>() ? "true" : "false";
    if (v.is<std::int64_t>()) return std::to_string(v.as<std::int64_t>());
    if (v.is<double>()) {
        double d = v.as<double>();
        if (std::isnan(d)) return "NaN";
        if (std::isinf(d)) return d > 0 ? "Infinity" : "-Infinity";
        return float_repr(d);
    }
    if (v.is<std::string>()) return nlohmann::json(v.as<std::string>()).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    if (v.is<ListPtr>() || v.is<TuplePtr>()) {
        const auto& items = v.is<ListPtr>() ? v.as<ListPtr>()->items : v.as<TuplePtr>()->items;
        std::string out = "[";
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i) out += ", ";
            out += python_json_dumps(items[i]);
        }
        return out + "]";
    }
    if (v.is<DictPtr>()) {
        std::string out = "{";
        bool first = true;
        for (const auto& [k, val] : v.as<DictPtr>()->items) {
            if (!first) out += ", ";
            first = false;
            out += python_json_dumps(Value(to_str(k))) + ": " + python_json_dumps(val);
        }
        return out + "}";
    }
    throw PyError{"TypeError", "Object of type " + type_name(v) + " is not JSON serializable"};
}

}  // namespace codetool::minipy
