#pragma once
// Tree-walking evaluator for the Python subset. One Interpreter instance is
// one persistent session namespace: globals survive across run() calls, and
// statements that completed before an uncaught error keep their effects.
//
// Time is virtual: every evaluation step costs one op and ops_per_ms ops make
// a millisecond; sleep() advances the clock directly. Timeouts and reported
// wall times are therefore reproducible run to run. A real-time guard fires as
// well if evaluation is slower than the virtual clock assumes.

#include "parser.hpp"
#include "value.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace codetool::minipy {

// Called by the sandbox-side call_tool() helper. Throwing any std::exception
// surfaces in sandbox code as a catchable ToolError with the exception text.
using ToolCaller =
    std::function<nlohmann::ordered_json(const std::string& tool, const nlohmann::ordered_json& params)>;

struct RunResult {
    enum class Status { Ok, Error, Timeout };
    Status status = Status::Ok;
    std::string out;
    std::string err;
    std::int64_t elapsed_ms = 0;
};

struct Builtin : Callable {
    std::string nm;
    std::function<Value(Interpreter&, CallArgs&)> fn;
    bool is_type = false;

    Builtin(std::string n, std::function<Value(Interpreter&, CallArgs&)> f, bool type = false)
        : nm(std::move(n)), fn(std::move(f)), is_type(type) {}
    std::string name() const override { return nm; }
    std::string type_name() const override { return is_type ? "type" : "builtin_function_or_method"; }
    Value call(Interpreter& in, CallArgs args) override { return fn(in, args); }
};

struct ExcClass : Callable {
    std::string nm;
    explicit ExcClass(std::string n) : nm(std::move(n)) {}
    std::string name() const override { return nm; }
    std::string type_name() const override { return "type"; }
    Value call(Interpreter&, CallArgs args) override {
        auto e = std::make_shared<ExcValue>();
        e->type = nm;
        if (!args.positional.empty()) e->message = to_str(args.positional[0]);
        return Value(e);
    }
};

struct Function : Callable {
    std::string nm;
    std::vector<Param> params;
    std::vector<Value> defaults;  // parallel to params; NoneType placeholder when absent
    std::vector<bool> has_default;
    Block body;
    ExprPtr lambda_body;

    std::string name() const override { return nm; }
    std::string type_name() const override { return "function"; }
    Value call(Interpreter& in, CallArgs args) override;
};

struct BoundMethod : Callable {
    Value self;
    std::string method;
    BoundMethod(Value s, std::string m) : self(std::move(s)), method(std::move(m)) {}
    std::string name() const override { return method; }
    Value call(Interpreter& in, CallArgs args) override;
};

class Interpreter {
public:
    struct Options {
        ToolCaller tool_caller;
        std::string sentinel = "FINAL ANSWER:";
        std::int64_t ops_per_ms = 1000;
        std::size_t max_sequence = 10'000'000;
    };

    Interpreter() : Interpreter(Options()) {}
    explicit Interpreter(Options opts) : opts_(std::move(opts)) { install_builtins(); }

    Interpreter(const Interpreter&) = delete;
    Interpreter& operator=(const Interpreter&) = delete;

    RunResult run(std::string_view code, std::int64_t timeout_ms) {
        RunResult res;
        out_.clear();
        ops_ = 0;
        slept_ms_ = 0;
        timeout_ms_ = timeout_ms;
        op_budget_ = timeout_ms * opts_.ops_per_ms;
        real_deadline_ = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        frames_.clear();
        depth_ = 0;
        current_line_ = 0;
        try {
            auto program = std::make_shared<Block>(parse_program(code));
            programs_.push_back(program);
            exec_block(*program);
        } catch (const PyError& e) {
            res.status = RunResult::Status::Error;
            res.err = format_traceback(e);
        } catch (const Interrupted&) {
            res.status = RunResult::Status::Timeout;
            res.err = "TimeoutError: execution exceeded " + std::to_string(timeout_ms) + " ms\n";
        }
        res.out = std::move(out_);
        out_.clear();
        res.elapsed_ms = res.status == RunResult::Status::Timeout ? std::max(timeout_ms, virtual_ms()) : virtual_ms();
        return res;
    }

    bool has_global(const std::string& name) const { return globals_.count(name) > 0; }
    const Value* global(const std::string& name) const {
        auto it = globals_.find(name);
        return it == globals_.end() ? nullptr : &it->second;
    }

    // --- used by callables -------------------------------------------------

    Value call_value(const Value& fn, CallArgs args) {
        tick();
        if (!fn.is<CallablePtr>()) throw PyError{"TypeError", "'" + type_name(fn) + "' object is not callable"};
        return fn.as<CallablePtr>()->call(*this, std::move(args));
    }

    Value call_function(Function& f, CallArgs& args) {
        if (++depth_ > kMaxDepth) {
            --depth_;
            throw PyError{"RecursionError", "maximum recursion depth exceeded"};
        }
        struct DepthGuard {
            int& d;
            ~DepthGuard() { --d; }
        } guard{depth_};
        Frame frame;
        bind_arguments(f, args, frame.locals);
        frames_.push_back(&frame);
        struct FrameGuard {
            std::vector<Frame*>& fs;
            ~FrameGuard() { fs.pop_back(); }
        } fguard{frames_};
        if (f.lambda_body) return eval(*f.lambda_body);
        Flow flow = exec_block(f.body);
        if (flow == Flow::Return) return std::move(frame.ret);
        return NoneType{};
    }

    Value call_method(const Value& self, const std::string& m, CallArgs& args);

    void sleep_ms(double ms) {
        if (ms < 0) throw PyError{"ValueError", "sleep length must be non-negative"};
        slept_ms_ += static_cast<std::int64_t>(std::ceil(ms));
        if (virtual_ms() >= timeout_ms_) throw Interrupted{};
    }

private:
    struct Interrupted {};
    enum class Flow { Normal, Break, Continue, Return };

    struct Frame {
        std::unordered_map<std::string, Value> locals;
        std::unordered_set<std::string> global_names;
        Value ret;
    };

    static constexpr int kMaxDepth = 200;

    Options opts_;
    std::unordered_map<std::string, Value> globals_;
    std::unordered_map<std::string, Value> builtins_;
    std::unordered_map<std::string, ModulePtr> modules_;
    std::vector<std::shared_ptr<Block>> programs_;
    std::vector<Frame*> frames_;
    std::string out_;
    std::int64_t ops_ = 0;
    std::int64_t op_budget_ = 0;
    std::int64_t slept_ms_ = 0;
    std::int64_t timeout_ms_ = 0;
    std::chrono::steady_clock::time_point real_deadline_;
    int depth_ = 0;
    int current_line_ = 0;
    std::vector<PyError> handling_;  // exceptions being handled, for bare raise

    std::int64_t virtual_ms() const { return slept_ms_ + ops_ / std::max<std::int64_t>(1, opts_.ops_per_ms); }

    void tick() {
        ++ops_;
        if (ops_ + slept_ms_ * opts_.ops_per_ms > op_budget_) throw Interrupted{};
        if ((ops_ & 0x3FFF) == 0 && std::chrono::steady_clock::now() > real_deadline_) throw Interrupted{};
    }

    static std::string format_traceback(const PyError& e) {
        std::string s = "Traceback (most recent call last):\n";
        s += "  File \"<step>\", line " + std::to_string(e.line) + ", in <module>\n";
        s += e.type;
        if (!e.message.empty()) s += ": " + e.message;
        return s + "\n";
    }

    // --- names ---------------------------------------------------------------

    Value lookup(const std::string& n) {
        if (!frames_.empty()) {
            auto* f = frames_.back();
            if (!f->global_names.count(n)) {
                auto it = f->locals.find(n);
                if (it != f->locals.end()) return it->second;
            }
        }
        if (auto it = globals_.find(n); it != globals_.end()) return it->second;
        if (auto it = builtins_.find(n); it != builtins_.end()) return it->second;
        throw PyError{"NameError", "name '" + n + "' is not defined"};
    }

    void store(const std::string& n, Value v) {
        if (!frames_.empty() && !frames_.back()->global_names.count(n)) {
            frames_.back()->locals[n] = std::move(v);
            return;
        }
        globals_[n] = std::move(v);
    }

    void erase_name(const std::string& n) {
        if (!frames_.empty() && !frames_.back()->global_names.count(n)) {
            if (frames_.back()->locals.erase(n)) return;
        } else if (globals_.erase(n)) {
            return;
        }
        throw PyError{"NameError", "name '" + n + "' is not defined"};
    }

    void bind_arguments(Function& f, CallArgs& args, std::unordered_map<std::string, Value>& locals) {
        std::vector<bool> bound(f.params.size(), false);
        if (args.positional.size() > f.params.size())
            throw PyError{"TypeError", f.nm + "() takes " + std::to_string(f.params.size()) + " positional arguments but " +
                                           std::to_string(args.positional.size()) + " were given"};
        for (std::size_t i = 0; i < args.positional.size(); ++i) {
            locals[f.params[i].name] = std::move(args.positional[i]);
            bound[i] = true;
        }
        for (auto& [k, v] : args.keywords) {
            auto it = std::find_if(f.params.begin(), f.params.end(), [&](const Param& p) { return p.name == k; });
            if (it == f.params.end()) throw PyError{"TypeError", f.nm + "() got an unexpected keyword argument '" + k + "'"};
            auto idx = static_cast<std::size_t>(it - f.params.begin());
            if (bound[idx]) throw PyError{"TypeError", f.nm + "() got multiple values for argument '" + k + "'"};
            locals[k] = std::move(v);
            bound[idx] = true;
        }
        for (std::size_t i = 0; i < f.params.size(); ++i) {
            if (bound[i]) continue;
            if (!f.has_default[i])
                throw PyError{"TypeError", f.nm + "() missing 1 required positional argument: '" + f.params[i].name + "'"};
            locals[f.params[i].name] = f.defaults[i];
        }
    }

    // --- statements --------------------------------------------------------

    Flow exec_block(const Block& block) {
        for (const auto& s : block) {
            Flow f = exec_stmt(*s);
            if (f != Flow::Normal) return f;
        }
        return Flow::Normal;
    }

    Flow exec_stmt(const Stmt& s) {
        tick();
        int saved_line = current_line_;
        current_line_ = s.line;
        try {
            Flow f = exec_stmt_inner(s);
            current_line_ = saved_line;
            return f;
        } catch (PyError& e) {
            if (e.line == 0) e.line = s.line;
            throw;
        }
    }

    Flow exec_stmt_inner(const Stmt& s) {
        switch (s.k) {
            case Stmt::K::ExprStmt: eval(*s.value); return Flow::Normal;
            case Stmt::K::Assign: {
                Value v = eval(*s.value);
                for (const auto& t : s.targets) assign(*t, v);
                return Flow::Normal;
            }
            case Stmt::K::AugAssign: {
                Value cur = eval(*s.target);
                Value rhs = eval(*s.value);
                Value res;
                if (s.op == "+" && cur.is<ListPtr>()) {  // in-place extend keeps aliasing semantics
                    auto items = iterate(rhs);
                    auto& l = cur.as<ListPtr>()->items;
                    l.insert(l.end(), items.begin(), items.end());
                    res = cur;
                } else {
                    res = binary(s.op, cur, rhs);
                }
                assign(*s.target, res);
                return Flow::Normal;
            }
            case Stmt::K::If:
                if (truthy(eval(*s.value))) return exec_block(s.body);
                return exec_block(s.orelse);
            case Stmt::K::While: {
                while (truthy(eval(*s.value))) {
                    Flow f = exec_block(s.body);
                    if (f == Flow::Break) return Flow::Normal;
                    if (f == Flow::Return) return f;
                }
                return exec_block(s.orelse);
            }
            case Stmt::K::For: {
                auto items = iterate(eval(*s.value));
                for (auto& item : items) {
                    tick();
                    assign(*s.target, item);
                    Flow f = exec_block(s.body);
                    if (f == Flow::Break) return Flow::Normal;
                    if (f == Flow::Return) return f;
                }
                return exec_block(s.orelse);
            }
            case Stmt::K::Break: return Flow::Break;
            case Stmt::K::Continue: return Flow::Continue;
            case Stmt::K::Pass: return Flow::Normal;
            case Stmt::K::Def: {
                store(s.name, Value(CallablePtr(make_function(s.name, s.params, s.body, nullptr))));
                return Flow::Normal;
            }
            case Stmt::K::Return: {
                if (frames_.empty()) throw PyError{"SyntaxError", "'return' outside function"};
                frames_.back()->ret = s.value ? eval(*s.value) : Value(NoneType{});
                return Flow::Return;
            }
            case Stmt::K::Try: return exec_try(s);
            case Stmt::K::Raise: {
                if (!s.value) {
                    if (handling_.empty()) throw PyError{"RuntimeError", "No active exception to reraise"};
                    PyError again = handling_.back();
                    again.line = 0;
                    throw again;
                }
                Value v = eval(*s.value);
                if (v.is<CallablePtr>() && dynamic_cast<ExcClass*>(v.as<CallablePtr>().get()))
                    v = v.as<CallablePtr>()->call(*this, {});
                if (!v.is<ExcPtr>()) throw PyError{"TypeError", "exceptions must derive from BaseException"};
                throw PyError{v.as<ExcPtr>()->type, v.as<ExcPtr>()->message};
            }
            case Stmt::K::Assert: {
                if (!truthy(eval(*s.value))) throw PyError{"AssertionError", s.msg ? to_str(eval(*s.msg)) : ""};
                return Flow::Normal;
            }
            case Stmt::K::Del: {
                for (const auto& t : s.targets) delete_target(*t);
                return Flow::Normal;
            }
            case Stmt::K::Global: {
                if (!frames_.empty())
                    for (const auto& [n, _] : s.names) frames_.back()->global_names.insert(n);
                return Flow::Normal;
            }
            case Stmt::K::Import: {
                for (const auto& [mod, alias] : s.names) {
                    auto m = import_module(mod);
                    if (alias == mod && mod.find('.') != std::string::npos) store(mod.substr(0, mod.find('.')), Value(m));
                    else store(alias, Value(m));
                }
                return Flow::Normal;
            }
            case Stmt::K::FromImport: {
                auto m = import_module(s.name);
                for (const auto& [n, alias] : s.names) {
                    auto it = m->attrs.find(n);
                    if (it == m->attrs.end())
                        throw PyError{"ImportError", "cannot import name '" + n + "' from '" + s.name + "'"};
                    store(alias, it->second);
                }
                return Flow::Normal;
            }
        }
        return Flow::Normal;
    }

    static bool exception_matches(const std::string& raised, const std::string& handler) {
        if (handler == raised || handler == "Exception" || handler == "BaseException") return true;
        if (handler == "LookupError") return raised == "KeyError" || raised == "IndexError";
        if (handler == "ArithmeticError") return raised == "ZeroDivisionError" || raised == "OverflowError";
        if (handler == "ValueError") return raised == "JSONDecodeError";
        if (handler == "OSError" || handler == "ConnectionError") return raised == "ToolError";
        return false;
    }

    bool handler_matches(const ExceptHandler& h, const PyError& e) {
        if (!h.type) return true;
        Value t = eval(*h.type);
        auto check = [&](const Value& v) {
            if (!v.is<CallablePtr>()) throw PyError{"TypeError", "catching classes that do not inherit from BaseException is not allowed"};
            return exception_matches(e.type, v.as<CallablePtr>()->name());
        };
        if (t.is<TuplePtr>()) {
            for (const auto& item : t.as<TuplePtr>()->items)
                if (check(item)) return true;
            return false;
        }
        return check(t);
    }

    Flow exec_try(const Stmt& s) {
        Flow result = Flow::Normal;
        try {
            try {
                result = exec_block(s.body);
                if (result == Flow::Normal && !s.orelse.empty()) result = exec_block(s.orelse);
            } catch (const PyError& e) {
                const ExceptHandler* match = nullptr;
                for (const auto& h : s.handlers)
                    if (handler_matches(h, e)) {
                        match = &h;
                        break;
                    }
                if (!match) throw;
                if (!match->name.empty()) {
                    auto ev = std::make_shared<ExcValue>();
                    ev->type = e.type;
                    ev->message = e.message;
                    store(match->name, Value(ev));
                }
                handling_.push_back(e);
                struct Pop {
                    std::vector<PyError>& h;
                    ~Pop() { h.pop_back(); }
                } pop{handling_};
                result = exec_block(match->body);
            }
        } catch (const PyError&) {
            if (!s.finalbody.empty()) {
                Flow f = exec_block(s.finalbody);
                if (f != Flow::Normal) return f;
            }
            throw;
        }
        if (!s.finalbody.empty()) {
            Flow f = exec_block(s.finalbody);
            if (f != Flow::Normal) return f;
        }
        return result;
    }

    std::shared_ptr<Function> make_function(const std::string& name, const std::vector<Param>& params, const Block& body,
                                            ExprPtr lambda_body) {
        auto fn = std::make_shared<Function>();
        fn->nm = name;
        fn->params = params;
        fn->body = body;
        fn->lambda_body = std::move(lambda_body);
        for (const auto& p : params) {
            fn->has_default.push_back(p.default_value != nullptr);
            fn->defaults.push_back(p.default_value ? eval(*p.default_value) : Value(NoneType{}));
        }
        return fn;
    }

    ModulePtr import_module(const std::string& name) {
        auto it = modules_.find(name);
        if (it == modules_.end()) throw PyError{"ModuleNotFoundError", "No module named '" + name + "'"};
        return it->second;
    }

    void assign(const Expr& target, const Value& v) {
        switch (target.k) {
            case Expr::K::Name: store(target.name, v); return;
            case Expr::K::Tuple:
            case Expr::K::List: {
                auto items = iterate(v);
                if (items.size() != target.items.size()) {
                    if (items.size() > target.items.size())
                        throw PyError{"ValueError", "too many values to unpack (expected " + std::to_string(target.items.size()) + ")"};
                    throw PyError{"ValueError", "not enough values to unpack (expected " + std::to_string(target.items.size()) +
                                                    ", got " + std::to_string(items.size()) + ")"};
                }
                for (std::size_t i = 0; i < items.size(); ++i) assign(*target.items[i], items[i]);
                return;
            }
            case Expr::K::Subscript: {
                Value obj = eval(*target.items[0]);
                if (target.items[1]->k == Expr::K::Slice) throw PyError{"TypeError", "slice assignment is not supported"};
                Value key = eval(*target.items[1]);
                if (obj.is<DictPtr>()) {
                    obj.as<DictPtr>()->set(key, v);
                } else if (obj.is<ListPtr>()) {
                    auto& items = obj.as<ListPtr>()->items;
                    items[normalize_index(key, items.size(), "list assignment")] = v;
                } else {
                    throw PyError{"TypeError", "'" + type_name(obj) + "' object does not support item assignment"};
                }
                return;
            }
            case Expr::K::Attribute:
                throw PyError{"AttributeError", "'" + type_name(eval(*target.items[0])) + "' object attribute '" + target.name + "' is read-only"};
            default: throw PyError{"SyntaxError", "cannot assign to expression"};
        }
    }

    void delete_target(const Expr& target) {
        if (target.k == Expr::K::Name) return erase_name(target.name);
        if (target.k == Expr::K::Subscript) {
            Value obj = eval(*target.items[0]);
            Value key = eval(*target.items[1]);
            if (obj.is<DictPtr>()) {
                if (!obj.as<DictPtr>()->erase(key)) throw PyError{"KeyError", repr(key)};
                return;
            }
            if (obj.is<ListPtr>()) {
                auto& items = obj.as<ListPtr>()->items;
                items.erase(items.begin() + static_cast<std::ptrdiff_t>(normalize_index(key, items.size(), "list assignment")));
                return;
            }
        }
        throw PyError{"TypeError", "cannot delete this target"};
    }

    // --- expressions -------------------------------------------------------

    Value eval(const Expr& e) {
        tick();
        switch (e.k) {
            case Expr::K::Const: return e.constant;
            case Expr::K::Name: return lookup(e.name);
            case Expr::K::FString: {
                std::string s;
                for (const auto& p : e.parts) {
                    if (!p.expr) {
                        s += p.literal;
                        continue;
                    }
                    Value v = eval(*p.expr);
                    if (p.conversion == 'r') v = Value(repr(v));
                    else if (p.conversion == 's') v = Value(to_str(v));
                    s += format_spec_value(v, p.spec);
                }
                return Value(std::move(s));
            }
            case Expr::K::List: return make_list(eval_items(e.items));
            case Expr::K::Tuple: return make_tuple(eval_items(e.items));
            case Expr::K::Set: {
                std::vector<Value> raw = e.name == "comp" ? iterate(eval(*e.items[0])) : eval_items(e.items);
                std::vector<Value> uniq;
                for (auto& v : raw)
                    if (std::none_of(uniq.begin(), uniq.end(), [&](const Value& u) { return values_equal(u, v); }))
                        uniq.push_back(v);
                return make_list(std::move(uniq));
            }
            case Expr::K::Dict: {
                auto d = std::make_shared<Dict>();
                for (std::size_t i = 0; i + 1 < e.items.size(); i += 2) {
                    Value k = eval(*e.items[i]);
                    d->set(k, eval(*e.items[i + 1]));
                }
                return Value(d);
            }
            case Expr::K::Subscript: {
                Value obj = eval(*e.items[0]);
                if (e.items[1]->k == Expr::K::Slice) return slice(obj, *e.items[1]);
                return subscript(obj, eval(*e.items[1]));
            }
            case Expr::K::Slice: throw PyError{"SyntaxError", "invalid slice"};
            case Expr::K::Attribute: return attribute(eval(*e.items[0]), e.name);
            case Expr::K::Call: {
                Value fn = eval(*e.items[0]);
                CallArgs args;
                for (std::size_t i = 1; i < e.items.size(); ++i) {
                    if (e.items[i]->k == Expr::K::Starred) {
                        auto items = iterate(eval(*e.items[i]->items[0]));
                        args.positional.insert(args.positional.end(), items.begin(), items.end());
                    } else {
                        args.positional.push_back(eval(*e.items[i]));
                    }
                }
                for (std::size_t i = 0; i < e.kwnames.size(); ++i) {
                    Value v = eval(*e.kwvalues[i]);
                    if (e.kwnames[i] == "**") {
                        if (!v.is<DictPtr>()) throw PyError{"TypeError", "argument after ** must be a mapping"};
                        for (const auto& [k, val] : v.as<DictPtr>()->items) args.keywords.emplace_back(to_str(k), val);
                    } else {
                        args.keywords.emplace_back(e.kwnames[i], std::move(v));
                    }
                }
                return call_value(fn, std::move(args));
            }
            case Expr::K::BinOp: {
                Value l = eval(*e.items[0]);
                Value r = eval(*e.items[1]);
                return binary(e.name, l, r);
            }
            case Expr::K::Unary: {
                Value v = eval(*e.items[0]);
                if (e.name == "not") return Value(!truthy(v));
                if (!v.is_numeric()) throw PyError{"TypeError", "bad operand type for unary " + e.name + ": '" + type_name(v) + "'"};
                if (e.name == "+") return v.is<bool>() ? Value(as_int(v)) : v;
                if (v.is<double>()) return Value(-v.as<double>());
                return Value(-as_int(v));
            }
            case Expr::K::BoolOp: {
                Value l = eval(*e.items[0]);
                if (e.name == "and") return truthy(l) ? eval(*e.items[1]) : l;
                return truthy(l) ? l : eval(*e.items[1]);
            }
            case Expr::K::Compare: {
                Value left = eval(*e.items[0]);
                for (std::size_t i = 0; i < e.ops.size(); ++i) {
                    Value right = eval(*e.items[i + 1]);
                    if (!compare_op(e.ops[i], left, right)) return Value(false);
                    left = std::move(right);
                }
                return Value(true);
            }
            case Expr::K::IfExp: return truthy(eval(*e.items[0])) ? eval(*e.items[1]) : eval(*e.items[2]);
            case Expr::K::ListComp: {
                std::vector<Value> out;
                comprehension(e, 0, [&] { out.push_back(eval(*e.items[0])); });
                return make_list(std::move(out));
            }
            case Expr::K::DictComp: {
                auto d = std::make_shared<Dict>();
                comprehension(e, 0, [&] {
                    Value k = eval(*e.items[0]);
                    d->set(k, eval(*e.items[1]));
                });
                return Value(d);
            }
            case Expr::K::Lambda: return Value(CallablePtr(make_function("<lambda>", e.params, {}, e.items[0])));
            case Expr::K::Starred: throw PyError{"SyntaxError", "can't use starred expression here"};
        }
        return NoneType{};
    }

    std::vector<Value> eval_items(const std::vector<ExprPtr>& items) {
        std::vector<Value> out;
        out.reserve(items.size());
        for (const auto& it : items) {
            if (it->k == Expr::K::Starred) {
                auto inner = iterate(eval(*it->items[0]));
                out.insert(out.end(), inner.begin(), inner.end());
            } else {
                out.push_back(eval(*it));
            }
        }
        return out;
    }

    template <class F>
    void comprehension(const Expr& e, std::size_t level, F&& emit) {
        if (level == e.comps.size()) {
            emit();
            return;
        }
        const auto& c = e.comps[level];
        for (auto& item : iterate(eval(*c.iter))) {
            tick();
            assign(*c.target, item);
            bool ok = true;
            for (const auto& cond : c.conds)
                if (!truthy(eval(*cond))) {
                    ok = false;
                    break;
                }
            if (ok) comprehension(e, level + 1, emit);
        }
    }

    bool compare_op(const std::string& op, const Value& l, const Value& r) {
        if (op == "==") return values_equal(l, r);
        if (op == "!=") return !values_equal(l, r);
        if (op == "<") return compare_values(l, r) < 0;
        if (op == ">") return compare_values(l, r) > 0;
        if (op == "<=") return compare_values(l, r) <= 0;
        if (op == ">=") return compare_values(l, r) >= 0;
        if (op == "in") return contains(r, l);
        if (op == "not in") return !contains(r, l);
        if (op == "is" || op == "is not") {
            bool same;
            if (l.v.index() != r.v.index()) same = false;
            else if (l.is_none()) same = true;
            else if (l.is<bool>() || l.is<std::int64_t>() || l.is<double>() || l.is<std::string>()) same = values_equal(l, r);
            else same = values_equal(l, r) && repr(l) == repr(r) && identity(l) == identity(r);
            return op == "is" ? same : !same;
        }
        throw PyError{"SyntaxError", "unknown comparison " + op};
    }

    static const void* identity(const Value& v) {
        if (v.is<ListPtr>()) return v.as<ListPtr>().get();
        if (v.is<DictPtr>()) return v.as<DictPtr>().get();
        if (v.is<TuplePtr>()) return v.as<TuplePtr>().get();
        if (v.is<CallablePtr>()) return v.as<CallablePtr>().get();
        if (v.is<ModulePtr>()) return v.as<ModulePtr>().get();
        if (v.is<ExcPtr>()) return v.as<ExcPtr>().get();
        return nullptr;
    }

    bool contains(const Value& container, const Value& item) {
        if (container.is<DictPtr>()) return container.as<DictPtr>()->find(item) != nullptr;
        if (container.is<std::string>()) {
            if (!item.is<std::string>())
                throw PyError{"TypeError", "'in <string>' requires string as left operand, not " + type_name(item)};
            return container.as<std::string>().find(item.as<std::string>()) != std::string::npos;
        }
        for (const auto& v : iterate(container))
            if (values_equal(v, item)) return true;
        return false;
    }

public:
    std::vector<Value> iterate(const Value& v) {
        if (v.is<ListPtr>()) return v.as<ListPtr>()->items;
        if (v.is<TuplePtr>()) return v.as<TuplePtr>()->items;
        if (v.is<DictPtr>()) {
            std::vector<Value> keys;
            for (const auto& [k, _] : v.as<DictPtr>()->items) keys.push_back(k);
            return keys;
        }
        if (v.is<std::string>()) {
            std::vector<Value> chars;
            const auto& s = v.as<std::string>();
            for (std::size_t i = 0; i < s.size();) {
                std::size_t n = utf8_len(static_cast<unsigned char>(s[i]));
                chars.emplace_back(s.substr(i, n));
                i += n;
            }
            return chars;
        }
        throw PyError{"TypeError", "'" + type_name(v) + "' object is not iterable"};
    }

    std::string format_spec_value(const Value& v, const std::string& spec);

    void write_out(const std::string& s) { out_ += s; }
    const Options& options() const { return opts_; }
    std::size_t max_sequence() const { return opts_.max_sequence; }

private:
    static std::size_t utf8_len(unsigned char c) {
        if (c < 0x80) return 1;
        if ((c >> 5) == 0x6) return 2;
        if ((c >> 4) == 0xE) return 3;
        if ((c >> 3) == 0x1E) return 4;
        return 1;
    }

    static std::size_t normalize_index(const Value& key, std::size_t size, const char* what) {
        if (!key.is<std::int64_t>() && !key.is<bool>())
            throw PyError{"TypeError", std::string(what) + " indices must be integers, not " + type_name(key)};
        std::int64_t i = as_int(key);
        std::int64_t n = static_cast<std::int64_t>(size);
        if (i < 0) i += n;
        if (i < 0 || i >= n) throw PyError{"IndexError", std::string(what) + " index out of range"};
        return static_cast<std::size_t>(i);
    }

    Value subscript(const Value& obj, const Value& key) {
        if (obj.is<DictPtr>()) {
            const Value* v = obj.as<DictPtr>()->find(key);
            if (!v) throw PyError{"KeyError", repr(key)};
            return *v;
        }
        if (obj.is<ListPtr>()) {
            const auto& items = obj.as<ListPtr>()->items;
            return items[normalize_index(key, items.size(), "list")];
        }
        if (obj.is<TuplePtr>()) {
            const auto& items = obj.as<TuplePtr>()->items;
            return items[normalize_index(key, items.size(), "tuple")];
        }
        if (obj.is<std::string>()) {
            const auto& s = obj.as<std::string>();
            return Value(std::string(1, s[normalize_index(key, s.size(), "string")]));
        }
        throw PyError{"TypeError", "'" + type_name(obj) + "' object is not subscriptable"};
    }

    Value slice(const Value& obj, const Expr& sl) {
        auto opt_int = [&](const ExprPtr& p) -> std::optional<std::int64_t> {
            if (!p) return std::nullopt;
            Value v = eval(*p);
            if (v.is_none()) return std::nullopt;
            if (!v.is<std::int64_t>() && !v.is<bool>()) throw PyError{"TypeError", "slice indices must be integers or None"};
            return as_int(v);
        };
        auto lo = opt_int(sl.items[0]);
        auto hi = opt_int(sl.items[1]);
        auto st = opt_int(sl.items[2]);
        std::int64_t step = st.value_or(1);
        if (step == 0) throw PyError{"ValueError", "slice step cannot be zero"};
        auto pick = [&](std::int64_t n) {
            std::vector<std::int64_t> idx;
            auto clamp = [&](std::optional<std::int64_t> v, std::int64_t def, bool upper) {
                if (!v) return def;
                std::int64_t x = *v;
                if (x < 0) x += n;
                if (step > 0) return std::clamp<std::int64_t>(x, 0, n);
                (void)upper;
                return std::clamp<std::int64_t>(x, -1, n - 1);
            };
            if (step > 0) {
                std::int64_t a = clamp(lo, 0, false), b = clamp(hi, n, true);
                for (std::int64_t i = a; i < b; i += step) idx.push_back(i);
            } else {
                std::int64_t a = clamp(lo, n - 1, false), b = clamp(hi, -1, true);
                for (std::int64_t i = a; i > b; i += step) idx.push_back(i);
            }
            return idx;
        };
        if (obj.is<std::string>()) {
            const auto& s = obj.as<std::string>();
            std::string out;
            for (auto i : pick(static_cast<std::int64_t>(s.size()))) out += s[static_cast<std::size_t>(i)];
            return Value(std::move(out));
        }
        if (obj.is<ListPtr>() || obj.is<TuplePtr>()) {
            const auto& items = obj.is<ListPtr>() ? obj.as<ListPtr>()->items : obj.as<TuplePtr>()->items;
            std::vector<Value> out;
            for (auto i : pick(static_cast<std::int64_t>(items.size()))) out.push_back(items[static_cast<std::size_t>(i)]);
            return obj.is<ListPtr>() ? make_list(std::move(out)) : make_tuple(std::move(out));
        }
        throw PyError{"TypeError", "'" + type_name(obj) + "' object is not subscriptable"};
    }

    Value attribute(const Value& obj, const std::string& name) {
        if (obj.is<ModulePtr>()) {
            const auto& m = *obj.as<ModulePtr>();
            auto it = m.attrs.find(name);
            if (it == m.attrs.end()) throw PyError{"AttributeError", "module '" + m.name + "' has no attribute '" + name + "'"};
            return it->second;
        }
        if (obj.is<ExcPtr>() && name == "args") return make_tuple({Value(obj.as<ExcPtr>()->message)});
        if (has_method(obj, name)) return Value(CallablePtr(std::make_shared<BoundMethod>(obj, name)));
        throw PyError{"AttributeError", "'" + type_name(obj) + "' object has no attribute '" + name + "'"};
    }

    static bool has_method(const Value& obj, const std::string& m) {
        static const std::unordered_set<std::string> str_methods = {
            "upper", "lower", "strip", "lstrip", "rstrip", "split", "join", "replace", "startswith", "endswith", "find",
            "count", "format", "isdigit", "isalpha", "isalnum", "title", "capitalize", "splitlines", "index", "zfill"};
        static const std::unordered_set<std::string> list_methods = {"append", "extend", "pop", "insert", "index", "count",
                                                                     "sort", "reverse", "remove", "copy", "clear"};
        static const std::unordered_set<std::string> dict_methods = {"get", "keys", "values", "items", "update",
                                                                     "pop", "setdefault", "copy", "clear"};
        if (obj.is<std::string>()) return str_methods.count(m) > 0;
        if (obj.is<ListPtr>()) return list_methods.count(m) > 0;
        if (obj.is<DictPtr>()) return dict_methods.count(m) > 0;
        if (obj.is<TuplePtr>()) return m == "index" || m == "count";
        return false;
    }

public:
    Value binary(const std::string& op, const Value& l, const Value& r) {
        if (l.is_numeric() && r.is_numeric()) return arith(op, l, r);
        if (op == "+") {
            if (l.is<std::string>() && r.is<std::string>()) return Value(l.as<std::string>() + r.as<std::string>());
            if (l.is<ListPtr>() && r.is<ListPtr>()) {
                auto items = l.as<ListPtr>()->items;
                const auto& ri = r.as<ListPtr>()->items;
                items.insert(items.end(), ri.begin(), ri.end());
                return make_list(std::move(items));
            }
            if (l.is<TuplePtr>() && r.is<TuplePtr>()) {
                auto items = l.as<TuplePtr>()->items;
                const auto& ri = r.as<TuplePtr>()->items;
                items.insert(items.end(), ri.begin(), ri.end());
                return make_tuple(std::move(items));
            }
        }
        if (op == "*") {
            const Value* seq = nullptr;
            const Value* count = nullptr;
            if ((l.is<std::int64_t>() || l.is<bool>()) && !r.is_numeric()) seq = &r, count = &l;
            if ((r.is<std::int64_t>() || r.is<bool>()) && !l.is_numeric()) seq = &l, count = &r;
            if (seq) {
                std::int64_t n = std::max<std::int64_t>(0, as_int(*count));
                if (seq->is<std::string>()) {
                    const auto& s = seq->as<std::string>();
                    if (static_cast<std::size_t>(n) * s.size() > 64 * opts_.max_sequence) throw PyError{"MemoryError", ""};
                    std::string out;
                    out.reserve(s.size() * static_cast<std::size_t>(n));
                    for (std::int64_t i = 0; i < n; ++i) out += s;
                    ops_ += n / 64;
                    return Value(std::move(out));
                }
                if (seq->is<ListPtr>()) {
                    const auto& items = seq->as<ListPtr>()->items;
                    if (static_cast<std::size_t>(n) * items.size() > opts_.max_sequence) throw PyError{"MemoryError", ""};
                    std::vector<Value> out;
                    for (std::int64_t i = 0; i < n; ++i) out.insert(out.end(), items.begin(), items.end());
                    return make_list(std::move(out));
                }
            }
        }
        if (op == "%" && l.is<std::string>()) return Value(percent_format(l.as<std::string>(), r));
        throw PyError{"TypeError", "unsupported operand type(s) for " + op + ": '" + type_name(l) + "' and '" + type_name(r) + "'"};
    }

private:
    static Value arith(const std::string& op, const Value& l, const Value& r) {
        bool fl = l.is<double>() || r.is<double>();
        if (op == "/" ) {
            double b = as_double(r);
            if (b == 0.0) throw PyError{"ZeroDivisionError", fl ? "float division by zero" : "division by zero"};
            return Value(as_double(l) / b);
        }
        if (op == "**") {
            if (!fl) {
                std::int64_t base = as_int(l), exp = as_int(r);
                if (exp < 0) return Value(std::pow(static_cast<double>(base), static_cast<double>(exp)));
                std::int64_t result = 1;
                for (std::int64_t i = 0; i < exp; ++i)
                    if (__builtin_mul_overflow(result, base, &result)) throw PyError{"OverflowError", "integer overflow"};
                return Value(result);
            }
            double a = as_double(l), b = as_double(r);
            if (a == 0.0 && b < 0) throw PyError{"ZeroDivisionError", "0.0 cannot be raised to a negative power"};
            return Value(std::pow(a, b));
        }
        if (fl) {
            double a = as_double(l), b = as_double(r);
            if (op == "+") return Value(a + b);
            if (op == "-") return Value(a - b);
            if (op == "*") return Value(a * b);
            if (op == "//") {
                if (b == 0.0) throw PyError{"ZeroDivisionError", "float floor division by zero"};
                return Value(std::floor(a / b));
            }
            if (op == "%") {
                if (b == 0.0) throw PyError{"ZeroDivisionError", "float modulo"};
                double m = std::fmod(a, b);
                if (m != 0.0 && ((m < 0) != (b < 0))) m += b;
                return Value(m);
            }
        } else {
            std::int64_t a = as_int(l), b = as_int(r), out = 0;
            if (op == "+") {
                if (__builtin_add_overflow(a, b, &out)) throw PyError{"OverflowError", "integer overflow"};
                return Value(out);
            }
            if (op == "-") {
                if (__builtin_sub_overflow(a, b, &out)) throw PyError{"OverflowError", "integer overflow"};
                return Value(out);
            }
            if (op == "*") {
                if (__builtin_mul_overflow(a, b, &out)) throw PyError{"OverflowError", "integer overflow"};
                return Value(out);
            }
            if (op == "//" || op == "%") {
                if (b == 0) throw PyError{"ZeroDivisionError", "integer division or modulo by zero"};
                std::int64_t q = a / b, m = a % b;
                if (m != 0 && ((m < 0) != (b < 0))) {
                    --q;
                    m += b;
                }
                return Value(op == "//" ? q : m);
            }
        }
        throw PyError{"TypeError", "unsupported operator " + op};
    }

    std::string percent_format(const std::string& fmt, const Value& args) {
        std::vector<Value> vals = args.is<TuplePtr>() ? args.as<TuplePtr>()->items : std::vector<Value>{args};
        std::string out;
        std::size_t vi = 0;
        for (std::size_t i = 0; i < fmt.size(); ++i) {
            if (fmt[i] != '%') {
                out += fmt[i];
                continue;
            }
            if (++i >= fmt.size()) throw PyError{"ValueError", "incomplete format"};
            if (fmt[i] == '%') {
                out += '%';
                continue;
            }
            std::string spec;
            while (i < fmt.size() && std::string("-+ 0#.0123456789").find(fmt[i]) != std::string::npos) spec += fmt[i++];
            if (i >= fmt.size()) throw PyError{"ValueError", "incomplete format"};
            char conv = fmt[i];
            if (vi >= vals.size()) throw PyError{"TypeError", "not enough arguments for format string"};
            const Value& v = vals[vi++];
            switch (conv) {
                case 's': out += format_spec_value(Value(to_str(v)), spec_align(spec)); break;
                case 'r': out += format_spec_value(Value(repr(v)), spec_align(spec)); break;
                case 'd':
                case 'i': out += format_spec_value(Value(static_cast<std::int64_t>(as_double(v))), spec + "d"); break;
                case 'f':
                case 'e':
                case 'g': out += format_spec_value(v, spec + conv); break;
                default: throw PyError{"ValueError", std::string("unsupported format character '") + conv + "'"};
            }
        }
        if (vi < vals.size() && args.is<TuplePtr>())
            throw PyError{"TypeError", "not all arguments converted during string formatting"};
        return out;
    }

    static std::string spec_align(const std::string& spec) {
        if (!spec.empty() && spec[0] == '-') return "<" + spec.substr(1);
        return spec.empty() ? spec : ">" + spec;
    }

    Value call_tool_helper(CallArgs& args);
    void install_builtins();
};

// ---------------------------------------------------------------------------
// Out-of-class definitions
// ---------------------------------------------------------------------------

inline Value Function::call(Interpreter& in, CallArgs args) { return in.call_function(*this, args); }

inline Value BoundMethod::call(Interpreter& in, CallArgs args) { return in.call_method(self, method, args); }

// Python format-spec mini-language: [[fill]align][sign][0][width][,][.precision][type]
inline std::string Interpreter::format_spec_value(const Value& v, const std::string& spec) {
    if (spec.empty()) return to_str(v);
    std::size_t i = 0;
    char fill = ' ', align = 0, sign = '-';
    auto is_align = [](char c) { return c == '<' || c == '>' || c == '^' || c == '='; };
    if (spec.size() >= 2 && is_align(spec[1])) {
        fill = spec[0];
        align = spec[1];
        i = 2;
    } else if (!spec.empty() && is_align(spec[0])) {
        align = spec[0];
        i = 1;
    }
    if (i < spec.size() && (spec[i] == '+' || spec[i] == '-' || spec[i] == ' ')) sign = spec[i++];
    bool zero = false;
    if (i < spec.size() && spec[i] == '0') {
        zero = true;
        ++i;
    }
    std::size_t width = 0;
    while (i < spec.size() && std::isdigit(static_cast<unsigned char>(spec[i]))) width = width * 10 + static_cast<std::size_t>(spec[i++] - '0');
    bool group = false;
    if (i < spec.size() && (spec[i] == ',' || spec[i] == '_')) {
        group = true;
        ++i;
    }
    int precision = -1;
    if (i < spec.size() && spec[i] == '.') {
        ++i;
        precision = 0;
        while (i < spec.size() && std::isdigit(static_cast<unsigned char>(spec[i]))) precision = precision * 10 + (spec[i++] - '0');
    }
    char type = i < spec.size() ? spec[i++] : 0;
    if (i != spec.size()) throw PyError{"ValueError", "Invalid format specifier '" + spec + "'"};

    std::string body;
    bool numeric = v.is_numeric();
    bool negative = false;
    auto group_digits = [](std::string digits) {
        std::string frac;
        auto dot = digits.find_first_of(".eE");
        if (dot != std::string::npos) {
            frac = digits.substr(dot);
            digits = digits.substr(0, dot);
        }
        std::string out;
        int n = 0;
        for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
            if (n && n % 3 == 0) out += ',';
            out += *it;
            ++n;
        }
        return std::string(out.rbegin(), out.rend()) + frac;
    };
    if (type == 's' || (!numeric && type == 0)) {
        if (numeric && type == 's') throw PyError{"ValueError", "Unknown format code 's' for object of type '" + type_name(v) + "'"};
        body = to_str(v);
        if (precision >= 0 && body.size() > static_cast<std::size_t>(precision)) body.resize(static_cast<std::size_t>(precision));
        if (!align) align = '<';
    } else {
        if (!numeric) throw PyError{"ValueError", std::string("Unknown format code '") + type + "' for object of type '" + type_name(v) + "'"};
        double d = as_double(v);
        negative = std::signbit(d) && !(v.is<std::int64_t>() && as_int(v) == 0);
        char buf[512];
        if (type == 'd') {
            if (v.is<double>()) throw PyError{"ValueError", "Unknown format code 'd' for object of type 'float'"};
            std::int64_t x = as_int(v);
            negative = x < 0;
            body = std::to_string(x < 0 ? -x : x);
        } else if (type == 'f' || type == 'F' || type == '%') {
            double x = type == '%' ? d * 100.0 : d;
            std::snprintf(buf, sizeof(buf), "%.*f", precision < 0 ? 6 : precision, std::fabs(x));
            body = buf;
            if (type == '%') body += '%';
        } else if (type == 'e' || type == 'E') {
            std::snprintf(buf, sizeof(buf), type == 'e' ? "%.*e" : "%.*E", precision < 0 ? 6 : precision, std::fabs(d));
            body = buf;
        } else if (type == 'g' || type == 'G') {
            std::snprintf(buf, sizeof(buf), type == 'g' ? "%.*g" : "%.*G", precision < 0 ? 6 : (precision == 0 ? 1 : precision), std::fabs(d));
            body = buf;
        } else if (type == 0) {
            if (v.is<double>()) {
                if (precision >= 0) {
                    std::snprintf(buf, sizeof(buf), "%.*g", precision == 0 ? 1 : precision, std::fabs(d));
                    body = buf;
                } else {
                    body = float_repr(std::fabs(d));
                }
            } else {
                std::int64_t x = as_int(v);
                negative = x < 0;
                body = std::to_string(x < 0 ? -x : x);
            }
        } else {
            throw PyError{"ValueError", std::string("Unknown format code '") + type + "'"};
        }
        if (group) body = group_digits(body);
        std::string sgn = negative ? "-" : (sign == '+' ? "+" : (sign == ' ' ? " " : ""));
        if (zero && !align) {
            align = '=';
            fill = '0';
        }
        if (!align) align = '>';
        if (align == '=') {
            std::string padded = body;
            while (padded.size() + sgn.size() < width) padded.insert(padded.begin(), fill);
            return sgn + padded;
        }
        body = sgn + body;
    }
    if (body.size() >= width) return body;
    std::size_t pad = width - body.size();
    if (align == '<') return body + std::string(pad, fill);
    if (align == '^') return std::string(pad / 2, fill) + body + std::string(pad - pad / 2, fill);
    return std::string(pad, fill) + body;
}

namespace detail {

inline const Value* kwarg(const CallArgs& a, const std::string& name) {
    for (const auto& [k, v] : a.keywords)
        if (k == name) return &v;
    return nullptr;
}

inline void arity(const CallArgs& a, std::size_t lo, std::size_t hi, const std::string& fn) {
    if (a.positional.size() < lo || a.positional.size() > hi) {
        std::string expected = lo == hi ? std::to_string(lo) : std::to_string(lo) + " to " + std::to_string(hi);
        throw PyError{"TypeError", fn + "() takes " + expected + " positional arguments but " + std::to_string(a.positional.size()) + " were given"};
    }
}

inline std::string strip_chars(const std::string& s, const std::string& chars, bool left, bool right) {
    std::size_t a = 0, b = s.size();
    if (left)
        while (a < b && chars.find(s[a]) != std::string::npos) ++a;
    if (right)
        while (b > a && chars.find(s[b - 1]) != std::string::npos) --b;
    return s.substr(a, b - a);
}

// json.dumps with Python defaults (ensure_ascii, ", "/": " separators).
inline std::string py_json_string(const std::string& s) {
    std::string out = "\"";
    for (std::size_t i = 0; i < s.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            case '\b': out += "\\b"; break;
            case '\f': out += "\\f"; break;
            default:
                if (c < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else if (c < 0x80) {
                    out += static_cast<char>(c);
                } else {
                    std::uint32_t cp = 0;
                    std::size_t n = (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
                    cp = n == 2 ? (c & 0x1F) : n == 3 ? (c & 0x0F) : n == 4 ? (c & 0x07) : c;
                    for (std::size_t k = 1; k < n && i + k < s.size(); ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
                    i += n - 1;
                    char buf[16];
                    if (cp >= 0x10000) {
                        cp -= 0x10000;
                        std::snprintf(buf, sizeof(buf), "\\u%04x\\u%04x", 0xD800 + (cp >> 10), 0xDC00 + (cp & 0x3FF));
                    } else {
                        std::snprintf(buf, sizeof(buf), "\\u%04x", cp);
                    }
                    out += buf;
                }
        }
    }
    return out + "\"";
}

inline std::string py_json_dumps(const Value& v, int indent, int level) {
    auto nl = [&](int lvl) { return indent < 0 ? std::string() : "\n" + std::string(static_cast<std::size_t>(indent * lvl), ' '); };
    std::string item_sep = indent < 0 ? ", " : ",";
    if (v.is_none()) return "null";
    if (v.is<bool>()) return v.as<bool>() ? "true" : "false";
    if (v.is<std::int64_t>()) return std::to_string(v.as<std::int64_t>());
    if (v.is<double>()) {
        double d = v.as<double>();
        if (std::isnan(d)) return "NaN";
        if (std::isinf(d)) return d > 0 ? "Infinity" : "-Infinity";
        return float_repr(d);
    }
    if (v.is<std::string>()) return py_json_string(v.as<std::string>());
    if (v.is<ListPtr>() || v.is<TuplePtr>()) {
        const auto& items = v.is<ListPtr>() ? v.as<ListPtr>()->items : v.as<TuplePtr>()->items;
        if (items.empty()) return "[]";
        std::string out = "[";
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i) out += item_sep;
            out += nl(level + 1) + py_json_dumps(items[i], indent, level + 1);
        }
        return out + nl(level) + "]";
    }
    if (v.is<DictPtr>()) {
        const auto& items = v.as<DictPtr>()->items;
        if (items.empty()) return "{}";
        std::string out = "{";
        bool first = true;
        for (const auto& [k, val] : items) {
            if (!first) out += item_sep;
            first = false;
            std::string key = k.is<std::string>() ? k.as<std::string>() : (k.is<bool>() ? (k.as<bool>() ? "true" : "false") : k.is_none() ? "null" : to_str(k));
            out += nl(level + 1) + py_json_string(key) + ": " + py_json_dumps(val, indent, level + 1);
        }
        return out + nl(level) + "}";
    }
    throw PyError{"TypeError", "Object of type " + type_name(v) + " is not JSON serializable"};
}

inline std::vector<std::string> split_ws(const std::string& s, std::int64_t maxsplit) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i >= s.size()) break;
        if (maxsplit >= 0 && static_cast<std::int64_t>(out.size()) == maxsplit) {
            std::string rest = s.substr(i);
            while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.back()))) rest.pop_back();
            out.push_back(rest);
            return out;
        }
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace detail

inline Value Interpreter::call_method(const Value& self, const std::string& m, CallArgs& a) {
    using detail::arity;
    using detail::kwarg;
    auto& P = a.positional;
    if (self.is<std::string>()) {
        const auto& s = self.as<std::string>();
        auto arg_str = [&](std::size_t i) -> const std::string& {
            if (!P[i].is<std::string>()) throw PyError{"TypeError", "must be str, not " + type_name(P[i])};
            return P[i].as<std::string>();
        };
        if (m == "upper" || m == "lower") {
            std::string out = s;
            for (auto& c : out) c = static_cast<char>(m == "upper" ? std::toupper(static_cast<unsigned char>(c)) : std::tolower(static_cast<unsigned char>(c)));
            return Value(out);
        }
        if (m == "title" || m == "capitalize") {
            std::string out = s;
            bool start = true;
            for (std::size_t i = 0; i < out.size(); ++i) {
                unsigned char c = static_cast<unsigned char>(out[i]);
                if (m == "capitalize") {
                    out[i] = static_cast<char>(i == 0 ? std::toupper(c) : std::tolower(c));
                } else {
                    out[i] = static_cast<char>(start ? std::toupper(c) : std::tolower(c));
                    start = !std::isalpha(c);
                }
            }
            return Value(out);
        }
        if (m == "strip" || m == "lstrip" || m == "rstrip") {
            arity(a, 0, 1, m);
            std::string chars = P.empty() || P[0].is_none() ? std::string(" \t\n\r\f\v") : arg_str(0);
            return Value(detail::strip_chars(s, chars, m != "rstrip", m != "lstrip"));
        }
        if (m == "split") {
            arity(a, 0, 2, m);
            const Value* sep = P.size() > 0 ? &P[0] : kwarg(a, "sep");
            std::int64_t maxsplit = P.size() > 1 ? as_int(P[1]) : (kwarg(a, "maxsplit") ? as_int(*kwarg(a, "maxsplit")) : -1);
            std::vector<Value> out;
            if (!sep || sep->is_none()) {
                for (auto& part : detail::split_ws(s, maxsplit)) out.emplace_back(part);
                return make_list(std::move(out));
            }
            const std::string& d = sep->as<std::string>();
            if (d.empty()) throw PyError{"ValueError", "empty separator"};
            std::size_t start = 0;
            while (true) {
                if (maxsplit >= 0 && static_cast<std::int64_t>(out.size()) == maxsplit) break;
                auto pos = s.find(d, start);
                if (pos == std::string::npos) break;
                out.emplace_back(s.substr(start, pos - start));
                start = pos + d.size();
            }
            out.emplace_back(s.substr(start));
            return make_list(std::move(out));
        }
        if (m == "splitlines") {
            std::vector<Value> out;
            std::size_t start = 0;
            for (std::size_t i = 0; i < s.size(); ++i)
                if (s[i] == '\n') {
                    out.emplace_back(s.substr(start, i - start));
                    start = i + 1;
                }
            if (start < s.size()) out.emplace_back(s.substr(start));
            return make_list(std::move(out));
        }
        if (m == "join") {
            arity(a, 1, 1, m);
            std::string out;
            bool first = true;
            for (const auto& item : iterate(P[0])) {
                if (!item.is<std::string>())
                    throw PyError{"TypeError", "sequence item: expected str instance, " + type_name(item) + " found"};
                if (!first) out += s;
                first = false;
                out += item.as<std::string>();
            }
            return Value(out);
        }
        if (m == "replace") {
            arity(a, 2, 3, m);
            const auto& from = arg_str(0);
            const auto& to = arg_str(1);
            std::int64_t limit = P.size() > 2 ? as_int(P[2]) : -1;
            if (from.empty()) return Value(s);
            std::string out;
            std::size_t start = 0;
            std::int64_t n = 0;
            while (limit < 0 || n < limit) {
                auto pos = s.find(from, start);
                if (pos == std::string::npos) break;
                out += s.substr(start, pos - start) + to;
                start = pos + from.size();
                ++n;
            }
            return Value(out + s.substr(start));
        }
        if (m == "startswith" || m == "endswith") {
            arity(a, 1, 1, m);
            auto test = [&](const std::string& x) {
                if (x.size() > s.size()) return false;
                return m == "startswith" ? s.compare(0, x.size(), x) == 0 : s.compare(s.size() - x.size(), x.size(), x) == 0;
            };
            if (P[0].is<TuplePtr>()) {
                for (const auto& x : P[0].as<TuplePtr>()->items)
                    if (x.is<std::string>() && test(x.as<std::string>())) return Value(true);
                return Value(false);
            }
            return Value(test(arg_str(0)));
        }
        if (m == "find" || m == "index") {
            arity(a, 1, 1, m);
            auto pos = s.find(arg_str(0));
            if (pos == std::string::npos) {
                if (m == "index") throw PyError{"ValueError", "substring not found"};
                return Value(std::int64_t{-1});
            }
            return Value(static_cast<std::int64_t>(pos));
        }
        if (m == "count") {
            arity(a, 1, 1, m);
            const auto& sub = arg_str(0);
            if (sub.empty()) return Value(static_cast<std::int64_t>(s.size() + 1));
            std::int64_t n = 0;
            for (auto pos = s.find(sub); pos != std::string::npos; pos = s.find(sub, pos + sub.size())) ++n;
            return Value(n);
        }
        if (m == "isdigit" || m == "isalpha" || m == "isalnum") {
            if (s.empty()) return Value(false);
            for (unsigned char c : s) {
                bool ok = m == "isdigit" ? std::isdigit(c) : m == "isalpha" ? std::isalpha(c) : std::isalnum(c);
                if (!ok) return Value(false);
            }
            return Value(true);
        }
        if (m == "zfill") {
            arity(a, 1, 1, m);
            auto w = static_cast<std::size_t>(std::max<std::int64_t>(0, as_int(P[0])));
            if (s.size() >= w) return Value(s);
            std::size_t sign = (!s.empty() && (s[0] == '-' || s[0] == '+')) ? 1 : 0;
            return Value(s.substr(0, sign) + std::string(w - s.size(), '0') + s.substr(sign));
        }
        if (m == "format") {
            std::string out;
            std::size_t auto_idx = 0;
            for (std::size_t i = 0; i < s.size(); ++i) {
                char c = s[i];
                if (c == '{' && i + 1 < s.size() && s[i + 1] == '{') {
                    out += '{';
                    ++i;
                    continue;
                }
                if (c == '}' && i + 1 < s.size() && s[i + 1] == '}') {
                    out += '}';
                    ++i;
                    continue;
                }
                if (c != '{') {
                    out += c;
                    continue;
                }
                auto close = s.find('}', i);
                if (close == std::string::npos) throw PyError{"ValueError", "Single '{' encountered in format string"};
                std::string field = s.substr(i + 1, close - i - 1);
                std::string spec;
                if (auto colon = field.find(':'); colon != std::string::npos) {
                    spec = field.substr(colon + 1);
                    field = field.substr(0, colon);
                }
                char conv = 0;
                if (auto bang = field.find('!'); bang != std::string::npos) {
                    conv = bang + 1 < field.size() ? field[bang + 1] : 0;
                    field = field.substr(0, bang);
                }
                Value v;
                if (field.empty()) {
                    if (auto_idx >= P.size()) throw PyError{"IndexError", "Replacement index out of range"};
                    v = P[auto_idx++];
                } else if (std::all_of(field.begin(), field.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
                    auto idx = std::stoul(field);
                    if (idx >= P.size()) throw PyError{"IndexError", "Replacement index out of range"};
                    v = P[idx];
                } else {
                    const Value* kv = kwarg(a, field);
                    if (!kv) throw PyError{"KeyError", string_repr(field)};
                    v = *kv;
                }
                if (conv == 'r') v = Value(repr(v));
                out += format_spec_value(v, spec);
                i = close;
            }
            return Value(out);
        }
    }
    if (self.is<ListPtr>()) {
        auto& items = self.as<ListPtr>()->items;
        if (m == "append") {
            arity(a, 1, 1, m);
            if (items.size() >= opts_.max_sequence) throw PyError{"MemoryError", ""};
            items.push_back(P[0]);
            return NoneType{};
        }
        if (m == "extend") {
            arity(a, 1, 1, m);
            auto more = iterate(P[0]);
            items.insert(items.end(), more.begin(), more.end());
            return NoneType{};
        }
        if (m == "pop") {
            arity(a, 0, 1, m);
            if (items.empty()) throw PyError{"IndexError", "pop from empty list"};
            std::size_t idx = P.empty() ? items.size() - 1 : normalize_index(P[0], items.size(), "pop");
            Value v = items[idx];
            items.erase(items.begin() + static_cast<std::ptrdiff_t>(idx));
            return v;
        }
        if (m == "insert") {
            arity(a, 2, 2, m);
            auto n = static_cast<std::int64_t>(items.size());
            std::int64_t i = as_int(P[0]);
            if (i < 0) i = std::max<std::int64_t>(0, i + n);
            i = std::min(i, n);
            items.insert(items.begin() + i, P[1]);
            return NoneType{};
        }
        if (m == "remove") {
            arity(a, 1, 1, m);
            for (auto it = items.begin(); it != items.end(); ++it)
                if (values_equal(*it, P[0])) {
                    items.erase(it);
                    return NoneType{};
                }
            throw PyError{"ValueError", "list.remove(x): x not in list"};
        }
        if (m == "reverse") {
            std::reverse(items.begin(), items.end());
            return NoneType{};
        }
        if (m == "copy") return make_list(items);
        if (m == "clear") {
            items.clear();
            return NoneType{};
        }
        if (m == "sort") {
            CallArgs sa;
            sa.positional.push_back(self);
            sa.keywords = a.keywords;
            Value sorted = call_value(builtins_.at("sorted"), std::move(sa));
            items = sorted.as<ListPtr>()->items;
            return NoneType{};
        }
    }
    if (self.is<ListPtr>() || self.is<TuplePtr>()) {
        const auto& items = self.is<ListPtr>() ? self.as<ListPtr>()->items : self.as<TuplePtr>()->items;
        if (m == "index") {
            arity(a, 1, 1, m);
            for (std::size_t i = 0; i < items.size(); ++i)
                if (values_equal(items[i], P[0])) return Value(static_cast<std::int64_t>(i));
            throw PyError{"ValueError", repr(P[0]) + " is not in list"};
        }
        if (m == "count") {
            arity(a, 1, 1, m);
            std::int64_t n = 0;
            for (const auto& v : items)
                if (values_equal(v, P[0])) ++n;
            return Value(n);
        }
    }
    if (self.is<DictPtr>()) {
        auto& d = *self.as<DictPtr>();
        if (m == "get") {
            arity(a, 1, 2, m);
            const Value* v = d.find(P[0]);
            return v ? *v : (P.size() > 1 ? P[1] : Value(NoneType{}));
        }
        if (m == "keys" || m == "values" || m == "items") {
            std::vector<Value> out;
            for (const auto& [k, v] : d.items) {
                if (m == "keys") out.push_back(k);
                else if (m == "values") out.push_back(v);
                else out.push_back(make_tuple({k, v}));
            }
            return make_list(std::move(out));
        }
        if (m == "update") {
            arity(a, 0, 1, m);
            if (!P.empty()) {
                if (P[0].is<DictPtr>()) {
                    auto src = P[0].as<DictPtr>()->items;
                    for (const auto& [k, v] : src) d.set(k, v);
                } else {
                    for (const auto& pair : iterate(P[0])) {
                        auto kv = iterate(pair);
                        if (kv.size() != 2) throw PyError{"ValueError", "dictionary update sequence element has wrong length"};
                        d.set(kv[0], kv[1]);
                    }
                }
            }
            for (const auto& [k, v] : a.keywords) d.set(Value(k), v);
            return NoneType{};
        }
        if (m == "pop") {
            arity(a, 1, 2, m);
            const Value* v = d.find(P[0]);
            if (!v) {
                if (P.size() > 1) return P[1];
                throw PyError{"KeyError", repr(P[0])};
            }
            Value out = *v;
            d.erase(P[0]);
            return out;
        }
        if (m == "setdefault") {
            arity(a, 1, 2, m);
            if (const Value* v = d.find(P[0])) return *v;
            Value def = P.size() > 1 ? P[1] : Value(NoneType{});
            d.set(P[0], def);
            return def;
        }
        if (m == "copy") {
            auto c = std::make_shared<Dict>(d);
            return Value(c);
        }
        if (m == "clear") {
            d.items.clear();
            d.index.clear();
            return NoneType{};
        }
    }
    throw PyError{"AttributeError", "'" + type_name(self) + "' object has no attribute '" + m + "'"};
}

inline Value Interpreter::call_tool_helper(CallArgs& a) {
    if (a.positional.empty() || !a.positional[0].is<std::string>())
        throw PyError{"TypeError", "call_tool() requires the tool name as its first argument"};
    std::string tool = a.positional[0].as<std::string>();
    auto params = std::make_shared<Dict>();
    if (a.positional.size() > 1) {
        if (!a.positional[1].is<DictPtr>()) throw PyError{"TypeError", "call_tool() params must be a dict"};
        *params = *a.positional[1].as<DictPtr>();
    }
    if (a.positional.size() > 2) throw PyError{"TypeError", "call_tool() takes at most 2 positional arguments"};
    for (const auto& [k, v] : a.keywords) {
        if (k == "params") {
            if (!v.is<DictPtr>()) throw PyError{"TypeError", "call_tool() params must be a dict"};
            for (const auto& [pk, pv] : v.as<DictPtr>()->items) params->set(pk, pv);
        } else {
            params->set(Value(k), v);
        }
    }
    if (!opts_.tool_caller) throw PyError{"ToolError", "no tool proxy attached to this session"};
    nlohmann::ordered_json request = to_json_value(Value(params));
    nlohmann::ordered_json response;
    try {
        response = opts_.tool_caller(tool, request);
    } catch (const std::exception& e) {
        throw PyError{"ToolError", e.what()};
    }
    ops_ += 1;
    return from_json_value(response);
}

inline void Interpreter::install_builtins() {
    auto def = [this](const std::string& name, std::function<Value(Interpreter&, CallArgs&)> fn, bool is_type = false) {
        builtins_[name] = Value(CallablePtr(std::make_shared<Builtin>(name, std::move(fn), is_type)));
    };
    using detail::arity;
    using detail::kwarg;

    def("print", [](Interpreter& in, CallArgs& a) {
        std::string sep = " ", end = "\n";
        if (const Value* s = kwarg(a, "sep"); s && !s->is_none()) sep = to_str(*s);
        if (const Value* e = kwarg(a, "end"); e && !e->is_none()) end = to_str(*e);
        std::string line;
        for (std::size_t i = 0; i < a.positional.size(); ++i) {
            if (i) line += sep;
            line += to_str(a.positional[i]);
        }
        in.write_out(line + end);
        return Value(NoneType{});
    });
    def("final_answer", [](Interpreter& in, CallArgs& a) {
        std::string text;
        for (std::size_t i = 0; i < a.positional.size(); ++i) {
            if (i) text += " ";
            text += to_str(a.positional[i]);
        }
        in.write_out(in.options().sentinel + " " + text + "\n");
        return Value(NoneType{});
    });
    def("call_tool", [](Interpreter& in, CallArgs& a) { return in.call_tool_helper(a); });
    def("sleep", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 1, "sleep");
        in.sleep_ms(as_double(a.positional[0]) * 1000.0);
        return Value(NoneType{});
    });
    def("len", [](Interpreter&, CallArgs& a) {
        arity(a, 1, 1, "len");
        const Value& v = a.positional[0];
        if (v.is<std::string>()) return Value(static_cast<std::int64_t>(v.as<std::string>().size()));
        if (v.is<ListPtr>()) return Value(static_cast<std::int64_t>(v.as<ListPtr>()->items.size()));
        if (v.is<TuplePtr>()) return Value(static_cast<std::int64_t>(v.as<TuplePtr>()->items.size()));
        if (v.is<DictPtr>()) return Value(static_cast<std::int64_t>(v.as<DictPtr>()->items.size()));
        throw PyError{"TypeError", "object of type '" + type_name(v) + "' has no len()"};
    });
    def("repr", [](Interpreter&, CallArgs& a) {
        arity(a, 1, 1, "repr");
        return Value(repr(a.positional[0]));
    });
    def("str", [](Interpreter&, CallArgs& a) {
        arity(a, 0, 1, "str");
        return Value(a.positional.empty() ? std::string() : to_str(a.positional[0]));
    }, true);
    def("int", [](Interpreter&, CallArgs& a) {
        arity(a, 0, 2, "int");
        if (a.positional.empty()) return Value(std::int64_t{0});
        const Value& v = a.positional[0];
        if (v.is<std::int64_t>() || v.is<bool>()) return Value(as_int(v));
        if (v.is<double>()) {
            double d = v.as<double>();
            if (!std::isfinite(d)) throw PyError{"ValueError", "cannot convert float to integer"};
            return Value(static_cast<std::int64_t>(std::trunc(d)));
        }
        if (v.is<std::string>()) {
            int base = a.positional.size() > 1 ? static_cast<int>(as_int(a.positional[1])) : 10;
            std::string s = detail::strip_chars(v.as<std::string>(), " \t\n\r", true, true);
            std::string digits;
            for (char c : s)
                if (c != '_') digits += c;
            try {
                std::size_t used = 0;
                long long x = std::stoll(digits, &used, base);
                if (used != digits.size() || digits.empty()) throw std::invalid_argument("x");
                return Value(static_cast<std::int64_t>(x));
            } catch (const std::exception&) {
                throw PyError{"ValueError", "invalid literal for int() with base " + std::to_string(base) + ": " + string_repr(v.as<std::string>())};
            }
        }
        throw PyError{"TypeError", "int() argument must be a string or a number, not '" + type_name(v) + "'"};
    }, true);
    def("float", [](Interpreter&, CallArgs& a) {
        arity(a, 0, 1, "float");
        if (a.positional.empty()) return Value(0.0);
        const Value& v = a.positional[0];
        if (v.is_numeric()) return Value(as_double(v));
        if (v.is<std::string>()) {
            std::string s = detail::strip_chars(v.as<std::string>(), " \t\n\r", true, true);
            std::string lower;
            for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (lower == "inf" || lower == "+inf" || lower == "infinity") return Value(std::numeric_limits<double>::infinity());
            if (lower == "-inf" || lower == "-infinity") return Value(-std::numeric_limits<double>::infinity());
            if (lower == "nan") return Value(std::numeric_limits<double>::quiet_NaN());
            try {
                std::size_t used = 0;
                double d = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument("x");
                return Value(d);
            } catch (const std::exception&) {
                throw PyError{"ValueError", "could not convert string to float: " + string_repr(v.as<std::string>())};
            }
        }
        throw PyError{"TypeError", "float() argument must be a string or a number, not '" + type_name(v) + "'"};
    }, true);
    def("bool", [](Interpreter&, CallArgs& a) {
        arity(a, 0, 1, "bool");
        return Value(!a.positional.empty() && truthy(a.positional[0]));
    }, true);
    def("list", [](Interpreter& in, CallArgs& a) {
        arity(a, 0, 1, "list");
        return a.positional.empty() ? make_list() : make_list(in.iterate(a.positional[0]));
    }, true);
    def("tuple", [](Interpreter& in, CallArgs& a) {
        arity(a, 0, 1, "tuple");
        return make_tuple(a.positional.empty() ? std::vector<Value>{} : in.iterate(a.positional[0]));
    }, true);
    def("dict", [](Interpreter& in, CallArgs& a) {
        arity(a, 0, 1, "dict");
        auto d = std::make_shared<Dict>();
        if (!a.positional.empty()) {
            if (a.positional[0].is<DictPtr>()) {
                *d = *a.positional[0].as<DictPtr>();
            } else {
                for (const auto& pair : in.iterate(a.positional[0])) {
                    auto kv = in.iterate(pair);
                    if (kv.size() != 2) throw PyError{"ValueError", "dictionary update sequence element has wrong length"};
                    d->set(kv[0], kv[1]);
                }
            }
        }
        for (const auto& [k, v] : a.keywords) d->set(Value(k), v);
        return Value(d);
    }, true);
    def("range", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 3, "range");
        std::int64_t start = 0, stop, step = 1;
        for (const auto& v : a.positional)
            if (!v.is<std::int64_t>() && !v.is<bool>()) throw PyError{"TypeError", "'" + type_name(v) + "' object cannot be interpreted as an integer"};
        if (a.positional.size() == 1) {
            stop = as_int(a.positional[0]);
        } else {
            start = as_int(a.positional[0]);
            stop = as_int(a.positional[1]);
            if (a.positional.size() == 3) step = as_int(a.positional[2]);
        }
        if (step == 0) throw PyError{"ValueError", "range() arg 3 must not be zero"};
        std::vector<Value> out;
        for (std::int64_t i = start; step > 0 ? i < stop : i > stop; i += step) {
            if (out.size() >= in.max_sequence()) throw PyError{"MemoryError", "range too large"};
            out.emplace_back(i);
        }
        return make_list(std::move(out));
    });
    def("enumerate", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 2, "enumerate");
        std::int64_t start = a.positional.size() > 1 ? as_int(a.positional[1]) : (kwarg(a, "start") ? as_int(*kwarg(a, "start")) : 0);
        std::vector<Value> out;
        for (auto& v : in.iterate(a.positional[0])) out.push_back(make_tuple({Value(start++), v}));
        return make_list(std::move(out));
    });
    def("zip", [](Interpreter& in, CallArgs& a) {
        std::vector<std::vector<Value>> seqs;
        for (const auto& v : a.positional) seqs.push_back(in.iterate(v));
        std::vector<Value> out;
        if (seqs.empty()) return make_list();
        std::size_t n = seqs[0].size();
        for (const auto& s : seqs) n = std::min(n, s.size());
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Value> row;
            for (const auto& s : seqs) row.push_back(s[i]);
            out.push_back(make_tuple(std::move(row)));
        }
        return make_list(std::move(out));
    });
    def("reversed", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 1, "reversed");
        auto items = in.iterate(a.positional[0]);
        std::reverse(items.begin(), items.end());
        return make_list(std::move(items));
    });
    def("sorted", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 1, "sorted");
        auto items = in.iterate(a.positional[0]);
        const Value* key = kwarg(a, "key");
        bool reverse = kwarg(a, "reverse") && truthy(*kwarg(a, "reverse"));
        std::vector<std::pair<Value, Value>> keyed;
        for (auto& v : items) {
            Value k = (key && !key->is_none()) ? in.call_value(*key, CallArgs{{v}, {}}) : v;
            keyed.emplace_back(std::move(k), std::move(v));
        }
        std::stable_sort(keyed.begin(), keyed.end(), [&](const auto& x, const auto& y) {
            return reverse ? compare_values(y.first, x.first) < 0 : compare_values(x.first, y.first) < 0;
        });
        std::vector<Value> out;
        for (auto& [k, v] : keyed) out.push_back(std::move(v));
        return make_list(std::move(out));
    });
    def("sum", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 2, "sum");
        Value acc = a.positional.size() > 1 ? a.positional[1] : Value(std::int64_t{0});
        for (auto& v : in.iterate(a.positional[0])) acc = in.binary("+", acc, v);
        return acc;
    });
    auto minmax = [](bool want_max) {
        return [want_max](Interpreter& in, CallArgs& a) {
            std::vector<Value> items = a.positional.size() == 1 ? in.iterate(a.positional[0]) : a.positional;
            const Value* key = kwarg(a, "key");
            if (items.empty()) {
                if (const Value* d = kwarg(a, "default")) return *d;
                throw PyError{"ValueError", std::string(want_max ? "max" : "min") + "() arg is an empty sequence"};
            }
            std::size_t best = 0;
            Value best_key = key ? in.call_value(*key, CallArgs{{items[0]}, {}}) : items[0];
            for (std::size_t i = 1; i < items.size(); ++i) {
                Value k = key ? in.call_value(*key, CallArgs{{items[i]}, {}}) : items[i];
                int c = compare_values(k, best_key);
                if (want_max ? c > 0 : c < 0) {
                    best = i;
                    best_key = k;
                }
            }
            return items[best];
        };
    };
    def("max", minmax(true));
    def("min", minmax(false));
    def("abs", [](Interpreter&, CallArgs& a) {
        arity(a, 1, 1, "abs");
        const Value& v = a.positional[0];
        if (v.is<double>()) return Value(std::fabs(v.as<double>()));
        if (v.is_numeric()) return Value(static_cast<std::int64_t>(std::llabs(as_int(v))));
        throw PyError{"TypeError", "bad operand type for abs(): '" + type_name(v) + "'"};
    });
    def("round", [](Interpreter&, CallArgs& a) {
        arity(a, 1, 2, "round");
        const Value& v = a.positional[0];
        if (!v.is_numeric()) throw PyError{"TypeError", "type " + type_name(v) + " doesn't define __round__ method"};
        if (a.positional.size() == 1 || a.positional[1].is_none()) {
            if (!v.is<double>()) return Value(as_int(v));
            return Value(static_cast<std::int64_t>(std::nearbyint(v.as<double>())));
        }
        std::int64_t nd = as_int(a.positional[1]);
        if (!v.is<double>()) return Value(as_int(v));
        double scale = std::pow(10.0, static_cast<double>(nd));
        return Value(std::nearbyint(v.as<double>() * scale) / scale);
    });
    def("any", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 1, "any");
        for (const auto& v : in.iterate(a.positional[0]))
            if (truthy(v)) return Value(true);
        return Value(false);
    });
    def("all", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 1, "all");
        for (const auto& v : in.iterate(a.positional[0]))
            if (!truthy(v)) return Value(false);
        return Value(true);
    });
    def("isinstance", [](Interpreter&, CallArgs& a) {
        arity(a, 2, 2, "isinstance");
        std::string actual = type_name(a.positional[0]);
        auto check = [&](const Value& t) {
            if (!t.is<CallablePtr>()) throw PyError{"TypeError", "isinstance() arg 2 must be a type or tuple of types"};
            std::string n = t.as<CallablePtr>()->name();
            if (n == actual) return true;
            if (n == "int" && actual == "bool") return true;
            if (n == "object") return true;
            return a.positional[0].is<ExcPtr>() && (n == "Exception" || n == "BaseException");
        };
        const Value& t = a.positional[1];
        if (t.is<TuplePtr>()) {
            for (const auto& x : t.as<TuplePtr>()->items)
                if (check(x)) return Value(true);
            return Value(false);
        }
        return Value(check(t));
    });
    def("type", [](Interpreter& in, CallArgs& a) {
        arity(a, 1, 1, "type");
        std::string n = type_name(a.positional[0]);
        auto it = in.builtins_.find(n);
        if (it != in.builtins_.end()) return it->second;
        return Value(n);
    });

    for (const char* name : {"Exception", "BaseException", "ValueError", "KeyError", "TypeError", "IndexError", "RuntimeError",
                             "ZeroDivisionError", "NameError", "AttributeError", "AssertionError", "ToolError", "LookupError",
                             "ArithmeticError", "NotImplementedError", "OverflowError", "TimeoutError", "ConnectionError",
                             "OSError", "StopIteration", "JSONDecodeError"}) {
        builtins_[name] = Value(CallablePtr(std::make_shared<ExcClass>(name)));
    }

    // modules
    auto json_mod = std::make_shared<Module>();
    json_mod->name = "json";
    json_mod->attrs["dumps"] = Value(CallablePtr(std::make_shared<Builtin>("dumps", [](Interpreter&, CallArgs& a) {
        arity(a, 1, 1, "dumps");
        int indent = -1;
        if (const Value* i = kwarg(a, "indent"); i && !i->is_none()) indent = static_cast<int>(as_int(*i));
        return Value(detail::py_json_dumps(a.positional[0], indent, 0));
    })));
    json_mod->attrs["loads"] = Value(CallablePtr(std::make_shared<Builtin>("loads", [](Interpreter&, CallArgs& a) {
        arity(a, 1, 1, "loads");
        if (!a.positional[0].is<std::string>()) throw PyError{"TypeError", "the JSON object must be str"};
        try {
            return from_json_value(nlohmann::ordered_json::parse(a.positional[0].as<std::string>()));
        } catch (const nlohmann::json::exception& e) {
            throw PyError{"JSONDecodeError", e.what()};
        }
    })));
    json_mod->attrs["JSONDecodeError"] = builtins_["JSONDecodeError"];
    modules_["json"] = json_mod;

    auto time_mod = std::make_shared<Module>();
    time_mod->name = "time";
    time_mod->attrs["sleep"] = builtins_["sleep"];
    modules_["time"] = time_mod;

    auto math_mod = std::make_shared<Module>();
    math_mod->name = "math";
    auto unary_math = [&](const char* name, double (*fn)(double)) {
        math_mod->attrs[name] = Value(CallablePtr(std::make_shared<Builtin>(name, [fn, name](Interpreter&, CallArgs& a) {
            arity(a, 1, 1, name);
            if (!a.positional[0].is_numeric()) throw PyError{"TypeError", "must be real number, not " + type_name(a.positional[0])};
            return Value(fn(as_double(a.positional[0])));
        })));
    };
    unary_math("sqrt", [](double x) {
        if (x < 0) throw PyError{"ValueError", "math domain error"};
        return std::sqrt(x);
    });
    unary_math("exp", [](double x) { return std::exp(x); });
    unary_math("log", [](double x) {
        if (x <= 0) throw PyError{"ValueError", "math domain error"};
        return std::log(x);
    });
    unary_math("fabs", [](double x) { return std::fabs(x); });
    for (const char* name : {"floor", "ceil"}) {
        bool floor = std::string(name) == "floor";
        math_mod->attrs[name] = Value(CallablePtr(std::make_shared<Builtin>(name, [floor, name](Interpreter&, CallArgs& a) {
            arity(a, 1, 1, name);
            double x = as_double(a.positional[0]);
            return Value(static_cast<std::int64_t>(floor ? std::floor(x) : std::ceil(x)));
        })));
    }
    math_mod->attrs["pi"] = Value(3.141592653589793);
    math_mod->attrs["e"] = Value(2.718281828459045);
    math_mod->attrs["inf"] = Value(std::numeric_limits<double>::infinity());
    modules_["math"] = math_mod;
}

}  // namespace codetool::minipy
