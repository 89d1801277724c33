#include <gtest/gtest.h>

#include "codetool/minipy/interpreter.hpp"

using namespace codetool::minipy;

namespace {

RunResult run1(const std::string& code, std::int64_t timeout = 10000) {
    Interpreter in;
    return in.run(code, timeout);
}

}  // namespace

TEST(Minipy, PrintsArithmetic) {
    auto r = run1("x = 3\ny = 4\nprint(x * y, x / 2, 7 // 2, -7 % 3)\n");
    EXPECT_EQ(r.status, RunResult::Status::Ok) << r.err;
    EXPECT_EQ(r.out, "12 1.5 3 2\n");
}

TEST(Minipy, StringsAndFormatting) {
    auto r = run1("name = 'Ada'\nprint(f'{name!r} has {len(name)} chars: {3.14159:.2f} {42:>5}|')\n"
                  "print('{} + {} = {}'.format(1, 2, 1 + 2))\nprint('%s=%d' % ('k', 5))\nprint(','.join(['a','b']).upper())\n");
    EXPECT_EQ(r.status, RunResult::Status::Ok) << r.err;
    EXPECT_EQ(r.out, "'Ada' has 3 chars: 3.14    42|\n1 + 2 = 3\nk=5\nA,B\n");
}

TEST(Minipy, ContainersAndComprehensions) {
    auto r = run1(
        "d = {'b': 2, 'a': 1}\nd['c'] = 3\nprint(d)\nprint(sorted(d.items(), key=lambda kv: -kv[1]))\n"
        "sq = [i * i for i in range(5) if i % 2 == 0]\nprint(sq, sum(sq), max(sq))\n"
        "print({k: v for k, v in zip('xy', [1, 2])})\nprint([1, 2, 3][::-1], 'hello'[1:3])\n"
        "a, b = (1, 2)\nprint(a, b, (1,), None, True)\n");
    EXPECT_EQ(r.status, RunResult::Status::Ok) << r.err;
    EXPECT_EQ(r.out,
              "{'b': 2, 'a': 1, 'c': 3}\n[('c', 3), ('b', 2), ('a', 1)]\n[0, 4, 16] 20 16\n{'x': 1, 'y': 2}\n"
              "[3, 2, 1] el\n1 2 (1,) None True\n");
}

TEST(Minipy, FunctionsAndExceptions) {
    auto r = run1(
        "def fib(n):\n    if n < 2:\n        return n\n    return fib(n - 1) + fib(n - 2)\nprint(fib(15))\n"
        "try:\n    {}['missing']\nexcept KeyError as e:\n    print('caught', repr(e.args[0]))\nfinally:\n    print('done')\n"
        "total = 0\nfor i in range(10):\n    if i == 5:\n        break\n    if i % 2:\n        continue\n    total += i\nprint(total)\n");
    EXPECT_EQ(r.status, RunResult::Status::Ok) << r.err;
    EXPECT_EQ(r.out, "610\ncaught \"'missing'\"\ndone\n6\n");
}

TEST(Minipy, UncaughtErrorKeepsPartialOutputAndNamespace) {
    Interpreter in;
    auto r = in.run("a = 1\nprint('before')\nx = 1 / 0\nb = 2\n", 1000);
    EXPECT_EQ(r.status, RunResult::Status::Error);
    EXPECT_EQ(r.out, "before\n");
    EXPECT_NE(r.err.find("ZeroDivisionError: division by zero"), std::string::npos);
    EXPECT_NE(r.err.find("line 3"), std::string::npos);
    EXPECT_TRUE(in.has_global("a"));
    EXPECT_FALSE(in.has_global("b"));
    auto r2 = in.run("print(a + 1)\n", 1000);
    EXPECT_EQ(r2.out, "2\n");
}

TEST(Minipy, SyntaxErrorReported) {
    auto r = run1("if x\n  print(1)\n");
    EXPECT_EQ(r.status, RunResult::Status::Error);
    EXPECT_NE(r.err.find("SyntaxError"), std::string::npos);
}

TEST(Minipy, VirtualClockTimeout) {
    auto r = run1("while True:\n    pass\n", 50);
    EXPECT_EQ(r.status, RunResult::Status::Timeout);
    EXPECT_GE(r.elapsed_ms, 50);
    auto s = run1("import time\ntime.sleep(0.2)\nprint('ok')\n", 1000);
    EXPECT_EQ(s.status, RunResult::Status::Ok);
    EXPECT_GE(s.elapsed_ms, 200);
    auto t = run1("import time\ntime.sleep(2)\n", 1000);
    EXPECT_EQ(t.status, RunResult::Status::Timeout);
}

TEST(Minipy, ElapsedIsDeterministic) {
    std::string code = "s = 0\nfor i in range(2000):\n    s += i * i\nprint(s)\n";
    auto a = run1(code), b = run1(code);
    EXPECT_EQ(a.elapsed_ms, b.elapsed_ms);
    EXPECT_EQ(a.out, "2664667000\n");
}

TEST(Minipy, JsonModule) {
    auto r = run1("import json\nd = json.loads('{\"a\": [1, 2.5, null, true], \"b\": \"x\"}')\n"
                  "print(d['a'], json.dumps(d))\nprint(json.dumps({'k': 'é'}))\n");
    EXPECT_EQ(r.status, RunResult::Status::Ok) << r.err;
    EXPECT_EQ(r.out, "[1, 2.5, None, True] {\"a\": [1, 2.5, null, true], \"b\": \"x\"}\n{\"k\": \"\\u00e9\"}\n");
}

TEST(Minipy, ToolCallerHook) {
    Interpreter::Options opts;
    opts.tool_caller = [](const std::string& tool, const nlohmann::ordered_json& p) -> nlohmann::ordered_json {
        if (tool == "bad") throw std::runtime_error("HTTP 503");
        return {{"tool", tool}, {"echo", p}};
    };
    Interpreter in(opts);
    auto r = in.run("r = call_tool('weather', {'city': 'Paris'}, units='C')\nprint(r['echo'])\n"
                    "try:\n    call_tool('bad')\nexcept ToolError as e:\n    print('err', e)\nfinal_answer('sunny', 21)\n",
                    1000);
    EXPECT_EQ(r.status, RunResult::Status::Ok) << r.err;
    EXPECT_EQ(r.out, "{'city': 'Paris', 'units': 'C'}\nerr HTTP 503\nFINAL ANSWER: sunny 21\n");
}

TEST(Minipy, RecursionLimit) {
    auto r = run1("def f(n):\n    return f(n + 1)\nf(0)\n");
    EXPECT_EQ(r.status, RunResult::Status::Error);
    EXPECT_NE(r.err.find("RecursionError"), std::string::npos);
}
