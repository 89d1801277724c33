#pragma once
// Tokenizer and recursive-descent parser for the Python subset understood by
// the in-process runner: assignments (incl. tuple unpacking and augmented),
// if/elif/else, for/while with break/continue, def/return, try/except/finally,
// raise, assert, del, global, import, comprehensions, f-strings, lambdas,
// conditional expressions and the usual arithmetic/comparison/boolean operators.

#include "value.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace codetool::minipy {

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

enum class Tok { Name, Int, Float, String, Op, Newline, Indent, Dedent, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;  // name, operator, or decoded string literal
    bool fstring = false;
    std::int64_t ival = 0;
    double fval = 0.0;
    int line = 1;
};

inline PyError syntax_error(const std::string& msg, int line) { return PyError{"SyntaxError", msg, line}; }

namespace detail {

inline void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

inline bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || (c & 0x80); }
inline bool is_ident_char(char c) { return is_ident_start(c) || std::isdigit(static_cast<unsigned char>(c)); }

}  // namespace detail

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run() {
        indents_.push_back(0);
        bool at_line_start = true;
        while (pos_ < src_.size()) {
            if (at_line_start && depth_ == 0) {
                if (!handle_indentation()) continue;
                at_line_start = false;
            }
            char c = src_[pos_];
            if (c == '\n') {
                ++pos_;
                if (depth_ == 0) {
                    emit_newline();
                    at_line_start = true;
                }
                ++line_;
                continue;
            }
            if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
                ++pos_;
                continue;
            }
            if (c == '#') {
                while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
                continue;
            }
            if (c == '\\' && pos_ + 1 < src_.size() && (src_[pos_ + 1] == '\n' || src_[pos_ + 1] == '\r')) {
                pos_ += 1;
                if (src_[pos_] == '\r') ++pos_;
                if (pos_ < src_.size() && src_[pos_] == '\n') ++pos_;
                ++line_;
                continue;
            }
            if (detail::is_ident_start(c)) {
                lex_name_or_string();
                continue;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) ||
                (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
                lex_number();
                continue;
            }
            if (c == '\'' || c == '"') {
                lex_string(false, false);
                continue;
            }
            lex_operator();
        }
        emit_newline();
        while (indents_.size() > 1) {
            indents_.pop_back();
            push(Tok::Dedent, "");
        }
        push(Tok::End, "");
        return std::move(toks_);
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int depth_ = 0;
    std::vector<int> indents_;
    std::vector<Token> toks_;

    void push(Tok k, std::string text) {
        Token t;
        t.kind = k;
        t.text = std::move(text);
        t.line = line_;
        toks_.push_back(std::move(t));
    }

    void emit_newline() {
        if (!toks_.empty() && toks_.back().kind != Tok::Newline && toks_.back().kind != Tok::Indent &&
            toks_.back().kind != Tok::Dedent)
            push(Tok::Newline, "");
    }

    // Returns false when the line was blank/comment-only and has been consumed.
    bool handle_indentation() {
        int col = 0;
        std::size_t p = pos_;
        while (p < src_.size() && (src_[p] == ' ' || src_[p] == '\t' || src_[p] == '\f')) {
            col = src_[p] == '\t' ? (col / 8 + 1) * 8 : col + 1;
            ++p;
        }
        if (p >= src_.size()) {
            pos_ = p;
            return false;
        }
        if (src_[p] == '\n' || src_[p] == '#' || src_[p] == '\r') {
            while (p < src_.size() && src_[p] != '\n') ++p;
            if (p < src_.size()) {
                ++p;
                ++line_;
            }
            pos_ = p;
            return false;
        }
        pos_ = p;
        if (col > indents_.back()) {
            indents_.push_back(col);
            push(Tok::Indent, "");
        } else {
            while (col < indents_.back()) {
                indents_.pop_back();
                push(Tok::Dedent, "");
            }
            if (col != indents_.back()) throw PyError{"IndentationError", "unindent does not match any outer indentation level", line_};
        }
        return true;
    }

    void lex_name_or_string() {
        std::size_t start = pos_;
        while (pos_ < src_.size() && detail::is_ident_char(src_[pos_])) ++pos_;
        std::string word(src_.substr(start, pos_ - start));
        if (pos_ < src_.size() && (src_[pos_] == '\'' || src_[pos_] == '"') && word.size() <= 2) {
            std::string lower;
            for (char ch : word) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            bool ok = true, raw = false, f = false;
            for (char ch : lower) {
                if (ch == 'r') raw = true;
                else if (ch == 'f') f = true;
                else if (ch == 'b' || ch == 'u') {
                } else ok = false;
            }
            if (ok) {
                lex_string(raw, f);
                return;
            }
        }
        push(Tok::Name, std::move(word));
    }

    void lex_number() {
        std::size_t start = pos_;
        bool is_float = false;
        if (src_[pos_] == '0' && pos_ + 1 < src_.size() && (src_[pos_ + 1] == 'x' || src_[pos_ + 1] == 'X')) {
            pos_ += 2;
            while (pos_ < src_.size() && (std::isxdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
            std::string digits;
            for (char ch : src_.substr(start + 2, pos_ - start - 2))
                if (ch != '_') digits += ch;
            Token t;
            t.kind = Tok::Int;
            t.ival = static_cast<std::int64_t>(std::stoull(digits, nullptr, 16));
            t.line = line_;
            toks_.push_back(t);
            return;
        }
        while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
        if (pos_ < src_.size() && src_[pos_] == '.') {
            is_float = true;
            ++pos_;
            while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                is_float = true;
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            } else {
                pos_ = save;
            }
        }
        std::string text;
        for (char ch : src_.substr(start, pos_ - start))
            if (ch != '_') text += ch;
        Token t;
        t.line = line_;
        if (is_float) {
            t.kind = Tok::Float;
            t.fval = std::stod(text);
        } else {
            t.kind = Tok::Int;
            try {
                t.ival = std::stoll(text);
            } catch (const std::out_of_range&) {
                t.kind = Tok::Float;
                t.fval = std::stod(text);
            }
        }
        toks_.push_back(t);
    }

    void lex_string(bool raw, bool fstring) {
        char q = src_[pos_];
        bool triple = pos_ + 2 < src_.size() && src_[pos_ + 1] == q && src_[pos_ + 2] == q;
        pos_ += triple ? 3 : 1;
        int start_line = line_;
        std::string out;
        while (true) {
            if (pos_ >= src_.size()) throw syntax_error("unterminated string literal", start_line);
            char c = src_[pos_];
            if (triple) {
                if (c == q && pos_ + 2 < src_.size() + 0 && src_.substr(pos_, 3) == std::string(3, q)) {
                    pos_ += 3;
                    break;
                }
            } else if (c == q) {
                ++pos_;
                break;
            } else if (c == '\n') {
                throw syntax_error("unterminated string literal", start_line);
            }
            if (c == '\n') ++line_;
            if (c == '\\' && pos_ + 1 < src_.size()) {
                char n = src_[pos_ + 1];
                if (raw) {
                    out += c;
                    out += n;
                    if (n == '\n') ++line_;
                    pos_ += 2;
                    continue;
                }
                pos_ += 2;
                switch (n) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    case '0': out += '\0'; break;
                    case '\\': out += '\\'; break;
                    case '\'': out += '\''; break;
                    case '"': out += '"'; break;
                    case '\n': ++line_; break;
                    case 'x': {
                        auto hex = std::string(src_.substr(pos_, 2));
                        pos_ += 2;
                        detail::append_utf8(out, static_cast<std::uint32_t>(std::stoul(hex, nullptr, 16)));
                        break;
                    }
                    case 'u': {
                        auto hex = std::string(src_.substr(pos_, 4));
                        pos_ += 4;
                        detail::append_utf8(out, static_cast<std::uint32_t>(std::stoul(hex, nullptr, 16)));
                        break;
                    }
                    default:
                        out += '\\';
                        out += n;
                }
                continue;
            }
            out += c;
            ++pos_;
        }
        Token t;
        t.kind = Tok::String;
        t.text = std::move(out);
        t.fstring = fstring;
        t.line = start_line;
        toks_.push_back(std::move(t));
    }

    void lex_operator() {
        static const char* ops3[] = {"**=", "//=", ">>=", "<<=", "..."};
        static const char* ops2[] = {"**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "->", ":=", "<<", ">>", "&=", "|="};
        for (const char* op : ops3)
            if (src_.substr(pos_, 3) == op) {
                push(Tok::Op, op);
                pos_ += 3;
                return;
            }
        for (const char* op : ops2)
            if (src_.substr(pos_, 2) == op) {
                push(Tok::Op, op);
                pos_ += 2;
                return;
            }
        char c = src_[pos_];
        static const std::string singles = "+-*/%<>=()[]{},:.;@&|^~";
        if (singles.find(c) == std::string::npos)
            throw syntax_error(std::string("invalid character '") + c + "'", line_);
        if (c == '(' || c == '[' || c == '{') ++depth_;
        if ((c == ')' || c == ']' || c == '}') && depth_ > 0) --depth_;
        push(Tok::Op, std::string(1, c));
        ++pos_;
    }
};

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

struct Expr;
struct Stmt;
using ExprPtr = std::shared_ptr<Expr>;
using StmtPtr = std::shared_ptr<Stmt>;
using Block = std::vector<StmtPtr>;

struct FStringPart {
    std::string literal;
    ExprPtr expr;  // null for a literal part
    char conversion = 0;  // 'r', 's' or 0
    std::string spec;
};

struct Comprehension {
    ExprPtr target;
    ExprPtr iter;
    std::vector<ExprPtr> conds;
};

struct Param {
    std::string name;
    ExprPtr default_value;
};

struct Expr {
    enum class K {
        Const, Name, FString, List, Tuple, Dict, Set, Subscript, Slice, Attribute, Call,
        BinOp, Unary, BoolOp, Compare, IfExp, ListComp, DictComp, Lambda, Starred
    };
    K k = K::Const;
    int line = 0;
    Value constant;
    std::string name;                // Name id, Attribute attr, operator, BoolOp kind
    std::vector<ExprPtr> items;      // operands / elements / args
    std::vector<std::string> ops;    // Compare operators
    std::vector<std::string> kwnames;  // Call keyword names (paired with kwvalues)
    std::vector<ExprPtr> kwvalues;
    std::vector<FStringPart> parts;
    std::vector<Comprehension> comps;
    std::vector<Param> params;       // Lambda
};

struct ExceptHandler {
    ExprPtr type;  // null = bare except
    std::string name;
    Block body;
};

struct Stmt {
    enum class K { ExprStmt, Assign, AugAssign, If, While, For, Break, Continue, Pass, Def, Return, Try, Raise, Import, FromImport, Assert, Del, Global };
    K k = K::Pass;
    int line = 0;
    std::vector<ExprPtr> targets;  // Assign (chained), Del
    ExprPtr value;                 // Assign/AugAssign/ExprStmt/Return/Raise/If test/While test/For iter/Assert test
    ExprPtr target;                // AugAssign/For
    ExprPtr msg;                   // Assert
    std::string op;                // AugAssign operator
    Block body, orelse, finalbody;
    std::vector<ExceptHandler> handlers;
    std::string name;  // Def name, FromImport module
    std::vector<Param> params;
    std::vector<std::pair<std::string, std::string>> names;  // Import / Global (name, alias)
};

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

class Parser {
public:
    explicit Parser(std::vector<Token> toks) : t_(std::move(toks)) {}

    Block parse_module() {
        Block out;
        skip_newlines();
        while (!at(Tok::End)) {
            parse_statement(out);
            skip_newlines();
        }
        return out;
    }

    // Standalone expression (used for f-string fields).
    ExprPtr parse_standalone_expression() {
        auto e = parse_expression_list();
        skip_newlines();
        if (!at(Tok::End)) throw syntax_error("invalid syntax in f-string expression", cur().line);
        return e;
    }

private:
    std::vector<Token> t_;
    std::size_t i_ = 0;

    const Token& cur() const { return t_[i_]; }
    const Token& peek(std::size_t n = 1) const { return t_[std::min(i_ + n, t_.size() - 1)]; }
    bool at(Tok k) const { return cur().kind == k; }
    bool at_op(std::string_view op) const { return cur().kind == Tok::Op && cur().text == op; }
    bool at_kw(std::string_view kw) const { return cur().kind == Tok::Name && cur().text == kw; }
    Token take() { return t_[i_ < t_.size() - 1 ? i_++ : i_]; }

    void expect_op(std::string_view op) {
        if (!at_op(op)) throw syntax_error("expected '" + std::string(op) + "'", cur().line);
        take();
    }
    void expect_kw(std::string_view kw) {
        if (!at_kw(kw)) throw syntax_error("expected '" + std::string(kw) + "'", cur().line);
        take();
    }
    std::string expect_name() {
        if (!at(Tok::Name) || is_keyword(cur().text)) throw syntax_error("expected identifier", cur().line);
        return take().text;
    }
    void skip_newlines() {
        while (at(Tok::Newline)) take();
    }

    static bool is_keyword(const std::string& s) {
        static const char* kws[] = {"False", "None", "True", "and", "as", "assert", "break", "class", "continue", "def", "del",
                                    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is",
                                    "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with", "yield"};
        for (const char* k : kws)
            if (s == k) return true;
        return false;
    }

    ExprPtr node(Expr::K k, int line) {
        auto e = std::make_shared<Expr>();
        e->k = k;
        e->line = line;
        return e;
    }
    StmtPtr snode(Stmt::K k, int line) {
        auto s = std::make_shared<Stmt>();
        s->k = k;
        s->line = line;
        return s;
    }

    // --- statements --------------------------------------------------------

    void parse_statement(Block& out) {
        if (at(Tok::Name)) {
            const auto& w = cur().text;
            if (w == "if") return out.push_back(parse_if());
            if (w == "while") return out.push_back(parse_while());
            if (w == "for") return out.push_back(parse_for());
            if (w == "def") return out.push_back(parse_def());
            if (w == "try") return out.push_back(parse_try());
            if (w == "class" || w == "with" || w == "async" || w == "yield" || w == "nonlocal")
                throw syntax_error("'" + w + "' statements are not supported by this runner", cur().line);
        }
        if (at(Tok::Indent)) throw PyError{"IndentationError", "unexpected indent", cur().line};
        parse_simple_line(out);
    }

    void parse_simple_line(Block& out) {
        out.push_back(parse_small_statement());
        while (at_op(";")) {
            take();
            if (at(Tok::Newline) || at(Tok::End)) break;
            out.push_back(parse_small_statement());
        }
        if (!at(Tok::Newline) && !at(Tok::End) && !at(Tok::Dedent)) throw syntax_error("invalid syntax", cur().line);
        if (at(Tok::Newline)) take();
    }

    Block parse_suite() {
        expect_op(":");
        Block body;
        if (!at(Tok::Newline)) {
            parse_simple_line(body);
            return body;
        }
        take();
        skip_newlines();
        if (!at(Tok::Indent)) throw PyError{"IndentationError", "expected an indented block", cur().line};
        take();
        while (!at(Tok::Dedent) && !at(Tok::End)) {
            parse_statement(body);
            skip_newlines();
        }
        if (at(Tok::Dedent)) take();
        return body;
    }

    StmtPtr parse_if() {
        int line = take().line;
        auto s = snode(Stmt::K::If, line);
        s->value = parse_expression();
        s->body = parse_suite();
        skip_newlines();
        if (at_kw("elif")) {
            s->orelse.push_back(parse_if());
        } else if (at_kw("else")) {
            take();
            s->orelse = parse_suite();
        }
        return s;
    }

    StmtPtr parse_while() {
        int line = take().line;
        auto s = snode(Stmt::K::While, line);
        s->value = parse_expression();
        s->body = parse_suite();
        skip_newlines();
        if (at_kw("else")) {
            take();
            s->orelse = parse_suite();
        }
        return s;
    }

    StmtPtr parse_for() {
        int line = take().line;
        auto s = snode(Stmt::K::For, line);
        s->target = parse_target_list();
        expect_kw("in");
        s->value = parse_expression_list();
        s->body = parse_suite();
        skip_newlines();
        if (at_kw("else")) {
            take();
            s->orelse = parse_suite();
        }
        return s;
    }

    std::vector<Param> parse_params(std::string_view closer) {
        std::vector<Param> params;
        while (!at_op(closer)) {
            Param p;
            p.name = expect_name();
            if (at_op(":") && closer == ")") {  // annotation
                take();
                parse_expression();
            }
            if (at_op("=")) {
                take();
                p.default_value = parse_expression();
            }
            params.push_back(std::move(p));
            if (!at_op(",")) break;
            take();
        }
        return params;
    }

    StmtPtr parse_def() {
        int line = take().line;
        auto s = snode(Stmt::K::Def, line);
        s->name = expect_name();
        expect_op("(");
        s->params = parse_params(")");
        expect_op(")");
        if (at_op("->")) {
            take();
            parse_expression();
        }
        s->body = parse_suite();
        return s;
    }

    StmtPtr parse_try() {
        int line = take().line;
        auto s = snode(Stmt::K::Try, line);
        s->body = parse_suite();
        skip_newlines();
        while (at_kw("except")) {
            take();
            ExceptHandler h;
            if (!at_op(":")) {
                h.type = parse_expression();
                if (at_kw("as")) {
                    take();
                    h.name = expect_name();
                }
            }
            h.body = parse_suite();
            s->handlers.push_back(std::move(h));
            skip_newlines();
        }
        if (at_kw("else")) {
            take();
            s->orelse = parse_suite();
            skip_newlines();
        }
        if (at_kw("finally")) {
            take();
            s->finalbody = parse_suite();
        }
        if (s->handlers.empty() && s->finalbody.empty()) throw syntax_error("expected 'except' or 'finally' block", line);
        return s;
    }

    StmtPtr parse_small_statement() {
        int line = cur().line;
        if (at(Tok::Name)) {
            const std::string w = cur().text;
            if (w == "pass") return take(), snode(Stmt::K::Pass, line);
            if (w == "break") return take(), snode(Stmt::K::Break, line);
            if (w == "continue") return take(), snode(Stmt::K::Continue, line);
            if (w == "return") {
                take();
                auto s = snode(Stmt::K::Return, line);
                if (!at(Tok::Newline) && !at(Tok::End) && !at_op(";")) s->value = parse_expression_list();
                return s;
            }
            if (w == "raise") {
                take();
                auto s = snode(Stmt::K::Raise, line);
                if (!at(Tok::Newline) && !at(Tok::End) && !at_op(";")) {
                    s->value = parse_expression();
                    if (at_kw("from")) {
                        take();
                        parse_expression();
                    }
                }
                return s;
            }
            if (w == "assert") {
                take();
                auto s = snode(Stmt::K::Assert, line);
                s->value = parse_expression();
                if (at_op(",")) {
                    take();
                    s->msg = parse_expression();
                }
                return s;
            }
            if (w == "del") {
                take();
                auto s = snode(Stmt::K::Del, line);
                s->targets.push_back(parse_expression());
                while (at_op(",")) {
                    take();
                    s->targets.push_back(parse_expression());
                }
                return s;
            }
            if (w == "global") {
                take();
                auto s = snode(Stmt::K::Global, line);
                s->names.emplace_back(expect_name(), "");
                while (at_op(",")) {
                    take();
                    s->names.emplace_back(expect_name(), "");
                }
                return s;
            }
            if (w == "import") {
                take();
                auto s = snode(Stmt::K::Import, line);
                do {
                    if (at_op(",")) take();
                    std::string mod = expect_name();
                    while (at_op(".")) {
                        take();
                        mod += "." + expect_name();
                    }
                    std::string alias = mod;
                    if (at_kw("as")) {
                        take();
                        alias = expect_name();
                    }
                    s->names.emplace_back(mod, alias);
                } while (at_op(","));
                return s;
            }
            if (w == "from") {
                take();
                auto s = snode(Stmt::K::FromImport, line);
                s->name = expect_name();
                while (at_op(".")) {
                    take();
                    s->name += "." + expect_name();
                }
                expect_kw("import");
                bool paren = at_op("(");
                if (paren) take();
                do {
                    if (at_op(",")) take();
                    std::string n = expect_name();
                    std::string alias = n;
                    if (at_kw("as")) {
                        take();
                        alias = expect_name();
                    }
                    s->names.emplace_back(n, alias);
                } while (at_op(","));
                if (paren) expect_op(")");
                return s;
            }
        }
        auto first = parse_expression_list();
        static const char* aug[] = {"+=", "-=", "*=", "/=", "//=", "%=", "**="};
        for (const char* op : aug) {
            if (at_op(op)) {
                take();
                check_target(first);
                auto s = snode(Stmt::K::AugAssign, line);
                s->target = first;
                s->op = std::string(op).substr(0, std::string(op).size() - 1);
                s->value = parse_expression_list();
                return s;
            }
        }
        if (at_op(":") && first->k == Expr::K::Name) {  // annotated assignment
            take();
            parse_expression();
            if (!at_op("=")) return snode(Stmt::K::Pass, line);
        }
        if (at_op("=")) {
            auto s = snode(Stmt::K::Assign, line);
            s->targets.push_back(first);
            while (at_op("=")) {
                take();
                s->targets.push_back(parse_expression_list());
            }
            s->value = s->targets.back();
            s->targets.pop_back();
            for (const auto& t : s->targets) check_target(t);
            return s;
        }
        auto s = snode(Stmt::K::ExprStmt, line);
        s->value = first;
        return s;
    }

    void check_target(const ExprPtr& e) {
        switch (e->k) {
            case Expr::K::Name:
            case Expr::K::Subscript:
            case Expr::K::Attribute: return;
            case Expr::K::Tuple:
            case Expr::K::List:
                for (const auto& it : e->items) check_target(it);
                return;
            default: throw syntax_error("cannot assign to expression", e->line);
        }
    }

    // --- expressions -------------------------------------------------------

    ExprPtr parse_target_list() {
        int line = cur().line;
        std::vector<ExprPtr> items;
        bool trailing = false;
        items.push_back(parse_target());
        while (at_op(",")) {
            take();
            trailing = true;
            if (at_kw("in") || at_op("=")) break;
            items.push_back(parse_target());
            trailing = false;
        }
        if (items.size() == 1 && !trailing) return items[0];
        auto t = node(Expr::K::Tuple, line);
        t->items = std::move(items);
        return t;
    }

    ExprPtr parse_target() {
        auto e = parse_primary();
        check_target(e);
        return e;
    }

    bool at_expression_end() const {
        if (at(Tok::Newline) || at(Tok::End) || at(Tok::Dedent)) return true;
        if (cur().kind == Tok::Op) {
            static const char* enders[] = {")", "]", "}", "=", ":", ";", "+=", "-=", "*=", "/=", "//=", "%=", "**="};
            for (const char* e : enders)
                if (cur().text == e) return true;
        }
        return at_kw("in") || at_kw("for");
    }

    ExprPtr parse_expression_list() {
        int line = cur().line;
        auto first = parse_expression_or_starred();
        if (!at_op(",")) return first;
        auto t = node(Expr::K::Tuple, line);
        t->items.push_back(first);
        while (at_op(",")) {
            take();
            if (at_expression_end()) break;
            t->items.push_back(parse_expression_or_starred());
        }
        return t;
    }

    ExprPtr parse_expression_or_starred() {
        if (at_op("*")) {
            int line = take().line;
            auto s = node(Expr::K::Starred, line);
            s->items.push_back(parse_or());
            return s;
        }
        return parse_expression();
    }

    ExprPtr parse_expression() {
        if (at_kw("lambda")) {
            int line = take().line;
            auto l = node(Expr::K::Lambda, line);
            l->params = parse_params(":");
            expect_op(":");
            l->items.push_back(parse_expression());
            return l;
        }
        auto body = parse_or();
        if (at_kw("if")) {
            int line = take().line;
            auto e = node(Expr::K::IfExp, line);
            auto test = parse_or();
            expect_kw("else");
            auto orelse = parse_expression();
            e->items = {test, body, orelse};
            return e;
        }
        return body;
    }

    ExprPtr parse_or() {
        auto left = parse_and();
        while (at_kw("or")) {
            int line = take().line;
            auto e = node(Expr::K::BoolOp, line);
            e->name = "or";
            e->items = {left, parse_and()};
            left = e;
        }
        return left;
    }

    ExprPtr parse_and() {
        auto left = parse_not();
        while (at_kw("and")) {
            int line = take().line;
            auto e = node(Expr::K::BoolOp, line);
            e->name = "and";
            e->items = {left, parse_not()};
            left = e;
        }
        return left;
    }

    ExprPtr parse_not() {
        if (at_kw("not")) {
            int line = take().line;
            auto e = node(Expr::K::Unary, line);
            e->name = "not";
            e->items.push_back(parse_not());
            return e;
        }
        return parse_comparison();
    }

    ExprPtr parse_comparison() {
        auto left = parse_arith();
        ExprPtr cmp;
        while (true) {
            std::string op;
            if (cur().kind == Tok::Op && (cur().text == "<" || cur().text == ">" || cur().text == "==" || cur().text == "!=" ||
                                          cur().text == "<=" || cur().text == ">=")) {
                op = take().text;
            } else if (at_kw("in")) {
                take();
                op = "in";
            } else if (at_kw("not") && peek().kind == Tok::Name && peek().text == "in") {
                take();
                take();
                op = "not in";
            } else if (at_kw("is")) {
                take();
                op = "is";
                if (at_kw("not")) {
                    take();
                    op = "is not";
                }
            } else {
                break;
            }
            if (!cmp) {
                cmp = node(Expr::K::Compare, left->line);
                cmp->items.push_back(left);
            }
            cmp->ops.push_back(op);
            cmp->items.push_back(parse_arith());
        }
        return cmp ? cmp : left;
    }

    ExprPtr binop(const std::string& op, ExprPtr l, ExprPtr r, int line) {
        auto e = node(Expr::K::BinOp, line);
        e->name = op;
        e->items = {std::move(l), std::move(r)};
        return e;
    }

    ExprPtr parse_arith() {
        auto left = parse_term();
        while (at_op("+") || at_op("-")) {
            auto tk = take();
            left = binop(tk.text, left, parse_term(), tk.line);
        }
        return left;
    }

    ExprPtr parse_term() {
        auto left = parse_factor();
        while (at_op("*") || at_op("/") || at_op("//") || at_op("%")) {
            auto tk = take();
            left = binop(tk.text, left, parse_factor(), tk.line);
        }
        return left;
    }

    ExprPtr parse_factor() {
        if (at_op("-") || at_op("+")) {
            auto tk = take();
            auto e = node(Expr::K::Unary, tk.line);
            e->name = tk.text;
            e->items.push_back(parse_factor());
            return e;
        }
        return parse_power();
    }

    ExprPtr parse_power() {
        auto base = parse_primary();
        if (at_op("**")) {
            auto tk = take();
            return binop("**", base, parse_factor(), tk.line);
        }
        return base;
    }

    ExprPtr parse_primary() {
        auto e = parse_atom();
        while (true) {
            if (at_op(".")) {
                int line = take().line;
                auto a = node(Expr::K::Attribute, line);
                a->name = expect_name();
                a->items.push_back(e);
                e = a;
            } else if (at_op("(")) {
                e = parse_call(e);
            } else if (at_op("[")) {
                int line = take().line;
                auto s = node(Expr::K::Subscript, line);
                s->items.push_back(e);
                s->items.push_back(parse_subscript());
                expect_op("]");
                e = s;
            } else {
                break;
            }
        }
        return e;
    }

    ExprPtr parse_subscript() {
        int line = cur().line;
        auto parse_slice_part = [&]() -> ExprPtr {
            if (at_op(":") || at_op("]") || at_op(",")) return nullptr;
            return parse_expression();
        };
        auto first = parse_slice_part();
        if (!at_op(":")) {
            if (at_op(",")) {  // tuple index
                auto t = node(Expr::K::Tuple, line);
                t->items.push_back(first);
                while (at_op(",")) {
                    take();
                    if (at_op("]")) break;
                    t->items.push_back(parse_expression());
                }
                return t;
            }
            if (!first) throw syntax_error("invalid subscript", line);
            return first;
        }
        auto s = node(Expr::K::Slice, line);
        take();
        auto upper = parse_slice_part();
        ExprPtr step;
        if (at_op(":")) {
            take();
            step = parse_slice_part();
        }
        s->items = {first, upper, step};
        return s;
    }

    ExprPtr parse_call(ExprPtr fn) {
        int line = take().line;
        auto c = node(Expr::K::Call, line);
        c->items.push_back(fn);
        while (!at_op(")")) {
            if (at_op("*")) {
                take();
                auto s = node(Expr::K::Starred, cur().line);
                s->items.push_back(parse_expression());
                c->items.push_back(s);
            } else if (at_op("**")) {
                take();
                c->kwnames.push_back("**");
                c->kwvalues.push_back(parse_expression());
            } else if (at(Tok::Name) && peek().kind == Tok::Op && peek().text == "=") {
                c->kwnames.push_back(take().text);
                take();
                c->kwvalues.push_back(parse_expression());
            } else {
                auto arg = parse_expression();
                if (at_kw("for")) arg = parse_comprehension_tail(Expr::K::ListComp, arg, nullptr, line);
                c->items.push_back(arg);
            }
            if (!at_op(",")) break;
            take();
        }
        expect_op(")");
        return c;
    }

    ExprPtr parse_comprehension_tail(Expr::K kind, ExprPtr elt, ExprPtr value, int line) {
        auto e = node(kind, line);
        e->items.push_back(elt);
        if (value) e->items.push_back(value);
        while (at_kw("for")) {
            take();
            Comprehension comp;
            comp.target = parse_target_list();
            expect_kw("in");
            comp.iter = parse_or();
            while (at_kw("if")) {
                take();
                comp.conds.push_back(parse_or());
            }
            e->comps.push_back(std::move(comp));
        }
        return e;
    }

    ExprPtr parse_atom() {
        const Token& tk = cur();
        int line = tk.line;
        switch (tk.kind) {
            case Tok::Int: {
                auto e = node(Expr::K::Const, line);
                e->constant = Value(take().ival);
                return e;
            }
            case Tok::Float: {
                auto e = node(Expr::K::Const, line);
                e->constant = Value(take().fval);
                return e;
            }
            case Tok::String: return parse_strings();
            case Tok::Name: {
                if (tk.text == "True" || tk.text == "False") {
                    auto e = node(Expr::K::Const, line);
                    e->constant = Value(take().text == "True");
                    return e;
                }
                if (tk.text == "None") {
                    take();
                    return node(Expr::K::Const, line);
                }
                if (is_keyword(tk.text)) throw syntax_error("invalid syntax near '" + tk.text + "'", line);
                auto e = node(Expr::K::Name, line);
                e->name = take().text;
                return e;
            }
            case Tok::Op: {
                if (tk.text == "(") {
                    take();
                    if (at_op(")")) {
                        take();
                        return node(Expr::K::Tuple, line);
                    }
                    auto first = parse_expression_or_starred();
                    if (at_kw("for")) {
                        auto comp = parse_comprehension_tail(Expr::K::ListComp, first, nullptr, line);
                        expect_op(")");
                        return comp;
                    }
                    if (at_op(")")) {
                        take();
                        return first;
                    }
                    auto t = node(Expr::K::Tuple, line);
                    t->items.push_back(first);
                    while (at_op(",")) {
                        take();
                        if (at_op(")")) break;
                        t->items.push_back(parse_expression_or_starred());
                    }
                    expect_op(")");
                    return t;
                }
                if (tk.text == "[") {
                    take();
                    auto l = node(Expr::K::List, line);
                    if (at_op("]")) {
                        take();
                        return l;
                    }
                    auto first = parse_expression_or_starred();
                    if (at_kw("for")) {
                        auto comp = parse_comprehension_tail(Expr::K::ListComp, first, nullptr, line);
                        expect_op("]");
                        return comp;
                    }
                    l->items.push_back(first);
                    while (at_op(",")) {
                        take();
                        if (at_op("]")) break;
                        l->items.push_back(parse_expression_or_starred());
                    }
                    expect_op("]");
                    return l;
                }
                if (tk.text == "{") {
                    take();
                    auto d = node(Expr::K::Dict, line);
                    if (at_op("}")) {
                        take();
                        return d;
                    }
                    if (at_op("**")) throw syntax_error("dict unpacking is not supported", line);
                    auto k = parse_expression();
                    if (!at_op(":")) {  // set literal / set comprehension
                        auto s = node(Expr::K::Set, line);
                        if (at_kw("for")) {
                            auto comp = parse_comprehension_tail(Expr::K::ListComp, k, nullptr, line);
                            expect_op("}");
                            s->items.push_back(comp);
                            s->name = "comp";
                            return s;
                        }
                        s->items.push_back(k);
                        while (at_op(",")) {
                            take();
                            if (at_op("}")) break;
                            s->items.push_back(parse_expression());
                        }
                        expect_op("}");
                        return s;
                    }
                    take();
                    auto v = parse_expression();
                    if (at_kw("for")) {
                        auto comp = parse_comprehension_tail(Expr::K::DictComp, k, v, line);
                        expect_op("}");
                        return comp;
                    }
                    d->items.push_back(k);
                    d->items.push_back(v);
                    while (at_op(",")) {
                        take();
                        if (at_op("}")) break;
                        d->items.push_back(parse_expression());
                        expect_op(":");
                        d->items.push_back(parse_expression());
                    }
                    expect_op("}");
                    return d;
                }
                if (tk.text == "...") {
                    take();
                    return node(Expr::K::Const, line);
                }
                throw syntax_error("invalid syntax near '" + tk.text + "'", line);
            }
            case Tok::Newline:
            case Tok::End: throw syntax_error("unexpected end of line", line);
            case Tok::Indent: throw PyError{"IndentationError", "unexpected indent", line};
            case Tok::Dedent: throw syntax_error("unexpected dedent", line);
        }
        throw syntax_error("invalid syntax", line);
    }

    // Adjacent literals concatenate; any f-string makes the whole run an f-string.
    ExprPtr parse_strings() {
        int line = cur().line;
        std::vector<FStringPart> parts;
        bool any_f = false;
        while (at(Tok::String)) {
            Token tk = take();
            if (tk.fstring) {
                any_f = true;
                auto sub = split_fstring(tk.text, tk.line);
                parts.insert(parts.end(), sub.begin(), sub.end());
            } else {
                parts.push_back(FStringPart{tk.text, nullptr, 0, ""});
            }
        }
        if (!any_f) {
            std::string s;
            for (const auto& p : parts) s += p.literal;
            auto e = node(Expr::K::Const, line);
            e->constant = Value(std::move(s));
            return e;
        }
        auto e = node(Expr::K::FString, line);
        e->parts = std::move(parts);
        return e;
    }

    static std::vector<FStringPart> split_fstring(const std::string& s, int line) {
        std::vector<FStringPart> parts;
        std::string lit;
        std::size_t i = 0;
        while (i < s.size()) {
            char c = s[i];
            if (c == '{') {
                if (i + 1 < s.size() && s[i + 1] == '{') {
                    lit += '{';
                    i += 2;
                    continue;
                }
                if (!lit.empty()) parts.push_back(FStringPart{std::move(lit), nullptr, 0, ""}), lit.clear();
                // find the matching close brace, honouring nesting and quotes
                int depth = 0;
                std::size_t j = i + 1;
                char quote = 0;
                std::size_t expr_end = std::string::npos, conv_pos = std::string::npos, spec_pos = std::string::npos;
                for (; j < s.size(); ++j) {
                    char d = s[j];
                    if (quote) {
                        if (d == quote) quote = 0;
                        continue;
                    }
                    if (d == '\'' || d == '"') quote = d;
                    else if (d == '(' || d == '[' || d == '{') ++depth;
                    else if ((d == ')' || d == ']') && depth > 0) --depth;
                    else if (d == '}') {
                        if (depth == 0) break;
                        --depth;
                    } else if (depth == 0 && d == '!' && j + 1 < s.size() && s[j + 1] != '=' && conv_pos == std::string::npos &&
                               spec_pos == std::string::npos) {
                        conv_pos = j;
                    } else if (depth == 0 && d == ':' && spec_pos == std::string::npos) {
                        spec_pos = j;
                    }
                }
                if (j >= s.size()) throw syntax_error("f-string: expecting '}'", line);
                expr_end = std::min({conv_pos, spec_pos, j});
                FStringPart part;
                std::string expr_src = s.substr(i + 1, expr_end - i - 1);
                bool self_doc = false;
                while (!expr_src.empty() && expr_src.back() == ' ') expr_src.pop_back();
                if (!expr_src.empty() && expr_src.back() == '=') {
                    self_doc = true;
                    expr_src.pop_back();
                }
                if (conv_pos != std::string::npos) part.conversion = s[conv_pos + 1];
                if (spec_pos != std::string::npos) part.spec = s.substr(spec_pos + 1, j - spec_pos - 1);
                Lexer lx(expr_src);
                Parser p(lx.run());
                part.expr = p.parse_standalone_expression();
                if (self_doc) {
                    parts.push_back(FStringPart{expr_src + "=", nullptr, 0, ""});
                    if (!part.conversion && part.spec.empty()) part.conversion = 'r';
                }
                parts.push_back(std::move(part));
                i = j + 1;
            } else if (c == '}') {
                if (i + 1 < s.size() && s[i + 1] == '}') {
                    lit += '}';
                    i += 2;
                    continue;
                }
                throw syntax_error("f-string: single '}' is not allowed", line);
            } else {
                lit += c;
                ++i;
            }
        }
        if (!lit.empty()) parts.push_back(FStringPart{std::move(lit), nullptr, 0, ""});
        return parts;
    }
};

inline Block parse_program(std::string_view src) {
    Lexer lx(src);
    Parser p(lx.run());
    return p.parse_module();
}

}  // namespace codetool::minipy
