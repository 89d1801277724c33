#pragma once
// Exception hierarchy shared by every codetool module.

#include <stdexcept>
#include <string>

namespace codetool {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input that does not parse or violates a schema.
class MalformedInput : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of a reward formula.
class DomainError : public Error {
public:
    using Error::Error;
};

class ZeroTotalError : public DomainError {
public:
    ZeroTotalError() : DomainError("delta_total must be >= 1") {}
};

class DegenerateScores : public DomainError {
public:
    DegenerateScores() : DomainError("degenerate PRM scores: s_yes + s_no == 0") {}
};

class EmptyInput : public Error {
public:
    using Error::Error;
};

class RunnerUnavailable : public Error {
public:
    using Error::Error;
};

class ReplayDivergence : public Error {
public:
    using Error::Error;
};

class BackendUnreachable : public Error {
public:
    using Error::Error;
};

class ServiceUnreachable : public Error {
public:
    using Error::Error;
};

class NoCodeBlock : public Error {
public:
    NoCodeBlock() : Error("model output contains no fenced code block") {}
};

class PortInUse : public Error {
public:
    using Error::Error;
};

// Raised by the tool proxy; the sandbox surfaces it as a catchable ToolError.
class ToolCallError : public Error {
public:
    enum class Kind { UnknownTool, MissingParam, InvalidParam, Upstream, Transport };

    ToolCallError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace codetool
