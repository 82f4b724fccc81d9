#pragma once

#include <stdexcept>
#include <string>

namespace vidguide {

// Every error carries a stable kind string; the CLI maps kinds to exit codes.
class Error : public std::runtime_error {
   public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

   private:
    std::string kind_;
};

class DimensionError : public Error {
   public:
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ContractError : public Error {
   public:
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class InputError : public Error {
   public:
    explicit InputError(const std::string& what) : Error("input", what) {}
};

class ParseError : public Error {
   public:
    ParseError(int line, const std::string& what)
        : Error("parse", "line " + std::to_string(line) + ": " + what), line_(line) {}

    int line() const noexcept { return line_; }

   private:
    int line_;
};

class ExtractionError : public Error {
   public:
    explicit ExtractionError(const std::string& what) : Error("extraction", what) {}
};

// Attention mass or distance denominators collapsed below epsilon.
class DegenerateError : public Error {
   public:
    explicit DegenerateError(const std::string& what) : Error("degenerate", what) {}
};

class NumericError : public Error {
   public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class IoError : public Error {
   public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace vidguide
