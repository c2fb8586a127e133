#pragma once

#include <stdexcept>
#include <string>

namespace multired {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MULTIRED_ERROR(Name)                        \
    class Name : public Error {                     \
    public:                                         \
        explicit Name(const std::string& what)      \
            : Error(#Name ": " + what) {}           \
    }

MULTIRED_ERROR(DomainError);
MULTIRED_ERROR(CyclicRule);
MULTIRED_ERROR(NotADivergence);
MULTIRED_ERROR(IntegrationObstruction);
MULTIRED_ERROR(AnsatzDependsOnLeading);
MULTIRED_ERROR(NotInvariant);
MULTIRED_ERROR(SingularMap);
MULTIRED_ERROR(ResidualCanonicalDependence);
MULTIRED_ERROR(NotTotalDerivative);
MULTIRED_ERROR(BadParameters);
MULTIRED_ERROR(InvalidProblem);

#undef MULTIRED_ERROR

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line, int column, const std::string& file = "")
        : Error("ParseError at " + (file.empty() ? "" : file + ":") + std::to_string(line) + ":" +
                std::to_string(column) + ": " + what),
          message_(what),
          line_(line),
          column_(column) {}
    const std::string& message() const { return message_; }
    int line() const { return line_; }
    int column() const { return column_; }

private:
    std::string message_;
    int line_;
    int column_;
};

}  // namespace multired
