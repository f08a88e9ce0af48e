#pragma once

#include <stdexcept>
#include <string>

namespace tvsurv {

// Exception hierarchy. The CLI maps each class onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumerical = 4,
};

// Writes "warning: <msg>" to stderr unless warnings are silenced.
void warn(const std::string& msg);
void set_warnings_enabled(bool enabled);

}  // namespace tvsurv
