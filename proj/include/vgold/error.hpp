#pragma once

#include <stdexcept>
#include <string>

namespace vgold {

/// Malformed input file or record.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (wrong scene, stale HIT, update after block...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class PackingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace vgold
