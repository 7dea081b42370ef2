#pragma once

#include <random>
#include <stdexcept>
#include <string>

namespace accsampler {

using Rng = std::mt19937_64;

enum class Phase { Train, Eval };

// Base for every failure the library reports; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class MissingPathError : public Error {
public:
    explicit MissingPathError(const std::string& path)
        : Error("missing file: " + path), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

// A required upstream artifact (checkpoint, manifest, trace file) is absent.
class PrerequisiteError : public Error {
public:
    using Error::Error;
};

} // namespace accsampler
