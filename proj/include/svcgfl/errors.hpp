#pragma once

#include <stdexcept>
#include <string>

namespace svcgfl {

/// Base class for all library errors. `category` maps onto CLI exit codes.
class Error : public std::runtime_error {
public:
    enum class Category { usage = 2, data = 3, numerical = 4 };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

/// Invalid input data, malformed files, or inconsistent schemas.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(Category::data, what) {}
};

/// Bad arguments (unknown case id, p_tilde = 0, ...).
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(Category::usage, what) {}
};

/// Solver or sampler failure: non-convergence, non-finite iterates.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(Category::numerical, what) {}
};

}  // namespace svcgfl
