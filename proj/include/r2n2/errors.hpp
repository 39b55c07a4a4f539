#pragma once

#include <stdexcept>
#include <string>

namespace r2n2 {

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

struct training_error : std::runtime_error {
    explicit training_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace r2n2
