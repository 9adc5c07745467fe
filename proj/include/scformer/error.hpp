#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace scformer {

// Error codes are stable strings; the CLI surfaces them verbatim in error.json.
class ScfError : public std::runtime_error {
public:
    ScfError(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

namespace errc {
inline constexpr const char* bad_args = "bad_args";
inline constexpr const char* config_invalid = "config_invalid";
inline constexpr const char* io_error = "io_error";
inline constexpr const char* csv_invalid = "csv_invalid";
inline constexpr const char* split_invalid = "split_invalid";
inline constexpr const char* shape_mismatch = "shape_mismatch";
inline constexpr const char* non_finite = "non_finite";
inline constexpr const char* autograd_invalid = "autograd_invalid";
inline constexpr const char* checkpoint_mismatch = "checkpoint_mismatch";
inline constexpr const char* checkpoint_corrupt = "checkpoint_corrupt";
inline constexpr const char* internal = "internal";
}  // namespace errc

}  // namespace scformer
