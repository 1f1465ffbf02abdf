#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ldk {

inline constexpr const char* kVersion = "ldk 0.1.0";

// Error taxonomy shared by all modules. The CLI maps these 1:1 onto
// module-qualified diagnostics and nonzero exit codes.
enum class ErrKind {
    config,            // invalid configuration value or file
    shape,             // tensor shape mismatch
    ordering,          // step indices out of order
    infinite_snr,      // sigma_t = 0 where a finite SNR is required
    degenerate_step,   // alpha_t = 0 where inversion is required
    divergence,        // non-finite values during sampling/training
    degenerate_scale,  // zero-variance latent batch
    vocab,             // token/class id out of range
    io,                // file I/O failure
    checkpoint,        // malformed or incompatible checkpoint
    guidance,          // non-finite guidance gradient
};

class Error : public std::runtime_error {
public:
    Error(ErrKind kind, std::string module, const std::string& msg)
        : std::runtime_error(module + ": " + msg), kind_(kind), module_(std::move(module)) {}

    ErrKind kind() const { return kind_; }
    const std::string& module() const { return module_; }

private:
    ErrKind kind_;
    std::string module_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& module, const std::string& msg) {
    throw Error(kind, module, msg);
}

#define LDK_CHECK(cond, kind, module, msg) \
    do {                                   \
        if (!(cond)) ::ldk::fail(kind, module, msg); \
    } while (0)

}  // namespace ldk
