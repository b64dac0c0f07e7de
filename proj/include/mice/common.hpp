#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mice {

using TokenId = std::uint32_t;

// Reserved vocabulary ids; word ids start at kFirstWordId.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kFirstWordId = 4;

// Error taxonomy. The CLI maps these onto exit codes (usage 1, data 2,
// numeric 3), so every throw site picks the narrowest matching type.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// SHA-256 digest of a serialized checkpoint.
using Fingerprint = std::array<std::uint8_t, 32>;

std::string to_hex(const Fingerprint& fp);

}  // namespace mice
