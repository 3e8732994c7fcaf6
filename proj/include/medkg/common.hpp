#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace medkg {

// Error taxonomy mirrored by the CLI exit codes: config 2, data 3, numerical 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::array<unsigned char, 32> sha256_bytes(std::string_view data);
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::string& path);

// All randomness flows from one root seed expanded by named substreams
// (e.g. "cohort", "init", "dropout", "shuffle") so stages stay independent.
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);

inline std::mt19937_64 substream(std::uint64_t root, std::string_view name) {
  return std::mt19937_64(substream_seed(root, name));
}

// Minimal CSV with RFC-style double-quote escaping; enough for code files
// whose descriptions contain commas.
std::vector<std::string> split_csv_row(const std::string& line);
std::string csv_quote(const std::string& field);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);
std::string lower(std::string s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace medkg
