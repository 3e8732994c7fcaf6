#include "medkg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "medkg/common.hpp"

namespace medkg {

using ag::Matrix;

namespace {

void append_u32_le(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xff);
}

void append_f64_le(std::string& buf, double d) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) buf += static_cast<char>((u >> (8 * i)) & 0xff);
}

std::uint32_t read_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

double read_f64_le(const unsigned char* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

std::string checkpoint_index_path(const std::string& path) { return path + ".index.txt"; }

void save_checkpoint(const ag::ParamStore& store, const std::string& path) {
  std::string buf;
  std::ostringstream index;
  for (const auto& [name, tensor] : store.items()) {
    const Matrix& m = tensor.value();
    append_u32_le(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    append_u32_le(buf, static_cast<std::uint32_t>(m.rows()));
    append_u32_le(buf, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) append_f64_le(buf, m(r, c));
    index << name << '\t' << m.rows() << '\t' << m.cols() << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.close();
  std::ofstream idx(checkpoint_index_path(path), std::ios::trunc);
  if (!idx) throw DataError("checkpoint: cannot write " + checkpoint_index_path(path));
  idx << index.str();
}

void load_checkpoint(ag::ParamStore& store, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();

  std::map<std::string, Matrix> blocks;
  std::size_t pos = 0;
  while (pos < size) {
    if (pos + 4 > size) throw DataError("checkpoint: truncated block header in " + path);
    std::uint32_t name_len = read_u32_le(p + pos);
    pos += 4;
    if (name_len == 0 || name_len > (1u << 16) || pos + name_len + 8 > size)
      throw DataError("checkpoint: corrupt block in " + path);
    std::string name(bytes, pos, name_len);
    pos += name_len;
    std::uint32_t rows = read_u32_le(p + pos);
    std::uint32_t cols = read_u32_le(p + pos + 4);
    pos += 8;
    std::size_t payload = std::size_t{rows} * cols * 8;
    if (rows == 0 || cols == 0 || pos + payload > size)
      throw DataError("checkpoint: truncated payload for '" + name + "' in " + path);
    Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        m(r, c) = read_f64_le(p + pos + (std::size_t{r} * cols + c) * 8);
    pos += payload;
    if (!blocks.emplace(name, std::move(m)).second)
      throw DataError("checkpoint: duplicate parameter '" + name + "' in " + path);
  }

  if (blocks.size() != store.items().size())
    throw ConfigError("checkpoint: file has " + std::to_string(blocks.size()) +
                      " parameters, model expects " + std::to_string(store.items().size()));
  std::vector<Matrix> values;
  values.reserve(store.items().size());
  for (const auto& [name, tensor] : store.items()) {
    auto it = blocks.find(name);
    if (it == blocks.end())
      throw ConfigError("checkpoint: missing parameter '" + name + "' in " + path);
    if (it->second.rows() != tensor.value().rows() || it->second.cols() != tensor.value().cols())
      throw ConfigError("checkpoint: shape mismatch for '" + name + "': file " +
                        std::to_string(it->second.rows()) + "x" +
                        std::to_string(it->second.cols()) + ", model " +
                        std::to_string(tensor.value().rows()) + "x" +
                        std::to_string(tensor.value().cols()));
    values.push_back(it->second);
  }
  store.restore_values(values);
}

}  // namespace medkg
