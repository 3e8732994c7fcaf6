#include "medkg/optimizer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace medkg::ag {

Adam::Adam(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& [name, t] : params.items()) {
    m_.push_back(Matrix::Zero(t.rows(), t.cols()));
    v_.push_back(Matrix::Zero(t.rows(), t.cols()));
  }
}

bool Adam::step(ParamStore& params) {
  if (params.size() != m_.size()) throw ConfigError("Adam bound to a different parameter set");
  const auto& items = params.items();
  for (const auto& [name, t] : items) {
    if (t.has_grad() && !t.grad().allFinite()) return false;  // skip the whole step
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < items.size(); ++i) {
    const Tensor& t = items[i].second;
    Matrix g = t.has_grad() ? t.grad() : Matrix::Zero(t.rows(), t.cols());
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Matrix mhat = m_[i] / bc1;
    Matrix vhat = v_[i] / bc2;
    const_cast<Tensor&>(t).mutable_value() -=
        cfg_.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg_.eps).matrix());
  }
  return true;
}

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write checkpoint: " + path);
  std::ostringstream idx;
  idx << "checkpoint v1 " << params.size() << "\n";
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.items()) {
    idx << name << ' ' << t.rows() << ' ' << t.cols() << ' ' << offset << '\n';
    const Matrix& m = t.value();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double v = m(r, c);
        bin.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    }
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
  }
  if (!bin) throw DataError("checkpoint write failed: " + path);
  write_text_file(path + ".idx", idx.str());
}

void load_checkpoint(ParamStore& params, const std::string& path) {
  std::ifstream idx(path + ".idx");
  if (!idx) throw DataError("cannot open checkpoint index: " + path + ".idx");
  std::string tag, version;
  size_t count = 0;
  if (!(idx >> tag >> version >> count) || tag != "checkpoint" || version != "v1")
    throw DataError(path + ".idx: not a v1 checkpoint index");
  if (count != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                    std::to_string(params.size()));
  }
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw DataError("cannot open checkpoint: " + path);
  for (const auto& [name, t] : params.items()) {
    std::string fname;
    Eigen::Index rows = 0, cols = 0;
    std::uint64_t offset = 0;
    if (!(idx >> fname >> rows >> cols >> offset))
      throw DataError(path + ".idx: truncated index at parameter '" + name + "'");
    if (fname != name)
      throw DataError("checkpoint parameter '" + fname + "' does not match model parameter '" +
                      name + "'");
    if (rows != t.rows() || cols != t.cols())
      throw DataError("checkpoint shape mismatch for '" + name + "'");
    bin.seekg(static_cast<std::streamoff>(offset));
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        if (!bin.read(reinterpret_cast<char*>(&v), sizeof(double)))
          throw DataError("checkpoint truncated while reading '" + name + "'");
        m(r, c) = v;
      }
    }
    const_cast<Tensor&>(t).mutable_value() = std::move(m);
  }
}

}  // namespace medkg::ag
