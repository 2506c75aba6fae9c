#pragma once

#include "hkconv/core.hpp"

#include <map>
#include <string>
#include <vector>

namespace hkconv {

/// Dense real tensor stored flat in row-major order.
struct Tensor {
  std::vector<int> shape;
  Vec data;

  static Tensor vector(Vec v) {
    Tensor t;
    t.shape = {static_cast<int>(v.size())};
    t.data = std::move(v);
    return t;
  }
  static Tensor scalar(double x) {
    Tensor t;
    t.shape = {};
    t.data = Vec::Constant(1, x);
    return t;
  }
  static Tensor matrix(const Mat& m) {
    Tensor t;
    t.shape = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    t.data.resize(m.size());
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), m.rows(),
                                                                                         m.cols()) = m;
    return t;
  }

  [[nodiscard]] long numel() const {
    long n = 1;
    for (int s : shape) n *= s;
    return n;
  }
  [[nodiscard]] Mat as_matrix() const {
    if (shape.size() != 2) throw DimensionError("Tensor::as_matrix: tensor is not 2-D");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), shape[0], shape[1]);
  }
};

struct AdamMoments {
  Vec m;
  Vec v;
  long step = 0;
};

using Gradients = std::map<std::string, Vec>;

/// Named trainable leaves plus per-leaf optimizer state. Iteration order is the
/// lexicographic order of paths, which fixes every reduction order.
class ParamStore {
 public:
  void add(const std::string& path, Tensor t) {
    if (static_cast<long>(t.data.size()) != t.numel())
      throw DimensionError("ParamStore::add: data size does not match shape for '" + path + "'");
    if (!leaves_.emplace(path, std::move(t)).second) throw ParameterError("ParamStore::add: duplicate path '" + path + "'");
  }

  [[nodiscard]] const Tensor& at(const std::string& path) const {
    auto it = leaves_.find(path);
    if (it == leaves_.end()) throw ParameterError("ParamStore: unknown leaf '" + path + "'");
    return it->second;
  }
  Tensor& at(const std::string& path) {
    auto it = leaves_.find(path);
    if (it == leaves_.end()) throw ParameterError("ParamStore: unknown leaf '" + path + "'");
    return it->second;
  }
  [[nodiscard]] bool contains(const std::string& path) const { return leaves_.count(path) != 0; }

  [[nodiscard]] const std::map<std::string, Tensor>& leaves() const { return leaves_; }
  [[nodiscard]] std::map<std::string, Tensor>& leaves() { return leaves_; }
  [[nodiscard]] const std::map<std::string, AdamMoments>& moments() const { return moments_; }
  [[nodiscard]] std::map<std::string, AdamMoments>& moments() { return moments_; }

  [[nodiscard]] long num_scalars() const {
    long n = 0;
    for (const auto& [_, t] : leaves_) n += t.numel();
    return n;
  }

 private:
  std::map<std::string, Tensor> leaves_;
  std::map<std::string, AdamMoments> moments_;
};

}  // namespace hkconv
