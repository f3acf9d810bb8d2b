#pragma once

// File formats. Matrices travel as {"d": side, "rows": [[entry, ...], ...]}
// where entry is [re, im] for complex data or a bare number for real data.
// Readers reject NaN/Inf. SAT instances use the "p 1in3 n_v n_C" text header
// followed by one clause per line.

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "markov/core.hpp"

namespace markov {

using OrderedJson = nlohmann::ordered_json;

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ParseError(std::string("non-finite value in ") + what);
}

inline OrderedJson matrix_to_json(const CMatrix& m) {
  OrderedJson rows = OrderedJson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    OrderedJson row = OrderedJson::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      row.push_back({m(i, j).real(), m(i, j).imag()});
    rows.push_back(std::move(row));
  }
  return OrderedJson{{"d", m.rows()}, {"rows", std::move(rows)}};
}

inline OrderedJson matrix_to_json(const RMatrix& m) {
  OrderedJson rows = OrderedJson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    OrderedJson row = OrderedJson::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return OrderedJson{{"d", m.rows()}, {"rows", std::move(rows)}};
}

inline Complex entry_from_json(const OrderedJson& e, const char* what) {
  if (e.is_number()) {
    double x = e.get<double>();
    require_finite(x, what);
    return Complex(x, 0.0);
  }
  if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
    double re = e[0].get<double>(), im = e[1].get<double>();
    require_finite(re, what);
    require_finite(im, what);
    return Complex(re, im);
  }
  throw ParseError(std::string("matrix entry must be a number or [re, im] in ") + what);
}

inline CMatrix matrix_from_json(const OrderedJson& j, const char* what = "matrix") {
  if (!j.is_object() || !j.contains("d") || !j.contains("rows"))
    throw ParseError(std::string(what) + ": expected {\"d\": ..., \"rows\": ...}");
  const auto& rows = j["rows"];
  if (!rows.is_array() || rows.empty())
    throw ParseError(std::string(what) + ": rows must be a non-empty array");
  Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  if (!j["d"].is_number_integer() || j["d"].get<Eigen::Index>() != n)
    throw ParseError(std::string(what) + ": d does not match row count");
  Eigen::Index cols = static_cast<Eigen::Index>(rows[0].size());
  CMatrix m(n, cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != cols)
      throw ParseError(std::string(what) + ": ragged rows");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = entry_from_json(rows[i][k], what);
  }
  return m;
}

inline RMatrix real_matrix_from_json(const OrderedJson& j, const char* what = "matrix") {
  CMatrix m = matrix_from_json(j, what);
  if (m.imag().cwiseAbs().maxCoeff() > 0.0)
    throw ParseError(std::string(what) + ": expected a real matrix");
  return m.real();
}

inline OrderedJson load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  OrderedJson j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw ParseError(path + ": " + ex.what());
  }
  return j;
}

inline SuperOp superop_from_json(const OrderedJson& j) {
  CMatrix m = matrix_from_json(j, "superoperator");
  if (m.rows() != m.cols()) throw ParseError("superoperator must be square");
  int d = 0;
  try {
    d = hilbert_dim_of_side(m.rows());
  } catch (const DimensionError& ex) {
    throw ParseError(ex.what());
  }
  return SuperOp{d, std::move(m)};
}

inline SuperOp load_superop(const std::string& path) {
  return superop_from_json(load_json_file(path));
}

inline RMatrix load_real_matrix(const std::string& path) {
  return real_matrix_from_json(load_json_file(path), path.c_str());
}

inline void save_json(const std::string& path, const OrderedJson& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  out << j.dump(1) << "\n";
}

}  // namespace markov
