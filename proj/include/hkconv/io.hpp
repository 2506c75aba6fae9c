#pragma once

#include "hkconv/kernelgen.hpp"
#include "hkconv/manifold.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace hkconv::io {

using Json = nlohmann::ordered_json;

/// %.17g, always carrying a decimal point or exponent so the value reads back
/// as a float; 17 significant digits round-trip every double exactly.
inline std::string format_double(double x) {
  if (!std::isfinite(x)) throw NumericError("io: cannot serialize a non-finite number");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

namespace detail {

inline void dump(const Json& j, std::string& out, int indent, int level) {
  const std::string pad(static_cast<std::size_t>(indent * (level + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(indent * level), ' ');
  const char* nl = indent > 0 ? "\n" : "";
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{";
      out += nl;
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) {
          out += ",";
          out += nl;
        }
        first = false;
        out += pad;
        out += Json(it.key()).dump();
        out += indent > 0 ? ": " : ":";
        dump(it.value(), out, indent, level + 1);
      }
      out += nl;
      out += close_pad;
      out += "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool flat = true;
      for (const auto& e : j) flat = flat && !e.is_structured();
      out += "[";
      if (!flat) out += nl;
      bool first = true;
      for (const auto& e : j) {
        if (!first) {
          out += ",";
          out += flat ? (indent > 0 ? " " : "") : nl;
        }
        first = false;
        if (!flat) out += pad;
        dump(e, out, indent, level + 1);
      }
      if (!flat) {
        out += nl;
        out += close_pad;
      }
      out += "]";
      return;
    }
    case Json::value_t::number_float: out += format_double(j.get<double>()); return;
    default: out += j.dump(); return;
  }
}

}  // namespace detail

inline std::string to_string(const Json& j, int indent = 2) {
  std::string out;
  detail::dump(j, out, indent, 0);
  out += "\n";
  return out;
}

inline Json parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(what + ": malformed JSON (" + e.what() + ")");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

/// 64-bit FNV-1a of raw bytes as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(CounterRng::fnv1a(bytes)));
  return buf;
}

/// Reads a required field, naming it in the error.
template <class T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

inline Json vec_to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(where + "[" + std::to_string(i) + "]: expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

// ----------------------------------------------------------------- points

inline Json point_to_json(const LorentzPoint& p) {
  Json j;
  j["curvature"] = p.curvature();
  j["dim"] = p.dim();
  j["coords"] = vec_to_json(p.coords());
  return j;
}

inline LorentzPoint point_from_json(const Json& j, double tol = 1e-9, const std::string& where = "point") {
  const auto kappa = field<double>(j, "curvature", where);
  const auto dim = field<int>(j, "dim", where);
  if (!j.contains("coords")) throw ValidationError(where + ": missing field 'coords'");
  Vec c = vec_from_json(j["coords"], where + ".coords");
  if (c.size() != dim + 1) throw ValidationError(where + ": coords must have dim+1 entries");
  try {
    return LorentzPoint::from_coords(std::move(c), kappa, tol);
  } catch (const Error& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

// ---------------------------------------------------------------- kernels

inline Json kernels_to_json(const KernelSet& ks) {
  Json j;
  j["curvature"] = ks.cfg.curvature;
  j["dim"] = ks.cfg.dim;
  j["K"] = ks.K();
  j["provenance"] = std::string(to_string(ks.provenance));
  Json pts = Json::array();
  for (const auto& p : ks.points) pts.push_back(vec_to_json(p.coords()));
  j["points"] = std::move(pts);
  return j;
}

/// Parses and re-validates a kernel set. `mark_loaded` replaces the stored
/// provenance by `loaded`.
inline KernelSet kernels_from_json(const Json& j, bool mark_loaded = false, const std::string& where = "kernels") {
  KernelSet ks;
  ks.cfg.curvature = field<double>(j, "curvature", where);
  ks.cfg.dim = field<int>(j, "dim", where);
  const int K = field<int>(j, "K", where);
  ks.provenance = provenance_from_string(field<std::string>(j, "provenance", where));
  if (!j.contains("points") || !j["points"].is_array()) throw ValidationError(where + ": missing array 'points'");
  const Json& pts = j["points"];
  if (static_cast<int>(pts.size()) != K) throw ValidationError(where + ": K does not match the number of points");
  try {
    ks.cfg.validate();
  } catch (const Error& e) {
    throw ValidationError(where + ": " + e.what());
  }
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const std::string w = where + ".points[" + std::to_string(k) + "]";
    Vec c = vec_from_json(pts[k], w);
    if (c.size() != ks.cfg.dim + 1) throw ValidationError(w + ": expected dim+1 coordinates");
    ks.points.push_back(LorentzPoint::unchecked(std::move(c), ks.cfg.curvature));
  }
  ks.validate();
  if (mark_loaded) ks.provenance = KernelProvenance::loaded;
  return ks;
}

inline void save_kernels(const std::filesystem::path& path, const KernelSet& ks) {
  write_file(path, to_string(kernels_to_json(ks)));
}

inline KernelSet load_kernels(const std::filesystem::path& path) {
  return kernels_from_json(parse(read_file(path), path.string()), true, path.string());
}

// -------------------------------------------------------------------- csv

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw DimensionError("CsvWriter: wrong number of cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  [[nodiscard]] const std::string& str() const { return text_; }
  void save(const std::filesystem::path& path) const { write_file(path, text_); }

 private:
  std::size_t columns_;
  std::string text_;
};

inline std::string cell(double x) { return format_double(x); }
inline std::string cell(long x) { return std::to_string(x); }
inline std::string cell(int x) { return std::to_string(x); }
inline std::string cell(std::uint64_t x) { return std::to_string(x); }

inline std::string solver_log_csv(const SolverTrace& trace) {
  CsvWriter w({"iter", "loss", "grad_norm"});
  for (const auto& r : trace.log) w.row({cell(r.iter), cell(r.loss), cell(r.grad_norm)});
  return w.str();
}

inline std::string gradient_decay_csv(const std::vector<GradientDecayRow>& rows) {
  CsvWriter w({"radius", "grad_norm"});
  for (const auto& r : rows) w.row({cell(r.radius), cell(r.grad_norm)});
  return w.str();
}

/// Poincare-disk coordinates of the kernel points (first two spatial axes).
inline std::string poincare_points_csv(const KernelSet& ks) {
  CsvWriter w({"x", "y"});
  for (const auto& p : ks.points) {
    const Vec q = to_poincare(p);
    w.row({cell(q[0]), cell(q.size() > 1 ? q[1] : 0.0)});
  }
  return w.str();
}

/// Poincare-disk polylines of the geodesics between every kernel pair.
inline std::string poincare_geodesics_csv(const KernelSet& ks, int steps = 64) {
  CsvWriter w({"i", "j", "x", "y"});
  for (int i = 0; i < ks.K(); ++i)
    for (int j = i + 1; j < ks.K(); ++j)
      for (const auto& p : geodesic_polyline(ks.points[i], ks.points[j], steps)) {
        const Vec q = to_poincare(p);
        w.row({cell(i), cell(j), cell(q[0]), cell(q.size() > 1 ? q[1] : 0.0)});
      }
  return w.str();
}

}  // namespace hkconv::io
