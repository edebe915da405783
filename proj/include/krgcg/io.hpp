#pragma once

// JSON and CSV encodings of measures, atoms, solver histories and results.
//
//   measure:  [{"x": [..], "w": w}, ...]
//   atom:     {"type": "dirac", "sign": +-1, "z": [..]} | {"type": "dipole", "x": [..], "y": [..]}

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "krgcg/agcg.hpp"
#include "krgcg/error.hpp"
#include "krgcg/kr_oracle.hpp"
#include "krgcg/measures.hpp"

namespace krgcg::io {

using nlohmann::json;

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

template <int Dim>
json point_to_json(const Point<Dim>& z) {
  json a = json::array();
  for (int i = 0; i < Dim; ++i) a.push_back(z[i]);
  return a;
}

template <int Dim>
Point<Dim> point_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(Dim)) {
    throw Error(ErrorCode::config_invalid, field + ": expected an array of " + std::to_string(Dim) + " numbers");
  }
  Point<Dim> z;
  for (int i = 0; i < Dim; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw Error(ErrorCode::config_invalid, field + ": non-numeric coordinate");
    z[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return z;
}

template <int Dim>
json measure_to_json(const DiscreteMeasure<Dim>& mu) {
  json a = json::array();
  for (const auto& p : mu.atoms) a.push_back({{"x", point_to_json<Dim>(p.x)}, {"w", p.w}});
  return a;
}

template <int Dim>
DiscreteMeasure<Dim> measure_from_json(const json& j, const std::string& field = "measure") {
  if (!j.is_array()) throw Error(ErrorCode::config_invalid, field + ": expected an array of {x, w}");
  DiscreteMeasure<Dim> mu;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string f = field + "[" + std::to_string(i) + "]";
    const json& e = j[i];
    if (!e.is_object() || !e.contains("x") || !e.contains("w") || !e["w"].is_number()) {
      throw Error(ErrorCode::config_invalid, f + ": expected {\"x\": [...], \"w\": number}");
    }
    mu.add(point_from_json<Dim>(e["x"], f + ".x"), e["w"].get<double>());
  }
  return mu;
}

template <int Dim>
json atom_to_json(const ExtremalAtom<Dim>& atom) {
  if (const auto* d = std::get_if<DiracAtom<Dim>>(&atom)) {
    return {{"type", "dirac"}, {"sign", d->sign}, {"z", point_to_json<Dim>(d->z)}};
  }
  const auto& p = std::get<DipoleAtom<Dim>>(atom);
  return {{"type", "dipole"}, {"x", point_to_json<Dim>(p.x)}, {"y", point_to_json<Dim>(p.y)}};
}

template <int Dim>
ExtremalAtom<Dim> atom_from_json(const json& j, const std::string& field = "atom") {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw Error(ErrorCode::config_invalid, field + ": missing \"type\"");
  }
  const auto type = j["type"].get<std::string>();
  if (type == "dirac") {
    if (!j.contains("sign") || !j["sign"].is_number_integer()) throw Error(ErrorCode::config_invalid, field + ".sign: expected +1 or -1");
    const int sign = j["sign"].get<int>();
    if (sign != 1 && sign != -1) throw Error(ErrorCode::config_invalid, field + ".sign: expected +1 or -1");
    if (!j.contains("z")) throw Error(ErrorCode::config_invalid, field + ".z: missing");
    return DiracAtom<Dim>{sign, point_from_json<Dim>(j["z"], field + ".z")};
  }
  if (type == "dipole") {
    if (!j.contains("x") || !j.contains("y")) throw Error(ErrorCode::config_invalid, field + ": dipole needs x and y");
    return DipoleAtom<Dim>{point_from_json<Dim>(j["x"], field + ".x"), point_from_json<Dim>(j["y"], field + ".y")};
  }
  throw Error(ErrorCode::config_invalid, field + ".type: unknown atom type '" + type + "'");
}

template <int Dim>
json kr_norm_to_json(const KRNormResult<Dim>& r) {
  json creation = json::array();
  for (std::size_t i = 0; i < r.support.atoms.size(); ++i) {
    const double a = r.witness.creation[i];
    if (a != 0.0) creation.push_back({{"x", point_to_json<Dim>(r.support.atoms[i].x)}, {"w", a}});
  }
  json plan = json::array();
  for (const auto& e : r.witness.plan) {
    plan.push_back({{"source", point_to_json<Dim>(r.support.atoms[e.source].x)},
                    {"target", point_to_json<Dim>(r.support.atoms[e.target].x)},
                    {"mass", e.mass}});
  }
  return {{"value", r.value}, {"witness", {{"creation", creation}, {"plan", plan}}}};
}

inline std::string history_csv(const std::vector<IterateRecord>& history) {
  std::ostringstream os;
  os << "k,surrogate,max_abs_q_over_alpha,max_psi,N_k,inserted_kind,r_hat,time_s\n";
  for (const auto& r : history) {
    os << r.k << ',' << format_double(r.surrogate) << ',' << format_double(r.max_abs_q_over_alpha) << ','
       << format_double(r.max_psi) << ',' << r.n_atoms << ',' << to_string(r.inserted) << ','
       << format_double(r.r_hat) << ',' << format_double(r.time_s) << '\n';
  }
  return os.str();
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config_invalid, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path);
}

}  // namespace krgcg::io
