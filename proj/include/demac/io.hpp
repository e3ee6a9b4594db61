#pragma once

// JSON serialization of models, covariance sets, and sample sets, plus the
// CSV number formatting used by the CLI.  Complex matrices are stored as
// row-major flat arrays of [re, im] pairs; real matrices as row-major flat
// arrays of numbers.  All dimensions are explicit in the files and
// cross-checked on load.

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "channel.hpp"
#include "core.hpp"
#include "extract.hpp"

namespace demac {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Matrix codecs

template <class T>
json cmat_to_json(const CMat<T>& a) {
  json out = json::array();
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.push_back({static_cast<double>(std::real(a(i, j))),
                     static_cast<double>(std::imag(a(i, j)))});
  return out;
}

template <class T>
CMat<T> cmat_from_json(const json& j, Index rows, Index cols,
                       const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows * cols)
    throw ParseError(what + ": expected " + std::to_string(rows * cols) +
                     " complex entries");
  CMat<T> a(rows, cols);
  Index idx = 0;
  for (Index i = 0; i < rows; ++i) {
    for (Index j2 = 0; j2 < cols; ++j2, ++idx) {
      const json& e = j[idx];
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() ||
          !e[1].is_number())
        throw ParseError(what + ": entry " + std::to_string(idx) +
                         " is not a [re, im] pair");
      a(i, j2) = std::complex<T>(T(e[0].get<double>()),
                                 T(e[1].get<double>()));
    }
  }
  return a;
}

template <class T>
json rmat_to_json(const RMat<T>& a) {
  json out = json::array();
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.push_back(static_cast<double>(a(i, j)));
  return out;
}

template <class T>
RMat<T> rmat_from_json(const json& j, Index rows, Index cols,
                       const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows * cols)
    throw ParseError(what + ": expected " + std::to_string(rows * cols) +
                     " real entries");
  RMat<T> a(rows, cols);
  Index idx = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index j2 = 0; j2 < cols; ++j2, ++idx) {
      if (!j[idx].is_number())
        throw ParseError(what + ": entry " + std::to_string(idx) +
                         " is not a number");
      a(i, j2) = T(j[idx].get<double>());
    }
  return a;
}

// ---------------------------------------------------------------------------
// Dimensions

inline json dims_to_json(const Dimensions& d) {
  return json{{"L", d.L},   {"K", d.K},   {"N", d.N()},
              {"M", d.M()}, {"N_l", d.N_l}, {"M_k", d.M_k}};
}

inline Dimensions dims_from_json(const json& j) {
  Dimensions d;
  try {
    d.L = j.at("L").get<Index>();
    d.K = j.at("K").get<Index>();
    d.N_l = j.at("N_l").get<std::vector<Index>>();
    d.M_k = j.at("M_k").get<std::vector<Index>>();
    const Index n = j.at("N").get<Index>();
    const Index m = j.at("M").get<Index>();
    d.check();
    if (n != d.N() || m != d.M())
      throw ParseError("dims: N/M do not match the per-set/per-user sums");
  } catch (const json::exception& e) {
    throw ParseError(std::string("dims: ") + e.what());
  } catch (const DimensionMismatch& e) {
    throw ParseError(std::string("dims: ") + e.what());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Channel model

template <class T>
json model_to_json(const ChannelModel<T>& model) {
  check_structure(model);
  json links = json::array();
  for (Index l = 0; l < model.dims.L; ++l) {
    json row = json::array();
    for (Index k = 0; k < model.dims.K; ++k) {
      const LinkStatistics<T>& s = model.links[l][k];
      row.push_back(json{{"hbar", cmat_to_json(s.Hbar)},
                         {"u", cmat_to_json(s.U)},
                         {"v", cmat_to_json(s.V)},
                         {"g", rmat_to_json(s.G)}});
    }
    links.push_back(std::move(row));
  }
  std::vector<double> powers(model.P.begin(), model.P.end());
  return json{{"dims", dims_to_json(model.dims)},
              {"powers", powers},
              {"links", links}};
}

template <class T>
ChannelModel<T> model_from_json(const json& j) {
  ChannelModel<T> model;
  try {
    model.dims = dims_from_json(j.at("dims"));
    const auto powers = j.at("powers").get<std::vector<double>>();
    model.P.assign(powers.begin(), powers.end());
    const json& links = j.at("links");
    if (!links.is_array() || static_cast<Index>(links.size()) != model.dims.L)
      throw ParseError("links: expected L rows");
    model.links.resize(model.dims.L);
    for (Index l = 0; l < model.dims.L; ++l) {
      const json& row = links[l];
      if (!row.is_array() || static_cast<Index>(row.size()) != model.dims.K)
        throw ParseError("links: expected K entries per row");
      model.links[l].resize(model.dims.K);
      for (Index k = 0; k < model.dims.K; ++k) {
        const json& e = row[k];
        const Index n = model.dims.N_l[l], m = model.dims.M_k[k];
        const std::string tag =
            "link(" + std::to_string(l) + "," + std::to_string(k) + ")";
        LinkStatistics<T>& s = model.links[l][k];
        s.Hbar = cmat_from_json<T>(e.at("hbar"), n, m, tag + ".hbar");
        s.U = cmat_from_json<T>(e.at("u"), n, n, tag + ".u");
        s.V = cmat_from_json<T>(e.at("v"), m, m, tag + ".v");
        s.G = rmat_from_json<T>(e.at("g"), n, m, tag + ".g");
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  check_structure(model);
  return model;
}

// ---------------------------------------------------------------------------
// Covariance sets

template <class T>
json covariances_to_json(const InputCovarianceSet<T>& q) {
  json mk = json::array(), mats = json::array();
  for (const CMat<T>& m : q.Q) {
    mk.push_back(m.rows());
    mats.push_back(cmat_to_json(m));
  }
  return json{{"M_k", mk}, {"Q", mats}};
}

template <class T>
InputCovarianceSet<T> covariances_from_json(const json& j) {
  InputCovarianceSet<T> out;
  try {
    const auto mk = j.at("M_k").get<std::vector<Index>>();
    const json& mats = j.at("Q");
    if (!mats.is_array() || mats.size() != mk.size())
      throw ParseError("covariances: Q list does not match M_k list");
    for (std::size_t k = 0; k < mk.size(); ++k)
      out.Q.push_back(cmat_from_json<T>(mats[k], mk[k], mk[k],
                                        "Q_" + std::to_string(k)));
  } catch (const json::exception& e) {
    throw ParseError(std::string("covariances: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample sets

template <class T>
json samples_to_json(const SampleSet<T>& set) {
  json mats = json::array();
  for (const CMat<T>& h : set.H) mats.push_back(cmat_to_json(h));
  return json{{"dims", dims_to_json(set.dims)},
              {"S", set.H.size()},
              {"samples", mats}};
}

template <class T>
SampleSet<T> samples_from_json(const json& j) {
  SampleSet<T> out;
  try {
    out.dims = dims_from_json(j.at("dims"));
    const auto s = j.at("S").get<Index>();
    const json& mats = j.at("samples");
    if (!mats.is_array() || static_cast<Index>(mats.size()) != s)
      throw ParseError("samples: S does not match the sample list length");
    const Index n = out.dims.N(), m = out.dims.M();
    for (Index i = 0; i < s; ++i)
      out.H.push_back(cmat_from_json<T>(mats[i], n, m,
                                        "sample " + std::to_string(i)));
  } catch (const json::exception& e) {
    throw ParseError(std::string("samples: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void save_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << j.dump(1) << '\n';
}

template <class T>
ChannelModel<T> load_model(const std::string& path) {
  return model_from_json<T>(load_json_file(path));
}

template <class T>
void save_model(const std::string& path, const ChannelModel<T>& model) {
  save_json_file(path, model_to_json(model));
}

template <class T>
SampleSet<T> load_samples(const std::string& path) {
  return samples_from_json<T>(load_json_file(path));
}

template <class T>
void save_samples(const std::string& path, const SampleSet<T>& set) {
  save_json_file(path, samples_to_json(set));
}

template <class T>
InputCovarianceSet<T> load_covariances(const std::string& path) {
  return covariances_from_json<T>(load_json_file(path));
}

template <class T>
void save_covariances(const std::string& path,
                      const InputCovarianceSet<T>& q) {
  save_json_file(path, covariances_to_json(q));
}

// ---------------------------------------------------------------------------
// CSV number formatting: 17 significant digits round-trip doubles exactly.

inline std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace demac
