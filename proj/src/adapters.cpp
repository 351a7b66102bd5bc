// SPDX-License-Identifier: Apache-2.0
#include "datadream/adapters.hpp"

#include <array>

namespace datadream {

const char* host_name(Host h) {
  switch (h) {
    case Host::denoiser: return "denoiser";
    case Host::text_encoder: return "text_encoder";
    case Host::image_encoder: return "image_encoder";
  }
  return "?";
}

const char* proj_name(Proj p) {
  switch (p) {
    case Proj::q: return "q";
    case Proj::k: return "k";
    case Proj::v: return "v";
    case Proj::o: return "o";
  }
  return "?";
}

Host host_from_name(const std::string& s) {
  for (Host h : {Host::denoiser, Host::text_encoder, Host::image_encoder})
    if (s == host_name(h)) return h;
  throw std::invalid_argument("unknown host: " + s);
}

Proj proj_from_name(const std::string& s) {
  for (Proj p : {Proj::q, Proj::k, Proj::v, Proj::o})
    if (s == proj_name(p)) return p;
  throw std::invalid_argument("unknown projection: " + s);
}

std::string TargetId::to_string() const {
  return std::string(host_name(host)) + ".layer" + std::to_string(layer) + "." + proj_name(proj);
}

TargetId TargetId::parse(const std::string& s) {
  const auto d1 = s.find('.');
  const auto d2 = s.rfind('.');
  if (d1 == std::string::npos || d2 == d1) throw FormatError("bad target id: " + s);
  TargetId t;
  t.host = host_from_name(s.substr(0, d1));
  const std::string mid = s.substr(d1 + 1, d2 - d1 - 1);
  if (mid.rfind("layer", 0) != 0) throw FormatError("bad target id: " + s);
  t.layer = std::stoi(mid.substr(5));
  t.proj = proj_from_name(s.substr(d2 + 1));
  return t;
}

uint64_t hash_matrix(const Matrix& m) {
  Fnv1a64 h;
  const auto rows = m.rows(), cols = m.cols();
  h.update_pod(rows);
  h.update_pod(cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) h.update_pod(m(i, j));
  return h.digest();
}

}  // namespace datadream
