// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "datadream/autodiff.hpp"
#include "datadream/binio.hpp"
#include "datadream/errors.hpp"
#include "datadream/hashing.hpp"
#include "datadream/rng.hpp"
#include "datadream/types.hpp"

#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace datadream {

enum class Host : uint8_t { denoiser = 0, text_encoder = 1, image_encoder = 2 };
enum class Proj : uint8_t { q = 0, k = 1, v = 2, o = 3 };

const char* host_name(Host h);
const char* proj_name(Proj p);
Host host_from_name(const std::string& s);
Proj proj_from_name(const std::string& s);

// Identifies one wrapped projection: (host network, attention layer, q/k/v/o).
struct TargetId {
  Host host = Host::denoiser;
  int layer = 0;
  Proj proj = Proj::q;

  std::string to_string() const;
  static TargetId parse(const std::string& s);
  auto operator<=>(const TargetId&) const = default;
};

// Low-rank factor pair delta = B*A for one projection. B starts at zero so
// the adapted model is initially identical to the base.
template <class S>
struct LowRankAdapterT {
  ag::Variable<S> A;  // r x k
  ag::Variable<S> B;  // d x r
  int rank = 0;
  TargetId target;

  Index d() const { return B.value().rows(); }
  Index k() const { return A.value().cols(); }
};

using LowRankAdapter = LowRankAdapterT<float>;

inline constexpr const char* kAdapterInitScheme = "kaiming_uniform_fan_in";

template <class S>
LowRankAdapterT<S> init_adapter(Index d, Index k, int r, uint64_t seed, TargetId target = {}) {
  if (r <= 0 || r >= std::min(d, k))
    throw std::invalid_argument("init_adapter: rank must satisfy 0 < r < min(d, k), got r=" +
                                std::to_string(r) + " with d=" + std::to_string(d) +
                                ", k=" + std::to_string(k));
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  LowRankAdapterT<S> a;
  a.A = ag::param<S>(rng.uniform_matrix<S>(r, k, -bound, bound));
  a.B = ag::param<S>(MatX<S>::Zero(d, r));
  a.rank = r;
  a.target = target;
  return a;
}

// W h + B (A h); the base term uses the frozen weight as-is.
template <class S>
VecX<S> adapted_projection(const MatX<S>& w, const LowRankAdapterT<S>& ad, const VecX<S>& h) {
  if (w.cols() != h.size() || ad.A.value().cols() != h.size() || ad.B.value().rows() != w.rows() ||
      ad.A.value().rows() != ad.B.value().cols())
    throw std::invalid_argument("adapted_projection: shape mismatch");
  return w * h + ad.B.value() * (ad.A.value() * h);
}

// W + B*A; forwarding through the merged matrix equals adapted_projection.
template <class S>
MatX<S> merge_adapter(const MatX<S>& w, const LowRankAdapterT<S>& ad) {
  if (ad.B.value().rows() != w.rows() || ad.A.value().cols() != w.cols() ||
      ad.A.value().rows() != ad.B.value().cols())
    throw std::invalid_argument("merge_adapter: shape mismatch");
  return w + ad.B.value() * ad.A.value();
}

template <class S>
long adapter_param_count(const LowRankAdapterT<S>& ad) {
  return static_cast<long>(ad.rank) * (ad.d() + ad.k());
}

// A linear projection with a frozen base weight and an optional attached
// low-rank adapter. forward(x) = x W^T + (x A^T) B^T, rows are tokens.
template <class S>
struct AdaptedLinearT {
  ag::Variable<S> w;  // d_out x d_in
  std::shared_ptr<LowRankAdapterT<S>> adapter;

  ag::Variable<S> forward(const ag::Variable<S>& x) const {
    ag::Variable<S> out = ag::linear(x, w);
    if (adapter) out = ag::add(out, ag::linear(ag::linear(x, adapter->A), adapter->B));
    return out;
  }
};

template <class S>
struct ProjectionSlot {
  TargetId id;
  AdaptedLinearT<S>* lin;
};

struct TargetSpec {
  std::set<Host> hosts;

  static TargetSpec denoiser_only() { return {{Host::denoiser}}; }
  static TargetSpec denoiser_and_text() { return {{Host::denoiser, Host::text_encoder}}; }
  static TargetSpec both_towers() { return {{Host::image_encoder, Host::text_encoder}}; }
};

template <class S>
struct AdapterSetT {
  std::vector<std::shared_ptr<LowRankAdapterT<S>>> adapters;
  TargetSpec spec;
  int rank = 0;
  uint64_t seed = 0;

  std::vector<ag::Variable<S>> trainable_params() const {
    std::vector<ag::Variable<S>> out;
    for (const auto& a : adapters) {
      out.push_back(a->A);
      out.push_back(a->B);
    }
    return out;
  }

  long param_count() const {
    long n = 0;
    for (const auto& a : adapters) n += adapter_param_count(*a);
    return n;
  }

  void validate_unique() const {
    std::set<TargetId> seen;
    for (const auto& a : adapters)
      if (!seen.insert(a->target).second)
        throw std::invalid_argument("adapter set: duplicate target " + a->target.to_string());
  }
};

using AdapterSet = AdapterSetT<float>;

// Wraps every attention projection of the targeted hosts with a fresh
// zero-initialized adapter and freezes the base weights. The host must
// expose adapter_slots().
template <class S, class Model>
AdapterSetT<S> inject(Model& model, const TargetSpec& spec, int rank, uint64_t seed) {
  AdapterSetT<S> set;
  set.spec = spec;
  set.rank = rank;
  set.seed = seed;
  for (Host h : spec.hosts) {
    bool found = false;
    for (ProjectionSlot<S> slot : model.adapter_slots()) {
      if (slot.id.host != h) continue;
      found = true;
      const uint64_t sub = derive_seed(seed, slot.id.to_string());
      auto ad = std::make_shared<LowRankAdapterT<S>>(
          init_adapter<S>(slot.lin->w.value().rows(), slot.lin->w.value().cols(), rank, sub, slot.id));
      slot.lin->adapter = ad;
      slot.lin->w.set_requires_grad(false);
      set.adapters.push_back(std::move(ad));
    }
    if (!found)
      throw ConfigError(std::string("inject: host '") + host_name(h) + "' has no attention layers");
  }
  set.validate_unique();
  return set;
}

template <class S, class Model>
void detach_adapters(Model& model) {
  for (ProjectionSlot<S> slot : model.adapter_slots()) slot.lin->adapter = nullptr;
}

enum class BankRegime : uint8_t { dset = 0, cls = 1 };

// Adapter sets keyed by class index: one shared entry (dset) or one per
// class (cls, keys 1..N).
template <class S>
struct AdapterBankT {
  BankRegime regime = BankRegime::dset;
  int rank = 0;
  uint64_t seed = 0;
  std::string init_scheme = kAdapterInitScheme;
  std::map<int, AdapterSetT<S>> entries;

  void validate(int num_classes = -1) const {
    if (regime == BankRegime::dset && entries.size() != 1)
      throw std::invalid_argument("dset bank must have exactly one entry");
    if (regime == BankRegime::cls && num_classes >= 0 &&
        entries.size() != static_cast<size_t>(num_classes))
      throw std::invalid_argument("cls bank must have one entry per class");
    for (const auto& [cls, set] : entries) set.validate_unique();
  }

  const AdapterSetT<S>& entry_for_class(int cls) const {
    if (regime == BankRegime::dset) return entries.begin()->second;
    auto it = entries.find(cls);
    if (it == entries.end())
      throw std::invalid_argument("bank has no entry for class " + std::to_string(cls));
    return it->second;
  }
};

using AdapterBank = AdapterBankT<float>;

inline constexpr uint32_t kBankVersion = 1;

template <class S>
void save_adapter_bank(const AdapterBankT<S>& bank, const std::filesystem::path& path);
template <class S>
AdapterBankT<S> load_adapter_bank(const std::filesystem::path& path);

uint64_t hash_matrix(const Matrix& m);

template <class S>
uint64_t hash_params(const std::vector<ag::Variable<S>>& params) {
  Fnv1a64 h;
  for (const auto& p : params)
    for (Index i = 0; i < p.rows(); ++i)
      for (Index j = 0; j < p.cols(); ++j) h.update_pod(p.value()(i, j));
  return h.digest();
}

template <class S>
uint64_t hash_bank(const AdapterBankT<S>& bank) {
  Fnv1a64 h;
  h.update_pod(bank.regime);
  h.update_pod(bank.rank);
  h.update_pod(bank.seed);
  for (const auto& [cls, set] : bank.entries) {
    h.update_pod(cls);
    for (const auto& a : set.adapters) {
      h.update(a->target.to_string());
      h.update_pod(hash_params<S>({a->A, a->B}));
    }
  }
  return h.digest();
}

// --- bank container ------------------------------------------------------
// header: magic "DDBK", version, regime, rank, seed, init scheme
// records: length-prefixed (class index, target id, d, k, r, A, B)

template <class S>
void save_adapter_bank(const AdapterBankT<S>& bank, const std::filesystem::path& path) {
  bank.validate();
  BinWriter w(path);
  w.magic("DDBK");
  w.u32(kBankVersion);
  w.u8(static_cast<uint8_t>(bank.regime));
  w.u32(static_cast<uint32_t>(bank.rank));
  w.u64(bank.seed);
  w.str(bank.init_scheme);
  w.u32(static_cast<uint32_t>(bank.entries.size()));
  for (const auto& [cls, set] : bank.entries) {
    for (const auto& a : set.adapters) {
      // serialize the record payload to count its length
      std::string payload;
      auto put = [&payload](const void* p, size_t n) {
        payload.append(static_cast<const char*>(p), n);
      };
      auto put_u32 = [&](uint32_t v) { put(&v, 4); };
      put_u32(static_cast<uint32_t>(cls));
      const std::string tid = a->target.to_string();
      put_u32(static_cast<uint32_t>(tid.size()));
      put(tid.data(), tid.size());
      put_u32(static_cast<uint32_t>(a->d()));
      put_u32(static_cast<uint32_t>(a->k()));
      put_u32(static_cast<uint32_t>(a->rank));
      auto put_mat = [&](const MatX<S>& m) {
        for (Index i = 0; i < m.rows(); ++i)
          for (Index j = 0; j < m.cols(); ++j) {
            float f = static_cast<float>(m(i, j));
            put(&f, 4);
          }
      };
      put_mat(a->A.value());
      put_mat(a->B.value());
      w.u32(static_cast<uint32_t>(payload.size()));
      w.u32(static_cast<uint32_t>(payload.size()));  // duplicated length, cheap corruption check
      w.bytes(payload);
    }
  }
  w.close();
}

template <class S>
AdapterBankT<S> load_adapter_bank(const std::filesystem::path& path) {
  BinReader r(path, "adapter bank");
  r.expect_magic("DDBK");
  const uint32_t version = r.u32();
  if (version != kBankVersion)
    throw FormatError("adapter bank: unsupported version " + std::to_string(version));
  AdapterBankT<S> bank;
  bank.regime = static_cast<BankRegime>(r.u8());
  bank.rank = static_cast<int>(r.u32());
  bank.seed = r.u64();
  bank.init_scheme = r.str();
  const uint32_t n_entries = r.u32();
  int record_idx = 0;
  while (!r.at_end()) {
    ++record_idx;
    const std::string rec_name = "record " + std::to_string(record_idx);
    uint32_t len, len2;
    try {
      len = r.u32();
      len2 = r.u32();
    } catch (const IntegrityError&) {
      throw IntegrityError("adapter bank: " + rec_name + " truncated");
    }
    if (len != len2) throw IntegrityError("adapter bank: " + rec_name + " header corrupt");
    std::string payload;
    size_t pos = 0;
    try {
      payload = r.bytes(len);
    } catch (const IntegrityError&) {
      throw IntegrityError("adapter bank: " + rec_name + " truncated");
    }
    auto take = [&](void* p, size_t n) {
      if (pos + n > payload.size())
        throw IntegrityError("adapter bank: " + rec_name + " payload short");
      std::memcpy(p, payload.data() + pos, n);
      pos += n;
    };
    auto take_u32 = [&]() {
      uint32_t v;
      take(&v, 4);
      return v;
    };
    const int cls = static_cast<int>(take_u32());
    const uint32_t tid_len = take_u32();
    std::string tid(tid_len, '\0');
    take(tid.data(), tid_len);
    const uint32_t d = take_u32(), k = take_u32(), rk = take_u32();
    const uint64_t expect = 4ull + 4 + tid_len + 12 + 4ull * rk * k + 4ull * d * rk;
    if (expect != len)
      throw IntegrityError("adapter bank: " + rec_name + " (" + tid + ") size mismatch");
    auto take_mat = [&](Index rows, Index cols) {
      MatX<S> m(rows, cols);
      for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
          float f;
          take(&f, 4);
          m(i, j) = static_cast<S>(f);
        }
      return m;
    };
    LowRankAdapterT<S> a;
    a.A = ag::param<S>(take_mat(rk, k));
    a.B = ag::param<S>(take_mat(d, rk));
    a.rank = static_cast<int>(rk);
    a.target = TargetId::parse(tid);
    auto& set = bank.entries[cls];
    set.rank = bank.rank;
    set.seed = bank.seed;
    set.adapters.push_back(std::make_shared<LowRankAdapterT<S>>(std::move(a)));
  }
  if (bank.entries.size() != n_entries)
    throw IntegrityError("adapter bank: expected " + std::to_string(n_entries) + " entries, found " +
                         std::to_string(bank.entries.size()));
  for (auto& [cls, set] : bank.entries)
    for (const auto& a : set.adapters) set.spec.hosts.insert(a->target.host);
  bank.validate();
  return bank;
}

}  // namespace datadream
