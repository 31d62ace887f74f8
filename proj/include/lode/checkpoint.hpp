#pragma once

// Binary model checkpoints. Byte layout is described in docs/checkpoint.md.

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "lode/binio.hpp"
#include "lode/errors.hpp"
#include "lode/latent.hpp"

namespace lode {

inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'D', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LatentModel model;
  std::uint64_t seed = 0;
};

namespace detail {

template <class T>
std::pair<std::uint64_t, std::uint64_t> tensor_shape(const T& t) {
  if constexpr (std::is_same_v<T, Matrix>) {
    return {t.rows(), t.cols()};
  } else {
    return {t.size(), 1};
  }
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const LatentModel& m, std::uint64_t seed) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(m.kind() == EncoderKind::OdeRnn ? 0 : 1);
  const auto* rnn = std::get_if<RnnCellParams>(&m.params.cell);
  w.u32(static_cast<std::uint32_t>(rnn ? rnn->activation : Activation::Tanh));
  const ModelDims d = m.dims();
  for (std::size_t v : {d.input_dim, d.hidden_dim, d.enc_field_hidden, d.g_hidden, d.latent_dim,
                        d.dec_field_hidden, d.out_hidden, d.output_dim}) {
    w.u64(v);
  }
  w.u64(m.options.encoder_steps);
  w.u64(m.options.decoder_steps);
  w.u64(seed);
  std::uint32_t count = 0;
  visit_params(m.params, [&](const std::string&, const auto&) { ++count; });
  w.u32(count);
  visit_params(m.params, [&](const std::string& name, const auto& t) {
    w.str(name);
    const auto [rows, cols] = detail::tensor_shape(t);
    w.u64(rows);
    w.u64(cols);
    for (double v : t.values()) w.f64(v);
  });
  return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  char magic[8];
  r.raw(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kCheckpointMagic)) throw SchemaError("checkpoint: bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw SchemaError("checkpoint: unsupported version " + std::to_string(v));
  }
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw SchemaError("checkpoint: unknown encoder tag " + std::to_string(kind));
  const std::uint32_t act = r.u32();
  if (act > static_cast<std::uint32_t>(Activation::Identity)) {
    throw SchemaError("checkpoint: unknown activation tag " + std::to_string(act));
  }
  ModelDims d;
  for (std::size_t* p : {&d.input_dim, &d.hidden_dim, &d.enc_field_hidden, &d.g_hidden, &d.latent_dim,
                         &d.dec_field_hidden, &d.out_hidden, &d.output_dim}) {
    *p = r.u64();
  }
  ModelOptions opt;
  opt.encoder_steps = r.u64();
  opt.decoder_steps = r.u64();
  Checkpoint ck{make_zero_model(kind == 0 ? EncoderKind::OdeRnn : EncoderKind::OdeLstm, d, opt), 0};
  ck.seed = r.u64();
  if (auto* rnn = std::get_if<RnnCellParams>(&ck.model.params.cell)) {
    rnn->activation = static_cast<Activation>(act);
  }
  std::uint32_t expected = 0;
  visit_params(ck.model.params, [&](const std::string&, const auto&) { ++expected; });
  if (const auto count = r.u32(); count != expected) {
    throw SchemaError("checkpoint: " + std::to_string(count) + " blocks, expected " +
                      std::to_string(expected));
  }
  visit_params(ck.model.params, [&](const std::string& name, auto& t) {
    const std::string got = r.str();
    if (got != name) throw SchemaError("checkpoint: block '" + got + "' where '" + name + "' expected");
    const auto [rows, cols] = detail::tensor_shape(t);
    if (r.u64() != rows || r.u64() != cols) throw SchemaError("checkpoint: block '" + name + "' shape mismatch");
    for (double& v : t.values()) v = r.f64();
  });
  if (!r.at_end()) throw SchemaError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const LatentModel& m, std::uint64_t seed) {
  detail::write_file(path, serialize_checkpoint(m, seed));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace lode
