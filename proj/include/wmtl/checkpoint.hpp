#pragma once

#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include "wmtl/adam.hpp"
#include "wmtl/errors.hpp"
#include "wmtl/nets.hpp"
#include "wmtl/params.hpp"
#include "wmtl/sha256.hpp"

namespace wmtl {

using json = nlohmann::json;

inline json spec_to_json(const ModelSpec& s) {
  return json{{"obs_dim", s.obs_dim},
              {"deter_dim", s.deter_dim},
              {"stoch_dim", s.stoch_dim},
              {"hidden_dim", s.hidden_dim},
              {"encoder_widths", s.encoder_widths},
              {"decoder_widths", s.decoder_widths},
              {"head_widths", s.head_widths},
              {"action_dim", s.action_dim},
              {"meta_input_width", s.meta_input_width},
              {"min_std", s.min_std}};
}

inline ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.obs_dim = j.at("obs_dim").get<std::size_t>();
  s.deter_dim = j.at("deter_dim").get<std::size_t>();
  s.stoch_dim = j.at("stoch_dim").get<std::size_t>();
  s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  s.encoder_widths = j.at("encoder_widths").get<std::vector<std::size_t>>();
  s.decoder_widths = j.at("decoder_widths").get<std::vector<std::size_t>>();
  s.head_widths = j.at("head_widths").get<std::vector<std::size_t>>();
  s.action_dim = j.at("action_dim").get<std::size_t>();
  s.meta_input_width = j.at("meta_input_width").get<std::size_t>();
  s.min_std = j.at("min_std").get<double>();
  return s;
}

/// Saved Adam state for one optimizer (moments per path plus step count).
struct OptimizerRecord {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::map<std::string, AdamSlot> slots;
};

/// A complete persisted agent: free-form JSON metadata (domains, model spec,
/// fingerprints, counters), every named parameter with its role, and
/// optionally optimizer state for runs meant to be resumed.
struct AgentCheckpoint {
  std::uint32_t format_version = kFormatVersion;
  json metadata = json::object();
  NamedParamSet params;
  std::map<std::string, OptimizerRecord> optimizers;
  std::vector<std::string> load_warnings;  // filled by load, never serialized

  static constexpr std::uint32_t kFormatVersion = 1;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  std::uint32_t u32(const char* section) {
    need(4, section);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* section) {
    need(8, section);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64(const char* section) { return std::bit_cast<double>(u64(section)); }

  unsigned char byte(const char* section) {
    need(1, section);
    return static_cast<unsigned char>(data_[pos_++]);
  }

  std::string str(const char* section) {
    const std::uint32_t n = u32(section);
    need(n, section);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::vector<double> f64_array(std::uint64_t n, const char* section) {
    if (n > (data_.size() - pos_) / 8) {
      throw FormatError("'" + path_ + "': corrupt payload length in " + section);
    }
    std::vector<double> out(n);
    for (std::uint64_t i = 0; i < n; ++i) out[i] = f64(section);
    return out;
  }

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* section) {
    if (data_.size() - pos_ < n) {
      throw FormatError("'" + path_ + "': truncated file in " + section + " section");
    }
  }

  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline unsigned char role_byte(ParamRole role) {
  switch (role) {
    case ParamRole::FeatureExtraction: return 0;
    case ParamRole::ActionInput: return 1;
    case ParamRole::OutputHead: return 2;
  }
  return 255;
}

inline ParamRole role_from_byte(unsigned char b, const std::string& path) {
  switch (b) {
    case 0: return ParamRole::FeatureExtraction;
    case 1: return ParamRole::ActionInput;
    case 2: return ParamRole::OutputHead;
  }
  throw FormatError("'" + path + "': unknown role tag byte " + std::to_string(int(b)));
}

}  // namespace detail

/// Hash of the encoder parameters (paths and payload bytes, lexicographic
/// order), identifying a shared feature space across agents.
inline std::string encoder_fingerprint(const NamedParamSet& params) {
  Sha256 h;
  for (const auto& [path, entry] : params) {
    if (path.rfind("encoder/", 0) != 0) continue;
    h.update(path);
    h.update("\0", 1);
    for (double v : entry.tensor.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      unsigned char le[8];
      for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
      h.update(le, 8);
    }
  }
  return h.hex_digest();
}

/// Canonical byte serialization: magic, version, length-prefixed compact
/// JSON metadata (keys sorted), tensor records sorted by path, then the
/// optimizer table. Identical checkpoints serialize to identical bytes.
inline std::string serialize_checkpoint(const AgentCheckpoint& ckpt) {
  std::string out;
  out.append("WMTL");
  detail::put_u32(out, ckpt.format_version);
  detail::put_str(out, ckpt.metadata.dump());

  detail::put_u64(out, ckpt.params.size());
  for (const auto& [path, entry] : ckpt.params) {
    detail::put_str(out, path);
    out.push_back(static_cast<char>(detail::role_byte(entry.role)));
    out.push_back(0);  // dtype 0 = f64
    const Shape& shape = entry.tensor.shape();
    detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) detail::put_u64(out, d);
    for (double v : entry.tensor.values()) detail::put_f64(out, v);
  }

  out.push_back(ckpt.optimizers.empty() ? 0 : 1);
  if (!ckpt.optimizers.empty()) {
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.optimizers.size()));
    for (const auto& [name, rec] : ckpt.optimizers) {
      detail::put_str(out, name);
      detail::put_f64(out, rec.config.learning_rate);
      detail::put_f64(out, rec.config.beta1);
      detail::put_f64(out, rec.config.beta2);
      detail::put_f64(out, rec.config.epsilon);
      detail::put_f64(out, rec.config.clip_norm);
      detail::put_u64(out, rec.step_count);
      detail::put_u64(out, rec.slots.size());
      for (const auto& [path, slot] : rec.slots) {
        detail::put_str(out, path);
        detail::put_u64(out, slot.m.size());
        for (double v : slot.m) detail::put_f64(out, v);
        for (double v : slot.v) detail::put_f64(out, v);
      }
    }
  }
  return out;
}

inline void save_checkpoint(const AgentCheckpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw IoError("cannot open '" + path + "' for writing: " + std::strerror(errno));
  std::size_t written = 0;
  while (written < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + written, bytes.size() - written);
    if (n < 0) {
      const int err = errno;
      ::close(fd);
      throw IoError("write failed for '" + path + "': " + std::strerror(err));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    const int err = errno;
    ::close(fd);
    throw IoError("fsync failed for '" + path + "': " + std::strerror(err));
  }
  ::close(fd);
}

inline AgentCheckpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  {
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
    char buf[1 << 16];
    ssize_t n;
    while ((n = ::read(fd, buf, sizeof buf)) > 0) bytes.append(buf, static_cast<std::size_t>(n));
    const int err = errno;
    ::close(fd);
    if (n < 0) throw IoError("read failed for '" + path + "': " + std::strerror(err));
  }
  if (bytes.size() < 4 || bytes.compare(0, 4, "WMTL") != 0) {
    throw FormatError("'" + path + "': bad magic bytes (not a checkpoint file)");
  }
  detail::Reader r(bytes, path);
  for (int i = 0; i < 4; ++i) r.byte("magic");

  AgentCheckpoint ckpt;
  ckpt.format_version = r.u32("version");
  if (ckpt.format_version != AgentCheckpoint::kFormatVersion) {
    throw FormatError("'" + path + "': unsupported format version " +
                      std::to_string(ckpt.format_version));
  }
  const std::string meta_str = r.str("metadata");
  try {
    ckpt.metadata = json::parse(meta_str);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path + "': metadata is not valid JSON: " + e.what());
  }

  const std::uint64_t ntensors = r.u64("tensor table");
  if (ntensors == 0) ckpt.load_warnings.push_back("empty tensor table");
  for (std::uint64_t i = 0; i < ntensors; ++i) {
    const std::string tpath = r.str("tensor table");
    const ParamRole role = detail::role_from_byte(r.byte("tensor table"), path);
    const unsigned char dtype = r.byte("tensor table");
    if (dtype != 0) throw FormatError("'" + path + "': unknown dtype byte for '" + tpath + "'");
    const std::uint32_t rank = r.u32("tensor table");
    if (rank > 8) throw FormatError("'" + path + "': implausible rank for '" + tpath + "'");
    Shape shape(rank);
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = r.u64("tensor table");
      count *= shape[d];
    }
    std::vector<double> values = r.f64_array(count, "tensor table");
    ckpt.params.insert(tpath, Tensor::from_values(std::move(shape), std::move(values)), role);
  }

  const unsigned char has_optim = r.byte("optimizer table");
  if (has_optim == 1) {
    const std::uint32_t nopt = r.u32("optimizer table");
    for (std::uint32_t i = 0; i < nopt; ++i) {
      const std::string name = r.str("optimizer table");
      OptimizerRecord rec;
      rec.config.learning_rate = r.f64("optimizer table");
      rec.config.beta1 = r.f64("optimizer table");
      rec.config.beta2 = r.f64("optimizer table");
      rec.config.epsilon = r.f64("optimizer table");
      rec.config.clip_norm = r.f64("optimizer table");
      rec.step_count = r.u64("optimizer table");
      const std::uint64_t nslots = r.u64("optimizer table");
      for (std::uint64_t s = 0; s < nslots; ++s) {
        const std::string spath = r.str("optimizer table");
        const std::uint64_t n = r.u64("optimizer table");
        AdamSlot slot;
        slot.m = r.f64_array(n, "optimizer table");
        slot.v = r.f64_array(n, "optimizer table");
        rec.slots[spath] = std::move(slot);
      }
      ckpt.optimizers[name] = std::move(rec);
    }
  } else if (has_optim != 0) {
    throw FormatError("'" + path + "': bad optimizer table flag");
  }
  if (!r.at_end()) {
    throw FormatError("'" + path + "': trailing bytes after optimizer table");
  }
  return ckpt;
}

inline std::string inspect_checkpoint(const AgentCheckpoint& ckpt) {
  std::ostringstream os;
  os << "format version: " << ckpt.format_version << "\n";
  os << "metadata: " << ckpt.metadata.dump(2) << "\n";
  os << "tensors: " << ckpt.params.size();
  if (ckpt.params.size() == 0) os << "  (EMPTY tensor table)";
  os << "\n";
  for (const auto& [path, entry] : ckpt.params) {
    os << "  " << path << "  " << shape_to_string(entry.tensor.shape()) << "  role="
       << to_string(entry.role) << "\n";
  }
  os << "total scalars: " << ckpt.params.total_scalars() << "\n";
  if (ckpt.optimizers.empty()) {
    os << "optimizer state: none\n";
  } else {
    for (const auto& [name, rec] : ckpt.optimizers) {
      os << "optimizer '" << name << "': lr=" << rec.config.learning_rate
         << " steps=" << rec.step_count << " slots=" << rec.slots.size() << "\n";
    }
  }
  for (const std::string& w : ckpt.load_warnings) os << "warning: " << w << "\n";
  return os.str();
}

}  // namespace wmtl
