#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lapir/config.hpp"

namespace lapir {

/// Binary container shared by checkpoints and patch caches:
///
///   "LIRS" | u32 version | u32 text length | text
///   then per tensor: u32 name length | name | u32 ndim | u32 dims[ndim] | f32 data
///
/// All integers and floats are little-endian.
struct TensorArchive {
  static constexpr char kMagic[4] = {'L', 'I', 'R', 'S'};
  static constexpr std::uint32_t kVersion = 1;

  std::string text;
  std::map<std::string, Tensor> tensors;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class ArchiveReader {
 public:
  explicit ArchiveReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string raw(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<double>& out, std::size_t n, const std::string& what) {
    need(n * 4, what);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes_.data() + pos_ + 4 * i, 4);
      out[i] = f;
    }
    pos_ += n * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (bytes_.size() - pos_ < n) {
      throw Error("archive: truncated at byte " + std::to_string(pos_) + " while reading " + what + " (need " +
                  std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const TensorArchive& a) {
  std::string out(TensorArchive::kMagic, 4);
  detail::put_u32(out, TensorArchive::kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(a.text.size()));
  out += a.text;
  for (const auto& [name, t] : a.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, 4);
    const Shape& s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
    const std::size_t start = out.size();
    out.resize(start + 4 * t.numel());
    auto v = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v[i]);
      std::memcpy(out.data() + start + 4 * i, &f, 4);
    }
  }
  return out;
}

inline TensorArchive deserialize(const std::string& bytes) {
  detail::ArchiveReader rd(bytes);
  const std::string magic = rd.raw(4, "magic");
  if (magic != std::string(TensorArchive::kMagic, 4)) throw Error("archive: bad magic at byte 0");
  const std::uint32_t version = rd.u32("version");
  if (version != TensorArchive::kVersion) {
    throw Error("archive: unsupported version " + std::to_string(version) + " at byte 4");
  }
  TensorArchive a;
  const std::uint32_t text_len = rd.u32("config length");
  a.text = rd.raw(text_len, "config block");
  std::size_t index = 0;
  while (!rd.done()) {
    const std::string rec = "tensor record #" + std::to_string(index);
    const std::uint32_t name_len = rd.u32(rec + " name length");
    const std::string name = rd.raw(name_len, rec + " name");
    const std::string label = "tensor record '" + name + "'";
    const std::uint32_t ndim = rd.u32(label + " rank");
    if (ndim != 4) throw Error("archive: " + label + " has rank " + std::to_string(ndim) + ", expected 4");
    std::size_t dims[4];
    for (auto& d : dims) d = rd.u32(label + " dims");
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    std::vector<double> values;
    rd.floats(values, s.numel(), label + " data");
    if (!a.tensors.emplace(name, Tensor(s, std::move(values))).second) {
      throw Error("archive: duplicate " + label + " ending at byte " + std::to_string(rd.offset()));
    }
    ++index;
  }
  return a;
}

inline void save_archive(const TensorArchive& a, const std::filesystem::path& path) {
  const std::string bytes = serialize(a);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("archive: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("archive: write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline TensorArchive load_archive(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Where training stood when a checkpoint was taken.
struct CheckpointMeta {
  int stage = 0;               // 0 untrained, 1 level-wise, 2 fine-tuned, 3 joint (random-init arm)
  std::size_t level = 0;       // level being trained in stage 1
  std::size_t epochs_done = 0; // completed epochs of that stage/level
  bool complete = false;       // stage (or level) finished
};

/// Network tensors (parameters, normalization statistics), optimizer state
/// ("optim.<slot>/<param>") and the run configuration.
struct Checkpoint {
  RunConfig config;
  CheckpointMeta meta;
  std::map<std::string, Tensor> tensors;
  std::string config_text;  // verbatim text block; regenerated when empty

  TensorArchive to_archive() const {
    TensorArchive a;
    a.text = config_text.empty() ? render_text() : config_text;
    for (const auto& [name, t] : tensors) a.tensors.emplace(name, t.detach());
    return a;
  }

  std::string render_text() const {
    std::ostringstream os;
    os << config.to_text() << "\n[meta]\n"
       << "stage=" << meta.stage << "\n"
       << "level=" << meta.level << "\n"
       << "epochs_done=" << meta.epochs_done << "\n"
       << "complete=" << (meta.complete ? "true" : "false") << "\n";
    return os.str();
  }

  static Checkpoint from_archive(TensorArchive a) {
    Checkpoint c;
    c.config = RunConfig::from_text(a.text);
    boost::property_tree::ptree tree;
    std::istringstream is(a.text);
    boost::property_tree::ini_parser::read_ini(is, tree);
    if (auto meta = tree.get_child_optional("meta")) {
      c.meta.stage = meta->get<int>("stage", 0);
      c.meta.level = meta->get<std::size_t>("level", 0);
      c.meta.epochs_done = meta->get<std::size_t>("epochs_done", 0);
      c.meta.complete = meta->get<std::string>("complete", "false") == "true";
    }
    c.config_text = std::move(a.text);
    c.tensors = std::move(a.tensors);
    return c;
  }

  /// Snapshot of a network's tensors.
  static Checkpoint of(const Network& net, const RunConfig& cfg, CheckpointMeta meta) {
    Checkpoint c;
    c.config = cfg;
    c.config.network = net.config();
    c.meta = meta;
    for (const auto& [name, p] : net.params().entries()) c.tensors.emplace(name, p.tensor.detach());
    return c;
  }

  /// Copies stored network tensors into `net`; every parameter must be present exactly once.
  void apply_to(Network& net) const {
    for (auto& [name, p] : net.params().entries()) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw Error("checkpoint: missing parameter " + name);
      if (it->second.shape() != p.tensor.shape()) {
        throw Error("checkpoint: parameter " + name + " has shape " + it->second.shape().str() + ", network expects " +
                    p.tensor.shape().str());
      }
      auto dst = p.tensor.mutable_data();
      std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
    }
  }

  /// Rebuilds the network described by the stored configuration.
  Network network() const {
    Network net = Network::build(config.network, config.init_seed);
    apply_to(net);
    return net;
  }
};

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) { save_archive(c.to_archive(), path); }

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return Checkpoint::from_archive(load_archive(path));
}

}  // namespace lapir
