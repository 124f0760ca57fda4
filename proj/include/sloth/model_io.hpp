#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"
#include "sloth/multiexit.hpp"

namespace sloth {

namespace io {

inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr char kModelMagic[4] = {'M', 'X', 'N', 'N'};

inline std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

/// Little-endian byte sink.
class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::size_t size() const noexcept { return buf_.size(); }
  const std::vector<unsigned char>& buffer() const noexcept { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

/// Little-endian byte source over an in-memory file; throws on truncation.
class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  std::span<const unsigned char> slice(std::size_t from, std::size_t to) const {
    return std::span<const unsigned char>(buf_).subspan(from, to - from);
  }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

}  // namespace io

using nlohmann::json;

inline json layer_to_json(const Layer& layer) {
  json j;
  j["kind"] = layer_kind(layer);
  if (const auto* d = std::get_if<Dense>(&layer)) {
    j["in"] = d->in;
    j["out"] = d->out;
  } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
    j["in_ch"] = c->in_ch;
    j["out_ch"] = c->out_ch;
    j["kernel"] = c->kernel;
    j["stride"] = c->stride;
    j["padding"] = c->padding;
  } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
    j["window"] = p->window;
    j["stride"] = p->stride;
  }
  return j;
}

inline Layer layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "dense") return Dense(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
  if (kind == "conv2d") {
    return Conv2d(j.at("in_ch").get<std::size_t>(), j.at("out_ch").get<std::size_t>(),
                  j.at("kernel").get<std::size_t>(), j.value("stride", std::size_t{1}),
                  j.value("padding", std::size_t{0}));
  }
  if (kind == "relu") return Relu{};
  if (kind == "maxpool") {
    return MaxPool{j.value("window", std::size_t{2}), j.value("stride", std::size_t{2})};
  }
  if (kind == "flatten") return Flatten{};
  throw FormatError("unknown layer kind '" + kind + "'");
}

/// Architecture without parameters.
inline json architecture_to_json(const MultiExitNetwork& net) {
  json j;
  j["input_shape"] = net.input_shape();
  j["num_classes"] = net.num_classes();
  j["blocks"] = json::array();
  for (const auto& b : net.blocks()) {
    json jb = json::array();
    for (const Layer& l : b) jb.push_back(layer_to_json(l));
    j["blocks"].push_back(jb);
  }
  j["exits"] = json::array();
  for (const ExitHead& e : net.exits()) {
    json je;
    je["attach"] = e.attach_block;
    je["layers"] = json::array();
    for (const Layer& l : e.layers) je["layers"].push_back(layer_to_json(l));
    j["exits"].push_back(je);
  }
  j["cost_model"] = {{"block_flops", net.cost_model().block_flops},
                     {"head_flops", net.cost_model().head_flops}};
  j["metadata"] = net.metadata();
  return j;
}

/// Builds a zero-initialised network from an architecture descriptor.
inline MultiExitNetwork architecture_from_json(const json& j) {
  std::vector<std::vector<Layer>> blocks;
  for (const json& jb : j.at("blocks")) {
    std::vector<Layer> b;
    for (const json& jl : jb) b.push_back(layer_from_json(jl));
    blocks.push_back(std::move(b));
  }
  std::vector<ExitHead> exits;
  for (const json& je : j.at("exits")) {
    ExitHead e;
    e.attach_block = je.at("attach").get<std::size_t>();
    for (const json& jl : je.at("layers")) e.layers.push_back(layer_from_json(jl));
    exits.push_back(std::move(e));
  }
  MultiExitNetwork net(j.at("input_shape").get<Shape>(), j.at("num_classes").get<std::size_t>(),
                       std::move(blocks), std::move(exits));
  if (j.contains("cost_model")) {
    CostModel cm;
    cm.block_flops = j["cost_model"].at("block_flops").get<std::vector<std::uint64_t>>();
    cm.head_flops = j["cost_model"].at("head_flops").get<std::vector<std::uint64_t>>();
    net.set_cost_model(cm);
  }
  if (j.contains("metadata")) net.metadata() = j["metadata"].get<std::map<std::string, std::string>>();
  return net;
}

/// "MXNN" | u32 version | u32 descriptor length | descriptor JSON | f64 params | u32 CRC32(params).
inline std::vector<unsigned char> serialize_model(const MultiExitNetwork& net) {
  io::Writer w;
  w.bytes(io::kModelMagic, 4);
  w.u32(io::kModelVersion);
  const std::string desc = architecture_to_json(net).dump();
  w.u32(static_cast<std::uint32_t>(desc.size()));
  w.bytes(desc.data(), desc.size());
  io::Writer payload;
  net.for_each_layer([&](const Layer& l) {
    for (const Tensor* p : parameters(l))
      for (double v : p->data()) payload.f64(v);
  });
  w.bytes(payload.buffer().data(), payload.size());
  w.u32(io::crc32(payload.buffer()));
  return w.buffer();
}

inline MultiExitNetwork deserialize_model(std::vector<unsigned char> bytes) {
  io::Reader r(std::move(bytes));
  if (r.remaining() < 4 || r.str(4) != std::string(io::kModelMagic, 4)) throw FormatError("bad magic");
  const std::uint32_t version = r.u32();
  if (version != io::kModelVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  const std::uint32_t desc_len = r.u32();
  json desc;
  try {
    desc = json::parse(r.str(desc_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad architecture descriptor: ") + e.what());
  }
  MultiExitNetwork net;
  try {
    net = architecture_from_json(desc);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad architecture descriptor: ") + e.what());
  }
  const std::size_t begin = r.pos();
  r.need(net.parameter_count() * 8 + 4);
  net.for_each_layer([&](Layer& l) {
    for (Tensor* p : parameters(l))
      for (double& v : p->data()) v = r.f64();
  });
  const std::uint32_t expected = io::crc32(r.slice(begin, r.pos()));
  if (r.u32() != expected) throw FormatError("checksum mismatch");
  if (r.remaining() != 0) throw FormatError("trailing bytes after model payload");
  return net;
}

inline void save_model(const MultiExitNetwork& net, const std::string& path) {
  io::write_file(path, serialize_model(net));
}

inline MultiExitNetwork load_model(const std::string& path) { return deserialize_model(io::read_file(path)); }

// ---- stock architectures ----

/// Four-exit convolutional model for [C, H, W] inputs with H, W divisible by 4.
inline MultiExitNetwork make_conv4(std::size_t channels, std::size_t height, std::size_t width,
                                   std::size_t num_classes, std::size_t width_mult = 4) {
  const std::size_t c1 = width_mult, c2 = width_mult, c3 = 2 * width_mult, hidden = 8 * width_mult;
  const std::size_t h2 = height / 2, w2 = width / 2, h4 = height / 4, w4 = width / 4;
  std::vector<std::vector<Layer>> blocks{
      {Conv2d(channels, c1, 3, 1, 1), Relu{}, MaxPool{2, 2}},
      {Conv2d(c1, c2, 3, 1, 1), Relu{}, MaxPool{2, 2}},
      {Conv2d(c2, c3, 3, 1, 1), Relu{}, Flatten{}},
      {Dense(c3 * h4 * w4, hidden), Relu{}},
  };
  std::vector<ExitHead> exits{
      {0, {Flatten{}, Dense(c1 * h2 * w2, num_classes)}},
      {1, {Flatten{}, Dense(c2 * h4 * w4, num_classes)}},
      {2, {Dense(c3 * h4 * w4, num_classes)}},
      {3, {Dense(hidden, num_classes)}},
  };
  MultiExitNetwork net({channels, height, width}, num_classes, std::move(blocks), std::move(exits));
  net.metadata()["arch"] = "conv4";
  return net;
}

/// Four-exit fully connected model.
inline MultiExitNetwork make_mlp4(std::size_t channels, std::size_t height, std::size_t width,
                                  std::size_t num_classes, std::size_t hidden = 32) {
  const std::size_t d = channels * height * width;
  std::vector<std::vector<Layer>> blocks{
      {Flatten{}, Dense(d, hidden), Relu{}},
      {Dense(hidden, hidden), Relu{}},
      {Dense(hidden, hidden), Relu{}},
      {Dense(hidden, hidden), Relu{}},
  };
  std::vector<ExitHead> exits;
  for (std::size_t j = 0; j < 4; ++j) exits.push_back({j, {Dense(hidden, num_classes)}});
  MultiExitNetwork net({channels, height, width}, num_classes, std::move(blocks), std::move(exits));
  net.metadata()["arch"] = "mlp4";
  return net;
}

/// `width` scales the stock model; 0 keeps its default.
inline MultiExitNetwork make_architecture(const std::string& name, const Shape& input, std::size_t m,
                                          std::size_t width = 0) {
  if (input.size() != 3) throw ShapeError("stock architectures expect [C,H,W] inputs");
  if (name == "conv4") return make_conv4(input[0], input[1], input[2], m, width ? width : 4);
  if (name == "mlp4") return make_mlp4(input[0], input[1], input[2], m, width ? width : 32);
  throw Error("unknown architecture '" + name + "'");
}

}  // namespace sloth
