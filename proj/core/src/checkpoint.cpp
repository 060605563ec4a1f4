#include "adfseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "adfseg/errors.hpp"

using json = nlohmann::ordered_json;

namespace adfseg {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'F', 'S', 'G', 'C', 'K', '1'};

void write_doubles(std::ofstream& out, const nn::Tensor& t) {
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
}

void read_doubles(std::ifstream& in, nn::Tensor& t, const std::string& what) {
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
  if (!in) throw IoError("corrupt checkpoint: truncated while reading " + what);
}

json read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("corrupt checkpoint " + path + ": bad magic");
  }
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || hlen == 0 || hlen > (1u << 26)) {
    throw IoError("corrupt checkpoint " + path + ": bad header length");
  }
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("corrupt checkpoint " + path + ": truncated header");
  try {
    return json::parse(htext);
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint " + path + ": " + e.what());
  }
}

CheckpointMeta meta_from_header(const json& h) {
  CheckpointMeta meta;
  meta.epoch = h.at("epoch").get<int64_t>();
  meta.adam_t = h.at("adam_t").get<int64_t>();
  meta.sigma = h.at("sigma").get<double>();
  meta.config_hash = h.at("config_hash").get<uint64_t>();
  meta.config_text = h.value("config", "");
  return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamStore& params,
                     const std::vector<nn::Tensor>& adam_m, const std::vector<nn::Tensor>& adam_v,
                     const CheckpointMeta& meta) {
  if (adam_m.size() != params.params().size() || adam_v.size() != params.params().size()) {
    throw ContractError("save_checkpoint: optimizer state size mismatch");
  }
  json table = json::array();
  for (const auto& p : params.params()) {
    table.push_back({{"name", p.node()->name}, {"shape", p.shape()}});
  }
  json header{{"format", "adfseg-checkpoint-v1"},
              {"epoch", meta.epoch},
              {"adam_t", meta.adam_t},
              {"sigma", meta.sigma},
              {"config_hash", meta.config_hash},
              {"config", meta.config_text},
              {"params", std::move(table)}};
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(hlen));
  for (const auto& p : params.params()) write_doubles(out, p.value());
  for (const auto& m : adam_m) write_doubles(out, m);
  for (const auto& v : adam_v) write_doubles(out, v);
  if (!out) throw IoError("failed writing checkpoint " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore& params,
                               std::vector<nn::Tensor>& adam_m, std::vector<nn::Tensor>& adam_v) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const json header = read_header(in, path);
  const auto& table = header.at("params");
  if (table.size() != params.params().size()) {
    throw IoError("checkpoint " + path + " holds " + std::to_string(table.size()) +
                  " parameters, model has " + std::to_string(params.params().size()));
  }
  for (size_t i = 0; i < table.size(); ++i) {
    const auto& entry = table[i];
    const auto& p = params.params()[i];
    const std::string name = entry.at("name").get<std::string>();
    const nn::Shape shape = entry.at("shape").get<nn::Shape>();
    if (name != p.node()->name || shape != p.shape()) {
      throw IoError("checkpoint " + path + " parameter " + std::to_string(i) + " is " + name +
                    ", model expects " + p.node()->name);
    }
  }
  if (adam_m.size() != params.params().size() || adam_v.size() != params.params().size()) {
    throw ContractError("load_checkpoint: optimizer state size mismatch");
  }
  for (const auto& p : params.params()) {
    nn::Var handle = p;  // same node, mutable view
    read_doubles(in, handle.value(), handle.node()->name);
  }
  for (size_t i = 0; i < adam_m.size(); ++i) read_doubles(in, adam_m[i], "adam m");
  for (size_t i = 0; i < adam_v.size(); ++i) read_doubles(in, adam_v[i], "adam v");
  return meta_from_header(header);
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return meta_from_header(read_header(in, path));
}

}  // namespace adfseg
