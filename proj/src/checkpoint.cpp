#include "cdadp/checkpoint.hpp"

#include "cdadp/errors.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <fstream>

namespace cdadp {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'D', 'A', 'D', 'P', 'N', 'E', 'T'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes.data(), bytes.size());
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> bytes{};
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes.data(), bytes.size());
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

std::filesystem::path meta_path(const std::filesystem::path& p) { return p.string() + ".meta.json"; }

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Network& net) {
  net.spec.validate();
  if (net.params.size() != net.spec.param_count()) throw StructuralError("parameters do not match spec");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kCheckpointVersion);
  put_u64(out, net.spec.input_dim);
  put_u64(out, net.spec.hidden_layers);
  put_u64(out, net.spec.hidden_width);
  put_u64(out, net.spec.output_dim);
  for (Activation a : net.spec.activations) out.put(static_cast<char>(a));
  for (double s : net.spec.output_scale) put_f64(out, s);
  const auto& layout = net.params.layout();
  put_u64(out, layout.layers.size());
  for (const auto& layer : layout.layers) {
    put_u64(out, layer.rows);
    put_u64(out, layer.cols);
    put_u64(out, layer.offset);
  }
  put_u64(out, net.params.size());
  for (Eigen::Index i = 0; i < net.params.values().size(); ++i) put_f64(out, net.params.values()[i]);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Network read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(path.string() + " is not a network checkpoint");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Network net;
  net.spec.input_dim = get_u64(in);
  net.spec.hidden_layers = get_u64(in);
  net.spec.hidden_width = get_u64(in);
  net.spec.output_dim = get_u64(in);
  if (net.spec.hidden_layers > 1024 || net.spec.output_dim > (1u << 20)) {
    throw std::runtime_error("checkpoint header is implausible");
  }
  for (std::size_t l = 0; l < net.spec.hidden_layers + 1; ++l) {
    const int code = in.get();
    if (code < 0 || code > static_cast<int>(Activation::Linear)) throw std::runtime_error("bad activation code");
    net.spec.activations.push_back(static_cast<Activation>(code));
  }
  for (std::size_t k = 0; k < net.spec.output_dim; ++k) net.spec.output_scale.push_back(get_f64(in));
  net.spec.validate();

  ParamLayout stored;
  const std::uint64_t layers = get_u64(in);
  for (std::uint64_t l = 0; l < layers; ++l) {
    LayerShape s;
    s.rows = get_u64(in);
    s.cols = get_u64(in);
    s.offset = get_u64(in);
    stored.layers.push_back(s);
  }
  stored.total = get_u64(in);
  const ParamLayout expected = net.spec.layout();
  if (!(stored == expected)) throw StructuralError("checkpoint layout does not match its header");

  Eigen::VectorXd values(static_cast<Eigen::Index>(stored.total));
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = get_f64(in);
  net.params = ParamVector(std::make_shared<const ParamLayout>(expected), std::move(values));
  return net;
}

void write_checkpoint_meta(const std::filesystem::path& checkpoint_path, const CheckpointMeta& meta) {
  nlohmann::json j{{"iteration", meta.iteration},
                   {"seed", meta.seed},
                   {"config_hash", meta.config_hash},
                   {"role", meta.role},
                   {"format_version", kCheckpointVersion}};
  std::ofstream out(meta_path(checkpoint_path));
  out << j.dump(2) << '\n';
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& checkpoint_path) {
  std::ifstream in(meta_path(checkpoint_path));
  if (!in) throw std::runtime_error("missing checkpoint metadata for " + checkpoint_path.string());
  const auto j = nlohmann::json::parse(in);
  CheckpointMeta meta;
  meta.iteration = j.at("iteration").get<std::uint64_t>();
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.config_hash = j.at("config_hash").get<std::string>();
  meta.role = j.value("role", "");
  return meta;
}

}  // namespace cdadp
