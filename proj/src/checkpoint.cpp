#include "aspmtl/checkpoint.hpp"

#include "aspmtl/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace aspmtl {

namespace {

constexpr char kMagic[8] = {'A', 'S', 'P', 'M', 'T', 'L', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError(std::string("checkpoint truncated reading ") + what);
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError(std::string("checkpoint truncated reading ") + what);
  }
  return s;
}

const std::vector<std::string> kBlockOrder = {"candidate", "output", "input", "forget"};
const std::vector<std::string> kInputOrder = {"x_t", "h_prev"};
const std::vector<std::string> kFeatureOrder = {"private", "shared"};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string manifest = ck.manifest.dump();
  put<std::uint64_t>(out, manifest.size());
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  put<std::uint64_t>(out, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError("not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CompatibilityError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto mlen = get<std::uint64_t>(in, "manifest length");
  ck.manifest = nlohmann::json::parse(get_bytes(in, mlen, "manifest"));
  const auto count = get<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = get<std::uint32_t>(in, "name length");
    std::string name = get_bytes(in, nlen, "tensor name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank < 1 || rank > 2) throw IoError("tensor " + name + ": unsupported rank " + std::to_string(rank));
    const auto rows = get<std::uint64_t>(in, "dims");
    const std::uint64_t cols = rank == 2 ? get<std::uint64_t>(in, "dims") : 1;
    Tensor t(static_cast<Index>(rows), static_cast<Index>(cols));
    if (t.size() > 0 && !in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw IoError("checkpoint truncated in tensor " + name);
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  write_checkpoint(out, ck);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

Checkpoint to_checkpoint(const Model& model, const nlohmann::json& extra) {
  const auto& c = model.config;
  Checkpoint ck;
  auto& m = ck.manifest;
  m["format"] = "aspmtl-checkpoint";
  m["scheme"] = to_string(c.scheme);
  m["tasks"] = c.tasks();
  m["hidden"] = c.hidden;
  m["embed"] = c.embed;
  m["vocab_size"] = c.vocab;
  m["classes"] = c.classes;
  m["transfer"] = c.transfer ? nlohmann::json(to_string(*c.transfer)) : nlohmann::json(nullptr);
  m["embedding_trainable"] = model.params.embeddings.trainable;
  m["lstm_block_order"] = kBlockOrder;
  m["lstm_input_order"] = kInputOrder;
  m["feature_concat_order"] = c.has_private() ? kFeatureOrder : std::vector<std::string>{"shared"};
  m["extra"] = extra;
  for (const auto& [name, t] : named_parameters(model)) ck.tensors.emplace_back(name, *t);
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.manifest;
  try {
    if (m.at("format") != "aspmtl-checkpoint") throw CompatibilityError("manifest format is not aspmtl-checkpoint");
    if (m.at("lstm_block_order").get<std::vector<std::string>>() != kBlockOrder ||
        m.at("lstm_input_order").get<std::vector<std::string>>() != kInputOrder) {
      throw CompatibilityError("checkpoint uses a different LSTM block layout");
    }
    ModelConfig cfg;
    cfg.scheme = parse_scheme(m.at("scheme").get<std::string>());
    cfg.hidden = m.at("hidden").get<Index>();
    cfg.embed = m.at("embed").get<Index>();
    cfg.vocab = m.at("vocab_size").get<Index>();
    cfg.classes = m.at("classes").get<std::vector<Index>>();
    if (!m.at("transfer").is_null()) cfg.transfer = parse_transfer_mode(m.at("transfer").get<std::string>());
    Model model = zero_model(cfg);
    model.params.embeddings.trainable = m.at("embedding_trainable").get<bool>();
    auto refs = named_parameters(model);
    if (refs.size() != ck.tensors.size()) {
      throw CompatibilityError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                               std::to_string(refs.size()));
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& [name, t] = ck.tensors[i];
      if (name != refs[i].name) throw CompatibilityError("checkpoint tensor " + name + " where " + refs[i].name + " expected");
      if (t.rows() != refs[i].value->rows() || t.cols() != refs[i].value->cols()) {
        throw CompatibilityError("checkpoint tensor " + name + " has shape " + shape_string(t) + ", expected " +
                                 shape_string(*refs[i].value));
      }
      *refs[i].value = t;
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("checkpoint manifest incomplete: ") + e.what());
  }
}

}  // namespace aspmtl
