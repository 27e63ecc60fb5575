#include "sspo/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "sspo/errors.hpp"

namespace sspo {

namespace {

constexpr std::string_view kMagic = "sspo.ckpt.v1";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params,
                     const std::vector<std::string>& labels) {
  const ModelConfig& cfg = params.config();
  nlohmann::json header = {
      {"config",
       {{"patch_len", cfg.patch_len},
        {"channels", cfg.channels},
        {"enc_layers", cfg.enc_layers},
        {"enc_dim", cfg.enc_dim},
        {"dec_layers", cfg.dec_layers},
        {"dec_dim", cfg.dec_dim},
        {"heads", cfg.heads},
        {"vocab_size", cfg.vocab_size},
        {"max_seq", cfg.max_seq},
        {"seed", cfg.seed}}},
      {"labels", labels},
      {"param_count", params.size()}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << kMagic << '\n' << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(params.flat().data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kMagic) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  if (!std::getline(in, header_line)) {
    throw DataError("truncated checkpoint header: " + path.string());
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header: " + std::string(e.what()));
  }

  ModelConfig cfg;
  try {
    const auto& c = header.at("config");
    cfg.patch_len = c.at("patch_len").get<int>();
    cfg.channels = c.at("channels").get<int>();
    cfg.enc_layers = c.at("enc_layers").get<int>();
    cfg.enc_dim = c.at("enc_dim").get<int>();
    cfg.dec_layers = c.at("dec_layers").get<int>();
    cfg.dec_dim = c.at("dec_dim").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.vocab_size = c.at("vocab_size").get<int>();
    cfg.max_seq = c.at("max_seq").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint config: " + std::string(e.what()));
  }

  Checkpoint ckpt{PolicyParams(cfg), header.value("labels", std::vector<std::string>{})};
  const auto declared = header.at("param_count").get<std::size_t>();
  if (declared != ckpt.params.size()) {
    throw DataError("checkpoint parameter count does not match its config");
  }
  in.read(reinterpret_cast<char*>(ckpt.params.flat().data()),
          static_cast<std::streamsize>(declared * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(declared * sizeof(double))) {
    throw DataError("truncated checkpoint payload: " + path.string());
  }
  return ckpt;
}

}  // namespace sspo
