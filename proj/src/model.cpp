#include "stepalign/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stepalign/util.hpp"

namespace stepalign {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelConfig::validate() const {
  if (C_v <= 0 || C_t <= 0 || D <= 0 || d <= 0) throw ConfigError("model dims must be positive");
  if (n_heads <= 0 || D % n_heads != 0)
    throw ConfigError("D=" + std::to_string(D) + " not divisible by n_heads=" +
                      std::to_string(n_heads));
  if (d > D) throw ConfigError("projection dim d=" + std::to_string(d) + " exceeds D=" +
                               std::to_string(D));
  if (D % 2 != 0) throw ConfigError("D must be even for sin/cos positional encoding");
  if (n_enc_layers <= 0 || n_dec_layers <= 0) throw ConfigError("layer counts must be positive");
  if (max_T <= 0 || max_K <= 0) throw ConfigError("max_T/max_K must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  p.phi_v = Linear::init(cfg.C_v, cfg.D, rng);
  p.phi_j = Linear::init(cfg.C_t, cfg.D, rng);
  p.p_j = Tensor::zeros(cfg.max_K, cfg.D, /*requires_grad=*/true);
  for (auto& v : p.p_j.data()) v = rng.gaussian(0.0, 0.02);
  p.encoder = Encoder::init(cfg.D, cfg.n_heads, cfg.n_enc_layers, rng);
  p.decoder = Decoder::init(cfg.D, cfg.n_heads, cfg.n_dec_layers, rng);
  p.proj_v = Linear::init(cfg.D, cfg.d, rng);
  p.proj_j = Linear::init(cfg.D, cfg.d, rng);
  p.align_head = Linear::init(cfg.D, 2, rng);
  return p;
}

ParamList ModelParams::named_params() const {
  ParamList out;
  phi_v.collect("phi_v", out);
  phi_j.collect("phi_j", out);
  out.emplace_back("p_j", p_j);
  encoder.collect("encoder", out);
  decoder.collect("decoder", out);
  proj_v.collect("proj_v", out);
  proj_j.collect("proj_j", out);
  align_head.collect("align_head", out);
  return out;
}

std::vector<Tensor> ModelParams::param_tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

Embedded embed(const Tensor& x_v, const Tensor& x_j, TrackMode mode, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (x_v.cols() != cfg.C_v)
    throw ShapeError("video features have dim " + std::to_string(x_v.cols()) + ", config C_v=" +
                     std::to_string(cfg.C_v));
  if (x_j.cols() != cfg.C_t)
    throw ShapeError("text features have dim " + std::to_string(x_j.cols()) + ", config C_t=" +
                     std::to_string(cfg.C_t));
  int T = x_v.rows();
  int K = x_j.rows();
  if (T > cfg.max_T)
    throw CapacityError("video length " + std::to_string(T) + " exceeds max_T=" +
                        std::to_string(cfg.max_T));
  if (K > cfg.max_K)
    throw CapacityError("track has " + std::to_string(K) + " sentences, max_K=" +
                        std::to_string(cfg.max_K));
  Embedded e;
  e.h_v = add(params.phi_v.forward(x_v), sincos_pe(T, cfg.D));
  e.h_j = params.phi_j.forward(x_j);
  if (mode == TrackMode::narration) {
    std::vector<int> idx(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) idx[static_cast<std::size_t>(k)] = k;
    e.h_j = add(e.h_j, gather_rows(params.p_j, idx));
  }
  return e;
}

ForwardResult forward(const Tensor& x_v, const Tensor& x_j, TrackMode mode,
                      const ModelParams& params, const DropoutCtx& drop) {
  Embedded e = embed(x_v, x_j, mode, params);
  Tensor o_v = params.encoder.forward(e.h_v, drop);
  Tensor o_j = params.decoder.forward(e.h_j, o_v, drop);
  Tensor z_v = params.proj_v.forward(o_v);
  Tensor z_j = params.proj_j.forward(o_j);
  ForwardResult r;
  r.A.kind = MatrixKind::predicted_score;
  r.A.values = matmul(l2_normalize_rows(z_j), transpose(l2_normalize_rows(z_v)));
  r.y_hat = params.align_head.forward(o_j);
  return r;
}

std::vector<PredictedWindow> predict_windows(const AlignmentMatrix& A, WindowRule rule,
                                             int delta_sec) {
  if (!A.values.defined()) throw UsageError("predict_windows: empty matrix");
  if (A.kind != MatrixKind::predicted_score)
    throw UsageError("predict_windows: expects predicted scores");
  if (rule == WindowRule::fixed_duration && delta_sec < 1)
    throw ConfigError("predict_windows: delta_sec must be >= 1");
  int K = A.K(), T = A.T();
  std::vector<PredictedWindow> out;
  out.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    int best = 0;
    for (int t = 1; t < T; ++t)
      if (A.values.at(k, t) > A.values.at(k, best)) best = t;
    PredictedWindow w;
    w.peak_t = best;
    w.peak_score = A.values.at(k, best);
    if (rule == WindowRule::argmax_only) {
      w.window = TimeWindow{best, best};
    } else {
      w.window = TimeWindow{best, std::min(best + delta_sec - 1, T - 1)};
    }
    out.push_back(w);
  }
  return out;
}

// --- checkpoint ----------------------------------------------------------------

namespace {

constexpr char kCkptMagic[5] = {'N', 'A', 'S', 'V', '1'};

json config_to_json(const ModelConfig& c) {
  json j;
  j["C_v"] = c.C_v;
  j["C_t"] = c.C_t;
  j["D"] = c.D;
  j["d"] = c.d;
  j["n_enc_layers"] = c.n_enc_layers;
  j["n_dec_layers"] = c.n_dec_layers;
  j["n_heads"] = c.n_heads;
  j["max_T"] = c.max_T;
  j["max_K"] = c.max_K;
  j["dropout"] = c.dropout;
  return j;
}

ModelConfig config_from_json(const json& j, const std::string& origin) {
  try {
    ModelConfig c;
    c.C_v = j.at("C_v").get<int>();
    c.C_t = j.at("C_t").get<int>();
    c.D = j.at("D").get<int>();
    c.d = j.at("d").get<int>();
    c.n_enc_layers = j.at("n_enc_layers").get<int>();
    c.n_dec_layers = j.at("n_dec_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.max_T = j.at("max_T").get<int>();
    c.max_K = j.at("max_K").get<int>();
    c.dropout = j.at("dropout").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw LoadError(origin + ": bad checkpoint config: " + e.what());
  }
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t take_u32(const std::string& bytes, std::size_t& pos, const std::string& origin) {
  if (pos + 4 > bytes.size()) throw LoadError(origin + ": truncated checkpoint");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  pos += 4;
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

std::string take_bytes(const std::string& bytes, std::size_t& pos, std::size_t n,
                       const std::string& origin) {
  if (pos + n > bytes.size()) throw LoadError(origin + ": truncated checkpoint");
  std::string out = bytes.substr(pos, n);
  pos += n;
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& path, const ModelParams& params) {
  std::string out;
  out.append(kCkptMagic, sizeof(kCkptMagic));
  std::string cfg = config_to_json(params.config).dump();
  put_u32(out, static_cast<uint32_t>(cfg.size()));
  out += cfg;
  ParamList named = params.named_params();
  put_u32(out, static_cast<uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    FeatureSequence block;
    block.kind = FeatureKind::param;
    block.rows = tensor;
    std::string encoded = encode_fseq(block, /*as_f64=*/true);
    put_u32(out, static_cast<uint32_t>(encoded.size()));
    out += encoded;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw LoadError("short write to " + path.string());
}

ModelParams load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  std::string bytes = buf.str();
  std::string origin = path.string();
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
    throw LoadError(origin + ": not a NASV1 checkpoint");
  std::size_t pos = 5;
  uint32_t cfg_len = take_u32(bytes, pos, origin);
  json cfg_json = json::parse(take_bytes(bytes, pos, cfg_len, origin), nullptr, false);
  if (cfg_json.is_discarded()) throw LoadError(origin + ": unparseable checkpoint config");
  ModelConfig cfg = config_from_json(cfg_json, origin);
  cfg.validate();
  Rng scratch(0);
  ModelParams params = ModelParams::init(cfg, scratch);
  ParamList named = params.named_params();
  uint32_t n = take_u32(bytes, pos, origin);
  if (n != named.size())
    throw LoadError(origin + ": checkpoint has " + std::to_string(n) + " tensors, config " +
                    cfg_json.dump() + " implies " + std::to_string(named.size()));
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t name_len = take_u32(bytes, pos, origin);
    std::string name = take_bytes(bytes, pos, name_len, origin);
    uint32_t block_len = take_u32(bytes, pos, origin);
    FeatureSequence block = decode_fseq(take_bytes(bytes, pos, block_len, origin),
                                        origin + ":" + name);
    bool found = false;
    for (auto& [pname, tensor] : named) {
      if (pname != name) continue;
      if (tensor.rows() != block.rows.rows() || tensor.cols() != block.rows.cols())
        throw LoadError(origin + ": tensor '" + name + "' is " +
                        std::to_string(block.rows.rows()) + "x" +
                        std::to_string(block.rows.cols()) + ", config " + cfg_json.dump() +
                        " expects " + std::to_string(tensor.rows()) + "x" +
                        std::to_string(tensor.cols()));
      tensor.data() = block.rows.data();
      found = true;
      break;
    }
    if (!found) throw LoadError(origin + ": unknown tensor '" + name + "'");
  }
  if (pos != bytes.size()) throw LoadError(origin + ": trailing bytes after last tensor");
  return params;
}

}  // namespace stepalign
