#include "comlab/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "comlab/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace comlab {

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "twin" || s == "meta-comet") return ModelKind::twin;
    if (s == "comet") return ModelKind::comet;
    throw std::invalid_argument("unknown model kind '" + s + "' (expected meta-comet or comet)");
}

const char* to_string(ModelKind k) { return k == ModelKind::twin ? "twin" : "comet"; }

void validate(const NetworkConfig& cfg) {
    if (cfg.n_s < 1) throw std::invalid_argument("network config: n_s must be >= 1");
    if (cfg.n_c < 0 || cfg.n_c >= cfg.n_s)
        throw std::invalid_argument("network config: requires n_c < n_s, got n_c=" +
                                    std::to_string(cfg.n_c) + ", n_s=" + std::to_string(cfg.n_s));
    if (cfg.n_f < 0) throw std::invalid_argument("network config: n_f must be >= 0");
    if (cfg.rank < 1) throw std::invalid_argument("network config: rank must be >= 1");
    if (cfg.width < cfg.rank)
        throw std::invalid_argument("network config: width must be >= rank");
    if (cfg.depth_hidden < 1)
        throw std::invalid_argument("network config: depth_hidden must be >= 1");
}

ModelKind kind_of(const ModelParams& params) {
    return std::holds_alternative<TwinNetParams>(params) ? ModelKind::twin : ModelKind::comet;
}

int64_t count_params(const NetworkConfig& cfg, ModelKind kind) {
    const int64_t w = cfg.width, in = cfg.n_s + cfg.n_f, r = cfg.rank, L = cfg.depth_hidden;
    if (kind == ModelKind::twin) {
        return 2 * (in * w + w)                  // two input FC layers
               + (w * cfg.n_s + cfg.n_s)         // derivative-path output FC
               + (w * cfg.n_c + cfg.n_c)         // constants-path output FC
               + L * (2 * w * r + r);            // factored hidden layers
    }
    const int64_t out = cfg.n_s + cfg.n_c;
    return (in * w + w) + 3 * (w * w + w) + (w * out + out);
}

namespace {

TensorValue uniform_fc(Rng& rng, int rows, int cols, int fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    TensorValue W(rows, cols);
    for (double& x : W.data) x = rng.uniform(-a, a);
    return W;
}

TensorValue semi_orthogonal(Rng& rng, int rows, int cols) {
    TensorValue M(rows, cols);
    for (double& x : M.data) x = rng.normal();
    orthonormalize_columns(M);
    return M;
}

TwinNetParams init_twin(const NetworkConfig& cfg, Rng& rng) {
    TwinNetParams p;
    const int in = cfg.n_s + cfg.n_f, w = cfg.width, r = cfg.rank;
    p.W_h0 = uniform_fc(rng, w, in, in);
    p.b_h0 = TensorValue::zeros(w, 1);
    p.W_k0 = uniform_fc(rng, w, in, in);
    p.b_k0 = TensorValue::zeros(w, 1);
    p.hidden.resize(static_cast<size_t>(cfg.depth_hidden));
    for (auto& layer : p.hidden) {
        layer.S = semi_orthogonal(rng, w, r);
        layer.v = TensorValue(r, 1);
        for (double& x : layer.v.data) x = rng.uniform(0.5, 1.5);
        layer.D = semi_orthogonal(rng, w, r);
    }
    p.W_hL1 = uniform_fc(rng, cfg.n_s, w, w);
    p.b_hL1 = TensorValue::zeros(cfg.n_s, 1);
    p.W_kL1 = uniform_fc(rng, cfg.n_c, w, w);
    p.b_kL1 = TensorValue::zeros(cfg.n_c, 1);
    return p;
}

CometMlpParams init_comet(const NetworkConfig& cfg, Rng& rng) {
    CometMlpParams p;
    const int in = cfg.n_s + cfg.n_f, w = cfg.width, out = cfg.n_s + cfg.n_c;
    const int dims[6] = {in, w, w, w, w, out};
    for (int i = 0; i < 5; ++i) {
        p.W.push_back(uniform_fc(rng, dims[i + 1], dims[i], dims[i]));
        p.b.push_back(TensorValue::zeros(dims[i + 1], 1));
    }
    return p;
}

} // namespace

ModelParams init_params(const NetworkConfig& cfg, ModelKind kind, uint64_t seed) {
    validate(cfg);
    Rng rng(mix_seed(seed, "init"));
    if (kind == ModelKind::twin) return init_twin(cfg, rng);
    return init_comet(cfg, rng);
}

void reinit_for_phase2(TwinNetParams& p, const NetworkConfig& cfg, uint64_t seed) {
    ModelParams fresh = init_params(cfg, ModelKind::twin, seed);
    TwinNetParams& f = std::get<TwinNetParams>(fresh);
    for (size_t l = 0; l < p.hidden.size(); ++l) {
        f.hidden[l].S = p.hidden[l].S;
        f.hidden[l].D = p.hidden[l].D;
    }
    f.factors_frozen = true;
    p = std::move(f);
}

std::vector<ParamRef> param_refs(TwinNetParams& p) {
    std::vector<ParamRef> refs;
    const bool factors_trainable = !p.factors_frozen;
    refs.push_back({"W_h0", &p.W_h0, true});
    refs.push_back({"b_h0", &p.b_h0, true});
    refs.push_back({"W_k0", &p.W_k0, true});
    refs.push_back({"b_k0", &p.b_k0, true});
    for (size_t l = 0; l < p.hidden.size(); ++l) {
        const std::string base = "hidden" + std::to_string(l);
        refs.push_back({base + ".S", &p.hidden[l].S, factors_trainable});
        refs.push_back({base + ".v", &p.hidden[l].v, true});
        refs.push_back({base + ".D", &p.hidden[l].D, factors_trainable});
    }
    refs.push_back({"W_hL1", &p.W_hL1, true});
    refs.push_back({"b_hL1", &p.b_hL1, true});
    refs.push_back({"W_kL1", &p.W_kL1, true});
    refs.push_back({"b_kL1", &p.b_kL1, true});
    return refs;
}

std::vector<ParamRef> param_refs(CometMlpParams& p) {
    std::vector<ParamRef> refs;
    for (size_t i = 0; i < p.W.size(); ++i) {
        refs.push_back({"W" + std::to_string(i), &p.W[i], true});
        refs.push_back({"b" + std::to_string(i), &p.b[i], true});
    }
    return refs;
}

std::vector<ParamRef> param_refs(ModelParams& p) {
    if (auto* t = std::get_if<TwinNetParams>(&p)) return param_refs(*t);
    return param_refs(std::get<CometMlpParams>(p));
}

// --- forward passes ---------------------------------------------------------

TwinBinding bind_params(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg) {
    TwinBinding b;
    b.cfg = cfg;
    b.W_h0 = tape.leaf(p.W_h0);
    b.b_h0 = tape.leaf(p.b_h0);
    b.W_k0 = tape.leaf(p.W_k0);
    b.b_k0 = tape.leaf(p.b_k0);
    for (const auto& layer : p.hidden) {
        TwinBinding::HiddenNodes h;
        h.S = tape.leaf(layer.S);
        h.v = tape.leaf(layer.v);
        h.D = tape.leaf(layer.D);
        h.D_t = tape.apply(Op::transpose, h.D);
        h.relu_v = tape.apply(Op::relu, h.v);
        b.hidden.push_back(h);
    }
    b.W_hL1 = tape.leaf(p.W_hL1);
    b.b_hL1 = tape.leaf(p.b_hL1);
    b.W_kL1 = tape.leaf(p.W_kL1);
    b.b_kL1 = tape.leaf(p.b_kL1);
    b.W_k0_state_cols = cfg.n_f == 0 ? b.W_k0 : tape.apply_slice(b.W_k0, 0, cfg.width, 0, cfg.n_s);
    b.ones_nc = tape.leaf(TensorValue::ones(cfg.n_c, 1));
    return b;
}

CometBinding bind_params(Tape& tape, const CometMlpParams& p, const NetworkConfig& cfg) {
    CometBinding b;
    b.cfg = cfg;
    for (size_t i = 0; i < p.W.size(); ++i) {
        b.W.push_back(tape.leaf(p.W[i]));
        b.b.push_back(tape.leaf(p.b[i]));
    }
    b.W1_state_cols = cfg.n_f == 0 ? b.W[0] : tape.apply_slice(b.W[0], 0, cfg.width, 0, cfg.n_s);
    b.W_last_c_rows = tape.apply_slice(b.W.back(), cfg.n_s, cfg.n_c, 0, cfg.width);
    b.ones_nc = tape.leaf(TensorValue::ones(cfg.n_c, 1));
    return b;
}

ForwardNodes forward_nodes(Tape& tape, const TwinBinding& bind, NodeId x) {
    ForwardNodes out;
    // derivative path: h -> silu(S (relu(v) ⊙ D^T h))
    NodeId h = tape.apply(Op::silu, tape.apply(Op::add, tape.apply(Op::matmul, bind.W_h0, x), bind.b_h0));
    for (const auto& layer : bind.hidden) {
        const NodeId u = tape.apply(Op::hadamard, layer.relu_v, tape.apply(Op::matmul, layer.D_t, h));
        h = tape.apply(Op::silu, tape.apply(Op::matmul, layer.S, u));
    }
    out.sdot0 = tape.apply(Op::add, tape.apply(Op::matmul, bind.W_hL1, h), bind.b_hL1);

    // constants path: k -> silu(S (D^T k)), pre-activations cached for the
    // analytic input gradient
    NodeId z = tape.apply(Op::add, tape.apply(Op::matmul, bind.W_k0, x), bind.b_k0);
    out.c_preacts.push_back(z);
    NodeId k = tape.apply(Op::silu, z);
    for (const auto& layer : bind.hidden) {
        z = tape.apply(Op::matmul, layer.S, tape.apply(Op::matmul, layer.D_t, k));
        out.c_preacts.push_back(z);
        k = tape.apply(Op::silu, z);
    }
    out.c = tape.apply(Op::add, tape.apply(Op::matmul, bind.W_kL1, k), bind.b_kL1);
    return out;
}

ForwardNodes forward_nodes(Tape& tape, const CometBinding& bind, NodeId x) {
    ForwardNodes out;
    NodeId h = x;
    const size_t n_layers = bind.W.size();
    for (size_t i = 0; i < n_layers; ++i) {
        const NodeId z = tape.apply(Op::add, tape.apply(Op::matmul, bind.W[i], h), bind.b[i]);
        if (i + 1 == n_layers) {
            out.sdot0 = tape.apply_slice(z, 0, bind.cfg.n_s, 0, 1);
            out.c = tape.apply_slice(z, bind.cfg.n_s, bind.cfg.n_c, 0, 1);
        } else {
            out.c_preacts.push_back(z);
            h = tape.apply(Op::silu, z);
        }
    }
    return out;
}

namespace {

// M <- M with column j scaled by d[j]; d is a column vector on the tape
NodeId scale_cols(Tape& tape, NodeId M, NodeId ones_rows, NodeId d) {
    return tape.apply(Op::hadamard, M, tape.apply(Op::outer, ones_rows, d));
}

} // namespace

NodeId constants_input_gradient_nodes(Tape& tape, const TwinBinding& bind,
                                      const ForwardNodes& fwd) {
    NodeId M = bind.W_kL1; // n_c x width
    for (size_t l = bind.hidden.size(); l-- > 0;) {
        const NodeId sp = tape.apply(Op::silu_prime, fwd.c_preacts[l + 1]);
        M = scale_cols(tape, M, bind.ones_nc, sp);
        M = tape.apply(Op::matmul, M, bind.hidden[l].S);
        M = tape.apply(Op::matmul, M, bind.hidden[l].D_t);
    }
    const NodeId sp0 = tape.apply(Op::silu_prime, fwd.c_preacts[0]);
    M = scale_cols(tape, M, bind.ones_nc, sp0);
    return tape.apply(Op::matmul, M, bind.W_k0_state_cols); // n_c x n_s
}

NodeId constants_input_gradient_nodes(Tape& tape, const CometBinding& bind,
                                      const ForwardNodes& fwd) {
    NodeId M = bind.W_last_c_rows; // n_c x width
    for (size_t i = fwd.c_preacts.size(); i-- > 1;) {
        const NodeId sp = tape.apply(Op::silu_prime, fwd.c_preacts[i]);
        M = scale_cols(tape, M, bind.ones_nc, sp);
        M = tape.apply(Op::matmul, M, bind.W[i]);
    }
    const NodeId sp0 = tape.apply(Op::silu_prime, fwd.c_preacts[0]);
    M = scale_cols(tape, M, bind.ones_nc, sp0);
    return tape.apply(Op::matmul, M, bind.W1_state_cols);
}

namespace {

NodeId input_leaf(Tape& tape, const NetworkConfig& cfg, std::span<const double> s,
                  std::span<const double> F) {
    if (static_cast<int>(s.size()) != cfg.n_s)
        throw std::invalid_argument("forward: state has " + std::to_string(s.size()) +
                                    " entries, expected " + std::to_string(cfg.n_s));
    if (static_cast<int>(F.size()) != cfg.n_f)
        throw std::invalid_argument("forward: force has " + std::to_string(F.size()) +
                                    " entries, expected " + std::to_string(cfg.n_f));
    TensorValue x(cfg.n_s + cfg.n_f, 1);
    for (int i = 0; i < cfg.n_s; ++i) x.data[i] = s[i];
    for (int i = 0; i < cfg.n_f; ++i) x.data[cfg.n_s + i] = F[i];
    return tape.leaf(std::move(x));
}

} // namespace

ForwardResult twin_forward(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg,
                           std::span<const double> s, std::span<const double> F) {
    const TwinBinding bind = bind_params(tape, p, cfg);
    const ForwardNodes f = forward_nodes(tape, bind, input_leaf(tape, cfg, s, F));
    return {f.sdot0, f.c};
}

ForwardResult comet_forward(Tape& tape, const CometMlpParams& p, const NetworkConfig& cfg,
                            std::span<const double> s, std::span<const double> F) {
    const CometBinding bind = bind_params(tape, p, cfg);
    const ForwardNodes f = forward_nodes(tape, bind, input_leaf(tape, cfg, s, F));
    return {f.sdot0, f.c};
}

NodeId constants_input_gradient(Tape& tape, const ModelParams& p, const NetworkConfig& cfg,
                                std::span<const double> s, std::span<const double> F) {
    if (const auto* t = std::get_if<TwinNetParams>(&p)) {
        const TwinBinding bind = bind_params(tape, *t, cfg);
        const ForwardNodes f = forward_nodes(tape, bind, input_leaf(tape, cfg, s, F));
        return constants_input_gradient_nodes(tape, bind, f);
    }
    const CometBinding bind = bind_params(tape, std::get<CometMlpParams>(p), cfg);
    const ForwardNodes f = forward_nodes(tape, bind, input_leaf(tape, cfg, s, F));
    return constants_input_gradient_nodes(tape, bind, f);
}

// --- checkpoints ------------------------------------------------------------

namespace {

ModelParams zero_params(const NetworkConfig& cfg, ModelKind kind) {
    const int in = cfg.n_s + cfg.n_f, w = cfg.width, r = cfg.rank;
    if (kind == ModelKind::twin) {
        TwinNetParams p;
        p.W_h0 = TensorValue::zeros(w, in);
        p.b_h0 = TensorValue::zeros(w, 1);
        p.W_k0 = TensorValue::zeros(w, in);
        p.b_k0 = TensorValue::zeros(w, 1);
        p.hidden.resize(static_cast<size_t>(cfg.depth_hidden));
        for (auto& layer : p.hidden) {
            layer.S = TensorValue::zeros(w, r);
            layer.v = TensorValue::zeros(r, 1);
            layer.D = TensorValue::zeros(w, r);
        }
        p.W_hL1 = TensorValue::zeros(cfg.n_s, w);
        p.b_hL1 = TensorValue::zeros(cfg.n_s, 1);
        p.W_kL1 = TensorValue::zeros(cfg.n_c, w);
        p.b_kL1 = TensorValue::zeros(cfg.n_c, 1);
        return p;
    }
    CometMlpParams p;
    const int out = cfg.n_s + cfg.n_c;
    const int dims[6] = {in, w, w, w, w, out};
    for (int i = 0; i < 5; ++i) {
        p.W.push_back(TensorValue::zeros(dims[i + 1], dims[i]));
        p.b.push_back(TensorValue::zeros(dims[i + 1], 1));
    }
    return p;
}

bool factors_frozen_flag(const ModelParams& p) {
    if (const auto* t = std::get_if<TwinNetParams>(&p)) return t->factors_frozen;
    return false;
}

} // namespace

void save_checkpoint(const ModelParams& params, const NetworkConfig& cfg, const std::string& path) {
    ModelParams copy = params; // param_refs needs mutable access
    auto refs = param_refs(copy);

    std::ostringstream header;
    header << "comlab-checkpoint\n";
    header << "format_version 1\n";
    header << "model_kind " << to_string(kind_of(params)) << "\n";
    header << "n_s " << cfg.n_s << "\n";
    header << "n_c " << cfg.n_c << "\n";
    header << "n_f " << cfg.n_f << "\n";
    header << "width " << cfg.width << "\n";
    header << "depth_hidden " << cfg.depth_hidden << "\n";
    header << "rank " << cfg.rank << "\n";
    header << "activation silu\n";
    header << "factors_frozen " << (factors_frozen_flag(params) ? 1 : 0) << "\n";
    header << "arrays " << refs.size() << "\n";
    size_t offset = 0;
    for (const auto& ref : refs) {
        header << "array " << ref.name << " " << ref.array->rows << " " << ref.array->cols << " "
               << offset << "\n";
        offset += ref.array->data.size() * sizeof(double);
    }
    header << "data " << offset << "\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& ref : refs)
        out.write(reinterpret_cast<const char*>(ref.array->data.data()),
                  static_cast<std::streamsize>(ref.array->data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

std::pair<ModelParams, NetworkConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");

    auto next_line = [&](const char* what) {
        std::string line;
        if (!std::getline(in, line))
            throw std::runtime_error(std::string("checkpoint: truncated header, expected ") + what);
        return line;
    };
    auto field = [&](const std::string& key) {
        std::istringstream ss(next_line(key.c_str()));
        std::string k, v;
        ss >> k >> v;
        if (k != key || v.empty())
            throw std::runtime_error("checkpoint: malformed field '" + key + "'");
        return v;
    };

    if (next_line("magic") != "comlab-checkpoint")
        throw std::runtime_error("checkpoint: bad magic line");
    if (field("format_version") != "1")
        throw std::runtime_error("checkpoint: unsupported format_version");
    const ModelKind kind = model_kind_from_string(field("model_kind"));
    NetworkConfig cfg;
    cfg.n_s = std::stoi(field("n_s"));
    cfg.n_c = std::stoi(field("n_c"));
    cfg.n_f = std::stoi(field("n_f"));
    cfg.width = std::stoi(field("width"));
    cfg.depth_hidden = std::stoi(field("depth_hidden"));
    cfg.rank = std::stoi(field("rank"));
    if (field("activation") != "silu")
        throw std::runtime_error("checkpoint: unsupported activation");
    const bool frozen = std::stoi(field("factors_frozen")) != 0;
    const size_t n_arrays = std::stoul(field("arrays"));

    ModelParams params = zero_params(cfg, kind);
    auto refs = param_refs(params);
    if (refs.size() != n_arrays)
        throw std::runtime_error("checkpoint: field 'arrays' is " + std::to_string(n_arrays) +
                                 ", expected " + std::to_string(refs.size()));

    size_t expected_offset = 0;
    for (auto& ref : refs) {
        std::istringstream ss(next_line("array manifest"));
        std::string tag, name;
        int rows = 0, cols = 0;
        size_t offset = 0;
        ss >> tag >> name >> rows >> cols >> offset;
        if (tag != "array" || ss.fail())
            throw std::runtime_error("checkpoint: malformed array manifest line for '" + ref.name + "'");
        if (name != ref.name)
            throw std::runtime_error("checkpoint: array '" + name + "' where '" + ref.name +
                                     "' was expected");
        if (rows != ref.array->rows || cols != ref.array->cols)
            throw std::runtime_error("checkpoint: array '" + name + "' has shape " +
                                     std::to_string(rows) + "x" + std::to_string(cols) +
                                     ", config implies " + std::to_string(ref.array->rows) + "x" +
                                     std::to_string(ref.array->cols));
        if (offset != expected_offset)
            throw std::runtime_error("checkpoint: array '" + name + "' has offset " +
                                     std::to_string(offset) + ", expected " +
                                     std::to_string(expected_offset));
        expected_offset += ref.array->data.size() * sizeof(double);
    }
    const size_t data_bytes = std::stoul(field("data"));
    if (data_bytes != expected_offset)
        throw std::runtime_error("checkpoint: field 'data' does not match array manifest");

    for (auto& ref : refs) {
        in.read(reinterpret_cast<char*>(ref.array->data.data()),
                static_cast<std::streamsize>(ref.array->data.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(ref.array->data.size() * sizeof(double)))
            throw std::runtime_error("checkpoint: truncated data for array '" + ref.name + "'");
    }
    if (auto* t = std::get_if<TwinNetParams>(&params)) t->factors_frozen = frozen;
    return {std::move(params), cfg};
}

} // namespace comlab
