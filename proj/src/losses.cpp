#include "comlab/losses.hpp"

#include <stdexcept>

#include "comlab/projection.hpp"

namespace comlab {

double resolve_ortho_weight(const std::optional<double>& w, int rank) {
    if (w) {
        if (*w < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
        return *w;
    }
    return 1.0 / (static_cast<double>(rank) * rank);
}

std::vector<double> sample_constraint_noise(Rng& rng, int n_s) {
    std::vector<double> noise(static_cast<size_t>(n_s));
    for (double& x : noise) x = rng.uniform(0.0, 0.1);
    return noise;
}

namespace {

NodeId input_node(Tape& tape, const NetworkConfig& cfg, const Sample& sample,
                  const std::vector<double>* noise) {
    if (static_cast<int>(sample.s.size()) != cfg.n_s ||
        static_cast<int>(sample.F.size()) != cfg.n_f)
        throw std::invalid_argument("loss: sample dimensions do not match network config");
    TensorValue x(cfg.n_s + cfg.n_f, 1);
    for (int i = 0; i < cfg.n_s; ++i)
        x.data[i] = sample.s[static_cast<size_t>(i)] + (noise ? (*noise)[static_cast<size_t>(i)] : 0.0);
    for (int i = 0; i < cfg.n_f; ++i) x.data[cfg.n_s + i] = sample.F[static_cast<size_t>(i)];
    return tape.leaf(std::move(x));
}

NodeId batch_mean(Tape& tape, NodeId total, size_t count) {
    return tape.apply(Op::scale, total, tape.leaf(TensorValue::scalar(1.0 / static_cast<double>(count))));
}

template <typename Binding>
NodeId ortho_residual_impl(Tape& tape, const Binding& bind, std::span<const Sample> batch,
                           Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("ortho_residual: batch is empty");
    NodeId total = -1;
    for (const Sample& sample : batch) {
        const auto noise = sample_constraint_noise(rng, bind.cfg.n_s);
        const NodeId x = input_node(tape, bind.cfg, sample, &noise);
        const ForwardNodes fwd = forward_nodes(tape, bind, x);
        const NodeId J = constants_input_gradient_nodes(tape, bind, fwd);
        const NodeId r = tape.apply(Op::sqnorm, tape.apply(Op::matmul, J, fwd.sdot0));
        total = total < 0 ? r : tape.apply(Op::add, total, r);
    }
    return batch_mean(tape, total, batch.size());
}

template <typename Binding>
NodeId projected_sdot_impl(Tape& tape, const Binding& bind, const ForwardNodes& fwd) {
    if (bind.cfg.n_c == 0) return fwd.sdot0;
    const NodeId J = constants_input_gradient_nodes(tape, bind, fwd);
    const NodeId A = assemble_A(tape, J, fwd.sdot0);
    const QrResult qr = householder_qr(tape, A);
    return project_sdot(tape, qr, bind.cfg.n_c);
}

NodeId target_node(Tape& tape, const NetworkConfig& cfg, const Sample& sample) {
    if (static_cast<int>(sample.sdot.size()) != cfg.n_s)
        throw std::invalid_argument("loss: target dimension does not match network config");
    return tape.leaf(TensorValue::column(sample.sdot));
}

} // namespace

NodeId ortho_residual(Tape& tape, const TwinBinding& bind, std::span<const Sample> batch, Rng& rng) {
    return ortho_residual_impl(tape, bind, batch, rng);
}

NodeId ortho_residual(Tape& tape, const CometBinding& bind, std::span<const Sample> batch, Rng& rng) {
    return ortho_residual_impl(tape, bind, batch, rng);
}

NodeId projected_sdot(Tape& tape, const TwinBinding& bind, const ForwardNodes& fwd) {
    return projected_sdot_impl(tape, bind, fwd);
}

NodeId projected_sdot(Tape& tape, const CometBinding& bind, const ForwardNodes& fwd) {
    return projected_sdot_impl(tape, bind, fwd);
}

NodeId semi_orthogonality_penalty(Tape& tape, std::span<const TwinBinding::HiddenNodes> hidden,
                                  int rank, const LossWeights& weights) {
    const NodeId w1 = tape.leaf(TensorValue::scalar(resolve_ortho_weight(weights.w1_ortho, rank)));
    const NodeId w2 = tape.leaf(TensorValue::scalar(resolve_ortho_weight(weights.w2_ortho, rank)));
    NodeId total = -1;
    for (const auto& layer : hidden) {
        const NodeId s_gram = tape.apply(Op::matmul, tape.apply(Op::transpose, layer.S), layer.S);
        const NodeId d_gram = tape.apply(Op::matmul, layer.D_t, layer.D);
        const NodeId s_term =
            tape.apply(Op::scale, tape.apply(Op::sqnorm, tape.apply(Op::identity_minus, s_gram)), w1);
        const NodeId d_term =
            tape.apply(Op::scale, tape.apply(Op::sqnorm, tape.apply(Op::identity_minus, d_gram)), w2);
        const NodeId term = tape.apply(Op::add, s_term, d_term);
        total = total < 0 ? term : tape.apply(Op::add, total, term);
    }
    if (total < 0) throw std::invalid_argument("semi_orthogonality_penalty: no hidden layers");
    return total;
}

NodeId phase1_loss(Tape& tape, const TwinBinding& bind, std::span<const Sample> batch, Rng& rng,
                   const LossWeights& weights) {
    const NodeId residual = ortho_residual(tape, bind, batch, rng);
    const NodeId penalty = semi_orthogonality_penalty(tape, bind.hidden, bind.cfg.rank, weights);
    return tape.apply(Op::add, residual, penalty);
}

NodeId phase2_loss(Tape& tape, const TwinBinding& bind, std::span<const Sample> batch,
                   const LossWeights& weights) {
    if (batch.empty()) throw std::invalid_argument("phase2_loss: batch is empty");
    const NodeId w0 = tape.leaf(TensorValue::scalar(weights.w0));
    NodeId total = -1;
    for (const Sample& sample : batch) {
        const NodeId x = input_node(tape, bind.cfg, sample, nullptr);
        const ForwardNodes fwd = forward_nodes(tape, bind, x);
        const NodeId sdot = projected_sdot(tape, bind, fwd);
        const NodeId target = target_node(tape, bind.cfg, sample);
        const NodeId err_proj = tape.apply(Op::sqnorm, tape.apply(Op::sub, sdot, target));
        const NodeId err_raw = tape.apply(Op::sqnorm, tape.apply(Op::sub, fwd.sdot0, target));
        const NodeId li = tape.apply(Op::add, err_proj, tape.apply(Op::scale, err_raw, w0));
        total = total < 0 ? li : tape.apply(Op::add, total, li);
    }
    return batch_mean(tape, total, batch.size());
}

NodeId comet_loss(Tape& tape, const CometBinding& bind, std::span<const Sample> batch, Rng& rng,
                  const LossWeights& weights) {
    if (batch.empty()) throw std::invalid_argument("comet_loss: batch is empty");
    const NodeId w1 = tape.leaf(TensorValue::scalar(weights.w1_comet));
    const NodeId w2 = tape.leaf(TensorValue::scalar(weights.w2_comet));
    NodeId total = -1;
    for (const Sample& sample : batch) {
        const NodeId x = input_node(tape, bind.cfg, sample, nullptr);
        const ForwardNodes fwd = forward_nodes(tape, bind, x);
        const NodeId sdot = projected_sdot(tape, bind, fwd);
        const NodeId target = target_node(tape, bind.cfg, sample);
        const NodeId err_proj = tape.apply(Op::sqnorm, tape.apply(Op::sub, sdot, target));
        const NodeId err_raw = tape.apply(Op::sqnorm, tape.apply(Op::sub, fwd.sdot0, target));

        const auto noise = sample_constraint_noise(rng, bind.cfg.n_s);
        const NodeId xn = input_node(tape, bind.cfg, sample, &noise);
        const ForwardNodes fwd_n = forward_nodes(tape, bind, xn);
        const NodeId Jn = constants_input_gradient_nodes(tape, bind, fwd_n);
        const NodeId constraint = tape.apply(Op::sqnorm, tape.apply(Op::matmul, Jn, fwd_n.sdot0));

        NodeId li = tape.apply(Op::add, err_proj, tape.apply(Op::scale, err_raw, w1));
        li = tape.apply(Op::add, li, tape.apply(Op::scale, constraint, w2));
        total = total < 0 ? li : tape.apply(Op::add, total, li);
    }
    return batch_mean(tape, total, batch.size());
}

NodeId phase1_loss(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg,
                   std::span<const Sample> batch, Rng& rng, const LossWeights& weights) {
    return phase1_loss(tape, bind_params(tape, p, cfg), batch, rng, weights);
}

NodeId phase2_loss(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg,
                   std::span<const Sample> batch, const LossWeights& weights) {
    return phase2_loss(tape, bind_params(tape, p, cfg), batch, weights);
}

NodeId comet_loss(Tape& tape, const CometMlpParams& p, const NetworkConfig& cfg,
                  std::span<const Sample> batch, Rng& rng, const LossWeights& weights) {
    return comet_loss(tape, bind_params(tape, p, cfg), batch, rng, weights);
}

namespace {

// Forward-only batched evaluation; the tape is flushed periodically to bound
// memory on large validation sets.
template <typename Params, typename Fn>
double chunked_eval(const Params& p, const NetworkConfig& cfg, std::span<const Sample> batch,
                    Fn per_sample) {
    if (batch.empty()) throw std::invalid_argument("loss evaluation: batch is empty");
    double total = 0.0;
    const size_t chunk = 64;
    for (size_t base = 0; base < batch.size(); base += chunk) {
        Tape tape;
        const auto bind = bind_params(tape, p, cfg);
        const size_t end = std::min(batch.size(), base + chunk);
        for (size_t i = base; i < end; ++i) total += per_sample(tape, bind, batch[i]);
    }
    return total / static_cast<double>(batch.size());
}

template <typename Binding>
double projected_errors(Tape& tape, const Binding& bind, const Sample& sample, double w_raw,
                        bool include_raw) {
    const NodeId x = input_node(tape, bind.cfg, sample, nullptr);
    const ForwardNodes fwd = forward_nodes(tape, bind, x);
    const NodeId sdot = projected_sdot(tape, bind, fwd);
    const NodeId target = target_node(tape, bind.cfg, sample);
    const NodeId err_proj = tape.apply(Op::sqnorm, tape.apply(Op::sub, sdot, target));
    double v = tape.value(err_proj).data[0];
    if (include_raw) {
        const NodeId err_raw = tape.apply(Op::sqnorm, tape.apply(Op::sub, fwd.sdot0, target));
        v += w_raw * tape.value(err_raw).data[0];
    }
    return v;
}

} // namespace

double residual_L1(const ModelParams& params, const NetworkConfig& cfg,
                   std::span<const Sample> batch) {
    if (const auto* t = std::get_if<TwinNetParams>(&params))
        return chunked_eval(*t, cfg, batch, [](Tape& tape, const TwinBinding& b, const Sample& s) {
            return projected_errors(tape, b, s, 0.0, false);
        });
    return chunked_eval(std::get<CometMlpParams>(params), cfg, batch,
                        [](Tape& tape, const CometBinding& b, const Sample& s) {
                            return projected_errors(tape, b, s, 0.0, false);
                        });
}

double phase2_loss_value(const TwinNetParams& p, const NetworkConfig& cfg,
                         std::span<const Sample> batch, const LossWeights& weights) {
    return chunked_eval(p, cfg, batch, [&](Tape& tape, const TwinBinding& b, const Sample& s) {
        return projected_errors(tape, b, s, weights.w0, true);
    });
}

std::pair<double, double> phase2_val_metrics(const TwinNetParams& p, const NetworkConfig& cfg,
                                             std::span<const Sample> batch,
                                             const LossWeights& weights) {
    if (batch.empty()) throw std::invalid_argument("loss evaluation: batch is empty");
    double loss = 0.0, l1 = 0.0;
    const size_t chunk = 64;
    for (size_t base = 0; base < batch.size(); base += chunk) {
        Tape tape;
        const TwinBinding bind = bind_params(tape, p, cfg);
        const size_t end = std::min(batch.size(), base + chunk);
        for (size_t i = base; i < end; ++i) {
            const Sample& sample = batch[i];
            const NodeId x = input_node(tape, cfg, sample, nullptr);
            const ForwardNodes fwd = forward_nodes(tape, bind, x);
            const NodeId sdot = projected_sdot(tape, bind, fwd);
            const NodeId target = target_node(tape, cfg, sample);
            const NodeId err_proj = tape.apply(Op::sqnorm, tape.apply(Op::sub, sdot, target));
            const NodeId err_raw = tape.apply(Op::sqnorm, tape.apply(Op::sub, fwd.sdot0, target));
            const double proj = tape.value(err_proj).data[0];
            l1 += proj;
            loss += proj + weights.w0 * tape.value(err_raw).data[0];
        }
    }
    const double n = static_cast<double>(batch.size());
    return {loss / n, l1 / n};
}

double comet_fit_value(const CometMlpParams& p, const NetworkConfig& cfg,
                       std::span<const Sample> batch, const LossWeights& weights) {
    return chunked_eval(p, cfg, batch, [&](Tape& tape, const CometBinding& b, const Sample& s) {
        return projected_errors(tape, b, s, weights.w1_comet, true);
    });
}

} // namespace comlab
