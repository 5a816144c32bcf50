#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "cnf/checkpoint.hpp"
#include "cnf/data.hpp"
#include "cnf/errors.hpp"
#include "cnf/loss.hpp"
#include "cnf/model.hpp"
#include "cnf/optim.hpp"

namespace cnf {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double alpha = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct EarlyStopConfig {
    bool enabled = true;
    int patience = 5;
    double min_delta = 0.0;
};

struct TrainConfig {
    int epochs_max = 60;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer;
    RegConfig reg;
    std::optional<double> dropout_override; // replaces every dropout layer's p
    EarlyStopConfig early_stopping;
    std::uint64_t seed = 42;
    std::uint64_t config_digest = 0;
    unsigned threads = 0; // 0 = single-threaded deterministic mode

    void validate() const {
        if (epochs_max < 1) throw config_error("epochs_max must be >= 1");
        if (batch_size < 1) throw config_error("batch_size must be >= 1");
        if (optimizer.alpha < 0.0) throw config_error("learning rate must be >= 0");
        if (early_stopping.patience < 1) throw config_error("patience must be >= 1");
        if (early_stopping.min_delta < 0.0) throw config_error("min_delta must be >= 0");
        reg.validate();
    }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;

    void write_csv(std::ostream& os) const {
        os << "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
        os.precision(9);
        for (const EpochRecord& r : records) {
            os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ','
               << r.val_loss << ',' << r.val_acc << ',' << r.seconds << '\n';
        }
    }
};

/// Patience-based monitor over the validation loss. An epoch improves
/// only if its loss is strictly below best - min_delta; after `patience`
/// consecutive non-improving epochs the decision flips to stop. The best
/// epoch (strictly lowest loss, earliest on ties) is tracked for weight
/// restoration.
class EarlyStopMonitor {
public:
    enum class Decision { proceed, stop };

    EarlyStopMonitor(int patience, double min_delta)
        : patience_(patience), min_delta_(min_delta) {
        if (patience < 1) throw config_error("early stopping patience must be >= 1");
    }

    Decision update(double val_loss) {
        ++epoch_;
        const bool improving = val_loss < best_ - min_delta_;
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch_;
        }
        stale_ = improving ? 0 : stale_ + 1;
        return stale_ >= patience_ ? Decision::stop : Decision::proceed;
    }

    double best_loss() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }

private:
    int patience_;
    double min_delta_;
    int epoch_ = 0;
    int stale_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::size_t> predictions;
};

inline std::size_t argmax_lowest(const Tensor& probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i; // strict >: ties go to the lowest index
    return best;
}

/// Inference-phase pass over a dataset: mean cross-entropy, accuracy and
/// the predicted labels in dataset order.
inline EvalResult evaluate_model(Network& net, const std::vector<Sample>& samples) {
    if (samples.empty()) throw data_error("evaluate_model: empty dataset");
    EvalResult res;
    res.predictions.reserve(samples.size());
    double ce_sum = 0.0;
    std::size_t correct = 0;
    for (const Sample& s : samples) {
        const Tensor probs = net.forward(s.image, Phase::infer);
        if (s.label >= probs.size())
            throw data_error("evaluate_model: label " + std::to_string(s.label) +
                             " out of range for " + std::to_string(probs.size()) +
                             " classes");
        ce_sum += -std::log(detail::clamp_prob(probs[s.label]));
        const std::size_t pred = argmax_lowest(probs);
        res.predictions.push_back(pred);
        if (pred == s.label) ++correct;
    }
    res.loss = ce_sum / static_cast<double>(samples.size());
    res.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    return res;
}

struct TrainResult {
    Network net;           // parameters restored from the best-validation epoch
    TrainHistory history;
    Checkpoint best;       // snapshot of that epoch
};

namespace detail {

struct BatchStats {
    double ce_sum = 0.0;
    std::size_t correct = 0;
};

// Forward + backward over a contiguous index range, accumulating into the
// given network's gradient buffers. Per-sample dropout rngs keep the
// random stream independent of the execution schedule.
inline BatchStats run_range(Network& net, const std::vector<Sample>& data,
                            const std::vector<std::size_t>& batch, std::size_t begin,
                            std::size_t end, const std::vector<std::uint64_t>& drop_seeds,
                            double inv_batch) {
    BatchStats stats;
    for (std::size_t bi = begin; bi < end; ++bi) {
        const Sample& s = data[batch[bi]];
        Rng drop_rng(drop_seeds[bi]);
        const Tensor probs = net.forward(s.image, Phase::train, &drop_rng);
        stats.ce_sum += -std::log(clamp_prob(probs[s.label]));
        if (argmax_lowest(probs) == s.label) ++stats.correct;
        // fused softmax + cross-entropy gradient at the logits
        Tensor grad_logits = probs;
        grad_logits[s.label] -= 1.0;
        for (double& g : grad_logits.values()) g *= inv_batch;
        net.backward_from_logits(grad_logits);
    }
    return stats;
}

} // namespace detail

/// Full training loop: per-epoch shuffling, mini-batch forward/backward
/// with the regularized objective, optimizer updates, per-epoch validation
/// and early stopping. Returns the best-validation-epoch parameters.
inline TrainResult train(const ModelSpec& spec, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const TrainConfig& cfg,
                         const NormStats& norm = {}) {
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw data_error("train: training and validation sets must be non-empty");

    Network net(spec);
    if (cfg.dropout_override) net.set_dropout(*cfg.dropout_override);
    if (!net.ends_with_softmax())
        throw config_error("train: the model must end with a softmax layer");
    for (const Sample& s : train_set)
        if (s.label >= net.spec().class_count)
            throw data_error("train: label " + std::to_string(s.label) +
                             " out of range for " +
                             std::to_string(net.spec().class_count) + " classes");

    Rng rng(cfg.seed);
    net.init_params(rng);

    AdamState adam;
    adam.alpha = cfg.optimizer.alpha;
    adam.beta1 = cfg.optimizer.beta1;
    adam.beta2 = cfg.optimizer.beta2;
    adam.epsilon = cfg.optimizer.epsilon;
    if (cfg.optimizer.kind == OptimizerKind::adam) adam.init(net.parameters());

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned threads = cfg.threads == 0 ? 1 : std::min(cfg.threads, hw);

    // worker replicas share nothing; parameters are copied in per batch
    std::vector<Network> replicas;
    for (unsigned t = 1; t < threads; ++t) replicas.emplace_back(net.spec());

    EarlyStopMonitor monitor(cfg.early_stopping.patience, cfg.early_stopping.min_delta);
    TrainHistory history;
    Checkpoint best;
    double best_val = std::numeric_limits<double>::infinity();

    auto snapshot = [&](std::uint32_t epoch) {
        Checkpoint ck;
        ck.epoch = epoch;
        ck.config_digest = cfg.config_digest;
        ck.rng_state = rng.state();
        ck.norm_mean = norm.mean;
        ck.norm_std = norm.stddev;
        ck.model = net.spec();
        for (const Tensor* p : static_cast<const Network&>(net).parameters())
            ck.params.push_back(*p);
        if (cfg.optimizer.kind == OptimizerKind::adam) {
            ck.opt_kind = 1;
            ck.opt_step = adam.step_count;
            ck.opt_m = adam.m;
            ck.opt_v = adam.v;
        }
        return ck;
    };

    for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batches = batch_indices(train_set.size(), cfg.batch_size, rng);

        double epoch_ce = 0.0, epoch_reg = 0.0;
        std::size_t epoch_correct = 0;
        for (std::size_t batch_no = 0; batch_no < batches.size(); ++batch_no) {
            const auto& batch = batches[batch_no];
            const double inv_batch = 1.0 / static_cast<double>(batch.size());
            std::vector<std::uint64_t> drop_seeds(batch.size());
            for (auto& s : drop_seeds) s = rng.next_u64();

            net.zero_grads();
            detail::BatchStats stats;
            if (threads <= 1 || batch.size() < 2 * threads) {
                stats = detail::run_range(net, train_set, batch, 0, batch.size(),
                                          drop_seeds, inv_batch);
            } else {
                // fixed-order reduction: master takes chunk 0, replicas the
                // rest, partial gradients summed in chunk order
                const std::size_t chunk = (batch.size() + threads - 1) / threads;
                for (auto& rep : replicas) {
                    rep.zero_grads();
                    auto dst = rep.parameters();
                    auto src = static_cast<const Network&>(net).parameters();
                    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
                }
                std::vector<detail::BatchStats> partial(threads);
                std::vector<std::thread> pool;
                for (unsigned t = 1; t < threads; ++t) {
                    const std::size_t b = std::min<std::size_t>(t * chunk, batch.size());
                    const std::size_t e = std::min<std::size_t>((t + 1) * chunk, batch.size());
                    pool.emplace_back([&, t, b, e] {
                        partial[t] = detail::run_range(replicas[t - 1], train_set, batch, b,
                                                       e, drop_seeds, inv_batch);
                    });
                }
                partial[0] = detail::run_range(net, train_set, batch, 0,
                                               std::min(chunk, batch.size()), drop_seeds,
                                               inv_batch);
                for (auto& th : pool) th.join();
                for (unsigned t = 0; t < threads; ++t) {
                    stats.ce_sum += partial[t].ce_sum;
                    stats.correct += partial[t].correct;
                }
                auto master_grads = net.gradients();
                for (unsigned t = 1; t < threads; ++t) {
                    auto rep_grads = replicas[t - 1].gradients();
                    for (std::size_t i = 0; i < master_grads.size(); ++i) {
                        double* dst = const_cast<Tensor*>(master_grads[i])->data();
                        const double* add = rep_grads[i]->data();
                        for (std::size_t j = 0; j < master_grads[i]->size(); ++j)
                            dst[j] += add[j];
                    }
                }
            }

            // regularization: penalties and their gradients touch dense
            // weights only
            const LossValue loss =
                regularized_loss(stats.ce_sum * inv_batch, net.dense_weights(), cfg.reg);
            if (!std::isfinite(loss.total))
                throw numerical_error("training aborted: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_no));
            if (cfg.reg.lambda_l1 > 0.0 || cfg.reg.lambda_l2 > 0.0) {
                auto weights = net.dense_weights_mutable();
                auto grads = net.dense_weight_grads();
                for (std::size_t i = 0; i < weights.size(); ++i) {
                    const double* w = weights[i]->data();
                    double* g = grads[i]->data();
                    for (std::size_t j = 0; j < weights[i]->size(); ++j) {
                        g[j] += cfg.reg.lambda_l2 * 2.0 * w[j] +
                                cfg.reg.lambda_l1 * l1_smoothed_grad(w[j], cfg.reg.epsilon_l1);
                    }
                }
            }

            if (cfg.optimizer.kind == OptimizerKind::adam) {
                adam_step(net.parameters(), net.gradients(), adam);
            } else {
                auto params = net.parameters();
                auto grads = net.gradients();
                for (std::size_t i = 0; i < params.size(); ++i)
                    sgd_step(*params[i], *grads[i], cfg.optimizer.alpha);
            }

            epoch_ce += stats.ce_sum;
            epoch_reg += loss.reg_loss;
            epoch_correct += stats.correct;
        }

        const EvalResult val = evaluate_model(net, val_set);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_ce / static_cast<double>(train_set.size()) +
                         epoch_reg / static_cast<double>(batches.size());
        rec.train_acc =
            static_cast<double>(epoch_correct) / static_cast<double>(train_set.size());
        rec.val_loss = val.loss;
        rec.val_acc = val.accuracy;
        rec.seconds = seconds;
        history.records.push_back(rec);

        if (val.loss < best_val) {
            best_val = val.loss;
            best = snapshot(static_cast<std::uint32_t>(epoch));
        }
        if (monitor.update(val.loss) == EarlyStopMonitor::Decision::stop &&
            cfg.early_stopping.enabled)
            break;
    }

    // restore the best-validation-epoch parameters
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best.params[i];

    return TrainResult{std::move(net), std::move(history), std::move(best)};
}

/// Rebuilds a network from a checkpoint's model text and parameters.
inline Network network_from_checkpoint(const Checkpoint& ckpt) {
    Network net(ckpt.model);
    auto params = net.parameters();
    if (params.size() != ckpt.params.size())
        throw corrupt_checkpoint_error("checkpoint parameter count " +
                                       std::to_string(ckpt.params.size()) +
                                       " does not match the model (" +
                                       std::to_string(params.size()) + " tensors)");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != ckpt.params[i].shape())
            throw corrupt_checkpoint_error("checkpoint tensor " + std::to_string(i) +
                                           " has shape " + ckpt.params[i].shape_str() +
                                           ", expected " + params[i]->shape_str());
        *params[i] = ckpt.params[i];
    }
    return net;
}

} // namespace cnf
