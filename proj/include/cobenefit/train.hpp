#ifndef COBENEFIT_TRAIN_HPP
#define COBENEFIT_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cobenefit/grid.hpp"
#include "cobenefit/rescnn.hpp"

namespace cobenefit {

/// One labeled, weighted window.
struct Sample {
  const GridStack* stack = nullptr;
  double target = 0.0;
  double weight = 1.0;
};

/// Aborted training run; carries the loss trace up to the failure.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  int report_interval = 0;  // eval-mode train loss every N epochs; 0 = first/last only
  std::function<void(int epoch, double loss)> on_report;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean mini-batch loss per epoch (train mode)
  std::vector<std::pair<int, double>> eval_loss;  // (epoch, eval-mode weighted MSE); epoch 0 = before training
  std::size_t effective_batch = 0;
};

inline double weighted_mean(std::span<const double> v, std::span<const double> w) {
  double sw = 0.0, s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += w[i] * v[i];
    sw += w[i];
  }
  return sw > 0.0 ? s / sw : 0.0;
}

/// Fits the linear-branch feature standardization (mean/std of channel
/// means over the training windows) and the target scaling (weighted mean
/// and std of y). Zero spreads fall back to a scale of 1.
inline void fit_training_stats(ResCnn& model, std::span<const Sample> train) {
  if (train.empty()) throw std::invalid_argument("fit_training_stats: empty training set");
  const double n = static_cast<double>(train.size());
  auto& lin = model.linear();
  for (std::size_t k = 0; k < kChannels; ++k) {
    double s = 0.0;
    for (const auto& t : train) s += t.stack->mean[k];
    const double mean = s / n;
    double ss = 0.0;
    for (const auto& t : train) ss += (t.stack->mean[k] - mean) * (t.stack->mean[k] - mean);
    const double sd = std::sqrt(ss / n);
    lin.feature_mean[k] = mean;
    lin.feature_scale[k] = is_degenerate_spread(sd, mean) ? 1.0 : sd;
  }
  std::vector<double> y, w;
  for (const auto& t : train) {
    y.push_back(t.target);
    w.push_back(t.weight);
  }
  const double my = weighted_mean(y, w);
  std::vector<double> sq;
  for (double v : y) sq.push_back((v - my) * (v - my));
  const double sd = std::sqrt(weighted_mean(sq, w));
  model.target().mean = my;
  model.target().scale = is_degenerate_spread(sd, my) ? 1.0 : sd;
  model.set_has_training_stats(true);
}

/// (1/N) sum w_n (y_n - ŷ_n)^2 in eval mode.
inline double weighted_mse(const ResCnn& model, std::span<const Sample> data) {
  if (data.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : data) {
    const double r = s.target - predict(model, *s.stack).value;
    acc += s.weight * r * r;
  }
  return acc / static_cast<double>(data.size());
}

/// Splits a shuffled order into mini-batches of `batch`. A trailing batch
/// of one sample is folded into the previous batch when batchnorm needs at
/// least two samples.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch,
                                                          bool min_two) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  }
  if (min_two && out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

/// Minimizes (1/N) sum w_n (y_n - f(x_n))^2 with Adam over
/// `hyper.iterations` epochs of shuffled mini-batches. The batch size is
/// capped at the training-set size.
inline TrainResult train(ResCnn& model, std::span<const Sample> data, const TrainOptions& opts = {}) {
  if (data.empty()) throw std::invalid_argument("train: empty training set");
  const HyperParams& hp = model.hyper();
  fit_training_stats(model, data);

  TrainResult result;
  result.effective_batch = std::min<std::size_t>(static_cast<std::size_t>(hp.batch_size), data.size());
  const bool has_bn = hp.batchnorm && hp.cnn_enabled && hp.conv_layers > 0;
  if (has_bn && data.size() < 2) throw std::invalid_argument("train: batchnorm needs at least two training samples");

  auto report = [&](int epoch) {
    const double l = weighted_mse(model, data);
    result.eval_loss.emplace_back(epoch, l);
    if (opts.on_report) opts.on_report(epoch, l);
  };
  report(0);

  nn::Adam adam({hp.learning_rate, 0.9, 0.999, 1e-8});
  const auto names = model.trainable_names();
  nn::Rng shuffle_rng(nn::mix_seed(opts.seed, 0x7A11));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const bool use_net = !model.net().empty();

  for (int epoch = 1; epoch <= hp.iterations; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    const auto batches = make_batches(order, result.effective_batch, has_bn);
    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      const std::size_t nb = batch.size();
      std::vector<nn::Tensor> inputs;
      std::vector<const nn::Tensor*> ptrs;
      std::vector<std::uint64_t> seeds;
      inputs.reserve(nb);
      for (std::size_t idx : batch) {
        const std::uint64_t sample_seed = nn::mix_seed(nn::mix_seed(opts.seed, static_cast<std::uint64_t>(epoch)), idx);
        seeds.push_back(sample_seed);
        if (use_net) {
          if (hp.augmentation) {
            nn::Rng rng(nn::mix_seed(sample_seed, 0xA06));
            inputs.push_back(augment(data[idx].stack->normalized, rng, hp.augmentation_eps));
          } else {
            inputs.push_back(data[idx].stack->normalized);
          }
        }
      }
      for (const auto& t : inputs) ptrs.push_back(&t);

      nn::Tape tape;
      nn::Tensor net_out;
      if (use_net) net_out = model.net().forward(batch_inputs(ptrs), Mode::kTrain, tape, seeds);

      const double scale = model.target().scale;
      nn::Tensor grad_out(use_net ? net_out.shape() : std::vector<std::size_t>{nb, 1});
      auto grads = model.net().zero_gradients();
      nn::Tensor g_lin({kChannels});
      nn::Tensor g_icpt({1});
      double loss = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        const Sample& s = data[batch[b]];
        const double f_c = use_net ? scale * net_out[b] : 0.0;
        const double y_hat = f_c + linear_output(model, *s.stack);
        const double r = s.target - y_hat;
        loss += s.weight * r * r;
        const double dy = -2.0 * s.weight * r / static_cast<double>(nb);
        grad_out[b] = dy * scale;
        for (std::size_t k = 0; k < kChannels; ++k) g_lin[k] += dy * scale * model.linear().feature(*s.stack, k);
        g_icpt[0] += dy * scale;
      }
      loss /= static_cast<double>(nb);
      if (!std::isfinite(loss)) {
        result.epoch_loss.push_back(loss);
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch), result.epoch_loss);
      }
      epoch_loss += loss * static_cast<double>(nb);

      if (use_net) model.net().backward(grad_out, tape, &grads);
      grads.push_back(std::move(g_lin));
      grads.push_back(std::move(g_icpt));
      auto params = model.trainable();
      try {
        adam.step(params, grads, names);
      } catch (const nn::NonFiniteError& e) {
        throw TrainingError(e.what(), result.epoch_loss);
      }
      if (use_net) model.net().update_running_stats(tape);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    if (opts.report_interval > 0 && epoch % opts.report_interval == 0 && epoch != hp.iterations) report(epoch);
  }
  if (hp.iterations > 0) report(hp.iterations);
  return result;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricReport {
  std::string tag;
  std::size_t stations = 0;
  std::size_t excluded = 0;  // y + ŷ == 0 or ŷ == 0
  double mfb = 0.0;
  double mfe = 0.0;
  double mpe = 0.0;
  double rho = 0.0;
  double r2 = 0.0;             // coefficient of determination
  double r2_table_form = 0.0;  // weighted-covariance form printed alongside; equals rho
  double wmse = 0.0;
};

/// Population-weighted metrics. With N the number of retained stations:
///   MFB = (1/N) sum w 2(y - ŷ)/(y + ŷ)
///   MFE = (1/N) sum w 2|y - ŷ|/(y + ŷ)
///   MPE = (1/N) sum w |y - ŷ|/ŷ
///   rho = weighted Pearson correlation
///   R2  = 1 - sum w (y - ŷ)^2 / sum w (y - ȳ_w)^2
/// Stations with y + ŷ == 0 or ŷ == 0 are excluded and counted.
inline MetricReport compute_metrics(std::span<const double> y, std::span<const double> y_hat,
                                    std::span<const double> w, std::string tag = {}) {
  if (y.size() != y_hat.size() || y.size() != w.size()) throw std::invalid_argument("compute_metrics: size mismatch");
  MetricReport m;
  m.tag = std::move(tag);
  std::vector<double> yy, pp, ww;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] + y_hat[i] == 0.0 || y_hat[i] == 0.0) {
      ++m.excluded;
      continue;
    }
    yy.push_back(y[i]);
    pp.push_back(y_hat[i]);
    ww.push_back(w[i]);
  }
  m.stations = yy.size();
  if (yy.empty()) throw std::invalid_argument("compute_metrics: no usable stations");
  const double n = static_cast<double>(yy.size());
  double sw = 0.0;
  for (std::size_t i = 0; i < yy.size(); ++i) {
    const double d = yy[i] - pp[i];
    m.mfb += ww[i] * 2.0 * d / (yy[i] + pp[i]);
    m.mfe += ww[i] * 2.0 * std::abs(d) / (yy[i] + pp[i]);
    m.mpe += ww[i] * std::abs(d) / pp[i];
    m.wmse += ww[i] * d * d;
    sw += ww[i];
  }
  m.mfb /= n;
  m.mfe /= n;
  m.mpe /= n;
  m.wmse /= n;

  const double my = weighted_mean(yy, ww);
  const double mp = weighted_mean(pp, ww);
  double cov = 0.0, vy = 0.0, vp = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < yy.size(); ++i) {
    cov += ww[i] * (yy[i] - my) * (pp[i] - mp);
    vy += ww[i] * (yy[i] - my) * (yy[i] - my);
    vp += ww[i] * (pp[i] - mp) * (pp[i] - mp);
    ss_res += ww[i] * (yy[i] - pp[i]) * (yy[i] - pp[i]);
  }
  (void)sw;
  const double denom = std::sqrt(vy * vp);
  if (denom > 0.0) {
    m.rho = std::clamp(cov / denom, -1.0, 1.0);
  } else {
    m.rho = ss_res == 0.0 ? 1.0 : 0.0;
  }
  m.r2_table_form = m.rho;
  m.r2 = vy > 0.0 ? 1.0 - ss_res / vy : (ss_res == 0.0 ? 1.0 : 0.0);
  return m;
}

inline MetricReport evaluate(const ResCnn& model, std::span<const Sample> data, std::string tag = {}) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<double> y, p, w;
  for (const auto& s : data) {
    y.push_back(s.target);
    p.push_back(predict(model, *s.stack).value);
    w.push_back(s.weight);
  }
  return compute_metrics(y, p, w, std::move(tag));
}

inline std::string metrics_csv_header() { return "split,stations,excluded,mfb,mfe,mpe,rho,r2,r2_table_form,wmse\n"; }

inline std::string metrics_csv_row(const MetricReport& m) {
  return m.tag + "," + std::to_string(m.stations) + "," + std::to_string(m.excluded) + "," + format_double(m.mfb) +
         "," + format_double(m.mfe) + "," + format_double(m.mpe) + "," + format_double(m.rho) + "," +
         format_double(m.r2) + "," + format_double(m.r2_table_form) + "," + format_double(m.wmse) + "\n";
}

}  // namespace cobenefit

#endif  // COBENEFIT_TRAIN_HPP
