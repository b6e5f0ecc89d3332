#include "cdon/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace cdon {

void write_log_header(std::ostream& out) { out << "step,lr,cls_loss,reg_loss,total\n"; }

void write_log_row(std::ostream& out, const TrainLogRow& row) {
  out.precision(std::numeric_limits<real>::max_digits10);
  out << row.step << ',' << row.lr << ',' << row.cls << ',' << row.reg << ',' << row.total << '\n';
}

Network initial_network(const TrainConfig& cfg) {
  Network net = Network::build(cfg);
  net.initialize(cfg.seed);
  return net;
}

real mean_total(std::span<const TrainLogRow> log, std::size_t first, std::size_t last) {
  last = std::min(last, log.size());
  if (first >= last) return std::numeric_limits<real>::quiet_NaN();
  real sum = 0;
  for (std::size_t i = first; i < last; ++i) sum += log[i].total;
  return sum / static_cast<real>(last - first);
}

namespace {

void clip_gradients(std::span<Tensor4* const> params, real max_norm) {
  real sq = 0;
  for (const Tensor4* p : params) {
    for (real g : p->grad()) sq += g * g;
  }
  const real norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const real f = max_norm / norm;
  for (Tensor4* p : params) {
    for (real& g : p->grad()) g *= f;
  }
}

void write_dump(const std::string& path, int step, const std::string& image_id, const StepLoss& loss,
                const std::string& what) {
  if (path.empty()) return;
  std::ofstream out(path);
  out.precision(std::numeric_limits<real>::max_digits10);
  out << "step = " << step << "\nimage_id = " << image_id << "\nrpn_cls = " << loss.rpn.cls
      << "\nrpn_reg = " << loss.rpn.reg << "\nhead_cls = " << loss.head.cls
      << "\nhead_reg = " << loss.head.reg << "\nerror = " << what << '\n';
}

}  // namespace

TrainResult train(const RunConfig& cfg, std::span<const Sample> data, const TrainOptions& options) {
  const TrainConfig& tc = cfg.train;
  if (data.empty()) throw UsageError("train: dataset is empty");
  TrainResult result{initial_network(tc), {}, {}, 0};
  Network& net = result.net;
  OptimState& optim = result.optim;
  optim.momentum = tc.momentum;
  optim.weight_decay = tc.weight_decay;
  const LrSchedule schedule{tc.base_lr, tc.warmup_steps, tc.warmup_lr, tc.lr_drops};
  const std::vector<Tensor4*> params = net.params();

  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(data.size());
  if (options.log) write_log_header(*options.log);

  for (int s = 0; s < tc.steps; ++s) {
    const std::size_t pos = static_cast<std::size_t>(s) % data.size();
    if (pos == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
    }
    const Sample& sample = data[order[pos]];
    for (Tensor4* p : params) {
      p->ensure_grad();
      p->zero_grad();
    }
    optim.lr = schedule.at(s);
    StepLoss terms;
    try {
      Graph g;
      const TrainForward fwd = train_forward(g, net, sample.image, sample.record.objects, rng);
      terms = fwd.terms;
      if (!std::isfinite(terms.total())) throw NumericError("non-finite loss");
      g.backward(fwd.loss);
      if (tc.grad_clip > 0) clip_gradients(params, tc.grad_clip);
      sgd_step(params, optim);
    } catch (const NumericError& e) {
      write_dump(options.nan_dump_path, s + 1, sample.record.image_id, terms, e.what());
      throw NumericError("training step " + std::to_string(s + 1) + " (" + sample.record.image_id +
                         "): " + e.what());
    }
    const TrainLogRow row{s + 1, optim.lr, terms.cls(), terms.reg(), terms.total()};
    result.log.push_back(row);
    if (options.log) {
      write_log_row(*options.log, row);
      options.log->flush();
    }
    result.steps = s + 1;
    if (!options.checkpoint_prefix.empty() && tc.checkpoint_every > 0 &&
        (s + 1) % tc.checkpoint_every == 0) {
      save_checkpoint(make_checkpoint(net, optim, cfg, s + 1),
                      options.checkpoint_prefix + ".step" + std::to_string(s + 1));
    }
  }
  for (Tensor4* p : params) p->clear_grad();
  return result;
}

}  // namespace cdon
