#include "dann/model.hpp"

namespace dann {

std::vector<StepReport> fit(DannNetwork<float>& net, const Dataset& source_train,
                            const Dataset& target_train, const FitConfig& cfg) {
  if (source_train.empty() || target_train.empty())
    throw data_error("fit: training datasets must be non-empty");
  if (cfg.epochs < 1)
    throw config_error("fit: epochs must be >= 1, got " + std::to_string(cfg.epochs));

  BatchStream stream(source_train, target_train, cfg.batch_size, cfg.seed);
  const int total = cfg.epochs * stream.batches_per_epoch();
  ScheduleConfig sched = cfg.sched;
  sched.total_batches = total;

  SgdMomentum<float> opt(cfg.momentum);

  std::vector<StepReport> history;
  history.reserve(static_cast<size_t>(total));
  for (int t = 0; t < total; ++t) {
    const double p = total > 1 ? static_cast<double>(t) / (total - 1) : 0.0;
    const Batch batch = stream.next();
    history.push_back(train_step(net, opt, batch, p, t, sched, cfg.lambda));
  }
  return history;
}

}  // namespace dann
