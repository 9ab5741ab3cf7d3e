#include "owvis/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "owvis/losses.hpp"
#include "owvis/optimizer.hpp"

namespace owvis {

TrainStats train_model(Model& model, const Dataset& data, const std::string& loss_csv_path) {
  const Config& cfg = model.cfg();
  set_precision(cfg.precision == "f64" ? Precision::f64 : Precision::f32);

  std::vector<const DatasetVideo*> train;
  for (const auto& v : data.videos)
    if (v.split == "train") train.push_back(&v);
  if (train.empty()) throw Error("bad-config", "dataset has no train split");
  for (const auto* v : train)
    if (v->sample.t < cfg.clip_len)
      throw Error("bad-config", "train video shorter than the clip length");

  AdamW opt(model.params().trainable(), cfg.lr, cfg.weight_decay);
  Rng sampler(Rng::mix(cfg.seed, 0x5eed5eedull));

  std::ofstream csv;
  if (!loss_csv_path.empty()) {
    csv.open(loss_csv_path, std::ios::trunc);
    if (!csv) throw DataError("missing-file", "cannot write loss log: " + loss_csv_path);
    csv << "step,L_ow,L_cw,L_cont,L_cap,L_total\n";
  }

  TrainStats stats;
  for (int step = 1; step <= cfg.train_steps; ++step) {
    Tape tape;
    Tensor batch_total = Tensor::scalar(0.0);
    StepLosses row;
    row.step = step;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const DatasetVideo& v = *train[sampler.uniform_int(0, static_cast<int>(train.size()) - 1)];
      int start = sampler.uniform_int(0, v.sample.t - cfg.clip_len);
      Tensor frames = Model::frames_tensor(v.sample, start, cfg.clip_len);
      ClipOutput out = model.transformer().forward_clip(frames);
      ClipTargets targets =
          build_targets(v.sample, start, cfg.clip_len, model.vocab(), cfg.max_caption_len);
      LossOutputs losses = compute_losses(out, &model.captions(), targets, cfg);
      batch_total = add(batch_total, losses.total);
      row.ow += losses.ow.value();
      row.cw += losses.cw.value();
      row.cont += losses.cont.value();
      row.cap += losses.cap.value();
    }
    Tensor loss = scale(batch_total, 1.0 / cfg.batch_size);
    row.ow /= cfg.batch_size;
    row.cw /= cfg.batch_size;
    row.cont /= cfg.batch_size;
    row.cap /= cfg.batch_size;
    row.total = loss.value();

    if (!std::isfinite(row.total)) {
      std::ostringstream diag;
      diag << "non-finite loss at step " << step << ": L_ow=" << row.ow << " L_cw=" << row.cw
           << " L_cont=" << row.cont << " L_cap=" << row.cap;
      throw Error("non-finite-loss", diag.str());
    }

    opt.zero_grad();
    tape.backward(loss);
    collect_gradients(tape, model.params().trainable());
    clip_global_norm(model.params().trainable(), cfg.grad_clip);
    opt.step();

    stats.history.push_back(row);
    if (csv.is_open()) {
      csv.precision(10);
      csv << row.step << ',' << row.ow << ',' << row.cw << ',' << row.cont << ',' << row.cap
          << ',' << row.total << '\n';
    }
  }
  return stats;
}

}  // namespace owvis
