#include "daicl/nn/losses.hpp"

#include "daicl/common.hpp"

namespace daicl::nn {

double combine_joint(double task, double mlm, double lambda) { return task + lambda * mlm; }

CRFParams crf_params(const Model& model) {
  const auto& p = model.params;
  return {p.at("crf.trans").value, p.at("crf.start").value, p.at("crf.end").value};
}

JointLoss encoder_joint_loss(const Model& model, Tape& tape, const prompt::EncoderInstance& inst,
                             double lambda, const ForwardOptions& opts) {
  Var hidden = forward_encoder(model, tape, inst.ids, opts);
  const auto source = inst.positions(prompt::Region::Source);
  JointLoss out;

  Var task;
  if (model.config.num_tags > 0) {
    if (inst.label_tags.size() != source.size()) {
      throw Error(ErrorCode::ShapeMismatch, "NER instance needs one tag per source token");
    }
    Var em = emission_scores(model, tape, hidden, source);
    task = crf_nll(em, tape.param(model.params, "crf.trans"), tape.param(model.params, "crf.start"),
                   tape.param(model.params, "crf.end"), inst.label_tags);
  } else {
    if (inst.label_class < 0) throw Error(ErrorCode::ShapeMismatch, "SA instance without a label");
    Var lp = pooled_class_log_probs(model, tape, hidden, source);
    const int label[] = {inst.label_class};
    task = pick_nll(lp, label);
  }
  out.task = task.scalar();
  out.masked = inst.mask_positions.size();

  if (inst.mask_positions.empty()) {
    out.loss = task;
    out.total = out.task;
    return out;
  }
  Var lp = mlm_log_probs(model, tape, hidden, inst.mask_positions);
  Var mlm = scale(pick_nll(lp, inst.mask_targets), 1.0 / static_cast<double>(out.masked));
  out.mlm = mlm.scalar();
  out.loss = add_scaled(task, mlm, lambda);
  out.total = out.loss.scalar();
  return out;
}

CausalLoss causal_lm_loss(const Model& model, Tape& tape, const prompt::DecoderInstance& inst,
                          const ForwardOptions& opts) {
  if (inst.loss_mask.size() != inst.ids.size() || inst.region.size() != inst.ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "decoder instance arrays disagree in length");
  }
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (std::size_t i = 1; i < inst.ids.size(); ++i) {
    if (!inst.loss_mask[i]) continue;
    rows.push_back(i - 1);
    targets.push_back(inst.ids[i]);
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyLossMask, "no supervised positions after the first");

  Var logits = forward_decoder(model, tape, inst.ids, opts);
  Var lp = log_softmax_rows(gather_rows(logits, rows));
  CausalLoss out;
  out.sum = pick_nll(lp, targets);
  out.count = rows.size();
  out.mean = scale(out.sum, 1.0 / static_cast<double>(out.count));
  out.total = out.sum.scalar();
  const Matrix& v = lp.value();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto region = inst.region[rows[r] + 1];
    out.region[static_cast<std::size_t>(region)] -= v(static_cast<Eigen::Index>(r), targets[r]);
  }
  return out;
}

}  // namespace daicl::nn
