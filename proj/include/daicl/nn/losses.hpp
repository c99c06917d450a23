#pragma once

#include <array>

#include "daicl/nn/crf.hpp"
#include "daicl/nn/model.hpp"
#include "daicl/prompt.hpp"

namespace daicl::nn {

inline constexpr double kDefaultLambda = 0.2;

struct JointLoss {
  Var loss;
  double total = 0.0;
  double task = 0.0;
  double mlm = 0.0;  // mean NLL over masked positions; 0 when none
  std::size_t masked = 0;
};

// task_nll + lambda * mlm_nll. SA uses the pooled classifier, NER the CRF over SOURCE rows.
JointLoss encoder_joint_loss(const Model& model, Tape& tape, const prompt::EncoderInstance& inst,
                             double lambda = kDefaultLambda, const ForwardOptions& opts = {});

// Decomposes an arbitrary (task, mlm) pair the same way the loss does.
double combine_joint(double task, double mlm, double lambda);

struct CausalLoss {
  Var sum;
  Var mean;
  double total = 0.0;
  std::size_t count = 0;
  std::array<double, 5> region{};  // indexed by prompt::Region

  double mean_value() const { return total / static_cast<double>(count); }
  double region_sum(prompt::Region r) const { return region[static_cast<std::size_t>(r)]; }
};

CausalLoss causal_lm_loss(const Model& model, Tape& tape, const prompt::DecoderInstance& inst,
                          const ForwardOptions& opts = {});

CRFParams crf_params(const Model& model);

}  // namespace daicl::nn
