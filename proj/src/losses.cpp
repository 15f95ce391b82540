#include "cosmo/losses.hpp"

#include "cosmo/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cosmo::losses {

namespace {

void require_distribution(std::span<const double> row, const char* what) {
  double s = 0.0;
  for (double v : row) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative or NaN entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(what) + ": row does not sum to 1");
  }
}

ad::Var stack_queue(ad::Tape& tape, ad::Var rows, const Matrix& queue) {
  if (queue.rows() == 0) return rows;
  return tape.concat_rows(rows, tape.constant(queue));
}

void require_width(const labelkit::LabelMatrix& labels, std::size_t b, std::size_t n,
                   const char* what) {
  if (labels.batch() != b || labels.width() != n) {
    throw std::invalid_argument(std::string("itc_loss: ") + what + " labels are " +
                                std::to_string(labels.batch()) + "x" +
                                std::to_string(labels.width()) + ", expected " +
                                std::to_string(b) + "x" + std::to_string(n));
  }
}

}  // namespace

void BatchInputs::validate() const {
  if (tokens.empty()) throw std::invalid_argument("BatchInputs: empty batch");
  if (static_cast<std::size_t>(image_features.rows()) != tokens.size()) {
    throw std::invalid_argument("BatchInputs: image/text row counts differ");
  }
}

double cross_entropy(std::span<const double> target, std::span<const double> prob) {
  if (target.size() != prob.size() || target.empty()) {
    throw std::invalid_argument("cross_entropy: length mismatch");
  }
  require_distribution(target, "cross_entropy target");
  require_distribution(prob, "cross_entropy prob");
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    total -= target[i] * std::log(std::max(prob[i], ad::kProbFloor));
  }
  return total;
}

LossValue itc_loss(const ModelParams& params, const ItcTerm& term) {
  term.batch.validate();
  if ((term.queue_txt.rows() == 0) != (term.queue_img.rows() == 0)) {
    throw std::invalid_argument("itc_loss: attach both queues or neither");
  }
  const std::size_t b = term.batch.size();
  const std::size_t n = b + static_cast<std::size_t>(term.queue_txt.rows());
  require_width(term.i2t, b, n, "I2T");
  require_width(term.t2i, b, n, "T2I");

  ad::Tape tape(params.weights);
  const ad::Var img = encoder::encode_images(tape, term.batch.image_features);
  const ad::Var txt = encoder::encode_texts(tape, term.batch.tokens);
  const ad::Var txt_all = stack_queue(tape, txt, term.queue_txt);
  const ad::Var img_all = stack_queue(tape, img, term.queue_img);
  const double inv_t = 1.0 / params.temperature;
  const ad::Var s_i2t = tape.scale(tape.matmul_bt(img, txt_all), inv_t);
  const ad::Var s_t2i = tape.scale(tape.matmul_bt(txt, img_all), inv_t);
  const double w = 0.5 / static_cast<double>(b);
  const ad::Var parts[] = {tape.soft_cross_entropy(s_i2t, term.i2t.rows, w, term.keep_i2t),
                           tape.soft_cross_entropy(s_t2i, term.t2i.rows, w, term.keep_t2i)};
  const ad::Var loss = tape.sum(parts);
  LossValue out;
  out.value = tape.value(loss)(0, 0);
  out.grads = tape.backward(loss);
  return out;
}

namespace {

// Returns smoothed targets and a keep mask for eliminate-only mode.
std::pair<Matrix, ad::BoolMatrix> eliminate_targets(std::size_t b, double alpha,
                                                   std::span<const labelkit::Conversion> conv) {
  const auto n = static_cast<Eigen::Index>(b);
  ad::BoolMatrix keep = ad::BoolMatrix::Constant(n, n, true);
  std::vector<bool> seen(b, false);
  for (const auto& c : conv) {
    if (c.anchor >= b || c.index >= b) throw std::invalid_argument("s_itc_loss: conversion out of range");
    if (c.index == c.anchor) throw std::invalid_argument("s_itc_loss: conversion at the pair position");
    if (seen[c.anchor]) throw std::invalid_argument("s_itc_loss: more than one conversion per anchor");
    seen[c.anchor] = true;
    keep(static_cast<Eigen::Index>(c.anchor), static_cast<Eigen::Index>(c.index)) = false;
  }
  Matrix t = Matrix::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double live = static_cast<double>(keep.row(r).count());
    for (Eigen::Index c = 0; c < n; ++c) {
      if (keep(r, c)) t(r, c) = (r == c ? 1.0 - alpha : 0.0) + alpha / live;
    }
  }
  return {std::move(t), std::move(keep)};
}

}  // namespace

ItcTerm make_sitc_term(const BatchInputs& batch, const SitcOptions& options) {
  batch.validate();
  if (!(options.alpha >= 0.0 && options.alpha <= 1.0)) {
    throw std::invalid_argument("s_itc_loss: alpha must lie in [0, 1]");
  }
  const std::size_t b = batch.size();
  ItcTerm term;
  term.batch = batch;
  if (!options.eliminate) {
    const auto base = labelkit::onehot_diagonal(b, b);
    term.i2t = labelkit::smooth(labelkit::ecm_correct_itc(base, options.conversions_i2t), options.alpha);
    term.t2i = labelkit::smooth(labelkit::ecm_correct_itc(base, options.conversions_t2i), options.alpha);
    return term;
  }
  auto [ti, ki] = eliminate_targets(b, options.alpha, options.conversions_i2t);
  auto [tt, kt] = eliminate_targets(b, options.alpha, options.conversions_t2i);
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  term.i2t = {std::move(ti), labelkit::LabelKind::Smoothed, diag};
  term.t2i = {std::move(tt), labelkit::LabelKind::Smoothed, diag};
  term.keep_i2t = std::move(ki);
  term.keep_t2i = std::move(kt);
  return term;
}

LossValue s_itc_loss(const ModelParams& params, const BatchInputs& batch,
                     const SitcOptions& options) {
  return itc_loss(params, make_sitc_term(batch, options));
}

LossValue itm_loss(const ModelParams& params, const ItmBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("itm_loss: empty ITM batch");
  if (batch.tokens.size() != batch.size() ||
      static_cast<std::size_t>(batch.image_features.rows()) != batch.size()) {
    throw std::invalid_argument("itm_loss: entry counts differ");
  }
  if (std::none_of(batch.positives.begin(), batch.positives.end(), [](bool p) { return p; })) {
    throw std::invalid_argument("itm_loss: batch has no positive pair");
  }
  ad::Tape tape(params.weights);
  const ad::Var img = encoder::encode_images(tape, batch.image_features);
  const ad::Var txt = encoder::encode_texts(tape, batch.tokens);
  const ad::Var logits = encoder::itm_logits(tape, img, txt);
  Matrix targets = Matrix::Zero(static_cast<Eigen::Index>(batch.size()), 2);
  for (std::size_t p = 0; p < batch.size(); ++p) {
    targets(static_cast<Eigen::Index>(p), batch.positives[p] ? 0 : 1) = 1.0;
  }
  const ad::Var loss =
      tape.soft_cross_entropy(logits, std::move(targets), 1.0 / static_cast<double>(batch.size()));
  LossValue out;
  out.value = tape.value(loss)(0, 0);
  out.grads = tape.backward(loss);
  return out;
}

std::size_t MlmBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& m : mask_positions) n += m.size();
  return n;
}

void MlmBatch::validate() const {
  if (inputs.empty()) throw std::invalid_argument("MlmBatch: no texts");
  if (mask_positions.size() != inputs.size() || targets.size() != inputs.size() ||
      static_cast<std::size_t>(image_features.rows()) != inputs.size()) {
    throw std::invalid_argument("MlmBatch: row counts differ");
  }
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    if (mask_positions[r].empty()) {
      throw std::invalid_argument("MlmBatch: text " + std::to_string(r) + " has no masked position");
    }
    if (targets[r].size() != mask_positions[r].size()) {
      throw std::invalid_argument("MlmBatch: targets/positions differ in text " + std::to_string(r));
    }
    for (auto p : mask_positions[r]) {
      if (p >= inputs[r].size() || inputs[r][p] != synthdata::kMaskToken) {
        throw std::invalid_argument("MlmBatch: mask position not holding [MASK]");
      }
    }
  }
}

MlmBatch make_mlm_batch(const TokenBatch& texts, const Matrix& image_features, double mask_prob,
                        std::mt19937_64& rng) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) {
    throw std::invalid_argument("make_mlm_batch: mask_prob must lie in [0, 1]");
  }
  if (static_cast<std::size_t>(image_features.rows()) != texts.size()) {
    throw std::invalid_argument("make_mlm_batch: image/text row counts differ");
  }
  MlmBatch out;
  out.inputs = texts;
  out.image_features = image_features;
  out.mask_positions.resize(texts.size());
  out.targets.resize(texts.size());
  std::bernoulli_distribution draw(mask_prob);
  for (std::size_t r = 0; r < texts.size(); ++r) {
    std::vector<std::size_t> candidates;
    for (std::size_t p = 0; p < texts[r].size(); ++p) {
      if (texts[r][p] != synthdata::kPadToken) candidates.push_back(p);
    }
    if (candidates.empty()) throw std::invalid_argument("make_mlm_batch: all-[PAD] text");
    auto& pos = out.mask_positions[r];
    for (auto p : candidates) {
      if (draw(rng)) pos.push_back(p);
    }
    if (pos.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      pos.push_back(candidates[pick(rng)]);
    }
    for (auto p : pos) {
      out.targets[r].push_back(texts[r][p]);
      out.inputs[r][p] = synthdata::kMaskToken;
    }
  }
  return out;
}

MlmBatch concat_mlm(const MlmBatch& a, const MlmBatch& b) {
  if (b.size() == 0) return a;
  if (a.size() == 0) return b;
  MlmBatch out = a;
  out.inputs.insert(out.inputs.end(), b.inputs.begin(), b.inputs.end());
  out.mask_positions.insert(out.mask_positions.end(), b.mask_positions.begin(), b.mask_positions.end());
  out.targets.insert(out.targets.end(), b.targets.begin(), b.targets.end());
  out.image_features.resize(a.image_features.rows() + b.image_features.rows(), a.image_features.cols());
  out.image_features << a.image_features, b.image_features;
  return out;
}

LossValue mlm_loss(const ModelParams& params, const MlmBatch& batch) {
  batch.validate();
  const std::size_t m = batch.masked_count();
  const auto vocab = params.weights[ParamId::MlmHead].cols();
  ad::Tape tape(params.weights);
  const ad::Var ctx = tape.mean_pool(tape.param(ParamId::TokenEmbed), batch.inputs);
  const ad::Var img = encoder::encode_images(tape, batch.image_features);
  const ad::Var feat_parts[] = {ctx, img};
  const ad::Var feat = tape.concat_cols(feat_parts);
  const ad::Var logits = tape.matmul(feat, tape.param(ParamId::MlmHead));
  std::vector<std::size_t> rows;
  rows.reserve(m);
  Matrix targets = Matrix::Zero(static_cast<Eigen::Index>(m), vocab);
  std::size_t k = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    for (auto tok : batch.targets[r]) {
      if (static_cast<Eigen::Index>(tok) >= vocab) throw std::out_of_range("mlm_loss: target >= V");
      rows.push_back(r);
      targets(static_cast<Eigen::Index>(k++), static_cast<Eigen::Index>(tok)) = 1.0;
    }
  }
  const ad::Var per_mask = tape.gather_rows(logits, std::move(rows));
  const ad::Var loss =
      tape.soft_cross_entropy(per_mask, std::move(targets), 1.0 / static_cast<double>(m));
  LossValue out;
  out.value = tape.value(loss)(0, 0);
  out.grads = tape.backward(loss);
  return out;
}

TotalLoss total_loss(const ModelParams& params, const TotalInputs& inputs) {
  TotalLoss out;
  out.total.grads = ParamBundle::zeros_like(params.weights);
  auto add = [&](const LossValue& lv, double& slot) {
    slot = lv.value;
    out.total.value += lv.value;
    out.total.grads += lv.grads;
  };
  if (inputs.itc) add(itc_loss(params, *inputs.itc), out.itc);
  if (inputs.itm) add(itm_loss(params, *inputs.itm), out.itm);
  if (inputs.mlm) add(mlm_loss(params, *inputs.mlm), out.mlm);
  return out;
}

FdReport fd_gradient_check(const LossFn& fn, const ModelParams& params, const FdOptions& options,
                           const ParamBundle* analytic_override) {
  if (!(options.h > 0.0)) throw std::invalid_argument("fd_gradient_check: h must be > 0");
  const LossValue base = fn(params);
  if (!std::isfinite(base.value)) throw std::domain_error("fd_gradient_check: non-finite loss");
  const ParamBundle& analytic = analytic_override ? *analytic_override : base.grads;
  if (!analytic.same_shape(params.weights)) {
    throw std::invalid_argument("fd_gradient_check: gradient bundle shape mismatch");
  }
  std::mt19937_64 rng(options.seed);
  FdReport rep;
  ModelParams probe = params;
  for (auto id : kAllParams) {
    Matrix& w = probe.weights[id];
    const auto size = static_cast<std::size_t>(w.size());
    std::vector<std::size_t> coords(size);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (size > options.coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_tensor);
    }
    for (auto idx : coords) {
      double& x = w.data()[idx];
      const double saved = x;
      x = saved + options.h;
      const double up = fn(probe).value;
      x = saved - options.h;
      const double down = fn(probe).value;
      x = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::domain_error("fd_gradient_check: non-finite loss under perturbation");
      }
      const double numeric = (up - down) / (2.0 * options.h);
      const double a = analytic[id].data()[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.coords_checked;
      if (rel > rep.max_rel_err || rep.worst.empty()) {
        if (rel >= rep.max_rel_err) {
          rep.max_rel_err = rel;
          std::ostringstream os;
          os << param_name(id) << "[" << idx % static_cast<std::size_t>(w.rows()) << ","
             << idx / static_cast<std::size_t>(w.rows()) << "] analytic=" << a
             << " numeric=" << numeric;
          rep.worst = os.str();
        }
      }
    }
  }
  rep.passed = rep.max_rel_err < options.tol;
  return rep;
}

}  // namespace cosmo::losses
