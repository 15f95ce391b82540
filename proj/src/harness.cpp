#include "cosmo/harness.hpp"

#include "cosmo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace cosmo::harness {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum SeedStream : std::uint64_t { kInit = 0, kSchedule = 1, kMask = 2, kConD = 3, kFineTune = 4 };

[[noreturn]] void bad(const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); }

Matrix stack(const Matrix& top, const Matrix& bottom) {
  if (bottom.rows() == 0) return top;
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  }
  return out;
}

}  // namespace

std::string_view to_string(ItcMode m) {
  switch (m) {
    case ItcMode::OneHot: return "OneHot";
    case ItcMode::SITC: return "SITC";
    case ItcMode::MD: return "MD";
    case ItcMode::CS: return "CS";
  }
  return "?";
}

std::string_view to_string(Optimizer o) { return o == Optimizer::SGD ? "SGD" : "SGDMomentum"; }
std::string_view to_string(ConDKind k) { return k == ConDKind::Oracle ? "oracle" : "trained"; }

ItcMode parse_itc_mode(std::string_view s) {
  if (s == "OneHot" || s == "onehot") return ItcMode::OneHot;
  if (s == "SITC" || s == "sitc") return ItcMode::SITC;
  if (s == "MD" || s == "md") return ItcMode::MD;
  if (s == "CS" || s == "cs") return ItcMode::CS;
  throw std::invalid_argument("unknown itc_mode '" + std::string(s) + "' (OneHot|SITC|MD|CS)");
}

Optimizer parse_optimizer(std::string_view s) {
  if (s == "SGD" || s == "sgd") return Optimizer::SGD;
  if (s == "SGDMomentum" || s == "sgd_momentum") return Optimizer::SGDMomentum;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "' (SGD|SGDMomentum)");
}

ConDKind parse_con_d_kind(std::string_view s) {
  if (s == "oracle") return ConDKind::Oracle;
  if (s == "trained") return ConDKind::Trained;
  throw std::invalid_argument("unknown con_d kind '" + std::string(s) + "' (oracle|trained)");
}

std::size_t TrainConfig::queue_capacity() const {
  return md_queue_size != 0 ? md_queue_size : 8 * sampler.batch_size;
}

void TrainConfig::validate() const {
  if (epochs < 1) bad("epochs must be >= 1");
  // 0 is accepted and leaves parameters untouched.
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha must lie in [0, 1]");
  if (ecm_eliminate_only && !ecm_enabled) bad("ecm_eliminate_only requires ecm_enabled");
  if (ecm_eliminate_only && (itc_mode == ItcMode::MD || itc_mode == ItcMode::CS)) {
    bad("ecm_eliminate_only supports itc_mode OneHot or SITC only");
  }
  if (!(temperature > 0.0)) bad("temperature must be > 0");
  if (!(init_scale > 0.0)) bad("init_scale must be > 0");
  if (!(ema_coeff >= 0.0 && ema_coeff <= 1.0)) bad("ema_coeff must lie in [0, 1]");
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) bad("mask_prob must lie in (0, 1]");
  if (con_d.pretrain_epochs < 1 || con_d.finetune_epochs < 0) bad("con_d epochs out of range");
  if (!(con_d.finetune_lr >= 0.0)) bad("con_d.finetune_lr must be >= 0");
  try {
    sampler.validate();
    ecm.validate();
    dims.validate();
    con_d.oracle.validate();
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
}

void check_compatible(const TrainConfig& cfg, const synthdata::SyntheticDataset& ds) {
  const auto& g = ds.config();
  if (g.d_img != cfg.dims.d_img) {
    throw std::invalid_argument("dataset d_img " + std::to_string(g.d_img) + " != model.d_img " +
                                std::to_string(cfg.dims.d_img));
  }
  if (g.vocab_size != cfg.dims.vocab_size) {
    throw std::invalid_argument("dataset vocab_size " + std::to_string(g.vocab_size) +
                                " != model.vocab_size " + std::to_string(cfg.dims.vocab_size));
  }
  if (ds.train_indices().size() < 2) throw std::invalid_argument("training split has < 2 examples");
}

FnCounts& FnCounts::operator+=(const FnCounts& o) {
  fn_img += o.fn_img;
  fn_txt += o.fn_txt;
  neg_img += o.neg_img;
  neg_txt += o.neg_txt;
  return *this;
}

std::string metrics_csv_header() { return "epoch,itc,itm,mlm,total,fn_img,fn_txt,conversions"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9f,%.9f,%.9f,%.9f,%zu,%zu,%zu", m.epoch, m.itc, m.itm, m.mlm,
                m.total, m.fn.fn_img, m.fn.fn_txt, m.ecm.conversions_i2t + m.ecm.conversions_t2i);
  return buf;
}

std::string ecm_stats_csv_header() {
  return "epoch,probes,conversions_i2t,conversions_t2i,neutrals,resamples,negatives";
}

std::string ecm_stats_csv_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%zu,%zu,%zu,%zu,%zu,%zu", m.epoch, m.ecm.probes,
                m.ecm.conversions_i2t, m.ecm.conversions_t2i, m.ecm.neutrals, m.ecm.resamples,
                m.ecm.negatives);
  return buf;
}

TrainState init_state(const TrainConfig& cfg, const synthdata::SyntheticDataset& ds) {
  cfg.validate();
  check_compatible(cfg, ds);
  TrainState s{init_params(cfg.dims, derive_seed(cfg.seed, kInit), cfg.temperature, cfg.init_scale),
               {},
               std::nullopt,
               grit::GritSampler(cfg.sampler),
               grit::random_schedule(ds.train_indices(), cfg.sampler.batch_size,
                                     derive_seed(cfg.seed, kSchedule)),
               0,
               std::mt19937_64(derive_seed(cfg.seed, kMask))};
  s.velocity = ParamBundle::zeros_like(s.params.weights);
  if (cfg.itc_mode == ItcMode::MD) {
    s.momentum = encoder::make_momentum_state(s.params, cfg.ema_coeff, cfg.queue_capacity());
  }
  return s;
}

void apply_update(ModelParams& params, ParamBundle& velocity, const ParamBundle& grads,
                  const TrainConfig& cfg) {
  if (!grads.same_shape(params.weights)) throw std::invalid_argument("apply_update: shape mismatch");
  for (auto id : kAllParams) {
    if (cfg.optimizer == Optimizer::SGD) {
      params.weights[id] -= cfg.learning_rate * grads[id];
    } else {
      velocity[id] = cfg.momentum * velocity[id] + grads[id];
      params.weights[id] -= cfg.learning_rate * velocity[id];
    }
  }
}

EpochMetrics train_epoch(TrainState& state, const synthdata::SyntheticDataset& ds,
                         const TrainConfig& cfg, const ecm::ConnectionDiscriminator* con_d) {
  if (cfg.ecm_enabled && con_d == nullptr) {
    throw std::invalid_argument("train_epoch: ECM enabled without a Con-D");
  }
  const std::size_t bsz = cfg.sampler.batch_size;
  const std::size_t q_cap = cfg.itc_mode == ItcMode::MD ? cfg.queue_capacity() : 0;
  const auto d_proj = static_cast<Eigen::Index>(cfg.dims.d_proj);
  const double tau = state.params.temperature;
  labelkit::ShapeAccumulator shape(bsz, q_cap);

  EpochMetrics m;
  m.epoch = state.epochs_done + 1;
  for (const auto& idx : state.schedule.batches) {
    try {
      const std::size_t b = idx.size();
      losses::BatchInputs in{ds.image_rows(idx), ds.text_rows(idx)};
      encoder::EmbeddingBatch emb{encoder::encode_images(state.params, in.image_features),
                                  encoder::encode_texts(state.params, in.tokens), idx};
      const auto sims = encoder::similarity_matrix(emb);
      state.sampler.feed(emb);

      const ecm::EcmOutcome outcome = cfg.ecm_enabled
                                          ? ecm::ecm_step(idx, sims, *con_d, cfg.ecm)
                                          : ecm::hard_negatives_only(sims);
      m.ecm += outcome.stats;
      for (const auto& n : outcome.itm_negatives) {
        const bool fn = synthdata::is_true_connection(ds, idx[n.pair.img], idx[n.pair.txt]);
        if (n.side == ecm::AnchorSide::Image) {
          ++m.fn.neg_img;
          m.fn.fn_img += fn;
        } else {
          ++m.fn.neg_txt;
          m.fn.fn_txt += fn;
        }
      }

      // ITC / S-ITC / MD / CS targets (ECM conversions first, then mixing).
      losses::ItcTerm term;
      Matrix mom_img, mom_txt;
      switch (cfg.itc_mode) {
        case ItcMode::OneHot:
        case ItcMode::SITC:
          term = losses::make_sitc_term(
              in, {cfg.itc_mode == ItcMode::SITC ? cfg.alpha : 0.0, outcome.conversions_i2t,
                   outcome.conversions_t2i, cfg.ecm_eliminate_only});
          break;
        case ItcMode::MD: {
          auto& mom = *state.momentum;
          mom_img = encoder::encode_images(mom.shadow, in.image_features);
          mom_txt = encoder::encode_texts(mom.shadow, in.tokens);
          const Matrix qi = mom.img_queue.matrix(d_proj);
          const Matrix qt = mom.txt_queue.matrix(d_proj);
          const Matrix p_i2t = encoder::softmax_rows(mom_img * stack(mom_txt, qt).transpose(), tau);
          const Matrix p_t2i = encoder::softmax_rows(mom_txt * stack(mom_img, qi).transpose(), tau);
          const auto base = labelkit::onehot_diagonal(b, b + static_cast<std::size_t>(qt.rows()));
          term.batch = in;
          term.i2t = labelkit::md_labels(labelkit::ecm_correct_itc(base, outcome.conversions_i2t), p_i2t, cfg.alpha);
          term.t2i = labelkit::md_labels(labelkit::ecm_correct_itc(base, outcome.conversions_t2i), p_t2i, cfg.alpha);
          term.queue_img = qi;
          term.queue_txt = qt;
          break;
        }
        case ItcMode::CS: {
          const Matrix p_i2t = encoder::softmax_rows(sims.i2t, tau);
          const Matrix p_t2i = encoder::softmax_rows(sims.t2i, tau);
          const auto base = labelkit::onehot_diagonal(b, b);
          term.batch = in;
          term.i2t = labelkit::cs_labels(labelkit::ecm_correct_itc(base, outcome.conversions_i2t),
                                         labelkit::swapped_direction_targets(p_t2i), cfg.alpha);
          term.t2i = labelkit::cs_labels(labelkit::ecm_correct_itc(base, outcome.conversions_t2i),
                                         labelkit::swapped_direction_targets(p_i2t), cfg.alpha);
          break;
        }
      }
      if (b == bsz && term.i2t.width() == bsz + q_cap) {
        shape.add(term.i2t.rows);
        shape.add(term.t2i.rows);
      }

      // ITM over originals, converted pairs (unless eliminating) and mined negatives.
      std::vector<std::size_t> itm_img, itm_txt;
      std::vector<bool> itm_pos;
      const std::size_t n_pos = cfg.ecm_eliminate_only ? b : outcome.itm_positives.size();
      for (std::size_t p = 0; p < n_pos; ++p) {
        itm_img.push_back(outcome.itm_positives[p].img);
        itm_txt.push_back(outcome.itm_positives[p].txt);
        itm_pos.push_back(true);
      }
      for (const auto& n : outcome.itm_negatives) {
        itm_img.push_back(n.pair.img);
        itm_txt.push_back(n.pair.txt);
        itm_pos.push_back(false);
      }
      losses::ItmBatch itm{gather(in.image_features, itm_img), {}, std::move(itm_pos)};
      for (auto t : itm_txt) itm.tokens.push_back(in.tokens[t]);

      // MLM over D, plus D_ECM unless eliminating.
      losses::MlmBatch mlm = losses::make_mlm_batch(in.tokens, in.image_features, cfg.mask_prob, state.rng);
      if (!cfg.ecm_eliminate_only && !outcome.mlm_additions.empty()) {
        std::vector<std::size_t> ai, at;
        for (const auto& p : outcome.mlm_additions) {
          ai.push_back(p.img);
          at.push_back(p.txt);
        }
        synthdata::TokenBatch add_tok;
        for (auto t : at) add_tok.push_back(in.tokens[t]);
        mlm = losses::concat_mlm(
            mlm, losses::make_mlm_batch(add_tok, gather(in.image_features, ai), cfg.mask_prob, state.rng));
      }

      losses::TotalInputs inputs{std::move(term), std::move(itm), std::move(mlm)};
      const losses::TotalLoss tl = losses::total_loss(state.params, inputs);
      if (!std::isfinite(tl.total.value) || !tl.total.grads.all_finite()) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << m.epoch << " step " << m.steps << " (itc=" << tl.itc
           << " itm=" << tl.itm << " mlm=" << tl.mlm << ")";
        throw TrainingDiverged(os.str(), state.params);
      }
      ModelParams before = state.params;
      apply_update(state.params, state.velocity, tl.total.grads, cfg);
      if (!state.params.weights.all_finite()) {
        throw TrainingDiverged("non-finite parameters after epoch " + std::to_string(m.epoch) + " step " +
                                   std::to_string(m.steps),
                               std::move(before));
      }
      if (state.momentum) {
        encoder::ema_update(*state.momentum, state.params);
        encoder::queue_push(*state.momentum, mom_img, mom_txt);
      }
      m.itc += tl.itc;
      m.itm += tl.itm;
      m.mlm += tl.mlm;
      m.total += tl.total.value;
      ++m.steps;
    } catch (const std::domain_error& e) {
      // Inputs were already valid under earlier parameters: the weights blew up.
      if (state.epochs_done == 0 && m.steps == 0) throw;
      throw TrainingDiverged("degenerate activations at epoch " + std::to_string(m.epoch) + " step " +
                                 std::to_string(m.steps) + ": " + e.what(),
                             state.params);
    }
  }
  if (m.steps > 0) {
    const double n = static_cast<double>(m.steps);
    m.itc /= n;
    m.itm /= n;
    m.mlm /= n;
    m.total /= n;
  }
  if (shape.rows_seen() > 0) m.shape = shape.report();
  state.schedule = state.sampler.take_schedule();
  ++state.epochs_done;
  return m;
}

TrainResult train(const TrainConfig& cfg, const synthdata::SyntheticDataset& ds,
                  const ecm::ConnectionDiscriminator* con_d, const EpochCallback& on_epoch) {
  TrainState state = init_state(cfg, ds);
  TrainResult res;
  for (int e = 0; e < cfg.epochs; ++e) {
    res.schedules.push_back(state.schedule);
    res.epochs.push_back(train_epoch(state, ds, cfg, con_d));
    if (on_epoch) on_epoch(res.epochs.back(), state);
  }
  res.params = std::move(state.params);
  res.next_schedule = std::move(state.schedule);
  res.momentum = std::move(state.momentum);
  return res;
}

ConDRecipe default_con_d_recipe(const TrainConfig& cfg) {
  ConDRecipe r;
  r.pretrain = cfg;
  r.pretrain.epochs = cfg.con_d.pretrain_epochs;
  r.pretrain.seed = derive_seed(cfg.seed, kConD);
  r.finetune_epochs = cfg.con_d.finetune_epochs;
  r.finetune_lr = cfg.con_d.finetune_lr;
  r.seed = derive_seed(cfg.seed, kFineTune);
  return r;
}

ecm::TrainedDiscriminator train_con_d(const synthdata::SyntheticDataset& ds,
                                      const ConDRecipe& recipe) {
  TrainConfig pre = recipe.pretrain;
  pre.itc_mode = ItcMode::SITC;
  pre.ecm_enabled = false;
  pre.ecm_eliminate_only = false;
  TrainResult res = train(pre, ds, nullptr);
  ModelParams params = std::move(res.params);

  TrainConfig ft = pre;
  ft.learning_rate = recipe.finetune_lr;
  ParamBundle velocity = ParamBundle::zeros_like(params.weights);
  std::mt19937_64 rng(recipe.seed);
  std::vector<std::size_t> order = ds.train_indices();
  const std::size_t bsz = pre.sampler.batch_size;
  std::uniform_int_distribution<std::size_t> pick(0, order.size() - 1);
  for (int e = 0; e < recipe.finetune_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + 1 < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      std::vector<std::size_t> imgs, txts;
      std::vector<bool> pos;
      for (std::size_t i = start; i < end; ++i) {
        imgs.push_back(order[i]);
        txts.push_back(order[i]);
        pos.push_back(true);
        std::size_t j = order[pick(rng)];
        while (j == order[i]) j = order[pick(rng)];
        imgs.push_back(order[i]);
        txts.push_back(j);
        pos.push_back(false);
      }
      losses::ItmBatch batch{ds.image_rows(imgs), ds.text_rows(txts), std::move(pos)};
      const auto lv = losses::itm_loss(params, batch);
      if (!std::isfinite(lv.value) || !lv.grads.all_finite()) {
        throw TrainingDiverged("Con-D fine-tuning diverged at epoch " + std::to_string(e + 1), params);
      }
      apply_update(params, velocity, lv.grads, ft);
    }
  }
  return ecm::TrainedDiscriminator(ds, std::move(params));
}

std::unique_ptr<ecm::ConnectionDiscriminator> make_con_d(const TrainConfig& cfg,
                                                         const synthdata::SyntheticDataset& ds) {
  if (cfg.con_d.kind == ConDKind::Oracle) {
    return std::make_unique<ecm::OracleDiscriminator>(ds, cfg.con_d.oracle);
  }
  return std::make_unique<ecm::TrainedDiscriminator>(train_con_d(ds, default_con_d_recipe(cfg)));
}

double pair_auc(const ecm::ConnectionDiscriminator& con_d, const synthdata::SyntheticDataset& ds,
                std::span<const std::size_t> indices, std::uint64_t seed) {
  (void)ds;
  if (indices.size() < 2) throw std::invalid_argument("pair_auc: need at least 2 examples");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, indices.size() - 1);
  std::vector<double> pos, neg;
  for (std::size_t a = 0; a < indices.size(); ++a) {
    pos.push_back(con_d.prob(indices[a], indices[a]));
    std::size_t b = pick(rng);
    while (b == a) b = pick(rng);
    neg.push_back(con_d.prob(indices[a], indices[b]));
  }
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double FnReport::ratio_image() const {
  return negatives_image ? static_cast<double>(fn_wrt_image) / static_cast<double>(negatives_image) : 0.0;
}
double FnReport::ratio_text() const {
  return negatives_text ? static_cast<double>(fn_wrt_text) / static_cast<double>(negatives_text) : 0.0;
}
double FnReport::ratio() const {
  return total_negatives
             ? static_cast<double>(fn_wrt_image + fn_wrt_text) / static_cast<double>(total_negatives)
             : 0.0;
}

FnReport fn_report_from_counts(const FnCounts& c) {
  FnReport r;
  r.fn_wrt_image = c.fn_img;
  r.fn_wrt_text = c.fn_txt;
  r.negatives_image = c.neg_img;
  r.negatives_text = c.neg_txt;
  r.total_negatives = c.neg_img + c.neg_txt;
  return r;
}

labelkit::ShapeReport analyze_label_shape(const ModelParams& params,
                                          const synthdata::SyntheticDataset& ds,
                                          const grit::BatchSchedule& schedule, ItcMode mode,
                                          double alpha, std::size_t queue_size) {
  if (schedule.batches.empty()) throw std::invalid_argument("analyze_label_shape: empty schedule");
  std::size_t bsz = 0;
  for (const auto& idx : schedule.batches) bsz = std::max(bsz, idx.size());
  const std::size_t q = mode == ItcMode::MD ? queue_size : 0;
  if (mode == ItcMode::MD && q == 0) throw std::invalid_argument("analyze_label_shape: MD needs a queue");
  const auto d = static_cast<Eigen::Index>(params.dims().d_proj);
  const double tau = params.temperature;
  labelkit::ShapeAccumulator shape(bsz, q);
  encoder::MomentumState mom = encoder::make_momentum_state(params, 1.0, q);

  const bool warmup = mode == ItcMode::MD;
  for (;;) {
    const bool record = !warmup || mom.img_queue.full();
    for (const auto& idx : schedule.batches) {
      const Matrix img = encoder::encode_images(params, ds.image_rows(idx));
      const Matrix txt = encoder::encode_texts(params, ds.text_rows(idx));
      const std::size_t b = idx.size();
      if (record && b == bsz) {
        switch (mode) {
          case ItcMode::OneHot:
          case ItcMode::SITC: {
            const auto lab = labelkit::smooth(labelkit::onehot_diagonal(b, b),
                                              mode == ItcMode::SITC ? alpha : 0.0);
            shape.add(lab.rows);
            shape.add(lab.rows);
            break;
          }
          case ItcMode::MD: {
            const Matrix qi = mom.img_queue.matrix(d);
            const Matrix qt = mom.txt_queue.matrix(d);
            const auto base = labelkit::onehot_diagonal(b, b + q);
            shape.add(labelkit::md_labels(base, encoder::softmax_rows(img * stack(txt, qt).transpose(), tau), alpha).rows);
            shape.add(labelkit::md_labels(base, encoder::softmax_rows(txt * stack(img, qi).transpose(), tau), alpha).rows);
            break;
          }
          case ItcMode::CS: {
            const Matrix p_i2t = encoder::softmax_rows(img * txt.transpose(), tau);
            const Matrix p_t2i = encoder::softmax_rows(txt * img.transpose(), tau);
            const auto base = labelkit::onehot_diagonal(b, b);
            shape.add(labelkit::cs_labels(base, labelkit::swapped_direction_targets(p_t2i), alpha).rows);
            shape.add(labelkit::cs_labels(base, labelkit::swapped_direction_targets(p_i2t), alpha).rows);
            break;
          }
        }
      }
      if (q > 0) encoder::queue_push(mom, img, txt);
    }
    if (record) break;
  }
  if (shape.rows_seen() == 0) throw std::invalid_argument("analyze_label_shape: no full batch in schedule");
  return shape.report();
}

FnReport count_false_negatives(const synthdata::SyntheticDataset& ds,
                               const grit::BatchSchedule& schedule, const ModelParams& params,
                               const Judge& judge) {
  if (judge.scorer == nullptr) throw std::invalid_argument("count_false_negatives: no judge");
  FnReport rep;
  for (std::size_t bi = 0; bi < schedule.batches.size(); ++bi) {
    const auto& idx = schedule.batches[bi];
    for (auto i : idx) {
      if (i >= ds.size()) {
        throw std::invalid_argument("count_false_negatives: schedule index " + std::to_string(i) +
                                    " outside dataset of size " + std::to_string(ds.size()));
      }
    }
    if (idx.size() < 2) throw std::invalid_argument("count_false_negatives: batch smaller than 2");
    const auto emb = encoder::embed_batch(params, ds, idx);
    const auto sims = encoder::similarity_matrix(emb);
    const std::size_t b = idx.size();
    std::vector<double> row(b);
    for (ecm::AnchorSide side : {ecm::AnchorSide::Image, ecm::AnchorSide::Text}) {
      const Matrix& s = side == ecm::AnchorSide::Image ? sims.i2t : sims.t2i;
      for (std::size_t a = 0; a < b; ++a) {
        for (std::size_t c = 0; c < b; ++c) {
          row[c] = s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
        }
        const std::size_t k = ecm::select_hard_negative(row, a);
        ReplayEntry e{bi, side, idx[a], idx[k], false};
        const double p = side == ecm::AnchorSide::Image ? judge.scorer->prob(idx[a], idx[k])
                                                        : judge.scorer->prob(idx[k], idx[a]);
        e.judged_false = p > judge.threshold;
        if (side == ecm::AnchorSide::Image) {
          ++rep.negatives_image;
          rep.fn_wrt_image += e.judged_false;
        } else {
          ++rep.negatives_text;
          rep.fn_wrt_text += e.judged_false;
        }
        rep.log.push_back(e);
      }
    }
  }
  rep.total_negatives = rep.negatives_image + rep.negatives_text;
  return rep;
}

std::string_view to_string(SweepAxis a) { return a == SweepAxis::M ? "M" : "alpha"; }

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "M" || s == "m") return SweepAxis::M;
  if (s == "alpha") return SweepAxis::Alpha;
  throw std::invalid_argument("unknown sweep axis '" + std::string(s) + "' (M|alpha)");
}

TrainConfig with_axis_value(TrainConfig cfg, SweepAxis axis, double value) {
  if (axis == SweepAxis::M) {
    if (!(value >= 1.0) || value != std::floor(value)) {
      throw std::invalid_argument("sweep: M values must be positive integers");
    }
    cfg.sampler.search_space = static_cast<std::size_t>(value);
  } else {
    cfg.alpha = value;
  }
  cfg.validate();
  return cfg;
}

FnReport training_fn_report(const TrainResult& result) {
  FnCounts c;
  const std::size_t first = result.epochs.size() > 1 ? 1 : 0;
  for (std::size_t e = first; e < result.epochs.size(); ++e) c += result.epochs[e].fn;
  return fn_report_from_counts(c);
}

std::vector<SweepRow> sweep(const TrainConfig& base, const synthdata::SyntheticDataset& ds,
                            const SweepOptions& options) {
  if (options.values.empty()) throw std::invalid_argument("sweep: no values");
  if (options.seeds.empty()) throw std::invalid_argument("sweep: no seeds");
  std::vector<TrainConfig> cfgs;
  for (double v : options.values) cfgs.push_back(with_axis_value(base, options.axis, v));
  std::vector<SweepRow> rows;
  for (auto seed : options.seeds) {
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
      TrainConfig cfg = cfgs[i];
      cfg.seed = seed;
      const auto con_d = cfg.ecm_enabled ? make_con_d(cfg, ds) : nullptr;
      const TrainResult res = train(cfg, ds, con_d.get());
      SweepRow row{options.values[i], seed, training_fn_report(res),
                   retrieval::retrieval_eval(res.params, ds, ds.eval_indices(), options.eval)};
      if (options.on_row) options.on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string sweep_csv_header() {
  return "axis,value,seed,fn_img,fn_txt,negatives,fn_ratio,tr_r1,tr_r5,tr_r10,ir_r1,ir_r5,ir_r10,"
         "irtr_avg,mode";
}

std::string sweep_csv_row(SweepAxis axis, const SweepRow& row) {
  char buf[512];
  const auto& r = row.retrieval;
  const auto mode = retrieval::to_string(r.mode);
  std::snprintf(buf, sizeof buf, "%s,%g,%llu,%zu,%zu,%zu,%.6f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.*s",
                std::string(to_string(axis)).c_str(), row.value,
                static_cast<unsigned long long>(row.seed), row.fn.fn_wrt_image,
                row.fn.fn_wrt_text, row.fn.total_negatives, row.fn.ratio(), r.tr_r1, r.tr_r5,
                r.tr_r10, r.ir_r1, r.ir_r5, r.ir_r10, r.irtr_avg, static_cast<int>(mode.size()),
                mode.data());
  return buf;
}

}  // namespace cosmo::harness
