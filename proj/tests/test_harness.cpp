#include "cosmo/harness.hpp"

#include "fixture.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace cosmo;
using namespace cosmo::harness;

namespace {

TrainConfig small_cfg(const synthdata::GenConfig& g, std::uint64_t seed = 0) {
  TrainConfig c;
  c.epochs = 3;
  c.sampler = {8, 16};
  c.dims = fixture::small_dims(g);
  c.seed = seed;
  c.con_d.pretrain_epochs = 2;
  c.con_d.finetune_epochs = 2;
  return c;
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(TrainConfig, Validation) {
  const auto g = fixture::small_gen(0);
  auto c = small_cfg(g);
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_cfg(g);
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_cfg(g);
  c.ecm_eliminate_only = true;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.ecm_enabled = true;
  EXPECT_NO_THROW(c.validate());
  c.itc_mode = ItcMode::MD;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_cfg(g);
  c.sampler.search_space = 12;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_cfg(g);
  EXPECT_EQ(c.queue_capacity(), 64u);
  c.md_queue_size = 5;
  EXPECT_EQ(c.queue_capacity(), 5u);
}

TEST(TrainConfig, ParseNames) {
  EXPECT_EQ(parse_itc_mode("sitc"), ItcMode::SITC);
  EXPECT_EQ(parse_itc_mode(to_string(ItcMode::CS)), ItcMode::CS);
  EXPECT_THROW(parse_itc_mode("soft"), std::invalid_argument);
  EXPECT_EQ(parse_optimizer("sgd_momentum"), Optimizer::SGDMomentum);
  EXPECT_EQ(parse_con_d_kind("trained"), ConDKind::Trained);
  EXPECT_EQ(parse_sweep_axis("m"), SweepAxis::M);
  EXPECT_THROW(parse_sweep_axis("lr"), std::invalid_argument);
}

TEST(Train, DimensionMismatchRejected) {
  const auto g = fixture::small_gen(1);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.dims.d_img = 9;
  EXPECT_THROW(train(c, ds, nullptr), std::invalid_argument);
  c = small_cfg(g);
  c.dims.vocab_size = 41;
  EXPECT_THROW(train(c, ds, nullptr), std::invalid_argument);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto g = fixture::small_gen(2);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.learning_rate = 0.0;
  c.epochs = 2;
  const auto res = train(c, ds, nullptr);
  EXPECT_TRUE(res.params.weights == init_state(c, ds).params.weights);
  EXPECT_GT(res.epochs[0].itc, 0.0);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto g = fixture::small_gen(3);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g, 7);
  c.itc_mode = ItcMode::SITC;
  c.ecm_enabled = true;
  const ecm::OracleDiscriminator oracle(ds);
  const auto a = train(c, ds, &oracle);
  const auto b = train(c, ds, &oracle);
  EXPECT_TRUE(a.params.weights == b.params.weights);
  ASSERT_EQ(a.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(metrics_csv_row(a.epochs[e]), metrics_csv_row(b.epochs[e]));
  EXPECT_EQ(a.next_schedule, b.next_schedule);
  c.seed = 8;
  EXPECT_FALSE(train(c, ds, &oracle).params.weights == a.params.weights);
}

TEST(Train, EveryModeRunsAndStaysFinite) {
  const auto g = fixture::small_gen(4);
  const auto ds = synthdata::generate(g);
  const ecm::OracleDiscriminator oracle(ds);
  for (auto mode : {ItcMode::OneHot, ItcMode::SITC, ItcMode::MD, ItcMode::CS}) {
    for (bool ecm_on : {false, true}) {
      auto c = small_cfg(g);
      c.itc_mode = mode;
      c.ecm_enabled = ecm_on;
      c.md_queue_size = 16;
      c.optimizer = Optimizer::SGDMomentum;
      const auto res = train(c, ds, ecm_on ? &oracle : nullptr);
      EXPECT_TRUE(res.params.weights.all_finite());
      for (const auto& m : res.epochs) {
        EXPECT_TRUE(std::isfinite(m.total)) << to_string(mode);
        EXPECT_NEAR(m.total, m.itc + m.itm + m.mlm, 1e-9);
      }
      EXPECT_EQ(res.momentum.has_value(), mode == ItcMode::MD);
    }
  }
}

TEST(Train, EcmWithOracleLeavesNoFalseNegatives) {
  const auto g = fixture::small_gen(5);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.ecm_enabled = true;
  const ecm::OracleDiscriminator oracle(ds);
  const auto res = train(c, ds, &oracle);
  std::size_t conversions = 0;
  for (const auto& m : res.epochs) {
    EXPECT_EQ(m.fn.fn_img + m.fn.fn_txt, 0u);
    conversions += m.ecm.conversions_i2t + m.ecm.conversions_t2i;
  }
  EXPECT_GT(conversions, 0u);
  EXPECT_THROW(train(c, ds, nullptr), std::invalid_argument);
}

TEST(Train, SearchSpaceEqualToBatchKeepsBatchMembership) {
  const auto g = fixture::small_gen(6);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.sampler = {8, 8};
  const auto res = train(c, ds, nullptr);
  for (std::size_t e = 1; e < res.schedules.size(); ++e) {
    ASSERT_EQ(res.schedules[e].num_batches(), res.schedules[0].num_batches());
    for (std::size_t b = 0; b < res.schedules[0].num_batches(); ++b) {
      EXPECT_EQ(as_set(res.schedules[e].batches[b]), as_set(res.schedules[0].batches[b]));
    }
  }
}

TEST(Train, LargerSearchSpaceRegroups) {
  const auto g = fixture::small_gen(6);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.sampler = {8, 32};
  const auto res = train(c, ds, nullptr);
  bool changed = false;
  for (std::size_t b = 0; b < res.schedules[0].num_batches(); ++b) {
    changed |= as_set(res.schedules[1].batches[b]) != as_set(res.schedules[0].batches[b]);
  }
  EXPECT_TRUE(changed);
  // Each epoch still covers the whole training split once.
  for (const auto& s : res.schedules) {
    auto o = s.order();
    o.insert(o.end(), s.dropped.begin(), s.dropped.end());
    EXPECT_EQ(as_set(o), as_set(ds.train_indices()));
    EXPECT_EQ(o.size(), ds.train_indices().size());
  }
}

TEST(Train, ItcLossFallsOverTwoDefaultEpochs) {
  const auto ds = synthdata::generate(synthdata::GenConfig{});
  TrainConfig c;
  c.epochs = 2;
  const auto r = train(c, ds, nullptr);
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_LT(r.epochs[1].itc, r.epochs[0].itc);
}

TEST(Train, HugeLearningRateDiverges) {
  const auto g = fixture::small_gen(7);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.learning_rate = 1e300;
  c.epochs = 5;
  try {
    train(c, ds, nullptr);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_TRUE(e.last_good().weights.all_finite());
  }
}

TEST(ApplyUpdate, SgdAndMomentumArithmetic) {
  ModelParams p = init_params(ModelDims{4, 8, 3, 2, 3}, 1);
  ParamBundle g = ParamBundle::zeros_like(p.weights);
  for (auto& t : g.tensors) t.setOnes();
  ParamBundle v = ParamBundle::zeros_like(p.weights);
  TrainConfig c;
  c.learning_rate = 0.1;
  const ModelParams start = p;
  apply_update(p, v, g, c);
  EXPECT_TRUE(p.weights[ParamId::ImgProj].isApprox((start.weights[ParamId::ImgProj].array() - 0.1).matrix()));
  c.optimizer = Optimizer::SGDMomentum;
  c.momentum = 0.5;
  p = start;
  apply_update(p, v, g, c);
  apply_update(p, v, g, c);
  // v1 = 1, v2 = 1.5: total step 0.25.
  EXPECT_NEAR((start.weights[ParamId::TxtProj] - p.weights[ParamId::TxtProj]).maxCoeff(), 0.25, 1e-12);
  EXPECT_NEAR(v[ParamId::TxtProj].minCoeff(), 1.5, 1e-15);
}

TEST(FnCount, ReplayMatchesBruteForce) {
  const auto g = fixture::small_gen(8);
  const auto ds = synthdata::generate(g);
  const auto params = init_params(fixture::small_dims(g), 3);
  const auto sched = grit::random_schedule(ds.train_indices(), 8, 2);
  const ecm::OracleDiscriminator truth(ds, {1.0, 0.0, 0.0, 0});
  const auto rep = count_false_negatives(ds, sched, params, {&truth, 0.5});

  std::size_t fi = 0, ft = 0, n = 0;
  for (const auto& batch : sched.batches) {
    const Matrix img = encoder::encode_images(params, ds.image_rows(batch));
    const Matrix txt = encoder::encode_texts(params, ds.text_rows(batch));
    for (std::size_t a = 0; a < batch.size(); ++a) {
      std::size_t bi = a == 0 ? 1 : 0, bt = bi;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        if (k == a) continue;
        const auto A = static_cast<Eigen::Index>(a), K = static_cast<Eigen::Index>(k);
        if (img.row(A).dot(txt.row(K)) > img.row(A).dot(txt.row(static_cast<Eigen::Index>(bi)))) bi = k;
        if (txt.row(A).dot(img.row(K)) > txt.row(A).dot(img.row(static_cast<Eigen::Index>(bt)))) bt = k;
      }
      fi += synthdata::is_true_connection(ds, batch[a], batch[bi]);
      ft += synthdata::is_true_connection(ds, batch[bt], batch[a]);
      n += 2;
    }
  }
  EXPECT_EQ(rep.fn_wrt_image, fi);
  EXPECT_EQ(rep.fn_wrt_text, ft);
  EXPECT_EQ(rep.total_negatives, n);
  EXPECT_EQ(rep.log.size(), n);
  std::size_t judged = 0;
  for (const auto& e : rep.log) judged += e.judged_false;
  EXPECT_EQ(judged, fi + ft);
  EXPECT_NEAR(rep.ratio(), static_cast<double>(fi + ft) / static_cast<double>(n), 1e-15);
}

TEST(FnCount, JudgeThresholdAndErrors) {
  const auto g = fixture::small_gen(9);
  const auto ds = synthdata::generate(g);
  const auto params = init_params(fixture::small_dims(g), 3);
  const auto sched = grit::random_schedule(ds.train_indices(), 8, 1);
  const ecm::ConstantDiscriminator half(0.5);
  EXPECT_EQ(count_false_negatives(ds, sched, params, {&half, 0.5}).fn_wrt_image, 0u);
  EXPECT_EQ(count_false_negatives(ds, sched, params, {&half, 0.4}).fn_wrt_image, sched.order().size());
  EXPECT_THROW(count_false_negatives(ds, sched, params, {nullptr, 0.5}), std::invalid_argument);
  grit::BatchSchedule bad{{{0, 1, 999}}, {}};
  EXPECT_THROW(count_false_negatives(ds, bad, params, {&half, 0.5}), std::invalid_argument);
}

TEST(FnCount, TrainingReportSkipsFirstEpoch) {
  TrainResult r;
  r.epochs.resize(3);
  r.epochs[0].fn = {100, 100, 100, 100};
  r.epochs[1].fn = {1, 2, 10, 10};
  r.epochs[2].fn = {3, 4, 10, 10};
  const auto rep = training_fn_report(r);
  EXPECT_EQ(rep.fn_wrt_image, 4u);
  EXPECT_EQ(rep.fn_wrt_text, 6u);
  EXPECT_EQ(rep.total_negatives, 40u);
  r.epochs.resize(1);
  EXPECT_EQ(training_fn_report(r).fn_wrt_image, 100u);
}

TEST(ConD, AucOfOracleAndConstant) {
  const auto g = fixture::small_gen(10);
  const auto ds = synthdata::generate(g);
  const ecm::OracleDiscriminator oracle(ds);
  // With 8 concepts some random negatives share a concept and tie at p_hi.
  const double auc = pair_auc(oracle, ds, ds.train_indices(), 1);
  EXPECT_GT(auc, 0.85);
  EXPECT_LE(auc, 1.0);
  EXPECT_DOUBLE_EQ(pair_auc(ecm::ConstantDiscriminator(0.3), ds, ds.train_indices(), 1), 0.5);
}

TEST(ConD, TrainedScorerBeatsChance) {
  synthdata::GenConfig g = fixture::small_gen(11, 16, 6);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.con_d.kind = ConDKind::Trained;
  c.con_d.pretrain_epochs = 2;
  c.con_d.finetune_epochs = 50;
  c.con_d.finetune_lr = 0.3;
  const auto d = make_con_d(c, ds);
  EXPECT_GT(pair_auc(*d, ds, ds.train_indices(), 2), 0.7);
}

TEST(ConD, TrainedScorerSeparatesCleanData) {
  // Default-sized data without image noise; negatives drawn from other concepts.
  synthdata::GenConfig g;
  g.noise_sigma = 0.0;
  const auto ds = synthdata::generate(g);
  TrainConfig c;
  c.con_d.kind = ConDKind::Trained;
  const auto d = make_con_d(c, ds);
  const auto& train = ds.train_indices();
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<double> pos, neg;
  for (auto i : train) {
    pos.push_back(d->prob(i, i));
    for (int k = 0; k < 3; ++k) {
      std::size_t j = train[pick(rng)];
      while (synthdata::is_true_connection(ds, i, j)) j = train[pick(rng)];
      neg.push_back(d->prob(i, j));
    }
  }
  double wins = 0.0;
  for (double p : pos) {
    for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
  }
  const double auc = wins / static_cast<double>(pos.size() * neg.size());
  EXPECT_GT(auc, 0.99);
  for (double p : pos) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_EQ(d->prob(train[0], train[1]), d->prob(train[0], train[1]));
}

TEST(LabelShape, AnalyticSitcAndErrors) {
  const auto g = fixture::small_gen(12);
  const auto ds = synthdata::generate(g);
  const auto params = init_params(fixture::small_dims(g), 1);
  const auto sched = grit::random_schedule(ds.train_indices(), 8, 1);
  const auto r = analyze_label_shape(params, ds, sched, ItcMode::SITC, 0.5, 0);
  EXPECT_NEAR(r.top1_5, 0.5 + 5 * 0.5 / 8, 1e-12);
  EXPECT_NEAR(r.top6_b, 3 * 0.5 / 8, 1e-12);
  const auto md = analyze_label_shape(params, ds, sched, ItcMode::MD, 0.4, 16);
  ASSERT_TRUE(md.top_b1_bq.has_value());
  EXPECT_NEAR(md.total(), 1.0, 1e-9);
  const auto cs = analyze_label_shape(params, ds, sched, ItcMode::CS, 0.4, 0);
  EXPECT_NEAR(cs.total(), 1.0, 1e-9);
  EXPECT_GE(cs.top1_5, 0.6);
  EXPECT_THROW(analyze_label_shape(params, ds, sched, ItcMode::MD, 0.4, 0), std::invalid_argument);
  EXPECT_THROW(analyze_label_shape(params, ds, {}, ItcMode::SITC, 0.4, 0), std::invalid_argument);
}

TEST(Sweep, AxisValuesAndRows) {
  const auto g = fixture::small_gen(13);
  const auto ds = synthdata::generate(g);
  auto c = small_cfg(g);
  c.epochs = 2;
  EXPECT_EQ(with_axis_value(c, SweepAxis::M, 24).sampler.search_space, 24u);
  EXPECT_EQ(with_axis_value(c, SweepAxis::Alpha, 0.2).alpha, 0.2);
  EXPECT_THROW(with_axis_value(c, SweepAxis::M, 12.5), std::invalid_argument);
  EXPECT_THROW(with_axis_value(c, SweepAxis::M, 12), std::invalid_argument);

  SweepOptions o;
  o.values = {8, 32};
  o.seeds = {0, 1};
  o.eval.k_rerank = 4;
  std::size_t seen = 0;
  o.on_row = [&](const SweepRow&) { ++seen; };
  const auto rows = sweep(c, ds, o);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(seen, 4u);
  EXPECT_EQ(rows[2].seed, 1u);
  EXPECT_EQ(rows[3].value, 32.0);
  const auto line = sweep_csv_row(SweepAxis::M, rows[0]);
  EXPECT_EQ(line.rfind("M,8,0,", 0), 0u) << line;
  const auto header = sweep_csv_header();
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), std::count(header.begin(), header.end(), ','));
}

TEST(Metrics, CsvRows) {
  EpochMetrics m;
  m.epoch = 2;
  m.itc = 1.5;
  m.fn = {3, 4, 0, 0};
  m.ecm.conversions_i2t = 2;
  m.ecm.conversions_t2i = 1;
  EXPECT_EQ(metrics_csv_row(m), "2,1.500000000,0.000000000,0.000000000,0.000000000,3,4,3");
  EXPECT_EQ(ecm_stats_csv_row(m), "2,0,2,1,0,0,0");
}
