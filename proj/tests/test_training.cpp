#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "test_util.hpp"

using namespace rseq;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& stem) {
    static int counter = 0;
    return fs::temp_directory_path() /
           ("rseq_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + stem);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary | std::ios::trunc).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelConfig tiny_config(double dropout = 0.0) {
    ModelConfig c;
    c.num_layers = 2;
    c.d_model = 16;
    c.num_heads = 2;
    c.d_ff = 32;
    c.window = 3;
    c.vocab_size = 10;
    c.dropout = dropout;
    return c;
}

Batch toy_batch(std::size_t B, std::size_t T, std::size_t vocab, Rng& rng) {
    Batch b;
    b.batch_size = B;
    b.seq_len = T;
    for (std::size_t i = 0; i < B * T; ++i) {
        b.tokens.push_back(static_cast<std::int32_t>(rng.uniform_int(vocab)));
        b.targets.push_back(static_cast<std::int32_t>(rng.uniform_int(vocab)));
    }
    return b;
}

OptimizerConfig adam(double lr) {
    OptimizerConfig c;
    c.kind = OptimizerKind::adam;
    c.lr = lr;
    return c;
}

OptimizerConfig sgd(double lr) {
    OptimizerConfig c;
    c.kind = OptimizerKind::sgd;
    c.lr = lr;
    return c;
}

Tensor<double> scalar_param(double v) { return Tensor<double>({1}, {v}, true); }

template <typename S>
std::vector<std::vector<S>> snapshot(const RTransformer<S>& m) {
    std::vector<std::vector<S>> out;
    for (const auto& p : m.parameters()) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

}  // namespace

TEST(ClipGradients, BelowThresholdIsBitwiseUnchanged) {
    auto p = scalar_param(0);
    p.mutable_grad()[0] = 0.3;
    std::vector<Tensor<double>> ps{p};
    EXPECT_DOUBLE_EQ(clip_gradients(ps, 0.5), 0.3);
    EXPECT_EQ(p.grad()[0], 0.3);
}

TEST(ClipGradients, ZeroGradients) {
    auto a = Tensor<double>::zeros({3}, true);
    a.mutable_grad();
    std::vector<Tensor<double>> ps{a};
    EXPECT_EQ(clip_gradients(ps, 1.0), 0.0);
    for (auto g : a.grad()) EXPECT_EQ(g, 0.0);
}

TEST(ClipGradients, TwiceTheNormHalvesEveryGradient) {
    Rng rng(4);
    std::vector<Tensor<double>> ps;
    for (std::size_t n : {3u, 5u, 2u}) {
        auto t = Tensor<double>::zeros({n}, true);
        for (auto& g : t.mutable_grad()) g = rng.uniform(-1, 1);
        ps.push_back(t);
    }
    double sq = 0;
    std::vector<double> before;
    for (const auto& p : ps)
        for (auto g : p.grad()) {
            sq += g * g;
            before.push_back(g);
        }
    const double clip = std::sqrt(sq) / 2;
    EXPECT_NEAR(clip_gradients(ps, clip), 2 * clip, 1e-12);
    double post = 0;
    std::size_t k = 0;
    for (const auto& p : ps)
        for (auto g : p.grad()) {
            EXPECT_NEAR(g, before[k++] / 2, 1e-7);
            post += g * g;
        }
    EXPECT_NEAR(std::sqrt(post), clip, 1e-6);
}

TEST(ClipGradients, NonPositiveThresholdIsConfigError) {
    std::vector<Tensor<double>> ps{scalar_param(1)};
    EXPECT_THROW(clip_gradients(ps, 0.0), ConfigError);
    EXPECT_THROW(clip_gradients(ps, -1.0), ConfigError);
}

TEST(Optimizer, SgdSingleStep) {
    auto p = scalar_param(1);
    p.mutable_grad()[0] = 1;
    std::vector<Tensor<double>> ps{p};
    auto st = TrainState<double>::start(sgd(0.1), 0);
    optimizer_step(ps, st, sgd(0.1));
    EXPECT_DOUBLE_EQ(p.item(), 0.9);
    EXPECT_EQ(p.grad()[0], 0.0);
    EXPECT_EQ(st.step, 1u);
}

TEST(Optimizer, SgdOnSquareFollowsRecurrence) {
    auto p = scalar_param(1);
    std::vector<Tensor<double>> ps{p};
    auto st = TrainState<double>::start(sgd(0.1), 0);
    for (int i = 0; i < 3; ++i) {
        backward(sum(mul(p, p)));
        optimizer_step(ps, st, sgd(0.1));
    }
    EXPECT_NEAR(p.item(), 0.512, 1e-9);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
    for (auto cfg : {sgd(0.5), adam(0.5)}) {
        auto p = scalar_param(0.7);
        p.mutable_grad()[0] = 0;
        std::vector<Tensor<double>> ps{p};
        auto st = TrainState<double>::start(cfg, 0);
        optimizer_step(ps, st, cfg);
        if (cfg.kind == OptimizerKind::sgd) EXPECT_EQ(p.item(), 0.7);
        else EXPECT_NEAR(p.item(), 0.7, 1e-12);
    }
}

TEST(Optimizer, AdamMatchesHandRecurrence) {
    const auto cfg = adam(0.01);
    auto p = scalar_param(2.0);
    std::vector<Tensor<double>> ps{p};
    auto st = TrainState<double>::start(cfg, 0);
    double w = 2.0, m = 0, v = 0;
    for (int t = 1; t <= 4; ++t) {
        backward(sum(mul(p, p)));
        optimizer_step(ps, st, cfg);
        const double g = 2 * w;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(p.item(), w, 1e-14) << "step " << t;
    }
}

TEST(Optimizer, MissingGradientIsUsageError) {
    std::vector<Tensor<double>> ps{scalar_param(1)};
    auto st = TrainState<double>::start(sgd(0.1), 0);
    EXPECT_THROW(optimizer_step(ps, st, sgd(0.1)), UsageError);
}

TEST(Optimizer, LrOutsideCandidatesIsConfigError) {
    auto c = sgd(1.5);
    c.lr_candidates = {1, 2, 3};
    EXPECT_THROW(c.validate(), ConfigError);
    c.lr = 2;
    EXPECT_NO_THROW(c.validate());
}

TEST(Plateau, ImprovingMetricKeepsLr) {
    auto cfg = sgd(1.0);
    auto st = TrainState<double>::start(cfg, 0);
    for (double v : {5.0, 4.0, 3.0, 2.5, 2.0}) EXPECT_EQ(lr_on_plateau(st, v, cfg), 1.0);
}

TEST(Plateau, ConstantMetricHalvesEveryPatienceEvals) {
    auto cfg = sgd(1.0);
    cfg.patience = 2;
    cfg.anneal_factor = 0.5;
    auto st = TrainState<double>::start(cfg, 0);
    st.best_val = 3.0;  // a previous evaluation already reached the plateau value
    std::vector<double> lrs;
    for (int i = 0; i < 4; ++i) lrs.push_back(lr_on_plateau(st, 3.0, cfg));
    EXPECT_EQ(lrs, (std::vector<double>{1.0, 0.5, 0.5, 0.25}));
    EXPECT_LE(st.plateau_counter, cfg.patience);
}

TEST(Plateau, RecoveryBeforePatienceKeepsLr) {
    auto cfg = sgd(1.0);
    cfg.patience = 2;
    auto st = TrainState<double>::start(cfg, 0);
    EXPECT_EQ(lr_on_plateau(st, 3.0, cfg), 1.0);
    EXPECT_EQ(lr_on_plateau(st, 3.0, cfg), 1.0);
    EXPECT_EQ(lr_on_plateau(st, 2.0, cfg), 1.0);
    EXPECT_EQ(st.plateau_counter, 0u);
}

TEST(Plateau, SubThresholdGainIsNotImprovement) {
    auto cfg = sgd(1.0);
    auto st = TrainState<double>::start(cfg, 0);
    lr_on_plateau(st, 1.0, cfg);
    EXPECT_EQ(lr_on_plateau(st, 1.0 - 5e-5, cfg), 0.5);
}

TEST(Plateau, LrNeverIncreases) {
    Rng rng(2);
    auto cfg = sgd(1.0);
    auto st = TrainState<double>::start(cfg, 0);
    double prev = st.lr;
    for (int i = 0; i < 200; ++i) {
        const double lr = lr_on_plateau(st, rng.uniform(0, 1), cfg);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
}

TEST(Trainer, ZeroLrEpochLeavesParametersBitwise) {
    Rng rng(1);
    const auto model = RTransformer<float>::create(tiny_config(0.1), rng);
    std::vector<Batch> batches;
    for (int i = 0; i < 3; ++i) batches.push_back(toy_batch(2, 6, 10, rng));
    for (auto cfg : {sgd(1.0), adam(1e-3)}) {
        auto st = TrainState<float>::start(cfg, 3);
        st.lr = 0;
        const auto before = snapshot(model);
        train_epoch(model, batches, st, cfg);
        EXPECT_EQ(snapshot(model), before);
    }
}

TEST(Trainer, SameSeedSameEpochMetrics) {
    const auto run = [] {
        Rng rng(11);
        const auto model = RTransformer<float>::create(tiny_config(0.1), rng);
        std::vector<Batch> batches;
        for (int i = 0; i < 4; ++i) batches.push_back(toy_batch(2, 8, 10, rng));
        auto cfg = adam(1e-3);
        auto st = TrainState<float>::start(cfg, 5);
        std::vector<double> losses;
        train_epoch(model, batches, st, cfg, [&](const auto&, double l) { losses.push_back(l); });
        const auto m = train_epoch(model, batches, st, cfg);
        losses.push_back(m.mean_loss);
        return losses;
    };
    EXPECT_EQ(run(), run());
}

TEST(Trainer, OverfitsOneBatch) {
    Rng rng(21);
    const auto model = RTransformer<double>::create(tiny_config(0.0), rng);
    const auto batch = toy_batch(4, 8, 10, rng);
    const auto cfg = adam(1e-2);
    auto st = TrainState<double>::start(cfg, 0);
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
        const double l = train_step(model, batch, st, cfg);
        if (i == 0) first = l;
    }
    last = evaluate(model, {batch}, MetricKind::nll).loss;
    EXPECT_LT(last, 0.2 * first) << "initial " << first << " final " << last;
}

TEST(Trainer, EpochMetricsCountSteps) {
    Rng rng(1);
    const auto model = RTransformer<float>::create(tiny_config(), rng);
    std::vector<Batch> batches(3, toy_batch(1, 4, 10, rng));
    auto cfg = sgd(0.1);
    auto st = TrainState<float>::start(cfg, 0);
    const auto m = train_epoch(model, batches, st, cfg);
    EXPECT_EQ(m.steps, 3u);
    EXPECT_EQ(st.step, 3u);
    EXPECT_EQ(st.epoch, 1u);
    EXPECT_GE(m.wall_ms, 0);
    EXPECT_GT(m.mean_loss, 0.0);
}

TEST(Trainer, NumericFaultPropagatesWithoutAdvancingEpoch) {
    Rng rng(1);
    const auto model = RTransformer<float>::create(tiny_config(), rng);
    model.parameters().front().mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    auto cfg = sgd(0.1);
    auto st = TrainState<float>::start(cfg, 0);
    Batch b = toy_batch(1, 4, 10, rng);
    b.tokens.assign(4, 0);
    EXPECT_THROW(train_epoch(model, {b}, st, cfg), NumericFault);
    EXPECT_EQ(st.epoch, 0u);
}

TEST(Evaluate, WeightsByCountedTargets) {
    Rng rng(2);
    auto cfg = tiny_config();
    const auto model = RTransformer<double>::create(cfg, rng);
    auto a = toy_batch(1, 4, 10, rng);
    auto b = toy_batch(1, 4, 10, rng);
    b.targets = {kIgnoreTarget, kIgnoreTarget, kIgnoreTarget, b.targets[3]};
    const auto ra = evaluate(model, {a}, MetricKind::nll);
    const auto rb = evaluate(model, {b}, MetricKind::nll);
    const auto both = evaluate(model, {a, b}, MetricKind::ppl);
    EXPECT_EQ(both.count, 5u);
    EXPECT_NEAR(both.loss, (4 * ra.loss + rb.loss) / 5, 1e-12);
    EXPECT_NEAR(both.metric, std::exp(both.loss), 1e-12);
}

template <typename S>
class CheckpointTest : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(CheckpointTest, Precisions);

TYPED_TEST(CheckpointTest, RoundTripIsBitwise) {
    using S = TypeParam;
    Rng rng(3);
    auto cfg = tiny_config(0.15);
    cfg.cell = CellKind::lstm;
    const auto model = RTransformer<S>::create(cfg, rng);
    auto ocfg = adam(1e-3);
    auto st = TrainState<S>::start(ocfg, 77);
    std::vector<Batch> batches{toy_batch(2, 5, 10, rng), toy_batch(2, 5, 10, rng)};
    train_epoch(model, batches, st, ocfg);
    lr_on_plateau(st, 1.25, ocfg);

    const auto p1 = temp_path("a.bin"), p2 = temp_path("b.bin");
    save_checkpoint(model, st, p1);
    const auto ck = load_checkpoint<S>(p1);
    EXPECT_EQ(ck.model.config(), cfg);
    EXPECT_EQ(snapshot(ck.model), snapshot(model));
    EXPECT_EQ(ck.state.step, st.step);
    EXPECT_EQ(ck.state.epoch, st.epoch);
    EXPECT_EQ(ck.state.lr, st.lr);
    EXPECT_EQ(ck.state.initial_lr, st.initial_lr);
    EXPECT_EQ(ck.state.best_val, st.best_val);
    EXPECT_EQ(ck.state.plateau_counter, st.plateau_counter);
    EXPECT_TRUE(ck.state.rng == st.rng);
    ASSERT_EQ(ck.state.m.size(), st.m.size());
    for (std::size_t i = 0; i < st.m.size(); ++i) {
        EXPECT_TRUE(std::equal(st.m[i].data().begin(), st.m[i].data().end(), ck.state.m[i].data().begin()));
        EXPECT_TRUE(std::equal(st.v[i].data().begin(), st.v[i].data().end(), ck.state.v[i].data().begin()));
    }
    save_checkpoint(ck.model, ck.state, p2);
    EXPECT_EQ(slurp(p1), slurp(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST(Checkpoint, FreshStateHasNoMoments) {
    Rng rng(3);
    const auto model = RTransformer<float>::create(tiny_config(), rng);
    const auto st = TrainState<float>::start(sgd(1.0), 0);
    const auto p = temp_path("fresh.bin");
    save_checkpoint(model, st, p);
    const auto ck = load_checkpoint<float>(p);
    EXPECT_TRUE(ck.state.m.empty());
    EXPECT_TRUE(std::isinf(ck.state.best_val));
    fs::remove(p);
}

TEST(Checkpoint, F32LayoutMatchesFormat) {
    Rng rng(3);
    auto cfg = tiny_config();
    const auto model = RTransformer<float>::create(cfg, rng);
    const auto p = temp_path("layout.bin");
    save_checkpoint(model, TrainState<float>::start(sgd(1.0), 0), p);
    const auto bytes = slurp(p);
    EXPECT_EQ(bytes.substr(0, 8), "RSEQCKPT");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 8, 4);
    EXPECT_EQ(version, 1u);
    std::uint64_t hlen;
    std::memcpy(&hlen, bytes.data() + 12, 8);
    std::size_t pos = 20 + hlen;
    std::uint64_t count;
    std::memcpy(&count, bytes.data() + pos, 8);
    pos += 8;
    EXPECT_EQ(count, model.named_parameters().size());
    // First tensor: the embedding table, [10 x 16] f32.
    std::uint32_t nlen;
    std::memcpy(&nlen, bytes.data() + pos, 4);
    EXPECT_EQ(bytes.substr(pos + 4, nlen), "embed");
    pos += 4 + nlen;
    std::uint32_t rank;
    std::memcpy(&rank, bytes.data() + pos, 4);
    EXPECT_EQ(rank, 2u);
    std::uint64_t e0, e1;
    std::memcpy(&e0, bytes.data() + pos + 4, 8);
    std::memcpy(&e1, bytes.data() + pos + 12, 8);
    EXPECT_EQ(e0, 10u);
    EXPECT_EQ(e1, 16u);
    float first;
    std::memcpy(&first, bytes.data() + pos + 20, 4);
    EXPECT_EQ(first, model.named_parameters().front().second.data()[0]);
    std::size_t expected_size = 28 + hlen;
    for (const auto& [name, t] : model.named_parameters()) expected_size += 8 + name.size() + 8 * t.rank() + 4 * t.size();
    EXPECT_EQ(bytes.size(), expected_size);
    fs::remove(p);
}

TEST(Checkpoint, TruncationIsDetectedEverywhere) {
    Rng rng(3);
    auto cfg = tiny_config();
    cfg.num_layers = 1;
    const auto model = RTransformer<float>::create(cfg, rng);
    const auto p = temp_path("full.bin"), q = temp_path("cut.bin");
    save_checkpoint(model, TrainState<float>::start(sgd(1.0), 0), p);
    const auto bytes = slurp(p);
    for (std::size_t cut : {std::size_t{4}, std::size_t{10}, std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
        spit(q, bytes.substr(0, cut));
        EXPECT_THROW(load_checkpoint<float>(q), CheckpointTruncatedError) << "cut at " << cut;
    }
    fs::remove(p);
    fs::remove(q);
}

TEST(Checkpoint, VersionMismatchIsDistinct) {
    Rng rng(3);
    const auto model = RTransformer<float>::create(tiny_config(), rng);
    const auto p = temp_path("v.bin");
    save_checkpoint(model, TrainState<float>::start(sgd(1.0), 0), p);
    auto bytes = slurp(p);
    bytes[8] = 2;
    spit(p, bytes);
    EXPECT_THROW(load_checkpoint<float>(p), CheckpointVersionError);
    fs::remove(p);
}

TEST(Checkpoint, ShapeDisagreementIsDistinct) {
    Rng rng(3);
    const auto model = RTransformer<float>::create(tiny_config(), rng);
    const auto p = temp_path("s.bin");
    save_checkpoint(model, TrainState<float>::start(sgd(1.0), 0), p);
    auto bytes = slurp(p);
    const auto at = bytes.find("model.d_ff = 32");
    ASSERT_NE(at, std::string::npos);
    bytes.replace(at, 15, "model.d_ff = 48");
    spit(p, bytes);
    try {
        load_checkpoint<float>(p);
        FAIL() << "expected CheckpointShapeError";
    } catch (const CheckpointShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("ffn.W1"), std::string::npos) << e.what();
    }
    fs::remove(p);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
    const auto cfg = tiny_config(0.1);
    const auto ocfg = adam(2e-3);
    Rng data_rng(8);
    std::vector<Batch> batches;
    for (int i = 0; i < 10; ++i) batches.push_back(toy_batch(2, 6, 10, data_rng));

    Rng init(4);
    const auto straight = RTransformer<float>::create(cfg, init);
    auto st = TrainState<float>::start(ocfg, 9);
    std::vector<double> want;
    for (const auto& b : batches) want.push_back(train_step(straight, b, st, ocfg));

    Rng init2(4);
    const auto first = RTransformer<float>::create(cfg, init2);
    auto st2 = TrainState<float>::start(ocfg, 9);
    std::vector<double> got;
    for (int i = 0; i < 5; ++i) got.push_back(train_step(first, batches[i], st2, ocfg));
    const auto p = temp_path("resume.bin");
    save_checkpoint(first, st2, p);
    auto ck = load_checkpoint<float>(p);
    for (int i = 5; i < 10; ++i) got.push_back(train_step(ck.model, batches[i], ck.state, ocfg));
    for (int i = 0; i < 10; ++i) EXPECT_LT(std::abs(got[i] - want[i]), 1e-6) << "step " << i;
    EXPECT_EQ(snapshot(ck.model), snapshot(straight));
    fs::remove(p);
}
