#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include <kws/nn.hpp>

#include "helpers.hpp"

using namespace kws;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

// Checks every parameter gradient of `loss_fn` (which must rebuild the graph
// from scratch and return the scalar loss node) against central differences.
void check_grads(const std::vector<Node>& params,
                 const std::function<Node(Tape&)>& loss_fn, double tol = 1e-4) {
    // analytic gradients
    for (const auto& p : params) p->grad.fill(0.0);
    Tape tape;
    Node loss = loss_fn(tape);
    tape.backward(loss);

    auto eval = [&]() {
        Tape t;
        return loss_fn(t)->val.data[0];
    };
    for (const auto& p : params)
        for (std::size_t i = 0; i < p->val.size(); ++i) {
            const double fd = oracle::finite_diff(eval, p->val.data[i]);
            const double g = p->grad.data[i];
            // absolute fallback absorbs finite-difference noise on dead paths
            const bool ok = std::abs(g - fd) < 1e-6 || oracle::rel_error(g, fd) < tol;
            REQUIRE(ok);
        }
}

}  // namespace

TEST_CASE("op_mul: d(xy)/dx = y") {
    Node x = make_node(Tensor({1}, {3.0}));
    Node y = make_node(Tensor({1}, {-2.5}));
    Tape tape;
    Node out = op_mul(tape, x, y);
    REQUIRE(out->val.data[0] == -7.5);
    tape.backward(out);
    REQUIRE(x->grad.data[0] == -2.5);
    REQUIRE(y->grad.data[0] == 3.0);
}

TEST_CASE("tape: backward before forward and double backward are errors") {
    Tape tape;
    Node x = make_node(Tensor({1}, {1.0}));
    REQUIRE_THROWS_AS(tape.backward(x), Error);
    Node y = op_relu(tape, x);
    Node s = op_mul(tape, y, y);
    tape.backward(s);
    REQUIRE_THROWS_AS(tape.backward(s), Error);
}

TEST_CASE("gradient check: dense + relu") {
    Rng rng(100);
    Node x = make_node(random_tensor({7}, rng));
    Node w = make_node(random_tensor({4, 7}, rng));
    Node b = make_node(random_tensor({4}, rng));
    Node w2 = make_node(random_tensor({1, 4}, rng));
    Node b2 = make_node(random_tensor({1}, rng));
    check_grads({x, w, b, w2, b2}, [&](Tape& t) {
        return op_dense(t, op_relu(t, op_dense(t, x, w, b)), w2, b2);
    });
}

TEST_CASE("gradient check: separable conv (strides 1 and 2)") {
    Rng rng(101);
    for (int stride : {1, 2}) {
        Node x = make_node(random_tensor({5, 4, 2}, rng));
        Node dw = make_node(random_tensor({3, 3, 2}, rng));
        Node pw = make_node(random_tensor({2, 3}, rng));
        Node w = make_node(random_tensor({1, (5 / stride + (5 % stride ? 1 : 0)) *
                                                 (4 / stride + (4 % stride ? 1 : 0)) * 3},
                                         rng));
        Node b = make_node(random_tensor({1}, rng));
        check_grads({x, dw, pw, w, b}, [&](Tape& t) {
            return op_dense(t, op_flatten(t, op_separable_conv2d(t, x, dw, pw, stride)), w, b);
        });
    }
}

TEST_CASE("gradient check: pointwise projection conv") {
    Rng rng(102);
    Node x = make_node(random_tensor({5, 4, 2}, rng));
    Node pw = make_node(random_tensor({2, 3}, rng));
    Node w = make_node(random_tensor({1, 3 * 2 * 3}, rng));
    Node b = make_node(random_tensor({1}, rng));
    check_grads({x, pw, w, b}, [&](Tape& t) {
        return op_dense(t, op_flatten(t, op_pointwise_conv(t, x, pw, 2)), w, b);
    });
}

TEST_CASE("gradient check: layer norm") {
    Rng rng(103);
    Node x = make_node(random_tensor({3, 2, 4}, rng));
    Node gain = make_node(random_tensor({4}, rng));
    Node bias = make_node(random_tensor({4}, rng));
    Node w = make_node(random_tensor({1, 24}, rng));
    Node b = make_node(random_tensor({1}, rng));
    check_grads({x, gain, bias, w, b}, [&](Tape& t) {
        return op_dense(t, op_flatten(t, op_layer_norm(t, x, gain, bias)), w, b);
    });
}

TEST_CASE("gradient check: siamese distance + BCE") {
    Rng rng(104);
    Node left = make_node(random_tensor({6}, rng));
    Node right = make_node(random_tensor({6}, rng));
    check_grads({left, right}, [&](Tape& t) {
        return op_bce(t, op_siamese_distance(t, left, right), 1.0);
    });
    check_grads({left, right}, [&](Tape& t) {
        return op_bce(t, op_siamese_distance(t, left, right), 0.0);
    });
}

TEST_CASE("gradient check: softmax cross-entropy") {
    Rng rng(105);
    Node x = make_node(random_tensor({5}, rng));
    Node w = make_node(random_tensor({4, 5}, rng));
    Node b = make_node(random_tensor({4}, rng));
    for (int target = 0; target < 4; ++target)
        check_grads({x, w, b}, [&](Tape& t) {
            return op_softmax_cross_entropy(t, op_dense(t, x, w, b), target);
        });
}

TEST_CASE("separable conv matches the nested-loop oracle") {
    Rng rng(106);
    for (int stride : {1, 2, 3}) {
        Node x = make_node(random_tensor({9, 7, 3}, rng));
        Node dw = make_node(random_tensor({3, 3, 3}, rng));
        Node pw = make_node(random_tensor({3, 5}, rng));
        Tape tape;
        Node out = op_separable_conv2d(tape, x, dw, pw, stride);
        Tensor expect = oracle::separable_conv_naive(x->val, dw->val, pw->val, stride);
        REQUIRE(out->val.shape == expect.shape);
        for (std::size_t i = 0; i < expect.size(); ++i)
            REQUIRE(std::abs(out->val.data[i] - expect.data[i]) < 1e-10);
    }
}

TEST_CASE("separable conv: identity and zero kernels") {
    Rng rng(107);
    Node x = make_node(random_tensor({4, 4, 2}, rng));

    // depthwise delta kernel + identity pointwise reproduces the input
    Tensor dw({3, 3, 2});
    dw.data[(1 * 3 + 1) * 2 + 0] = 1.0;
    dw.data[(1 * 3 + 1) * 2 + 1] = 1.0;
    Tensor pw({2, 2});
    pw.data[0 * 2 + 0] = 1.0;
    pw.data[1 * 2 + 1] = 1.0;
    Tape tape;
    Node out = op_separable_conv2d(tape, x, make_node(dw), make_node(pw), 1);
    for (std::size_t i = 0; i < x->val.size(); ++i)
        REQUIRE(out->val.data[i] == Catch::Approx(x->val.data[i]));

    // zero kernels give a zero map
    Tape tape2;
    Node zero = op_separable_conv2d(tape2, x, make_node(Tensor({3, 3, 2})),
                                    make_node(Tensor({2, 2})), 1);
    for (double v : zero->val.data) REQUIRE(v == 0.0);
}

TEST_CASE("layer norm: constant rows map to the bias") {
    Node x = make_node(Tensor({2, 3}, {5.0, 5.0, 5.0, -1.0, -1.0, -1.0}));
    Node gain = make_node(Tensor({3}, {2.0, 2.0, 2.0}));
    Node bias = make_node(Tensor({3}, {0.5, -0.25, 1.0}));
    Tape tape;
    Node out = op_layer_norm(tape, x, gain, bias);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            REQUIRE(out->val.data[r * 3 + c] == Catch::Approx(bias->val.data[c]).margin(1e-9));
}

TEST_CASE("layer norm: unit gain/zero bias output has mean 0 and variance 1") {
    Rng rng(108);
    Node x = make_node(random_tensor({4, 8}, rng, 3.0));
    Node gain = make_node(Tensor({8}));
    gain->val.fill(1.0);
    Node bias = make_node(Tensor({8}));
    Tape tape;
    Node out = op_layer_norm(tape, x, gain, bias);
    for (int r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 8; ++c) mean += out->val.data[r * 8 + c];
        mean /= 8;
        for (int c = 0; c < 8; ++c) {
            const double d = out->val.data[r * 8 + c] - mean;
            var += d * d;
        }
        var /= 8;
        REQUIRE(std::abs(mean) < 1e-9);
        REQUIRE(var == Catch::Approx(1.0).margin(1e-4));  // eps shrinks it slightly
    }
}

TEST_CASE("layer norm: invariant to a per-row shift") {
    Rng rng(109);
    Node x = make_node(random_tensor({2, 6}, rng));
    Node shifted = make_node(x->val);
    for (std::size_t i = 0; i < 6; ++i) shifted->val.data[i] += 7.5;        // row 0
    for (std::size_t i = 6; i < 12; ++i) shifted->val.data[i] -= 3.25;      // row 1
    Node gain = make_node(Tensor({6}));
    gain->val.fill(1.3);
    Node bias = make_node(Tensor({6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
    Tape ta, tb;
    Node a = op_layer_norm(ta, x, gain, bias);
    Node b = op_layer_norm(tb, shifted, gain, bias);
    for (std::size_t i = 0; i < a->val.size(); ++i)
        REQUIRE(a->val.data[i] == Catch::Approx(b->val.data[i]).margin(1e-9));
}

TEST_CASE("siamese distance: D(a,a)=1, symmetry, exact e^-3, monotonicity") {
    Rng rng(110);
    Node a = make_node(random_tensor({5}, rng));
    Node b = make_node(random_tensor({5}, rng));
    Tape t1, t2, t3;
    REQUIRE(op_siamese_distance(t1, a, a)->val.data[0] == 1.0);
    REQUIRE(op_siamese_distance(t2, a, b)->val.data[0] ==
            Catch::Approx(op_siamese_distance(t3, b, a)->val.data[0]).margin(0.0));

    // total L1 gap of 3 gives exactly e^-3
    Node u = make_node(Tensor({3}, {0.0, 0.0, 0.0}));
    Node v = make_node(Tensor({3}, {1.0, -1.5, 0.5}));
    Tape t4;
    REQUIRE(std::abs(op_siamese_distance(t4, u, v)->val.data[0] - std::exp(-3.0)) < 1e-9);
    REQUIRE(std::abs(std::exp(-3.0) - 0.049787068367863944) < 1e-12);

    // widening any coordinate gap strictly lowers D
    double prev = 1.0;
    for (double gap : {0.1, 0.5, 1.0, 2.0}) {
        Node w = make_node(Tensor({3}, {gap, -1.5, 0.5}));
        Tape t;
        const double d = op_siamese_distance(t, u, w)->val.data[0];
        REQUIRE(d < prev);
        prev = d;
    }
}

TEST_CASE("BCE: ln 2 at D=0.5, vanishing at the target, finite when clamped") {
    Tape t1;
    Node half = make_node(Tensor({1}, {0.5}));
    REQUIRE(op_bce(t1, half, 1.0)->val.data[0] == Catch::Approx(std::log(2.0)));
    Tape t2;
    Node near1 = make_node(Tensor({1}, {1.0 - 1e-9}));
    REQUIRE(op_bce(t2, near1, 1.0)->val.data[0] < 1e-6);
    // out-of-range similarity is clamped: loss stays finite, gradient zero
    Tape t3;
    Node wild = make_node(Tensor({1}, {1.5}));
    Node loss = op_bce(t3, wild, 0.0);
    REQUIRE(std::isfinite(loss->val.data[0]));
    t3.backward(loss);
    REQUIRE(wild->grad.data[0] == 0.0);
}

TEST_CASE("contrastive targets honor the label convention") {
    REQUIRE(contrastive_target(true, LabelConvention::SimilarIs1) == 1.0);
    REQUIRE(contrastive_target(false, LabelConvention::SimilarIs1) == 0.0);
    REQUIRE(contrastive_target(true, LabelConvention::PaperStated) == 0.0);
    REQUIRE(contrastive_target(false, LabelConvention::PaperStated) == 1.0);
}

TEST_CASE("softmax cross-entropy: uniform logits give ln C, margins drive loss to 0") {
    Tape t1;
    Node uniform = make_node(Tensor({4}, {0.3, 0.3, 0.3, 0.3}));
    REQUIRE(op_softmax_cross_entropy(t1, uniform, 2)->val.data[0] ==
            Catch::Approx(std::log(4.0)));
    Tape t2;
    Node confident = make_node(Tensor({4}, {30.0, 0.0, 0.0, 0.0}));
    REQUIRE(op_softmax_cross_entropy(t2, confident, 0)->val.data[0] < 1e-9);
    // extreme logits stay finite
    Tape t3;
    Node extreme = make_node(Tensor({2}, {1000.0, -1000.0}));
    REQUIRE(std::isfinite(op_softmax_cross_entropy(t3, extreme, 1)->val.data[0]));
}

TEST_CASE("full tiny trunk: siamese BCE gradients match finite differences") {
    TrunkConfig cfg = TrunkConfig::tiny(12, 10);
    Model model(cfg, 7);
    Rng rng(111);
    Node xa = make_node(random_tensor({12, 10, 1}, rng));
    Node xb = make_node(random_tensor({12, 10, 1}, rng));
    std::vector<Node> params;
    for (const auto& p : model.params()) params.push_back(p.node);
    params.push_back(xa);
    params.push_back(xb);
    check_grads(params, [&](Tape& t) {
        Node d = op_siamese_distance(t, model.trunk_forward(t, xa), model.trunk_forward(t, xb));
        return contrastive_bce(t, d, true);
    });
}

TEST_CASE("full tiny trunk with head: softmax gradients match finite differences") {
    TrunkConfig cfg = TrunkConfig::tiny(12, 10);
    Model model(cfg, 8);
    model.attach_head(3, 9);
    Rng rng(112);
    Node x = make_node(random_tensor({12, 10, 1}, rng));
    std::vector<Node> params;
    for (const auto& p : model.params()) params.push_back(p.node);
    params.push_back(x);
    check_grads(params, [&](Tape& t) {
        return op_softmax_cross_entropy(t, model.head_forward(t, model.trunk_forward(t, x)), 1);
    });
}

TEST_CASE("residual pairs are the identity when conv weights are zero") {
    TrunkConfig cfg;
    cfg.channels = {1, 1, 1, 1, 1, 1};
    cfg.strides = {1, 1, 1, 1, 1, 1};
    cfg.dense_hidden = 5;
    cfg.embedding_dim = 4;
    cfg.input_frames = 6;
    cfg.input_coeffs = 5;
    Model model(cfg, 13);
    REQUIRE(!model.has_param("conv.proj0.w"));  // shape-preserving: no projections
    for (int b = 0; b < 6; ++b) {
        model.param("conv.block" + std::to_string(b) + ".dw")->val.fill(0.0);
        model.param("conv.block" + std::to_string(b) + ".pw")->val.fill(0.0);
        model.param("conv.block" + std::to_string(b) + ".ln_bias")->val.fill(0.0);
    }
    Rng rng(113);
    Node x = make_node(random_tensor({6, 5, 1}, rng));
    Tape tape;
    Node out = model.trunk_forward(tape, x);

    // expected: dense stack applied straight to the flattened input
    Tape ref;
    Node flat = op_flatten(ref, x);
    Node hidden = op_relu(ref, op_dense(ref, flat, model.param("dense.hidden.w"),
                                        model.param("dense.hidden.b")));
    Node expect = op_dense(ref, hidden, model.param("dense.embed.w"),
                           model.param("dense.embed.b"));
    REQUIRE(out->val.shape == expect->val.shape);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        REQUIRE(out->val.data[i] == Catch::Approx(expect->val.data[i]).margin(1e-12));
}

TEST_CASE("default trunk stays under 500k parameters and embeds to 128") {
    TrunkConfig cfg;
    Model model(cfg, 1);
    REQUIRE(model.param_count() < 500000);
    Rng rng(114);
    Node x = make_node(random_tensor({98, 40, 1}, rng, 0.5));
    Tape tape;
    Node out = model.trunk_forward(tape, x);
    REQUIRE(out->val.shape == std::vector<int>{128});
    REQUIRE(out->val.all_finite());
}

TEST_CASE("checkpoint round-trips the config, head, and weights") {
    TrunkConfig cfg = TrunkConfig::tiny(12, 10);
    Model model(cfg, 21);
    model.attach_head(4, 22);
    const auto path = (std::filesystem::temp_directory_path() / "kws_model.ckpt").string();
    save_checkpoint(model, path, {{"note", "test"}});
    Model back = load_checkpoint(path);
    REQUIRE(back.config() == cfg);
    REQUIRE(back.num_classes() == 4);
    REQUIRE(back.params().size() == model.params().size());
    for (const auto& p : model.params()) {
        Node q = back.param(p.name);
        REQUIRE(q->val.shape == p.node->val.shape);
        for (std::size_t i = 0; i < p.node->val.size(); ++i)
            REQUIRE(q->val.data[i] ==
                    Catch::Approx(static_cast<double>(static_cast<float>(p.node->val.data[i])))
                        .margin(0.0));
    }
    REQUIRE(std::filesystem::exists(path + ".json"));
    REQUIRE_THROWS_AS(load_checkpoint(path + ".missing"), Error);
}

TEST_CASE("clone decouples parameter storage") {
    Model model(TrunkConfig::tiny(), 31);
    Model copy = model.clone();
    copy.param("dense.embed.b")->val.data[0] += 1.0;
    REQUIRE(model.param("dense.embed.b")->val.data[0] !=
            copy.param("dense.embed.b")->val.data[0]);
}
