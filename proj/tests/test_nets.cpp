#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ritw/adam.hpp"
#include "ritw/checkpoint.hpp"
#include "ritw/error.hpp"
#include "ritw/grad_check.hpp"
#include "ritw/nets.hpp"
#include "ritw/rng.hpp"

using namespace ritw;

namespace {

Array random_array(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Array a = Array::zeros(rows, cols);
  for (double& v : a.data()) v = scale * rng.normal();
  return a;
}

}  // namespace

TEST_CASE("lstm: zero parameters give zero hidden states") {
  LstmDims dims{3, 4, 1, false};
  ParameterStore store;
  Rng rng(1, "init");
  init_lstm_params(store, "enc", dims, rng);
  for (auto& [name, arr] : store.all()) {
    (void)name;
    for (double& v : arr.data()) v = 0.0;
  }
  Tape t(&store);
  Rng data_rng(2, "data");
  std::vector<Tape::Var> steps;
  for (int s = 0; s < 5; ++s) steps.push_back(t.input(random_array(2, 3, data_rng)));
  auto hs = lstm_encode(t, "enc", dims, steps);
  CHECK(hs.size() == 5);
  for (const auto& h : hs)
    for (double v : t.value(h).data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("lstm: single step matches a hand-unrolled cell") {
  LstmDims dims{2, 1, 1, false};
  ParameterStore store;
  Rng rng(3, "init");
  init_lstm_params(store, "enc", dims, rng);
  auto set = [&](const std::string& name, double v) { store.get(name)[0] = v; };
  store.get("enc.l0.fwd.w_x_i") = Array::matrix(2, 1, {0.3, -0.2});
  store.get("enc.l0.fwd.w_x_f") = Array::matrix(2, 1, {0.1, 0.4});
  store.get("enc.l0.fwd.w_x_o") = Array::matrix(2, 1, {-0.5, 0.2});
  store.get("enc.l0.fwd.w_x_c") = Array::matrix(2, 1, {0.7, -0.1});
  set("enc.l0.fwd.w_h_i", 0.11);
  set("enc.l0.fwd.w_h_f", -0.07);
  set("enc.l0.fwd.w_h_o", 0.05);
  set("enc.l0.fwd.w_h_c", 0.21);
  set("enc.l0.fwd.b_i", 0.02);
  set("enc.l0.fwd.b_f", 1.0);
  set("enc.l0.fwd.b_o", -0.03);
  set("enc.l0.fwd.b_c", 0.04);

  double x0 = 0.6, x1 = -0.9;
  Tape t(&store);
  auto hs = lstm_encode(t, "enc", dims, {t.input(Array::matrix(1, 2, {x0, x1}))});

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double zi = 0.3 * x0 - 0.2 * x1 + 0.02;  // h starts at zero
  double zf = 0.1 * x0 + 0.4 * x1 + 1.0;
  double zo = -0.5 * x0 + 0.2 * x1 - 0.03;
  double zc = 0.7 * x0 - 0.1 * x1 + 0.04;
  double c = sig(zf) * 0.0 + sig(zi) * std::tanh(zc);
  double expected = sig(zo) * std::tanh(c);
  CHECK(t.value(hs[0]).at(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("lstm: output length matches the sequence and errors are raised") {
  LstmDims dims{3, 2, 2, false};
  ParameterStore store;
  Rng rng(5, "init");
  init_lstm_params(store, "enc", dims, rng);
  Tape t(&store);
  Rng data_rng(6, "data");
  for (int len : {1, 4, 7}) {
    std::vector<Tape::Var> steps;
    for (int s = 0; s < len; ++s) steps.push_back(t.input(random_array(2, 3, data_rng)));
    CHECK(lstm_encode(t, "enc", dims, steps).size() == static_cast<std::size_t>(len));
  }
  CHECK_THROWS_AS(lstm_encode(t, "enc", dims, {}), Error);
  std::vector<Tape::Var> bad = {t.input(random_array(2, 4, data_rng))};
  CHECK_THROWS_AS(lstm_encode(t, "enc", dims, bad), Error);
}

TEST_CASE("lstm: gradient check over random parameters and sequences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    LstmDims dims{2, 3, 1, false};
    ParameterStore store;
    Rng rng(seed, "lstm-gc");
    init_lstm_params(store, "enc", dims, rng);
    Rng data_rng(seed, "lstm-gc-data");
    std::vector<Array> inputs;
    for (int s = 0; s < 3; ++s) inputs.push_back(random_array(2, 2, data_rng));
    Array targets = random_array(2, 3, data_rng, 0.5);
    auto build = [&](Tape& t) {
      std::vector<Tape::Var> steps;
      for (const auto& x : inputs) steps.push_back(t.input(x));
      auto hs = lstm_encode(t, "enc", dims, steps);
      return t.weighted_squared_error(hs.back(), targets, Array::full(2, 3, 1.0));
    };
    CHECK(grad_check(build, store) < 1e-4);
  }
}

TEST_CASE("lstm: bce loss through the cell passes the gradient check") {
  LstmDims dims{3, 2, 1, false};
  ParameterStore store;
  Rng rng(17, "bce-gc");
  init_lstm_params(store, "enc", dims, rng);
  init_head_params(store, "head", HeadDims{2, 0, 0, 1});
  store.get("head.w_h") = random_array(2, 1, rng, 0.7);
  Rng data_rng(18, "bce-gc-data");
  Array x = random_array(4, 3, data_rng);
  Array y = Array::zeros(4, 1);
  for (std::size_t i = 0; i < 4; ++i) y[i] = data_rng.uniform() < 0.5 ? 1.0 : 0.0;
  auto build = [&](Tape& t) {
    auto hs = lstm_encode(t, "enc", dims, {t.input(x)});
    Tape::Var z = head_logits(t, "head", HeadDims{2, 0, 0, 1}, hs.back(), Tape::Var{});
    return t.weighted_bce_logits(z, y, Array::full(4, 1, 1.0));
  };
  CHECK(grad_check(build, store) < 1e-4);
}

TEST_CASE("lstm: bidirectional palindrome symmetry with tied directions") {
  LstmDims dims{2, 3, 1, true};
  ParameterStore store;
  Rng rng(9, "bi");
  init_lstm_params(store, "enc", dims, rng);
  for (const char* kind : {"w_x", "w_h", "b"})
    for (const char* gate : {"i", "f", "o", "c"}) {
      std::string fwd = std::string("enc.l0.fwd.") + kind + "_" + gate;
      std::string bwd = std::string("enc.l0.bwd.") + kind + "_" + gate;
      store.get(bwd) = store.get(fwd);
    }

  Rng data_rng(10, "bi-data");
  Array first = random_array(1, 2, data_rng);
  Array middle = random_array(1, 2, data_rng);
  Tape t(&store);
  std::vector<Tape::Var> steps = {t.input(first), t.input(middle), t.input(first)};
  auto hs = lstm_encode(t, "enc", dims, steps);
  int H = 3;
  for (int s = 0; s < 3; ++s) {
    const Array& a = t.value(hs[s]);
    const Array& b = t.value(hs[2 - s]);
    for (int j = 0; j < H; ++j)
      CHECK(a.at(0, j) == doctest::Approx(b.at(0, H + j)).epsilon(1e-12));
  }
}

TEST_CASE("init: deterministic given seed, forget gate bias at one") {
  LstmDims dims{4, 5, 2, false};
  ParameterStore a, b, c;
  Rng ra(42, "init"), rb(42, "init"), rc(43, "init");
  init_lstm_params(a, "enc", dims, ra);
  init_lstm_params(b, "enc", dims, rb);
  init_lstm_params(c, "enc", dims, rc);
  bool all_equal = true, any_diff_seed = false;
  for (const auto& [name, arr] : a.all()) {
    const Array& other = b.get(name);
    for (std::size_t i = 0; i < arr.numel(); ++i) {
      all_equal &= arr[i] == other[i];
      any_diff_seed |= arr[i] != c.get(name)[i];
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
  for (double v : a.get("enc.l0.fwd.b_f").data()) CHECK(v == 1.0);
  for (double v : a.get("enc.l1.fwd.b_f").data()) CHECK(v == 1.0);
  double bound = 1.0 / std::sqrt(5.0);
  for (double v : a.get("enc.l0.fwd.w_x_i").data()) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("propensity head: zero params, hand value, multi-treatment softmax") {
  HeadDims dims{3, 1, 0, 1};
  ParameterStore store;
  init_head_params(store, "ip", dims);
  Tape t(&store);
  Tape::Var h = t.input(Array::zeros(1, 3));
  Tape::Var b = t.input(Array::matrix(1, 1, {2.0}));
  CHECK(t.value(propensity_head(t, "ip", dims, h, b)).at(0, 0) == doctest::Approx(0.5));

  store.get("ip.w_b")[0] = 1.0;  // w_h stays zero, c stays zero
  Tape t2(&store);
  Tape::Var h2 = t2.input(Array::zeros(1, 3));
  Tape::Var b2 = t2.input(Array::matrix(1, 1, {2.0}));
  CHECK(t2.value(propensity_head(t2, "ip", dims, h2, b2)).at(0, 0) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-10));

  HeadDims multi{3, 1, 0, 3};  // k = 2 treatments: softmax over 3 classes
  ParameterStore store3;
  init_head_params(store3, "ip3", multi);
  Tape t3(&store3);
  const Array& p = t3.value(propensity_head(t3, "ip3", multi,
                                            t3.input(Array::zeros(1, 3)),
                                            t3.input(Array::matrix(1, 1, {0.5}))));
  for (int c = 0; c < 3; ++c) CHECK(p.at(0, c) == doctest::Approx(1.0 / 3.0));

  CHECK_THROWS_AS(propensity_head(t3, "ip3", multi, t3.input(Array::zeros(1, 3)),
                                  t3.input(Array::matrix(1, 1, {0.5})), Link::kIdentity),
                  Error);
}

TEST_CASE("outcome head: zero params per link, six tasks, mixed links") {
  HeadDims dims{4, 2, 1, 6};
  ParameterStore store;
  init_head_params(store, "y", dims);
  Tape t(&store);
  Tape::Var g = t.input(Array::zeros(2, 4));
  Tape::Var b = t.input(Array::zeros(2, 2));
  Tape::Var a = t.input(Array::zeros(2, 1));

  const Array& logistic = t.value(outcome_head(t, "y", dims, g, b, a,
                                               std::vector<Link>(6, Link::kLogistic)));
  CHECK(logistic.cols() == 6);
  for (double v : logistic.data()) CHECK(v == doctest::Approx(0.5));

  const Array& identity = t.value(outcome_head(t, "y", dims, g, b, a,
                                               std::vector<Link>(6, Link::kIdentity)));
  for (double v : identity.data()) CHECK(v == doctest::Approx(0.0));

  std::vector<Link> mixed = {Link::kLogistic, Link::kIdentity, Link::kLogistic,
                             Link::kIdentity, Link::kLogistic, Link::kIdentity};
  const Array& m = t.value(outcome_head(t, "y", dims, g, b, a, mixed));
  for (std::size_t c = 0; c < 6; ++c)
    CHECK(m.at(0, c) == doctest::Approx(c % 2 == 0 ? 0.5 : 0.0));
}

TEST_CASE("smoothing shrinks trained head weights on separable data") {
  // Linearly separable toy data: the sign of b decides the label.
  auto train = [&](double l2) {
    HeadDims dims{1, 1, 0, 1};
    ParameterStore store;
    init_head_params(store, "ip", dims);
    AdamState adam;
    adam.learning_rate = 0.05;
    Array b = Array::matrix(8, 1, {1, 1, 1, 1, -1, -1, -1, -1});
    Array y = Array::matrix(8, 1, {1, 1, 1, 1, 0, 0, 0, 0});
    Array w = Array::full(8, 1, 1.0 / 8.0);
    for (int step = 0; step < 3000; ++step) {
      Tape t(&store);
      Tape::Var z = head_logits(t, "ip", dims, t.input(Array::zeros(8, 1)), t.input(b));
      Tape::Var loss = t.weighted_bce_logits(z, y, w);
      if (l2 > 0.0)
        loss = t.add(loss, t.scale_shift(head_weight_l2(t, "ip", dims), l2, 0.0));
      GradMap g = t.backward(loss);
      adam_step(store, g, adam);
    }
    double max_w = 0.0;
    for (double v : store.get("ip.w_b").data()) max_w = std::max(max_w, std::fabs(v));
    for (double v : store.get("ip.w_h").data()) max_w = std::max(max_w, std::fabs(v));
    return max_w;
  };
  double raw = train(0.0);
  double smoothed = train(1.0);
  CHECK(smoothed < raw);
}

TEST_CASE("checkpoint: json round trip is exact") {
  ModelCheckpoint ckpt;
  ckpt.model_kind = "propensity";
  ckpt.meta = {{"d", 3}, {"T", 2}};
  Rng rng(77, "ckpt");
  ckpt.params.create("w", random_array(2, 3, rng));
  ckpt.params.create("b", random_array(1, 3, rng));

  std::string path = (std::filesystem::temp_directory_path() / "ritw_ckpt_test.json").string();
  save_checkpoint(ckpt, path);
  ModelCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.model_kind == "propensity");
  CHECK(loaded.meta.at("d") == 3);
  for (const auto& [name, arr] : ckpt.params.all()) {
    const Array& other = loaded.params.get(name);
    REQUIRE(arr.shape() == other.shape());
    for (std::size_t i = 0; i < arr.numel(); ++i) CHECK(arr[i] == other[i]);
  }
  std::filesystem::remove(path);
}
