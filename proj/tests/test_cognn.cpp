#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "cognn/cognn.hpp"
#include "support/graphs.hpp"

using namespace cognn;
using namespace cognn::testing;

namespace {

using DirectedSet = std::set<std::pair<std::size_t, std::size_t>>;

DirectedSet kept(const DirectedEdgeSet& e) {
  auto k = e.kept_edges();
  return {k.begin(), k.end()};
}

void set_values(Tensor& t, const std::vector<double>& v) {
  auto w = t.mutable_values();
  REQUIRE(w.size() == v.size());
  std::copy(v.begin(), v.end(), w.begin());
}

void set_identity(Tensor& t) {
  auto w = t.mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < std::min(t.rows(), t.cols()); ++i) w[i * t.cols() + i] = 1.0;
}

void set_zero(Tensor& t) {
  auto w = t.mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
}

ModelConfig small_config(Aggregation action_agg, Aggregation env_agg) {
  ModelConfig c;
  c.in_dim = 3;
  c.out_dim = 2;
  c.env_layers = 2;
  c.env_dim = 4;
  c.env_agg = env_agg;
  c.action_layers = 1;
  c.action_dim = 3;
  c.action_agg = action_agg;
  return c;
}

std::vector<double> model_output(const CoGnnModel& m, const GraphBatch& b, GumbelSource& noise,
                                 const ForwardOptions& opts = {}) {
  return to_vector(cognn_model_forward(m, b, noise, opts).node_states);
}

}  // namespace

TEST_CASE("action logits", "[cognn]") {
  Rng rng(1);
  ModelConfig cfg = small_config(Aggregation::sum, Aggregation::mean);
  CoGnnModel m = CoGnnModel::init(cfg, rng);
  Graph g = random_graph(8, 0.4, 4, rng);

  SECTION("zero-weight head gives uniform probabilities") {
    set_zero(m.action.head.weight);
    set_zero(m.action.head.bias);
    Tensor p = softmax(action_logits(m.action, g, g.features()).logits, 1);
    for (double v : p.values()) CHECK(v == 0.25);
  }

  SECTION("probabilities are valid and finite under large inputs") {
    Tensor big = Tensor::filled({8, 4}, 1e3);
    Tensor p = softmax(action_logits(m.action, g, big).logits, 1);
    for (std::size_t v = 0; v < 8; ++v) {
      double s = 0;
      for (std::size_t a = 0; a < 4; ++a) {
        CHECK(std::isfinite(p.at(v, a)));
        CHECK(p.at(v, a) >= 0.0);
        s += p.at(v, a);
      }
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
  }

  SECTION("isomorphic neighborhoods give identical probabilities") {
    // Two leaves of a star with equal features.
    Graph star(3, {{0, 1}, {0, 2}}, tensor_from({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 5, 6, 7, 8}));
    Tensor l = action_logits(m.action, star, star.features()).logits;
    for (std::size_t a = 0; a < 4; ++a) CHECK(l.at(1, a) == l.at(2, a));
  }
}

TEST_CASE("learned inverse temperature", "[cognn][temperature]") {
  TemperatureHead head{Tensor::zeros({3, 1}, true), 0.1};
  Tensor h = tensor_from({2, 3}, {1, 2, 3, -1, 0, 4});
  Tensor inv = learned_inverse_temperature(head, h);
  CHECK(inv[0] == Catch::Approx(std::log(2.0) + 0.1).epsilon(1e-15));
  CHECK(temperatures(inv)[0] == Catch::Approx(1.0 / (std::log(2.0) + 0.1)).epsilon(1e-15));
  CHECK(temperatures(inv)[0] == Catch::Approx(1.2608).margin(1e-4));

  set_values(head.omega, {40, 0, 0});
  Tensor lin = learned_inverse_temperature(head, tensor_from({1, 3}, {1, 0, 0}));
  CHECK(lin[0] == Catch::Approx(40.1).margin(1e-12));

  SECTION("temperature is bounded by 1 / tau0") {
    Rng rng(2);
    Tensor omega = random_tensor({3, 1}, rng, -5, 5, true);
    TemperatureHead hd{omega, 0.25};
    for (double tau : temperatures(learned_inverse_temperature(hd, random_tensor({100, 3}, rng, -5, 5)))) {
      CHECK(tau > 0.0);
      CHECK(tau <= 4.0);
    }
  }

  SECTION("floor is applied and counted") {
    TemperatureHead hd{tensor_from({1, 1}, {1.0}, true), 0.0};
    TemperatureStats stats;
    Tensor v = learned_inverse_temperature(hd, tensor_from({2, 1}, {-1e4, 1.0}), &stats);
    CHECK(stats.floored == 1);
    CHECK(v[0] == kMinInverseTemperature);
    CHECK(std::isfinite(temperatures(v)[0]));
  }

  SECTION("gradient matches finite differences") {
    Rng rng(3);
    Tensor omega = random_tensor({3, 1}, rng, -1, 1, true);
    TemperatureHead hd{omega, 0.1};
    Tensor hh = random_tensor({5, 3}, rng, -1, 1, true);
    auto loss = [&] { return sum(reciprocal(learned_inverse_temperature(hd, hh))); };
    Gradients gr = backward(loss());
    auto f = [&] { NoGradGuard ng; return loss().item(); };
    CHECK(relative_error(gr.of(omega), numeric_gradient(f, omega)) < 1e-7);
    CHECK(relative_error(gr.of(hh), numeric_gradient(f, hh)) < 1e-7);
  }

  CHECK_THROWS_AS(learned_inverse_temperature(head, Tensor::zeros({2, 4})), SizeError);
}

TEST_CASE("straight-through Gumbel-softmax sampling", "[cognn][gumbel]") {
  Rng rng(4);

  SECTION("frequencies follow p and forward vectors are exact one-hots") {
    const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
    const std::size_t n = 100000;
    std::vector<double> logits(n * 4);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t a = 0; a < 4; ++a) logits[v * 4 + a] = std::log(p[a]);
    }
    ActionField f = gumbel_st_sample(tensor_from({n, 4}, logits), Tensor::scalar(1.0), rng);
    std::array<std::size_t, 4> count{};
    for (std::size_t v = 0; v < n; ++v) {
      ++count[static_cast<std::size_t>(f.actions[v])];
      for (std::size_t a = 0; a < 4; ++a) {
        const double expected = a == static_cast<std::size_t>(f.actions[v]) ? 1.0 : 0.0;
        if (f.vectors.at(v, a) != expected) FAIL("forward vector is not the one-hot of the sampled action");
      }
    }
    for (std::size_t a = 0; a < 4; ++a) CHECK(std::fabs(static_cast<double>(count[a]) / n - p[a]) <= 0.01);
  }

  SECTION("uniform p") {
    const std::size_t n = 100000;
    ActionField f = gumbel_st_sample(Tensor::zeros({n, 4}), Tensor::scalar(1.0), rng);
    std::array<std::size_t, 4> count{};
    for (auto a : f.actions) ++count[static_cast<std::size_t>(a)];
    for (auto c : count) CHECK(std::fabs(static_cast<double>(c) / n - 0.25) <= 0.01);
  }

  SECTION("a near-deterministic p almost always draws S") {
    const double e = 1e-9;
    const std::size_t n = 10000;
    std::vector<double> logits;
    for (std::size_t v = 0; v < n; ++v) {
      for (double q : {1 - 3 * e, e, e, e}) logits.push_back(std::log(q));
    }
    ActionField f = gumbel_st_sample(tensor_from({n, 4}, logits), Tensor::scalar(1.0), rng);
    CHECK(std::count(f.actions.begin(), f.actions.end(), Action::standard) > 0.999 * n);
  }

  SECTION("backward equals the soft relaxation gradient") {
    Tensor logits = random_tensor({6, 4}, rng, -1, 1, true);
    Tensor inv = random_tensor({6, 1}, rng, 0.5, 2.0, true);
    auto noise = draw_gumbel_noise(6, rng);
    Tensor w = random_tensor({6, 4}, rng);
    Gradients hard = backward(sum(mul(gumbel_st_sample(logits, inv, noise).vectors, w)));
    Gradients soft = backward(sum(mul(gumbel_st_sample(logits, inv, noise, SampleMode::soft).vectors, w)));
    CHECK(hard.of(logits) == soft.of(logits));
    CHECK(hard.of(inv) == soft.of(inv));
    auto f = [&] {
      NoGradGuard ng;
      return sum(mul(gumbel_st_sample(logits, inv, noise, SampleMode::soft).vectors, w)).item();
    };
    CHECK(relative_error(soft.of(logits), numeric_gradient(f, logits)) < 1e-6);
    CHECK(relative_error(soft.of(inv), numeric_gradient(f, inv)) < 1e-6);
  }

  SECTION("soft vectors sharpen as the temperature falls") {
    const std::size_t n = 2000;
    Tensor logits = random_tensor({n, 4}, rng, -2, 2);
    auto noise = draw_gumbel_noise(n, rng);
    std::vector<double> prev(n, 0.0);
    for (double tau : {1.0, 0.3, 0.1, 0.03, 0.01}) {
      Tensor soft = gumbel_st_sample(logits, Tensor::scalar(1.0 / tau), noise, SampleMode::soft).vectors;
      for (std::size_t v = 0; v < n; ++v) {
        double mx = 0;
        for (std::size_t a = 0; a < 4; ++a) mx = std::max(mx, soft.at(v, a));
        CHECK(mx >= prev[v] - 1e-15);
        prev[v] = mx;
      }
    }
  }

  CHECK_THROWS_AS(gumbel_st_sample(Tensor::zeros({2, 4}), Tensor::scalar(0.0), rng), ParameterError);
  CHECK_THROWS_AS(gumbel_st_sample(Tensor::zeros({2, 3}), Tensor::scalar(1.0), rng), SizeError);
}

TEST_CASE("Gumbel noise stays finite at the clamp", "[cognn][gumbel]") {
  const double lo = -std::log(-std::log(kGumbelClamp));
  const double hi = -std::log(-std::log(1.0 - kGumbelClamp));
  CHECK(std::isfinite(lo));
  CHECK(std::isfinite(hi));
  Rng rng(5);
  for (double g : draw_gumbel_noise(10000, rng)) {
    CHECK(g >= lo);
    CHECK(g <= hi);
  }
}

TEST_CASE("forced schedule reproduces the three-layer rewiring figure", "[cognn][figure]") {
  enum : std::size_t { s, r, u, v, w, wtr, wbr, rt, rb, n };
  Graph g(n, {{s, r}, {s, u}, {r, u}, {u, v}, {v, w}, {w, wtr}, {w, wbr}, {wtr, rt}, {wbr, rb}, {rt, rb}},
          Tensor::zeros({n, 1}));
  ActionSchedule sched(3, std::vector<Action>(n, Action::standard));
  const Action S = Action::standard, L = Action::listen, I = Action::isolate;
  for (std::size_t l = 0; l < 3; ++l) {
    sched[l][u] = std::array{L, L, S}[l];
    sched[l][v] = sched[l][w] = std::array{S, S, L}[l];
    sched[l][s] = sched[l][r] = std::array{S, I, S}[l];
  }
  auto both = [](DirectedSet& e, std::size_t a, std::size_t b) {
    e.insert({a, b});
    e.insert({b, a});
  };
  DirectedSet tail;
  both(tail, v, w);
  both(tail, w, wtr);
  both(tail, w, wbr);
  both(tail, wtr, rt);
  both(tail, wbr, rb);
  both(tail, rt, rb);

  DirectedSet e0 = tail;
  both(e0, s, r);
  e0.insert({s, u});
  e0.insert({r, u});
  e0.insert({v, u});

  DirectedSet e1 = tail;
  e1.insert({v, u});

  DirectedSet e2;
  both(e2, s, r);
  both(e2, s, u);
  both(e2, r, u);
  e2.insert({u, v});
  e2.insert({wtr, w});
  e2.insert({wbr, w});
  both(e2, wtr, rt);
  both(e2, wbr, rb);
  both(e2, rt, rb);

  const DirectedSet expected[] = {e0, e1, e2};
  for (std::size_t l = 0; l < 3; ++l) {
    INFO("layer " << l);
    CHECK(kept(induce_directed(g, ActionField::fixed(sched[l]))) == expected[l]);
  }

  // The same sets come out of the model forward under the forced schedule.
  Rng rng(6);
  ModelConfig cfg;
  cfg.in_dim = 1;
  cfg.env_layers = 3;
  cfg.env_dim = 2;
  CoGnnModel m = CoGnnModel::init(cfg, rng);
  ForwardOptions opts;
  opts.forced = &sched;
  GumbelSource noise(Rng(0));
  GraphBatch batch = make_batch(g);
  ModelOutput out = cognn_model_forward(m, batch, noise, opts);
  for (std::size_t l = 0; l < 3; ++l) CHECK(kept(out.edges[l]) == expected[l]);
}

TEST_CASE("fixed actions transmit a feature along a path exactly", "[cognn][transmission]") {
  for (std::size_t len : {3u, 6u, 10u}) {
    Rng rng(7 + len);
    const std::size_t nodes = len + 1, d = 3;
    EdgeList e;
    for (std::size_t i = 0; i < len; ++i) e.emplace_back(i, i + 1);
    Graph g(nodes, e, random_tensor({nodes, d}, rng, -2, 2));

    ModelConfig cfg;
    cfg.in_dim = d;
    cfg.env_dim = d;
    cfg.env_layers = len;
    cfg.env_agg = Aggregation::sum;
    cfg.act = Activation::identity;
    CoGnnModel m = CoGnnModel::init(cfg, rng);
    set_identity(m.encoder.layers[0].weight);
    set_zero(m.encoder.layers[0].bias);
    for (auto& layer : m.env) {
      set_zero(layer.w_self);
      set_identity(layer.w_neigh);
      set_zero(layer.bias);
    }

    ActionSchedule sched(len, std::vector<Action>(nodes, Action::isolate));
    for (std::size_t l = 0; l < len; ++l) {
      sched[l][l] = Action::broadcast;
      sched[l][l + 1] = Action::listen;
    }
    Tensor h = cognn_forward_with_fixed_actions(m, g, sched);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::fabs(h.at(len, j) - g.features().at(0, j)) <= 1e-12);

    // Under all-S the same weights mix the endpoint with its neighborhood.
    Tensor mixed = cognn_forward_with_fixed_actions(m, g, ActionSchedule(len, std::vector<Action>(nodes, Action::standard)));
    bool differs = false;
    for (std::size_t j = 0; j < d; ++j) differs |= mixed.at(len, j) != g.features().at(0, j);
    CHECK(differs);
  }
}

TEST_CASE("forced all-S recovers the plain MPNN stack bit-exactly", "[cognn][property]") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.uniform_int(0, 11);
    Graph g = random_graph(n, rng.uniform(0.1, 0.9), 3, rng);
    for (auto agg : {Aggregation::sum, Aggregation::mean, Aggregation::gcn}) {
      ModelConfig cfg = small_config(Aggregation::sum, agg);
      Rng init = rng.split("model", static_cast<std::uint64_t>(t));
      CoGnnModel m = CoGnnModel::init(cfg, init);
      ModelConfig bcfg = cfg;
      bcfg.family = ModelFamily::baseline;
      Rng binit = rng.split("model", static_cast<std::uint64_t>(t));
      CoGnnModel b = CoGnnModel::init(bcfg, binit);
      ActionSchedule all_s(cfg.env_layers, std::vector<Action>(n, Action::standard));
      ForwardOptions opts;
      opts.forced = &all_s;
      GumbelSource noise(Rng(1));
      auto batch = make_batch(g);
      CHECK(model_output(m, batch, noise, opts) == model_output(b, batch, noise));
    }
  }
}

TEST_CASE("forced all-I isolates every node", "[cognn][property]") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng.uniform_int(0, 10);
    Graph g = random_graph(n, 0.5, 3, rng);
    CoGnnModel m = CoGnnModel::init(small_config(Aggregation::sum, Aggregation::mean), rng);
    ActionSchedule all_i(2, std::vector<Action>(n, Action::isolate));
    Tensor base = cognn_forward_with_fixed_actions(m, g, all_i);
    const std::size_t victim = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    std::vector<double> x = to_vector(g.features());
    for (std::size_t j = 0; j < 3; ++j) x[victim * 3 + j] += rng.uniform(1, 5);
    Tensor moved = cognn_forward_with_fixed_actions(m, g.with_features(tensor_from({n, 3}, x)), all_i);
    for (std::size_t v = 0; v < n; ++v) {
      if (v == victim) continue;
      for (std::size_t j = 0; j < base.cols(); ++j) CHECK(moved.at(v, j) == base.at(v, j));
    }
  }
}

TEST_CASE("model forward is deterministic and validates inputs", "[cognn]") {
  Rng rng(10);
  Graph g = random_graph(9, 0.4, 3, rng);
  CoGnnModel m = CoGnnModel::init(small_config(Aggregation::sum, Aggregation::mean), rng);
  auto batch = make_batch(g);
  GumbelSource n1(Rng(42)), n2(Rng(42));
  ModelOutput a = cognn_model_forward(m, batch, n1);
  ModelOutput b = cognn_model_forward(m, batch, n2);
  CHECK(to_vector(a.prediction) == to_vector(b.prediction));
  for (std::size_t l = 0; l < 2; ++l) CHECK(a.actions[l].actions == b.actions[l].actions);

  for (const auto& e : a.edges) {
    for (double gate : e.gates.values()) CHECK((gate == 0.0 || gate == 1.0));
  }

  Graph wrong = random_graph(4, 0.5, 5, rng);
  CHECK_THROWS_AS(cognn_model_forward(m, make_batch(wrong), n1), ConfigError);
  CHECK_THROWS_AS(cognn_forward_with_fixed_actions(m, g, ActionSchedule(1, std::vector<Action>(9))), ValidationError);
  CHECK_THROWS_AS(cognn_forward_with_fixed_actions(m, g, ActionSchedule(2, std::vector<Action>(3))), ValidationError);
}

TEST_CASE("zero-layer model is decoder after encoder", "[cognn]") {
  Rng rng(11);
  ModelConfig cfg = small_config(Aggregation::sum, Aggregation::mean);
  cfg.env_layers = 0;
  CoGnnModel m = CoGnnModel::init(cfg, rng);
  Graph g = random_graph(5, 0.5, 3, rng);
  GumbelSource noise(Rng(0));
  Tensor pred = cognn_model_forward(m, make_batch(g), noise).prediction;
  Tensor h0 = index_rows(mlp_forward(m.encoder, g.features()), {0});
  CHECK(to_vector(pred) == to_vector(mlp_forward(m.decoder, h0)));
}

TEST_CASE("two-node model matches hand arithmetic", "[cognn]") {
  ModelConfig cfg;
  cfg.in_dim = 1;
  cfg.out_dim = 1;
  cfg.env_layers = 1;
  cfg.env_dim = 1;
  cfg.env_agg = Aggregation::sum;
  Rng rng(12);
  CoGnnModel m = CoGnnModel::init(cfg, rng);
  set_values(m.encoder.layers[0].weight, {2});
  set_values(m.encoder.layers[0].bias, {1});
  set_values(m.env[0].w_self, {0.5});
  set_values(m.env[0].w_neigh, {-1});
  set_values(m.env[0].bias, {0.25});
  set_values(m.decoder.layers[0].weight, {3});
  set_values(m.decoder.layers[0].bias, {-1});
  Graph g(2, {{0, 1}}, tensor_from({2, 1}, {1, -2}));
  // Encoder: 2*1+1 = 3 and 2*(-2)+1 = -3. Root, listening: relu(0.5*3 - (-3) + 0.25) = 4.75.
  ActionSchedule sched{{Action::listen, Action::broadcast}};
  ForwardOptions opts;
  opts.forced = &sched;
  GumbelSource noise(Rng(0));
  Tensor pred = cognn_model_forward(m, make_batch(g), noise, opts).prediction;
  CHECK(pred.item() == 3 * 4.75 - 1);
  // Root isolated: relu(1.5 + 0.25) = 1.75.
  ActionSchedule iso{{Action::isolate, Action::broadcast}};
  opts.forced = &iso;
  CHECK(cognn_model_forward(m, make_batch(g), noise, opts).prediction.item() == 3 * 1.75 - 1);
}

TEST_CASE("model forward is permutation equivariant with permuted noise", "[cognn][property]") {
  Rng rng(13);
  for (int t = 0; t < 10; ++t) {
    const std::size_t n = 3 + rng.uniform_int(0, 8);
    Graph g = random_graph(n, 0.4, 3, rng);
    CoGnnModel m = CoGnnModel::init(small_config(Aggregation::sum, Aggregation::mean), rng);
    auto perm = random_permutation(n, rng);
    std::vector<std::vector<double>> table, ptable;
    for (std::size_t l = 0; l < 2; ++l) {
      auto noise = draw_gumbel_noise(n, rng);
      std::vector<double> pn(noise.size());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < 4; ++a) pn[perm[i] * 4 + a] = noise[i * 4 + a];
      }
      table.push_back(noise);
      ptable.push_back(pn);
    }
    auto src = GumbelSource::from_table(table);
    auto psrc = GumbelSource::from_table(ptable);
    ModelOutput a = cognn_model_forward(m, make_batch(g), src);
    ModelOutput b = cognn_model_forward(m, make_batch(g.permuted(perm)), psrc);
    auto expected = permute_rows(a.node_states, perm);
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::fabs(b.node_states[i] - expected[i]) <= 1e-10);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t i = 0; i < n; ++i) CHECK(b.actions[l].actions[perm[i]] == a.actions[l].actions[i]);
    }
  }
}

TEST_CASE("full model loss gradients match finite differences on the soft path", "[cognn][gradient]") {
  Rng rng(14);
  const std::pair<Aggregation, Aggregation> variants[] = {
      {Aggregation::sum, Aggregation::mean}, {Aggregation::sum, Aggregation::sum}, {Aggregation::mean, Aggregation::mean}};
  for (auto [pi_agg, env_agg] : variants) {
    ModelConfig cfg;
    cfg.in_dim = 3;
    cfg.out_dim = 3;
    cfg.env_layers = 1;
    cfg.env_dim = 4;
    cfg.env_agg = env_agg;
    cfg.action_layers = 2;
    cfg.action_dim = 3;
    cfg.action_agg = pi_agg;
    cfg.act = Activation::gelu;
    CoGnnModel m = CoGnnModel::init(cfg, rng);
    Graph a = random_graph(6, 0.5, 3, rng), b = random_graph(5, 0.6, 3, rng);
    const Graph* gs[] = {&a, &b};
    GraphBatch batch = make_batch(gs);
    Tensor target = random_tensor({2, 3}, rng, -1, 1);
    std::vector<std::vector<double>> table{draw_gumbel_noise(11, rng)};
    ForwardOptions opts;
    opts.sample_mode = SampleMode::soft;
    auto loss = [&] {
      auto src = GumbelSource::from_table(table);
      return l1_loss(cognn_model_forward(m, batch, src, opts).prediction, target);
    };
    Gradients gr = backward(loss());
    auto f = [&] { NoGradGuard ng; return loss().item(); };
    for (auto& np : m.named_parameters()) {
      INFO(to_string(pi_agg) << "," << to_string(env_agg) << " " << np.name);
      auto fd = numeric_gradient(f, np.tensor);
      CHECK(relative_error(gr.of(np.tensor), fd) < 1e-4);
    }
    double pi_norm = 0;
    for (auto& t : m.action_parameters()) {
      for (double x : gr.of(t)) pi_norm += x * x;
    }
    CHECK(pi_norm > 0.0);
  }
}
