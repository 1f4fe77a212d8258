#include "i2i/check_suite.hpp"

#include <cmath>
#include <functional>

#include "i2i/divergence.hpp"
#include "i2i/networks.hpp"
#include "i2i/objective.hpp"
#include "i2i/ops.hpp"
#include "i2i/rng.hpp"
#include "i2i/trainer.hpp"

namespace i2i {

namespace {

// Moves every entry at least `margin` away from the kinks in `kinks`.
Tensor away_from(Tensor t, std::initializer_list<double> kinks, double margin) {
  for (double& v : t.mutable_values()) {
    for (double k : kinks) {
      if (std::abs(v - k) < margin) v = v < k ? k - margin : k + margin;
    }
  }
  return t;
}

// sum(out * r) with a weighting fixed at first call, so every output entry counts.
Tensor contract(const Tensor& out, std::uint64_t seed, std::string_view tag) {
  Rng rng = make_stream(seed, tag);
  return sum(mul(out, normal_tensor(rng, out.shape())));
}

OpAttrs attrs(const std::function<void(OpAttrs&)>& set) {
  OpAttrs a;
  set(a);
  return a;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.x = {1, 8, 8};
  a.y = {3, 8, 8};
  a.code_channels = 2;
  a.code_dim = 2;
  a.base_filters = 2;
  a.encoder_res_blocks = 1;
  a.generator_res_blocks = 1;
  a.specific_downsamples = 1;
  a.disc_downsamples = 2;
  return a;
}

std::vector<Tensor> tensors_of(const NetworkParams& p) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : p.entries()) out.push_back(t);
  return out;
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& p) {
  std::vector<Tensor> out;
  for (const auto& n : p) out.push_back(n.tensor);
  return out;
}

std::vector<Tensor> with(std::vector<Tensor> leaves, std::initializer_list<Tensor> extra) {
  leaves.insert(leaves.begin(), extra.begin(), extra.end());
  return leaves;
}

}  // namespace

std::vector<GradCheckCase> primitive_cases(std::uint64_t seed) {
  Rng rng = make_stream(seed, "check-primitive");
  auto normal = [&](Shape s, double sd = 1.0) { return normal_tensor(rng, std::move(s), sd, true); };
  auto positive = [&](Shape s) { return uniform_tensor(rng, std::move(s), 0.5, 2.0, true); };

  std::vector<GradCheckCase> cases;
  auto add_case = [&](OpKind kind, std::vector<Tensor> inputs, OpAttrs attrs = {}) {
    const std::string name(op_kind_name(kind));
    cases.push_back({"primitive", name,
                     [kind, attrs, seed, name](std::span<const Tensor> in) {
                       return contract(apply(kind, in, attrs), seed, "weights-" + name);
                     },
                     std::move(inputs)});
  };

  add_case(OpKind::matmul, {normal({3, 4}), normal({4, 2})});
  {
    // Stride 1 and stride 2 through the same weights.
    std::vector<Tensor> in{normal({2, 2, 6, 6}), normal({3, 2, 3, 3}), normal({3})};
    cases.push_back({"primitive", "conv2d",
                     [seed](std::span<const Tensor> t) {
                       Tensor s1 = contract(conv2d(t[0], t[1], t[2], {1, 1}), seed, "weights-conv-s1");
                       Tensor s2 = contract(conv2d(t[0], t[1], t[2], {2, 1}), seed, "weights-conv-s2");
                       return add(s1, s2);
                     },
                     in});
  }
  add_case(OpKind::conv_transpose2d, {normal({2, 3, 3, 3}), normal({3, 2, 4, 4}), normal({2})},
           attrs([](OpAttrs& a) { a.conv = {2, 1}; }));
  add_case(OpKind::add, {normal({2, 3}), normal({2, 3})});
  add_case(OpKind::sub, {normal({2, 3}), normal({2, 3})});
  add_case(OpKind::mul, {normal({2, 3}), normal({2, 3})});
  add_case(OpKind::scale, {normal({2, 3})}, attrs([](OpAttrs& a) { a.scalar = 1.7; }));
  add_case(OpKind::add_scalar, {normal({2, 3})}, attrs([](OpAttrs& a) { a.scalar = 0.3; }));
  add_case(OpKind::exp, {normal({2, 3}, 0.5)});
  add_case(OpKind::log, {positive({2, 3})});
  add_case(OpKind::square, {normal({2, 3})});
  add_case(OpKind::sqrt, {positive({2, 3})});
  add_case(OpKind::abs, {away_from(normal({2, 3}), {0.0}, 0.05)});
  add_case(OpKind::relu, {away_from(normal({2, 3}), {0.0}, 0.05)});
  add_case(OpKind::leaky_relu, {away_from(normal({2, 3}), {0.0}, 0.05)}, attrs([](OpAttrs& a) { a.scalar = 0.2; }));
  add_case(OpKind::tanh, {normal({2, 3})});
  add_case(OpKind::sigmoid, {normal({2, 3})});
  add_case(OpKind::softplus, {normal({2, 3})});
  add_case(OpKind::clamp, {away_from(normal({2, 4}), {-0.5, 0.5}, 0.05)}, attrs([](OpAttrs& a) { a.lo = -0.5; a.hi = 0.5; }));
  add_case(OpKind::sum, {normal({2, 3})});
  add_case(OpKind::mean, {normal({2, 3})});
  add_case(OpKind::concat_channels, {normal({2, 2, 3, 3}), normal({2, 1, 3, 3})});
  add_case(OpKind::tile_spatial, {normal({2, 3})}, attrs([](OpAttrs& a) { a.height = a.width = 4; }));
  add_case(OpKind::instance_norm, {normal({2, 3, 4, 4}), normal({3}), normal({3})});
  add_case(OpKind::reshape, {normal({2, 6})}, attrs([](OpAttrs& a) { a.shape = {3, 4}; }));
  add_case(OpKind::global_avg_pool, {normal({2, 3, 4, 4})});
  return cases;
}

std::vector<GradCheckCase> divergence_cases(std::uint64_t seed) {
  Rng rng = make_stream(seed, "check-divergence");
  auto normal = [&](Shape s, double sd = 1.0) { return normal_tensor(rng, std::move(s), sd, true); };
  std::vector<GradCheckCase> cases;

  cases.push_back({"divergence", "kl_to_standard_normal",
                   [](std::span<const Tensor> t) { return kl_to_standard_normal({t[0], t[1]}); },
                   {normal({3, 4}), normal({3, 4}, 0.5)}});
  const Tensor eps = normal_tensor(rng, {3, 4});
  cases.push_back({"divergence", "reparam_sample",
                   [eps, seed](std::span<const Tensor> t) {
                     return contract(reparam_sample({t[0], t[1]}, eps), seed, "weights-reparam");
                   },
                   {normal({3, 4}), normal({3, 4}, 0.5)}});
  cases.push_back({"divergence", "mmd",
                   [](std::span<const Tensor> t) { return mmd(t[0], t[1], 1.0); },
                   {normal({6, 3}), normal({5, 3})}});
  // Dim 8 at the default 2/dim bandwidth; small spread keeps the kernels away from 0.
  cases.push_back({"divergence", "mmd_default_bandwidth",
                   [](std::span<const Tensor> t) { return mmd(t[0], t[1], default_mmd_bandwidth(8)); },
                   {normal({5, 8}, 0.08), normal({4, 8}, 0.08)}});
  return cases;
}

std::vector<GradCheckCase> network_cases(std::uint64_t seed) {
  const Networks nets = init_params(tiny_arch(), seed);
  Rng rng = make_stream(seed, "check-network");
  // Every parameter random and larger than at training init: no dead heads, no
  // case sitting at an exact optimum.
  for (auto p : nets.all()) {
    auto v = p.tensor.mutable_values();
    const auto fresh = normal_values(rng, v.size(), 0.5);
    std::copy(fresh.begin(), fresh.end(), v.begin());
  }
  const Tensor x = uniform_tensor(rng, {2, 1, 8, 8}, -1, 1, true);
  const Tensor y = uniform_tensor(rng, {2, 3, 8, 8}, -1, 1, true);
  const Tensor c = normal_tensor(rng, {2, 2, 2, 2}, 1.0, true);
  const Tensor v = normal_tensor(rng, {2, 2}, 1.0, true);

  std::vector<GradCheckCase> cases;
  for (Domain d : {Domain::x, Domain::y}) {
    const std::string dn(domain_name(d));
    const Tensor& img = d == Domain::x ? x : y;
    cases.push_back({"network", "enc_" + dn + "c",
                     [nets, d, seed](std::span<const Tensor> t) {
                       return contract(encode_invariant(nets, d, t[0]), seed, "weights-enc-c");
                     },
                     with(tensors_of(nets.enc_c(d)), {img})});
    cases.push_back({"network", "enc_" + dn + "d",
                     [nets, d](std::span<const Tensor> t) {
                       return kl_to_standard_normal(encode_specific(nets, d, t[0]));
                     },
                     with(tensors_of(nets.enc_d(d)), {img})});
    cases.push_back({"network", "gen_" + dn,
                     [nets, d, seed](std::span<const Tensor> t) {
                       return contract(generate(nets, d, t[0], t[1]), seed, "weights-gen");
                     },
                     with(tensors_of(nets.gen(d)), {c, v})});
    cases.push_back({"network", "disc_" + dn,
                     [nets, d](std::span<const Tensor> t) { return mean(discriminate(nets, d, t[0])); },
                     with(tensors_of(nets.disc(d)), {img})});
  }
  return cases;
}

std::vector<GradCheckCase> objective_cases(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.arch = tiny_arch();
  const Networks nets = init_params(cfg.arch, seed);
  Rng rng = make_stream(seed, "check-objective");
  for (auto p : nets.all()) {
    auto v = p.tensor.mutable_values();
    const auto fresh = normal_values(rng, v.size(), 0.5);
    std::copy(fresh.begin(), fresh.end(), v.begin());
  }
  // Saturated +-1 pixels like the real data; the L1 term then stays off its kink.
  auto binary = [&](Shape s) {
    Tensor t = uniform_tensor(rng, std::move(s), -1, 1);
    for (double& v : t.mutable_values()) v = v < 0 ? -1.0 : 1.0;
    return t;
  };
  const Tensor x = binary({2, 1, 8, 8});
  const Tensor y = binary({2, 3, 8, 8});
  const Tensor prior = normal_tensor(rng, {2, 2});

  // Both cycles with noise fixed per call so repeated evaluations agree.
  auto cycle = [nets, x, y, seed](std::size_t i) {
    Rng v_rng = make_stream(seed, "check-v", i);
    Rng eps_rng = make_stream(seed, "check-eps", i);
    return forward_cycle(nets, i == 0 ? Domain::x : Domain::y, i == 0 ? x : y, v_rng, eps_rng);
  };

  std::vector<GradCheckCase> cases;
  cases.push_back({"objective", "gan_loss_discriminator",
                   [](std::span<const Tensor> t) { return gan_loss_discriminator(t[0], t[1]); },
                   {normal_tensor(rng, {2, 1, 2, 2}, 2.0, true), normal_tensor(rng, {2, 1, 2, 2}, 2.0, true)}});
  cases.push_back({"objective", "gan_loss_generator",
                   [](std::span<const Tensor> t) { return gan_loss_generator(t[0]); },
                   {normal_tensor(rng, {2, 1, 2, 2}, 2.0, true)}});
  cases.push_back({"objective", "gan_discriminator_phase",
                   [nets, x, y, cycle](std::span<const Tensor>) {
                     const auto c1 = cycle(0);
                     return gan_loss_discriminator(discriminate(nets, Domain::y, y),
                                                   discriminate(nets, Domain::y, c1.translated.detach()));
                   },
                   tensors_of(nets.disc_y)});
  cases.push_back({"objective", "gan_generator_phase",
                   [nets, cycle](std::span<const Tensor>) {
                     const auto c2 = cycle(1);
                     return gan_loss_generator(discriminate(nets, Domain::x, c2.translated));
                   },
                   tensors_of(nets.gen_x)});
  cases.push_back({"objective", "cycle_reconstruction",
                   [cycle, cfg](std::span<const Tensor>) { return cycle_reconstruction_loss(cycle(0), cfg); },
                   tensors_of(nets.generator_side())});
  cases.push_back({"objective", "vae",
                   [cycle, prior, cfg](std::span<const Tensor>) {
                     const auto c = cycle(1);
                     return vae_loss(c.v_sample, prior, c.input, c.recon, cfg.sigma());
                   },
                   tensors_of(nets.generator_side())});
  cases.push_back({"objective", "info_bound",
                   [cycle](std::span<const Tensor>) { return info_bound_loss(cycle(0).q_hat); },
                   tensors_of(nets.generator_side())});
  cases.push_back({"objective", "total_generator_objective",
                   [nets, cycle, prior, cfg](std::span<const Tensor>) {
                     std::array<CycleTerms, 2> terms;
                     for (std::size_t i = 0; i < 2; ++i) {
                       const auto c = cycle(i);
                       terms[i].gan_g = gan_loss_generator(discriminate(nets, other(c.source), c.translated));
                       terms[i].recon = cycle_reconstruction_loss(c, cfg);
                       terms[i].vae = vae_loss(c.v_sample, prior, c.input, c.recon, cfg.sigma());
                       terms[i].bound = info_bound_loss(c.q_hat);
                     }
                     return total_loss(terms, cfg).generator;
                   },
                   tensors_of(nets.generator_side())});
  return cases;
}

std::vector<GradCheckCase> full_suite(std::uint64_t seed) {
  std::vector<GradCheckCase> all;
  for (auto group : {primitive_cases(seed), divergence_cases(seed), network_cases(seed), objective_cases(seed)}) {
    all.insert(all.end(), std::make_move_iterator(group.begin()), std::make_move_iterator(group.end()));
  }
  return all;
}

std::vector<SuiteRow> run_suite(const std::vector<GradCheckCase>& cases, double tolerance,
                                const GradCheckOptions& options) {
  std::vector<SuiteRow> rows;
  for (const auto& c : cases) {
    SuiteRow row{c.group, c.name, grad_check(c.fn, c.inputs, options), false};
    // A case whose every coordinate was skipped checked nothing; it does not pass.
    row.passed = row.result.checked > 0 && row.result.max_rel_error < tolerance;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace i2i
