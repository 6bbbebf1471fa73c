#include "bsct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "bsct/dynamics.hpp"
#include "bsct/parallel.hpp"
#include "bsct/scanner.hpp"
#include "json.hpp"

namespace bsct {

using ad::Array;
using ad::Tensor;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("invalid training config: " + what); };
  if (!(energy_weight >= 0) || !(force_weight >= 0)) fail("loss weights must be >= 0");
  if (!(lr > 0)) fail("lr must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(warmup_factor >= 0 && warmup_factor <= 1)) fail("warmup_factor must be in [0, 1]");
  if (!(warmup_epochs >= 0)) fail("warmup_epochs must be >= 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(ema_decay >= 0 && ema_decay < 1)) fail("ema_decay must be in [0, 1)");
  if (!(grad_clip > 0)) fail("grad_clip must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(adam_eps > 0)) fail("bad Adam constants");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used == v.size()) return r;
  } catch (...) {
  }
  throw Error("config key " + key + ": expected a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used == v.size()) return r;
  } catch (...) {
  }
  throw Error("config key " + key + ": expected an integer, got '" + v + "'");
}

}  // namespace

FlatConfig TrainConfig::to_flat() const {
  return {
      {"train.energy_weight", fmt(energy_weight)},
      {"train.force_weight", fmt(force_weight)},
      {"train.lr", fmt(lr)},
      {"train.weight_decay", fmt(weight_decay)},
      {"train.warmup_factor", fmt(warmup_factor)},
      {"train.warmup_epochs", fmt(warmup_epochs)},
      {"train.epochs", std::to_string(epochs)},
      {"train.ema_decay", fmt(ema_decay)},
      {"train.grad_clip", fmt(grad_clip)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.seed", std::to_string(seed)},
      {"train.loss", loss == LossType::l1 ? "l1" : "l2"},
      {"train.beta1", fmt(beta1)},
      {"train.beta2", fmt(beta2)},
      {"train.adam_eps", fmt(adam_eps)},
      {"train.fit_offsets", fit_offsets ? "true" : "false"},
  };
}

void TrainConfig::apply(const FlatConfig& flat) {
  for (const auto& [key, v] : flat) {
    if (key.rfind("train.", 0) != 0) continue;
    const std::string k = key.substr(6);
    if (k == "energy_weight") energy_weight = to_double(key, v);
    else if (k == "force_weight") force_weight = to_double(key, v);
    else if (k == "lr") lr = to_double(key, v);
    else if (k == "weight_decay") weight_decay = to_double(key, v);
    else if (k == "warmup_factor") warmup_factor = to_double(key, v);
    else if (k == "warmup_epochs") warmup_epochs = to_double(key, v);
    else if (k == "epochs") epochs = static_cast<int>(to_int(key, v));
    else if (k == "ema_decay") ema_decay = to_double(key, v);
    else if (k == "grad_clip") grad_clip = to_double(key, v);
    else if (k == "batch_size") batch_size = static_cast<int>(to_int(key, v));
    else if (k == "seed") seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (k == "beta1") beta1 = to_double(key, v);
    else if (k == "beta2") beta2 = to_double(key, v);
    else if (k == "adam_eps") adam_eps = to_double(key, v);
    else if (k == "loss") {
      if (v == "l1") loss = LossType::l1;
      else if (v == "l2") loss = LossType::l2;
      else throw Error("config key train.loss: expected l1 or l2, got '" + v + "'");
    } else if (k == "fit_offsets") {
      if (v == "true" || v == "1") fit_offsets = true;
      else if (v == "false" || v == "0") fit_offsets = false;
      else throw Error("config key train.fit_offsets: expected true/false, got '" + v + "'");
    } else {
      throw Error("unknown config key: " + key);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

Tensor loss_tensor(const Tensor& pred_e, const Array& ref_e, const std::vector<std::size_t>& n_atoms,
                   const Tensor& pred_f, const Array& ref_f, double w_e, double w_f, LossType type,
                   double energy_norm, double force_norm) {
  const std::size_t b = ref_e.size();
  if (pred_e.size() != b || n_atoms.size() != b) throw Error("loss: energy shape mismatch");
  if (pred_f.shape() != ref_f.shape) throw Error("loss: force shape mismatch");
  Array inv_n = Array::zeros({b});
  for (std::size_t i = 0; i < b; ++i) inv_n.data[i] = 1.0 / static_cast<double>(n_atoms[i]);
  auto penalty = [type](const Tensor& x) { return type == LossType::l1 ? ad::abs(x) : ad::square(x); };
  const double en = energy_norm > 0 ? energy_norm : static_cast<double>(b);
  const double fn = force_norm > 0 ? force_norm : static_cast<double>(std::max<std::size_t>(ref_f.size(), 1));
  const auto le = ad::sum(penalty((pred_e - Tensor(ref_e)) * Tensor(inv_n))) * (w_e / en);
  const auto lf = ad::sum(penalty(pred_f - Tensor(ref_f))) * (w_f / fn);
  return le + lf;
}

double loss_value(const std::vector<double>& pred_e, const std::vector<double>& ref_e,
                  const std::vector<std::size_t>& n_atoms, const std::vector<Vec3>& pred_f,
                  const std::vector<Vec3>& ref_f, double w_e, double w_f, LossType type) {
  if (pred_e.size() != ref_e.size() || pred_e.size() != n_atoms.size() || pred_f.size() != ref_f.size()) {
    throw Error("loss: shape mismatch");
  }
  auto pen = [type](double x) { return type == LossType::l1 ? std::abs(x) : x * x; };
  double le = 0.0, lf = 0.0;
  for (std::size_t i = 0; i < pred_e.size(); ++i) le += pen((pred_e[i] - ref_e[i]) / static_cast<double>(n_atoms[i]));
  for (std::size_t i = 0; i < pred_f.size(); ++i) {
    for (int c = 0; c < 3; ++c) lf += pen(pred_f[i][c] - ref_f[i][c]);
  }
  return w_e * le / static_cast<double>(pred_e.size()) + w_f * lf / static_cast<double>(3 * pred_f.size());
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

double learning_rate(const TrainConfig& cfg, long step, long steps_per_epoch) {
  const double warmup = cfg.warmup_epochs * static_cast<double>(steps_per_epoch);
  const double total = static_cast<double>(cfg.epochs) * static_cast<double>(steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s < warmup) return cfg.lr * (cfg.warmup_factor + (1.0 - cfg.warmup_factor) * s / warmup);
  if (total <= warmup) return cfg.lr;
  const double progress = std::min(1.0, (s - warmup) / (total - warmup));
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

bool decays(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string last = dot == std::string::npos ? name : name.substr(dot + 1);
  return !last.empty() && last[0] == 'w';
}

double global_norm(const std::map<std::string, Array>& grads) {
  double s = 0.0;
  for (const auto& [n, g] : grads) {
    for (double v : g.data) s += v * v;
  }
  return std::sqrt(s);
}

double optimizer_step(Parameters& params, std::map<std::string, Array> grads, const TrainConfig& cfg, double lr,
                      AdamState& state) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw Error("non-finite gradient");
  if (norm > cfg.grad_clip) {
    const double s = cfg.grad_clip / norm;
    for (auto& [n, g] : grads) {
      for (double& v : g.data) v *= s;
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Array& g = it->second;
    if (g.shape != p.shape) throw Error("gradient shape mismatch for " + name);
    auto& m = state.m.try_emplace(name, Array::zeros(p.shape)).first->second;
    auto& v = state.v.try_emplace(name, Array::zeros(p.shape)).first->second;
    const double shrink = decays(name) ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      const double update = lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + cfg.adam_eps);
      p.data[i] = p.data[i] * shrink - update;
    }
  }
  return norm;
}

void ema_update(Parameters& shadow, const Parameters& params, double decay) {
  for (auto& [name, s] : shadow) {
    const auto& p = params.at(name);
    for (std::size_t i = 0; i < s.size(); ++i) s.data[i] = decay * s.data[i] + (1.0 - decay) * p.data[i];
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train_loop(Parameters init, std::size_t n_samples, const TrainConfig& cfg, const BatchObjective& objective,
                       const std::function<void(const LossRecord&)>& on_step) {
  cfg.validate();
  if (n_samples == 0) throw Error("training set is empty");
  TrainResult r;
  r.params = std::move(init);
  r.ema = r.params;
  AdamState adam;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((n_samples + bs - 1) / bs);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t lo = 0; lo < n_samples; lo += bs) {
      const std::vector<std::size_t> batch(order.begin() + lo, order.begin() + std::min(n_samples, lo + bs));
      std::map<std::string, Array> grads;
      const double loss = objective(r.params, batch, grads);
      if (!std::isfinite(loss)) throw TrainingDiverged(epoch, "non-finite loss");
      const double lr = learning_rate(cfg, step, steps_per_epoch);
      double gn = 0.0;
      try {
        gn = optimizer_step(r.params, std::move(grads), cfg, lr, adam);
      } catch (const Error& e) {
        throw TrainingDiverged(epoch, e.what());
      }
      ema_update(r.ema, r.params, cfg.ema_decay);
      LossRecord rec{epoch, step, lr, loss, gn};
      r.history.push_back(rec);
      if (on_step) on_step(rec);
      epoch_sum += loss;
      ++step;
    }
    r.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
  }
  return r;
}

std::map<int, double> fit_offsets(const Dataset& data) {
  std::set<int> elems;
  for (const auto& s : data) elems.insert(s.structure.species.begin(), s.structure.species.end());
  const std::vector<int> z(elems.begin(), elems.end());
  const std::size_t n = z.size();
  if (n == 0) return {};
  // Normal equations.
  std::vector<double> a(n * n, 0.0), b(n, 0.0);
  for (const auto& s : data) {
    std::vector<double> c(n, 0.0);
    for (int sp : s.structure.species) c[std::lower_bound(z.begin(), z.end(), sp) - z.begin()] += 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      b[i] += c[i] * s.energy;
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] += c[i] * c[j];
    }
  }
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += a[i * n + i];
  std::vector<double> ar = a;
  for (std::size_t i = 0; i < n; ++i) ar[i * n + i] += 1e-10 * trace;
  // Gaussian elimination with partial pivoting on the ridge-regularized system.
  auto solve = [&](std::vector<double> m, std::vector<double> rhs) {
    for (std::size_t col = 0; col < n; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < n; ++r) {
        if (std::abs(m[r * n + col]) > std::abs(m[piv * n + col])) piv = r;
      }
      for (std::size_t k = 0; k < n; ++k) std::swap(m[col * n + k], m[piv * n + k]);
      std::swap(rhs[col], rhs[piv]);
      for (std::size_t r = col + 1; r < n; ++r) {
        const double f = m[r * n + col] / m[col * n + col];
        for (std::size_t k = col; k < n; ++k) m[r * n + k] -= f * m[col * n + k];
        rhs[r] -= f * rhs[col];
      }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
      double acc = rhs[i];
      for (std::size_t k = i + 1; k < n; ++k) acc -= m[i * n + k] * x[k];
      x[i] = acc / m[i * n + i];
    }
    return x;
  };
  // The ridge only guards collinear compositions; refinement removes its bias
  // on well-posed systems.
  std::vector<double> x = solve(ar, b);
  for (int it = 0; it < 4; ++it) {
    std::vector<double> res = b;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) res[i] -= a[i * n + k] * x[k];
    }
    const auto dx = solve(ar, res);
    for (std::size_t i = 0; i < n; ++i) x[i] += dx[i];
  }
  std::map<int, double> out;
  for (std::size_t i = 0; i < n; ++i) out[z[i]] = x[i];
  return out;
}

double potential_objective(const PotentialConfig& pcfg, const Parameters& params, const Dataset& data,
                           const std::vector<std::size_t>& batch, const TrainConfig& cfg,
                           std::map<std::string, Array>& grads) {
  // Fixed-size chunks summed in order: results do not depend on the job count.
  constexpr std::size_t kChunk = 8;
  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  std::size_t total_atoms = 0;
  for (const auto i : batch) total_atoms += data.at(i).structure.size();
  const double e_norm = static_cast<double>(batch.size()), f_norm = 3.0 * static_cast<double>(total_atoms);

  std::vector<double> losses(n_chunks, 0.0);
  std::vector<std::map<std::string, Array>> chunk_grads(n_chunks);
  parallel_for(n_chunks, resolve_jobs(cfg.jobs), [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(batch.size(), lo + kChunk);
    std::vector<const Structure*> structs;
    std::vector<std::size_t> n_atoms;
    std::size_t atoms = 0;
    for (std::size_t k = lo; k < hi; ++k) {
      structs.push_back(&data[batch[k]].structure);
      n_atoms.push_back(data[batch[k]].structure.size());
      atoms += n_atoms.back();
    }
    Array ref_e = Array::zeros({hi - lo}), ref_f = Array::zeros({atoms, 3});
    std::size_t row = 0;
    for (std::size_t k = lo; k < hi; ++k) {
      const auto& s = data[batch[k]];
      if (s.forces.size() != s.structure.size()) throw Error("sample has the wrong number of force rows");
      ref_e.data[k - lo] = s.energy;
      for (const auto& f : s.forces) {
        for (int d = 0; d < 3; ++d) ref_f.data[row * 3 + d] = f[d];
        ++row;
      }
    }
    const auto g = build_batch_graph(pcfg, structs);
    ad::Tape tape;
    std::map<std::string, Tensor> vars;
    std::vector<std::string> names;
    std::vector<Tensor> wrt;
    for (const auto& [name, a] : params) {
      vars.emplace(name, tape.variable(a));
      names.push_back(name);
      wrt.push_back(vars.at(name));
    }
    const Tensor pos = pcfg.head == ForceHead::gradient ? tape.variable(g.positions) : Tensor(g.positions);
    const auto out = forward(pcfg, vars, g, pos, pcfg.head == ForceHead::gradient);
    const auto loss = loss_tensor(out.energies, ref_e, n_atoms, out.forces, ref_f, cfg.energy_weight,
                                  cfg.force_weight, cfg.loss, e_norm, f_norm);
    losses[c] = loss.item();
    const auto gs = ad::grad(loss, wrt);
    for (std::size_t k = 0; k < names.size(); ++k) chunk_grads[c].emplace(names[k], gs[k].array());
  });

  double total = 0.0;
  grads.clear();
  for (std::size_t c = 0; c < n_chunks; ++c) {
    total += losses[c];
    for (auto& [name, a] : chunk_grads[c]) {
      auto it = grads.find(name);
      if (it == grads.end()) {
        grads.emplace(name, std::move(a));
      } else {
        for (std::size_t i = 0; i < a.size(); ++i) it->second.data[i] += a.data[i];
      }
    }
  }
  return total;
}

TrainResult train(const Dataset& data, const PotentialConfig& pcfg, const TrainConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_step) {
  pcfg.validate();
  cfg.validate();
  Parameters init = init_parameters(pcfg, cfg.seed);
  if (cfg.fit_offsets) {
    // Offsets absorb what the fixed prior leaves over.
    Dataset residual = data;
    if (pcfg.repulsion > 0) {
      for (auto& s : residual) {
        s.energy -= repulsion_prior(s.structure.species, s.structure.positions, pcfg.repulsion, pcfg.repulsion_cutoff).energy;
      }
    }
    for (const auto& [z, e] : fit_offsets(residual)) init.at("offsets").data[z] = e;
  }
  return train_loop(
      std::move(init), data.size(), cfg,
      [&](const Parameters& p, const std::vector<std::size_t>& batch, std::map<std::string, Array>& grads) {
        return potential_objective(pcfg, p, data, batch, cfg, grads);
      },
      on_step);
}

std::string loss_history_csv(const TrainResult& r) {
  std::ostringstream os;
  os << "step,epoch,lr,loss,grad_norm\n";
  char buf[160];
  for (const auto& h : r.history) {
    std::snprintf(buf, sizeof buf, "%ld,%d,%.10g,%.10g,%.10g\n", h.step, h.epoch, h.lr, h.loss, h.grad_norm);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

Dataset make_training_set(const std::vector<Structure>& molecules, const DatasetOptions& opt) {
  if (!(opt.perturbation >= 0) || !(opt.stretch_fraction >= 0 && opt.stretch_fraction <= 1) ||
      !(opt.stretch_max >= 0) || !(opt.thermal_fraction >= 0 && opt.thermal_fraction <= 1) ||
      !(opt.thermal_min >= 0 && opt.thermal_max >= opt.thermal_min) || opt.thermal_steps < 0 ||
      !(opt.contact_fraction >= 0 && opt.contact_fraction <= 1) ||
      !(opt.contact_min > 0 && opt.contact_max >= opt.contact_min)) {
    throw Error("invalid dataset options");
  }
  const ReferencePotential ref;
  Dataset out;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& mol : molecules) {
    mol.validate();
    Structure base = mol;
    base.bonds = perceive_bonds(mol, ref.params().bond_scale);
    const auto& bonds = *base.bonds;
    const ForceFn fn = [&](const std::vector<Vec3>& x) { return ref.evaluate(base.species, x, bonds); };
    const auto rel = relax(fn, base.positions);
    base.positions = rel.positions;
    const auto bridges = find_bridge_bonds(base.size(), bonds);
    for (std::size_t k = 0; k < opt.samples_per_molecule; ++k) {
      std::vector<Vec3> x = base.positions;
      if (unit(rng) < opt.thermal_fraction) {
        const double temp = opt.thermal_min + (opt.thermal_max - opt.thermal_min) * unit(rng);
        MdState st = make_state(base);
        st.velocities = maxwell_boltzmann(st.masses, temp, rng);
        for (long t = 0; t < opt.thermal_steps; ++t) langevin_step(st, fn, 0.5, 0.01, temp, rng);
        x = st.positions;
      } else {
        for (auto& p : x) {
          for (int d = 0; d < 3; ++d) p[d] += opt.perturbation * gauss(rng);
        }
      }
      if (unit(rng) < opt.contact_fraction && base.size() > 2) {
        const std::size_t n = base.size();
        std::vector<std::pair<int, int>> pairs;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            if (!std::binary_search(bonds.begin(), bonds.end(), Bond(static_cast<int>(i), static_cast<int>(j)))) {
              pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
            }
          }
        }
        if (!pairs.empty()) {
          const auto [i, j] = pairs[static_cast<std::size_t>(unit(rng) * static_cast<double>(pairs.size())) %
                                    pairs.size()];
          const Vec3 d = x[j] - x[i];
          const double len = norm(d);
          const double target = (opt.contact_min + (opt.contact_max - opt.contact_min) * unit(rng)) *
                                (covalent_radius(base.species[i]) + covalent_radius(base.species[j]));
          if (target < len) x[j] = x[i] + (target / len) * d;
        }
      } else if (!bridges.empty() && unit(rng) < opt.stretch_fraction) {
        const Bond b = bridges[static_cast<std::size_t>(unit(rng) * static_cast<double>(bridges.size())) %
                               bridges.size()];
        const auto labels = fragment_labels(base.size(), bonds, b);
        const Vec3 d = x[b.second] - x[b.first];
        const double len = norm(d);
        const double lo = -0.25 * len, hi = opt.stretch_max;
        const double alpha = 0.5 * (lo + (hi - lo) * unit(rng));
        const Vec3 u = (1.0 / len) * d;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + (alpha * labels[i]) * u;
      }
      Sample s;
      s.structure = with_positions(base, std::move(x));
      const auto ef = ref.evaluate(s.structure.species, s.structure.positions, bonds);
      s.energy = ef.energy;
      s.forces = ef.forces;
      out.push_back(std::move(s));
    }
  }
  return out;
}

using nlohmann::json;

std::string dataset_json(const Dataset& d) {
  json arr = json::array();
  for (const auto& s : d) {
    json j;
    j["tag"] = s.structure.tag;
    j["species"] = s.structure.species;
    json pos = json::array(), frc = json::array();
    for (const auto& p : s.structure.positions) pos.push_back({p[0], p[1], p[2]});
    for (const auto& f : s.forces) frc.push_back({f[0], f[1], f[2]});
    j["positions"] = pos;
    j["energy"] = s.energy;
    j["forces"] = frc;
    if (s.structure.bonds) {
      json bonds = json::array();
      for (const auto& [a, b] : *s.structure.bonds) bonds.push_back({a, b});
      j["bonds"] = bonds;
    }
    arr.push_back(j);
  }
  json out;
  out["samples"] = arr;
  return out.dump(1) + "\n";
}

namespace {

std::vector<Vec3> rows3(const json& a) {
  std::vector<Vec3> out;
  for (const auto& r : a) {
    if (r.size() != 3) throw Error("expected rows of three numbers");
    out.push_back({r[0].get<double>(), r[1].get<double>(), r[2].get<double>()});
  }
  return out;
}

}  // namespace

Dataset parse_dataset_json(const std::string& text) {
  Dataset d;
  try {
    const auto doc = json::parse(text);
    for (const auto& j : doc.at("samples")) {
      Sample s;
      s.structure.tag = j.value("tag", "");
      s.structure.species = j.at("species").get<std::vector<int>>();
      s.structure.positions = rows3(j.at("positions"));
      if (j.contains("bonds")) {
        std::vector<Bond> bonds;
        for (const auto& b : j.at("bonds")) bonds.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
        s.structure.bonds = canonical_bonds(std::move(bonds), s.structure.size());
      }
      s.structure.validate();
      s.energy = j.at("energy").get<double>();
      s.forces = rows3(j.at("forces"));
      if (s.forces.size() != s.structure.size()) throw Error("force rows do not match the atom count");
      d.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed dataset JSON: ") + e.what());
  }
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) { write_text_file(path, dataset_json(d)); }

Dataset read_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset_json(read_text_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace bsct
