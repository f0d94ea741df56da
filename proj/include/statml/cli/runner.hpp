#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "../activeinf.hpp"
#include "../anneal.hpp"
#include "../boost.hpp"
#include "../convolution.hpp"
#include "../core.hpp"
#include "../ebm.hpp"
#include "../errors.hpp"
#include "../io.hpp"
#include "../ising.hpp"
#include "../marl.hpp"
#include "../rng.hpp"
#include "config.hpp"

namespace statml::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitUsage = 64;

/// A config problem that can be pinned on one key.
class ConfigError : public ValidationError {
 public:
  ConfigError(std::string key, const std::string& what) : ValidationError(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

using Cell = std::variant<std::int64_t, double>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

/// Where a run writes; records a checksum for every artifact in write order.
class RunContext {
 public:
  RunContext(std::uint64_t seed, std::string format, fs::path out_dir)
      : seed_(seed), format_(std::move(format)), out_dir_(std::move(out_dir)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  RngStream stream(std::uint64_t id) const { return RngStream(seed_, id); }

  void write(const std::string& name, const std::string& contents) {
    io::write_file((out_dir_ / name).string(), contents);
    artifacts_.emplace_back(name, io::fnv1a_hex(contents));
  }

  void write_json(const std::string& name, const Json& doc) { write(name, doc.dump(2) + "\n"); }

  void write_table(const std::string& stem, const Table& table) {
    if (format_ == "json") {
      Json rows = Json::array();
      for (const auto& r : table.rows) {
        Json obj = Json::object();
        for (std::size_t c = 0; c < table.columns.size(); ++c)
          std::visit([&](auto v) { obj[table.columns[c]] = v; }, r[c]);
        rows.push_back(std::move(obj));
      }
      write_json(stem + ".json", rows);
      return;
    }
    std::string out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) out += (c ? "," : "") + table.columns[c];
    out += '\n';
    for (const auto& r : table.rows) {
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (c) out += ',';
        if (const auto* i = std::get_if<std::int64_t>(&r[c])) out += std::to_string(*i);
        else out += io::format_double(std::get<double>(r[c]));
      }
      out += '\n';
    }
    write(stem + ".csv", out);
  }

  const std::vector<std::pair<std::string, std::string>>& artifacts() const noexcept { return artifacts_; }

 private:
  std::uint64_t seed_;
  std::string format_;
  fs::path out_dir_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
};

/// Input files read while preparing a run, keyed by resolved path.
struct Inputs {
  fs::path base_dir;
  std::map<std::string, std::string> checksums;

  std::string resolve(const std::string& path) const {
    fs::path p(path);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return fs::absolute(p).lexically_normal().string();
  }

  std::string read(const std::string& key, const std::string& path) {
    std::string text;
    try {
      text = io::read_file(path);
    } catch (const std::exception& e) {
      throw ConfigError(key, e.what());
    }
    checksums[path] = io::fnv1a_hex(text);
    return text;
  }
};

using Job = std::function<void(RunContext&)>;

struct Subcommand {
  std::string name;
  std::string summary;
  Schema schema;
  std::vector<std::pair<std::string, std::uint64_t>> streams;
  std::vector<std::string> path_keys;
  std::function<Job(const ResolvedConfig&, Inputs&)> prepare;
};

namespace detail {

template <typename F>
auto keyed(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ConfigError(key, e.what());
  } catch (const DomainError& e) {
    throw ConfigError(key, e.what());
  } catch (const CapacityError& e) {
    throw ConfigError(key, e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

inline Json to_json(std::span<const double> v) { return Json(std::vector<double>(v.begin(), v.end())); }

inline Json result_header(const std::string& subcommand) {
  Json j = Json::object();
  j["schema_version"] = kSchemaVersion;
  j["subcommand"] = subcommand;
  return j;
}

inline std::vector<long> integer_fragments(const std::string& key, const std::vector<double>& v) {
  std::vector<long> out;
  for (double x : v) {
    if (x != std::floor(x) || x < 1.0) throw ConfigError(key, "fragment lengths must be positive integers");
    out.push_back(static_cast<long>(x));
  }
  return out;
}

inline KeySpec seed_key() {
  return {"seed", ValueType::integer, false, std::nullopt, non_negative_int(), "master seed (overridden by --seed)"};
}

inline void add_graph_keys(Schema& s) {
  s.push_back({"graph.kind", ValueType::string, false, "chain", one_of({"chain", "ring", "complete", "file"}),
               "built-in topology or 'file'"});
  s.push_back({"graph.n_sites", ValueType::integer, false, "3", positive_int(), "sites for built-in topologies"});
  s.push_back({"graph.coupling", ValueType::real, false, "1", finite_real(), "uniform J for built-in topologies"});
  s.push_back({"graph.field", ValueType::real, false, "0", finite_real(), "uniform h for built-in topologies"});
  s.push_back({"graph.file", ValueType::string, false, std::nullopt, {}, "edge-list file when graph.kind = file"});
}

inline ising::CouplingGraph load_graph(const ResolvedConfig& c, Inputs& in) {
  const auto& kind = c.string("graph.kind");
  if (kind == "file") {
    if (!c.has("graph.file")) throw ConfigError("graph.file", "required when graph.kind = file");
    const auto text = in.read("graph.file", c.string("graph.file"));
    return keyed("graph.file", [&] {
      std::istringstream s(text);
      return ising::parse_coupling_graph(s);
    });
  }
  const auto n = c.count("graph.n_sites");
  const double j = c.real("graph.coupling"), h = c.real("graph.field");
  return keyed("graph.n_sites", [&] {
    if (kind == "ring") return ising::CouplingGraph::ring(n, j, h);
    if (kind == "complete") return ising::CouplingGraph::complete(n, j, h);
    return ising::CouplingGraph::chain(n, j, h);
  });
}

inline void add_schedule_keys(Schema& s, const char* t0, const char* parameter) {
  s.push_back({"schedule.kind", ValueType::string, false, "geometric",
               one_of({"geometric", "linear", "logarithmic", "constant"}), "cooling schedule"});
  s.push_back({"schedule.t0", ValueType::real, false, t0, positive_real(), "initial temperature"});
  s.push_back({"schedule.parameter", ValueType::real, false, parameter, finite_real(),
               "geometric ratio or linear decrement"});
  s.push_back({"schedule.floor", ValueType::real, false, "0.001", positive_real(), "linear schedule floor"});
}

inline anneal::CoolingSchedule load_schedule(const ResolvedConfig& c) {
  anneal::CoolingSchedule s;
  s.kind = anneal::parse_cooling_kind(c.string("schedule.kind"));
  s.t0 = c.real("schedule.t0");
  s.parameter = c.real("schedule.parameter");
  s.floor = c.real("schedule.floor");
  keyed("schedule.parameter", [&] { s.validate(); });
  return s;
}

inline Table anneal_table(const anneal::AnnealTrace& trace) {
  Table t{{"sweep", "temperature", "current_energy", "best_energy", "acceptance_rate"}, {}};
  t.rows.reserve(trace.rows.size());
  for (const auto& r : trace.rows)
    t.rows.push_back({static_cast<std::int64_t>(r.sweep), r.temperature, r.current_energy, r.best_energy,
                      r.acceptance_rate});
  return t;
}

inline Json spins_json(const ising::SpinConfig& s) {
  Json out = Json::array();
  for (auto x : s.spins()) out.push_back(static_cast<int>(x));
  return out;
}

inline std::vector<double> coefficient_vector(const ResolvedConfig& c, Inputs& in, const std::string& list_key,
                                              const std::string& file_key) {
  if (c.has(list_key) == c.has(file_key)) throw ConfigError(list_key, "give exactly one of " + list_key + " and " + file_key);
  if (c.has(list_key)) return c.list(list_key);
  const auto text = in.read(file_key, c.string(file_key));
  return keyed(file_key, [&] {
    std::istringstream s(text);
    auto v = io::read_column(s);
    if (v.empty()) throw ValidationError("no values in file");
    return v;
  });
}

// ---------------------------------------------------------------------------

inline Subcommand entropy_command() {
  Subcommand cmd{"entropy", "entropy, KL divergence and mutual information of given distributions", {}, {}, {}, {}};
  cmd.schema = {
      seed_key(),
      {"p", ValueType::real_list, true, std::nullopt, non_empty_list(), "probabilities (or weights with normalize)"},
      {"q", ValueType::real_list, false, std::nullopt, non_empty_list(), "reference distribution for KL(p || q)"},
      {"normalize", ValueType::boolean, false, "false", {}, "rescale p and q to sum to 1"},
      {"log_base", ValueType::real, false, "2", positive_real(), "logarithm base for Shannon entropy"},
      {"joint", ValueType::real_list, false, std::nullopt, non_empty_list(), "row-major joint table"},
      {"joint.rows", ValueType::integer, false, std::nullopt, positive_int(), "rows of the joint table"},
  };
  cmd.prepare = [](const ResolvedConfig& c, Inputs&) -> Job {
    const bool normalize = c.boolean("normalize");
    const auto dist = [&](const std::string& key) {
      return keyed(key, [&] {
        return normalize ? DiscreteDistribution::from_weights(c.list(key)) : DiscreteDistribution(c.list(key));
      });
    };
    const auto p = dist("p");
    std::optional<DiscreteDistribution> q;
    if (c.has("q")) {
      q = dist("q");
      if (q->size() != p.size()) throw ConfigError("q", "length differs from p");
    }
    std::optional<JointDistribution> joint;
    if (c.has("joint") != c.has("joint.rows")) throw ConfigError("joint.rows", "joint and joint.rows go together");
    if (c.has("joint")) {
      const auto rows = c.count("joint.rows");
      const auto& flat = c.list("joint");
      if (flat.size() % rows != 0) throw ConfigError("joint.rows", "does not divide the table length");
      joint = keyed("joint", [&] { return JointDistribution(rows, flat.size() / rows, flat); });
    }
    const double base = c.real("log_base");
    if (base == 1.0) throw ConfigError("log_base", "must not be 1");
    return [p, q, joint, base](RunContext& ctx) {
      Json r = result_header("entropy");
      r["entropy"] = entropy_shannon(p, base);
      r["entropy_nats"] = entropy_gibbs(p);
      r["max_entropy"] = std::log(static_cast<double>(p.size())) / std::log(base);
      if (q) r["kl_divergence_nats"] = kl_divergence(p, *q);
      if (joint) {
        r["joint_entropy_nats"] = joint_entropy(*joint);
        r["mutual_information_nats"] = mutual_information(*joint);
      }
      ctx.write_json("result.json", r);
    };
  };
  return cmd;
}

inline Subcommand ising_command() {
  Subcommand cmd{"ising", "Metropolis sampling of an Ising model", {}, {{"chain", 1}}, {"graph.file"}, {}};
  cmd.schema = {seed_key()};
  add_graph_keys(cmd.schema);
  cmd.schema.push_back({"beta", ValueType::real, true, std::nullopt, real_in(0.0, 1e6), "inverse temperature"});
  cmd.schema.push_back({"steps", ValueType::integer, true, std::nullopt, positive_int(), "Metropolis updates"});
  cmd.schema.push_back({"burn_in", ValueType::integer, false, std::nullopt, non_negative_int(), "default steps / 10"});
  cmd.schema.push_back({"trace", ValueType::boolean, false, "true", {}, "write the per-step trace"});
  cmd.prepare = [](const ResolvedConfig& c, Inputs& in) -> Job {
    auto graph = load_graph(c, in);
    const auto beta = keyed("beta", [&] { return ising::Beta(c.real("beta")); });
    const auto steps = c.count("steps");
    const auto burn_in = c.has("burn_in") ? c.count("burn_in") : ising::default_burn_in(steps);
    if (burn_in >= steps) throw ConfigError("burn_in", "must be smaller than steps");
    const bool trace = c.boolean("trace");
    return [graph = std::move(graph), beta, steps, burn_in, trace](RunContext& ctx) {
      auto rng = ctx.stream(1);
      const std::size_t n = graph.n_sites();
      const bool exact = n <= 12;
      ising::ChainOptions opt;
      opt.keep_samples = exact;
      const auto chain = ising::metropolis_chain(graph, beta, steps, burn_in, rng, std::nullopt, opt);

      double e_sum = 0.0, m_sum = 0.0, abs_m_sum = 0.0;
      for (const auto& row : chain.trace.rows) {
        if (row.step <= burn_in) continue;
        e_sum += row.energy;
        m_sum += row.magnetization;
        abs_m_sum += std::abs(row.magnetization);
      }
      const double kept = static_cast<double>(steps - burn_in);

      Json r = result_header("ising");
      r["n_sites"] = n;
      r["beta"] = beta.value();
      r["steps"] = steps;
      r["burn_in"] = burn_in;
      r["acceptance_rate"] = chain.trace.acceptance_rate();
      r["mean_energy"] = e_sum / kept;
      r["mean_magnetization"] = m_sum / kept;
      r["mean_abs_magnetization"] = abs_m_sum / kept;
      r["final_state"] = spins_json(chain.final_state);
      if (exact) {
        const auto part = ising::partition_exact(graph, beta);
        const auto empirical = ising::empirical_distribution(chain.samples, n);
        r["log_partition"] = part.log_z;
        r["exact_probabilities"] = to_json(part.gibbs.probs());
        r["empirical_probabilities"] = to_json(empirical.probs());
        r["total_variation"] = total_variation(empirical, part.gibbs);
      }
      ctx.write_json("result.json", r);
      if (trace) {
        Table t{{"step", "energy", "accepted", "magnetization"}, {}};
        t.rows.reserve(chain.trace.rows.size());
        for (const auto& row : chain.trace.rows)
          t.rows.push_back({static_cast<std::int64_t>(row.step), row.energy, std::int64_t{row.accepted ? 1 : 0},
                            row.magnetization});
        ctx.write_table("trace", t);
      }
    };
  };
  return cmd;
}

inline Subcommand anneal_command() {
  Subcommand cmd{"anneal", "simulated annealing for an Ising ground state", {}, {{"anneal", 2}}, {"graph.file"}, {}};
  cmd.schema = {seed_key()};
  add_graph_keys(cmd.schema);
  add_schedule_keys(cmd.schema, "5", "0.995");
  cmd.schema.push_back({"sweeps", ValueType::integer, false, "1000", positive_int(), "temperature steps"});
  cmd.schema.push_back({"proposals_per_sweep", ValueType::integer, false, "100", positive_int(), "moves per temperature"});
  cmd.prepare = [](const ResolvedConfig& c, Inputs& in) -> Job {
    auto landscape = anneal::IsingLandscape(load_graph(c, in));
    const auto schedule = load_schedule(c);
    const auto sweeps = c.count("sweeps"), proposals = c.count("proposals_per_sweep");
    return [landscape = std::move(landscape), schedule, sweeps, proposals](RunContext& ctx) {
      auto rng = ctx.stream(2);
      const auto res = anneal::anneal(landscape, schedule, sweeps, proposals, rng);
      Json r = result_header("anneal");
      r["best_energy"] = res.best_energy;
      r["best_state"] = spins_json(res.best_state);
      r["final_energy"] = landscape.energy(res.final_state);
      const std::size_t n = landscape.graph().n_sites();
      if (n <= 16) {
        double ground = std::numeric_limits<double>::infinity();
        for (std::uint64_t idx = 0; idx < (std::uint64_t{1} << n); ++idx)
          ground = std::min(ground, ising::ising_energy(ising::SpinConfig::from_index(idx, n), landscape.graph()));
        r["exact_ground_energy"] = ground;
      }
      ctx.write_json("result.json", r);
      ctx.write_table("trace", anneal_table(res.trace));
    };
  };
  return cmd;
}

inline Subcommand digest_command() {
  Subcommand cmd{"digest", "simulated annealing for the double digest problem", {}, {{"anneal", 3}}, {"instance"}, {}};
  cmd.schema = {
      seed_key(),
      {"instance", ValueType::string, false, std::nullopt, {}, "instance file with a:, b:, c: lines"},
      {"a", ValueType::real_list, false, std::nullopt, non_empty_list(), "single digest A fragment lengths"},
      {"b", ValueType::real_list, false, std::nullopt, non_empty_list(), "single digest B fragment lengths"},
      {"c", ValueType::real_list, false, std::nullopt, non_empty_list(), "double digest fragment lengths"},
  };
  add_schedule_keys(cmd.schema, "5", "0.995");
  cmd.schema.push_back({"sweeps", ValueType::integer, false, "1000", positive_int(), "temperature steps"});
  cmd.schema.push_back({"proposals_per_sweep", ValueType::integer, false, "100", positive_int(), "moves per temperature"});
  cmd.prepare = [](const ResolvedConfig& c, Inputs& in) -> Job {
    const bool inline_lists = c.has("a") || c.has("b") || c.has("c");
    if (c.has("instance") == inline_lists) throw ConfigError("instance", "give either instance or all of a, b, c");
    anneal::DoubleDigestInstance inst;
    if (c.has("instance")) {
      const auto text = in.read("instance", c.string("instance"));
      inst = keyed("instance", [&] {
        std::istringstream s(text);
        return anneal::parse_digest_instance(s);
      });
    } else {
      for (const char* k : {"a", "b", "c"})
        if (!c.has(k)) throw ConfigError(k, "required when the instance is given inline");
      inst = keyed("c", [&] {
        return anneal::DoubleDigestInstance(integer_fragments("a", c.list("a")), integer_fragments("b", c.list("b")),
                                            integer_fragments("c", c.list("c")));
      });
    }
    const auto schedule = load_schedule(c);
    const auto sweeps = c.count("sweeps"), proposals = c.count("proposals_per_sweep");
    return [landscape = anneal::DoubleDigestLandscape(inst), inst, schedule, sweeps, proposals](RunContext& ctx) {
      auto rng = ctx.stream(3);
      const auto res = anneal::anneal(landscape, schedule, sweeps, proposals, rng);
      Json r = result_header("digest");
      r["total_length"] = inst.total_length;
      r["best_energy"] = res.best_energy;
      r["sigma"] = res.best_state.sigma;
      r["mu"] = res.best_state.mu;
      r["implied_fragments"] = anneal::double_digest_implied_fragments(res.best_state, inst);
      r["observed_fragments"] = inst.c;
      ctx.write_json("result.json", r);
      ctx.write_table("trace", anneal_table(res.trace));
    };
  };
  return cmd;
}

inline Subcommand ebm_command() {
  Subcommand cmd{"ebm", "train a restricted Boltzmann machine on binary data", {}, {{"init", 4}, {"train", 5}},
                 {"data"}, {}};
  cmd.schema = {
      seed_key(),
      {"data", ValueType::string, true, std::nullopt, {}, "file of 0/1 rows"},
      {"hidden", ValueType::integer, false, "2", int_in(1, 64), "hidden units"},
      {"method", ValueType::string, false, "exact_gradient", one_of({"exact_gradient", "cd_k"}), "gradient estimator"},
      {"learning_rate", ValueType::real, false, "0.1", real_in(0.0, 1e3), "step size"},
      {"epochs", ValueType::integer, false, "100", positive_int(), "full-batch updates"},
      {"k", ValueType::integer, false, "1", positive_int(), "Gibbs sweeps for cd_k"},
      {"init_scale", ValueType::real, false, "0.1", real_in(0.0, 10.0), "initial weights uniform on [-s, s]"},
  };
  cmd.prepare = [](const ResolvedConfig& c, Inputs& in) -> Job {
    const auto text = in.read("data", c.string("data"));
    auto data = keyed("data", [&] {
      std::istringstream s(text);
      return ebm::parse_visible_data(s);
    });
    const auto nv = data.front().size();
    if (nv == 0) throw ConfigError("data", "rows are empty");
    ebm::TrainOptions opt;
    opt.method = ebm::parse_train_method(c.string("method"));
    opt.learning_rate = c.real("learning_rate");
    opt.epochs = c.count("epochs");
    opt.k = c.count("k");
    const auto nh = c.count("hidden");
    if (opt.method == ebm::TrainMethod::exact_gradient && nv + nh > ebm::kMaxExactUnits)
      throw ConfigError("hidden", "exact_gradient needs n_visible + hidden <= " + std::to_string(ebm::kMaxExactUnits));
    const double scale = c.real("init_scale");
    return [data = std::move(data), nv, nh, opt, scale](RunContext& ctx) {
      auto init = ctx.stream(4);
      auto train = ctx.stream(5);
      const auto res = ebm::bm_train(ebm::BoltzmannMachine::random(nv, nh, scale, init), data, opt, train);
      Json w = Json::array();
      for (std::size_t i = 0; i < nv; ++i) {
        Json row = Json::array();
        for (std::size_t j = 0; j < nh; ++j) row.push_back(res.machine.weight(i, j));
        w.push_back(std::move(row));
      }
      Json r = result_header("ebm");
      r["loss_kind"] = std::string(ebm::to_string(res.loss_kind));
      r["final_loss"] = res.loss.empty() ? 0.0 : res.loss.back();
      r["machine"] = {{"a", res.machine.a()}, {"b", res.machine.b()}, {"W", std::move(w)}};
      ctx.write_json("result.json", r);
      Table t{{"epoch", "loss"}, {}};
      for (std::size_t e = 0; e < res.loss.size(); ++e) t.rows.push_back({static_cast<std::int64_t>(e + 1), res.loss[e]});
      ctx.write_table("loss", t);
    };
  };
  return cmd;
}

inline Subcommand conv_command() {
  Subcommand cmd{"conv", "linear convolution of two coefficient vectors", {}, {}, {"a_file", "b_file"}, {}};
  cmd.schema = {
      seed_key(),
      {"a", ValueType::real_list, false, std::nullopt, non_empty_list(), "first vector, comma separated"},
      {"a_file", ValueType::string, false, std::nullopt, {}, "first vector as a one-column file"},
      {"b", ValueType::real_list, false, std::nullopt, non_empty_list(), "second vector, comma separated"},
      {"b_file", ValueType::string, false, std::nullopt, {}, "second vector as a one-column file"},
      {"method", ValueType::string, false, "auto", one_of({"auto", "naive", "fft"}), "algorithm"},
  };
  cmd.prepare = [](const ResolvedConfig& c, Inputs& in) -> Job {
    auto a = coefficient_vector(c, in, "a", "a_file");
    auto b = coefficient_vector(c, in, "b", "b_file");
    const auto method = c.string("method");
    return [a = std::move(a), b = std::move(b), method](RunContext& ctx) {
      const auto out = method == "naive" ? conv::conv_naive(a, b) : method == "fft" ? conv::conv_fft(a, b)
                                                                                     : conv::conv_auto(a, b);
      Json r = result_header("conv");
      r["method"] = method;
      r["length"] = out.size();
      r["c"] = out;
      ctx.write_json("result.json", r);
      Table t{{"index", "value"}, {}};
      for (std::size_t i = 0; i < out.size(); ++i) t.rows.push_back({static_cast<std::int64_t>(i), out[i]});
      ctx.write_table("convolution", t);
    };
  };
  return cmd;
}

inline Subcommand boost_command() {
  Subcommand cmd{"boost", "three-hypothesis boosting of a weak learner", {}, {{"data", 6}, {"learner", 7}}, {"data"}, {}};
  cmd.schema = {
      seed_key(),
      {"learner", ValueType::string, false, "synthetic", one_of({"synthetic", "stump"}), "weak learner"},
      {"gamma", ValueType::real, false, "0.1", real_in(0.0, 0.5), "advantage over 1/2"},
      {"data", ValueType::string, false, std::nullopt, {}, "CSV file x,y (default: synthetic threshold data)"},
      {"data.n", ValueType::integer, false, "10000", positive_int(), "synthetic items"},
      {"data.threshold", ValueType::real, false, "0.5", real_in(0.0, 1.0), "synthetic concept threshold"},
      {"target_error", ValueType::real, false, std::nullopt, real_in(0.0, 0.5), "recurse until the bound reaches this"},
  };
  cmd.prepare = [](const ResolvedConfig& c, Inputs& in) -> Job {
    std::optional<std::vector<boost::LabeledItem>> items;
    if (c.has("data")) {
      const auto text = in.read("data", c.string("data"));
      items = keyed("data", [&] {
        std::istringstream s(text);
        return boost::parse_labeled_csv(s);
      });
    }
    const double gamma = c.real("gamma");
    const auto learner_name = c.string("learner");
    if (learner_name == "synthetic" && !(gamma > 0.0)) throw ConfigError("gamma", "synthetic learner needs gamma > 0");
    const double threshold = c.real("data.threshold");
    const auto learner = learner_name == "stump" ? boost::stump_learner(gamma)
                                                 : boost::synthetic_weak_learner(boost::threshold_concept(threshold), gamma);
    std::optional<double> target;
    if (c.has("target_error")) {
      target = c.real("target_error");
      keyed("target_error", [&] { return boost::boost_depth(gamma, *target); });
    }
    const auto n = c.count("data.n");
    return [items, learner, target, n, threshold](RunContext& ctx) {
      auto data_rng = ctx.stream(6);
      auto learn_rng = ctx.stream(7);
      const auto ds = items ? boost::WeightedDataset::uniform(*items) : boost::threshold_dataset(n, threshold, data_rng);
      Json r = result_header("boost");
      r["items"] = ds.size();
      if (target) {
        const auto res = boost::boost_recursive(learner, ds, *target, learn_rng);
        r["depth"] = res.depth;
        r["final_err"] = res.final_err;
        r["bound"] = res.bound;
      } else {
        const auto res = boost::boost3(learner, ds, learn_rng);
        const auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
        r["h1_err"] = res.diagnostics.h1_err;
        r["h2_err"] = opt(res.diagnostics.h2_err);
        r["h3_err"] = opt(res.diagnostics.h3_err);
        r["final_err"] = res.diagnostics.final_err;
        r["bound"] = res.diagnostics.bound;
      }
      ctx.write_json("result.json", r);
    };
  };
  return cmd;
}

/// MDP file: JSON {n_states, n_actions, gamma, transition: [s][a][s'], reward: [s][a]}.
inline activeinf::DiscreteMDP parse_mdp_json(const std::string& text) {
  const auto j = Json::parse(text);
  activeinf::DiscreteMDP mdp;
  mdp.n_states = j.at("n_states").get<std::size_t>();
  mdp.n_actions = j.at("n_actions").get<std::size_t>();
  mdp.gamma = j.at("gamma").get<double>();
  const auto& t = j.at("transition");
  const auto& r = j.at("reward");
  if (t.size() != mdp.n_states || r.size() != mdp.n_states) throw ValidationError("mdp: tables need n_states rows");
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    if (t[s].size() != mdp.n_actions || r[s].size() != mdp.n_actions)
      throw ValidationError("mdp: tables need n_actions entries per state");
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const auto row = t[s][a].get<std::vector<double>>();
      if (row.size() != mdp.n_states) throw ValidationError("mdp: transition rows need n_states entries");
      mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
      mdp.reward.push_back(r[s][a].get<double>());
    }
  }
  mdp.validate();
  return mdp;
}

inline Subcommand activeinf_command() {
  Subcommand cmd{"activeinf", "value iteration on a discrete MDP", {}, {}, {"mdp"}, {}};
  cmd.schema = {
      seed_key(),
      {"mdp", ValueType::string, true, std::nullopt, {}, "MDP JSON file"},
      {"tolerance", ValueType::real, false, "1e-10", positive_real(), "stop when the sup-norm change is below this"},
  };
  cmd.prepare = [](const ResolvedConfig& c, Inputs& in) -> Job {
    const auto text = in.read("mdp", c.string("mdp"));
    auto mdp = keyed("mdp", [&] { return parse_mdp_json(text); });
    const double tol = c.real("tolerance");
    return [mdp = std::move(mdp), tol](RunContext& ctx) {
      const auto res = activeinf::value_iteration(mdp, tol);
      Json r = result_header("activeinf");
      r["V"] = res.values;
      r["policy"] = res.policy;
      r["iterations"] = res.iterations;
      r["residual"] = res.residual;
      ctx.write_json("result.json", r);
      Table t{{"iteration", "sup_difference"}, {}};
      for (std::size_t k = 0; k < res.sup_differences.size(); ++k)
        t.rows.push_back({static_cast<std::int64_t>(k + 1), res.sup_differences[k]});
      ctx.write_table("convergence", t);
    };
  };
  return cmd;
}

inline constexpr std::uint64_t kMarlFirstStream = 8;

inline Subcommand marl_command() {
  Subcommand cmd{"marl", "mean-field Q-learning in the Ising game on a torus", {}, {}, {}, {}};
  cmd.schema = {
      seed_key(),
      {"lattice.rows", ValueType::integer, false, "4", positive_int(), "torus rows"},
      {"lattice.cols", ValueType::integer, false, "4", positive_int(), "torus columns"},
      {"coupling", ValueType::real, false, "1", finite_real(), "J in the alignment reward"},
      {"episodes", ValueType::integer, false, "200", positive_int(), "episodes (one temperature each)"},
      {"steps_per_episode", ValueType::integer, false, "10", positive_int(), "sweeps over all agents per episode"},
      {"alpha", ValueType::real, false, "0.1", real_in(0.0, 1.0), "learning rate"},
      {"gamma", ValueType::real, false, "0", real_in(0.0, 1.0, true), "discount"},
      {"bins", ValueType::integer, false, "11", int_in(2, 1000), "mean-action bins per dimension"},
      {"replicas", ValueType::integer, false, "1", int_in(1, 1000), "independent runs"},
  };
  add_schedule_keys(cmd.schema, "2", "0.97");
  cmd.prepare = [](const ResolvedConfig& c, Inputs&) -> Job {
    marl::IsingGameEnv env;
    env.graph = marl::NeighborGraph::torus(c.count("lattice.rows"), c.count("lattice.cols"));
    if (env.graph.n_agents() == 1) throw ConfigError("lattice.rows", "a 1x1 lattice has no neighbors");
    env.coupling = c.real("coupling");
    env.temperature = load_schedule(c);
    env.bins = c.count("bins");
    marl::IsingGameOptions opt;
    opt.episodes = c.count("episodes");
    opt.steps_per_episode = c.count("steps_per_episode");
    opt.alpha = c.real("alpha");
    opt.gamma = c.real("gamma");
    const auto replicas = c.count("replicas");
    return [env, opt, replicas](RunContext& ctx) {
      const auto runs = marl::run_ising_replicas(env, opt, ctx.stream(0), replicas, kMarlFirstStream);
      Json r = result_header("marl");
      Json finals = Json::array();
      std::size_t ordered = 0;
      for (const auto& run : runs) {
        finals.push_back(run.magnetization.back());
        ordered += run.magnetization.back() > 0.9;
      }
      r["agents"] = env.graph.n_agents();
      r["final_magnetization"] = std::move(finals);
      r["ordered_fraction"] = static_cast<double>(ordered) / static_cast<double>(runs.size());
      ctx.write_json("result.json", r);
      for (std::size_t i = 0; i < runs.size(); ++i) {
        Table t{{"episode", "magnetization"}, {}};
        for (std::size_t e = 0; e < runs[i].magnetization.size(); ++e)
          t.rows.push_back({static_cast<std::int64_t>(e), runs[i].magnetization[e]});
        ctx.write_table(runs.size() == 1 ? "magnetization" : "magnetization_" + std::to_string(i), t);
      }
    };
  };
  return cmd;
}

}  // namespace detail

inline const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> all = {
      detail::entropy_command(), detail::ising_command(), detail::anneal_command(),
      detail::digest_command(),  detail::ebm_command(),   detail::conv_command(),
      detail::boost_command(),   detail::activeinf_command(), detail::marl_command(),
  };
  return all;
}

inline const Subcommand* find_subcommand(std::string_view name) {
  for (const auto& s : subcommands())
    if (s.name == name) return &s;
  return nullptr;
}

struct Prepared {
  ResolvedConfig config;
  Inputs inputs;
  Job job;
};

namespace detail {

inline std::vector<Diagnostic> prepare(const Subcommand& cmd, const ConfigDocument& doc, const fs::path& base_dir,
                                       Prepared& out) {
  out.inputs.base_dir = base_dir;
  auto diags = check_schema(cmd.schema, doc, &out.config);
  if (!diags.empty()) return diags;
  for (const auto& key : cmd.path_keys)
    if (out.config.has(key)) out.config.put(key, out.inputs.resolve(out.config.string(key)));
  try {
    out.job = cmd.prepare(out.config, out.inputs);
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    diags.push_back({e.key(), what.substr(std::min(what.size(), e.key().size() + 2))});
  } catch (const std::exception& e) {
    diags.push_back({cmd.name, e.what()});
  }
  return diags;
}

}  // namespace detail

/// Empty iff `run` would get past validation. Each entry names a key and a reason.
inline std::vector<Diagnostic> validate_config(std::string_view subcommand, const ConfigDocument& doc,
                                               const fs::path& base_dir = {}) {
  const auto* cmd = find_subcommand(subcommand);
  if (!cmd) return {{"subcommand", "unknown subcommand '" + std::string(subcommand) + "'"}};
  Prepared p;
  return detail::prepare(*cmd, doc, base_dir, p);
}

struct RunRequest {
  std::string subcommand;
  ConfigDocument config;
  fs::path config_dir;
  std::optional<std::uint64_t> seed;
  fs::path out_dir = "out";
  std::string format = "csv";
};

namespace detail {

inline Json manifest_json(const Subcommand& cmd, const RunRequest& req, const Prepared& p, std::uint64_t seed,
                          const std::string& status, const RunContext* ctx, const std::string& error = {}) {
  Json m = Json::object();
  m["schema_version"] = kSchemaVersion;
  m["subcommand"] = cmd.name;
  m["seed"] = seed;
  Json streams = Json::object();
  if (cmd.name == "marl") {
    const auto replicas = p.config.count("replicas");
    for (std::uint64_t i = 0; i < replicas; ++i) streams["replica_" + std::to_string(i)] = kMarlFirstStream + i;
  }
  for (const auto& [name, id] : cmd.streams) streams[name] = id;
  m["streams"] = std::move(streams);
  m["format"] = req.format;
  m["output_dir"] = req.out_dir.lexically_normal().string();
  Json config = Json::object();
  for (const auto& [k, v] : p.config.values()) config[k] = value_text(v);
  m["config"] = std::move(config);
  m["inputs"] = p.inputs.checksums;
  Json artifacts = Json::object();
  if (ctx)
    for (const auto& [name, sum] : ctx->artifacts()) artifacts[name] = sum;
  m["artifacts"] = std::move(artifacts);
  m["status"] = status;
  if (!error.empty()) m["error"] = error;
  return m;
}

inline void write_manifest(const fs::path& dir, const Json& m) {
  io::write_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

}  // namespace detail

/**
 * Validates, writes manifest.json, runs, writes artifacts, then rewrites the manifest with
 * artifact checksums. Exit codes: 0 ok, 1 invalid input, 2 numerical failure, 64 usage.
 */
inline int run(const RunRequest& req, std::ostream& err) {
  const auto* cmd = find_subcommand(req.subcommand);
  if (!cmd) {
    err << "statml: unknown subcommand '" << req.subcommand << "'\n";
    return kExitUsage;
  }
  if (req.format != "csv" && req.format != "json") {
    err << "statml: --format must be csv or json\n";
    return kExitUsage;
  }
  Prepared p;
  const auto diags = detail::prepare(*cmd, req.config, req.config_dir, p);
  if (!diags.empty()) {
    for (const auto& d : diags) err << "statml " << cmd->name << ": " << d.to_string() << "\n";
    return kExitValidation;
  }
  const std::uint64_t seed =
      req.seed ? *req.seed : (p.config.has("seed") ? static_cast<std::uint64_t>(p.config.integer("seed")) : 0);

  RunContext ctx(seed, req.format, req.out_dir);
  try {
    fs::create_directories(req.out_dir);
    detail::write_manifest(req.out_dir, detail::manifest_json(*cmd, req, p, seed, "running", nullptr));
  } catch (const std::exception& e) {
    err << "statml " << cmd->name << ": cannot write to " << req.out_dir << ": " << e.what() << "\n";
    return kExitValidation;
  }

  const auto fail = [&](int code, const std::string& what) {
    err << "statml " << cmd->name << ": " << what << "\n";
    try {
      detail::write_manifest(req.out_dir, detail::manifest_json(*cmd, req, p, seed, "failed", &ctx, what));
    } catch (const std::exception&) {
    }
    return code;
  };
  try {
    p.job(ctx);
  } catch (const ValidationError& e) {
    return fail(kExitValidation, e.what());
  } catch (const DomainError& e) {
    return fail(kExitValidation, e.what());
  } catch (const CapacityError& e) {
    return fail(kExitValidation, e.what());
  } catch (const DegenerateSplitError& e) {
    return fail(kExitNumerical, e.what());
  } catch (const NumericalError& e) {
    return fail(kExitNumerical, e.what());
  } catch (const std::exception& e) {
    return fail(kExitValidation, e.what());
  }
  detail::write_manifest(req.out_dir, detail::manifest_json(*cmd, req, p, seed, "complete", &ctx));
  return kExitOk;
}

/**
 * Re-runs the experiment recorded in a manifest into `out_dir` and compares artifact checksums.
 * Returns 0 when every artifact matches, 2 on a mismatch, 1 when inputs changed on disk.
 */
inline int replay(const fs::path& manifest_path, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  Json m;
  try {
    m = Json::parse(io::read_file(manifest_path.string()));
  } catch (const std::exception& e) {
    err << "statml replay: cannot read manifest: " << e.what() << "\n";
    return kExitValidation;
  }
  if (m.value("schema_version", 0) != kSchemaVersion) {
    err << "statml replay: unsupported manifest schema_version\n";
    return kExitValidation;
  }
  RunRequest req;
  try {
    req.subcommand = m.at("subcommand").get<std::string>();
    req.seed = m.at("seed").get<std::uint64_t>();
    req.format = m.at("format").get<std::string>();
    for (const auto& [k, v] : m.at("config").items()) req.config.set(k, v.get<std::string>());
    for (const auto& [path, sum] : m.at("inputs").items()) {
      if (io::fnv1a_hex(io::read_file(path)) != sum.get<std::string>()) {
        err << "statml replay: input changed since the recorded run: " << path << "\n";
        return kExitValidation;
      }
    }
  } catch (const std::exception& e) {
    err << "statml replay: malformed manifest: " << e.what() << "\n";
    return kExitValidation;
  }
  req.out_dir = out_dir;
  const int code = run(req, err);
  if (code != kExitOk) return code;

  const auto fresh = Json::parse(io::read_file((out_dir / "manifest.json").string()));
  bool same = true;
  for (const auto& [name, sum] : m.at("artifacts").items()) {
    const auto it = fresh["artifacts"].find(name);
    const bool match = it != fresh["artifacts"].end() && *it == sum;
    if (!match) err << "statml replay: artifact differs: " << name << "\n";
    same = same && match;
  }
  if (fresh["artifacts"].size() != m.at("artifacts").size()) {
    err << "statml replay: artifact set differs\n";
    same = false;
  }
  if (!same) return kExitNumerical;
  out << "replay: " << fresh["artifacts"].size() << " artifacts identical\n";
  return kExitOk;
}

/// Markdown reference of every subcommand's keys.
inline std::string config_reference() {
  std::string out;
  for (const auto& cmd : subcommands()) {
    out += "### " + cmd.name + "\n\n" + cmd.summary + "\n\n| key | type | default | |\n|---|---|---|---|\n";
    for (const auto& k : cmd.schema)
      out += "| `" + k.key + "` | " + std::string(to_string(k.type)) + " | " +
             (k.required ? "required" : k.default_text ? "`" + *k.default_text + "`" : "") + " | " + k.help + " |\n";
    out += "\n";
  }
  return out;
}

}  // namespace statml::cli
