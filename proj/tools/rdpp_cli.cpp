// rdpp: preprocess, sample, validate, bench and calibrate from the command line.
// Every command writes JSON; failures print {"error": ..., "kind": ...} and exit 2.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rdpp/rdpp.hpp"

namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

constexpr int kExitFailedChecks = 1;
constexpr int kExitError = 2;

struct RunConfig {
  std::string input_path;
  std::string state_path;
  double epsilon = 0.1;
  std::string mode = "exact";
  std::uint64_t seed = 0;
  std::size_t num_samples = 1;
  double target_size = 0.0;
  std::string output_path;
  std::size_t threads = 1;
  bool timing = false;
  rdpp::bench::BenchConfig bench;
};

class UsageError : public rdpp::Error {
 public:
  using rdpp::Error::Error;
};

/// Writes to --output when given, stdout otherwise.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) {
        throw rdpp::FormatError("cannot open '" + path + "' for writing");
      }
    }
  }

  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

int cmd_preprocess(const RunConfig& cfg) {
  const rdpp::RowMatrix x = rdpp::read_matrix(cfg.input_path);
  rdpp::Rng rng(cfg.seed);
  const auto start = std::chrono::steady_clock::now();
  const rdpp::PreprocessedState state = rdpp::build_state(x, cfg.epsilon, rdpp::parse_mode(cfg.mode), rng);
  const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  rdpp::save_state(state, cfg.state_path);
  Output out(cfg.output_path);
  out.stream() << ordered{{"n", state.n()},
                       {"d", state.d()},
                       {"s_tilde", state.s_tilde()},
                       {"q", state.q()},
                       {"eta", state.eta()},
                       {"wall_ms", wall_ms},
                       {"mode", rdpp::to_string(state.mode())}}
                      .dump()
               << '\n';
  return 0;
}

int cmd_sample(const RunConfig& cfg) {
  if (cfg.num_samples == 0) {
    throw UsageError("--num must be at least 1");
  }
  const rdpp::RowMatrix x = rdpp::read_matrix(cfg.input_path);
  const rdpp::PreprocessedState state = rdpp::load_state(cfg.state_path);
  if (state.n() != x.rows() || state.d() != x.cols() || state.index_map() != x.index_map()) {
    throw rdpp::FormatError("state/matrix mismatch: state is " + std::to_string(state.n()) + "x" +
                            std::to_string(state.d()) + ", matrix has " + std::to_string(x.rows()) +
                            " non-zero rows and " + std::to_string(x.cols()) + " columns");
  }
  Output out(cfg.output_path);
  constexpr std::size_t kChunk = 1 << 14;
  rdpp::BatchOptions options;
  options.threads = cfg.threads;
  for (std::size_t first = 0; first < cfg.num_samples; first += kChunk) {
    options.first_index = first;
    const std::size_t count = std::min(kChunk, cfg.num_samples - first);
    for (const rdpp::DppSample& s : rdpp::sample_dpp_batch(state, x, cfg.seed, count, options)) {
      ordered line{{"subset", s.subset.indices}, {"K", s.draw.K}, {"outer_iters", s.draw.outer_iters}};
      if (cfg.timing) {
        line["wall_us"] = s.draw.times.total_us();
      }
      out.stream() << line.dump() << '\n';
    }
  }
  return 0;
}

int cmd_validate(const RunConfig& cfg) {
  const rdpp::RowMatrix x = rdpp::read_matrix(cfg.input_path);
  rdpp::ValidationConfig vc;
  vc.epsilon = cfg.epsilon;
  vc.mode = rdpp::parse_mode(cfg.mode);
  vc.seed = cfg.seed;
  vc.draws = cfg.num_samples;
  vc.threads = cfg.threads;
  const rdpp::ValidationReport report = rdpp::run_validation_suite(x, vc);
  json j = report;
  j["n"] = x.rows();
  j["d"] = x.cols();
  j["mode"] = cfg.mode;
  j["epsilon"] = cfg.epsilon;
  j["seed"] = cfg.seed;
  j["draws"] = cfg.num_samples;
  Output out(cfg.output_path);
  out.stream() << j.dump(2) << '\n';
  return report.passed() ? 0 : kExitFailedChecks;
}

int cmd_bench(const RunConfig& cfg) {
  rdpp::bench::BenchConfig bc = cfg.bench;
  bc.seed = cfg.seed;
  const json j = rdpp::bench::run_bench(bc);
  Output out(cfg.output_path);
  out.stream() << j.dump(2) << '\n';
  return 0;
}

int cmd_calibrate(const RunConfig& cfg) {
  const rdpp::PreprocessedState state = rdpp::load_state(cfg.state_path);
  const rdpp::EigenDecomposition eig = rdpp::eigh(state.A());
  const double alpha = rdpp::calibrate_scale(eig, cfg.target_size);
  Output out(cfg.output_path);
  out.stream() << ordered{{"alpha", alpha}, {"achieved_expected_size", rdpp::scaled_expected_size(eig, alpha)}}.dump()
               << '\n';
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const rdpp::FormatError*>(&e)) return "format";
  if (dynamic_cast<const rdpp::PreconditionError*>(&e)) return "precondition";
  if (dynamic_cast<const rdpp::LinalgError*>(&e)) return "linalg";
  if (dynamic_cast<const rdpp::Error*>(&e)) return "sampler";
  return "internal";
}

int report_error(const std::string& kind, const std::string& message) {
  std::cout << ordered{{"error", message}, {"kind", kind}}.dump() << '\n';
  return kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sample determinantal point processes over the rows of a matrix"};
  app.require_subcommand(1);
  RunConfig cfg;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", cfg.seed, "RNG seed");
    sub->add_option("--output", cfg.output_path, "Write JSON here instead of stdout");
    sub->add_option("--threads", cfg.threads, "Worker threads (0 = all cores)");
  };
  const auto add_epsilon_mode = [&](CLI::App* sub) {
    sub->add_option("--epsilon", cfg.epsilon, "Target total-variation accuracy in (0, 1]")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--mode", cfg.mode, "exact or sketched")->check(CLI::IsMember({"exact", "sketched"}));
  };

  CLI::App* preprocess = app.add_subcommand("preprocess", "Build and save the sampler state");
  preprocess->add_option("--input", cfg.input_path, "Matrix (.mtx or .csv)")->required();
  preprocess->add_option("--state", cfg.state_path, "State file to write")->required();
  add_epsilon_mode(preprocess);
  add_common(preprocess);

  CLI::App* sample = app.add_subcommand("sample", "Draw subsets as JSON lines");
  sample->add_option("--input", cfg.input_path, "Matrix (.mtx or .csv)")->required();
  sample->add_option("--state", cfg.state_path, "State file from preprocess")->required();
  sample->add_option("--num", cfg.num_samples, "Number of draws");
  sample->add_flag("--timing", cfg.timing, "Add per-draw wall_us (output is then not reproducible)");
  add_common(sample);

  CLI::App* validate = app.add_subcommand("validate", "Compare against brute-force references (n <= 12)");
  validate->add_option("--input", cfg.input_path, "Matrix (.mtx or .csv)")->required();
  validate->add_option("--num", cfg.num_samples, "Draws per sampling check")->default_val(200000);
  add_epsilon_mode(validate);
  add_common(validate);

  CLI::App* bench = app.add_subcommand("bench", "Time sampling vs n and preprocessing vs nnz");
  bench->add_option("--d", cfg.bench.d, "Columns");
  bench->add_option("--n-small", cfg.bench.n_small, "Rows, smaller sampling matrix");
  bench->add_option("--n-large", cfg.bench.n_large, "Rows, larger sampling matrix");
  bench->add_option("--draws", cfg.bench.draws, "Timed draws per repeat");
  bench->add_option("--repeats", cfg.bench.repeats, "Repeats per measurement");
  bench->add_option("--sparse-n", cfg.bench.sparse_n, "Rows of the sparse preprocessing matrices");
  bench->add_option("--nnz-per-row", cfg.bench.nnz_per_row, "Entries per row before doubling");
  bench->add_option("--epsilon", cfg.bench.epsilon, "Accuracy for sketched preprocessing")
      ->check(CLI::Range(0.0, 1.0));
  add_common(bench);

  CLI::App* calibrate = app.add_subcommand("calibrate", "Find alpha so DPP(alpha X) has a target mean size");
  calibrate->add_option("--state", cfg.state_path, "State file from preprocess")->required();
  calibrate->add_option("--target-size", cfg.target_size, "Desired expected size")->required();
  add_common(calibrate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  try {
    if (preprocess->parsed()) return cmd_preprocess(cfg);
    if (sample->parsed()) return cmd_sample(cfg);
    if (validate->parsed()) return cmd_validate(cfg);
    if (bench->parsed()) return cmd_bench(cfg);
    if (calibrate->parsed()) return cmd_calibrate(cfg);
  } catch (const std::exception& e) {
    return report_error(error_kind(e), e.what());
  }
  return report_error("usage", "no command given");
}
