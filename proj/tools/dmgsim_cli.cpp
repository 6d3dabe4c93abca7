// dmgsim command-line front end: run, validate, env.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "dmgsim/dmgsim.hpp"

namespace fs = std::filesystem;
using namespace dmgsim;

namespace {

std::atomic<bool> g_stop{false};

void onSignal(int) { g_stop = true; }

void writeJson(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw SchemaError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

Scenario loadWithOverrides(const std::string& file, std::optional<std::uint64_t> seed,
                           std::optional<Micros> duration) {
  Scenario sc = loadScenarioFile(file);
  if (seed) sc.seed = *seed;
  if (duration) {
    if (*duration < 0 || *duration % sc.bi.biDuration != 0)
      throw SchemaError("--duration must be a non-negative multiple of biDuration (" +
                        std::to_string(sc.bi.biDuration) + ")");
    sc.simDuration = *duration;
  }
  return sc;
}

int cmdRun(const std::string& file, std::optional<std::uint64_t> seed, std::optional<Micros> duration,
           const std::string& outDir, bool trace) {
  const Scenario sc = loadWithOverrides(file, seed, duration);
  fs::create_directories(outDir);
  std::ofstream traceOut;
  TraceOptions opt;
  opt.sampling = sc.traceSampling;
  if (trace) {
    traceOut.open(fs::path(outDir) / "trace.ndjson");
    if (!traceOut) throw SchemaError("cannot write trace file in " + outDir);
    opt.out = &traceOut;
  }
  const RunResult r = run(sc, opt);
  nlohmann::json metrics = r.report.toJson();
  metrics["traceHash"] = r.traceHash;
  metrics["traceRecords"] = r.traceRecords;
  writeJson(fs::path(outDir) / "metrics.json", metrics);
  writeJson(fs::path(outDir) / "config.json", scenarioToJson(sc));
  nlohmann::json perBi = nlohmann::json::array();
  for (const auto& m : r.perBi) perBi.push_back(m.toJson());
  writeJson(fs::path(outDir) / "per_bi.json", perBi);

  std::cout << "simulated " << sc.biCount() << " BIs (" << sc.simDuration << " us), seed " << sc.seed << '\n';
  for (const auto& f : r.report.flows)
    std::cout << "  flow " << f.flowId << ": " << f.throughput / 1e6 << " Mb/s, p95 delay "
              << f.delayP95 << " us, drop ratio " << f.dropRatio << '\n';
  std::cout << "  jain " << r.report.network.jainIndex << ", utilization " << r.report.network.utilization
            << '\n';
  std::cout << "trace hash " << std::hex << r.traceHash << std::dec << '\n';
  return 0;
}

int cmdValidate(const std::string& file) {
  const Scenario sc = loadScenarioFile(file);
  std::cout << file << ": ok (" << sc.stations.size() << " stations, " << sc.flows.size() << " flows, "
            << sc.tspecs.size() << " TSPECs, " << sc.biCount() << " BIs)\n";
  return 0;
}

int cmdEnv(const std::string& file, const std::string& listen) {
  const Scenario sc = loadScenarioFile(file);
  EnvServer server(sc, listen);
  server.bind();
  std::signal(SIGINT, onSignal);
  std::signal(SIGTERM, onSignal);
  std::cout << "listening on " << server.endpoint().str() << std::endl;
  server.start();
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IEEE 802.11ad MAC scheduling simulator"};
  app.require_subcommand(1);

  std::string scenario, outDir, listen;
  std::optional<std::uint64_t> seed;
  std::optional<Micros> duration;
  bool trace = false;

  auto* runCmd = app.add_subcommand("run", "simulate a scenario and write metrics");
  runCmd->add_option("--scenario", scenario, "scenario file")->required();
  runCmd->add_option("--seed", seed, "override the scenario seed");
  runCmd->add_option("--duration", duration, "override the simulated time, in microseconds");
  runCmd->add_option("--out", outDir, "output directory")->required();
  runCmd->add_flag("--trace", trace, "write trace.ndjson");

  auto* validateCmd = app.add_subcommand("validate", "check a scenario file");
  validateCmd->add_option("--scenario", scenario, "scenario file")->required();

  auto* envCmd = app.add_subcommand("env", "serve the RL environment");
  envCmd->add_option("--scenario", scenario, "scenario file")->required();
  envCmd->add_option("--listen", listen, "unix:<path> or host:port")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*runCmd) return cmdRun(scenario, seed, duration, outDir, trace);
    if (*validateCmd) return cmdValidate(scenario);
    if (*envCmd) return cmdEnv(scenario, listen);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
