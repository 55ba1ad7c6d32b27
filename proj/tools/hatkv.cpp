#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hatkv/harness.hpp"

using namespace hatkv;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kAnomaly = 2;

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

std::string findings_text(const std::vector<Finding>& fs) {
  std::string out;
  for (const auto& f : fs) out += format_finding(f) + "\n";
  return out;
}

std::size_t count(const std::vector<Finding>& fs, std::initializer_list<Phenomenon> ps) {
  return static_cast<std::size_t>(std::count_if(fs.begin(), fs.end(), [&](const Finding& f) {
    return std::find(ps.begin(), ps.end(), f.what) != ps.end();
  }));
}

struct RunArgs {
  std::string scenario, mode = "rc", cut = "none", session = "none", rtt, out;
  std::uint64_t seed = 1;
  std::size_t clusters = 2, servers = 5, keys = 100000, value_size = 1024, txn_len = 8, txns = 1000, clients = 8;
  std::size_t commit_acks = 0;
  double read_frac = 0.5, scan_frac = 0.0, abort_frac = 0.0, roam = 0.0, jitter = 0.1;
  bool check = false;
};

int do_run(const RunArgs& a) {
  RunConfig cfg;
  cfg.seed = a.seed;
  cfg.isolation = parse_isolation(a.mode);
  cfg.cut = parse_cut(a.cut);
  cfg.sessions = SessionGuarantees::parse(a.session);
  cfg.clusters = a.clusters;
  cfg.servers = a.servers;
  cfg.workload.key_count = a.keys;
  cfg.workload.value_size = a.value_size;
  cfg.workload.txn_len = a.txn_len;
  cfg.workload.read_fraction = a.read_frac;
  cfg.workload.scan_fraction = a.scan_frac;
  cfg.workload.abort_fraction = a.abort_frac;
  cfg.workload.duration_txns = a.txns;
  cfg.workload.clients = a.clients;
  cfg.durability = a.commit_acks;
  cfg.roam = a.roam;
  cfg.jitter = a.jitter;
  if (!a.rtt.empty()) cfg.rtt = RttMatrix::load(a.rtt);
  if (!a.scenario.empty()) cfg.scenario = load_scenario(a.scenario);
  cfg.check = a.check ? CheckLevel::all : CheckLevel::none;

  auto r = run_scenario(cfg);
  std::string csv = csv_header() + "\n" + csv_row(cfg, r.metrics) + "\n";
  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    std::filesystem::path dir(a.out);
    write_history_file((dir / "history.log").string(), r.history);
    write_file(dir / "metrics.csv", csv);
    write_file(dir / "summary.txt", summary_text(cfg, r.metrics));
    if (a.check) {
      write_file(dir / "findings.tsv", findings_text(r.findings));
      std::vector<Phenomenon> all(kAllPhenomena.begin(), kAllPhenomena.end());
      write_file(dir / "summary.json", summary_json(r.findings, all) + "\n");
    }
  }
  std::cout << summary_text(cfg, r.metrics);
  if (a.out.empty()) std::cout << csv;
  return a.check && r.metrics.prohibited_findings > 0 ? kAnomaly : kOk;
}

int do_check(const std::string& path, const std::string& phenomena, const std::vector<std::string>& levels) {
  auto h = read_history_file(path);
  auto ps = parse_phenomena(phenomena);
  std::vector<Phenomenon> prohibited;
  for (const auto& l : levels) {
    auto it = std::find_if(kAllLevels.begin(), kAllLevels.end(), [&](Level x) { return name(x) == l; });
    if (it == kAllLevels.end()) throw ConfigError("level: unknown '" + l + "'");
    for (auto p : prohibited_by(*it)) prohibited.push_back(p);
  }
  if (levels.empty()) prohibited = ps;
  auto fs = Checker(h).detect(ps);
  std::cout << findings_text(fs) << summary_json(fs, ps) << "\n";
  for (const auto& f : fs) {
    if (std::find(prohibited.begin(), prohibited.end(), f.what) != prohibited.end()) return kAnomaly;
  }
  return kOk;
}

int do_demo(const std::string& which, std::uint64_t seed) {
  bool as_expected = true;
  if (which == "lost-update") {
    for (auto iso : {Isolation::ru, Isolation::rc, Isolation::mav}) {
      auto r = demo_lost_update(iso, true, seed);
      auto n = count(r.findings, {Phenomenon::LostUpdate});
      std::cout << "mode " << to_string(iso) << " under partition: " << n << " Lost Update\n"
                << findings_text(r.findings);
      as_expected = as_expected && n == 1;
    }
    auto m = demo_lost_update(Isolation::master, false, seed);
    auto n = count(m.findings, {Phenomenon::LostUpdate});
    std::cout << "mode master, no partition: " << n << " Lost Update\n";
    as_expected = as_expected && n == 0;
  } else if (which == "ryw") {
    auto loose = demo_ryw(false, seed);
    auto myr = count(loose.findings, {Phenomenon::MYR});
    std::cout << "non-sticky client: " << myr << " MYR\n" << findings_text(loose.findings);
    auto sticky = demo_ryw(true, seed);
    auto sess = count(sticky.findings, {Phenomenon::N_MR, Phenomenon::N_MW, Phenomenon::MRWD, Phenomenon::MYR});
    std::cout << "sticky causal client: " << sess << " session findings\n";
    as_expected = myr >= 1 && sess == 0;
  } else if (which == "otv") {
    for (auto iso : {Isolation::rc, Isolation::mav}) {
      auto fs = Checker(crafted_schedule(Crafted::otv, iso, CutIsolation::none)).detect(Phenomenon::OTV);
      std::cout << "mode " << to_string(iso) << ": " << fs.size() << " OTV\n" << findings_text(fs);
      as_expected = as_expected && (iso == Isolation::rc ? !fs.empty() : fs.empty());
    }
  } else {
    throw ConfigError("demo: unknown '" + which + "'");
  }
  if (!as_expected) std::cerr << "demo did not behave as expected\n";
  return as_expected ? kOk : kError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hatkv: highly available transactions over a simulated network"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "simulate a workload and report metrics");
  run->add_option("--scenario", ra.scenario, "scenario file");
  run->add_option("--seed", ra.seed);
  run->add_option("--mode", ra.mode, "ru|rc|mav|master");
  run->add_option("--cut", ra.cut, "none|item|predicate");
  run->add_option("--session", ra.session, "comma list of mr,mw,wfr,ryw-sticky,causal-sticky");
  run->add_option("--clusters", ra.clusters);
  run->add_option("--servers", ra.servers, "servers per cluster");
  run->add_option("--clients", ra.clients);
  run->add_option("--keys", ra.keys);
  run->add_option("--value-size", ra.value_size);
  run->add_option("--txn-len", ra.txn_len);
  run->add_option("--read-frac", ra.read_frac);
  run->add_option("--scan-frac", ra.scan_frac, "share of reads issued as range scans");
  run->add_option("--abort-frac", ra.abort_frac, "share of transactions the application aborts");
  run->add_option("--txns", ra.txns);
  run->add_option("--rtt-matrix", ra.rtt, "RTT table file");
  run->add_option("--commit-acks", ra.commit_acks, "F: commits wait for F+1 replicas per write");
  run->add_option("--roam", ra.roam, "chance a non-sticky request skips its home replica");
  run->add_option("--jitter", ra.jitter);
  run->add_flag("--check", ra.check, "run the anomaly checker");
  run->add_option("--out", ra.out, "output directory");

  std::string history, phenomena = "all";
  std::vector<std::string> levels;
  auto* check = app.add_subcommand("check", "detect anomalies in a history log");
  check->add_option("--history", history)->required();
  check->add_option("--phenomena", phenomena, "all or a comma list");
  check->add_option("--level", levels, "isolation level whose phenomena count as prohibited");

  std::string which;
  std::uint64_t demo_seed = 1;
  auto* demo = app.add_subcommand("demo", "scripted impossibility and anomaly demonstrations");
  demo->add_option("name", which, "lost-update|ryw|otv")->required();
  demo->add_option("--seed", demo_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kError;
  }
  try {
    if (*run) return do_run(ra);
    if (*check) return do_check(history, phenomena, levels);
    if (*demo) return do_demo(which, demo_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
