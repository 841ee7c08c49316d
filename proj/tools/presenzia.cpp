// presenzia: attendance service and evaluation command line.
//
// Exit codes: 0 success, 2 usage or validation error, 1 runtime error.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "presenzia/codec.hpp"
#include "presenzia/config.hpp"
#include "presenzia/evaluation.hpp"
#include "presenzia/metric_learning.hpp"
#include "presenzia/openapi.hpp"
#include "presenzia/service.hpp"
#include "presenzia/system.hpp"

namespace fs = std::filesystem;
using namespace presenzia;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::string store_path;
  std::string backend;
};

ServiceConfig resolve_config(const Common& c) {
  auto cfg = load_config(c.config_path.empty() ? std::nullopt : std::optional(c.config_path));
  if (!c.store_path.empty()) cfg.store_path = c.store_path;
  if (!c.backend.empty()) cfg.backends.detector = cfg.backends.embedder = backend_from_string(c.backend);
  cfg.validate();
  return cfg;
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

std::vector<std::uint8_t> read_image_bytes(const std::string& path) {
  auto bytes = read_file(path);
  decode_image(bytes);  // reject unreadable files before touching the store
  return bytes;
}

int serve(const Common& common) {
  auto cfg = resolve_config(common);
  const auto [host, port] = ServiceConfig::parse_listen_address(cfg.listen_address);

  // Signals are handled by a dedicated thread so shutdown runs outside a handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  AttendanceSystem system(cfg);
  HttpService http(system, HttpOptions{cfg.threads, cfg.ui_dir});
  const int bound = http.bind(host, port);
  OverdueSweeper sweeper(system, std::chrono::seconds(15));
  std::cerr << json{{"event", "listening"}, {"host", host}, {"port", bound}, {"store", cfg.store_path}}.dump() << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    http.stop();
  });
  http.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

int enroll(const Common& common, const std::string& id, const std::string& name, const std::string& email,
           const std::string& role, const std::vector<std::string>& images) {
  AttendanceSystem system(resolve_config(common));
  std::vector<std::vector<std::uint8_t>> bytes;
  for (const auto& p : images) bytes.push_back(read_image_bytes(p));
  EmployeeRecord r{id, name, email, role_from_string(role), true, {}};
  print(to_json(system.add_employee(kLocalAdmin, r, bytes)));
  return 0;
}

int import_employees(const Common& common, const std::string& csv_path, const std::string& images_dir) {
  AttendanceSystem system(resolve_config(common));
  std::ifstream in(csv_path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + csv_path);
  auto out = json::array();
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (number == 1 && !cols.empty() && cols[0] == "id") continue;
    if (cols.size() != 4) fail(ErrorCode::ValidationError, "line " + std::to_string(number) + ": expected id,name,email,role");
    std::vector<std::vector<std::uint8_t>> bytes;
    for (const char* ext : {".png", ".jpg", ".jpeg"}) {
      const auto p = fs::path(images_dir) / (cols[0] + ext);
      if (fs::exists(p)) bytes.push_back(read_image_bytes(p.string()));
    }
    if (const auto dir = fs::path(images_dir) / cols[0]; fs::is_directory(dir)) {
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(dir))
        if (f.is_regular_file()) files.push_back(f.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) bytes.push_back(read_image_bytes(f.string()));
    }
    EmployeeRecord r{cols[0], cols[1], cols[2], role_from_string(cols[3]), true, {}};
    out.push_back(to_json(system.add_employee(kLocalAdmin, r, bytes)));
  }
  print(out);
  return 0;
}

int identify(const Common& common, const std::string& image, std::optional<std::size_t> k, std::optional<double> tau) {
  AttendanceSystem system(resolve_config(common));
  auto rc = system.recognition();
  if (k) rc.k = *k;
  if (tau) rc.threshold = *tau;
  system.set_recognition(rc);
  auto faces = json::array();
  for (const auto& m : system.identify_image(load_image(image)))
    faces.push_back({{"detection", to_json(m.detection)}, {"identification", to_json(m.identification)}});
  const auto decision = faces.empty() ? json() : faces[0]["identification"]["decision"];
  print({{"decision", decision}, {"faces", faces}, {"k", rc.k}, {"threshold", rc.threshold}});
  return 0;
}

// JSON lines: {"distance": d, "same": b} or {"a": [...], "b": [...], "same": b}.
std::vector<ScoredPair> read_scored_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::vector<ScoredPair> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      const bool same = j.at("same").get<bool>();
      if (j.contains("distance")) {
        out.push_back({j.at("distance").get<double>(), same});
      } else {
        out.push_back({squared_l2_distance(embedding_from_json(j.at("a")), embedding_from_json(j.at("b"))), same});
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::ValidationError, path + " line " + std::to_string(number) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.code(), path + " line " + std::to_string(number) + ": " + e.detail());
    }
  }
  return out;
}

struct ScoredDataset {
  std::vector<ScoredPair> pairs;
  std::string backend;
};

ScoredDataset image_pairs_scored(const ServiceConfig& cfg, const std::string& root, const std::string& pairs_file, bool cache) {
  const auto manifest = DatasetManifest::scan(root);
  const auto pairs = load_pairs(manifest, fs::path(pairs_file));
  const auto detector = make_detector(cfg.backends);
  const auto embedder = make_embedder(cfg.backends);
  return {score_image_pairs(pairs, *detector, *embedder, cache), embedder->name()};
}

int calibrate(const Common& common, const std::string& pairs_file, const std::string& lfw_root) {
  std::vector<ScoredPair> pairs;
  if (lfw_root.empty()) {
    pairs = read_scored_pairs(pairs_file);
  } else {
    pairs = image_pairs_scored(resolve_config(common), lfw_root, pairs_file, true).pairs;
  }
  print(to_json(calibrate_threshold(pairs)));
  return 0;
}

struct EvaluateArgs {
  std::string lfw_root;
  std::string pairs_file;
  std::vector<std::string> subset_sizes;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  std::size_t folds = 1;
  std::string out;
  std::string format = "json";
  bool no_cache = false;
};

int evaluate(const Common& common, const EvaluateArgs& a) {
  const auto cfg = resolve_config(common);
  const auto format = report_format_from_string(a.format);
  const auto started = std::chrono::steady_clock::now();
  const auto [scored, backend] = image_pairs_scored(cfg, a.lfw_root, a.pairs_file, !a.no_cache);
  EvalOptions opt;
  opt.seed = a.seed;
  opt.folds = a.folds;
  EvalReport report;
  std::vector<std::optional<std::size_t>> sizes;
  for (const auto& s : a.subset_sizes) {
    if (s == "full") {
      sizes.push_back(std::nullopt);
      continue;
    }
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size() || v == 0) throw std::invalid_argument(s);
      sizes.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::ValidationError, "--subset-size takes positive integers or 'full', got '" + s + "'");
    }
  }
  if (sizes.size() == 1 && a.repeats == 1) {
    opt.calibration_size = sizes[0];
    opt.calibration_seed = a.seed + 1;
  }
  report = evaluate_verification(scored, opt);
  if (sizes.size() > 1 || (sizes.size() == 1 && a.repeats > 1)) {
    if (a.folds != 1) fail(ErrorCode::ValidationError, "subset ablation uses the single holdout split (--folds 1)");
    report.rows = ablation_by_subset_size(scored, sizes, a.repeats, a.seed);
  }
  report.backend = backend;
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!a.out.empty()) emit_report(report, format, a.out);
  std::cout << render_report(report, format) << std::flush;
  return 0;
}

int export_archive(const Common& common, const std::string& out_path, const std::string& employee_id) {
  AttendanceSystem system(resolve_config(common));
  ArchiveFilter filter;
  if (!employee_id.empty()) filter.employee_id = employee_id;
  std::ostringstream os;
  for (const auto& r : system.query_archive(Principal{"local-auditor", Role::auditor}, filter)) os << to_json(r).dump() << "\n";
  if (out_path.empty()) {
    std::cout << os.str();
  } else {
    const auto text = os.str();
    write_file(out_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  return 0;
}

int issue_token(const Common& common, const std::string& role, const std::string& principal, const std::string& token) {
  AttendanceSystem system(resolve_config(common));
  const auto r = role_from_string(role);
  if (token.empty()) {
    const auto t = system.issue_token(kLocalAdmin, r, principal);
    print({{"token", t.token}, {"principal_id", t.principal_id}, {"role", std::string(to_string(t.role))}});
  } else {
    if (r == Role::employee) system.get_employee(kLocalAdmin, principal);
    system.add_token({token, principal, r});
    print({{"token", token}, {"principal_id", principal}, {"role", role}});
  }
  return 0;
}

int make_synthetic(const std::string& out, std::size_t identities, std::size_t images, std::size_t pairs, std::uint64_t seed) {
  const auto manifest = write_synthetic_dataset(out, identities, images, seed);
  const auto pair_text = make_pair_list(manifest, pairs, seed);
  const auto pairs_path = fs::path(out) / "pairs.txt";
  write_file(pairs_path.string(), std::span(reinterpret_cast<const std::uint8_t*>(pair_text.data()), pair_text.size()));
  print({{"root", out},
         {"identities", manifest.identity_count()},
         {"images", manifest.image_count()},
         {"pairs", pairs},
         {"pairs_file", pairs_path.string()}});
  return 0;
}

int exit_code_for(ErrorCode code) {
  const int status = http_status(code);
  return status >= 400 && status < 500 ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Remote attendance service: face enrollment, presence checks and verification benchmarks"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "JSON config file (default: $PRESENZIA_CONFIG)");
  app.add_option("--store", common.store_path, "SQLite store path (overrides config and $PRESENZIA_STORE)");

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");

  std::string id, name, email, role = "employee";
  std::vector<std::string> images;
  auto* enroll_cmd = app.add_subcommand("enroll", "Add an employee and enroll their photos");
  enroll_cmd->add_option("--id", id, "employee id")->required();
  enroll_cmd->add_option("--name", name, "display name")->required();
  enroll_cmd->add_option("--email", email, "contact email")->required();
  enroll_cmd->add_option("--role", role, "admin or employee")->check(CLI::IsMember({"admin", "employee"}));
  enroll_cmd->add_option("--images", images, "enrollment photos (PNG or JPEG)")->required()->check(CLI::ExistingFile);

  std::string csv_path, images_dir;
  auto* import_cmd = app.add_subcommand("import-employees", "Bulk add from CSV (id,name,email,role)");
  import_cmd->add_option("--csv", csv_path)->required()->check(CLI::ExistingFile);
  import_cmd->add_option("--images-dir", images_dir, "holds <id>.png|.jpg or a <id>/ directory per employee")
      ->required()
      ->check(CLI::ExistingDirectory);

  std::string image;
  std::optional<std::size_t> k;
  std::optional<double> tau;
  auto* identify_cmd = app.add_subcommand("identify", "Identify the faces in one image against the gallery");
  identify_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);
  identify_cmd->add_option("--k", k, "neighbours")->check(CLI::PositiveNumber);
  identify_cmd->add_option("--tau", tau, "squared-L2 rejection threshold")->check(CLI::NonNegativeNumber);

  std::string pairs_file, lfw_root;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Pick the accuracy-maximizing distance threshold");
  calibrate_cmd->add_option("--pairs-file", pairs_file, "JSON lines of scored pairs, or an LFW pair list with --lfw-root")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate_cmd->add_option("--lfw-root", lfw_root)->check(CLI::ExistingDirectory);
  calibrate_cmd->add_option("--backend", common.backend)->check(CLI::IsMember({"reference", "real"}));

  EvaluateArgs eval;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Pair-verification benchmark on an LFW-layout dataset");
  evaluate_cmd->add_option("--lfw-root", eval.lfw_root)->required()->check(CLI::ExistingDirectory);
  evaluate_cmd->add_option("--pairs-file", eval.pairs_file)->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--backend", common.backend)->check(CLI::IsMember({"reference", "real"}));
  evaluate_cmd->add_option("--subset-size", eval.subset_sizes, "calibration pairs (repeatable; 'full' for the whole holdout)");
  evaluate_cmd->add_option("--repeats", eval.repeats)->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--seed", eval.seed);
  evaluate_cmd->add_option("--folds", eval.folds)->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--out", eval.out, "also write the report here");
  evaluate_cmd->add_option("--format", eval.format)->check(CLI::IsMember({"json", "csv", "markdown"}));
  evaluate_cmd->add_flag("--no-cache", eval.no_cache, "embed every pair image afresh");

  std::string out_path, employee_id;
  auto* export_cmd = app.add_subcommand("export-archive", "Write archive records as JSON lines");
  export_cmd->add_option("--out", out_path);
  export_cmd->add_option("--employee-id", employee_id);

  std::string token_role, principal, token;
  auto* token_cmd = app.add_subcommand("issue-token", "Create a bearer token");
  token_cmd->add_option("--role", token_role)->required()->check(CLI::IsMember({"admin", "employee", "auditor"}));
  token_cmd->add_option("--principal", principal)->required();
  token_cmd->add_option("--token", token, "use this value instead of a random one");

  std::string synth_out;
  std::size_t identities = 10, per_identity = 4, n_pairs = 100;
  std::uint64_t synth_seed = 1;
  auto* synth_cmd = app.add_subcommand("make-synthetic", "Write a synthetic LFW-layout dataset and pair list");
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--identities", identities)->check(CLI::Range(2, 1000));
  synth_cmd->add_option("--images", per_identity)->check(CLI::Range(2, 1000));
  synth_cmd->add_option("--pairs", n_pairs)->check(CLI::Range(1, 1000000));
  synth_cmd->add_option("--seed", synth_seed);

  auto* openapi_cmd = app.add_subcommand("openapi", "Print the OpenAPI document");
  openapi_cmd->add_option("--out", out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*serve_cmd) return serve(common);
    if (*enroll_cmd) return enroll(common, id, name, email, role, images);
    if (*import_cmd) return import_employees(common, csv_path, images_dir);
    if (*identify_cmd) return identify(common, image, k, tau);
    if (*calibrate_cmd) return calibrate(common, pairs_file, lfw_root);
    if (*evaluate_cmd) return evaluate(common, eval);
    if (*export_cmd) return export_archive(common, out_path, employee_id);
    if (*token_cmd) return issue_token(common, token_role, principal, token);
    if (*synth_cmd) return make_synthetic(synth_out, identities, per_identity, n_pairs, synth_seed);
    if (*openapi_cmd) {
      const auto text = openapi_document().dump(2) + "\n";
      if (out_path.empty())
        std::cout << text;
      else
        write_file(out_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << json{{"code", std::string(to_string(e.code()))}, {"message", e.detail()}}.dump() << std::endl;
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << json{{"code", "InternalError"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 2;
}
