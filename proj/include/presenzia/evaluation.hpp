#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/codec.hpp"
#include "presenzia/detection.hpp"
#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"
#include "presenzia/metric_learning.hpp"
#include "presenzia/synthetic.hpp"

namespace presenzia {

namespace fs = std::filesystem;

// --- dataset layout ---------------------------------------------------------

/// root/<Name>/<Name>_<NNNN>.<jpg|jpeg|png>
class DatasetManifest {
 public:
  static DatasetManifest scan(const fs::path& root) {
    if (!fs::is_directory(root)) fail(ErrorCode::DatasetError, "dataset root " + root.string() + " is not a directory");
    DatasetManifest m;
    m.root_ = root;
    for (const auto& dir : fs::directory_iterator(root)) {
      if (!dir.is_directory()) continue;
      const auto name = dir.path().filename().string();
      const std::regex pattern(std::regex_replace(name, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") +
                               R"(_(\d{4})\.(jpg|jpeg|png|JPG|JPEG|PNG))");
      for (const auto& f : fs::directory_iterator(dir.path())) {
        std::smatch match;
        const auto file = f.path().filename().string();
        if (!f.is_regular_file() || !std::regex_match(file, match, pattern)) continue;
        m.images_[name][std::stoi(match[1].str())] = f.path();
        ++m.image_count_;
      }
    }
    return m;
  }

  const fs::path& root() const noexcept { return root_; }
  std::size_t image_count() const noexcept { return image_count_; }
  std::size_t identity_count() const noexcept { return images_.size(); }

  std::optional<fs::path> find(const std::string& name, int index) const {
    auto it = images_.find(name);
    if (it == images_.end()) return std::nullopt;
    auto jt = it->second.find(index);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second;
  }

  std::vector<std::string> identities() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : images_) out.push_back(name);
    return out;
  }

  std::vector<int> indices(const std::string& name) const {
    std::vector<int> out;
    if (auto it = images_.find(name); it != images_.end())
      for (const auto& [i, _] : it->second) out.push_back(i);
    return out;
  }

 private:
  fs::path root_;
  std::map<std::string, std::map<int, fs::path>> images_;
  std::size_t image_count_ = 0;
};

struct ImagePair {
  fs::path a;
  fs::path b;
  bool same = false;
  std::size_t line = 0;
  friend bool operator==(const ImagePair&, const ImagePair&) = default;
};

/// Pair list grammar: "name idx1 idx2" (same) or "name1 idx1 name2 idx2"
/// (different). Lines made only of integers (the usual "folds count" header)
/// and blank lines are skipped.
inline std::vector<ImagePair> load_pairs(const DatasetManifest& manifest, std::istream& in) {
  std::vector<ImagePair> out;
  std::string line;
  std::size_t number = 0;
  const auto index = [&](const std::string& tok) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used == tok.size() && v >= 0) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::DatasetError, "line " + std::to_string(number) + ": '" + tok + "' is not an image index");
  };
  const auto resolve = [&](const std::string& name, int idx) {
    auto p = manifest.find(name, idx);
    if (!p) {
      std::ostringstream os;
      os << "line " << number << ": missing image " << name << "_" << std::setw(4) << std::setfill('0') << idx;
      fail(ErrorCode::DatasetError, os.str());
    }
    return *p;
  };
  while (std::getline(in, line)) {
    ++number;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (std::all_of(tok.begin(), tok.end(), [](const std::string& t) {
          return std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); });
        }))
      continue;
    if (tok.size() == 3) {
      out.push_back({resolve(tok[0], index(tok[1])), resolve(tok[0], index(tok[2])), true, number});
    } else if (tok.size() == 4) {
      out.push_back({resolve(tok[0], index(tok[1])), resolve(tok[2], index(tok[3])), false, number});
    } else {
      fail(ErrorCode::DatasetError, "line " + std::to_string(number) + ": expected 3 or 4 fields, got " + std::to_string(tok.size()));
    }
  }
  return out;
}

inline std::vector<ImagePair> load_pairs(const DatasetManifest& manifest, const fs::path& pair_file) {
  std::ifstream in(pair_file);
  if (!in) fail(ErrorCode::DatasetError, "cannot open pair file " + pair_file.string());
  return load_pairs(manifest, in);
}

// --- embedding images -------------------------------------------------------

/// Highest-probability face, or the whole image (centre square) when the
/// detector finds none.
inline Embedding embed_image(const RgbImage& image, const FaceDetector& detector, const EmbedderBackend& embedder) {
  const auto faces = detector.detect(image);
  BoundingBox box{0.0, 0.0, static_cast<double>(image.width), static_cast<double>(image.height)};
  if (!faces.empty()) box = faces.front().box;
  return embedder.embed(crop_and_resize(image, box, kCanonicalChipSide));
}

/// Scores image pairs; each distinct file is embedded once when caching is on.
/// Work is split over threads and written back by pair index.
inline std::vector<ScoredPair> score_image_pairs(const std::vector<ImagePair>& pairs, const FaceDetector& detector,
                                                 const EmbedderBackend& embedder, bool use_cache = true,
                                                 unsigned threads = std::max(1u, std::thread::hardware_concurrency())) {
  std::vector<fs::path> files;
  for (const auto& p : pairs) {
    files.push_back(p.a);
    files.push_back(p.b);
  }
  if (use_cache) {
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
  }
  std::vector<std::optional<Embedding>> embedded(files.size());
  std::vector<std::string> errors(files.size());
  const auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < files.size(); i += step) {
      try {
        embedded[i] = embed_image(load_image(files[i].string()), detector, embedder);
      } catch (const Error& e) {
        errors[i] = files[i].string() + ": " + e.detail();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, files.size()))));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work, t, threads);
  work(0, threads);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) fail(ErrorCode::DatasetError, e);

  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  if (use_cache) {
    const auto at = [&](const fs::path& p) -> const Embedding& {
      return *embedded[static_cast<std::size_t>(std::lower_bound(files.begin(), files.end(), p) - files.begin())];
    };
    for (const auto& p : pairs) out.push_back({squared_l2_distance(at(p.a), at(p.b)), p.same});
  } else {
    for (std::size_t i = 0; i < pairs.size(); ++i)
      out.push_back({squared_l2_distance(*embedded[2 * i], *embedded[2 * i + 1]), pairs[i].same});
  }
  return out;
}

// --- verification protocol --------------------------------------------------

struct EvalOptions {
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;
  std::size_t folds = 1;
  // Number of holdout pairs used for calibration; nullopt means all of them.
  std::optional<std::size_t> calibration_size;
  std::uint64_t calibration_seed = 0;
};

struct AblationRow {
  std::optional<std::size_t> size;  // nullopt == full holdout
  double accuracy = 0.0;
  std::size_t repeats = 0;
  bool clipped = false;
  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct EvalReport {
  double accuracy = 0.0;
  double threshold = 0.0;
  std::size_t num_pairs = 0;
  std::size_t same_pairs = 0;
  std::size_t different_pairs = 0;
  std::size_t calibration_pairs = 0;
  std::size_t test_pairs = 0;
  std::size_t folds = 1;
  std::optional<std::size_t> subset_size;
  bool calibration_fallback = false;  // degenerate holdout; calibrated on the full set
  bool subset_clipped = false;
  std::uint64_t seed = 0;
  std::string backend = "reference";
  std::string protocol = "holdout-10pct";
  double wall_time_seconds = 0.0;
  std::vector<AblationRow> rows;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Seeded Fisher-Yates permutation of 0..n-1 (portable across standard libraries).
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(u * static_cast<double>(i))]);
  }
  return idx;
}

struct HoldoutSplit {
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
};

inline HoldoutSplit holdout_split(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) fail(ErrorCode::ValidationError, "holdout fraction must be in (0, 1)");
  const auto perm = seeded_permutation(n, seed);
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
  return {{perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k)}, {perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end()}};
}

namespace detail {

inline std::vector<ScoredPair> gather(std::span<const ScoredPair> pairs, const std::vector<std::size_t>& idx) {
  std::vector<ScoredPair> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pairs[i]);
  return out;
}

inline bool single_class(const std::vector<ScoredPair>& pairs) {
  return std::all_of(pairs.begin(), pairs.end(), [&](const ScoredPair& p) { return p.same == pairs.front().same; });
}

}  // namespace detail

/// Calibrates on a seeded holdout and measures accuracy on the disjoint rest.
inline EvalReport evaluate_verification(std::span<const ScoredPair> pairs, const EvalOptions& opt = {}) {
  const auto started = std::chrono::steady_clock::now();
  if (pairs.size() < 20) fail(ErrorCode::ValidationError, "verification needs at least 20 pairs, got " + std::to_string(pairs.size()));
  if (opt.folds < 1) fail(ErrorCode::ValidationError, "folds must be at least 1");
  EvalReport r;
  r.num_pairs = pairs.size();
  r.same_pairs = static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return p.same; }));
  r.different_pairs = r.num_pairs - r.same_pairs;
  r.seed = opt.seed;
  r.folds = opt.folds;
  r.subset_size = opt.calibration_size;

  if (opt.folds == 1) {
    const auto split = holdout_split(pairs.size(), opt.holdout_fraction, opt.seed);
    auto calib_idx = split.calibration;
    if (opt.calibration_size) {
      if (*opt.calibration_size < 1) fail(ErrorCode::ValidationError, "calibration size must be positive");
      if (*opt.calibration_size > calib_idx.size()) {
        r.subset_clipped = true;
      } else {
        const auto perm = seeded_permutation(calib_idx.size(), opt.calibration_seed);
        std::vector<std::size_t> chosen;
        for (std::size_t i = 0; i < *opt.calibration_size; ++i) chosen.push_back(calib_idx[perm[i]]);
        std::sort(chosen.begin(), chosen.end());
        calib_idx = std::move(chosen);
      }
    }
    auto calib = detail::gather(pairs, calib_idx);
    const auto test = detail::gather(pairs, split.test);
    if (detail::single_class(calib)) {
      r.calibration_fallback = true;
      calib.assign(pairs.begin(), pairs.end());
    }
    const auto c = calibrate_threshold(calib);
    r.threshold = c.threshold;
    r.calibration_pairs = calib.size();
    r.test_pairs = test.size();
    r.accuracy = verification_accuracy(test, c.threshold);
    r.protocol = "holdout-" + std::to_string(static_cast<int>(std::lround(opt.holdout_fraction * 100))) + "pct";
  } else {
    if (opt.folds > pairs.size() / 2) fail(ErrorCode::ValidationError, "too many folds for " + std::to_string(pairs.size()) + " pairs");
    const auto perm = seeded_permutation(pairs.size(), opt.seed);
    double acc = 0.0, thr = 0.0;
    for (std::size_t f = 0; f < opt.folds; ++f) {
      std::vector<std::size_t> part, rest;
      for (std::size_t i = 0; i < perm.size(); ++i) (i % opt.folds == f ? part : rest).push_back(perm[i]);
      auto calib = detail::gather(pairs, part);
      const auto test = detail::gather(pairs, rest);
      if (detail::single_class(calib)) {
        r.calibration_fallback = true;
        calib.assign(pairs.begin(), pairs.end());
      }
      const auto c = calibrate_threshold(calib);
      thr += c.threshold;
      acc += verification_accuracy(test, c.threshold);
      r.calibration_pairs += calib.size();
      r.test_pairs += test.size();
    }
    r.accuracy = acc / static_cast<double>(opt.folds);
    r.threshold = thr / static_cast<double>(opt.folds);
    r.calibration_pairs /= opt.folds;
    r.test_pairs /= opt.folds;
    r.protocol = std::to_string(opt.folds) + "-fold";
  }
  r.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

inline EvalReport evaluate_verification(const std::vector<ScoredPair>& pairs, const EvalOptions& opt = {}) {
  return evaluate_verification(std::span<const ScoredPair>(pairs), opt);
}

inline EvalReport evaluate_verification(const std::vector<ImagePair>& pairs, const FaceDetector& detector,
                                        const EmbedderBackend& embedder, const EvalOptions& opt = {}, bool use_cache = true) {
  const auto started = std::chrono::steady_clock::now();
  const auto scored = score_image_pairs(pairs, detector, embedder, use_cache);
  auto r = evaluate_verification(scored, opt);
  r.backend = embedder.name();
  r.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

/// Mean accuracy per calibration subset size over seeded repeats; every run
/// shares the same split so only the calibration sample varies. A size larger
/// than the holdout is clipped to the holdout and flagged.
inline std::vector<AblationRow> ablation_by_subset_size(std::span<const ScoredPair> pairs,
                                                        const std::vector<std::optional<std::size_t>>& sizes,
                                                        std::size_t repeats, std::uint64_t seed) {
  if (repeats < 1) fail(ErrorCode::ValidationError, "repeats must be at least 1");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    const bool ascending = !sizes[i - 1] ? false : (!sizes[i] || *sizes[i] > *sizes[i - 1]);
    if (!ascending) fail(ErrorCode::ValidationError, "sizes must be strictly ascending with 'full' last");
  }
  std::vector<AblationRow> rows;
  for (const auto& size : sizes) {
    AblationRow row{size, 0.0, repeats, false};
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      EvalOptions opt;
      opt.seed = seed;
      opt.calibration_size = size;
      opt.calibration_seed = seed + 1 + rep;
      const auto r = evaluate_verification(pairs, opt);
      row.accuracy += r.accuracy;
      row.clipped = row.clipped || r.subset_clipped;
      if (!size) break;  // the full holdout has no sampling variance
    }
    row.repeats = size ? repeats : 1;
    row.accuracy /= static_cast<double>(row.repeats);
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<AblationRow> ablation_by_subset_size(const std::vector<ScoredPair>& pairs,
                                                        const std::vector<std::optional<std::size_t>>& sizes,
                                                        std::size_t repeats, std::uint64_t seed) {
  return ablation_by_subset_size(std::span<const ScoredPair>(pairs), sizes, repeats, seed);
}

// --- synthetic data ---------------------------------------------------------

/// Same/different pairs drawn from noisy clusters around random unit centres.
/// Each sample is normalize(centre + noise * g) with g standard normal.
inline std::vector<ScoredPair> synthetic_cluster_pairs(std::size_t n_pairs, std::size_t identities, double noise,
                                                       std::uint64_t seed) {
  if (identities < 2) fail(ErrorCode::ValidationError, "need at least two identities");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Embedding> centres;
  std::vector<double> v(kEmbeddingDim);
  for (std::size_t i = 0; i < identities; ++i) {
    for (auto& x : v) x = gauss(rng);
    centres.push_back(l2_normalize(v));
  }
  const auto sample = [&](std::size_t id) {
    for (std::size_t d = 0; d < kEmbeddingDim; ++d) v[d] = centres[id][d] + noise * gauss(rng);
    return l2_normalize(v);
  };
  std::uniform_int_distribution<std::size_t> pick(0, identities - 1);
  std::vector<ScoredPair> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const bool same = i % 2 == 0;
    const auto a = pick(rng);
    auto b = a;
    if (!same)
      while (b == a) b = pick(rng);
    out.push_back({squared_l2_distance(sample(a), sample(b)), same});
  }
  return out;
}

/// Writes an LFW-layout tree of synthetic faces (Person_XX/Person_XX_NNNN.png,
/// indices from 1) and returns the manifest.
inline DatasetManifest write_synthetic_dataset(const fs::path& root, std::size_t identities, std::size_t images_per_identity,
                                               std::uint64_t seed, const SyntheticFaceOptions& face = {}) {
  fs::create_directories(root);
  for (std::size_t i = 0; i < identities; ++i) {
    std::ostringstream name;
    name << "Person_" << std::setw(2) << std::setfill('0') << i;
    const auto dir = root / name.str();
    fs::create_directories(dir);
    for (std::size_t k = 1; k <= images_per_identity; ++k) {
      std::ostringstream file;
      file << name.str() << "_" << std::setw(4) << std::setfill('0') << k << ".png";
      save_png((dir / file.str()).string(), synthetic_face(seed * 1000 + i + 1, seed * 1000003 + i * 1000 + k, face));
    }
  }
  return DatasetManifest::scan(root);
}

/// Balanced pair list over a manifest, alternating same/different, with the
/// usual count header line.
inline std::string make_pair_list(const DatasetManifest& manifest, std::size_t n_pairs, std::uint64_t seed) {
  const auto ids = manifest.identities();
  if (ids.size() < 2) fail(ErrorCode::DatasetError, "need at least two identities for pairs");
  std::mt19937_64 rng(seed);
  const auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  std::vector<std::string> multi;
  for (const auto& id : ids)
    if (manifest.indices(id).size() >= 2) multi.push_back(id);
  if (multi.empty()) fail(ErrorCode::DatasetError, "no identity has two images");
  std::ostringstream out;
  out << n_pairs << "\n";
  for (std::size_t i = 0; i < n_pairs; ++i) {
    if (i % 2 == 0) {
      const auto& id = multi[pick(multi.size())];
      const auto idx = manifest.indices(id);
      const auto a = pick(idx.size());
      auto b = pick(idx.size() - 1);
      if (b >= a) ++b;
      out << id << "\t" << idx[a] << "\t" << idx[b] << "\n";
    } else {
      const auto a = pick(ids.size());
      auto b = pick(ids.size() - 1);
      if (b >= a) ++b;
      const auto ia = manifest.indices(ids[a]), ib = manifest.indices(ids[b]);
      out << ids[a] << "\t" << ia[pick(ia.size())] << "\t" << ids[b] << "\t" << ib[pick(ib.size())] << "\n";
    }
  }
  return out.str();
}

// --- reports ----------------------------------------------------------------

inline nlohmann::json to_json(const AblationRow& row) {
  return {{"size", row.size ? nlohmann::json(*row.size) : nlohmann::json("full")},
          {"accuracy", row.accuracy},
          {"repeats", row.repeats},
          {"clipped", row.clipped}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  auto rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return {{"accuracy", r.accuracy},
          {"threshold", r.threshold},
          {"num_pairs", r.num_pairs},
          {"same_pairs", r.same_pairs},
          {"different_pairs", r.different_pairs},
          {"calibration_pairs", r.calibration_pairs},
          {"test_pairs", r.test_pairs},
          {"folds", r.folds},
          {"subset_size", r.subset_size ? nlohmann::json(*r.subset_size) : nlohmann::json()},
          {"calibration_fallback", r.calibration_fallback},
          {"subset_clipped", r.subset_clipped},
          {"seed", r.seed},
          {"backend", r.backend},
          {"protocol", r.protocol},
          {"wall_time_seconds", r.wall_time_seconds},
          {"rows", rows}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.accuracy = j.at("accuracy").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.num_pairs = j.at("num_pairs").get<std::size_t>();
    r.same_pairs = j.at("same_pairs").get<std::size_t>();
    r.different_pairs = j.at("different_pairs").get<std::size_t>();
    r.calibration_pairs = j.at("calibration_pairs").get<std::size_t>();
    r.test_pairs = j.at("test_pairs").get<std::size_t>();
    r.folds = j.at("folds").get<std::size_t>();
    if (!j.at("subset_size").is_null()) r.subset_size = j.at("subset_size").get<std::size_t>();
    r.calibration_fallback = j.at("calibration_fallback").get<bool>();
    r.subset_clipped = j.at("subset_clipped").get<bool>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.backend = j.at("backend").get<std::string>();
    r.protocol = j.at("protocol").get<std::string>();
    r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
    for (const auto& row : j.at("rows")) {
      AblationRow a;
      if (!row.at("size").is_string()) a.size = row.at("size").get<std::size_t>();
      a.accuracy = row.at("accuracy").get<double>();
      a.repeats = row.at("repeats").get<std::size_t>();
      a.clipped = row.at("clipped").get<bool>();
      r.rows.push_back(a);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("report: ") + e.what());
  }
  return r;
}

enum class ReportFormat { json, csv, markdown };

inline ReportFormat report_format_from_string(std::string_view s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  fail(ErrorCode::ValidationError, "report format must be json, csv or markdown");
}

namespace detail {

// Ablation rows, or a single row for a plain evaluation.
inline std::vector<AblationRow> table_rows(const EvalReport& r) {
  if (!r.rows.empty()) return r.rows;
  return {AblationRow{r.subset_size, r.accuracy, 1, r.subset_clipped}};
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace detail

/// JSON carries every field; csv and markdown leave out wall time so they are
/// byte-stable for a given input.
inline std::string render_report(const EvalReport& r, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::json:
      os << to_json(r).dump(2) << "\n";
      break;
    case ReportFormat::csv:
      os << "size,accuracy\n";
      for (const auto& row : detail::table_rows(r))
        os << (row.size ? std::to_string(*row.size) : std::string("full")) << "," << detail::fixed(row.accuracy, 6) << "\n";
      break;
    case ReportFormat::markdown:
      os << "| Calibration pairs | Accuracy (%) |\n";
      os << "|---|---|\n";
      for (const auto& row : detail::table_rows(r))
        os << "| " << (row.size ? std::to_string(*row.size) : std::string("Full dataset")) << (row.clipped ? " (clipped)" : "")
           << " | " << detail::fixed(100.0 * row.accuracy, 1) << " |\n";
      os << "\n";
      os << "Backend: " << r.backend << ". Protocol: " << r.protocol << ". Threshold: " << detail::fixed(r.threshold, 4)
         << ". Pairs: " << r.num_pairs << " (" << r.same_pairs << " same, " << r.different_pairs << " different). Seed: " << r.seed
         << ".\n";
      if (r.calibration_fallback) os << "\nWarning: the holdout held a single class; calibrated on all pairs.\n";
      break;
  }
  return os.str();
}

inline void emit_report(const EvalReport& r, ReportFormat format, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write report to " + path.string());
  out << render_report(r, format);
  if (!out) fail(ErrorCode::IoError, "cannot write report to " + path.string());
}

}  // namespace presenzia
