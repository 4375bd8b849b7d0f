#pragma once

// Sweep driver: the (transform x strength x baseline) grid over seeds,
// resumable through a cache keyed by row hash and seed, plus the per-seed
// and aggregate CSVs and the run manifest.

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mkelab/config.hpp"
#include "mkelab/error.hpp"
#include "mkelab/mke.hpp"

namespace mkelab {

inline constexpr const char* kToolVersion = "0.1.0";

/// Training allocates and frees many small matrices per epoch; keep freed
/// memory in the arena instead of returning it to the kernel each time.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 4 << 20);
  mallopt(M_TRIM_THRESHOLD, 128 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

/// One grid cell: a baseline under one transform setting.
struct SweepCell {
  ExperimentConfig cfg;
  std::string hash;  // seed-independent config hash
};

inline std::vector<SweepCell> sweep_cells(const ExperimentConfig& base, const SweepSpec& spec) {
  if (spec.empty()) throw Error(Errc::usage, "sweep axes are empty");
  const int layer = transform_layer(base.transform);
  std::vector<SweepCell> cells;
  for (const auto& [kind, strengths] : spec.axes) {
    if (strengths.empty())
      throw Error(Errc::usage, fmt::format("sweep axis '{}' has no strengths", kind));
    for (double s : strengths)
      for (Baseline b : spec.baselines) {
        SweepCell c{base, {}};
        c.cfg.transform = make_transform(kind, s, layer);
        c.cfg.baseline = b;
        c.cfg.validate();
        c.hash = config_hash(c.cfg, false);
        cells.push_back(std::move(c));
      }
  }
  return cells;
}

struct CachedResult {
  bool ok = false;
  double teacher_acc = 0.0;
  double student_acc = 0.0;
};

using SweepCache = std::map<std::pair<std::string, std::uint64_t>, CachedResult>;

inline constexpr const char* kCacheHeader = "row_hash,seed,ok,teacher_acc,student_acc";

inline SweepCache read_sweep_cache(const std::string& path) {
  SweepCache cache;
  std::ifstream f(path);
  if (!f) return cache;
  std::string line;
  std::getline(f, line);
  if (line != kCacheHeader) throw Error(Errc::io, "unexpected cache header in " + path);
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string hash, seed, ok, ta, sa;
    if (!std::getline(ss, hash, ',') || !std::getline(ss, seed, ',') ||
        !std::getline(ss, ok, ',') || !std::getline(ss, ta, ',') || !std::getline(ss, sa))
      continue;  // a torn final line from an interrupted run
    try {
      cache[{hash, std::stoull(seed)}] = {ok == "1", std::stod(ta), std::stod(sa)};
    } catch (const std::exception&) {
      continue;
    }
  }
  return cache;
}

/// Serializes lines appended by concurrent workers.
class CsvAppender {
 public:
  CsvAppender(const std::string& path, const std::string& header) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app | std::ios::binary);
    if (!out_) throw Error(Errc::io, "cannot append to " + path);
    if (fresh) write(header);
  }

  void write(const std::string& line) {
    std::lock_guard lock(mu_);
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

struct SweepOptions {
  int jobs = 1;
  /// Called after each finished seed with (done, total).
  std::function<void(int, int)> progress;
};

struct SweepOutcome {
  std::vector<ResultRow> rows;
  long computed = 0;
  long reused = 0;

  bool any_failed() const {
    for (const auto& r : rows)
      if (r.failed()) return true;
    return false;
  }
};

/// Runs every missing (cell, seed) pair of the grid and returns the full
/// table, rows in grid order and seeds ascending. Results already present
/// in `cache_path` are reused.
inline SweepOutcome run_sweep(const ExperimentConfig& base, const SweepSpec& spec,
                              const std::string& cache_path, const SweepOptions& opt = {}) {
  base.validate();
  const auto cells = sweep_cells(base, spec);
  SweepCache cache = read_sweep_cache(cache_path);
  CsvAppender appender(cache_path, kCacheHeader);
  std::mutex cache_mu;

  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < base.seeds; ++k) seeds.push_back(base.base_seed + static_cast<std::uint64_t>(k));

  SweepOutcome outcome;
  std::vector<std::uint64_t> todo;
  for (auto s : seeds) {
    bool missing = false;
    for (const auto& c : cells) missing = missing || !cache.count({c.hash, s});
    if (missing) todo.push_back(s);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::atomic<long> computed{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const std::uint64_t seed = todo[i];
      std::optional<SeedContext> ctx;
      try {
        ctx = prepare_seed(base, seed);
      } catch (const Error&) {
        // every cell of this seed is recorded as failed below
      }
      for (const auto& c : cells) {
        {
          std::lock_guard lock(cache_mu);
          if (cache.count({c.hash, seed})) continue;
        }
        CachedResult r;
        if (ctx) {
          try {
            const SeedResult sr = run_baseline(*ctx, c.cfg);
            r = {sr.ok, sr.teacher_acc, sr.student_acc};
          } catch (const Error&) {
            r = {false, ctx->teacher_eval.accuracy, 0.0};
          }
        }
        appender.write(fmt::format("{},{},{},{:.17g},{:.17g}", c.hash, seed, r.ok ? 1 : 0,
                                   r.teacher_acc, r.student_acc));
        {
          std::lock_guard lock(cache_mu);
          cache[{c.hash, seed}] = r;
        }
        ++computed;
      }
      const int d = ++done;
      if (opt.progress) opt.progress(d, static_cast<int>(todo.size()));
    }
  };
  const int jobs = std::max(1, std::min<int>(opt.jobs, static_cast<int>(todo.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  outcome.computed = computed;
  outcome.reused = static_cast<long>(cells.size() * seeds.size()) - computed;
  for (const auto& c : cells) {
    ResultRow row{c.cfg.baseline, c.cfg.transform, c.cfg.label_mode, {}};
    for (auto s : seeds) {
      const CachedResult& r = cache.at({c.hash, s});
      SeedResult sr;
      sr.seed = s;
      sr.ok = r.ok;
      sr.teacher_acc = r.teacher_acc;
      sr.student_acc = r.student_acc;
      if (!r.ok) sr.error = "training failed";
      row.seeds.push_back(sr);
    }
    outcome.rows.push_back(std::move(row));
  }
  return outcome;
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) out += result_rows_csv(r);
  return out;
}

inline constexpr const char* kSummaryHeader =
    "baseline,transform,strength,label_mode,seeds,failed,teacher_mean,teacher_std,student_mean,"
    "student_std";

/// One aggregate line per grid cell (mean and sample std over ok seeds).
inline std::string summary_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const auto& r : rows) {
    long failed = 0;
    for (const auto& s : r.seeds) failed += s.ok ? 0 : 1;
    out += fmt::format("{},{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", baseline_name(r.baseline),
                       r.transform.kind_name(), format_strength(r.transform.strength()),
                       label_mode_name(r.label_mode), r.seeds.size(), failed, r.teacher_mean(),
                       r.teacher_std(), r.student_mean(), r.student_std());
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::io, "cannot write " + path);
  f << text;
  if (!f) throw Error(Errc::io, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Run manifest; the CLI appends one JSON line per invocation.

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::string tool_version = kToolVersion;
  std::string timestamp;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

inline RunManifest make_manifest(const std::string& command, const ExperimentConfig& cfg,
                                 const std::string& out_dir) {
  RunManifest m;
  m.command = command;
  m.config_hash = config_hash(cfg);
  for (int k = 0; k < cfg.seeds; ++k) m.seeds.push_back(cfg.base_seed + static_cast<std::uint64_t>(k));
  m.output_dir = out_dir;
  m.timestamp = utc_timestamp();
  return m;
}

}  // namespace mkelab
