#pragma once

// Cloud-side map aggregation.
//
// The append-only observation log is the source of truth: one JSON line per
// acknowledged ingest batch, {"revision": r, "observations": [...]}. State is
// a pure function of (seed landmarks, log), so recovery is a replay. An
// optional snapshot file short-circuits the replay of a log prefix.

#include "crowdmap/errors.hpp"
#include "crowdmap/io.hpp"
#include "crowdmap/log.hpp"
#include "crowdmap/matching.hpp"
#include "crowdmap/triangulate.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace crowdmap {

struct MapState {
  LandmarkTable landmarks;
  std::vector<LandmarkObservation> unmatched_pool;
  std::uint64_t revision = 0;
};

struct IngestConfig {
  double gate_radius = kDefaultGateRadius;
  Objective objective = Objective::heading;
};

struct IngestReport {
  std::size_t matched = 0;
  std::size_t unmatched = 0;
  std::vector<LandmarkId> updated_landmark_ids;
  std::uint64_t revision = 0;
};

inline MapState seeded_state(std::span<const SignSpec> seeds) {
  MapState s;
  for (const auto& seed : seeds) register_landmark(seed.descriptor, seed.position, s.landmarks);
  return s;
}

/// Matches every observation against the landmark estimates as they stood
/// before the batch, appends it, then re-triangulates each touched landmark
/// over its full observation history. A landmark whose re-triangulation is
/// degenerate keeps its previous estimate.
inline IngestReport apply_batch(MapState& state, std::span<const LandmarkObservation> batch,
                                const IngestConfig& config = {}) {
  if (batch.empty()) throw InputDomainError("ingest batch must be nonempty");

  IngestReport report;
  std::vector<std::pair<LandmarkObservation, std::optional<LandmarkId>>> assignments;
  assignments.reserve(batch.size());
  for (const auto& obs : batch)
    assignments.emplace_back(obs, match_observation(obs, state.landmarks, config.gate_radius));

  std::set<LandmarkId> touched;
  for (auto& [obs, id] : assignments) {
    if (id) {
      state.landmarks.at(*id).observations.push_back(std::move(obs));
      touched.insert(*id);
      ++report.matched;
    } else {
      state.unmatched_pool.push_back(std::move(obs));
      ++report.unmatched;
    }
  }

  for (const LandmarkId id : touched) {
    auto& lm = state.landmarks.at(id);
    if (lm.observations.size() < 2) continue;
    try {
      lm.estimate = triangulate(std::span<const LandmarkObservation>(lm.observations), config.objective);
      report.updated_landmark_ids.push_back(id);
    } catch (const Error& e) {
      log().warn("landmark {} ({} observations) not re-triangulated: {}", id, lm.observations.size(),
                 e.what());
    }
  }

  report.revision = ++state.revision;
  return report;
}

// ---------------------------------------------------------------------------
// Snapshot serialization

inline json to_json(const MapState& s) {
  json landmarks = json::array();
  for (const auto& [id, lm] : s.landmarks) {
    json obs = json::array();
    for (const auto& o : lm.observations) obs.push_back(to_json(o));
    landmarks.push_back({{"id", id},
                         {"sign_class", lm.descriptor.sign_class()},
                         {"text_payload", lm.descriptor.text_payload() ? json(*lm.descriptor.text_payload())
                                                                        : json(nullptr)},
                         {"estimate", lm.estimate ? to_json(*lm.estimate) : json(nullptr)},
                         {"observations", std::move(obs)}});
  }
  json unmatched = json::array();
  for (const auto& o : s.unmatched_pool) unmatched.push_back(to_json(o));
  return {{"revision", s.revision}, {"landmarks", std::move(landmarks)}, {"unmatched", std::move(unmatched)}};
}

inline MapState map_state_from_json(const json& j) {
  try {
    MapState s;
    s.revision = j.at("revision").get<std::uint64_t>();
    for (const auto& lj : j.at("landmarks")) {
      MapLandmark lm{lj.at("id").get<LandmarkId>(),
                     SignDescriptor(detail::string_field(lj, "sign_class"),
                                    detail::optional_string_field(lj, "text_payload")),
                     std::nullopt,
                     {}};
      if (!lj.at("estimate").is_null()) lm.estimate = estimate_from_json(lj.at("estimate"));
      for (const auto& oj : lj.at("observations")) lm.observations.push_back(observation_from_json(oj));
      const auto id = lm.id;
      s.landmarks.emplace(id, std::move(lm));
    }
    for (const auto& oj : j.at("unmatched")) s.unmatched_pool.push_back(observation_from_json(oj));
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed map snapshot: ") + e.what());
  } catch (const InputDomainError& e) {
    throw ParseError(std::string("malformed map snapshot: ") + e.what());
  }
}

inline std::string snapshot(const MapState& s) { return to_json(s).dump(); }

inline MapState restore(const std::string& serialized) {
  try {
    return map_state_from_json(json::parse(serialized));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed map snapshot: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Durability

/// Append-only batch log. Each append is fsync'ed before returning.
class ObservationLog {
 public:
  explicit ObservationLog(std::filesystem::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open log '" + path_.string() + "': " + std::strerror(errno));
  }
  ObservationLog(const ObservationLog&) = delete;
  ObservationLog& operator=(const ObservationLog&) = delete;
  ~ObservationLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  static std::string encode(std::uint64_t revision, std::span<const LandmarkObservation> batch) {
    json obs = json::array();
    for (const auto& o : batch) obs.push_back(to_json(o));
    return json{{"revision", revision}, {"observations", std::move(obs)}}.dump() + "\n";
  }

  void append(std::uint64_t revision, std::span<const LandmarkObservation> batch) {
    const std::string line = encode(revision, batch);
    std::size_t written = 0;
    while (written < line.size()) {
      const auto n = ::write(fd_, line.data() + written, line.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError("log write failed: " + std::string(std::strerror(errno)));
      }
      written += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw IoError("log fsync failed: " + std::string(std::strerror(errno)));
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

struct RecoveryOptions {
  std::vector<SignSpec> seeds;
  IngestConfig ingest;
  /// Snapshot accelerator; ignored when absent, unreadable or ahead of the log.
  std::optional<std::filesystem::path> snapshot_path;
  /// Cut a corrupt tail off the log file so later appends stay prefix-valid.
  bool truncate_corrupt_tail = true;
};

struct RecoveryResult {
  MapState state;
  std::size_t replayed_batches = 0;
  std::size_t valid_bytes = 0;
  bool truncated = false;
};

/// Rebuilds the map by replaying the log. Replay stops at the first record
/// that is unparsable, incomplete (no trailing newline) or out of sequence;
/// that record and everything after it are discarded with a warning.
inline RecoveryResult recover(const std::filesystem::path& log_path, const RecoveryOptions& options = {}) {
  RecoveryResult result;
  result.state = seeded_state(options.seeds);

  if (options.snapshot_path && std::filesystem::exists(*options.snapshot_path)) {
    try {
      std::ifstream in(*options.snapshot_path);
      std::stringstream ss;
      ss << in.rdbuf();
      result.state = restore(ss.str());
    } catch (const Error& e) {
      log().warn("ignoring unreadable snapshot '{}': {}", options.snapshot_path->string(), e.what());
      result.state = seeded_state(options.seeds);
    }
  }
  const std::uint64_t base_revision = result.state.revision;

  std::ifstream in(log_path, std::ios::binary);
  if (!in) return result;  // no log yet: empty history
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  std::uint64_t expected = 1;
  std::vector<std::pair<std::uint64_t, std::vector<LandmarkObservation>>> records;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      log().warn("log '{}': incomplete trailing record at byte {}", log_path.string(), pos);
      result.truncated = true;
      break;
    }
    try {
      const json j = json::parse(content.substr(pos, nl - pos));
      const auto rev = j.at("revision").get<std::uint64_t>();
      if (rev != expected) throw ParseError("revision " + std::to_string(rev) + " out of sequence");
      std::vector<LandmarkObservation> batch;
      for (const auto& oj : j.at("observations")) batch.push_back(observation_from_json(oj));
      if (batch.empty()) throw ParseError("empty batch");
      records.emplace_back(rev, std::move(batch));
    } catch (const std::exception& e) {
      log().warn("log '{}': corrupt record at byte {} ({}); recovering the valid prefix",
                 log_path.string(), pos, e.what());
      result.truncated = true;
      break;
    }
    ++expected;
    pos = nl + 1;
  }
  result.valid_bytes = pos;

  if (base_revision > records.size()) {
    log().warn("snapshot revision {} is ahead of the log ({} records); replaying from seeds",
               base_revision, records.size());
    result.state = seeded_state(options.seeds);
  }
  for (const auto& [rev, batch] : records) {
    if (rev <= result.state.revision) continue;
    apply_batch(result.state, batch, options.ingest);
    ++result.replayed_batches;
  }

  if (result.truncated && options.truncate_corrupt_tail) {
    std::error_code ec;
    std::filesystem::resize_file(log_path, result.valid_bytes, ec);
    if (ec) log().warn("could not truncate log '{}': {}", log_path.string(), ec.message());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Service

struct ServiceConfig {
  std::filesystem::path log_path;
  std::vector<SignSpec> seeds;
  IngestConfig ingest;
  std::optional<std::filesystem::path> snapshot_path;
  std::uint64_t snapshot_every = 100;  // revisions; 0 disables
};

/// Single-writer map service. Ingests are serialized and acknowledged only
/// after the batch is on disk; readers get immutable published states and
/// never wait on the writer.
class MapService {
 public:
  explicit MapService(ServiceConfig config) : config_(std::move(config)) {
    RecoveryOptions ro{config_.seeds, config_.ingest, config_.snapshot_path, true};
    auto recovered = recover(config_.log_path, ro);
    if (recovered.replayed_batches > 0 || recovered.state.revision > 0)
      log().info("recovered revision {} ({} batches replayed)", recovered.state.revision,
                 recovered.replayed_batches);
    log_ = std::make_unique<ObservationLog>(config_.log_path);
    publish(std::make_shared<const MapState>(std::move(recovered.state)));
  }

  IngestReport ingest(std::span<const LandmarkObservation> batch) {
    std::lock_guard writer(writer_mutex_);
    auto next = std::make_shared<MapState>(*current());
    const IngestReport report = apply_batch(*next, batch, config_.ingest);
    log_->append(report.revision, batch);
    publish(next);
    if (config_.snapshot_path && config_.snapshot_every > 0 && report.revision % config_.snapshot_every == 0)
      write_snapshot_file(*next);
    return report;
  }

  std::shared_ptr<const MapState> current() const {
    std::lock_guard lock(publish_mutex_);
    return published_;
  }

  std::string snapshot() const { return crowdmap::snapshot(*current()); }

  const ServiceConfig& config() const noexcept { return config_; }

 private:
  void publish(std::shared_ptr<const MapState> state) {
    std::lock_guard lock(publish_mutex_);
    published_ = std::move(state);
  }

  void write_snapshot_file(const MapState& state) const {
    const auto tmp = config_.snapshot_path->string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << crowdmap::snapshot(state);
      if (!out) {
        log().warn("failed writing snapshot '{}'", tmp);
        return;
      }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, *config_.snapshot_path, ec);
    if (ec) log().warn("failed publishing snapshot: {}", ec.message());
  }

  ServiceConfig config_;
  std::unique_ptr<ObservationLog> log_;
  std::mutex writer_mutex_;
  mutable std::mutex publish_mutex_;  // guards only the pointer swap
  std::shared_ptr<const MapState> published_;
};

}  // namespace crowdmap
