#pragma once

#include <cstdint>
#include <exception>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "samri/data_io.hpp"
#include "samri/grid.hpp"
#include "samri/model.hpp"

namespace httplib {
class Server;
}

namespace samri {

/// Row-major alternating background/foreground run lengths, starting with
/// background (so a mask whose first pixel is foreground starts with 0).
struct MaskRle {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> runs;
  bool operator==(const MaskRle&) const = default;
};

MaskRle rle_encode(const BinaryMask& mask);
/// Throws InvalidArgument unless the runs sum to height * width.
BinaryMask rle_decode(const MaskRle& rle);
nlohmann::json to_json(const MaskRle& rle);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

struct ServiceConfig {
  std::size_t max_body_bytes = 64u << 20;
  std::size_t cache_slices = 256;
  /// Exposes per-slice encoder invocation counters at /v1/health.
  bool debug = false;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Request handling, independent of the HTTP transport.
class SegmentationService {
 public:
  explicit SegmentationService(ServiceConfig cfg = {});

  void add_checkpoint(const std::string& id, std::shared_ptr<const SamModel> model);
  /// After a failed load /v1/health reports 503.
  void record_load_failure(const std::string& message);
  std::vector<std::string> checkpoint_ids() const;

  HttpResponse post_volume(const std::string& body);
  HttpResponse get_slice(const std::string& volume_id, const std::string& index);
  HttpResponse post_segment(const std::string& body);
  HttpResponse health() const;

  /// Encoder runs for one slice of one volume, summed over checkpoints.
  std::size_t encoder_invocations(const std::string& volume_id, std::size_t slice) const;
  std::size_t cached_slices() const;

 private:
  struct SessionVolume {
    Volume volume;
    int axis = 2;
    std::size_t slice_count = 0;
  };
  struct CacheEntry {
    std::once_flag once;
    ImageEmbedding embedding;
    std::exception_ptr error;
  };
  using CacheKey = std::string;

  std::shared_ptr<const SessionVolume> find_volume(const std::string& id) const;
  std::shared_ptr<const SamModel> find_checkpoint(const std::string& id) const;
  /// Returns the entry and whether it already existed.
  std::pair<std::shared_ptr<CacheEntry>, bool> cache_entry(const CacheKey& key);

  ServiceConfig cfg_;

  mutable std::shared_mutex volumes_mu_;
  std::map<std::string, std::shared_ptr<const SessionVolume>> volumes_;

  mutable std::shared_mutex models_mu_;
  std::map<std::string, std::shared_ptr<const SamModel>> models_;
  std::string default_model_;
  std::string load_failure_;

  mutable std::mutex cache_mu_;
  std::list<CacheKey> lru_;  // front = most recent
  std::unordered_map<CacheKey, std::pair<std::shared_ptr<CacheEntry>, std::list<CacheKey>::iterator>> cache_;
  std::map<std::string, std::size_t> invocations_;  // "volume/slice" -> count
};

/// Binds the service's routes to an httplib server running on its own thread.
class HttpServer {
 public:
  explicit HttpServer(SegmentationService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port. Throws IoError.
  int start(const std::string& host, int port);
  /// Blocks serving on the calling thread.
  void run(const std::string& host, int port);
  void stop();

 private:
  void install_routes();
  SegmentationService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

/// "host:port"; the default is 127.0.0.1:8471. Throws InvalidArgument.
std::pair<std::string, int> parse_address(const std::string& addr);

}  // namespace samri
