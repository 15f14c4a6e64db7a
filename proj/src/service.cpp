#include "samri/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "samri/error.hpp"
#include "samri/preprocess.hpp"
#include "samri/prompts.hpp"

namespace samri {

// ---- RLE and base64 ---------------------------------------------------------------

MaskRle rle_encode(const BinaryMask& mask) {
  MaskRle r{mask.height, mask.width, {}};
  std::uint8_t current = 0;
  std::size_t run = 0;
  for (auto v : mask.data) {
    const std::uint8_t b = v != 0;
    if (b != current) {
      r.runs.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  r.runs.push_back(run);
  return r;
}

BinaryMask rle_decode(const MaskRle& rle) {
  std::size_t total = 0;
  for (auto n : rle.runs) total += n;
  if (total != rle.height * rle.width)
    throw Error(ErrorCode::InvalidArgument, "RLE runs sum to " + std::to_string(total) + ", expected " +
                                                std::to_string(rle.height * rle.width));
  BinaryMask m(rle.height, rle.width);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < rle.runs.size(); ++i) {
    const std::uint8_t v = i % 2;
    for (std::size_t k = 0; k < rle.runs[i]; ++k) m.data[pos++] = v;
  }
  return m;
}

nlohmann::json to_json(const MaskRle& rle) {
  return {{"height", rle.height}, {"width", rle.width}, {"runs", rle.runs}};
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    const bool two = i + 1 < bytes.size();
    const std::uint32_t v = (bytes[i] << 16) | (two ? bytes[i + 1] << 8 : 0);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += two ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4) throw Error(ErrorCode::InvalidArgument, "base64 length not a multiple of 4");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      int d = 0;
      if (c == '=') {
        ++pad;
      } else {
        d = val(c);
        if (d < 0 || pad) throw Error(ErrorCode::InvalidArgument, "invalid base64");
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

// ---- service ----------------------------------------------------------------------

namespace {

HttpResponse json_response(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"error", code}, {"message", message}});
}

HttpResponse error_response(int status, const Error& e) {
  return error_response(status, std::string(error_code_name(e.code())), e.what());
}

std::string new_uuid() {
  static std::mutex mu;
  static std::mt19937_64 gen{std::random_device{}()};
  std::uint64_t hi, lo;
  {
    std::lock_guard lock(mu);
    hi = gen();
    lo = gen();
  }
  hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;  // version 4
  lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;  // RFC 4122 variant
  char buf[37];
  std::snprintf(buf, sizeof buf, "%08llx-%04llx-%04llx-%04llx-%012llx", static_cast<unsigned long long>(hi >> 32),
                static_cast<unsigned long long>((hi >> 16) & 0xFFFF), static_cast<unsigned long long>(hi & 0xFFFF),
                static_cast<unsigned long long>(lo >> 48), static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
  return buf;
}

bool parse_index(const std::string& s, std::size_t& out) {
  if (s.empty() || s.size() > 18) return false;
  out = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    out = out * 10 + static_cast<std::size_t>(c - '0');
  }
  return true;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Gray slice resized to the encoder's input size when needed.
RgbImage model_input(const Grid2<float>& slice, std::size_t size) {
  if (slice.height == size && slice.width == size) return normalize_to_u8(slice);
  return normalize_to_u8(resize_bilinear(slice, size, size));
}

}  // namespace

SegmentationService::SegmentationService(ServiceConfig cfg) : cfg_(cfg) {
  if (cfg_.cache_slices == 0) cfg_.cache_slices = 1;
}

void SegmentationService::add_checkpoint(const std::string& id, std::shared_ptr<const SamModel> model) {
  std::unique_lock lock(models_mu_);
  if (models_.empty()) default_model_ = id;
  models_[id] = std::move(model);
}

void SegmentationService::record_load_failure(const std::string& message) {
  std::unique_lock lock(models_mu_);
  load_failure_ = message;
}

std::vector<std::string> SegmentationService::checkpoint_ids() const {
  std::shared_lock lock(models_mu_);
  std::vector<std::string> ids;
  for (const auto& [id, m] : models_) ids.push_back(id);
  return ids;
}

std::shared_ptr<const SegmentationService::SessionVolume> SegmentationService::find_volume(const std::string& id) const {
  std::shared_lock lock(volumes_mu_);
  auto it = volumes_.find(id);
  return it == volumes_.end() ? nullptr : it->second;
}

std::shared_ptr<const SamModel> SegmentationService::find_checkpoint(const std::string& id) const {
  std::shared_lock lock(models_mu_);
  auto it = models_.find(id.empty() ? default_model_ : id);
  return it == models_.end() ? nullptr : it->second;
}

HttpResponse SegmentationService::post_volume(const std::string& body) {
  if (body.size() > cfg_.max_body_bytes)
    return error_response(413, "PayloadTooLarge", "body exceeds " + std::to_string(cfg_.max_body_bytes) + " bytes");
  auto v = std::make_shared<SessionVolume>();
  try {
    v->volume = read_volume_bytes(std::as_bytes(std::span(body.data(), body.size())));
    v->volume.validate();
  } catch (const Error& e) {
    return error_response(400, e);
  } catch (const std::exception& e) {
    return error_response(400, "InvalidArgument", e.what());
  }
  v->axis = slicing_axis(v->volume.dims);
  v->slice_count = v->volume.dims[static_cast<std::size_t>(v->axis)];
  const auto id = new_uuid();
  const auto dims = v->volume.dims;
  const auto axis = v->axis;
  const auto count = v->slice_count;
  {
    std::unique_lock lock(volumes_mu_);
    volumes_[id] = std::move(v);
  }
  return json_response(200, {{"volume_id", id}, {"dims", dims}, {"slice_axis", axis}, {"slice_count", count}});
}

HttpResponse SegmentationService::get_slice(const std::string& volume_id, const std::string& index) {
  const auto v = find_volume(volume_id);
  if (!v) return error_response(404, "NotFound", "unknown volume " + volume_id);
  std::size_t k = 0;
  if (!parse_index(index, k) || k >= v->slice_count)
    return error_response(404, "NotFound", "slice " + index + " outside [0, " + std::to_string(v->slice_count) + ")");
  const auto gray = gray_channel(normalize_to_u8(extract_image_slice(v->volume, v->axis, k)));
  return json_response(200, {{"width", gray.width}, {"height", gray.height}, {"pixels_b64", base64_encode(gray.data)}});
}

std::pair<std::shared_ptr<SegmentationService::CacheEntry>, bool> SegmentationService::cache_entry(const CacheKey& key) {
  std::lock_guard lock(cache_mu_);
  if (auto it = cache_.find(key); it != cache_.end()) {
    lru_.splice(lru_.begin(), lru_, it->second.second);
    return {it->second.first, true};
  }
  lru_.push_front(key);
  auto entry = std::make_shared<CacheEntry>();
  cache_.emplace(key, std::make_pair(entry, lru_.begin()));
  while (cache_.size() > cfg_.cache_slices) {
    cache_.erase(lru_.back());
    lru_.pop_back();
  }
  return {entry, false};
}

HttpResponse SegmentationService::post_segment(const std::string& body) {
  const auto t0 = std::chrono::steady_clock::now();
  if (body.size() > cfg_.max_body_bytes) return error_response(413, "PayloadTooLarge", "request body too large");
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "InvalidArgument", std::string("malformed JSON: ") + e.what());
  }

  std::string volume_id, checkpoint_id;
  std::size_t slice = 0;
  std::array<long long, 4> box{};
  std::vector<PointPrompt> points;
  try {
    volume_id = req.at("volume_id").get<std::string>();
    slice = req.at("slice").get<std::size_t>();
    const auto& b = req.at("box");
    if (!b.is_array() || b.size() != 4) return error_response(400, "InvalidArgument", "box must be [x0,y0,x1,y1]");
    for (std::size_t i = 0; i < 4; ++i) box[i] = b[i].get<long long>();
    if (req.contains("points"))
      for (const auto& p : req["points"]) {
        PointPrompt pp;
        pp.x = p.at("x").get<int>();
        pp.y = p.at("y").get<int>();
        const int label = p.value("label", 1);
        if (label != 0 && label != 1) return error_response(400, "InvalidArgument", "point label must be 0 or 1");
        pp.label = label == 1 ? PointLabel::Foreground : PointLabel::Background;
        points.push_back(pp);
      }
    checkpoint_id = req.value("checkpoint_id", std::string());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "InvalidArgument", e.what());
  }

  const auto v = find_volume(volume_id);
  if (!v) return error_response(404, "NotFound", "unknown volume " + volume_id);
  if (slice >= v->slice_count) return error_response(404, "NotFound", "slice outside volume");
  const auto model = find_checkpoint(checkpoint_id);
  if (!model) return error_response(404, "NotFound", "unknown checkpoint " + checkpoint_id);

  const auto image = extract_image_slice(v->volume, v->axis, slice);
  const std::size_t w = image.width, h = image.height;
  PromptSet prompts;
  // half-open wire box to the inclusive internal box
  auto narrow = [](long long x) {
    return static_cast<int>(std::clamp<long long>(x, std::numeric_limits<int>::min() / 2, std::numeric_limits<int>::max() / 2));
  };
  prompts.box = {narrow(box[0]), narrow(box[1]), narrow(box[2] - 1), narrow(box[3] - 1)};
  prompts.points = points;
  prompts.regime = points.empty() ? PromptRegime::BoxOnly : PromptRegime::BoxPoint;
  if (!prompts.box.valid_in(w, h))
    return error_response(422, "OutOfBounds", "box is empty or outside the " + std::to_string(w) + "x" + std::to_string(h) + " slice");

  try {
    const CacheKey key = volume_id + "/" + std::to_string(slice) + "/" + hex64(model->frozen_hash());
    auto [entry, existed] = cache_entry(key);
    bool computed_here = false;
    std::call_once(entry->once, [&] {
      try {
        entry->embedding = model->encode_image(model_input(image, model->config().img_size));
        std::lock_guard lock(cache_mu_);
        ++invocations_[volume_id + "/" + std::to_string(slice)];
      } catch (...) {
        entry->error = std::current_exception();
      }
      computed_here = true;
    });
    if (entry->error) std::rethrow_exception(entry->error);

    tensor::NoGradGuard no_grad;
    const auto tokens = model->encode_prompts(prompts, w, h);
    const auto logits = model->decode_mask(entry->embedding, tokens, h, w);
    const auto mask = predict_mask(logits.upsampled);
    const auto lr = logits.lowres.values();
    const auto [mn, mx] = std::minmax_element(lr.begin(), lr.end());
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return json_response(200, {{"mask", to_json(rle_encode(mask))},
                               {"lowres_logit_stats", {{"min", *mn}, {"max", *mx}}},
                               {"cache_hit", existed && !computed_here},
                               {"latency_ms", ms}});
  } catch (const Error& e) {
    if (e.code() == ErrorCode::OutOfBounds) return error_response(422, e);
    return error_response(500, e);
  }
}

HttpResponse SegmentationService::health() const {
  std::string failure;
  std::vector<std::string> ids;
  {
    std::shared_lock lock(models_mu_);
    failure = load_failure_;
    for (const auto& [id, m] : models_) ids.push_back(id);
  }
  nlohmann::json j;
  int status = 200;
  if (!failure.empty() || ids.empty()) {
    status = 503;
    j = {{"status", "unavailable"}, {"checkpoint_ids", ids},
         {"reason", failure.empty() ? "no checkpoint loaded" : failure}};
  } else {
    j = {{"status", "ok"}, {"checkpoint_ids", ids}};
  }
  if (cfg_.debug) {
    std::lock_guard lock(cache_mu_);
    nlohmann::json inv = nlohmann::json::object();
    std::size_t total = 0;
    for (const auto& [k, n] : invocations_) {
      inv[k] = n;
      total += n;
    }
    j["encoder_invocations"] = inv;
    j["encoder_invocations_total"] = total;
    j["cached_slices"] = cache_.size();
  }
  return json_response(status, j);
}

std::size_t SegmentationService::encoder_invocations(const std::string& volume_id, std::size_t slice) const {
  std::lock_guard lock(cache_mu_);
  auto it = invocations_.find(volume_id + "/" + std::to_string(slice));
  return it == invocations_.end() ? 0 : it->second;
}

std::size_t SegmentationService::cached_slices() const {
  std::lock_guard lock(cache_mu_);
  return cache_.size();
}

// ---- HTTP transport ---------------------------------------------------------------

HttpServer::HttpServer(SegmentationService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server_->Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server_->Post("/v1/volumes", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.post_volume(req.body));
  });
  server_->Get(R"(/v1/volumes/([^/]+)/slices/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.get_slice(req.matches[1], req.matches[2]));
  });
  server_->Post("/v1/segment", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.post_segment(req.body));
  });
  server_->Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service_.health()); });
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const char* code = res.status == 413 ? "PayloadTooLarge" : (res.status == 404 ? "NotFound" : "HttpError");
    res.set_content(nlohmann::json{{"error", code}, {"message", httplib::status_message(res.status)}}.dump(),
                    "application/json");
  });
}

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) bound = server_->bind_to_any_port(host);
  else if (!server_->bind_to_port(host, port)) bound = -1;
  if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::pair<std::string, int> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size())
    throw Error(ErrorCode::InvalidArgument, "address must be host:port, got " + addr);
  std::size_t port = 0;
  if (!parse_index(addr.substr(colon + 1), port) || port > 65535)
    throw Error(ErrorCode::InvalidArgument, "bad port in " + addr);
  return {addr.substr(0, colon), static_cast<int>(port)};
}

}  // namespace samri
