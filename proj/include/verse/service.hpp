#pragma once

// Session-based interactive segmentation over a JSON/HTTP protocol.
//
// POST /sessions                          PNG body (raw or multipart field "image")
// POST /sessions/{id}/targets/{t}/auto
// POST /sessions/{id}/targets/{t}/clicks  {"x", "y", "polarity", optional "mode"}
// POST /sessions/{id}/targets/{t}/undo
// GET  /sessions/{id}
//
// Errors are {"error": code, "message": text}. Requests to one session are
// serialized by a per-session lock; concurrent callers queue.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "verse/interactive.hpp"

namespace httplib {
class Server;
}

namespace verse {

/// Row-major run lengths, starting with a (possibly zero) run of background.
std::vector<std::int64_t> rle_encode(const Mask& mask);
Mask rle_decode(const std::vector<std::int64_t>& counts, int height, int width);

struct ServiceLimits {
  /// Uploads whose longer side exceeds this are rejected.
  int max_upload_side = 4096;
  /// Images not divisible by 8 or larger than this are resized to resize_to x resize_to.
  int resize_to = 256;
  int max_sessions = 64;
};

/// An error with an HTTP status and a stable code string.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

/// Maps any exception to (status, error body).
std::pair<int, nlohmann::json> error_response(const std::exception& e);

class SessionManager {
 public:
  SessionManager(std::shared_ptr<const InteractiveModel> model, std::map<int, std::string> target_names,
                 ServiceLimits limits = {});

  nlohmann::json create_session(const std::string& png_bytes);
  nlohmann::json auto_segment(const std::string& session_id, int target_id, bool with_png = false);
  /// mode overrides the lineage (2 or 3) before the first click of a target.
  nlohmann::json add_click(const std::string& session_id, int target_id, double x, double y,
                           const std::string& polarity, std::optional<int> mode = std::nullopt,
                           bool with_png = false);
  nlohmann::json undo(const std::string& session_id, int target_id, bool with_png = false);
  nlohmann::json get_state(const std::string& session_id);
  bool remove(const std::string& session_id);

  std::size_t session_count() const;
  const std::map<int, std::string>& target_names() const { return names_; }

 private:
  struct TargetState {
    int lineage = 0;  // 0 until the first auto or click, then 2 or 3
    bool has_auto = false;
    Tensor<float> auto_prob;
    std::vector<Click> history;
    /// Click coordinates as received, before rescaling.
    std::vector<std::array<double, 2>> raw;
    Tensor<float> prob;
  };
  struct Session {
    std::mutex mutex;
    std::string id;
    Image image;
    int original_height = 0;
    int original_width = 0;
    bool converted_to_gray = false;
    bool resized = false;
    std::shared_ptr<const ImageContext> context;
    std::map<int, TargetState> targets;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  void check_target(int target_id) const;
  Tensor<float> replay(const Session& s, int target_id, const TargetState& t) const;
  nlohmann::json mask_payload(const Session& s, int target_id, const TargetState& t, bool with_png) const;
  nlohmann::json target_state_json(const Session& s, int target_id, const TargetState& t) const;

  std::shared_ptr<const InteractiveModel> model_;
  std::map<int, std::string> names_;
  ServiceLimits limits_;
  mutable std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

/// Registers the JSON routes on server.
void install_routes(httplib::Server& server, SessionManager& manager);

/// Blocks serving on host:port.
void serve(SessionManager& manager, const std::string& host, int port);

}  // namespace verse
