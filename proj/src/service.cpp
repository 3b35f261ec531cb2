#include "verse/service.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdio>

#include "verse/errors.hpp"
#include "verse/kernels.hpp"
#include "verse/png_io.hpp"

namespace verse {

std::vector<std::int64_t> rle_encode(const Mask& mask) {
  std::vector<std::int64_t> counts;
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (std::uint8_t v : mask.values()) {
    const std::uint8_t b = v != 0;
    if (b != current) {
      counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

Mask rle_decode(const std::vector<std::int64_t>& counts, int height, int width) {
  if (height < 0 || width < 0) throw ContractError("negative mask size");
  Mask m({height, width});
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::int64_t run : counts) {
    if (run < 0 || pos + static_cast<std::size_t>(run) > m.size()) throw FormatError("RLE overruns the mask");
    std::fill_n(m.data() + pos, run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != m.size()) throw FormatError("RLE length does not match the mask size");
  return m;
}

std::pair<int, nlohmann::json> error_response(const std::exception& e) {
  auto body = [](const std::string& code, const std::string& msg) {
    return nlohmann::json{{"error", code}, {"message", msg}};
  };
  if (const auto* s = dynamic_cast<const ServiceError*>(&e)) return {s->status, body(s->code, s->what())};
  if (dynamic_cast<const NotFoundError*>(&e)) return {404, body("not_found", e.what())};
  if (dynamic_cast<const LimitError*>(&e)) return {422, body("limit_exceeded", e.what())};
  if (dynamic_cast<const FormatError*>(&e)) return {400, body("bad_format", e.what())};
  if (dynamic_cast<const ContractError*>(&e)) return {400, body("bad_request", e.what())};
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return {400, body("bad_request", e.what())};
  return {500, body("internal", e.what())};
}

SessionManager::SessionManager(std::shared_ptr<const InteractiveModel> model, std::map<int, std::string> target_names,
                               ServiceLimits limits)
    : model_(std::move(model)), names_(std::move(target_names)), limits_(limits) {
  if (!model_) throw ContractError("service needs a model");
  if (limits_.resize_to < 8 || limits_.resize_to % 8 != 0) throw ConfigError("resize_to must be a multiple of 8");
}

std::size_t SessionManager::session_count() const {
  std::lock_guard lock(registry_mutex_);
  return sessions_.size();
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(registry_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

void SessionManager::check_target(int target_id) const {
  if (target_id >= 0 && target_id < model_->num_targets() && names_.count(target_id)) return;
  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [id, name] : names_) vocab[std::to_string(id)] = name;
  throw ServiceError(404, "unknown_target",
                     "unknown target " + std::to_string(target_id) + "; vocabulary: " + vocab.dump());
}

bool SessionManager::remove(const std::string& session_id) {
  std::lock_guard lock(registry_mutex_);
  return sessions_.erase(session_id) > 0;
}

nlohmann::json SessionManager::create_session(const std::string& png_bytes) {
  const png::Raster raster = png::decode(std::vector<std::uint8_t>(png_bytes.begin(), png_bytes.end()));
  if (std::max(raster.width, raster.height) > limits_.max_upload_side)
    throw LimitError("image " + std::to_string(raster.width) + "x" + std::to_string(raster.height) +
                     " exceeds the upload limit of " + std::to_string(limits_.max_upload_side) + " pixels per side");
  auto s = std::make_shared<Session>();
  s->original_height = raster.height;
  s->original_width = raster.width;
  s->converted_to_gray = raster.channels >= 3;
  Image img = image_from_raster(raster);
  const int side = limits_.resize_to;
  if (raster.height % 8 != 0 || raster.width % 8 != 0 || raster.height > side || raster.width > side) {
    Image out({side, side});
    kernels::resize_bilinear(img.data(), raster.height, raster.width, 1, out.data(), side, side);
    img = out;
    s->resized = true;
  }
  s->image = img;
  s->context = model_->prepare(img);
  {
    std::lock_guard lock(registry_mutex_);
    if (static_cast<int>(sessions_.size()) >= limits_.max_sessions)
      throw LimitError("at most " + std::to_string(limits_.max_sessions) + " concurrent sessions");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%06llu", static_cast<unsigned long long>(next_id_++));
    s->id = buf;
    sessions_[s->id] = s;
  }
  return {{"session_id", s->id},
          {"height", s->image.dim(0)},
          {"width", s->image.dim(1)},
          {"original_height", s->original_height},
          {"original_width", s->original_width},
          {"scale_y", static_cast<double>(s->image.dim(0)) / s->original_height},
          {"scale_x", static_cast<double>(s->image.dim(1)) / s->original_width},
          {"converted_to_gray", s->converted_to_gray},
          {"resized", s->resized}};
}

Tensor<float> SessionManager::replay(const Session& s, int target_id, const TargetState& t) const {
  const int h = s.image.dim(0), w = s.image.dim(1);
  Tensor<float> prob = t.lineage == 2 ? t.auto_prob : Tensor<float>({h, w});
  PromptRequest req;
  req.mode = t.lineage == 2 ? 2 : 3;
  if (req.mode == 2) req.target_id = target_id;
  for (const Click& c : t.history) {
    req.clicks.add(c);
    req.prev_mask = prob;
    prob = model_->predict(*s.context, req);
  }
  return prob;
}

nlohmann::json SessionManager::target_state_json(const Session& s, int target_id, const TargetState& t) const {
  const int h = s.image.dim(0), w = s.image.dim(1);
  const Tensor<float> prob = t.prob.defined() ? t.prob : Tensor<float>({h, w});
  const Mask bin = binarize(prob);
  double conf = 0;
  std::size_t fg = 0;
  for (std::size_t i = 0; i < prob.size(); ++i)
    if (bin[i]) {
      conf += prob[i];
      ++fg;
    }
  nlohmann::json clicks = nlohmann::json::array();
  for (std::size_t i = 0; i < t.history.size(); ++i) {
    const Click& c = t.history[i];
    clicks.push_back({{"x", t.raw[i][0]},
                      {"y", t.raw[i][1]},
                      {"x_internal", c.x},
                      {"y_internal", c.y},
                      {"polarity", to_string(c.polarity)},
                      {"order", c.order}});
  }
  return {{"target_id", target_id},
          {"target_name", names_.at(target_id)},
          {"mode", t.lineage == 0 ? nlohmann::json(nullptr) : nlohmann::json(t.lineage)},
          {"has_auto", t.has_auto},
          {"clicks", clicks},
          {"mask", {{"height", h}, {"width", w}, {"encoding", "rle-row-major"}, {"counts", rle_encode(bin)}}},
          {"mean_confidence", fg ? conf / static_cast<double>(fg) : 0.0}};
}

nlohmann::json SessionManager::mask_payload(const Session& s, int target_id, const TargetState& t,
                                            bool with_png) const {
  nlohmann::json j = target_state_json(s, target_id, t);
  j["session_id"] = s.id;
  if (with_png) {
    const Mask bin = binarize(t.prob.defined() ? t.prob : Tensor<float>({s.image.dim(0), s.image.dim(1)}));
    std::vector<std::uint8_t> samples(bin.size());
    for (std::size_t i = 0; i < bin.size(); ++i) samples[i] = bin[i] ? 255 : 0;
    const auto bytes = png::encode_gray8(s.image.dim(1), s.image.dim(0), samples);
    j["png"] = httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
  }
  return j;
}

nlohmann::json SessionManager::auto_segment(const std::string& session_id, int target_id, bool with_png) {
  const auto s = find(session_id);
  check_target(target_id);
  std::lock_guard lock(s->mutex);
  PromptRequest req;
  req.mode = 1;
  req.target_id = target_id;
  TargetState t;
  t.lineage = 2;
  t.has_auto = true;
  t.auto_prob = model_->predict(*s->context, req);
  t.prob = t.auto_prob;
  s->targets[target_id] = t;
  return mask_payload(*s, target_id, s->targets[target_id], with_png);
}

nlohmann::json SessionManager::add_click(const std::string& session_id, int target_id, double x, double y,
                                         const std::string& polarity, std::optional<int> mode, bool with_png) {
  const auto s = find(session_id);
  check_target(target_id);
  Polarity pol;
  if (polarity == "pos" || polarity == "positive")
    pol = Polarity::positive;
  else if (polarity == "neg" || polarity == "negative")
    pol = Polarity::negative;
  else
    throw ServiceError(400, "bad_request", "polarity must be 'pos' or 'neg'");
  if (mode && *mode != 2 && *mode != 3) throw ServiceError(400, "bad_request", "mode must be 2 or 3");
  if (!std::isfinite(x) || !std::isfinite(y) || x < 0 || y < 0 || x >= s->original_width || y >= s->original_height)
    throw ServiceError(400, "out_of_bounds", "click lies outside the image");

  std::lock_guard lock(s->mutex);
  TargetState& t = s->targets[target_id];
  if (mode && t.lineage != 0 && !t.history.empty() && *mode != t.lineage)
    throw ServiceError(409, "mode_conflict", "target already refines in Mode-" + std::to_string(t.lineage));
  if (mode && t.history.empty()) {
    if (*mode == 2 && !t.has_auto) {
      PromptRequest req;
      req.mode = 1;
      req.target_id = target_id;
      t.auto_prob = model_->predict(*s->context, req);
      t.has_auto = true;
    }
    t.lineage = *mode;
  }
  if (t.lineage == 0) t.lineage = 3;

  const int h = s->image.dim(0), w = s->image.dim(1);
  Click c;
  c.x = std::min(w - 1, static_cast<int>(std::floor(x * w / s->original_width)));
  c.y = std::min(h - 1, static_cast<int>(std::floor(y * h / s->original_height)));
  c.polarity = pol;
  c.order = t.history.empty() ? 0 : t.history.back().order + 1;

  PromptRequest req;
  req.mode = t.lineage;
  if (t.lineage == 2) req.target_id = target_id;
  for (const Click& o : t.history) req.clicks.add(o);
  req.clicks.add(c);
  req.prev_mask = t.prob.defined() && !(t.lineage == 3 && t.history.empty()) ? t.prob : Tensor<float>({h, w});
  t.prob = model_->predict(*s->context, req);
  t.history.push_back(c);
  t.raw.push_back({x, y});
  return mask_payload(*s, target_id, t, with_png);
}

nlohmann::json SessionManager::undo(const std::string& session_id, int target_id, bool with_png) {
  const auto s = find(session_id);
  check_target(target_id);
  std::lock_guard lock(s->mutex);
  TargetState& t = s->targets[target_id];
  nlohmann::json j;
  if (t.history.empty()) {
    j = mask_payload(*s, target_id, t, with_png);
    j["noop"] = true;
    return j;
  }
  t.history.pop_back();
  t.raw.pop_back();
  if (t.history.empty() && !t.has_auto) {
    t.lineage = 0;
    t.prob = Tensor<float>();
  } else {
    t.prob = replay(*s, target_id, t);
  }
  j = mask_payload(*s, target_id, t, with_png);
  j["noop"] = false;
  return j;
}

nlohmann::json SessionManager::get_state(const std::string& session_id) {
  const auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  nlohmann::json targets = nlohmann::json::object();
  for (const auto& [id, t] : s->targets)
    if (t.lineage != 0) targets[std::to_string(id)] = target_state_json(*s, id, t);
  return {{"session_id", s->id},
          {"height", s->image.dim(0)},
          {"width", s->image.dim(1)},
          {"original_height", s->original_height},
          {"original_width", s->original_width},
          {"scale_y", static_cast<double>(s->image.dim(0)) / s->original_height},
          {"scale_x", static_cast<double>(s->image.dim(1)) / s->original_width},
          {"converted_to_gray", s->converted_to_gray},
          {"resized", s->resized},
          {"targets", targets}};
}

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    const auto [status, body] = error_response(e);
    reply(res, status, body);
  }
}

int parse_target(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ServiceError(400, "bad_request", "target id must be an integer");
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  nlohmann::json j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ServiceError(400, "bad_request", "request body must be a JSON object");
  return j;
}

bool wants_png(const httplib::Request& req) { return req.has_param("png") && req.get_param_value("png") != "0"; }

}  // namespace

void install_routes(httplib::Server& server, SessionManager& manager) {
  server.Post("/sessions", [&manager](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::string bytes = req.body;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) throw ServiceError(400, "bad_request", "multipart upload needs an 'image' field");
        bytes = req.get_file_value("image").content;
      }
      if (bytes.empty()) throw ServiceError(400, "bad_request", "empty upload");
      reply(res, 201, manager.create_session(bytes));
    });
  });
  server.Post(R"(/sessions/([^/]+)/targets/([^/]+)/auto)", [&manager](const httplib::Request& req,
                                                                      httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager.auto_segment(req.matches[1], parse_target(req.matches[2]), wants_png(req))); });
  });
  server.Post(R"(/sessions/([^/]+)/targets/([^/]+)/clicks)", [&manager](const httplib::Request& req,
                                                                        httplib::Response& res) {
    guarded(res, [&] {
      const nlohmann::json body = parse_body(req);
      if (!body.contains("x") || !body.contains("y") || !body.contains("polarity"))
        throw ServiceError(400, "bad_request", "click needs x, y and polarity");
      std::optional<int> mode;
      if (body.contains("mode") && !body.at("mode").is_null()) mode = body.at("mode").get<int>();
      reply(res, 200,
            manager.add_click(req.matches[1], parse_target(req.matches[2]), body.at("x").get<double>(),
                              body.at("y").get<double>(), body.at("polarity").get<std::string>(), mode,
                              wants_png(req)));
    });
  });
  server.Post(R"(/sessions/([^/]+)/targets/([^/]+)/undo)", [&manager](const httplib::Request& req,
                                                                      httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager.undo(req.matches[1], parse_target(req.matches[2]), wants_png(req))); });
  });
  server.Get(R"(/sessions/([^/]+))", [&manager](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager.get_state(req.matches[1])); });
  });
  server.Delete(R"(/sessions/([^/]+))", [&manager](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!manager.remove(req.matches[1])) throw NotFoundError("unknown session '" + std::string(req.matches[1]) + "'");
      reply(res, 200, {{"deleted", true}});
    });
  });
  server.Get("/targets", [&manager](const httplib::Request&, httplib::Response& res) {
    nlohmann::json vocab = nlohmann::json::object();
    for (const auto& [id, name] : manager.target_names()) vocab[std::to_string(id)] = name;
    reply(res, 200, {{"targets", vocab}});
  });
}

void serve(SessionManager& manager, const std::string& host, int port) {
  httplib::Server server;
  install_routes(server, manager);
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace verse
