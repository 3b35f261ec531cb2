#include <gtest/gtest.h>
#include <httplib.h>
#include <png.h>

#include <chrono>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "verse/model.hpp"
#include "verse/png_io.hpp"
#include "verse/service.hpp"
#include "verse/training.hpp"

using namespace verse;
using nlohmann::json;

namespace {

std::string gray_png(int w, int h, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng() & 0xff);
  const auto bytes = png::encode_gray8(w, h, px);
  return {bytes.begin(), bytes.end()};
}

std::string rgb_png(int w, int h) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>((i * 37) & 0xff);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  png_image_write_to_memory(&img, nullptr, &size, 0, px.data(), 0, nullptr);
  std::string out(size, '\0');
  png_image_write_to_memory(&img, out.data(), &size, 0, px.data(), 0, nullptr);
  out.resize(size);
  return out;
}

Mask mask_of(const json& payload) {
  const auto& m = payload.at("mask");
  return rle_decode(m.at("counts").get<std::vector<std::int64_t>>(), m.at("height").get<int>(), m.at("width").get<int>());
}

std::map<int, std::string> names() { return {{0, "LV"}, {1, "Myo"}, {2, "RV"}}; }

/// SessionManager served on an ephemeral localhost port.
class LiveServer {
 public:
  explicit LiveServer(std::shared_ptr<const InteractiveModel> model, ServiceLimits limits = {})
      : manager(std::move(model), names(), limits) {
    install_routes(server_, manager);
    port = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LiveServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }

  SessionManager manager;
  int port = 0;

 private:
  httplib::Server server_;
  std::thread thread_;
};

std::shared_ptr<const InteractiveModel> paint_model() { return std::make_shared<oracle::PaintStub>(3); }

json post_json(httplib::Client& c, const std::string& path, const json& body, int expect_status) {
  auto r = c.Post(path, body.dump(), "application/json");
  EXPECT_TRUE(r);
  if (!r) return {};
  EXPECT_EQ(r->status, expect_status) << path << " " << r->body;
  return json::parse(r->body);
}

std::string new_session(httplib::Client& c, const std::string& png) {
  auto r = c.Post("/sessions", png, "image/png");
  EXPECT_TRUE(r);
  EXPECT_EQ(r->status, 201) << r->body;
  return json::parse(r->body).at("session_id").get<std::string>();
}

json click(httplib::Client& c, const std::string& sid, int t, double x, double y, const std::string& pol,
           int expect = 200) {
  return post_json(c, "/sessions/" + sid + "/targets/" + std::to_string(t) + "/clicks",
                   {{"x", x}, {"y", y}, {"polarity", pol}}, expect);
}

}  // namespace

TEST(Rle, KnownExampleAndRoundTrip) {
  const Mask m({2, 3}, std::vector<std::uint8_t>{0, 0, 1, 1, 0, 1});
  EXPECT_EQ(rle_encode(m), (std::vector<std::int64_t>{2, 2, 1, 1}));
  const Mask lead({1, 3}, std::vector<std::uint8_t>{1, 1, 0});
  EXPECT_EQ(rle_encode(lead), (std::vector<std::int64_t>{0, 2, 1}));
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Mask r = oracle::random_mask(13, 17, rng);
    const Mask back = rle_decode(rle_encode(r), 13, 17);
    EXPECT_TRUE(std::equal(r.values().begin(), r.values().end(), back.values().begin()));
  }
  EXPECT_THROW(rle_decode({2, 2}, 2, 3), FormatError);
  EXPECT_THROW(rle_decode({2, -1, 5}, 2, 3), FormatError);
}

TEST(Service, CreateSessionVariants) {
  LiveServer srv(paint_model());
  auto c = srv.client();
  auto r = c.Post("/sessions", gray_png(64, 64), "image/png");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  json j = json::parse(r->body);
  EXPECT_EQ(j["height"], 64);
  EXPECT_FALSE(j["resized"].get<bool>());
  EXPECT_FALSE(j["converted_to_gray"].get<bool>());

  r = c.Post("/sessions", gray_png(1000, 1000), "image/png");
  j = json::parse(r->body);
  EXPECT_EQ(j["height"], 256);
  EXPECT_EQ(j["width"], 256);
  EXPECT_EQ(j["original_width"], 1000);
  EXPECT_TRUE(j["resized"].get<bool>());
  EXPECT_DOUBLE_EQ(j["scale_x"].get<double>(), 0.256);
  EXPECT_DOUBLE_EQ(j["scale_y"].get<double>(), 0.256);

  r = c.Post("/sessions", rgb_png(48, 40), "image/png");
  j = json::parse(r->body);
  EXPECT_EQ(r->status, 201);
  EXPECT_TRUE(j["converted_to_gray"].get<bool>());
  EXPECT_FALSE(j["resized"].get<bool>());

  r = c.Post("/sessions", gray_png(60, 60), "image/png");
  EXPECT_TRUE(json::parse(r->body)["resized"].get<bool>());

  httplib::MultipartFormDataItems items = {{"image", gray_png(32, 32), "x.png", "image/png"}};
  r = c.Post("/sessions", items);
  EXPECT_EQ(r->status, 201);

  r = c.Post("/sessions", std::string("not a png"), "image/png");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(json::parse(r->body)["error"], "bad_format");

  r = c.Post("/sessions", gray_png(4104, 8), "image/png");
  EXPECT_EQ(r->status, 422);
  EXPECT_EQ(json::parse(r->body)["error"], "limit_exceeded");
  EXPECT_EQ(srv.manager.session_count(), 5u);
}

TEST(Service, AutoSegmentDeterministicAndWellFormed) {
  LiveServer srv(paint_model());
  auto c = srv.client();
  const std::string sid = new_session(c, gray_png(64, 64));
  const json a = post_json(c, "/sessions/" + sid + "/targets/1/auto", json::object(), 200);
  const json b = post_json(c, "/sessions/" + sid + "/targets/1/auto", json::object(), 200);
  EXPECT_EQ(a["mask"], b["mask"]);
  EXPECT_EQ(a["mode"], 2);
  const Mask m = mask_of(a);
  EXPECT_EQ(m.shape(), (Shape{64, 64}));
  EXPECT_GT(std::count(m.values().begin(), m.values().end(), 1), 0);
  EXPECT_NEAR(a["mean_confidence"].get<double>(), 0.9, 1e-6);

  const json err = post_json(c, "/sessions/" + sid + "/targets/99/auto", json::object(), 404);
  EXPECT_EQ(err["error"], "unknown_target");
  const std::string msg = err["message"];
  for (const char* n : {"LV", "Myo", "RV"}) EXPECT_NE(msg.find(n), std::string::npos) << msg;
  EXPECT_EQ(post_json(c, "/sessions/nope/targets/0/auto", json::object(), 404)["error"], "not_found");
  EXPECT_EQ(post_json(c, "/sessions/" + sid + "/targets/x/auto", json::object(), 400)["error"], "bad_request");

  auto r = c.Post("/sessions/" + sid + "/targets/0/auto?png=1", "", "application/json");
  const std::string png_b64 = json::parse(r->body)["png"];
  EXPECT_FALSE(png_b64.empty());
  auto t = c.Get("/targets");
  EXPECT_EQ(json::parse(t->body)["targets"]["2"], "RV");
}

TEST(Service, ClickLimitIsTwentyFourPerPolarity) {
  LiveServer srv(paint_model());
  auto c = srv.client();
  const std::string sid = new_session(c, gray_png(64, 64));
  for (int i = 0; i < 24; ++i) click(c, sid, 0, i, 2 * i % 64, "pos");
  const json err = click(c, sid, 0, 40, 40, "pos", 422);
  EXPECT_EQ(err["error"], "limit_exceeded");
  EXPECT_NE(err["message"].get<std::string>().find("24"), std::string::npos);
  click(c, sid, 0, 40, 40, "neg");
  const json st = json::parse(c.Get("/sessions/" + sid)->body);
  EXPECT_EQ(st["targets"]["0"]["clicks"].size(), 25u);
}

TEST(Service, UndoReplayEquality) {
  LiveServer srv(paint_model());
  auto c = srv.client();
  const std::string sid = new_session(c, gray_png(64, 64));
  const json fresh = post_json(c, "/sessions/" + sid + "/targets/0/undo", json::object(), 200);
  EXPECT_TRUE(fresh["noop"].get<bool>());

  const json after_auto = post_json(c, "/sessions/" + sid + "/targets/0/auto", json::object(), 200);
  const json state_auto = json::parse(c.Get("/sessions/" + sid)->body);
  const json c1 = click(c, sid, 0, 5, 5, "pos");
  click(c, sid, 0, 30, 30, "neg");
  click(c, sid, 0, 50, 10, "pos");
  const json u = post_json(c, "/sessions/" + sid + "/targets/0/undo", json::object(), 200);
  EXPECT_FALSE(u["noop"].get<bool>());
  post_json(c, "/sessions/" + sid + "/targets/0/undo", json::object(), 200);
  const json back1 = post_json(c, "/sessions/" + sid + "/targets/0/undo", json::object(), 200);
  EXPECT_EQ(back1["mask"], after_auto["mask"]);
  EXPECT_EQ(json::parse(c.Get("/sessions/" + sid)->body), state_auto);

  const json again = click(c, sid, 0, 5, 5, "pos");
  EXPECT_EQ(again["mask"], c1["mask"]);
  post_json(c, "/sessions/" + sid + "/targets/0/undo", json::object(), 200);
  EXPECT_EQ(click(c, sid, 0, 5, 5, "pos")["mask"], c1["mask"]);
}

TEST(Service, StateReplaysOnFreshSession) {
  LiveServer srv(paint_model());
  auto c = srv.client();
  const std::string png = gray_png(1000, 1000, 3);
  const std::string sid = new_session(c, png);
  post_json(c, "/sessions/" + sid + "/targets/1/auto", json::object(), 200);
  click(c, sid, 1, 100, 120, "pos");
  click(c, sid, 1, 700, 650, "neg");
  const std::string other = new_session(c, png);
  click(c, other, 2, 400, 400, "pos");
  click(c, other, 2, 10, 990, "pos");

  const json state = json::parse(c.Get("/sessions/" + sid)->body);
  const json state2 = json::parse(c.Get("/sessions/" + other)->body);
  const std::string replay = new_session(c, png);
  post_json(c, "/sessions/" + replay + "/targets/1/auto", json::object(), 200);
  for (const auto& k : state["targets"]["1"]["clicks"]) click(c, replay, 1, k["x"], k["y"], k["polarity"]);
  for (const auto& k : state2["targets"]["2"]["clicks"]) click(c, replay, 2, k["x"], k["y"], k["polarity"]);
  const json got = json::parse(c.Get("/sessions/" + replay)->body);
  EXPECT_EQ(got["targets"]["1"], state["targets"]["1"]);
  EXPECT_EQ(got["targets"]["2"], state2["targets"]["2"]);
  EXPECT_EQ(state["targets"]["1"]["clicks"][0]["x_internal"], 25);
  EXPECT_EQ(state["targets"]["1"]["clicks"][0]["y_internal"], 30);
}

TEST(Service, ModeThreeStartsFromEmptyMask) {
  LiveServer srv(paint_model());
  auto c = srv.client();
  const std::string sid = new_session(c, gray_png(64, 64));
  const json j = click(c, sid, 0, 20, 20, "pos");
  EXPECT_EQ(j["mode"], 3);
  PromptRequest req;
  req.mode = 3;
  req.clicks.add({20, 20, Polarity::positive, 0});
  oracle::PaintStub stub(3);
  const Mask expect = binarize(stub.predict(oracle::StubContext(64, 64), req));
  const Mask got = mask_of(j);
  EXPECT_TRUE(std::equal(got.values().begin(), got.values().end(), expect.values().begin()));
}

TEST(Service, RequestErrors) {
  LiveServer srv(paint_model());
  auto c = srv.client();
  const std::string sid = new_session(c, gray_png(64, 64));
  EXPECT_EQ(click(c, sid, 0, 64, 3, "pos", 400)["error"], "out_of_bounds");
  EXPECT_EQ(click(c, sid, 0, -1, 3, "pos", 400)["error"], "out_of_bounds");
  EXPECT_EQ(click(c, sid, 0, 3, 3, "maybe", 400)["error"], "bad_request");
  auto r = c.Post("/sessions/" + sid + "/targets/0/clicks", "{nope", "application/json");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(post_json(c, "/sessions/" + sid + "/targets/0/clicks", {{"x", 1}}, 400)["error"], "bad_request");
  click(c, sid, 0, 3, 3, "pos");
  EXPECT_EQ(click(c, sid, 0, 3, 3, "pos", 400)["error"], "bad_request");
  EXPECT_EQ(post_json(c, "/sessions/" + sid + "/targets/0/clicks", {{"x", 9}, {"y", 9}, {"polarity", "pos"}, {"mode", 2}},
                      409)["error"],
            "mode_conflict");
  const json m2 =
      post_json(c, "/sessions/" + sid + "/targets/1/clicks", {{"x", 9}, {"y", 9}, {"polarity", "pos"}, {"mode", 2}}, 200);
  EXPECT_EQ(m2["mode"], 2);
  EXPECT_TRUE(m2["has_auto"].get<bool>());
  auto d = c.Delete("/sessions/" + sid);
  EXPECT_EQ(d->status, 200);
  EXPECT_EQ(c.Get("/sessions/" + sid)->status, 404);
  EXPECT_EQ(c.Delete("/sessions/" + sid)->status, 404);
}

TEST(Service, ConcurrentSessionsAndQueuedClicks) {
  LiveServer srv(paint_model());
  const std::string shared = [&] {
    auto c = srv.client();
    return new_session(c, gray_png(64, 64));
  }();
  std::vector<std::thread> workers;
  std::vector<int> failures(4, 0);
  for (int w = 0; w < 4; ++w)
    workers.emplace_back([&, w] {
      auto c = srv.client();
      auto r = c.Post("/sessions", gray_png(64, 64, 10 + w), "image/png");
      if (!r || r->status != 201) ++failures[w];
      for (int i = 0; i < 5; ++i) {
        auto k = c.Post("/sessions/" + shared + "/targets/0/clicks",
                        json{{"x", 10 * w + i}, {"y", 7 * i + w}, {"polarity", "pos"}}.dump(), "application/json");
        if (!k || k->status != 200) ++failures[w];
      }
    });
  for (auto& t : workers) t.join();
  for (int f : failures) EXPECT_EQ(f, 0);
  auto c = srv.client();
  const json st = json::parse(c.Get("/sessions/" + shared)->body);
  EXPECT_EQ(st["targets"]["0"]["clicks"].size(), 20u);
  EXPECT_EQ(srv.manager.session_count(), 5u);
}

TEST(Service, DeskModelClickLatencyUnderHalfSecond) {
  const TrainConfig desk = desk_preset();
  auto model = std::make_shared<VerseModel<float>>(desk.model, 1);
  ServiceLimits lim;
  lim.resize_to = desk.model.image_size;
  LiveServer srv(std::make_shared<VersePredictor>(model), lim);
  auto c = srv.client();
  const std::string sid = new_session(c, gray_png(desk.model.image_size, desk.model.image_size));
  post_json(c, "/sessions/" + sid + "/targets/0/auto", json::object(), 200);
  double worst = 0;
  for (int i = 0; i < 5; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    click(c, sid, 0, 5 + 9 * i, 7 + 5 * i, i % 2 ? "neg" : "pos");
    worst = std::max(worst, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  EXPECT_LT(worst, 0.5);
}

TEST(Service, RealModelUndoReplaysBothLineages) {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.set_channels(8);
  cfg.queries_per_target = 2;
  cfg.encoder.base_width = 4;
  cfg.encoder.prompt_widths = {4, 4, 8};
  cfg.decoder.heads = 2;
  cfg.decoder.ffn_dim = 16;
  cfg.decoder.num_layers = 3;
  auto model = std::make_shared<VerseModel<float>>(cfg, 5);
  LiveServer srv(std::make_shared<VersePredictor>(model));
  auto c = srv.client();
  const std::string sid = new_session(c, gray_png(32, 32, 9));
  const json after_auto = post_json(c, "/sessions/" + sid + "/targets/2/auto", json::object(), 200);
  const json first = click(c, sid, 2, 4, 4, "pos");
  click(c, sid, 2, 20, 7, "neg");
  EXPECT_EQ(post_json(c, "/sessions/" + sid + "/targets/2/undo", json::object(), 200)["mask"], first["mask"]);
  EXPECT_EQ(post_json(c, "/sessions/" + sid + "/targets/2/undo", json::object(), 200)["mask"], after_auto["mask"]);
  const json m3 = click(c, sid, 0, 10, 10, "pos");
  click(c, sid, 0, 11, 30, "neg");
  EXPECT_EQ(post_json(c, "/sessions/" + sid + "/targets/0/undo", json::object(), 200)["mask"], m3["mask"]);
}
