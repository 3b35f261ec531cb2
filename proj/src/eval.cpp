#include "verse/eval.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "verse/errors.hpp"

namespace verse {

double dice(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "dice");
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

void EvalProtocol::validate() const {
  if (mode < 1 || mode > 3) throw ConfigError("protocol mode must be 1, 2 or 3");
  if (max_clicks < 1) throw ConfigError("max_clicks must be at least 1");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i - 1] < thresholds[i])) throw ConfigError("thresholds must be ascending");
}

void to_json(nlohmann::json& j, const EvalProtocol& p) {
  j = {{"mode", p.mode}, {"thresholds", p.thresholds}, {"max_clicks", p.max_clicks}, {"binarize_at", p.binarize_at}};
}

void from_json(const nlohmann::json& j, EvalProtocol& p) {
  p.mode = j.value("mode", p.mode);
  p.thresholds = j.value("thresholds", p.thresholds);
  p.max_clicks = j.value("max_clicks", p.max_clicks);
  p.binarize_at = j.value("binarize_at", p.binarize_at);
}

Trajectory simulate_trajectory(const InteractiveModel& model, const ImageContext& ctx, const Mask& gt, int target_id,
                               const EvalProtocol& protocol) {
  protocol.validate();
  if (gt.rank() != 2 || gt.dim(0) != ctx.height() || gt.dim(1) != ctx.width())
    throw ContractError("ground truth does not match the image");
  Trajectory t;
  PromptRequest req;
  req.target_id = target_id;
  Tensor<float> prob;
  if (protocol.mode == 3) {
    prob = Tensor<float>({ctx.height(), ctx.width()});
  } else {
    req.mode = 1;
    prob = model.predict(ctx, req);
  }
  Mask pred = binarize(prob, protocol.binarize_at);
  t.dice.push_back(dice(pred, gt));
  t.final_prob = prob;
  if (protocol.mode == 1) return t;

  req.mode = protocol.mode;
  if (protocol.mode == 3) req.target_id.reset();
  for (int k = 1; k <= protocol.max_clicks; ++k) {
    const std::optional<Click> c = next_click(pred, gt, k - 1);
    if (!c) {
      t.dice.push_back(t.dice.back());
      continue;
    }
    t.clicks.push_back(*c);
    try {
      req.clicks.add(*c);
    } catch (const ContractError&) {
      ++t.repeated_clicks;
    }
    req.prev_mask = prob;
    prob = model.predict(ctx, req);
    pred = binarize(prob, protocol.binarize_at);
    t.dice.push_back(dice(pred, gt));
  }
  t.final_prob = prob;
  return t;
}

int noc_from_trajectory(const std::vector<double>& dice_per_click, double target, int max_clicks) {
  const int n = std::min(static_cast<int>(dice_per_click.size()) - 1, max_clicks);
  for (int k = 0; k <= n; ++k)
    if (dice_per_click[k] >= target) return k;
  return max_clicks;
}

int noc(const InteractiveModel& model, const Sample& sample, int target_id, const EvalProtocol& protocol,
        double target_dice) {
  const auto ctx = model.prepare(sample.image);
  const Trajectory t = simulate_trajectory(model, *ctx, sample.masks.at(target_id), target_id, protocol);
  return noc_from_trajectory(t.dice, target_dice, protocol.max_clicks);
}

void aggregate(ProtocolReport& r) {
  const int len = r.protocol.mode == 1 ? 1 : r.protocol.max_clicks + 1;
  r.dice_at.assign(len, 0.0);
  r.noc.assign(r.protocol.thresholds.size(), 0.0);
  if (r.instances.empty()) return;
  for (const auto& inst : r.instances) {
    if (static_cast<int>(inst.dice_per_click.size()) != len)
      throw FormatError("instance trajectory length does not match the protocol");
    for (int n = 0; n < len; ++n) r.dice_at[n] += inst.dice_per_click[n];
    for (std::size_t i = 0; i < r.protocol.thresholds.size(); ++i)
      r.noc[i] += noc_from_trajectory(inst.dice_per_click, r.protocol.thresholds[i], r.protocol.max_clicks);
  }
  const double count = static_cast<double>(r.instances.size());
  for (auto& d : r.dice_at) d /= count;
  for (auto& n : r.noc) n /= count;
}

ProtocolReport evaluate_protocol(const InteractiveModel& model, const std::vector<Sample>& samples,
                                 const EvalProtocol& protocol) {
  protocol.validate();
  ProtocolReport r;
  r.protocol = protocol;
  for (const Sample& s : samples) {
    std::shared_ptr<const ImageContext> ctx;
    for (const auto& [target, gt] : s.masks) {
      if (std::none_of(gt.values().begin(), gt.values().end(), [](std::uint8_t v) { return v != 0; })) continue;
      if (target >= model.num_targets()) continue;
      if (!ctx) ctx = model.prepare(s.image);
      InstanceRecord rec;
      rec.sample_id = s.sample_id;
      rec.target_id = target;
      rec.dice_per_click = simulate_trajectory(model, *ctx, gt, target, protocol).dice;
      r.instances.push_back(std::move(rec));
    }
  }
  aggregate(r);
  return r;
}

double dice_at_n(const InteractiveModel& model, const std::vector<Sample>& samples, const EvalProtocol& protocol,
                 int n) {
  if (n < 0 || n > protocol.max_clicks) throw ContractError("n must be within [0, max_clicks]");
  if (protocol.mode == 1 && n != 0) throw ContractError("Mode-1 has no clicks");
  EvalProtocol p = protocol;
  p.max_clicks = std::max(n, 1);
  const ProtocolReport r = evaluate_protocol(model, samples, p);
  return r.dice_at.at(n);
}

BenchReport run_benchmark(const InteractiveModel& model, const std::vector<Sample>& samples,
                          const std::vector<EvalProtocol>& protocols) {
  BenchReport b;
  for (const auto& p : protocols) b.protocols.push_back(evaluate_protocol(model, samples, p));
  return b;
}

namespace {

std::string threshold_key(double t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "NoC%d", static_cast<int>(std::lround(t * 100)));
  return buf;
}

}  // namespace

nlohmann::json report_to_json(const BenchReport& report) {
  nlohmann::json j;
  j["meta"] = report.meta;
  j["protocols"] = nlohmann::json::array();
  for (const auto& r : report.protocols) {
    nlohmann::json p;
    p["protocol"] = r.protocol;
    p["name"] = r.protocol.name();
    nlohmann::json agg;
    agg["instances"] = r.instances.size();
    agg["dice_at"] = r.dice_at;
    agg["auto_dice"] = r.protocol.mode == 3 ? nlohmann::json(nullptr) : nlohmann::json(r.dice_at.at(0));
    for (std::size_t n = 1; n < r.dice_at.size(); ++n) agg["Dice(" + std::to_string(n) + ")"] = r.dice_at[n];
    for (std::size_t i = 0; i < r.noc.size(); ++i)
      agg[threshold_key(r.protocol.thresholds[i])] = r.protocol.mode == 1 ? nlohmann::json(nullptr) : nlohmann::json(r.noc[i]);
    p["aggregates"] = agg;
    p["instances"] = nlohmann::json::array();
    for (const auto& inst : r.instances)
      p["instances"].push_back(
          {{"sample_id", inst.sample_id}, {"target_id", inst.target_id}, {"dice_per_click", inst.dice_per_click}});
    j["protocols"].push_back(p);
  }
  return j;
}

BenchReport report_from_json(const nlohmann::json& j) {
  BenchReport b;
  try {
    b.meta = j.value("meta", nlohmann::json::object());
    for (const auto& p : j.at("protocols")) {
      ProtocolReport r;
      r.protocol = p.at("protocol").get<EvalProtocol>();
      for (const auto& inst : p.at("instances"))
        r.instances.push_back({inst.at("sample_id").get<std::string>(), inst.at("target_id").get<int>(),
                               inst.at("dice_per_click").get<std::vector<double>>()});
      aggregate(r);
      b.protocols.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  return b;
}

std::string curves_csv(const BenchReport& report) {
  std::ostringstream os;
  os << "mode,n_clicks,mean_dice\n";
  char buf[64];
  for (const auto& r : report.protocols)
    for (std::size_t n = 0; n < r.dice_at.size(); ++n) {
      std::snprintf(buf, sizeof(buf), "%d,%zu,%.6f\n", r.protocol.mode, n, r.dice_at[n]);
      os << buf;
    }
  return os.str();
}

void write_report(const BenchReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  std::ofstream js(dir / "report.json", std::ios::trunc);
  std::ofstream csv(dir / "curves.csv", std::ios::trunc);
  if (!js || !csv) throw IoError("cannot write report files under " + dir.string());
  js << report_to_json(report).dump(2) << "\n";
  csv << curves_csv(report);
  if (!js || !csv) throw IoError("report write failed under " + dir.string());
}

}  // namespace verse
