#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "verse/interactive.hpp"

namespace verse {

/// 2|P and G| / (|P| + |G|); 1 when both are empty.
double dice(const Mask& pred, const Mask& gt);

struct EvalProtocol {
  int mode = 3;
  std::vector<double> thresholds = {0.80, 0.85, 0.90, 0.95};
  int max_clicks = 20;
  float binarize_at = 0.5f;

  void validate() const;
  std::string name() const { return "mode" + std::to_string(mode); }
};

void to_json(nlohmann::json& j, const EvalProtocol& p);
void from_json(const nlohmann::json& j, EvalProtocol& p);

/// Dice after 0..max_clicks simulated clicks. Mode-1 and Mode-2 start from the
/// automatic mask, Mode-3 from the empty mask. Mode-1 never clicks.
struct Trajectory {
  std::vector<double> dice;
  std::vector<Click> clicks;
  /// Simulated clicks that repeated an earlier coordinate; they count against
  /// the budget but leave the prompt unchanged.
  int repeated_clicks = 0;
  /// Probabilities after the last step.
  Tensor<float> final_prob;
};

Trajectory simulate_trajectory(const InteractiveModel& model, const ImageContext& context, const Mask& gt,
                               int target_id, const EvalProtocol& protocol);

/// First k with dice[k] >= target, else max_clicks.
int noc_from_trajectory(const std::vector<double>& dice, double target, int max_clicks);

int noc(const InteractiveModel& model, const Sample& sample, int target_id, const EvalProtocol& protocol,
        double target_dice);

struct InstanceRecord {
  std::string sample_id;
  int target_id = 0;
  std::vector<double> dice_per_click;
};

struct ProtocolReport {
  EvalProtocol protocol;
  std::vector<InstanceRecord> instances;
  /// Mean dice after exactly n clicks, n = 0..max_clicks.
  std::vector<double> dice_at;
  /// Mean NoC per threshold; empty for Mode-1.
  std::vector<double> noc;
};

struct BenchReport {
  std::vector<ProtocolReport> protocols;
  nlohmann::json meta = nlohmann::json::object();
};

/// Recomputes dice_at and noc from the instance records.
void aggregate(ProtocolReport& report);

/// Every (sample, target) pair with a non-empty ground truth.
ProtocolReport evaluate_protocol(const InteractiveModel& model, const std::vector<Sample>& samples,
                                 const EvalProtocol& protocol);

double dice_at_n(const InteractiveModel& model, const std::vector<Sample>& samples, const EvalProtocol& protocol,
                 int n);

BenchReport run_benchmark(const InteractiveModel& model, const std::vector<Sample>& samples,
                          const std::vector<EvalProtocol>& protocols);

nlohmann::json report_to_json(const BenchReport& report);
BenchReport report_from_json(const nlohmann::json& j);
/// Columns: mode, n_clicks, mean_dice.
std::string curves_csv(const BenchReport& report);
void write_report(const BenchReport& report, const std::filesystem::path& dir);

}  // namespace verse
