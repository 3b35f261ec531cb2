#pragma once

#include <memory>
#include <optional>

#include "verse/clicks.hpp"

namespace verse {

/// One prompt: Mode-1 (object queries only), Mode-2 (object queries plus
/// clicks) or Mode-3 (clicks only). Mode-1 ignores clicks and prev_mask.
struct PromptRequest {
  int mode = 3;
  std::optional<int> target_id;
  ClickSet clicks;
  /// [H, W] previous probabilities; undefined means all zero.
  Tensor<float> prev_mask;
};

/// Per-image state a model may cache between prompts (e.g. encoder features).
class ImageContext {
 public:
  virtual ~ImageContext() = default;
  virtual int height() const = 0;
  virtual int width() const = 0;
};

/// Inference surface shared by the evaluator, the simulator and the service.
class InteractiveModel {
 public:
  virtual ~InteractiveModel() = default;
  virtual int num_targets() const = 0;
  virtual std::shared_ptr<const ImageContext> prepare(const Image& image) const = 0;
  /// [H, W] foreground probabilities.
  virtual Tensor<float> predict(const ImageContext& context, const PromptRequest& request) const = 0;
};

}  // namespace verse
