#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "kbtypo/common.hpp"

namespace kbtypo {

struct LabeledExample {
  std::string text;
  int label = 0;
};

struct Prediction {
  int label = 0;
  std::vector<double> probs;
};

/// Loss-gradient saliency for one text under a gold label. Component i is
/// `tokens[i]`; `chunk_index[i]` is the whitespace-delimited word of the text
/// it came from, or -1 when it may not be targeted (special tokens).
struct GradientReport {
  std::vector<std::string> tokens;
  std::vector<int> chunk_index;
  std::vector<double> component_norms;
  double loss = 0.0;

  std::size_t size() const { return component_norms.size(); }
};

inline int argmax_lowest(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Throws VictimError unless `p` is a well-formed distribution over `num_classes`.
inline void validate_prediction(const Prediction& p, int num_classes) {
  if (static_cast<int>(p.probs.size()) != num_classes)
    throw VictimError("prediction has " + std::to_string(p.probs.size()) + " probabilities, expected " +
                      std::to_string(num_classes));
  double sum = 0.0;
  for (double x : p.probs) {
    if (!std::isfinite(x) || x < 0.0) throw VictimError("prediction has a negative or non-finite probability");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw VictimError("prediction probabilities sum to " + std::to_string(sum));
  if (p.label != argmax_lowest(p.probs)) throw VictimError("prediction label is not the argmax of its probabilities");
}

inline void validate_report(const GradientReport& r) {
  if (r.tokens.size() != r.component_norms.size() || r.chunk_index.size() != r.component_norms.size())
    throw VictimError("gradient report: " + std::to_string(r.component_norms.size()) + " norms for " +
                      std::to_string(r.tokens.size()) + " tokens and " + std::to_string(r.chunk_index.size()) +
                      " word indices");
  for (double n : r.component_norms)
    if (!std::isfinite(n) || n < 0.0) throw VictimError("gradient report: negative or non-finite norm");
  if (!std::isfinite(r.loss)) throw VictimError("gradient report: non-finite loss");
}

/// The classifier under attack. Implementations must be safe for concurrent
/// const calls when `concurrent()` is true.
class Victim {
 public:
  virtual ~Victim() = default;

  virtual int num_classes() const = 0;
  virtual bool supports_gradients() const = 0;
  virtual bool concurrent() const { return true; }

  virtual Prediction predict(std::string_view text) const = 0;
  virtual GradientReport grad_norms(std::string_view text, int gold) const = 0;
};

}  // namespace kbtypo
