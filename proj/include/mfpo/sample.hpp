#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mfpo/error.hpp"
#include "mfpo/image.hpp"

namespace mfpo {

/// Whitespace-split words. The word string is the token identity; anything
/// that needs a numeric id hashes it.
using Tokens = std::vector<std::string>;

inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

inline std::string join(const Tokens& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

enum class Difficulty { easy, medium, hard };

inline std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
  }
  return "?";
}

inline std::optional<Difficulty> difficulty_from_string(std::string_view s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "medium") return Difficulty::medium;
  if (s == "hard") return Difficulty::hard;
  return std::nullopt;
}

struct Keyword {
  std::string word;
  double score = 0.0;
  friend bool operator==(const Keyword&, const Keyword&) = default;
};

/// One preference record: prompt t, chosen y_w, rejected y_l, image m and,
/// once generated, the dispreferred image m' with the masks that produced it.
/// Instances are validated on construction and on every `with_*` update.
class PreferenceSample {
 public:
  PreferenceSample(std::string id, Tokens prompt, Tokens chosen, Tokens rejected, ImageTensor image)
      : id_(std::move(id)),
        prompt_(std::move(prompt)),
        chosen_(std::move(chosen)),
        rejected_(std::move(rejected)),
        image_(std::move(image)) {
    validate();
  }

  const std::string& id() const noexcept { return id_; }
  const Tokens& prompt() const noexcept { return prompt_; }
  const Tokens& chosen() const noexcept { return chosen_; }
  const Tokens& rejected() const noexcept { return rejected_; }
  const ImageTensor& image() const noexcept { return image_; }
  const std::optional<ImageTensor>& perturbed_image() const noexcept { return perturbed_; }
  const std::vector<Keyword>& keywords() const noexcept { return keywords_; }
  const std::vector<RegionMask>& masks() const noexcept { return masks_; }
  std::optional<double> entropy() const noexcept { return entropy_; }
  std::optional<Difficulty> difficulty() const noexcept { return difficulty_; }

  const ImageTensor& require_perturbed() const {
    if (!perturbed_) throw ValidationError("sample '" + id_ + "' has no perturbed image");
    return *perturbed_;
  }

  PreferenceSample with_keywords(std::vector<Keyword> keywords) const {
    auto out = *this;
    out.keywords_ = std::move(keywords);
    out.validate();
    return out;
  }

  PreferenceSample with_perturbation(ImageTensor perturbed, std::vector<RegionMask> masks) const {
    auto out = *this;
    out.perturbed_ = std::move(perturbed);
    out.masks_ = std::move(masks);
    out.validate();
    return out;
  }

  PreferenceSample with_difficulty(double entropy, Difficulty difficulty) const {
    auto out = *this;
    out.entropy_ = entropy;
    out.difficulty_ = difficulty;
    out.validate();
    return out;
  }

  PreferenceSample without_difficulty() const {
    auto out = *this;
    out.entropy_.reset();
    out.difficulty_.reset();
    return out;
  }

  void validate() const {
    auto fail = [&](const std::string& what) { throw ValidationError("sample '" + id_ + "': " + what); };
    if (id_.empty()) throw ValidationError("sample id must be nonempty");
    if (chosen_.empty() || rejected_.empty()) fail("chosen and rejected responses must be nonempty");
    if (chosen_ == rejected_) fail("chosen and rejected responses are identical");
    if (perturbed_ && !perturbed_->same_shape(image_)) {
      fail("perturbed image dimensions do not match the image");
    }
    for (const auto& m : masks_) {
      if (!m.matches(image_)) fail("mask '" + m.keyword() + "' dimensions do not match the image");
    }
    for (const auto& k : keywords_) {
      if (!std::isfinite(k.score)) fail("keyword '" + k.word + "' has a non-finite score");
    }
    if (entropy_.has_value() != difficulty_.has_value()) fail("entropy and difficulty must be set together");
    if (entropy_ && !(*entropy_ >= 0.0 && std::isfinite(*entropy_))) fail("entropy must be finite and >= 0");
  }

  friend bool operator==(const PreferenceSample&, const PreferenceSample&) = default;

 private:
  std::string id_;
  Tokens prompt_;
  Tokens chosen_;
  Tokens rejected_;
  ImageTensor image_;
  std::optional<ImageTensor> perturbed_;
  std::vector<Keyword> keywords_;
  std::vector<RegionMask> masks_;
  std::optional<double> entropy_;
  std::optional<Difficulty> difficulty_;
};

}  // namespace mfpo
