#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string_view>
#include <vector>

namespace vasparse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using TokenId = int;

/// End-of-sequence id in the toy vocabulary.
inline constexpr TokenId kEosToken = 0;

enum class Modality : std::uint8_t { image, text_prompt, generated };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);

/// Image tokens occupy positions [0, num_image); prompt and generated tokens follow.
struct TokenSequence {
  std::vector<TokenId> tokens;
  std::vector<Modality> modalities;

  std::size_t size() const { return tokens.size(); }
  int num_image_tokens() const;
  bool is_image(int position) const {
    return modalities[static_cast<std::size_t>(position)] == Modality::image;
  }
  /// Checks the contiguous-image-prefix and tag-partition invariants.
  bool valid() const;
};

}  // namespace vasparse
