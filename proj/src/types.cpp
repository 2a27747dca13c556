#include "vasparse/types.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace vasparse {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::text_prompt: return "text";
    case Modality::generated: return "generated";
  }
  return "unknown";
}

Modality modality_from_string(std::string_view s) {
  if (s == "image") return Modality::image;
  if (s == "text") return Modality::text_prompt;
  if (s == "generated") return Modality::generated;
  throw std::invalid_argument("unknown modality: " + std::string(s));
}

int TokenSequence::num_image_tokens() const {
  return static_cast<int>(std::count(modalities.begin(), modalities.end(), Modality::image));
}

bool TokenSequence::valid() const {
  if (tokens.size() != modalities.size()) return false;
  bool seen_non_image = false;
  for (Modality m : modalities) {
    if (m == Modality::image && seen_non_image) return false;
    if (m != Modality::image) seen_non_image = true;
  }
  return true;
}

}  // namespace vasparse
