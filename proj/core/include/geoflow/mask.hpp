#pragma once

#include <cstdint>
#include <string>

#include "geoflow/common.hpp"

namespace geoflow {

// Which blocks of the product state are transported by the flow. Conditional
// masks pin the named source block and transport the other: ImageToText
// generates text given an image, so the image block is frozen.
enum class MaskKind : std::uint8_t { Joint = 0, ImageToText = 1, TextToImage = 2 };

struct FlowMask {
  MaskKind kind = MaskKind::Joint;
  // Classifier-free unconditional variant: same transported blocks, but the
  // conditioner block is replaced by its coupled noise draw. Affects how the
  // caller builds the endpoint state, not the mask arithmetic here.
  bool cfg_unconditional = false;

  bool transports_image() const { return kind != MaskKind::ImageToText; }
  bool transports_text() const { return kind != MaskKind::TextToImage; }
  bool conditional() const { return kind != MaskKind::Joint; }

  // Direction id fed to the velocity net's conditioning embedding.
  int dir() const { return static_cast<int>(kind); }
};

inline std::string mask_name(MaskKind k) {
  switch (k) {
    case MaskKind::Joint: return "joint";
    case MaskKind::ImageToText: return "i2t";
    case MaskKind::TextToImage: return "t2i";
  }
  return "?";
}

inline MaskKind mask_from_name(const std::string& s) {
  if (s == "joint") return MaskKind::Joint;
  if (s == "i2t") return MaskKind::ImageToText;
  if (s == "t2i") return MaskKind::TextToImage;
  throw ConfigError("unknown mask name: " + s);
}

}  // namespace geoflow
