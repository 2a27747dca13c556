#pragma once

#include "vasparse/model.hpp"

namespace vasparse {

/// Cache-free causal forward pass over a whole sequence: every position's
/// attention is recomputed from scratch with a masked full-matrix softmax.
/// Row t of the result holds the next-token logits after position t.
RowMatrix reference_forward(const DecoderState& weights_source, const TokenSequence& sequence);

}  // namespace vasparse
