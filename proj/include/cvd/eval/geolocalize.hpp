#pragma once

#include "cvd/eval/retrieval.hpp"
#include "cvd/models/convnext.hpp"

namespace cvd {

/// Embedding of one image under the Siamese encoder, in binary64.
template <typename Scalar>
Eigen::VectorXd embed_image(const Tensor<Scalar>& image, const ConvNeXtConfig& cfg, const ParamSet<Scalar>& params) {
  Tape<Scalar> tape;
  BoundParams<Scalar> p(tape, params);
  const auto e = convnext_encode(tape.constant(image), cfg, p).value();
  return e.values().template cast<double>();
}

/// Coordinates of the gallery entry that best matches a street image.
template <typename Scalar>
GeoFix geolocalize(const Tensor<Scalar>& street, const ConvNeXtConfig& cfg, const ParamSet<Scalar>& params,
                   const EmbeddingIndex& index) {
  return geolocalize_embedding(embed_image(street, cfg, params), index);
}

}  // namespace cvd
