#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spaen/layers.hpp"
#include "spaen/tensor.hpp"

namespace spaen {

// A named differentiable map with a flat parameter vector. Forward and
// backward are const: per-call state goes into a Trace owned by the caller,
// so concurrent evaluation of one map is safe.
class ParamMap {
 public:
  struct Trace {
    std::vector<Tensor> activations;  // input of layer i, then final output
  };

  ParamMap() = default;
  ParamMap(std::string name, Shape input_shape, std::vector<LayerPtr> layers,
           bool trainable);

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  bool trainable() const { return trainable_; }

  std::size_t param_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }
  const Buffer& param_vector() const { return params_; }

  // Draws every layer's parameters from a generator seeded with `seed`.
  void initialize(std::uint64_t seed);

  // x is a batch {N, input_shape...}. Throws std::invalid_argument naming
  // this map on a shape mismatch.
  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;
  // Back-propagates through a trace recorded by forward. Returns dL/dinput
  // and accumulates dL/dparams into grad_params when it is non-empty.
  Tensor backward(const Trace& trace, const Tensor& grad_out,
                  std::span<double> grad_params = {}) const;

  std::size_t num_layers() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  std::size_t layer_offset(std::size_t i) const { return offsets_[i]; }
  std::vector<std::string> layer_kinds() const;

 private:
  std::string name_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerPtr> layers_;
  std::vector<std::size_t> offsets_;
  Buffer params_;
  bool trainable_ = true;
};

enum class Variant {
  kSpAen,        // E + F + G + D, full objective
  kClsOnly,      // E with the ranking loss only
  kDirectMap,    // E trained on cls, frozen, then G trained on G(E(x))
  kSae,          // E and G trained jointly on cls + rec(G(E(x)))
  kSplitBranch,  // E emits 2d; first half classifies, both halves decode
};

std::string variant_name(Variant v);
// Accepts the canonical names plus a few spellings ("sp-aen", "cls-only").
Variant parse_variant(const std::string& name);
bool has_decoder(Variant v);

struct NetConfig {
  std::size_t embedding_dim = 24;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::vector<std::size_t> trunk_channels{8, 16};
  std::size_t head_hidden = 128;
  std::size_t f_hidden = 128;
  std::size_t g_hidden = 128;
  std::size_t g_base_channels = 16;
  std::vector<std::size_t> g_channels{16, 8};
  std::size_t critic_hidden = 64;
  std::vector<std::size_t> phi_channels{8, 16, 16};
  double leaky_slope = 0.2;
  std::string init_scheme = "msra";
  Variant variant = Variant::kSpAen;
  std::uint64_t seed = 0;

  Shape image_shape() const { return {channels, height, width}; }
  void validate() const;
};

// SplitBranch merge: per-branch affine maps, concatenation, fusing affine.
struct SplitMerge {
  ParamMap cls_branch;
  ParamMap rec_branch;
  ParamMap fuse;
};

struct ModelBundle {
  NetConfig config;
  ParamMap e_trunk;  // frozen
  ParamMap e_head;
  ParamMap f;
  ParamMap g;
  ParamMap d;
  ParamMap phi;  // frozen
  std::optional<SplitMerge> merge;

  Variant variant() const { return config.variant; }
  // Every map, frozen ones included, in a fixed order.
  std::vector<const ParamMap*> maps() const;
  std::vector<ParamMap*> mutable_maps();
};

// Throws std::invalid_argument on a bad config, or when expected_attributes
// is given and differs from config.embedding_dim.
ModelBundle build_models(const NetConfig& config,
                         std::optional<int> expected_attributes = std::nullopt);

// E(x): N x d (N x 2d for SplitBranch).
Tensor embed_discriminative(const ModelBundle& bundle, const Tensor& images);
// The part of E(x) scored against class embeddings: N x d.
Tensor classification_embedding(const ModelBundle& bundle, const Tensor& images);
// Same, from precomputed E-trunk features.
Tensor classification_embedding_from_features(const ModelBundle& bundle,
                                              const Tensor& trunk_features);
// Decoder path of the variant. Throws for ClsOnly.
Tensor reconstruct(const ModelBundle& bundle, const Tensor& images);
// Applies the SplitBranch merge to an N x 2d embedding.
Tensor merge_forward(const SplitMerge& merge, const Tensor& e_out,
                     std::vector<ParamMap::Trace>* traces = nullptr);

// Scalar loss of a map's output; writes dL/doutput when grad is non-null.
using OutputLoss = std::function<double(const Tensor& output, Tensor* grad)>;

struct GradCheckOptions {
  double eps = 1e-6;
  std::size_t max_coordinates = 48;  // random subset of parameters/inputs
  std::uint64_t seed = 0;
};

// Largest relative error |analytic - numeric| / max(|analytic| + |numeric|, 1e-6)
// between back-propagated and central-difference gradients. Trainable maps
// are checked w.r.t. parameters, frozen maps w.r.t. the input.
double grad_check(const ParamMap& map, const OutputLoss& loss, const Tensor& input,
                  const GradCheckOptions& options = {});

}  // namespace spaen
