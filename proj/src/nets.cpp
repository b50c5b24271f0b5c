#include "spaen/nets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spaen {

ParamMap::ParamMap(std::string name, Shape input_shape, std::vector<LayerPtr> layers,
                   bool trainable)
    : name_(std::move(name)),
      input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      trainable_(trainable) {
  Shape s = input_shape_;
  std::size_t offset = 0;
  for (const auto& layer : layers_) {
    try {
      s = layer->output_shape(s);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(name_ + ": " + e.what());
    }
    offsets_.push_back(offset);
    offset += layer->param_count();
  }
  output_shape_ = s;
  params_.assign(offset, 0.0);
}

void ParamMap::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::size_t n = layers_[i]->param_count();
    if (n) layers_[i]->initialize(std::span<double>(params_).subspan(offsets_[i], n), rng);
  }
}

Tensor ParamMap::forward(const Tensor& x, Trace* trace) const {
  if (x.sample_shape() != input_shape_) {
    throw std::invalid_argument(name_ + ": expected input " + shape_string(input_shape_) +
                                ", got " + shape_string(x.sample_shape()));
  }
  if (trace) {
    trace->activations.clear();
    trace->activations.reserve(layers_.size() + 1);
    trace->activations.push_back(x);
  }
  Tensor cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::span<const double> p(params_.data() + offsets_[i], layers_[i]->param_count());
    cur = layers_[i]->forward(p, cur);
    if (trace) trace->activations.push_back(cur);
  }
  return cur;
}

Tensor ParamMap::backward(const Trace& trace, const Tensor& grad_out,
                          std::span<double> grad_params) const {
  if (trace.activations.size() != layers_.size() + 1) {
    throw std::invalid_argument(name_ + ": backward without a matching forward trace");
  }
  if (grad_out.shape != trace.activations.back().shape) {
    throw std::invalid_argument(name_ + ": gradient shape " + shape_string(grad_out.shape) +
                                " does not match output " +
                                shape_string(trace.activations.back().shape));
  }
  if (!grad_params.empty() && grad_params.size() != params_.size()) {
    throw std::invalid_argument(name_ + ": parameter gradient has wrong size");
  }
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t n = layers_[i]->param_count();
    std::span<const double> p(params_.data() + offsets_[i], n);
    std::span<double> gp;
    if (!grad_params.empty() && n) gp = grad_params.subspan(offsets_[i], n);
    g = layers_[i]->backward(p, trace.activations[i], trace.activations[i + 1], g, gp);
  }
  return g;
}

std::vector<std::string> ParamMap::layer_kinds() const {
  std::vector<std::string> out;
  for (const auto& l : layers_) out.push_back(l->kind());
  return out;
}

// ---------------------------------------------------------------------------

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kSpAen: return "spaen";
    case Variant::kClsOnly: return "cls-only";
    case Variant::kDirectMap: return "directmap";
    case Variant::kSae: return "sae";
    case Variant::kSplitBranch: return "splitbranch";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  std::string key;
  for (char c : name) {
    if (c != '-' && c != '_') key.push_back(static_cast<char>(std::tolower(c)));
  }
  if (key == "spaen" || key == "full") return Variant::kSpAen;
  if (key == "clsonly" || key == "cls") return Variant::kClsOnly;
  if (key == "directmap") return Variant::kDirectMap;
  if (key == "sae") return Variant::kSae;
  if (key == "splitbranch") return Variant::kSplitBranch;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

bool has_decoder(Variant v) { return v != Variant::kClsOnly; }

void NetConfig::validate() const {
  if (embedding_dim == 0) throw std::invalid_argument("NetConfig: d must be positive");
  if (height == 0 || width == 0 || channels == 0) {
    throw std::invalid_argument("NetConfig: image dimensions must be positive");
  }
  if (height % 8 != 0 || width % 8 != 0) {
    throw std::invalid_argument("NetConfig: image side must be a multiple of 8");
  }
  auto positive = [](const std::vector<std::size_t>& v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](std::size_t x) { return x > 0; });
  };
  if (trunk_channels.size() != 2 || !positive(trunk_channels)) {
    throw std::invalid_argument("NetConfig: trunk_channels needs two positive widths");
  }
  if (g_channels.size() != 2 || !positive(g_channels)) {
    throw std::invalid_argument("NetConfig: g_channels needs two positive widths");
  }
  if (phi_channels.size() != 3 || !positive(phi_channels)) {
    throw std::invalid_argument("NetConfig: phi_channels needs three positive widths");
  }
  if (head_hidden == 0 || f_hidden == 0 || g_hidden == 0 || g_base_channels == 0 ||
      critic_hidden == 0) {
    throw std::invalid_argument("NetConfig: widths must be positive");
  }
  if (init_scheme != "msra") {
    throw std::invalid_argument("NetConfig: unknown init scheme '" + init_scheme + "'");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("NetConfig: leaky slope outside [0, 1)");
  }
}

namespace {

LayerPtr conv(std::size_t in, std::size_t out) {
  return std::make_shared<Conv2d>(ConvGeometry{in, out, 3, 2, 1});
}
LayerPtr upconv(std::size_t in, std::size_t out) {
  return std::make_shared<ConvTranspose2d>(ConvGeometry{in, out, 4, 2, 1});
}
LayerPtr linear(std::size_t in, std::size_t out) {
  return std::make_shared<Linear>(in, out);
}
LayerPtr leaky(double slope) { return std::make_shared<LeakyRelu>(slope); }
LayerPtr relu() { return std::make_shared<LeakyRelu>(0.0); }
LayerPtr flatten(std::size_t n) { return std::make_shared<Reshape>(Shape{n}); }

// Two stride-2 conv blocks: C x H x W -> c1 x H/4 x W/4, flattened.
std::vector<LayerPtr> conv_blocks(const NetConfig& c, double slope) {
  const std::size_t flat = c.trunk_channels[1] * (c.height / 4) * (c.width / 4);
  return {conv(c.channels, c.trunk_channels[0]), leaky(slope),
          conv(c.trunk_channels[0], c.trunk_channels[1]), leaky(slope), flatten(flat)};
}

}  // namespace

ModelBundle build_models(const NetConfig& config, std::optional<int> expected_attributes) {
  config.validate();
  if (expected_attributes &&
      static_cast<std::size_t>(*expected_attributes) != config.embedding_dim) {
    throw std::invalid_argument("build_models: embedding dimension " +
                                std::to_string(config.embedding_dim) +
                                " does not match the dataset's " +
                                std::to_string(*expected_attributes) + " attributes");
  }
  const NetConfig& c = config;
  const std::size_t d = c.embedding_dim;
  const double slope = c.leaky_slope;
  const Shape image = c.image_shape();
  const std::size_t trunk_out = c.trunk_channels[1] * (c.height / 4) * (c.width / 4);
  const std::size_t e_out = c.variant == Variant::kSplitBranch ? 2 * d : d;

  ModelBundle b;
  b.config = config;
  b.e_trunk = ParamMap("E.trunk", image, conv_blocks(c, slope), false);
  b.e_head = ParamMap("E.head", {trunk_out},
                      {linear(trunk_out, c.head_hidden), leaky(slope),
                       linear(c.head_hidden, e_out)},
                      true);

  auto f_layers = conv_blocks(c, slope);
  f_layers.push_back(linear(trunk_out, c.f_hidden));
  f_layers.push_back(leaky(slope));
  f_layers.push_back(linear(c.f_hidden, d));
  b.f = ParamMap("F", image, std::move(f_layers), true);

  const std::size_t h8 = c.height / 8, w8 = c.width / 8;
  const std::size_t base = c.g_base_channels * h8 * w8;
  b.g = ParamMap("G", {d},
                 {linear(d, c.g_hidden), leaky(slope), linear(c.g_hidden, base), leaky(slope),
                  std::make_shared<Reshape>(Shape{c.g_base_channels, h8, w8}),
                  upconv(c.g_base_channels, c.g_channels[0]), leaky(slope),
                  upconv(c.g_channels[0], c.g_channels[1]), leaky(slope),
                  upconv(c.g_channels[1], c.channels), std::make_shared<Sigmoid>()},
                 true);

  b.d = ParamMap("D", {d}, {linear(d, c.critic_hidden), relu(), linear(c.critic_hidden, 1)},
                 true);

  const std::size_t phi_out = c.phi_channels[2] * h8 * w8;
  b.phi = ParamMap("phi", image,
                   {conv(c.channels, c.phi_channels[0]), relu(),
                    conv(c.phi_channels[0], c.phi_channels[1]), relu(),
                    conv(c.phi_channels[1], c.phi_channels[2]), relu(), flatten(phi_out)},
                   false);

  if (c.variant == Variant::kSplitBranch) {
    SplitMerge m;
    m.cls_branch = ParamMap("merge.cls", {d}, {linear(d, d)}, true);
    m.rec_branch = ParamMap("merge.rec", {d}, {linear(d, d)}, true);
    m.fuse = ParamMap("merge.fuse", {2 * d}, {linear(2 * d, d)}, true);
    b.merge = std::move(m);
  }

  std::uint64_t stream = 0;
  for (ParamMap* map : b.mutable_maps()) map->initialize(derive_seed(c.seed, stream++));
  return b;
}

std::vector<const ParamMap*> ModelBundle::maps() const {
  std::vector<const ParamMap*> out{&e_trunk, &e_head, &f, &g, &d, &phi};
  if (merge) {
    out.push_back(&merge->cls_branch);
    out.push_back(&merge->rec_branch);
    out.push_back(&merge->fuse);
  }
  return out;
}

std::vector<ParamMap*> ModelBundle::mutable_maps() {
  std::vector<ParamMap*> out{&e_trunk, &e_head, &f, &g, &d, &phi};
  if (merge) {
    out.push_back(&merge->cls_branch);
    out.push_back(&merge->rec_branch);
    out.push_back(&merge->fuse);
  }
  return out;
}

Tensor embed_discriminative(const ModelBundle& bundle, const Tensor& images) {
  return bundle.e_head.forward(bundle.e_trunk.forward(images));
}

Tensor classification_embedding_from_features(const ModelBundle& bundle,
                                              const Tensor& trunk_features) {
  Tensor e = bundle.e_head.forward(trunk_features);
  if (bundle.variant() != Variant::kSplitBranch) return e;
  const std::size_t d = bundle.config.embedding_dim;
  Tensor out({e.batch(), d});
  for (std::size_t i = 0; i < e.batch(); ++i) {
    std::copy_n(e.sample(i).begin(), d, out.sample(i).begin());
  }
  return out;
}

Tensor classification_embedding(const ModelBundle& bundle, const Tensor& images) {
  return classification_embedding_from_features(bundle, bundle.e_trunk.forward(images));
}

Tensor merge_forward(const SplitMerge& merge, const Tensor& e_out,
                     std::vector<ParamMap::Trace>* traces) {
  const std::size_t n = e_out.batch();
  const std::size_t d = merge.cls_branch.input_shape()[0];
  if (e_out.sample_size() != 2 * d) {
    throw std::invalid_argument("merge: expected 2d-wide embedding");
  }
  Tensor first({n, d}), second({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    auto s = e_out.sample(i);
    std::copy_n(s.begin(), d, first.sample(i).begin());
    std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(d), d, second.sample(i).begin());
  }
  if (traces) traces->resize(3);
  Tensor a = merge.cls_branch.forward(first, traces ? &(*traces)[0] : nullptr);
  Tensor r = merge.rec_branch.forward(second, traces ? &(*traces)[1] : nullptr);
  Tensor cat({n, 2 * d});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.sample(i).begin(), d, cat.sample(i).begin());
    std::copy_n(r.sample(i).begin(), d, cat.sample(i).begin() + static_cast<std::ptrdiff_t>(d));
  }
  return merge.fuse.forward(cat, traces ? &(*traces)[2] : nullptr);
}

Tensor reconstruct(const ModelBundle& bundle, const Tensor& images) {
  switch (bundle.variant()) {
    case Variant::kSpAen:
      return bundle.g.forward(bundle.f.forward(images));
    case Variant::kDirectMap:
    case Variant::kSae:
      return bundle.g.forward(embed_discriminative(bundle, images));
    case Variant::kSplitBranch:
      return bundle.g.forward(merge_forward(*bundle.merge, embed_discriminative(bundle, images)));
    case Variant::kClsOnly:
      break;
  }
  throw std::invalid_argument("reconstruct: variant " + variant_name(bundle.variant()) +
                              " has no decoder");
}

// ---------------------------------------------------------------------------

double grad_check(const ParamMap& map, const OutputLoss& loss, const Tensor& input,
                  const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  ParamMap::Trace trace;
  const Tensor out = map.forward(input, &trace);
  Tensor grad_out(out.shape);
  const double base = loss(out, &grad_out);
  if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");

  Buffer param_grad;
  if (map.trainable()) param_grad.assign(map.param_count(), 0.0);
  const Tensor input_grad = map.backward(trace, grad_out, param_grad);

  const bool wrt_params = map.trainable();
  const std::size_t total = wrt_params ? map.param_count() : input.size();
  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), 0);
  Rng rng(options.seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min(total, options.max_coordinates));

  ParamMap probe = map;
  Tensor probe_input = input;
  double worst = 0.0;
  for (std::size_t k : coords) {
    auto eval = [&](double delta) {
      if (wrt_params) {
        probe.mutable_params()[k] = map.params()[k] + delta;
        const double v = loss(probe.forward(input), nullptr);
        probe.mutable_params()[k] = map.params()[k];
        return v;
      }
      probe_input.data[k] = input.data[k] + delta;
      const double v = loss(map.forward(probe_input), nullptr);
      probe_input.data[k] = input.data[k];
      return v;
    };
    const double plus = eval(options.eps);
    const double minus = eval(-options.eps);
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw std::runtime_error("grad_check: non-finite loss under perturbation");
    }
    const double numeric = (plus - minus) / (2.0 * options.eps);
    const double analytic = wrt_params ? param_grad[k] : input_grad.data[k];
    const double err = std::abs(analytic - numeric) /
                       std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace spaen
