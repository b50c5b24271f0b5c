#include "spaen/json_io.hpp"

namespace spaen {

using nlohmann::json;

void to_json(json& j, const GenConfig& c) {
  j = json{{"num_classes", c.num_classes},
           {"num_attributes", c.num_attributes},
           {"n_per_class", c.n_per_class},
           {"height", c.height},
           {"width", c.width},
           {"channels", c.channels},
           {"noise_std", c.noise_std},
           {"attribute_jitter_ratio", c.attribute_jitter_ratio},
           {"low_variance_fraction", c.low_variance_fraction},
           {"designated_unseen", c.designated_unseen},
           {"seed", c.seed}};
}

void from_json(const json& j, GenConfig& c) {
  const GenConfig def;
  c.num_classes = j.value("num_classes", def.num_classes);
  c.num_attributes = j.value("num_attributes", def.num_attributes);
  c.n_per_class = j.value("n_per_class", def.n_per_class);
  c.height = j.value("height", def.height);
  c.width = j.value("width", def.width);
  c.channels = j.value("channels", def.channels);
  c.noise_std = j.value("noise_std", def.noise_std);
  c.attribute_jitter_ratio = j.value("attribute_jitter_ratio", def.attribute_jitter_ratio);
  c.low_variance_fraction = j.value("low_variance_fraction", def.low_variance_fraction);
  c.designated_unseen = j.value("designated_unseen", def.designated_unseen);
  c.seed = j.value("seed", def.seed);
}

void to_json(json& j, const NetConfig& c) {
  j = json{{"embedding_dim", c.embedding_dim},
           {"height", c.height},
           {"width", c.width},
           {"channels", c.channels},
           {"trunk_channels", c.trunk_channels},
           {"head_hidden", c.head_hidden},
           {"f_hidden", c.f_hidden},
           {"g_hidden", c.g_hidden},
           {"g_base_channels", c.g_base_channels},
           {"g_channels", c.g_channels},
           {"critic_hidden", c.critic_hidden},
           {"phi_channels", c.phi_channels},
           {"leaky_slope", c.leaky_slope},
           {"init_scheme", c.init_scheme},
           {"variant", variant_name(c.variant)},
           {"seed", c.seed}};
}

void from_json(const json& j, NetConfig& c) {
  const NetConfig def;
  c.embedding_dim = j.value("embedding_dim", def.embedding_dim);
  c.height = j.value("height", def.height);
  c.width = j.value("width", def.width);
  c.channels = j.value("channels", def.channels);
  c.trunk_channels = j.value("trunk_channels", def.trunk_channels);
  c.head_hidden = j.value("head_hidden", def.head_hidden);
  c.f_hidden = j.value("f_hidden", def.f_hidden);
  c.g_hidden = j.value("g_hidden", def.g_hidden);
  c.g_base_channels = j.value("g_base_channels", def.g_base_channels);
  c.g_channels = j.value("g_channels", def.g_channels);
  c.critic_hidden = j.value("critic_hidden", def.critic_hidden);
  c.phi_channels = j.value("phi_channels", def.phi_channels);
  c.leaky_slope = j.value("leaky_slope", def.leaky_slope);
  c.init_scheme = j.value("init_scheme", def.init_scheme);
  c.variant = parse_variant(j.value("variant", variant_name(def.variant)));
  c.seed = j.value("seed", def.seed);
}

void to_json(json& j, const HyperParams& h) {
  j = json{{"margin", h.margin},
           {"lambda_p", h.lambda_p},
           {"alpha", h.alpha},
           {"beta", h.beta},
           {"clip_c", h.clip_c},
           {"n_critic", h.n_critic},
           {"learning_rate", h.learning_rate},
           {"critic_lr_scale", h.critic_lr_scale},
           {"momentum", h.momentum},
           {"batch_size", h.batch_size},
           {"cls_mode", h.cls_mode == ClsMode::kSampled ? "sampled" : "full_sum"},
           {"adv_form", h.adv_form == AdvForm::kWgan ? "wgan" : "log"},
           {"patience", h.patience},
           {"min_lr", h.min_lr}};
}

void from_json(const json& j, HyperParams& h) {
  const HyperParams def;
  h.margin = j.value("margin", def.margin);
  h.lambda_p = j.value("lambda_p", def.lambda_p);
  h.alpha = j.value("alpha", def.alpha);
  h.beta = j.value("beta", def.beta);
  h.clip_c = j.value("clip_c", def.clip_c);
  h.n_critic = j.value("n_critic", def.n_critic);
  h.learning_rate = j.value("learning_rate", def.learning_rate);
  h.critic_lr_scale = j.value("critic_lr_scale", def.critic_lr_scale);
  h.momentum = j.value("momentum", def.momentum);
  h.batch_size = j.value("batch_size", def.batch_size);
  h.cls_mode = j.value("cls_mode", std::string("sampled")) == "full_sum" ? ClsMode::kFullSum
                                                                          : ClsMode::kSampled;
  h.adv_form = j.value("adv_form", std::string("wgan")) == "log" ? AdvForm::kLog
                                                                  : AdvForm::kWgan;
  h.patience = j.value("patience", def.patience);
  h.min_lr = j.value("min_lr", def.min_lr);
}

void to_json(json& j, const LossBreakdown& l) {
  j = json{{"cls", l.cls},     {"feat", l.feat},   {"pixel", l.pixel}, {"rec", l.rec},
           {"adv_E", l.adv_E}, {"adv_D", l.adv_D}, {"total", l.total}};
}

}  // namespace spaen
