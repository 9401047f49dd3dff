#include "sucode/config.hpp"

#include <yaml-cpp/yaml.h>

#include <bit>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "sucode/errors.hpp"
#include "sucode/log.hpp"

namespace sucode {

int RunConfig::levels() const {
  return std::countr_zero(static_cast<unsigned>(downsample_factor));
}

void RunConfig::validate() const {
  auto fail = [](const char* field) { throw ConfigInvalid(field); };
  if (class_count < 1) fail("class_count");
  if (codebook_entries < 2) fail("codebook_entries");
  if (embed_dim < 1) fail("embed_dim");
  if (base_channels < 1) fail("base_channels");
  if (res_blocks < 1) fail("res_blocks");
  if (disc_channels < 1) fail("disc_channels");
  if (downsample_factor < 2 || !std::has_single_bit(static_cast<unsigned>(downsample_factor)))
    fail("downsample_factor");
  if (static_cast<int>(channel_mult.size()) != levels()) fail("channel_mult");
  for (int m : channel_mult)
    if (m < 1) fail("channel_mult");
  if (image_size < downsample_factor || image_size % downsample_factor != 0) fail("image_size");
  if (window_size < 1) fail("window_size");
  if (attn_heads < 1 || embed_dim % attn_heads != 0) fail("attn_heads");
  if (stage < 1 || stage > 3) fail("stage");
  if (epochs < 0) fail("epochs");
  if (batch_size < 1) fail("batch_size");
  if (!(lr_generator > 0)) fail("lr_generator");
  if (!(lr_discriminator > 0)) fail("lr_discriminator");
  if (!(beta > 0)) fail("beta");
  if (lambda_semantic < 0) fail("lambda_semantic");
  if (lambda_adv < 0) fail("lambda_adv");
  if (lambda_adv_stage3 < 0) fail("lambda_adv_stage3");
  if (adv_warmup_fraction < 0 || adv_warmup_fraction > 1) fail("adv_warmup_fraction");
  if (max_steps < 0) fail("max_steps");
  for (auto [from, to] : class_remap) {
    if (from < 0) fail("class_remap");
    if (to < 0 || to >= class_count) fail("class_remap");
  }
}

namespace {

using Setter = std::function<void(const YAML::Node&)>;

template <class T>
Setter bind(T& slot, const char* field) {
  return [&slot, field](const YAML::Node& n) {
    try {
      slot = n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigInvalid(field);
    }
  };
}

void apply_section(const YAML::Node& node, const std::string& section,
                   const std::map<std::string, Setter>& setters) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigInvalid(section);
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    auto it = setters.find(key);
    if (it == setters.end()) {
      log::warn("config: unknown key '", section, '.', key, "' ignored");
      continue;
    }
    it->second(kv.second);
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigInvalid(std::string("syntax: ") + e.what());
  }
  if (root.IsNull()) {
    cfg.validate();
    return cfg;
  }
  if (!root.IsMap()) throw ConfigInvalid("root");

  const std::map<std::string, Setter> model{
      {"class_count", bind(cfg.class_count, "class_count")},
      {"codebook_entries", bind(cfg.codebook_entries, "codebook_entries")},
      {"embed_dim", bind(cfg.embed_dim, "embed_dim")},
      {"base_channels", bind(cfg.base_channels, "base_channels")},
      {"channel_mult", bind(cfg.channel_mult, "channel_mult")},
      {"res_blocks", bind(cfg.res_blocks, "res_blocks")},
      {"disc_channels", bind(cfg.disc_channels, "disc_channels")},
      {"window_size", bind(cfg.window_size, "window_size")},
      {"attn_heads", bind(cfg.attn_heads, "attn_heads")},
      {"faff_all_scales", bind(cfg.faff_all_scales, "faff_all_scales")},
  };
  const std::map<std::string, Setter> data{
      {"image_size", bind(cfg.image_size, "image_size")},
      {"downsample_factor", bind(cfg.downsample_factor, "downsample_factor")},
      {"class_remap", bind(cfg.class_remap, "class_remap")},
  };
  const std::map<std::string, Setter> train{
      {"stage", bind(cfg.stage, "stage")},
      {"epochs", bind(cfg.epochs, "epochs")},
      {"batch_size", bind(cfg.batch_size, "batch_size")},
      {"lr_generator", bind(cfg.lr_generator, "lr_generator")},
      {"lr_discriminator", bind(cfg.lr_discriminator, "lr_discriminator")},
      {"adam_beta1", bind(cfg.adam_beta1, "adam_beta1")},
      {"adam_beta2", bind(cfg.adam_beta2, "adam_beta2")},
      {"adv_warmup_fraction", bind(cfg.adv_warmup_fraction, "adv_warmup_fraction")},
      {"freeze_enc_r_stage3", bind(cfg.freeze_enc_r_stage3, "freeze_enc_r_stage3")},
      {"max_steps", bind(cfg.max_steps, "max_steps")},
      {"seed", bind(cfg.seed, "seed")},
  };
  const std::map<std::string, Setter> loss{
      {"beta", bind(cfg.beta, "beta")},
      {"lambda_semantic", bind(cfg.lambda_semantic, "lambda_semantic")},
      {"lambda_adv", bind(cfg.lambda_adv, "lambda_adv")},
      {"lambda_adv_stage3", bind(cfg.lambda_adv_stage3, "lambda_adv_stage3")},
      {"perceptual_seed", bind(cfg.perceptual_seed, "perceptual_seed")},
  };
  const std::map<std::string, const std::map<std::string, Setter>*> sections{
      {"model", &model}, {"data", &data}, {"train", &train}, {"loss", &loss}};

  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    auto it = sections.find(key);
    if (it == sections.end()) {
      log::warn("config: unknown section '", key, "' ignored");
      continue;
    }
    apply_section(kv.second, key, *it->second);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigNotFound(path);
  std::ifstream in(path);
  if (!in) throw ConfigNotFound(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_yaml(const RunConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "class_count" << YAML::Value << cfg.class_count;
  out << YAML::Key << "codebook_entries" << YAML::Value << cfg.codebook_entries;
  out << YAML::Key << "embed_dim" << YAML::Value << cfg.embed_dim;
  out << YAML::Key << "base_channels" << YAML::Value << cfg.base_channels;
  out << YAML::Key << "channel_mult" << YAML::Value << YAML::Flow << cfg.channel_mult;
  out << YAML::Key << "res_blocks" << YAML::Value << cfg.res_blocks;
  out << YAML::Key << "disc_channels" << YAML::Value << cfg.disc_channels;
  out << YAML::Key << "window_size" << YAML::Value << cfg.window_size;
  out << YAML::Key << "attn_heads" << YAML::Value << cfg.attn_heads;
  out << YAML::Key << "faff_all_scales" << YAML::Value << cfg.faff_all_scales;
  out << YAML::EndMap;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "image_size" << YAML::Value << cfg.image_size;
  out << YAML::Key << "downsample_factor" << YAML::Value << cfg.downsample_factor;
  out << YAML::Key << "class_remap" << YAML::Value << YAML::Flow << cfg.class_remap;
  out << YAML::EndMap;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "stage" << YAML::Value << cfg.stage;
  out << YAML::Key << "epochs" << YAML::Value << cfg.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << cfg.batch_size;
  out << YAML::Key << "lr_generator" << YAML::Value << cfg.lr_generator;
  out << YAML::Key << "lr_discriminator" << YAML::Value << cfg.lr_discriminator;
  out << YAML::Key << "adam_beta1" << YAML::Value << cfg.adam_beta1;
  out << YAML::Key << "adam_beta2" << YAML::Value << cfg.adam_beta2;
  out << YAML::Key << "adv_warmup_fraction" << YAML::Value << cfg.adv_warmup_fraction;
  out << YAML::Key << "freeze_enc_r_stage3" << YAML::Value << cfg.freeze_enc_r_stage3;
  out << YAML::Key << "max_steps" << YAML::Value << cfg.max_steps;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  out << YAML::EndMap;

  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "beta" << YAML::Value << cfg.beta;
  out << YAML::Key << "lambda_semantic" << YAML::Value << cfg.lambda_semantic;
  out << YAML::Key << "lambda_adv" << YAML::Value << cfg.lambda_adv;
  out << YAML::Key << "lambda_adv_stage3" << YAML::Value << cfg.lambda_adv_stage3;
  out << YAML::Key << "perceptual_seed" << YAML::Value << cfg.perceptual_seed;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace sucode
