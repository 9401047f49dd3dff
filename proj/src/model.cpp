#include "sucode/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>

#include "sucode/errors.hpp"

namespace sucode {

StagePlan StagePlan::for_stage(int stage, bool freeze_enc_r_stage3) {
  StagePlan p;
  p.stage = stage;
  switch (stage) {
    case 1:
      p.trainable = {"enc_q", "dec_q", "codebook", "disc"};
      break;
    case 2:
      p.trainable = {"enc_r", "wpred", "dec_r", "gcam", "disc"};
      p.frozen = {"codebook"};
      break;
    case 3:
      p.trainable = {"enc_r", "dec_e", "faff", "disc"};
      p.frozen = {"codebook", "wpred", "dec_r", "gcam", "enc_r_ref"};
      if (freeze_enc_r_stage3) {
        p.trainable.erase("enc_r");
        p.frozen.insert("enc_r");
      }
      break;
    default:
      throw ConfigInvalid("stage");
  }
  return p;
}

SucodeModel::SucodeModel(const RunConfig& c) : cfg(c) {
  cfg.validate();
  const auto enc = BackboneOptions::encoder(cfg);
  const auto dec = BackboneOptions::decoder(cfg);
  enc_q = Encoder(enc);
  dec_q = Decoder(dec, DecoderKind::Plain);
  books = init_codebooks(cfg, cfg.seed);
  enc_r = Encoder(enc);
  wpred = WeightPredictor(cfg.embed_dim, cfg.class_count, cfg.window_size, cfg.attn_heads);
  dec_r = Decoder(dec, DecoderKind::Gated);
  dec_e = Decoder(dec, DecoderKind::Fused, cfg.faff_all_scales);
  disc = Discriminator(cfg.disc_channels);
  enc_r_ref = Encoder(enc);
  phi = PerceptualExtractor(cfg.perceptual_seed);
}

namespace {

std::string slashed(std::string s) {
  std::replace(s.begin(), s.end(), '.', '/');
  return s;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

void plain(std::vector<NamedArray>& out, const std::string& component, const torch::nn::Module& m) {
  for (const auto& kv : m.named_parameters()) out.push_back({component, component + "/" + slashed(kv.key()), kv.value()});
}

}  // namespace

std::vector<NamedArray> SucodeModel::arrays(const std::string& component) const {
  std::vector<NamedArray> out;
  if (component == "enc_q") {
    plain(out, component, *enc_q);
  } else if (component == "dec_q") {
    plain(out, component, *dec_q);
  } else if (component == "enc_r") {
    plain(out, component, *enc_r);
  } else if (component == "enc_r_ref") {
    plain(out, component, *enc_r_ref);
  } else if (component == "wpred") {
    plain(out, component, *wpred);
  } else if (component == "disc") {
    plain(out, component, *disc);
  } else if (component == "codebook") {
    for (int64_t c = 0; c < books.classes(); ++c)
      out.push_back({component, "codebook/" + std::to_string(c), books.books[c]});
  } else if (component == "dec_r" || component == "gcam") {
    for (const auto& kv : dec_r->named_parameters()) {
      const bool is_gcam = starts_with(kv.key(), "gcam.");
      if (is_gcam != (component == "gcam")) continue;
      out.push_back({component, is_gcam ? slashed(kv.key()) : "dec_r/" + slashed(kv.key()), kv.value()});
    }
  } else if (component == "dec_e" || component == "faff") {
    std::vector<int> scale_of_slot;
    for (int s = 0; s < dec_e->levels(); ++s)
      if (dec_e->has_faff(s)) scale_of_slot.push_back(s);
    for (const auto& kv : dec_e->named_parameters()) {
      const bool is_faff = starts_with(kv.key(), "faff.");
      if (is_faff != (component == "faff")) continue;
      if (!is_faff) {
        out.push_back({component, "dec_e/" + slashed(kv.key()), kv.value()});
        continue;
      }
      const auto rest = kv.key().substr(5);
      const auto dot = rest.find('.');
      const int slot = std::stoi(rest.substr(0, dot));
      out.push_back({component, "faff/" + std::to_string(scale_of_slot.at(slot)) + "/" + slashed(rest.substr(dot + 1)),
                     kv.value()});
    }
  } else {
    throw CheckpointCorrupt("unknown component " + component);
  }
  return out;
}

std::vector<NamedArray> SucodeModel::all_arrays() const {
  std::vector<NamedArray> out;
  for (const auto& c : kComponents) {
    auto a = arrays(c);
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

std::vector<torch::Tensor> SucodeModel::parameters_of(const std::set<std::string>& components) const {
  std::vector<torch::Tensor> out;
  for (const auto& c : kComponents) {
    if (!components.count(c)) continue;
    if (c == "codebook") {
      out.push_back(books.books);
      continue;
    }
    for (auto& a : arrays(c)) out.push_back(a.tensor);
  }
  return out;
}

std::set<std::string> SucodeModel::import_from(const CheckpointBundle& bundle) {
  torch::NoGradGuard ng;
  std::set<std::string> complete;
  for (const auto& c : kComponents) {
    auto list = arrays(c);
    std::size_t found = 0;
    for (auto& a : list) {
      auto it = bundle.arrays.find(a.name);
      if (it == bundle.arrays.end()) continue;
      if (it->second.sizes() != a.tensor.sizes())
        throw CheckpointCorrupt(a.name + ": checkpoint shape does not match the configured model");
      a.tensor.copy_(it->second);
      ++found;
    }
    if (!list.empty() && found == list.size()) complete.insert(c);
  }
  return complete;
}

void SucodeModel::export_to(CheckpointBundle& bundle, const std::set<std::string>& components, const StagePlan& plan,
                            const std::map<std::string, int>& stage_of_origin) const {
  for (const auto& c : kComponents) {
    if (!components.count(c)) continue;
    const bool frozen = plan.frozen.count(c) != 0;
    const auto it = stage_of_origin.find(c);
    const int origin = it == stage_of_origin.end() ? plan.stage : it->second;
    for (const auto& a : arrays(c)) bundle.put(a.name, a.tensor.detach().clone().contiguous(), frozen, origin);
  }
}

int SucodeModel::copy_matching(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard ng;
  auto src = from.named_parameters();
  int copied = 0;
  for (auto& kv : to.named_parameters()) {
    const auto* s = src.find(kv.key());
    if (!s || s->sizes() != kv.value().sizes()) continue;
    kv.value().copy_(*s);
    ++copied;
  }
  return copied;
}

void SucodeModel::reset_discriminator(std::uint64_t seed) {
  auto gen = at::detail::getDefaultCPUGenerator();
  auto saved = gen.get_state();
  torch::manual_seed(seed);
  Discriminator fresh(cfg.disc_channels);
  gen.set_state(saved);
  copy_matching(*fresh, *disc);
}

void SucodeModel::set_requires_grad(const StagePlan& plan) {
  for (const auto& c : kComponents) {
    const bool on = plan.trains(c);
    if (c == "codebook") {
      books.books.set_requires_grad(on);
      books.frozen = !on;
      continue;
    }
    for (auto& a : arrays(c)) a.tensor.set_requires_grad(on);
  }
}

void SucodeModel::train(bool on) {
  for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{
           enc_q.get(), dec_q.get(), enc_r.get(), dec_r.get(), dec_e.get(), wpred.get(), disc.get(), enc_r_ref.get()})
    m->train(on);
}

}  // namespace sucode
