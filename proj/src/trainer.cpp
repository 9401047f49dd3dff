#include "sucode/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "sucode/errors.hpp"
#include "sucode/log.hpp"
#include "sucode/quantizer.hpp"

namespace sucode {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

struct TrainState {
  int stage = 0;
  std::int64_t step = 0;
};

std::string encode_state(const TrainState& s, std::uint64_t seed) {
  std::ostringstream out;
  out << "stage=" << s.stage << "\nstep=" << s.step << "\nseed=" << seed << "\n";
  return out.str();
}

TrainState decode_state(const std::string& bytes) {
  TrainState s;
  std::istringstream in(bytes);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = line.substr(0, eq);
    const auto val = line.substr(eq + 1);
    try {
      if (key == "stage") s.stage = std::stoi(val);
      if (key == "step") s.step = std::stoll(val);
    } catch (const std::exception&) {
      throw CheckpointCorrupt("unreadable training state");
    }
  }
  return s;
}

std::string component_of(const std::string& array_name) {
  const auto slash = array_name.find('/');
  return slash == std::string::npos ? array_name : array_name.substr(0, slash);
}

void require(const std::set<std::string>& present, const std::set<std::string>& needed, int stage) {
  std::string missing;
  for (const auto& c : needed)
    if (!present.count(c)) missing += (missing.empty() ? "" : ", ") + c;
  if (!missing.empty())
    throw StagePrereqError("stage " + std::to_string(stage) + " needs a stage " + std::to_string(stage - 1) +
                           " checkpoint; missing: " + missing);
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.pixel += r.pixel;
  sum.perceptual += r.perceptual;
  sum.adversarial += r.adversarial;
  sum.vq_commit += r.vq_commit;
  sum.vq_codebook += r.vq_codebook;
  sum.vq_semantic += r.vq_semantic;
  sum.code += r.code;
  sum.total += r.total;
}

}  // namespace

// ---------------------------------------------------------------------------

Dataset::Dataset(const fs::path& root, const RunConfig& cfg, LoadMode mode, bool need_mask, bool need_ref)
    : root_(root), cfg_(cfg), mode_(mode), need_mask_(need_mask), need_ref_(need_ref) {
  const auto raw_dir = root / "raw";
  if (!fs::is_directory(raw_dir)) throw IoError("dataset has no raw/ directory: " + root.string());
  for (const auto& e : fs::directory_iterator(raw_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") ids_.push_back(e.path().stem().string());
  std::sort(ids_.begin(), ids_.end());
  for (const auto& id : ids_) {
    if (need_mask && !fs::exists(root / "mask" / (id + ".png"))) throw SampleInvalid("no mask for " + id);
    if (need_ref && !fs::exists(root / "ref" / (id + ".png"))) throw SampleInvalid("no reference for " + id);
  }
  cache_.resize(ids_.size());
  cacheable_.assign(ids_.size(), mode == LoadMode::Test);
  if (mode == LoadMode::Train) {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const auto img = read_image(raw_dir / (ids_[i] + ".png"));
      cacheable_[i] = img.height() == cfg.image_size && img.width() == cfg.image_size;
    }
  }
}

PairedSample Dataset::get(std::size_t i, std::int64_t epoch) const {
  if (cache_[i]) return *cache_[i];
  const auto& id = ids_.at(i);
  std::optional<fs::path> mask, ref;
  if (need_mask_) mask = root_ / "mask" / (id + ".png");
  if (need_ref_) ref = root_ / "ref" / (id + ".png");
  const auto seed = mix(cfg_.seed, static_cast<std::uint64_t>(epoch), i);
  auto s = load_pair(root_ / "raw" / (id + ".png"), mask, ref, cfg_, mode_, seed);
  if (cacheable_[i]) cache_[i] = s;
  return s;
}

Dataset::Batch Dataset::batch(const std::vector<std::size_t>& indices, std::int64_t epoch) const {
  std::vector<torch::Tensor> raw, ref, mask;
  for (auto i : indices) {
    auto s = get(i, epoch);
    raw.push_back(s.raw.to_batch());
    if (need_ref_) ref.push_back(s.reference->to_batch());
    if (need_mask_) mask.push_back(s.mask->labels().unsqueeze(0));
  }
  Batch b;
  b.raw = torch::cat(raw, 0);
  if (need_ref_) b.ref = torch::cat(ref, 0);
  if (need_mask_) b.mask = torch::cat(mask, 0);
  return b;
}

// ---------------------------------------------------------------------------

MetricsLog::MetricsLog(const fs::path& path, bool append) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const bool fresh = !append || !fs::exists(path);
  out_.open(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out_) throw IoError("cannot open metrics log " + path.string());
  if (fresh) out_ << kHeader << "\n";
}

void MetricsLog::write(std::int64_t step, int stage, const LossReport& r) {
  out_ << step << ',' << stage;
  out_.precision(9);
  for (double v : {r.pixel, r.perceptual, r.adversarial, r.vq_commit, r.vq_codebook, r.vq_semantic, r.code, r.total})
    out_ << ',' << v;
  out_ << '\n';
  out_.flush();
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const RunConfig& cfg, std::shared_ptr<const Dataset> data, const std::optional<CheckpointBundle>& init)
    : cfg_(cfg), plan_(StagePlan::for_stage(cfg.stage, cfg.freeze_enc_r_stage3)), data_(std::move(data)) {
  cfg_.validate();
  if (!data_ || data_->size() == 0) throw IoError("training dataset is empty");
  torch::manual_seed(cfg_.seed);
  model_ = std::make_unique<SucodeModel>(cfg_);

  TrainState prior;
  if (init) {
    prior = decode_state(init->rng_state);
    present_ = model_->import_from(*init);
    for (const auto& e : init->manifest) origin_.try_emplace(component_of(e.name), e.stage_of_origin);
  }
  const int stage = cfg_.stage;
  if (stage == 2) require(present_, {"enc_q", "codebook"}, stage);
  if (stage == 3) require(present_, {"codebook", "enc_r", "wpred", "dec_r", "gcam"}, stage);

  const bool resume = init && prior.stage == stage && prior.step > 0;
  if (!resume) {
    if (stage == 2) {
      SucodeModel::copy_matching(*model_->enc_q, *model_->enc_r);
      if (present_.count("dec_q")) SucodeModel::copy_matching(*model_->dec_q, *model_->dec_r);
    }
    if (stage == 3) {
      SucodeModel::copy_matching(*model_->dec_r, *model_->dec_e);
      SucodeModel::copy_matching(*model_->enc_r, *model_->enc_r_ref);
      present_.insert("enc_r_ref");
      origin_["enc_r_ref"] = 3;
    }
    model_->reset_discriminator(mix(cfg_.seed, 0xD15C, static_cast<std::uint64_t>(stage)));
    for (const auto& c : plan_.trainable) origin_[c] = stage;
  }
  for (const auto& c : plan_.trainable) present_.insert(c);

  model_->set_requires_grad(plan_);
  model_->train(true);

  auto values = [](const std::vector<std::pair<std::string, torch::Tensor>>& named) {
    std::vector<torch::Tensor> out;
    for (const auto& kv : named) out.push_back(kv.second);
    return out;
  };
  const auto betas = std::make_tuple(cfg_.adam_beta1, cfg_.adam_beta2);
  opt_g_ = std::make_unique<torch::optim::Adam>(values(optim_params(true)),
                                                torch::optim::AdamOptions(cfg_.lr_generator).betas(betas));
  opt_d_ = std::make_unique<torch::optim::Adam>(values(optim_params(false)),
                                                torch::optim::AdamOptions(cfg_.lr_discriminator).betas(betas));

  steps_per_epoch_ = (static_cast<std::int64_t>(data_->size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  total_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps : cfg_.epochs * steps_per_epoch_;
  if (resume) {
    restore_optimizer(*init);
    step_ = prior.step;
  }
}

std::vector<std::pair<std::string, torch::Tensor>> Trainer::optim_params(bool generator) const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& c : kComponents) {
    if (!plan_.trains(c) || (c == "disc") == generator) continue;
    if (c == "codebook") {
      out.emplace_back("codebook", model_->books.books);
      continue;
    }
    for (const auto& a : model_->arrays(c)) out.emplace_back(a.name, a.tensor);
  }
  return out;
}

void Trainer::restore_optimizer(const CheckpointBundle& b) {
  torch::NoGradGuard ng;
  for (auto* opt : {opt_g_.get(), opt_d_.get()}) {
    for (const auto& [name, p] : optim_params(opt == opt_g_.get())) {
      const auto base = "optim/" + name + "/";
      if (!b.contains(base + "exp_avg")) continue;
      auto st = std::make_unique<torch::optim::AdamParamState>();
      st->step(b.at(base + "step").item<std::int64_t>());
      st->exp_avg(b.at(base + "exp_avg").clone());
      st->exp_avg_sq(b.at(base + "exp_avg_sq").clone());
      opt->state()[p.unsafeGetTensorImpl()] = std::move(st);
    }
  }
}

const std::vector<std::size_t>& Trainer::epoch_order(std::int64_t epoch) {
  if (epoch != order_epoch_) {
    order_.resize(data_->size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(mix(cfg_.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(cfg_.stage)));
    std::shuffle(order_.begin(), order_.end(), rng);
    order_epoch_ = epoch;
  }
  return order_;
}

LossComponents Trainer::forward_stage(const Dataset::Batch& b, torch::Tensor& fake, torch::Tensor& real) {
  auto& m = *model_;
  LossComponents c;
  const auto& x = b.raw;
  auto fill_vq = [&](const VqTerms& vq) {
    c.vq = vq.total;
    c.vq_commit = vq.commit;
    c.vq_codebook = vq.codebook;
    c.vq_semantic = vq.semantic;
  };
  if (cfg_.stage == 1) {
    auto z_hat = m.enc_q(x);
    auto q = quantize_with_mask(z_hat, downsample_mask_batch(b.mask, cfg_.downsample_factor), m.books);
    fake = m.dec_q(q.z_q);
    real = x;
    auto phi_x = m.phi->features(x)[PerceptualExtractorImpl::kSemanticStage];
    fill_vq(vq_loss(z_hat, q.z_selected, m.enc_q->semantic_proj(q.z_q), phi_x, cfg_.beta, cfg_.lambda_semantic));
  } else {
    auto z_hat = m.enc_r(x);
    auto per_class = quantize_per_class(z_hat, m.books);
    auto w = m.wpred(z_hat);
    auto z_q = aggregate_weighted(per_class.maps, w);
    if (cfg_.stage == 2) {
      fake = m.dec_r(z_q);
      real = x;
      auto selected = aggregate_weighted(per_class.selected, w);
      auto phi_x = m.phi->features(x)[PerceptualExtractorImpl::kSemanticStage];
      fill_vq(vq_loss(z_hat, selected, m.enc_r->semantic_proj(z_q), phi_x, cfg_.beta, cfg_.lambda_semantic));
    } else {
      auto taps = m.dec_r->forward_with_taps(z_q).taps;
      fake = m.dec_e->forward_fused(z_q, taps);
      real = b.ref;
      torch::Tensor z_gt;
      {
        torch::NoGradGuard ng;
        auto z_ref = m.enc_r_ref(b.ref);
        auto ref_q = quantize_per_class(z_ref, m.books);
        z_gt = aggregate_weighted(ref_q.selected, m.wpred(z_ref));
      }
      c.code = code_loss(z_hat, z_gt, cfg_.beta);
    }
  }
  c.pixel = pixel_l1(fake, real);
  c.perceptual = perceptual_loss(fake, real, m.phi);
  auto logits = m.disc(fake);
  c.adversarial = adversarial_losses(logits, torch::zeros_like(logits)).generator;
  return c;
}

LossReport Trainer::step() {
  if (finished()) throw StagePrereqError("stage " + std::to_string(cfg_.stage) + " already complete");
  const auto epoch = step_ / steps_per_epoch_;
  const auto k = step_ % steps_per_epoch_;
  const auto& order = epoch_order(epoch);
  const auto lo = static_cast<std::size_t>(k * cfg_.batch_size);
  const auto hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg_.batch_size));
  const auto batch = data_->batch(std::vector<std::size_t>(order.begin() + lo, order.begin() + hi), epoch);

  const double lambda = cfg_.stage == 3 ? cfg_.lambda_adv_stage3 : cfg_.lambda_adv;
  torch::Tensor fake, real;
  auto comps = forward_stage(batch, fake, real);
  auto loss = stage_total(cfg_.stage, comps,
                          adversarial_weight(lambda, step_, total_steps_, cfg_.adv_warmup_fraction));
  if (!std::isfinite(loss.report.total)) {
    if (failure_dir_) save_checkpoint(checkpoint(), *failure_dir_);
    throw TrainingDiverged("non-finite loss at step " + std::to_string(step_) + " of stage " +
                           std::to_string(cfg_.stage));
  }
  opt_g_->zero_grad();
  loss.total.backward();
  opt_g_->step();

  opt_d_->zero_grad();
  auto d = adversarial_losses(model_->disc(fake.detach()), model_->disc(real));
  d.discriminator.backward();
  opt_d_->step();

  ++step_;
  history_.push_back(loss.report);
  if (log_) log_->write(step_, cfg_.stage, loss.report);
  accumulate(epoch_sum_, loss.report);
  if (k == steps_per_epoch_ - 1 || step_ == total_steps_) {
    const double n = static_cast<double>(k + 1);
    log::info("stage ", cfg_.stage, " epoch ", epoch + 1, " step ", step_, "/", total_steps_, ": pixel ",
              epoch_sum_.pixel / n, " perceptual ", epoch_sum_.perceptual / n, " total ", epoch_sum_.total / n);
    epoch_sum_ = {};
  }
  return loss.report;
}

void Trainer::run(std::int64_t n) {
  for (std::int64_t i = 0; i < n && !finished(); ++i) step();
}

CheckpointBundle Trainer::checkpoint() const {
  CheckpointBundle b;
  b.config_snapshot = cfg_;
  model_->export_to(b, present_, plan_, origin_);
  for (auto* opt : {opt_g_.get(), opt_d_.get()}) {
    for (const auto& [name, p] : optim_params(opt == opt_g_.get())) {
      auto it = opt->state().find(p.unsafeGetTensorImpl());
      if (it == opt->state().end()) continue;
      const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
      const auto base = "optim/" + name + "/";
      b.put(base + "exp_avg", st.exp_avg().clone(), false, cfg_.stage);
      b.put(base + "exp_avg_sq", st.exp_avg_sq().clone(), false, cfg_.stage);
      b.put(base + "step", torch::full({1}, st.step(), torch::kInt64), false, cfg_.stage);
    }
  }
  b.rng_state = encode_state({cfg_.stage, step_}, cfg_.seed);
  return b;
}

CheckpointBundle run_stage(int stage, RunConfig cfg, const fs::path& dataset_root,
                           const std::optional<fs::path>& init_from, const fs::path& out_dir) {
  cfg.stage = stage;
  cfg.validate();
  if (stage >= 2 && !init_from)
    throw StagePrereqError("stage " + std::to_string(stage) + " needs a stage " + std::to_string(stage - 1) +
                           " checkpoint (--init-from)");
  std::optional<CheckpointBundle> init;
  if (init_from) {
    auto dir = *init_from;
    if (fs::is_directory(dir / "checkpoint")) dir /= "checkpoint";
    if (!fs::is_directory(dir)) throw StagePrereqError("no checkpoint at " + init_from->string());
    init = load_checkpoint(dir);
  }
  auto data = std::make_shared<const Dataset>(dataset_root, cfg, LoadMode::Train, stage == 1, stage == 3);
  Trainer trainer(cfg, data, init);
  fs::create_directories(out_dir);
  trainer.set_metrics_log(std::make_shared<MetricsLog>(out_dir / "metrics.csv", trainer.steps_done() > 0));
  trainer.set_failure_dir(out_dir / "checkpoint");
  log::info("stage ", stage, ": ", data->size(), " samples, ", trainer.total_steps(), " steps");
  trainer.run(trainer.total_steps());
  auto bundle = trainer.checkpoint();
  save_checkpoint(bundle, out_dir / "checkpoint");
  return bundle;
}

// ---------------------------------------------------------------------------

std::unique_ptr<SucodeModel> model_from_checkpoint(const CheckpointBundle& ckpt, const std::set<std::string>& required) {
  auto model = std::make_unique<SucodeModel>(ckpt.config_snapshot);
  const auto present = model->import_from(ckpt);
  std::string missing;
  for (const auto& c : required)
    if (!present.count(c)) missing += (missing.empty() ? "" : ", ") + c;
  if (!missing.empty()) throw CheckpointIncomplete("checkpoint lacks: " + missing);
  model->train(false);
  for (auto& a : model->all_arrays()) a.tensor.set_requires_grad(false);
  model->books.books.set_requires_grad(false);
  return model;
}

Enhancer::Enhancer(const CheckpointBundle& ckpt)
    : model_(model_from_checkpoint(ckpt, {"enc_r", "codebook", "wpred", "dec_r", "gcam", "dec_e", "faff"})) {}

torch::Tensor Enhancer::enhance_batch(const torch::Tensor& raw) {
  torch::NoGradGuard ng;
  auto& m = *model_;
  auto z_hat = m.enc_r(raw);
  auto per_class = quantize_per_class(z_hat, m.books);
  auto z_q = aggregate_weighted(per_class.maps, m.wpred(z_hat));
  auto taps = m.dec_r->forward_with_taps(z_q).taps;
  return m.dec_e->forward_fused(z_q, taps).clamp(0.0, 1.0);
}

ImageTensor Enhancer::enhance(const ImageTensor& raw) {
  const auto f = model_->cfg.downsample_factor;
  auto x = raw.to_batch();
  const auto h = x.size(2), w = x.size(3);
  const auto ph = (f - h % f) % f, pw = (f - w % f) % f;
  // Edge-pad to a multiple of the factor, crop back afterwards.
  if (ph || pw) x = torch::nn::functional::pad(x, torch::nn::functional::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
  auto y = enhance_batch(x).narrow(2, 0, h).narrow(3, 0, w);
  return ImageTensor::from_batch(y);
}

ImageTensor enhance(const ImageTensor& raw, const CheckpointBundle& ckpt) { return Enhancer(ckpt).enhance(raw); }

torch::Tensor reconstruct_stage1(SucodeModel& m, const torch::Tensor& x, const torch::Tensor& mask) {
  torch::NoGradGuard ng;
  auto z_hat = m.enc_q(x);
  auto q = quantize_with_mask(z_hat, downsample_mask_batch(mask, m.cfg.downsample_factor), m.books);
  return m.dec_q(q.z_q).clamp(0.0, 1.0);
}

CostReport count_cost(const CheckpointBundle& ckpt, int input_size) {
  CostReport r;
  for (const auto& e : ckpt.manifest) {
    if (e.name.rfind("optim/", 0) == 0 || e.name.rfind("enc_r_ref/", 0) == 0) continue;
    std::int64_t n = 1;
    for (auto d : e.shape) n *= d;
    r.params += n;
  }
  if (ckpt.manifest.empty()) return r;

  auto model = std::make_unique<SucodeModel>(ckpt.config_snapshot);
  const auto present = model->import_from(ckpt);
  auto has = [&](std::initializer_list<const char*> names) {
    return std::all_of(names.begin(), names.end(), [&](const char* n) { return present.count(n) != 0; });
  };
  torch::NoGradGuard ng;
  model->train(false);
  const auto x = torch::zeros({1, 3, input_size, input_size});
  const auto& cfg = model->cfg;
  const std::int64_t latent = static_cast<std::int64_t>(input_size / cfg.downsample_factor);
  const std::int64_t search = latent * latent * cfg.codebook_entries * cfg.embed_dim;
  CostScope scope;
  if (has({"enc_r", "codebook", "wpred", "dec_r", "gcam", "dec_e", "faff"})) {
    auto z = model->enc_r(x);
    auto z_q = aggregate_weighted(quantize_per_class(z, model->books).maps, model->wpred(z));
    model->dec_e->forward_fused(z_q, model->dec_r->forward_with_taps(z_q).taps);
    scope.add(search * cfg.class_count);
  } else if (has({"enc_r", "codebook", "wpred", "dec_r", "gcam"})) {
    auto z = model->enc_r(x);
    model->dec_r(aggregate_weighted(quantize_per_class(z, model->books).maps, model->wpred(z)));
    scope.add(search * cfg.class_count);
  } else if (has({"enc_q", "codebook", "dec_q"})) {
    auto z = model->enc_q(x);
    model->dec_q(quantize_with_mask(z, torch::zeros({1, latent, latent}, torch::kInt64), model->books).z_q);
    scope.add(search);
  }
  r.mult_adds = scope.mult_adds();
  return r;
}

}  // namespace sucode
