#include "mmsam/config.hpp"

#include <fstream>

#include "mmsam/error.hpp"

namespace mmsam {

using nlohmann::json;

namespace {

void check_keys(const json& given, const json& known, const std::string& path) {
  if (!given.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, value] : given.items()) {
    const std::string field = path.empty() ? key : path + "." + key;
    if (!known.contains(key)) throw ConfigError(field, "unknown key");
    if (known.at(key).is_object()) check_keys(value, known.at(key), field);
  }
}

template <typename T>
T get(const json& root, const std::string& path) {
  const json* node = &root;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    node = &node->at(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    if constexpr (std::is_same_v<T, uint64_t> || std::is_same_v<T, int64_t>) {
      if (!node->is_number_integer()) throw ConfigError(path, "expected an integer");
    }
    if constexpr (std::is_same_v<T, double>) {
      if (!node->is_number()) throw ConfigError(path, "expected a number");
    }
    if constexpr (std::is_same_v<T, uint64_t>) {
      if (node->get<int64_t>() < 0) throw ConfigError(path, "expected a non-negative integer");
    }
    return node->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("invalid value: ") + e.what());
  }
}

template <size_t N, typename T>
std::array<T, N> get_array(const json& root, const std::string& path) {
  const auto v = get<std::vector<T>>(root, path);
  if (v.size() != N) throw ConfigError(path, "expected " + std::to_string(N) + " values");
  std::array<T, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  TrainingConfig t = training;
  t.schedule.max_epochs = static_cast<double>(t.epochs);
  if (training.epochs < 1) throw ConfigError("training.epochs", "must be at least 1");
  t.schedule.validate();
  training.ohem.validate();
  training.augment.validate();
  if (training.micro_batch < 1) throw ConfigError("training.micro_batch", "must be at least 1");
  if (training.accumulation < 1) throw ConfigError("training.accumulation", "must be at least 1");
  if (training.eval_every < 0) throw ConfigError("training.eval_every", "must be non-negative");
  if (training.max_steps < 0) throw ConfigError("training.max_steps", "must be non-negative");
  if (training.augment.crop_size != model.backbone.image_size)
    throw ConfigError("training.augment.crop_size", "must equal model.backbone.image_size");
  if (training.ohem.ignore_index != model.head.ignore_index)
    throw ConfigError("training.ohem.ignore_index", "must equal model.head.ignore_index");
  data.norm.validate();
  if (runtime.device != "cpu") throw ConfigError("runtime.device", "only 'cpu' is available");
  if (runtime.threads < 0) throw ConfigError("runtime.threads", "must be non-negative");
  if (runtime.backend != "parallel" && runtime.backend != "serial")
    throw ConfigError("runtime.backend", "must be 'parallel' or 'serial'");
  if (output.checkpoint_dtype != "f32" && output.checkpoint_dtype != "f64")
    throw ConfigError("output.checkpoint_dtype", "must be 'f32' or 'f64'");
}

json RunConfig::to_json() const {
  const auto& b = model.backbone;
  const auto& f = model.fusion;
  const auto& a = model.adapter;
  const auto& h = model.head;
  const auto& s = training.schedule;
  const auto& o = training.ohem;
  const auto& g = training.augment;
  const auto& n = data.norm;
  return json{
      {"model",
       {{"backbone",
         {{"patch_size", b.patch_size},
          {"embed_dim", b.embed_dim},
          {"depth", b.depth},
          {"num_groups", b.num_groups},
          {"num_heads", b.num_heads},
          {"image_size", b.image_size},
          {"mlp_ratio", b.mlp_ratio},
          {"finetune", b.finetune},
          {"use_rel_pos", b.use_rel_pos},
          {"pretrained", b.pretrained},
          {"allow_pos_resize", b.allow_pos_resize}}},
        {"fusion",
         {{"kind", to_string(f.kind)},
          {"encoder_mode", to_string(f.encoder_mode)},
          {"encoder_channels", f.encoder_channels},
          {"encoder_depths", f.encoder_depths},
          {"attn_heads", f.attn_heads}}},
        {"adapter",
         {{"msda_heads", a.msda_heads},
          {"msda_points", a.msda_points},
          {"ffn_ratio", a.ffn_ratio},
          {"gamma_init", a.gamma_init}}},
        {"head", {{"num_classes", h.num_classes}, {"decoder_dim", h.decoder_dim}, {"ignore_index", h.ignore_index}}}}},
      {"training",
       {{"schedule",
         {{"eta_base", s.eta_base},
          {"eta_min", s.eta_min},
          {"warmup_epochs", s.warmup_epochs},
          {"warmup_ratio", s.warmup_ratio},
          {"alpha", s.alpha},
          {"layer_decay", s.layer_decay},
          {"new_module_boost", s.new_module_boost},
          {"weight_decay", s.weight_decay}}},
        {"ohem", {{"prob_threshold", o.prob_threshold}, {"min_kept", o.min_kept}, {"ignore_index", o.ignore_index}}},
        {"augment",
         {{"resize_range", {g.resize_low, g.resize_high}},
          {"hflip_prob", g.hflip_prob},
          {"photometric", g.photometric},
          {"blur_prob", g.blur_prob},
          {"crop_size", g.crop_size}}},
        {"augment_enabled", training.augment_enabled},
        {"seed", training.seed},
        {"epochs", training.epochs},
        {"micro_batch", training.micro_batch},
        {"accumulation", training.accumulation},
        {"freeze_batchnorm", training.freeze_batchnorm},
        {"eval_every", training.eval_every},
        {"max_steps", training.max_steps}}},
      {"data",
       {{"root", data.root},
        {"train_split", data.train_split},
        {"val_split", data.val_split},
        {"test_split", data.test_split},
        {"manifest", data.manifest},
        {"rgb_mean", n.rgb_mean},
        {"rgb_std", n.rgb_std},
        {"aux_range", {n.aux_min, n.aux_max}},
        {"aux_mean", n.aux_mean},
        {"aux_std", n.aux_std}}},
      {"output", {{"run_dir", output.run_dir}, {"checkpoint_dtype", output.checkpoint_dtype}}},
      {"runtime", {{"device", runtime.device}, {"threads", runtime.threads}, {"backend", runtime.backend}}}};
}

RunConfig RunConfig::from_json(const json& user) {
  const RunConfig defaults;
  json j = defaults.to_json();
  check_keys(user, j, "");
  j.merge_patch(user);
  // merge_patch drops keys set to null; restore them so the getters report.
  check_keys(j, defaults.to_json(), "");

  RunConfig c;
  auto& b = c.model.backbone;
  b.patch_size = get<int64_t>(j, "model.backbone.patch_size");
  b.embed_dim = get<int64_t>(j, "model.backbone.embed_dim");
  b.depth = get<int64_t>(j, "model.backbone.depth");
  b.num_groups = get<int64_t>(j, "model.backbone.num_groups");
  b.num_heads = get<int64_t>(j, "model.backbone.num_heads");
  b.image_size = get<int64_t>(j, "model.backbone.image_size");
  b.mlp_ratio = get<int64_t>(j, "model.backbone.mlp_ratio");
  b.finetune = get<bool>(j, "model.backbone.finetune");
  b.use_rel_pos = get<bool>(j, "model.backbone.use_rel_pos");
  b.pretrained = get<std::string>(j, "model.backbone.pretrained");
  b.allow_pos_resize = get<bool>(j, "model.backbone.allow_pos_resize");
  auto& f = c.model.fusion;
  f.kind = parse_fusion_kind(get<std::string>(j, "model.fusion.kind"));
  f.encoder_mode = parse_encoder_mode(get<std::string>(j, "model.fusion.encoder_mode"));
  f.encoder_channels = get_array<4, int64_t>(j, "model.fusion.encoder_channels");
  f.encoder_depths = get_array<4, int64_t>(j, "model.fusion.encoder_depths");
  f.attn_heads = get<int64_t>(j, "model.fusion.attn_heads");
  f.target_dim = b.embed_dim;
  auto& a = c.model.adapter;
  a.num_pairs = b.num_groups;
  a.msda_heads = get<int64_t>(j, "model.adapter.msda_heads");
  a.msda_points = get<int64_t>(j, "model.adapter.msda_points");
  a.ffn_ratio = get<double>(j, "model.adapter.ffn_ratio");
  a.gamma_init = get<double>(j, "model.adapter.gamma_init");
  auto& h = c.model.head;
  h.num_classes = get<int64_t>(j, "model.head.num_classes");
  h.decoder_dim = get<int64_t>(j, "model.head.decoder_dim");
  h.ignore_index = get<int64_t>(j, "model.head.ignore_index");

  auto& t = c.training;
  auto& s = t.schedule;
  s.eta_base = get<double>(j, "training.schedule.eta_base");
  s.eta_min = get<double>(j, "training.schedule.eta_min");
  s.warmup_epochs = get<double>(j, "training.schedule.warmup_epochs");
  s.warmup_ratio = get<double>(j, "training.schedule.warmup_ratio");
  s.alpha = get<double>(j, "training.schedule.alpha");
  s.layer_decay = get<double>(j, "training.schedule.layer_decay");
  s.new_module_boost = get<double>(j, "training.schedule.new_module_boost");
  s.weight_decay = get<double>(j, "training.schedule.weight_decay");
  t.ohem.prob_threshold = get<double>(j, "training.ohem.prob_threshold");
  t.ohem.min_kept = get<int64_t>(j, "training.ohem.min_kept");
  t.ohem.ignore_index = get<int64_t>(j, "training.ohem.ignore_index");
  const auto range = get_array<2, double>(j, "training.augment.resize_range");
  t.augment.resize_low = range[0];
  t.augment.resize_high = range[1];
  t.augment.hflip_prob = get<double>(j, "training.augment.hflip_prob");
  t.augment.photometric = get<bool>(j, "training.augment.photometric");
  t.augment.blur_prob = get<double>(j, "training.augment.blur_prob");
  t.augment.crop_size = get<int64_t>(j, "training.augment.crop_size");
  t.augment_enabled = get<bool>(j, "training.augment_enabled");
  t.seed = get<uint64_t>(j, "training.seed");
  t.epochs = get<int64_t>(j, "training.epochs");
  s.max_epochs = static_cast<double>(t.epochs);
  t.micro_batch = get<int64_t>(j, "training.micro_batch");
  t.accumulation = get<int64_t>(j, "training.accumulation");
  t.freeze_batchnorm = get<bool>(j, "training.freeze_batchnorm");
  t.eval_every = get<int64_t>(j, "training.eval_every");
  t.max_steps = get<int64_t>(j, "training.max_steps");

  auto& d = c.data;
  d.root = get<std::string>(j, "data.root");
  d.train_split = get<std::string>(j, "data.train_split");
  d.val_split = get<std::string>(j, "data.val_split");
  d.test_split = get<std::string>(j, "data.test_split");
  d.manifest = get<std::string>(j, "data.manifest");
  d.norm.rgb_mean = get_array<3, double>(j, "data.rgb_mean");
  d.norm.rgb_std = get_array<3, double>(j, "data.rgb_std");
  const auto aux_range = get_array<2, double>(j, "data.aux_range");
  d.norm.aux_min = aux_range[0];
  d.norm.aux_max = aux_range[1];
  d.norm.aux_mean = get<double>(j, "data.aux_mean");
  d.norm.aux_std = get<double>(j, "data.aux_std");
  c.output.run_dir = get<std::string>(j, "output.run_dir");
  c.output.checkpoint_dtype = get<std::string>(j, "output.checkpoint_dtype");
  c.runtime.device = get<std::string>(j, "runtime.device");
  c.runtime.threads = get<int64_t>(j, "runtime.threads");
  c.runtime.backend = get<std::string>(j, "runtime.backend");
  c.validate();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError(key, "empty path component in override");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config file ") + path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return from_json(j);
}

OhemConfig RunConfig::resolved_ohem() const {
  OhemConfig o = training.ohem;
  if (o.min_kept == 0) {
    const int64_t crop = training.augment.crop_size;
    o.min_kept = std::max<int64_t>(1, crop * crop / 16);
  }
  return o;
}

}  // namespace mmsam
