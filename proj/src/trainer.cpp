#include "attngan/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace attngan {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) {
    throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("lr must be positive and finite");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) {
    throw ConfigError("adam eps must be positive");
  }
  const auto ds = effective_decay_start();
  if (ds < 0 || ds > epochs) {
    throw ConfigError("decay_start must lie in [0, epochs], got " + std::to_string(ds));
  }
  weights.validate();
  model.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps", c.eps},
           {"decay_start", c.decay_start ? json(*c.decay_start) : json(nullptr)},
           {"seed", c.seed},
           {"weights", c.weights},
           {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr").get_to(c.lr);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("eps").get_to(c.eps);
  const auto& ds = j.at("decay_start");
  c.decay_start = ds.is_null() ? std::nullopt : std::optional<std::int64_t>(ds.get<std::int64_t>());
  j.at("seed").get_to(c.seed);
  j.at("weights").get_to(c.weights);
  j.at("model").get_to(c.model);
}

double lr_at(std::int64_t epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw BoundsError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) +
                      ")");
  }
  const auto ds = config.effective_decay_start();
  if (epoch < ds) {
    return config.lr;
  }
  return config.lr * (1.0 - static_cast<double>(epoch - ds) / static_cast<double>(config.epochs - ds));
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
}

void Adam::step(const GradientMap<float>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_data();
    const auto* g = grads.find(params_[i]);
    const float* grad = g != nullptr ? g->data().data() : nullptr;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double gk = grad != nullptr ? static_cast<double>(grad[k]) : 0.0;
      const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
      const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + eps_);
      values[k] = static_cast<float>(static_cast<double>(values[k]) - update);
    }
  }
}

namespace {

std::vector<Tensor> group(const ParameterRegistry<float>& registry, bool generator) {
  std::vector<Tensor> out;
  for (const auto& e : registry.entries()) {
    if (is_generator_parameter(e.name) == generator) {
      out.push_back(e.tensor);
    }
  }
  return out;
}

void set_group_requires_grad(ParameterRegistry<float>& registry, bool generator, bool flag) {
  const auto& prefixes = generator ? std::span<const char* const>(CycleModel<float>::kGeneratorPrefixes)
                                   : std::span<const char* const>(CycleModel<float>::kDiscriminatorPrefixes);
  for (const char* p : prefixes) {
    registry.set_requires_grad(p, flag);
  }
}

void check_finite(const Objective<float>& objective, std::int64_t step) {
  for (const auto& term : objective.terms) {
    if (term.value && !std::isfinite(*term.value)) {
      throw NumericError("non-finite loss term '" + term.name + "' at step " + std::to_string(step));
    }
  }
}

}  // namespace

TrainState TrainState::create(const TrainConfig& config) {
  config.validate();
  TrainState state;
  state.config = config;
  state.model = std::make_unique<CycleModel<float>>(config.model);
  init_parameters(state.model->parameters(), config.seed);
  state.gen_optimizer = Adam(group(state.model->parameters(), true), config.beta1, config.beta2, config.eps);
  state.disc_optimizer = Adam(group(state.model->parameters(), false), config.beta1, config.beta2, config.eps);
  state.rng.seed(config.seed);
  return state;
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) {
    throw ContractError("stack_images: empty batch");
  }
  const auto& first = images.front().shape();
  if (first.size() != 3) {
    throw ShapeError("stack_images: expected C×H×W, got " + shape_str(first));
  }
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(images.size() * images.front().numel()));
  for (const auto& img : images) {
    if (img.shape() != first) {
      throw ShapeError("stack_images: mixed shapes " + shape_str(first) + " and " + shape_str(img.shape()));
    }
    values.insert(values.end(), img.data().begin(), img.data().end());
  }
  Shape shape{static_cast<std::int64_t>(images.size())};
  shape.insert(shape.end(), first.begin(), first.end());
  return Tensor(std::move(shape), std::move(values));
}

StepResult train_step(TrainState& state, const Tensor& x, const Tensor& y, double lr) {
  auto& model = *state.model;
  auto& registry = model.parameters();
  const auto& w = state.config.weights;
  const auto step = state.step + 1;
  StepResult result;
  auto& pass = result.pass;
  pass.x = x;
  pass.y = y;

  // Generator update with the discriminators frozen.
  set_group_requires_grad(registry, false, false);
  Objective<float> g_obj;
  {
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    pass.xy = model.gen_xy()(x);
    pass.yx = model.gen_yx()(y);
    if (w.cycle > 0.0) {
      pass.x_cycle = model.gen_yx()(pass.xy.fused);
      pass.y_cycle = model.gen_xy()(pass.yx.fused);
    }
    FakeLogits<float> logits;
    if (w.adversarial > 0.0) {
      logits.d_y = model.d_y()(pass.xy.fused);
      logits.d_x = model.d_x()(pass.yx.fused);
    }
    if (w.attention_adversarial > 0.0) {
      logits.d_ya = model.d_ya()(pass.xy.fused, foreground_mask(pass.xy));
      logits.d_xa = model.d_xa()(pass.yx.fused, foreground_mask(pass.yx));
    }
    g_obj = total_generator_loss(pass, logits, w);
    check_finite(g_obj, step);
    const auto grads = backward(tape, g_obj.total);
    state.gen_optimizer.step(grads, lr);
  }
  set_group_requires_grad(registry, false, true);

  // Discriminator update on detached outputs of the same pass.
  Objective<float> d_obj;
  if (w.adversarial > 0.0 || w.attention_adversarial > 0.0) {
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    const auto fake_y = pass.xy.fused.detach();
    const auto fake_x = pass.yx.fused.detach();
    DiscriminatorLogits<float> dx, dy, dxa, dya;
    if (w.adversarial > 0.0) {
      dy = {model.d_y()(y), model.d_y()(fake_y)};
      dx = {model.d_x()(x), model.d_x()(fake_x)};
    }
    if (w.attention_adversarial > 0.0) {
      const auto mask_xy = foreground_mask(pass.xy).detach();
      const auto mask_yx = foreground_mask(pass.yx).detach();
      dya = {model.d_ya()(y, mask_xy), model.d_ya()(fake_y, mask_xy)};
      dxa = {model.d_xa()(x, mask_yx), model.d_xa()(fake_x, mask_yx)};
    }
    d_obj = total_discriminator_loss(dx, dy, dxa, dya, w);
    check_finite(d_obj, step);
    const auto grads = backward(tape, d_obj.total);
    for (const auto& e : registry.entries()) {
      if (!is_generator_parameter(e.name)) {
        continue;
      }
      if (const auto* g = grads.find(e.tensor)) {
        const auto d = g->data();
        if (std::any_of(d.begin(), d.end(), [](float v) { return v != 0.0f; })) {
          throw StateError("generator parameter " + e.name + " received a gradient in the discriminator update");
        }
      }
    }
    state.disc_optimizer.step(grads, lr);
  } else {
    d_obj = total_discriminator_loss<float>({}, {}, {}, {}, w);
  }

  result.report.generator = std::move(g_obj.terms);
  result.report.generator_total = g_obj.total_value;
  result.report.discriminator = std::move(d_obj.terms);
  result.report.discriminator_total = d_obj.total_value;
  state.step = step;
  return result;
}

json StepRecord::to_json() const {
  return json{{"epoch", epoch}, {"step", step}, {"lr", lr}, {"wall_ms", wall_ms}, {"losses", report.to_json()}};
}

std::string checkpoint_name(std::int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04lld.agcr", static_cast<long long>(epoch));
  return buf;
}

void train(TrainState& state, std::span<const ImagePair> pairs, const fs::path& out_dir, const TrainHooks& hooks) {
  const auto& config = state.config;
  if (pairs.empty()) {
    throw ConfigError("training set is empty");
  }
  const Shape expected{3, config.model.image_size, config.model.image_size};
  for (const auto& p : pairs) {
    if (p.cloudy.shape() != expected || p.clean.shape() != expected) {
      throw ConfigError("pair '" + p.id + "' is " + shape_str(p.cloudy.shape()) + ", model expects " +
                        shape_str(expected));
    }
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  const auto log_path = out_dir / kTrainLogFile;
  std::ofstream log(log_path, state.step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) {
    throw IoError("cannot open " + log_path.string());
  }

  const auto n = static_cast<std::int64_t>(pairs.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (auto epoch = state.epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);

    json sums = json::object();
    json counts = json::object();
    for (std::int64_t start = 0; start < n; start += config.batch_size) {
      const auto end = std::min(n, start + config.batch_size);
      std::vector<Tensor> xs;
      std::vector<Tensor> ys;
      for (auto i = start; i < end; ++i) {
        const auto& p = pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        xs.push_back(p.cloudy);
        ys.push_back(p.clean);
      }
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = train_step(state, stack_images(xs), stack_images(ys), lr);
      const auto t1 = std::chrono::steady_clock::now();

      StepRecord record;
      record.epoch = epoch;
      record.step = state.step;
      record.lr = lr;
      record.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      record.report = result.report;
      log << record.to_json().dump() << '\n';
      log.flush();
      if (!log) {
        throw IoError("failed writing " + log_path.string());
      }
      const auto losses = record.report.to_json();
      for (const auto& [name, value] : losses.items()) {
        if (value.is_number()) {
          sums[name] = sums.value(name, 0.0) + value.get<double>();
          counts[name] = counts.value(name, 0) + 1;
        }
      }
      if (hooks.on_step) {
        hooks.on_step(record);
      }
    }

    json means = json::object();
    for (const auto& [name, total] : sums.items()) {
      means[name] = total.get<double>() / counts[name].get<double>();
    }
    state.metrics.push_back({{"epoch", epoch}, {"lr", lr}, {"mean_losses", means}});
    state.epoch = epoch + 1;
    if (state.epoch % config.checkpoint_interval() == 0) {
      save_checkpoint(state, out_dir / checkpoint_name(state.epoch));
    }
    if (hooks.on_epoch) {
      hooks.on_epoch(state);
    }
  }
  save_checkpoint(state, out_dir / kFinalCheckpoint);
}

namespace {

struct PayloadTensor {
  std::string name;
  Shape shape;
  float* data;
  std::size_t size;
};

std::vector<PayloadTensor> payload_layout(TrainState& state) {
  std::vector<PayloadTensor> out;
  for (const auto& e : state.model->parameters().entries()) {
    auto t = e.tensor;
    auto d = t.mutable_data();
    out.push_back({e.name, t.shape(), d.data(), d.size()});
  }
  auto moments = [&](Adam& opt, const std::string& tag) {
    const auto& params = opt.params();
    const auto& entries = state.model->parameters().entries();
    std::vector<std::string> names;
    for (const auto& p : params) {
      auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.tensor.id() == p.id(); });
      names.push_back(it->name);
    }
    for (const auto* kind : {"m", "v"}) {
      auto& store = std::string(kind) == "m" ? opt.first_moments() : opt.second_moments();
      for (std::size_t i = 0; i < params.size(); ++i) {
        out.push_back({"adam." + tag + "." + kind + "." + names[i], params[i].shape(), store[i].data(), store[i].size()});
      }
    }
  };
  moments(state.gen_optimizer, "generator");
  moments(state.disc_optimizer, "discriminator");
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

FormatError format_error(const std::string& what, std::size_t offset) {
  return FormatError("checkpoint: " + what + " at byte offset " + std::to_string(offset));
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state) {
  auto& mutable_state = const_cast<TrainState&>(state);  // layout needs raw pointers; nothing is written
  const auto layout = payload_layout(mutable_state);

  std::ostringstream rng;
  rng << state.rng;
  json tensors = json::array();
  for (const auto& t : layout) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const json header{{"model", state.config.model},
                    {"train", state.config},
                    {"epoch", state.epoch},
                    {"step", state.step},
                    {"metrics", state.metrics},
                    {"rng", rng.str()},
                    {"optimizer",
                     {{"generator", {{"t", state.gen_optimizer.t()}}},
                      {"discriminator", {{"t", state.disc_optimizer.t()}}}}},
                    {"tensors", tensors}};
  const auto text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : layout) {
    for (std::size_t i = 0; i < t.size; ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(t.data[i]));
    }
  }
  return out;
}

TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic);
  if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), kCheckpointMagic, kMagicSize) != 0) {
    throw format_error("bad magic (expected AGCR1)", 0);
  }
  if (bytes.size() < kMagicSize + 4) {
    throw format_error("truncated header length", kMagicSize);
  }
  const std::size_t header_len = get_u32(bytes.data() + kMagicSize);
  const std::size_t header_at = kMagicSize + 4;
  if (bytes.size() - header_at < header_len) {
    throw format_error("truncated header (declares " + std::to_string(header_len) + " bytes)", header_at);
  }
  json header;
  TrainConfig config;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_at),
                         bytes.begin() + static_cast<std::ptrdiff_t>(header_at + header_len));
    header.at("train").get_to(config);
    if (header.at("model") != json(config.model)) {
      throw format_error("model config disagrees with train config", header_at);
    }
  } catch (const json::exception& e) {
    throw format_error(std::string("malformed header: ") + e.what(), header_at);
  } catch (const ConfigError& e) {
    throw format_error(std::string("invalid config: ") + e.what(), header_at);
  }

  TrainState state;
  try {
    state = TrainState::create(config);
    state.epoch = header.at("epoch").get<std::int64_t>();
    state.step = header.at("step").get<std::int64_t>();
    state.metrics = header.at("metrics");
    state.gen_optimizer.set_t(header.at("optimizer").at("generator").at("t").get<std::int64_t>());
    state.disc_optimizer.set_t(header.at("optimizer").at("discriminator").at("t").get<std::int64_t>());
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> state.rng;
    if (!rng) {
      throw format_error("unreadable rng state", header_at);
    }
  } catch (const json::exception& e) {
    throw format_error(std::string("malformed header: ") + e.what(), header_at);
  } catch (const ConfigError& e) {
    throw format_error(std::string("invalid config: ") + e.what(), header_at);
  }
  if (state.epoch < 0 || state.epoch > config.epochs || state.step < 0 || !state.metrics.is_array()) {
    throw format_error("inconsistent progress fields", header_at);
  }

  const auto layout = payload_layout(state);
  const auto& declared = header.at("tensors");
  if (!declared.is_array() || declared.size() != layout.size()) {
    throw format_error("header declares " + std::to_string(declared.is_array() ? declared.size() : 0) +
                           " tensors, model has " + std::to_string(layout.size()),
                       header_at);
  }
  std::size_t need = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& d = declared[i];
    const auto name = d.value("name", std::string());
    Shape shape;
    try {
      shape = d.at("shape").get<Shape>();
    } catch (const json::exception&) {
      throw format_error("tensor '" + name + "' has no valid shape", header_at);
    }
    if (name != layout[i].name) {
      throw format_error("tensor " + std::to_string(i) + " is '" + name + "', expected '" + layout[i].name + "'",
                         header_at);
    }
    if (shape != layout[i].shape) {
      throw format_error("tensor '" + name + "' declared " + shape_str(shape) + ", model has " +
                             shape_str(layout[i].shape),
                         header_at);
    }
    need += layout[i].size * 4;
  }
  const std::size_t payload_at = header_at + header_len;
  const std::size_t have = bytes.size() - payload_at;
  if (have != need) {
    // Locate the tensor where the payload runs out (or the end of the data).
    std::size_t offset = payload_at;
    std::string where = "after the last tensor";
    for (const auto& t : layout) {
      if (offset + t.size * 4 > bytes.size()) {
        where = "in tensor '" + t.name + "'";
        break;
      }
      offset += t.size * 4;
    }
    throw format_error("payload is " + std::to_string(have) + " bytes, expected " + std::to_string(need) + " (" +
                           (have < need ? "truncated " : "trailing data ") + where + ")",
                       have < need ? bytes.size() : payload_at + need);
  }
  const auto* p = bytes.data() + payload_at;
  for (const auto& t : layout) {
    for (std::size_t i = 0; i < t.size; ++i, p += 4) {
      t.data[i] = std::bit_cast<float>(get_u32(p));
    }
  }
  return state;
}

void save_checkpoint(const TrainState& state, const fs::path& path) {
  const auto bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

TrainState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace attngan
