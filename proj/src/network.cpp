#include "rdunet/network.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace rdunet {

NetworkConfig NetworkConfig::paper() {
  NetworkConfig cfg;
  cfg.input_h = 320;
  cfg.input_w = 320;
  cfg.base_width = 64;
  cfg.growth_base = 8;
  return cfg;
}

NetworkConfig NetworkConfig::desk() { return NetworkConfig{}; }

void NetworkConfig::validate() const {
  if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
    throw ValueError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                     " must be divisible by 16 (four stride-2 halvings)");
  if (input_channels < 1) throw ValueError("input channel count must be positive");
  if (base_width < 1) throw ValueError("base width must be positive");
  if (growth_base < 1) throw ValueError("growth base must be positive");
  if (classes < 2) throw ValueError("class count must be at least 2");
}

namespace {

std::string level_name(bool down, int idx) {
  return (down ? "down" : "up") + std::to_string(idx);
}

DenseBlockConfig block_config(const NetworkConfig& cfg, std::int64_t channels) {
  DenseBlockConfig bc;
  bc.channels = channels;
  bc.growth_base = cfg.growth_base;
  bc.growth_cap = cfg.growth_cap;
  return bc;
}

}  // namespace

Model build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(seed);
  const std::int64_t W0 = cfg.base_width;

  for (int lvl = 1; lvl <= 4; ++lvl) {
    Model::Down& d = m.down[static_cast<std::size_t>(lvl - 1)];
    const std::int64_t width = W0 << (lvl - 1);
    const std::string name = level_name(true, lvl);
    if (lvl == 1) {
      d.entry_conv = make_conv(m.params, name + "/entry/conv", cfg.input_channels, width, 3, 1,
                               Padding::same, rng);
    } else {
      const std::int64_t prev = width / 2;
      d.pool = make_conv(m.params, name + "/down/conv", prev, prev, 2, 2, Padding::valid, rng,
                         /*bias=*/false);
      d.entry_bn = make_bn(m.params, name + "/entry/bn", prev);
      d.entry_act = make_prelu(m.params, name + "/entry/act", prev);
      d.entry_conv = make_conv(m.params, name + "/entry/conv", prev, width, 3, 1, Padding::same, rng);
    }
    d.block = make_dense_block(m.params, name + "/dense", block_config(cfg, width), rng);
    d.exit = make_pre_act_unit(m.params, name + "/exit", width, width, 2, rng);
  }

  const std::int64_t w4 = W0 << 3;  // level-4 width
  m.bridge.pool =
      make_conv(m.params, "bridge/down/conv", w4, w4, 2, 2, Padding::valid, rng, /*bias=*/false);
  m.bridge.widen = make_pre_act_unit(m.params, "bridge/widen", w4, 2 * w4, 2, rng);

  for (int i = 0; i < 4; ++i) {
    Model::Up& u = m.up[static_cast<std::size_t>(i)];
    const int lvl = 4 - i;  // up4 first
    const std::int64_t width = W0 << lvl;  // block width: 16*W0 down to 2*W0
    const std::string name = level_name(false, lvl);
    u.block = make_dense_block(m.params, name + "/dense", block_config(cfg, width), rng);
    u.exit = make_pre_act_unit(m.params, name + "/exit", width, width, 2, rng);
    u.up = make_unpool(m.params, name + "/unpool", width, rng);
    u.post = make_pre_act_unit(m.params, name + "/post", width / 2, width / 2, 3, rng);
  }

  m.tail.block = make_dense_block(m.params, "tail/dense", block_config(cfg, W0), rng);
  m.tail.exit = make_pre_act_unit(m.params, "tail/exit", W0, W0, 2, rng);
  m.tail.head = make_conv(m.params, "tail/head/conv", W0, cfg.classes, 1, 1, Padding::same, rng);
  return m;
}

Tensor forward(Graph& g, const Model& model, const Tensor& batch, bool training,
               const ForwardOptions& options) {
  const NetworkConfig& cfg = model.cfg;
  const Shape bs = batch.shape();
  if (bs.c != cfg.input_channels || bs.h != cfg.input_h || bs.w != cfg.input_w)
    throw ShapeError("input: batch " + bs.str() + " does not match configured (" +
                     std::to_string(cfg.input_channels) + "," + std::to_string(cfg.input_h) + "," +
                     std::to_string(cfg.input_w) + ")");

  auto tap = [&options](const std::string& label, Tensor t) {
    if (options.zero_labels != nullptr && options.zero_labels->count(label))
      t = Tensor::zeros(t.shape());
    if (options.tap) options.tap(label, t);
    return t;
  };

  Tensor cur = tap("input", batch);
  std::array<Tensor, 4> skip;
  for (int lvl = 1; lvl <= 4; ++lvl) {
    const Model::Down& d = model.down[static_cast<std::size_t>(lvl - 1)];
    const std::string name = level_name(true, lvl);
    if (d.pool) cur = tap(name + "/down", conv2d(g, cur, *d.pool));
    if (d.entry_bn)
      cur = conv2d(g, prelu(g, batch_norm(g, cur, *d.entry_bn, training), *d.entry_act),
                   d.entry_conv);
    else
      cur = conv2d(g, cur, d.entry_conv);
    cur = tap(name + "/entry", cur);
    cur = tap(name + "/dense", d.block.forward(g, cur, training));
    cur = tap(name + "/exit", pre_activation_unit(g, cur, d.exit, training));
    skip[static_cast<std::size_t>(lvl - 1)] = cur;
  }

  cur = tap("bridge/down", conv2d(g, cur, model.bridge.pool));
  cur = tap("bridge/widen", pre_activation_unit(g, cur, model.bridge.widen, training));

  for (int i = 0; i < 4; ++i) {
    const Model::Up& u = model.up[static_cast<std::size_t>(i)];
    const int lvl = 4 - i;
    const std::string name = level_name(false, lvl);
    cur = tap(name + "/dense", u.block.forward(g, cur, training));
    cur = tap(name + "/exit", pre_activation_unit(g, cur, u.exit, training));
    cur = tap(name + "/unpool", unpool(g, cur, u.up));
    Tensor s = tap(name + "/skip", skip[static_cast<std::size_t>(lvl - 1)]);
    if (!options.skip_additions) cur = add(g, cur, s);
    cur = tap(name + "/add", cur);
    cur = tap(name + "/post", pre_activation_unit(g, cur, u.post, training));
  }

  cur = tap("tail/dense", model.tail.block.forward(g, cur, training));
  cur = tap("tail/exit", pre_activation_unit(g, cur, model.tail.exit, training));
  cur = tap("tail/logits", conv2d(g, cur, model.tail.head));
  return cur;
}

ArchPlan plan_network(const NetworkConfig& cfg) {
  cfg.validate();
  ArchPlan plan;
  const std::int64_t W0 = cfg.base_width;
  std::int64_t h = cfg.input_h, w = cfg.input_w;

  auto row = [&plan, &h, &w](const std::string& label, std::int64_t c) {
    plan.rows.push_back(PlanRow{label, c, h, w});
  };
  auto conv_unit = [&plan, &h, &w](const std::string& level, const std::string& name,
                                   std::int64_t in_ch, std::int64_t out_ch, std::int64_t k,
                                   int stride, bool pre_act, bool dense, bool bias) {
    std::int64_t oh, ow;
    conv_output_size(h, w, k, k, stride, stride == 2 ? Padding::valid : Padding::same, &oh, &ow);
    plan.units.push_back(PlanUnit{level, name, dense, in_ch, out_ch, k, stride, oh, ow, pre_act,
                                  pre_act, bias});
    h = oh;
    w = ow;
  };
  auto dense_block_units = [&](const std::string& level, std::int64_t channels) {
    DenseBlockConfig bc = block_config(cfg, channels);
    for (int m = 1; m <= DenseBlockConfig::stages; ++m)
      conv_unit(level, level + "/dense/stage" + std::to_string(m), bc.stage_input_width(m),
                bc.emitted(m), bc.kernel(m), 1, true, true, false);
    plan.norms.push_back(PlanNorm{level, level + "/dense", channels, channels});
    row(level + "/dense", channels);
  };

  row("input", cfg.input_channels);
  for (int lvl = 1; lvl <= 4; ++lvl) {
    const std::string name = level_name(true, lvl);
    const std::int64_t width = W0 << (lvl - 1);
    if (lvl > 1) {
      conv_unit(name, name + "/down/conv", width / 2, width / 2, 2, 2, false, false, false);
      row(name + "/down", width / 2);
      conv_unit(name, name + "/entry/conv", width / 2, width, 3, 1, true, false, true);
    } else {
      conv_unit(name, name + "/entry/conv", cfg.input_channels, width, 3, 1, false, false, true);
    }
    row(name + "/entry", width);
    dense_block_units(name, width);
    conv_unit(name, name + "/exit/conv", width, width, 2, 1, true, false, true);
    row(name + "/exit", width);
  }

  const std::int64_t w4 = W0 << 3;
  conv_unit("bridge", "bridge/down/conv", w4, w4, 2, 2, false, false, false);
  row("bridge/down", w4);
  conv_unit("bridge", "bridge/widen/conv", w4, 2 * w4, 2, 1, true, false, true);
  row("bridge/widen", 2 * w4);

  for (int i = 0; i < 4; ++i) {
    const int lvl = 4 - i;
    const std::string name = level_name(false, lvl);
    const std::int64_t width = W0 << lvl;
    dense_block_units(name, width);
    conv_unit(name, name + "/exit/conv", width, width, 2, 1, true, false, true);
    row(name + "/exit", width);
    // unpool: 2x upsample then the 1x1 halving projection
    h *= 2;
    w *= 2;
    conv_unit(name, name + "/unpool/proj", width, width / 2, 1, 1, false, false, false);
    row(name + "/unpool", width / 2);
    row(name + "/add", width / 2);
    conv_unit(name, name + "/post/conv", width / 2, width / 2, 3, 1, true, false, true);
    row(name + "/post", width / 2);
  }

  dense_block_units("tail", W0);
  conv_unit("tail", "tail/exit/conv", W0, W0, 2, 1, true, false, true);
  row("tail/exit", W0);
  conv_unit("tail", "tail/head/conv", W0, cfg.classes, 1, 1, false, false, true);
  row("tail/logits", cfg.classes);
  row("tail/mask", 1);  // the exported argmax mask
  return plan;
}

CostReport count_params_and_flops(const NetworkConfig& cfg) {
  ArchPlan plan = plan_network(cfg);
  CostReport report;
  auto bump = [](std::vector<UnitCost>& list, const std::string& name, std::int64_t params,
                 std::int64_t macs) {
    for (auto& u : list)
      if (u.name == name) {
        u.params += params;
        u.macs += macs;
        return;
      }
    list.push_back(UnitCost{name, params, macs});
  };
  for (const PlanUnit& u : plan.units) {
    std::int64_t params = u.k * u.k * u.in_ch * u.out_ch + (u.has_bias ? u.out_ch : 0);
    if (u.has_bn) params += 2 * u.in_ch;
    if (u.has_act) params += u.in_ch;
    const std::int64_t macs = u.out_h * u.out_w * u.in_ch * u.out_ch * u.k * u.k;
    bump(report.levels, u.level, params, macs);
    if (u.dense) bump(report.blocks, u.level + "/dense", params, macs);
    report.total_params += params;
    report.total_macs += macs;
  }
  for (const PlanNorm& n : plan.norms) {
    const std::int64_t params = 2 * n.bn_channels + n.act_channels;
    bump(report.levels, n.level, params, 0);
    bump(report.blocks, n.name, params, 0);
    report.total_params += params;
  }
  return report;
}

std::string cost_report_csv(const CostReport& report) {
  std::ostringstream out;
  out << "scope,name,params,macs\n";
  for (const auto& b : report.blocks)
    out << "block," << b.name << "," << b.params << "," << b.macs << "\n";
  for (const auto& l : report.levels)
    out << "level," << l.name << "," << l.params << "," << l.macs << "\n";
  out << "total,," << report.total_params << "," << report.total_macs << "\n";
  return out.str();
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("truncated checkpoint " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write("RDUN", 4);
  write_raw(f, kCheckpointVersion);
  write_raw(f, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    write_raw(f, static_cast<std::uint32_t>(e.name.size()));
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_raw(f, static_cast<std::uint64_t>(e.tensor.numel()));
    write_raw(f, static_cast<std::uint32_t>(4));
    const Shape s = e.tensor.shape();
    for (std::int64_t dim : {s.n, s.c, s.h, s.w}) write_raw(f, static_cast<std::uint64_t>(dim));
  }
  for (const auto& e : params.entries()) {
    auto d = e.tensor.data();
    f.write(reinterpret_cast<const char*>(d.data()),
            static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!f) throw IoError("short write to " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamRegistry& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "RDUN", 4) != 0)
    throw IoError("not an RDUN checkpoint: " + path.string());
  const auto version = read_raw<std::uint32_t>(f, path.string());
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = read_raw<std::uint32_t>(f, path.string());
  if (count != params.size())
    throw IoError("checkpoint lists " + std::to_string(count) + " parameters, model has " +
                  std::to_string(params.size()));

  std::vector<std::string> order;
  order.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint32_t>(f, path.string());
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw IoError("truncated checkpoint " + path.string());
    const auto numel = read_raw<std::uint64_t>(f, path.string());
    const auto rank = read_raw<std::uint32_t>(f, path.string());
    if (rank != 4) throw IoError("checkpoint parameter " + name + " has rank " + std::to_string(rank));
    std::uint64_t dims[4];
    for (auto& d : dims) d = read_raw<std::uint64_t>(f, path.string());
    if (!params.contains(name)) throw IoError("checkpoint parameter " + name + " not in model");
    const Tensor& t = params.get(name).tensor;
    const Shape s = t.shape();
    const Shape file_shape{static_cast<std::int64_t>(dims[0]), static_cast<std::int64_t>(dims[1]),
                           static_cast<std::int64_t>(dims[2]), static_cast<std::int64_t>(dims[3])};
    if (!(s == file_shape) || static_cast<std::uint64_t>(t.numel()) != numel)
      throw IoError("checkpoint parameter " + name + " has shape " + file_shape.str() +
                    ", model expects " + s.str());
    order.push_back(std::move(name));
  }
  for (const std::string& name : order) {
    Tensor t = params.get(name).tensor;
    auto d = t.data();
    f.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!f) throw IoError("truncated checkpoint payload in " + path.string());
  }
}

}  // namespace rdunet
