#include "sleepstage/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sleepstage {

std::string context_mode_name(ContextMode mode) {
  switch (mode) {
    case ContextMode::one_to_many: return "one_to_many";
    case ContextMode::one_to_one: return "one_to_one";
    case ContextMode::many_to_one: return "many_to_one";
  }
  throw Error::internal("unknown context mode");
}

ContextMode context_mode_from_name(const std::string& name) {
  if (name == "one_to_many") return ContextMode::one_to_many;
  if (name == "one_to_one") return ContextMode::one_to_one;
  if (name == "many_to_one") return ContextMode::many_to_one;
  throw Error::config("unknown context mode: " + name);
}

std::string head_kind_name(HeadKind kind) {
  return kind == HeadKind::single ? "single" : "per_slot";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "single") return HeadKind::single;
  if (name == "per_slot") return HeadKind::per_slot;
  throw Error::config("unknown head kind: " + name);
}

std::string arch_kind_name(ArchKind kind) {
  return kind == ArchKind::onemax ? "onemax" : "deepcnn";
}

ArchKind arch_kind_from_name(const std::string& name) {
  if (name == "onemax") return ArchKind::onemax;
  if (name == "deepcnn") return ArchKind::deepcnn;
  throw Error::config("unknown architecture: " + name);
}

void ContextConfig::validate() const {
  check(tau >= 0, ErrorKind::config, "context: tau must be non-negative");
  check(mode != ContextMode::one_to_one || tau == 0, ErrorKind::config,
        "context: one_to_one requires tau = 0");
}

void ModelSpec::validate() const {
  context.validate();
  check(planes >= 1, ErrorKind::config, "model: planes must be >= 1");
  check(bands >= 1, ErrorKind::config, "model: bands must be >= 1");
  check(frames >= 1, ErrorKind::config, "model: frames must be >= 1");
  check(n_classes >= 2, ErrorKind::config, "model: need >= 2 classes");
  check(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::config,
        "model: dropout must lie in [0, 1)");
  check(lambda_reg >= 0.0, ErrorKind::config, "model: lambda must be non-negative");
  if (learn_filterbank) {
    check(arch == ArchKind::onemax, ErrorKind::config,
          "model: the learnable band mixer is only supported by the onemax arch");
    check(spectrum_bins >= bands && bands >= 2, ErrorKind::config,
          "model: learnable band mixer needs spectrum_bins >= bands >= 2");
  }
  if (arch == ArchKind::onemax) {
    check(!onemax.filter_widths.empty(), ErrorKind::config,
          "model: need at least one filter width");
    check(onemax.filters_per_width >= 1, ErrorKind::config, "model: Q must be >= 1");
    for (int w : onemax.filter_widths)
      check(w >= 1 && w < input_frames(), ErrorKind::config,
            "model: every filter width must be < the input frame count");
  } else {
    check(deepcnn.conv_maps >= 1 && deepcnn.fc_units >= 1, ErrorKind::config,
          "model: deep baseline layer sizes must be positive");
    (void)deep_dims();  // throws if the input is too small for the pipeline
  }
}

DeepCnnDims ModelSpec::deep_dims() const {
  DeepCnnDims d;
  d.c1_h = bands - 2;
  d.c1_w = input_frames() - 2;
  check(d.c1_h >= 1 && d.c1_w >= 1, ErrorKind::config, "deep baseline: input too small for conv1");
  d.p1_h = d.c1_h / 2;
  d.p1_w = d.c1_w;
  check(d.p1_h >= 1, ErrorKind::config, "deep baseline: input too small for pool1");
  d.c2_h = d.p1_h - 2;
  d.c2_w = d.p1_w - 2;
  check(d.c2_h >= 1 && d.c2_w >= 1, ErrorKind::config, "deep baseline: input too small for conv2");
  d.p2_h = d.c2_h / 2;
  d.p2_w = d.c2_w / 2;
  check(d.p2_h >= 1 && d.p2_w >= 1, ErrorKind::config,
        "deep baseline: input too small for pool2");
  d.flat = d.p2_h * d.p2_w * deepcnn.conv_maps;
  return d;
}

namespace {

Tensor uniform_fan_in(const std::vector<std::int64_t>& shape, std::int64_t fan_in,
                      Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.v) v = rng.uniform(-bound, bound);
  return t;
}

Rng tensor_rng(std::uint64_t seed, const std::string& name) {
  Rng root(seed);
  return root.derive(fnv1a64(name.data(), name.size()));
}

}  // namespace

ParamMap init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamMap params;
  auto uniform_init = [&](const std::string& name, std::vector<std::int64_t> shape,
                          std::int64_t fan_in) {
    Rng rng = tensor_rng(seed, name);
    params[name] = uniform_fan_in(shape, fan_in, rng);
  };
  auto zero_init = [&](const std::string& name, std::vector<std::int64_t> shape) {
    params[name] = Tensor::zeros(shape);
  };

  if (spec.learn_filterbank) {
    const FilterBank fb = make_triangular_filterbank(spec.bands, spec.spectrum_bins, 100.0);
    params["band_mixer"] = fb.weights;  // [M, F]
  }

  const std::int64_t SY = spec.n_logits();
  if (spec.arch == ArchKind::onemax) {
    const std::int64_t Q = spec.onemax.filters_per_width;
    const std::int64_t P = spec.planes, M = spec.bands;
    for (int w : spec.onemax.filter_widths) {
      const std::string base = "conv_w" + std::to_string(w);
      uniform_init(base + "_filters", {Q, P, M, w}, P * M * w);
      zero_init(base + "_bias", {Q});
    }
    const std::int64_t D = spec.pooled_len();
    if (spec.onemax.head == HeadKind::single) {
      uniform_init("head_weights", {SY, D}, D);
      zero_init("head_bias", {SY});
    } else {
      for (int s = 0; s < spec.n_slots(); ++s) {
        const std::string base = "head_slot" + std::to_string(s);
        uniform_init(base + "_weights", {spec.n_classes, D}, D);
        zero_init(base + "_bias", {spec.n_classes});
      }
    }
  } else {
    const DeepCnnDims d = spec.deep_dims();
    const std::int64_t maps = spec.deepcnn.conv_maps, fc = spec.deepcnn.fc_units;
    uniform_init("conv1_kernels", {maps, 3, 3, spec.planes}, 9 * spec.planes);
    zero_init("conv1_bias", {maps});
    uniform_init("conv2_kernels", {maps, 3, 3, maps}, 9 * maps);
    zero_init("conv2_bias", {maps});
    uniform_init("fc1_weights", {fc, d.flat}, d.flat);
    zero_init("fc1_bias", {fc});
    uniform_init("fc2_weights", {fc, fc}, fc);
    zero_init("fc2_bias", {fc});
    uniform_init("head_weights", {SY, fc}, fc);
    zero_init("head_bias", {SY});
  }
  for (const auto& [name, tensor] : params)
    check(tensor.all_finite(), ErrorKind::numeric, "init produced non-finite " + name);
  return params;
}

std::map<std::string, NodeId> load_param_nodes(Tape& tape, const ParamMap& params,
                                               bool needs_grad) {
  std::map<std::string, NodeId> nodes;
  for (const auto& [name, tensor] : params) nodes[name] = tape.leaf(tensor, needs_grad);
  return nodes;
}

namespace {

NodeId param_node(const std::map<std::string, NodeId>& nodes, const std::string& name) {
  const auto it = nodes.find(name);
  check(it != nodes.end(), ErrorKind::internal, "missing parameter node: " + name);
  return it->second;
}

NodeId forward_onemax(Tape& tape, const ModelSpec& spec,
                      const std::map<std::string, NodeId>& nodes, NodeId input,
                      bool train_mode, Rng* dropout_rng) {
  NodeId x = input;
  if (spec.learn_filterbank) x = apply_bank(tape, param_node(nodes, "band_mixer"), x);
  std::vector<NodeId> pooled;
  for (int w : spec.onemax.filter_widths) {
    const std::string base = "conv_w" + std::to_string(w);
    NodeId c = conv_over_time(tape, x, param_node(nodes, base + "_filters"),
                              param_node(nodes, base + "_bias"));
    pooled.push_back(max_over_time(tape, relu(tape, c)));
  }
  NodeId feat = concat_cols(tape, pooled);  // [B, Q*R]
  if (train_mode && spec.dropout_rate > 0.0) {
    check(dropout_rng != nullptr, ErrorKind::internal, "train-mode forward needs an rng");
    feat = dropout(tape, feat, spec.dropout_rate, true, *dropout_rng);
  }
  if (spec.onemax.head == HeadKind::single)
    return affine(tape, feat, param_node(nodes, "head_weights"),
                  param_node(nodes, "head_bias"));
  std::vector<NodeId> slot_logits;
  for (int s = 0; s < spec.n_slots(); ++s) {
    const std::string base = "head_slot" + std::to_string(s);
    slot_logits.push_back(affine(tape, feat, param_node(nodes, base + "_weights"),
                                 param_node(nodes, base + "_bias")));
  }
  return concat_cols(tape, slot_logits);
}

NodeId forward_deepcnn(Tape& tape, const ModelSpec& spec,
                       const std::map<std::string, NodeId>& nodes, NodeId input,
                       bool train_mode, Rng* dropout_rng) {
  if (train_mode && spec.dropout_rate > 0.0)
    check(dropout_rng != nullptr, ErrorKind::internal, "train-mode forward needs an rng");
  auto drop = [&](NodeId x) {
    if (!train_mode || spec.dropout_rate <= 0.0) return x;
    return dropout(tape, x, spec.dropout_rate, true, *dropout_rng);
  };
  NodeId x = conv2d_valid(tape, input, param_node(nodes, "conv1_kernels"),
                          param_node(nodes, "conv1_bias"));
  x = drop(maxpool2d(tape, relu(tape, x), 2, 1));
  x = conv2d_valid(tape, x, param_node(nodes, "conv2_kernels"),
                   param_node(nodes, "conv2_bias"));
  x = drop(maxpool2d(tape, relu(tape, x), 2, 2));
  x = flatten(tape, x);
  x = drop(relu(tape, affine(tape, x, param_node(nodes, "fc1_weights"),
                             param_node(nodes, "fc1_bias"))));
  x = drop(relu(tape, affine(tape, x, param_node(nodes, "fc2_weights"),
                             param_node(nodes, "fc2_bias"))));
  return affine(tape, x, param_node(nodes, "head_weights"),
                param_node(nodes, "head_bias"));
}

void check_input_shape(const ModelSpec& spec, const Tensor& batch) {
  check(batch.shape.size() == 4, ErrorKind::validation, "network input must be 4-D");
  const std::int64_t rows = spec.learn_filterbank ? spec.spectrum_bins : spec.bands;
  if (spec.arch == ArchKind::onemax)
    check(batch.shape[1] == spec.planes && batch.shape[2] == rows &&
              batch.shape[3] == spec.input_frames(),
          ErrorKind::validation,
          "network input dims do not match the model spec: got " + shape_str(batch.shape));
  else
    check(batch.shape[1] == spec.bands && batch.shape[2] == spec.input_frames() &&
              batch.shape[3] == spec.planes,
          ErrorKind::validation,
          "network input dims do not match the model spec: got " + shape_str(batch.shape));
}

}  // namespace

NodeId forward_logits(Tape& tape, const ModelSpec& spec,
                      const std::map<std::string, NodeId>& param_nodes, NodeId input,
                      bool train_mode, Rng* dropout_rng) {
  check_input_shape(spec, tape.value(input));
  if (spec.arch == ArchKind::onemax)
    return forward_onemax(tape, spec, param_nodes, input, train_mode, dropout_rng);
  return forward_deepcnn(tape, spec, param_nodes, input, train_mode, dropout_rng);
}

Tensor forward_posteriors(const ParamMap& params, const ModelSpec& spec,
                          const Tensor& batch, bool train_mode, Rng* dropout_rng) {
  Tape tape;
  const auto nodes = load_param_nodes(tape, params, false);
  const NodeId input = tape.leaf(batch, false);
  const NodeId logits = forward_logits(tape, spec, nodes, input, train_mode, dropout_rng);
  return softmax_slots(tape.value(logits), spec.n_slots(), spec.n_classes);
}

std::vector<std::vector<double>> forward(const ParamMap& params, const ModelSpec& spec,
                                         const Tensor& image, bool train_mode,
                                         Rng* dropout_rng) {
  check(image.shape.size() == 3, ErrorKind::validation,
        "single-image forward expects a 3-D image");
  const std::int64_t P = image.shape[0], R = image.shape[1], T = image.shape[2];
  Tensor batch;
  if (spec.arch == ArchKind::onemax) {
    batch = Tensor::zeros({1, P, R, T});
    batch.v = image.v;
  } else {
    batch = Tensor::zeros({1, R, T, P});  // channels-last
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t m = 0; m < R; ++m)
        for (std::int64_t t = 0; t < T; ++t)
          batch.v[static_cast<std::size_t>((m * T + t) * P + p)] =
              image.v[static_cast<std::size_t>((p * R + m) * T + t)];
  }
  const Tensor probs = forward_posteriors(params, spec, batch, train_mode, dropout_rng);
  std::vector<std::vector<double>> slots;
  for (int s = 0; s < spec.n_slots(); ++s) {
    std::vector<double> v(static_cast<std::size_t>(spec.n_classes));
    for (int y = 0; y < spec.n_classes; ++y)
      v[static_cast<std::size_t>(y)] =
          probs.v[static_cast<std::size_t>(s * spec.n_classes + y)];
    slots.push_back(std::move(v));
  }
  return slots;
}

Tensor assemble_time_context(const std::vector<Tensor>& epochs, std::int64_t index,
                             int tau) {
  check(!epochs.empty(), ErrorKind::validation, "context assembly: no epochs");
  check(index >= 0 && index < static_cast<std::int64_t>(epochs.size()),
        ErrorKind::validation, "context assembly: epoch index out of range");
  check(tau >= 0, ErrorKind::validation, "context assembly: negative tau");
  const Tensor& first = epochs[0];
  check(first.shape.size() == 3, ErrorKind::validation,
        "context assembly: epochs must be [P,M,T]");
  const std::int64_t P = first.shape[0], M = first.shape[1], T = first.shape[2];
  const std::int64_t n = static_cast<std::int64_t>(epochs.size());
  const std::int64_t C = 2 * static_cast<std::int64_t>(tau) + 1;
  Tensor out = Tensor::zeros({P, M, C * T});
  for (std::int64_t j = 0; j < C; ++j) {
    const std::int64_t src = std::clamp<std::int64_t>(index - tau + j, 0, n - 1);
    const Tensor& img = epochs[static_cast<std::size_t>(src)];
    check(img.same_shape(first), ErrorKind::validation,
          "context assembly: inconsistent epoch image shapes");
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t m = 0; m < M; ++m)
        std::copy_n(img.v.begin() + (p * M + m) * T, T,
                    out.v.begin() + ((p * M + m) * C * T + j * T));
  }
  return out;
}

std::vector<int> label_window(const std::vector<Stage>& labels, std::int64_t index,
                              int tau) {
  check(!labels.empty(), ErrorKind::validation, "label window: empty label sequence");
  check(index >= 0 && index < static_cast<std::int64_t>(labels.size()),
        ErrorKind::validation, "label window: index out of range");
  const std::int64_t n = static_cast<std::int64_t>(labels.size());
  std::vector<int> out;
  for (std::int64_t k = -tau; k <= tau; ++k) {
    const std::int64_t src = std::clamp<std::int64_t>(index + k, 0, n - 1);
    out.push_back(static_cast<int>(labels[static_cast<std::size_t>(src)]));
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'S', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string join_csv_i(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(xs[i]);
  }
  return s;
}

std::string checkpoint_header(const Checkpoint& ckpt) {
  const ModelSpec& m = ckpt.spec;
  std::ostringstream h;
  h << "arch = " << arch_kind_name(m.arch) << "\n";
  h << "mode = " << context_mode_name(m.context.mode) << "\n";
  h << "tau = " << m.context.tau << "\n";
  h << "planes = " << m.planes << "\n";
  h << "bands = " << m.bands << "\n";
  h << "frames = " << m.frames << "\n";
  h << "n_classes = " << m.n_classes << "\n";
  h << "dropout = " << format_f64(m.dropout_rate, 9) << "\n";
  h << "lambda = " << format_f64(m.lambda_reg, 9) << "\n";
  h << "widths = " << join_csv_i(m.onemax.filter_widths) << "\n";
  h << "q = " << m.onemax.filters_per_width << "\n";
  h << "head = " << head_kind_name(m.onemax.head) << "\n";
  h << "learn_filterbank = " << (m.learn_filterbank ? 1 : 0) << "\n";
  h << "spectrum_bins = " << m.spectrum_bins << "\n";
  h << "conv_maps = " << m.deepcnn.conv_maps << "\n";
  h << "fc_units = " << m.deepcnn.fc_units << "\n";
  if (m.arch == ArchKind::deepcnn) {
    const DeepCnnDims d = m.deep_dims();
    h << "deep_dims = conv1 " << d.c1_h << "x" << d.c1_w << " pool1 " << d.p1_h << "x"
      << d.p1_w << " conv2 " << d.c2_h << "x" << d.c2_w << " pool2 " << d.p2_h << "x"
      << d.p2_w << " flat " << d.flat << "\n";
  }
  h << "init_seed = " << ckpt.init_seed << "\n";
  if (!ckpt.channel_names.empty()) {
    h << "channels = ";
    for (std::size_t i = 0; i < ckpt.channel_names.size(); ++i) {
      if (i) h << ",";
      h << ckpt.channel_names[i];
    }
    h << "\n";
  }
  if (!ckpt.standardizers.empty()) {
    std::string means, stds;
    for (std::size_t i = 0; i < ckpt.standardizers.size(); ++i) {
      if (i) {
        means += ',';
        stds += ',';
      }
      means += format_f64(ckpt.standardizers[i].mean, 9);
      stds += format_f64(ckpt.standardizers[i].stddev, 9);
    }
    h << "standardizer_means = " << means << "\n";
    h << "standardizer_stddevs = " << stds << "\n";
  }
  return h.str();
}

std::map<std::string, std::string> parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  for (const std::string& raw : split(text, '\n')) {
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos, ErrorKind::io, "checkpoint header: bad line: " + line);
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

const std::string& header_get(const std::map<std::string, std::string>& kv,
                              const std::string& key) {
  const auto it = kv.find(key);
  check(it != kv.end(), ErrorKind::io, "checkpoint header: missing key: " + key);
  return it->second;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ckpt.spec.validate();
  if (!ckpt.standardizers.empty())
    check(ckpt.standardizers.size() == static_cast<std::size_t>(ckpt.spec.planes),
          ErrorKind::validation, "checkpoint: standardizer count must equal planes");
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(checkpoint_header(ckpt));
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::int64_t d : tensor.shape) w.i64(d);
    for (double v : tensor.v) w.f32(static_cast<float>(v));
  }
  write_file_bytes(path, w.data());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path));
  char magic[4];
  r.bytes(magic, 4);
  check(std::equal(magic, magic + 4, kCheckpointMagic), ErrorKind::io,
        "not a checkpoint file: " + path.string());
  check(r.u32() == kCheckpointVersion, ErrorKind::io,
        "unsupported checkpoint version in " + path.string());
  const auto kv = parse_header(r.str());

  Checkpoint ckpt;
  ModelSpec& m = ckpt.spec;
  m.arch = arch_kind_from_name(header_get(kv, "arch"));
  m.context.mode = context_mode_from_name(header_get(kv, "mode"));
  m.context.tau = static_cast<int>(parse_i64(header_get(kv, "tau"), "tau"));
  m.planes = static_cast<int>(parse_i64(header_get(kv, "planes"), "planes"));
  m.bands = static_cast<int>(parse_i64(header_get(kv, "bands"), "bands"));
  m.frames = static_cast<int>(parse_i64(header_get(kv, "frames"), "frames"));
  m.n_classes = static_cast<int>(parse_i64(header_get(kv, "n_classes"), "n_classes"));
  m.dropout_rate = parse_f64(header_get(kv, "dropout"), "dropout");
  m.lambda_reg = parse_f64(header_get(kv, "lambda"), "lambda");
  m.onemax.filter_widths.clear();
  for (const std::string& tok : split(header_get(kv, "widths"), ','))
    m.onemax.filter_widths.push_back(static_cast<int>(parse_i64(trim(tok), "widths")));
  m.onemax.filters_per_width = static_cast<int>(parse_i64(header_get(kv, "q"), "q"));
  m.onemax.head = head_kind_from_name(header_get(kv, "head"));
  m.learn_filterbank = parse_i64(header_get(kv, "learn_filterbank"), "learn_filterbank") != 0;
  m.spectrum_bins = static_cast<int>(parse_i64(header_get(kv, "spectrum_bins"), "spectrum_bins"));
  m.deepcnn.conv_maps = static_cast<int>(parse_i64(header_get(kv, "conv_maps"), "conv_maps"));
  m.deepcnn.fc_units = static_cast<int>(parse_i64(header_get(kv, "fc_units"), "fc_units"));
  ckpt.init_seed = parse_u64(header_get(kv, "init_seed"), "init_seed");
  if (kv.count("channels"))
    for (const std::string& tok : split(kv.at("channels"), ','))
      ckpt.channel_names.push_back(trim(tok));
  if (kv.count("standardizer_means")) {
    const auto means = split(header_get(kv, "standardizer_means"), ',');
    const auto stds = split(header_get(kv, "standardizer_stddevs"), ',');
    check(means.size() == stds.size(), ErrorKind::io,
          "checkpoint header: standardizer mean/stddev count mismatch");
    for (std::size_t i = 0; i < means.size(); ++i)
      ckpt.standardizers.push_back(
          {parse_f64(trim(means[i]), "standardizer mean"),
           parse_f64(trim(stds[i]), "standardizer stddev")});
  }
  m.validate();

  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    std::vector<std::int64_t> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(r.i64());
      check(shape.back() >= 1, ErrorKind::io, "checkpoint tensor with bad dim: " + name);
    }
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.v) v = static_cast<double>(r.f32());
    check(t.all_finite(), ErrorKind::io, "checkpoint tensor not finite: " + name);
    ckpt.params[name] = std::move(t);
  }
  check(r.at_end(), ErrorKind::io, "trailing bytes in checkpoint " + path.string());
  return ckpt;
}

}  // namespace sleepstage
