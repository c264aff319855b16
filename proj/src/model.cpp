#include "cnnscale/model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "cnnscale/errors.hpp"
#include "text_util.hpp"

namespace cnnscale {

namespace {

struct KindName {
  LayerKind kind;
  std::string_view canonical;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Conv, "conv"},
    {LayerKind::Pool, "pool"},
    {LayerKind::FullyConnected, "fc"},
    {LayerKind::ElementWise, "eltwise"},
    {LayerKind::Norm, "norm"},
};

bool has_stencil(LayerKind kind) {
  return kind == LayerKind::Conv || kind == LayerKind::Pool;
}

std::int64_t product(const std::vector<std::int64_t>& v) {
  std::int64_t p = 1;
  for (auto d : v) p *= d;
  return p;
}

std::string join(const std::vector<std::int64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k.canonical;
  return "?";
}

std::optional<LayerKind> layer_kind_from_string(std::string_view name) {
  std::string lower = detail::to_lower(name);
  for (const auto& k : kKindNames)
    if (lower == k.canonical) return k.kind;
  if (lower == "fullyconnected" || lower == "linear") return LayerKind::FullyConnected;
  if (lower == "elementwise" || lower == "relu" || lower == "dropout")
    return LayerKind::ElementWise;
  if (lower == "bn" || lower == "batchnorm") return LayerKind::Norm;
  return std::nullopt;
}

std::int64_t TensorShape::elements() const { return product(dims); }

std::size_t ModelDescriptor::depth() const {
  return static_cast<std::size_t>(std::count_if(
      layers.begin(), layers.end(),
      [](const LayerDescriptor& l) { return l.is_weighted() && !l.is_branch(); }));
}

TensorShape infer_output_shape(const LayerDescriptor& layer) {
  const auto rank = layer.input_shape.rank();
  switch (layer.kind) {
    case LayerKind::FullyConnected:
      return TensorShape{std::vector<std::int64_t>(rank, 1)};
    case LayerKind::ElementWise:
    case LayerKind::Norm:
      return layer.input_shape;
    case LayerKind::Conv:
    case LayerKind::Pool:
      break;
  }
  if (layer.kernel.rank() != rank)
    throw ValidationError("layer '" + layer.name + "': kernel rank " +
                          std::to_string(layer.kernel.rank()) + " does not match input rank " +
                          std::to_string(rank));
  TensorShape out;
  out.dims.resize(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    const std::int64_t stride = a < layer.stride.size() ? layer.stride[a] : 1;
    const std::int64_t pad = a < layer.padding.size() ? layer.padding[a] : 0;
    if (stride < 1)
      throw ValidationError("layer '" + layer.name + "': stride must be >= 1");
    const std::int64_t span = layer.input_shape.dims[a] + 2 * pad - layer.kernel.dims[a];
    // Floor division; a negative span means the kernel does not fit.
    const std::int64_t out_axis = span < 0 ? 0 : span / stride + 1;
    if (out_axis < 1)
      throw NonPositiveOutput("layer '" + layer.name + "': axis " + std::to_string(a) +
                              " yields output extent < 1");
    out.dims[a] = out_axis;
  }
  return out;
}

LayerDescriptor adapt_layer(LayerDescriptor layer) {
  const auto rank = layer.input_shape.rank();
  switch (layer.kind) {
    case LayerKind::FullyConnected:
      layer.kind = LayerKind::Conv;
      layer.kernel = layer.input_shape;
      layer.stride.assign(rank, 1);
      layer.padding.assign(rank, 0);
      break;
    case LayerKind::ElementWise:
    case LayerKind::Norm:
      layer.out_channels = layer.in_channels;
      layer.kernel.dims.clear();
      break;
    case LayerKind::Pool:
      layer.out_channels = layer.in_channels;
      break;
    case LayerKind::Conv:
      break;
  }
  if (layer.stride.size() != rank) layer.stride.assign(rank, layer.stride.empty() ? 1 : layer.stride.front());
  if (layer.padding.size() != rank) layer.padding.assign(rank, layer.padding.empty() ? 0 : layer.padding.front());
  return layer;
}

LayerCounts layer_counts(const LayerDescriptor& raw) {
  const LayerDescriptor layer = adapt_layer(raw);
  LayerCounts c;
  c.x_elems = layer.in_channels * layer.input_shape.elements();
  c.y_elems = layer.out_channels * infer_output_shape(layer).elements();
  c.w_elems = layer.is_weighted() ? layer.in_channels * layer.out_channels * layer.kernel.elements() : 0;
  c.bias_elems = layer.is_weighted() && layer.has_bias ? layer.out_channels : 0;
  return c;
}

std::vector<LayerCounts> layer_counts(const ModelDescriptor& model) {
  std::vector<LayerCounts> out;
  out.reserve(model.layers.size());
  for (const auto& l : model.layers) out.push_back(layer_counts(l));
  return out;
}

void validate(const ModelDescriptor& model) {
  if (model.layers.empty()) throw ValidationError("model has no layers");
  if (model.depth() == 0) throw ValidationError("model has no main-path Conv/FC layer");
  if (model.batch_size < 1) throw ValidationError("batch size B must be >= 1");
  if (model.dataset_size < 0) throw ValidationError("dataset size D must be >= 0");
  if (model.batch_size > model.dataset_size)
    throw ValidationError("batch size B=" + std::to_string(model.batch_size) +
                          " exceeds dataset size D=" + std::to_string(model.dataset_size));
  if (model.epochs < 1) throw ValidationError("epochs E must be >= 1");

  std::unordered_map<std::string, std::size_t> index_of;
  std::optional<std::size_t> prev_main;
  std::vector<LayerCounts> counts;
  counts.reserve(model.layers.size());

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    const std::string where = "layer '" + l.name + "': ";
    if (l.name.empty()) throw ValidationError("layer " + std::to_string(i + 1) + " has no name");
    if (!index_of.emplace(l.name, i).second) throw ValidationError(where + "duplicate name");
    if (l.in_channels < 1 || l.out_channels < 1) throw ValidationError(where + "channels must be >= 1");
    const auto rank = l.input_shape.rank();
    if (rank < 1 || rank > 3) throw ValidationError(where + "input must have 1 to 3 spatial axes");
    for (auto d : l.input_shape.dims)
      if (d < 1) throw ValidationError(where + "input extents must be >= 1");
    if ((l.kind == LayerKind::ElementWise || l.kind == LayerKind::Norm) && l.out_channels != l.in_channels)
      throw ValidationError(where + "element-wise layers require F = C");
    if (l.kind == LayerKind::Pool && l.out_channels != l.in_channels)
      throw ValidationError(where + "pooling layers require F = C");
    if (has_stencil(l.kind)) {
      if (l.kernel.rank() != rank) throw ValidationError(where + "kernel rank must match input rank");
      if (l.stride.size() != rank || l.padding.size() != rank)
        throw ValidationError(where + "stride/pad must have one entry per axis");
      for (std::size_t a = 0; a < rank; ++a) {
        if (l.kernel.dims[a] < 1) throw ValidationError(where + "kernel extents must be >= 1");
        if (l.stride[a] < 1) throw ValidationError(where + "stride must be >= 1");
        if (l.padding[a] < 0) throw ValidationError(where + "padding must be >= 0");
        if (l.kernel.dims[a] > l.input_shape.dims[a] + 2 * l.padding[a])
          throw ValidationError(where + "kernel exceeds padded input on axis " + std::to_string(a));
      }
    } else if (l.kind != LayerKind::FullyConnected && l.kernel.rank() != 0) {
      throw ValidationError(where + "element-wise layers take no kernel");
    }
    if (l.halo_override && *l.halo_override < 0) throw ValidationError(where + "halo must be >= 0");

    counts.push_back(layer_counts(l));  // throws NonPositiveOutput

    if (l.is_branch()) {
      auto it = index_of.find(*l.input_ref);
      if (it == index_of.end() || it->second >= i)
        throw ValidationError(where + "input reference '" + *l.input_ref + "' is not an earlier layer");
      if (counts[it->second].y_elems != counts[i].x_elems)
        throw ValidationError(where + "input elements do not match output of '" + *l.input_ref + "'");
      if (!prev_main || counts[*prev_main].y_elems != counts[i].y_elems)
        throw ValidationError(where + "branch output does not match the main-path output it merges into");
      continue;
    }
    if (prev_main && counts[*prev_main].y_elems != counts[i].x_elems)
      throw ValidationError(where + "input has " + std::to_string(counts[i].x_elems) +
                            " elements but '" + model.layers[*prev_main].name + "' produces " +
                            std::to_string(counts[*prev_main].y_elems));
    prev_main = i;
  }
}

std::vector<LayerRange> partition_units(const ModelDescriptor& model) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].is_weighted() && !model.layers[i].is_branch()) starts.push_back(i);
  if (starts.empty()) return {};
  starts.front() = 0;  // leading weightless layers join the first unit
  std::vector<LayerRange> units;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t last = k + 1 < starts.size() ? starts[k + 1] - 1 : model.layers.size() - 1;
    units.push_back({starts[k], last});
  }
  return units;
}

// ---------------------------------------------------------------------------
// Text format

namespace {

std::vector<std::int64_t> parse_int_list(std::string_view value, std::size_t line, const std::string& field) {
  std::vector<std::int64_t> out;
  if (value.empty() || value == "-") return out;
  for (auto part : detail::split(value, ',')) {
    auto v = detail::parse_int(part);
    if (!v) throw ParseError(line, field, "expected integer list, got '" + std::string(value) + "'");
    out.push_back(*v);
  }
  return out;
}

std::int64_t parse_int_field(std::string_view value, std::size_t line, const std::string& field) {
  auto v = detail::parse_int(value);
  if (!v) throw ParseError(line, field, "expected integer, got '" + std::string(value) + "'");
  return *v;
}

std::vector<std::int64_t> broadcast(std::vector<std::int64_t> v, std::size_t rank, std::int64_t fill,
                                    std::size_t line, const std::string& field) {
  if (v.empty()) return std::vector<std::int64_t>(rank, fill);
  if (v.size() == 1) return std::vector<std::int64_t>(rank, v.front());
  if (v.size() != rank) throw ParseError(line, field, "expected 1 or " + std::to_string(rank) + " values");
  return v;
}

}  // namespace

ModelDescriptor parse_model(std::string_view text) {
  ModelDescriptor model;
  bool have_header = false;
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto tokens = detail::split_ws(line);

    if (tokens.front() == "dataset") {
      if (have_header) throw ParseError(line_no, "dataset", "duplicate header");
      have_header = true;
      bool seen_d = false, seen_b = false;
      for (std::size_t t = 1; t < tokens.size(); ++t) {
        auto [key, value] = detail::split_kv(tokens[t]);
        const std::string k(key);
        if (k == "D") {
          model.dataset_size = parse_int_field(value, line_no, k);
          seen_d = true;
        } else if (k == "B") {
          model.batch_size = parse_int_field(value, line_no, k);
          seen_b = true;
        } else if (k == "E") {
          model.epochs = parse_int_field(value, line_no, k);
        } else {
          throw ParseError(line_no, k, "unknown header field");
        }
      }
      if (!seen_d || !seen_b) throw ParseError(line_no, "dataset", "header needs D= and B=");
      continue;
    }

    if (tokens.size() < 2) throw ParseError(line_no, "kind", "layer line needs a name and a kind");
    LayerDescriptor layer;
    layer.name = std::string(tokens[0]);
    auto kind = layer_kind_from_string(tokens[1]);
    if (!kind) throw ParseError(line_no, "kind", "unknown layer kind '" + std::string(tokens[1]) + "'");
    layer.kind = *kind;

    std::map<std::string, std::string_view> fields;
    for (std::size_t t = 2; t < tokens.size(); ++t) {
      auto [key, value] = detail::split_kv(tokens[t]);
      if (key.empty()) throw ParseError(line_no, std::string(tokens[t]), "expected key=value");
      if (!fields.emplace(std::string(key), value).second)
        throw ParseError(line_no, std::string(key), "duplicate field");
    }
    auto take = [&](const char* key) -> std::optional<std::string_view> {
      auto it = fields.find(key);
      if (it == fields.end()) return std::nullopt;
      auto v = it->second;
      fields.erase(it);
      return v;
    };
    auto required = [&](const char* key) {
      auto v = take(key);
      if (!v) throw ParseError(line_no, key, "missing field");
      return *v;
    };

    layer.in_channels = parse_int_field(required("C"), line_no, "C");
    if (auto f = take("F"))
      layer.out_channels = parse_int_field(*f, line_no, "F");
    else if (layer.kind == LayerKind::ElementWise || layer.kind == LayerKind::Norm ||
             layer.kind == LayerKind::Pool)
      layer.out_channels = layer.in_channels;
    else
      throw ParseError(line_no, "F", "missing field");
    layer.input_shape.dims = parse_int_list(required("X"), line_no, "X");
    if (layer.input_shape.dims.empty() || layer.input_shape.rank() > 3)
      throw ParseError(line_no, "X", "expected 1 to 3 extents");
    const auto rank = layer.input_shape.rank();
    if (auto k = take("K")) {
      layer.kernel.dims = parse_int_list(*k, line_no, "K");
      if (layer.kernel.rank() == 1 && rank > 1) layer.kernel.dims.assign(rank, layer.kernel.dims.front());
    }
    if ((layer.kind == LayerKind::Conv || layer.kind == LayerKind::Pool) && layer.kernel.rank() == 0)
      throw ParseError(line_no, "K", "convolution and pooling layers need a kernel");
    if (layer.kind == LayerKind::FullyConnected) layer.kernel.dims.clear();
    auto stride = take("stride");
    auto pad = take("pad");
    layer.stride = broadcast(stride ? parse_int_list(*stride, line_no, "stride") : std::vector<std::int64_t>{},
                             rank, 1, line_no, "stride");
    layer.padding = broadcast(pad ? parse_int_list(*pad, line_no, "pad") : std::vector<std::int64_t>{}, rank,
                              0, line_no, "pad");
    if (auto b = take("bias")) {
      if (*b != "0" && *b != "1") throw ParseError(line_no, "bias", "expected 0 or 1");
      layer.has_bias = *b == "1";
    }
    if (auto in = take("in")) {
      if (in->empty()) throw ParseError(line_no, "in", "empty reference");
      layer.input_ref = std::string(*in);
    }
    if (auto h = take("halo")) layer.halo_override = parse_int_field(*h, line_no, "halo");
    if (!fields.empty()) throw ParseError(line_no, fields.begin()->first, "unknown field");

    model.layers.push_back(std::move(layer));
  }
  if (!have_header) throw ParseError(line_no, "dataset", "missing 'dataset D=.. B=.. E=..' header");
  validate(model);
  return model;
}

std::string serialize_model(const ModelDescriptor& model) {
  std::ostringstream out;
  out << "dataset D=" << model.dataset_size << " B=" << model.batch_size << " E=" << model.epochs << '\n';
  for (const auto& l : model.layers) {
    out << l.name << ' ' << to_string(l.kind) << " C=" << l.in_channels << " F=" << l.out_channels
        << " X=" << join(l.input_shape.dims) << " K=" << (l.kernel.rank() ? join(l.kernel.dims) : "-")
        << " stride=" << join(l.stride) << " pad=" << join(l.padding) << " bias=" << (l.has_bias ? 1 : 0);
    if (l.input_ref) out << " in=" << *l.input_ref;
    if (l.halo_override) out << " halo=" << *l.halo_override;
    out << '\n';
  }
  return out.str();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelDescriptor load_model_file(const std::string& path) { return parse_model(read_text_file(path)); }

}  // namespace cnnscale
