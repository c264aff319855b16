#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cnnscale {

enum class LayerKind { Conv, Pool, FullyConnected, ElementWise, Norm };

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> layer_kind_from_string(std::string_view name);

/// Spatial extents of a tensor, 1 to 3 axes. Axis order is (W, H, D).
struct TensorShape {
  std::vector<std::int64_t> dims;

  std::size_t rank() const { return dims.size(); }
  std::int64_t elements() const;

  bool operator==(const TensorShape&) const = default;
};

struct LayerDescriptor {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  TensorShape input_shape;
  TensorShape kernel;  // empty for ElementWise / Norm
  std::vector<std::int64_t> stride;
  std::vector<std::int64_t> padding;
  bool has_bias = false;
  // Branch layers (e.g. projection shortcuts) read from a named earlier
  // layer instead of the previous main-path layer.
  std::optional<std::string> input_ref;
  // Halo width per axis for spatial decomposition; floor(K/2) when unset.
  std::optional<std::int64_t> halo_override;

  bool is_branch() const { return input_ref.has_value(); }
  bool is_weighted() const {
    return kind == LayerKind::Conv || kind == LayerKind::FullyConnected;
  }

  bool operator==(const LayerDescriptor&) const = default;
};

struct ModelDescriptor {
  std::vector<LayerDescriptor> layers;
  std::int64_t dataset_size = 0;  // D
  std::int64_t batch_size = 1;    // B
  std::int64_t epochs = 1;        // E

  /// I = D / B. Not truncated: a partial last mini-batch counts fractionally.
  double iterations() const {
    return static_cast<double>(dataset_size) / static_cast<double>(batch_size);
  }

  /// G: number of main-path Conv/FC layers. Weightless and branch layers
  /// ride along with the layer that produces their input.
  std::size_t depth() const;

  bool operator==(const ModelDescriptor&) const = default;
};

/// Per-sample element counts for x and y; totals for weights and bias.
struct LayerCounts {
  std::int64_t x_elems = 0;
  std::int64_t y_elems = 0;
  std::int64_t w_elems = 0;
  std::int64_t bias_elems = 0;

  bool operator==(const LayerCounts&) const = default;
};

/// out = floor((in + 2 pad - K) / stride) + 1 per axis. FullyConnected
/// collapses to an all-ones shape; ElementWise and Norm keep the input shape.
TensorShape infer_output_shape(const LayerDescriptor& layer);

/// Rewrites a layer into the unified convolution form: FC becomes a Conv whose
/// kernel covers the whole input, ElementWise/Norm get F = C and no kernel.
LayerDescriptor adapt_layer(LayerDescriptor layer);

LayerCounts layer_counts(const LayerDescriptor& layer);
std::vector<LayerCounts> layer_counts(const ModelDescriptor& model);

/// Throws ValidationError if any descriptor invariant is broken, including
/// element-count chaining between consecutive main-path layers.
void validate(const ModelDescriptor& model);

ModelDescriptor parse_model(std::string_view text);
std::string serialize_model(const ModelDescriptor& model);
ModelDescriptor load_model_file(const std::string& path);

/// Index ranges [first, last] of layers forming each partition unit: a
/// main-path weighted layer and the weightless/branch layers that follow it.
struct LayerRange {
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive
  bool operator==(const LayerRange&) const = default;
};
std::vector<LayerRange> partition_units(const ModelDescriptor& model);

std::string read_text_file(const std::string& path);

}  // namespace cnnscale
