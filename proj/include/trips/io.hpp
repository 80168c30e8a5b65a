#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trips/backbone.hpp"
#include "trips/tensor.hpp"

namespace trips {

// Tensor file layout, all integers little-endian:
//   "TNSR" | version u8 (1) | dtype u8 (0 = f64) | rank u8 | dims u64 x rank | payload
// The payload is row-major IEEE-754 doubles, 8 * prod(dims) bytes.
inline constexpr std::uint8_t kTensorFileVersion = 1;
inline constexpr std::uint8_t kTensorDtypeF64 = 0;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Binary PPM (P6, maxval 255). Pixels map to [0, 1] as byte / 255; saving
// clamps to [0, 1] and rounds to the nearest byte, so load/save round-trips.
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
Tensor load_image_ppm(const std::string& path);
void save_image_ppm(const std::string& path, const Tensor& image);

inline constexpr double kOverlayDim = 0.25;

// Copy of `image` where grid cells not kept by the selection at `layer` are
// multiplied by `dim`. Throws ConfigError if `layer` did not select.
Tensor overlay_image(const Tensor& image, const ForwardTrace& trace, std::size_t layer,
                     double dim = kOverlayDim);
void save_overlay(const Tensor& image, const ForwardTrace& trace, std::size_t layer,
                  const std::string& path, double dim = kOverlayDim);

// One JSON object per selection event:
//   {"version", "layer", "n_before", "n_candidates", "k", "n_after",
//    "kept_indices", "fused_mass", "top_scores": [{"index", "score"}...]}
inline constexpr int kTraceSchemaVersion = 1;
std::vector<std::string> trace_json_lines(const ForwardTrace& trace, std::size_t top_scores = 5);
void emit_trace_json(const ForwardTrace& trace, const std::string& path,
                     std::size_t top_scores = 5);

// key = value lines; '#' starts a comment. Keys:
//   layers width heads patch_size image_size seed
//   locations rates            comma-separated lists
//   mode                       text-cls | image-cls | multimodal-cls
//   itf td_att                 on | off
//   norm                       post | pre
//   score_target               tokens | keys
//   rounding                   floor | nearest
//   image guidance             input paths (PPM, tensor file); synthetic when unset
//   out                        output directory
struct RunConfig {
    ModelConfig model;
    std::optional<std::string> image_path;
    std::optional<std::string> guidance_path;
    std::string out_dir;
};

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

// Inputs for a run: the image file if given, else a uniform [0, 1) image;
// the guidance tensor file if given, else a standard normal vector.
Tensor run_image(const RunConfig& config);
Tensor run_guidance(const RunConfig& config);

std::vector<std::size_t> parse_size_list(std::string_view text);
std::vector<double> parse_double_list(std::string_view text);
GuidanceMode parse_guidance_source(std::string_view text, GuidanceMode mode = {});

}  // namespace trips
