#include "trips/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

#include <json.hpp>

#include "trips/error.hpp"
#include "trips/rng.hpp"

namespace trips {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
    return v;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view text) {
    std::vector<std::string_view> out;
    text = trim(text);
    if (text.empty()) return out;
    while (true) {
        const auto comma = text.find(',');
        out.push_back(trim(text.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T>
T parse_number(std::string_view s, std::string_view what) {
    s = trim(s);
    T value{};
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
        throw ConfigError("invalid " + std::string(what) + ": '" + std::string(s) + "'");
    }
    return value;
}

bool parse_switch(std::string_view s, std::string_view key) {
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw ConfigError(std::string(key) + ": expected on|off, got '" + std::string(s) + "'");
}

// Reads the next header token of a PPM, skipping whitespace and comments.
std::string ppm_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
    while (pos < b.size()) {
        if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (std::isspace(b[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') tok.push_back(static_cast<char>(b[pos++]));
    if (tok.empty()) throw IoError("ppm: truncated header");
    return tok;
}

std::size_t ppm_int(const std::vector<std::uint8_t>& b, std::size_t& pos, const char* what) {
    const std::string tok = ppm_token(b, pos);
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || end != tok.data() + tok.size()) {
        throw IoError(std::string("ppm: malformed ") + what + " '" + tok + "'");
    }
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    if (t.rank() > 255) throw ShapeError("tensor file: rank above 255");
    std::vector<std::uint8_t> out{'T', 'N', 'S', 'R', kTensorFileVersion, kTensorDtypeF64,
                                  static_cast<std::uint8_t>(t.rank())};
    out.reserve(out.size() + 8 * (t.rank() + t.size()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 7 || !std::equal(bytes.begin(), bytes.begin() + 4, "TNSR")) {
        throw IoError("tensor file: bad magic");
    }
    if (bytes[4] != kTensorFileVersion) {
        throw IoError("tensor file: unsupported version " + std::to_string(bytes[4]));
    }
    if (bytes[5] != kTensorDtypeF64) throw IoError("tensor file: unsupported dtype " + std::to_string(bytes[5]));
    const std::size_t rank = bytes[6];
    if (rank == 0) throw IoError("tensor file: rank 0");
    std::size_t pos = 7;
    if (bytes.size() < pos + 8 * rank) throw IoError("tensor file: truncated dims");
    Shape shape(rank);
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i, pos += 8) {
        const std::uint64_t d = get_u64(bytes, pos);
        if (d == 0 || d > (bytes.size() / 8)) throw IoError("tensor file: bad dimension");
        shape[i] = static_cast<std::size_t>(d);
        count *= shape[i];
        if (count > bytes.size() / 8) throw IoError("tensor file: payload shorter than dims");
    }
    if (bytes.size() - pos != 8 * count) throw IoError("tensor file: payload length does not match dims");
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i, pos += 8) data[i] = std::bit_cast<double>(get_u64(bytes, pos));
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

Tensor load_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    if (ppm_token(bytes, pos) != "P6") throw IoError("ppm: not a binary P6 file");
    const std::size_t w = ppm_int(bytes, pos, "width");
    const std::size_t h = ppm_int(bytes, pos, "height");
    const std::size_t maxval = ppm_int(bytes, pos, "maxval");
    if (w == 0 || h == 0) throw IoError("ppm: zero dimension");
    if (maxval != 255) throw IoError("ppm: only maxval 255 is supported");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("ppm: truncated header");
    ++pos;
    if (bytes.size() - pos < 3 * w * h) throw IoError("ppm: truncated payload");
    std::vector<double> data(3 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                data[(c * h + y) * w + x] = bytes[pos + (y * w + x) * 3 + c] / 255.0;
    return Tensor({3, h, w}, std::move(data));
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.shape()[0] != 3) {
        throw ShapeError("ppm: image must be [3 x H x W], got " + shape_to_string(image.shape()));
    }
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 3 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(image[(c * h + y) * w + x], 0.0, 1.0);
                out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
            }
    return out;
}

Tensor load_image_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

void save_image_ppm(const std::string& path, const Tensor& image) { write_file(path, encode_ppm(image)); }

Tensor overlay_image(const Tensor& image, const ForwardTrace& trace, std::size_t layer, double dim) {
    const SelectionEvent* event = trace.event_at(layer);
    if (!event) throw ConfigError("overlay: layer " + std::to_string(layer) + " is not a selection layer");
    if (image.rank() != 3 || image.shape()[0] != 3) throw ShapeError("overlay: image must be [3 x H x W]");
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    const std::size_t gr = trace.grid_rows, gc = trace.grid_cols;
    if (gr == 0 || gc == 0 || h % gr != 0 || w % gc != 0) {
        throw ShapeError("overlay: image does not tile into the " + std::to_string(gr) + "x" +
                         std::to_string(gc) + " patch grid");
    }
    const std::size_t ph = h / gr, pw = w / gc;
    std::vector<double> out(image.values());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                if (!event->kept_mask[(y / ph) * gc + x / pw]) out[(c * h + y) * w + x] *= dim;
    return Tensor(image.shape(), std::move(out));
}

void save_overlay(const Tensor& image, const ForwardTrace& trace, std::size_t layer,
                  const std::string& path, double dim) {
    save_image_ppm(path, overlay_image(image, trace, layer, dim));
}

std::vector<std::string> trace_json_lines(const ForwardTrace& trace, std::size_t top_scores) {
    std::vector<std::string> lines;
    for (const SelectionEvent& e : trace.events) {
        const SelectionOutcome& o = e.outcome;
        std::vector<std::size_t> order(o.scores.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t top = std::min(top_scores, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              return o.scores[a] > o.scores[b] || (o.scores[a] == o.scores[b] && a < b);
                          });
        nlohmann::json tops = nlohmann::json::array();
        for (std::size_t i = 0; i < top; ++i) tops.push_back({{"index", order[i]}, {"score", o.scores[order[i]]}});
        const nlohmann::json record = {
            {"version", kTraceSchemaVersion}, {"layer", e.layer},
            {"n_before", e.n_before},         {"n_candidates", o.n},
            {"k", o.k},                       {"n_after", e.n_after},
            {"kept_indices", o.kept_indices}, {"fused_mass", o.fused_mass},
            {"top_scores", tops},
        };
        lines.push_back(record.dump());
    }
    return lines;
}

void emit_trace_json(const ForwardTrace& trace, const std::string& path, std::size_t top_scores) {
    std::string text;
    for (const std::string& line : trace_json_lines(trace, top_scores)) text += line + "\n";
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::size_t> parse_size_list(std::string_view text) {
    std::vector<std::size_t> out;
    for (auto item : split_commas(text)) out.push_back(parse_number<std::size_t>(item, "integer"));
    return out;
}

std::vector<double> parse_double_list(std::string_view text) {
    std::vector<double> out;
    for (auto item : split_commas(text)) out.push_back(parse_number<double>(item, "number"));
    return out;
}

GuidanceMode parse_guidance_source(std::string_view text, GuidanceMode mode) {
    if (text == "text-cls") {
        mode.source = GuidanceSource::kTextCls;
    } else if (text == "image-cls") {
        mode.source = GuidanceSource::kImageCls;
    } else if (text == "multimodal-cls") {
        mode.source = GuidanceSource::kMultimodalCls;
    } else {
        throw ConfigError("unknown guidance mode '" + std::string(text) + "'");
    }
    return mode;
}

RunConfig parse_run_config(std::string_view text) {
    std::map<std::string, std::string, std::less<>> entries;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key(trim(line.substr(0, eq)));
        if (!entries.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }

    RunConfig cfg;
    ModelConfig& m = cfg.model;
    for (const auto& [key, value] : entries) {
        if (key == "layers") {
            m.layers = parse_number<std::size_t>(value, key);
        } else if (key == "width") {
            m.width = parse_number<std::size_t>(value, key);
        } else if (key == "heads") {
            m.heads = parse_number<std::size_t>(value, key);
        } else if (key == "patch_size") {
            m.patch_size = parse_number<std::size_t>(value, key);
        } else if (key == "image_size") {
            m.image_size = parse_number<std::size_t>(value, key);
        } else if (key == "seed") {
            m.seed = parse_number<std::uint64_t>(value, key);
        } else if (key == "locations") {
            m.selection.locations = parse_size_list(value);
        } else if (key == "rates") {
            m.selection.rates = parse_double_list(value);
        } else if (key == "mode") {
            m.mode = parse_guidance_source(value, m.mode);
        } else if (key == "itf") {
            m.mode.disable_fusion = !parse_switch(value, key);
        } else if (key == "td_att") {
            m.mode.disable_td_att = !parse_switch(value, key);
        } else if (key == "norm") {
            if (value == "post") {
                m.options.norm = NormPlacement::kPost;
            } else if (value == "pre") {
                m.options.norm = NormPlacement::kPre;
            } else {
                throw ConfigError("norm: expected post|pre");
            }
        } else if (key == "score_target") {
            if (value == "tokens") {
                m.options.score_target = ScoreTarget::kPostSaTokens;
            } else if (value == "keys") {
                m.options.score_target = ScoreTarget::kKeyProjected;
            } else {
                throw ConfigError("score_target: expected tokens|keys");
            }
        } else if (key == "rounding") {
            if (value == "floor") {
                m.options.rounding = KeepRounding::kFloor;
            } else if (value == "nearest") {
                m.options.rounding = KeepRounding::kNearest;
            } else {
                throw ConfigError("rounding: expected floor|nearest");
            }
        } else if (key == "image") {
            cfg.image_path = value;
        } else if (key == "guidance") {
            cfg.guidance_path = value;
        } else if (key == "out") {
            cfg.out_dir = value;
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    m.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Tensor run_image(const RunConfig& config) {
    const std::size_t s = config.model.image_size;
    if (config.image_path) return load_image_ppm(*config.image_path);
    SeededRng rng(config.model.seed + 1);
    std::vector<double> px(3 * s * s);
    for (double& v : px) v = rng.uniform();
    return Tensor({3, s, s}, std::move(px));
}

Tensor run_guidance(const RunConfig& config) {
    if (config.guidance_path) {
        Tensor g = load_tensor(*config.guidance_path);
        if (g.size() != config.model.width) {
            throw ConfigError("guidance tensor has " + std::to_string(g.size()) + " values, width is " +
                              std::to_string(config.model.width));
        }
        return g.reshaped({g.size()});
    }
    SeededRng rng(config.model.seed + 2);
    std::vector<double> g(config.model.width);
    for (double& v : g) v = rng.normal();
    return Tensor::vector(std::move(g));
}

}  // namespace trips
