#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segpost/common.hpp"
#include "segpost/dynahead.hpp"
#include "segpost/maskcore.hpp"
#include "segpost/suppression.hpp"

namespace segpost {

using json = nlohmann::json;

// ---- mask-set documents ------------------------------------------------------
//
// { "height": H, "width": W,
//   "instances": [ { "score": f, "category": c, "counts": [...] } ] }

struct MaskSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ScoredMask> instances;
};

inline json mask_set_to_json(const MaskSet& set) {
  json doc;
  doc["height"] = set.height;
  doc["width"] = set.width;
  json inst = json::array();
  for (const auto& m : set.instances)
    inst.push_back({{"score", m.score},
                    {"category", m.category},
                    {"counts", rle_encode(m.mask).counts()}});
  doc["instances"] = std::move(inst);
  return doc;
}

inline MaskSet mask_set_from_json(const json& doc) {
  try {
    MaskSet set;
    set.height = doc.at("height").get<std::size_t>();
    set.width = doc.at("width").get<std::size_t>();
    const auto& inst = doc.at("instances");
    if (!inst.is_array()) throw MalformedInput("'instances' must be an array");
    for (std::size_t i = 0; i < inst.size(); ++i) {
      const auto& e = inst[i];
      const double score = e.at("score").get<double>();
      if (!(score > 0.0 && score <= 1.0))
        throw MalformedInput("instance " + std::to_string(i) +
                             ": score must lie in (0,1]");
      RleMask rle(set.height, set.width,
                  e.at("counts").get<std::vector<RleMask::Count>>());
      set.instances.push_back(
          ScoredMask{rle_decode(rle), score, e.at("category").get<int>()});
    }
    return set;
  } catch (const json::exception& e) {
    throw MalformedInput(std::string("mask-set json: ") + e.what());
  }
}

inline MaskSet read_mask_set(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw MalformedInput(std::string("mask-set json: ") + e.what());
  }
  return mask_set_from_json(doc);
}

// { "kept": [ { "index": i, "score": f, "category": c, "box": [x0,y0,x1,y1] } ] }
inline json result_to_json(const MaskSet& input, const SuppressionResult& r) {
  json kept = json::array();
  for (std::size_t k = 0; k < r.size(); ++k) {
    const auto& m = input.instances.at(r.kept_indices[k]);
    const Box b = mask_to_box(m.mask);
    kept.push_back({{"index", r.kept_indices[k]},
                    {"score", r.updated_scores[k]},
                    {"category", m.category},
                    {"box", {b.x_min, b.y_min, b.x_max, b.y_max}}});
  }
  return json{{"kept", std::move(kept)}};
}

// Pipeline output: the result schema plus each survivor's RLE counts.
inline json instances_to_json(const std::vector<Instance>& instances,
                              std::size_t height, std::size_t width) {
  json kept = json::array();
  for (const auto& in : instances)
    kept.push_back({{"index", in.index},
                    {"score", in.score},
                    {"category", in.category},
                    {"box", {in.box.x_min, in.box.y_min, in.box.x_max, in.box.y_max}},
                    {"counts", rle_encode(in.mask).counts()}});
  return json{{"height", height}, {"width", width}, {"kept", std::move(kept)}};
}

// ---- tensor files -------------------------------------------------------------
//
// One JSON header line {"shape": [...], "kind": "feature|kernel|category"}
// followed by the row-major little-endian float32 payload.

struct Tensor {
  std::string kind;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
           (v >> 24);
  return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.data.size() != t.numel())
    throw DimensionMismatch("tensor payload does not match its shape");
  out << json{{"shape", t.shape}, {"kind", t.kind}}.dump() << '\n';
  for (float f : t.data) {
    std::uint32_t bits = detail::to_le(std::bit_cast<std::uint32_t>(f));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

inline Tensor read_tensor(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw MalformedInput("tensor file: missing header");
  Tensor t;
  try {
    const json h = json::parse(header);
    t.kind = h.at("kind").get<std::string>();
    t.shape = h.at("shape").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw MalformedInput(std::string("tensor header: ") + e.what());
  }
  if (t.kind != "feature" && t.kind != "kernel" && t.kind != "category")
    throw MalformedInput("tensor kind '" + t.kind + "' is not feature|kernel|category");
  if (t.shape.size() != 3) throw MalformedInput("tensor shape must have 3 dims");
  t.data.resize(t.numel());
  for (auto& f : t.data) {
    std::uint32_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
      throw MalformedInput("tensor payload truncated");
    f = std::bit_cast<float>(detail::to_le(bits));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw MalformedInput("tensor payload has trailing bytes");
  return t;
}

namespace detail {

inline std::vector<double> widen(const std::vector<float>& v) {
  return {v.begin(), v.end()};
}

inline std::vector<float> narrow(std::span<const double> v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

inline void require_kind(const Tensor& t, const char* kind) {
  if (t.kind != kind)
    throw MalformedInput("expected a " + std::string(kind) + " tensor, got " + t.kind);
}

}  // namespace detail

inline FeatureMap to_feature_map(const Tensor& t) {
  detail::require_kind(t, "feature");
  return FeatureMap(t.shape[0], t.shape[1], t.shape[2], detail::widen(t.data));
}

inline KernelGrid to_kernel_grid(const Tensor& t, std::size_t feature_channels) {
  detail::require_kind(t, "kernel");
  if (t.shape[0] != t.shape[1]) throw MalformedInput("kernel grid must be S x S x D");
  return KernelGrid(t.shape[0], t.shape[2], feature_channels, detail::widen(t.data));
}

inline CategoryGrid to_category_grid(const Tensor& t) {
  detail::require_kind(t, "category");
  if (t.shape[0] != t.shape[1]) throw MalformedInput("category grid must be S x S x C");
  return CategoryGrid(t.shape[0], t.shape[2], detail::widen(t.data));
}

inline Tensor to_tensor(const FeatureMap& f) {
  return {"feature", {f.height(), f.width(), f.channels()}, detail::narrow(f.data())};
}

inline Tensor to_tensor(const KernelGrid& k) {
  return {"kernel", {k.grid_size(), k.grid_size(), k.kernel_dim()},
          detail::narrow(k.data())};
}

inline Tensor to_tensor(const CategoryGrid& c) {
  return {"category", {c.grid_size(), c.grid_size(), c.num_classes()},
          detail::narrow(c.data())};
}

}  // namespace segpost
