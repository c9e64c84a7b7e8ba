#pragma once

// Mask providers that stand in for a segmentation model.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "mfpo/dataset.hpp"
#include "mfpo/diffusion.hpp"
#include "mfpo/error.hpp"
#include "mfpo/image.hpp"

namespace mfpo::diffusion {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

struct Annotation {
  std::string image_id;
  std::string keyword;
  std::optional<std::array<int, 4>> rect;  ///< x, y, w, h
  std::optional<fs::path> mask_path;       ///< resolved against the annotation file
};

namespace detail {

/// 1-based starting line of each top-level element of a JSON array text.
inline std::vector<std::size_t> element_lines(const std::string& text) {
  std::vector<std::size_t> lines;
  std::size_t line = 1;
  int depth = 0;
  bool in_string = false, escaped = false;
  for (char c : text) {
    if (c == '\n') ++line;
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      if (depth == 1) lines.push_back(line);
    } else if (c == '{' || c == '[') {
      if (depth == 1) lines.push_back(line);
      ++depth;
    } else if (c == '}' || c == ']') {
      --depth;
    } else if (depth == 1 && !std::isspace(static_cast<unsigned char>(c)) && c != ',') {
      if (lines.empty() || lines.back() != line) lines.push_back(line);
    }
  }
  return lines;
}

}  // namespace detail

inline std::vector<Annotation> parse_annotations(const std::string& text, const fs::path& base_dir = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError(line, "", std::string("annotation file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError(1, "", "annotation file must be a JSON array");
  const auto lines = detail::element_lines(text);
  std::vector<Annotation> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::size_t line = i < lines.size() ? lines[i] : 0;
    const auto& e = doc[i];
    if (!e.is_object()) throw ParseError(line, "", "annotation entries must be objects");
    for (const char* key : {"image_id", "keyword"}) {
      if (!e.contains(key) || !e[key].is_string()) throw ParseError(line, key, "missing or not a string");
    }
    Annotation a{e["image_id"].get<std::string>(), e["keyword"].get<std::string>(), std::nullopt, std::nullopt};
    const bool has_rect = e.contains("rect"), has_mask = e.contains("mask");
    if (has_rect == has_mask) throw ParseError(line, "rect", "exactly one of 'rect' or 'mask' is required");
    if (has_rect) {
      const auto& r = e["rect"];
      if (!r.is_array() || r.size() != 4 || !std::all_of(r.begin(), r.end(), [](const auto& v) { return v.is_number_integer(); })) {
        throw ParseError(line, "rect", "expected [x, y, w, h] integers");
      }
      a.rect = std::array<int, 4>{r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
      if ((*a.rect)[2] <= 0 || (*a.rect)[3] <= 0) throw ParseError(line, "rect", "width and height must be positive");
    } else {
      if (!e["mask"].is_string()) throw ParseError(line, "mask", "expected a path string");
      a.mask_path = base_dir / e["mask"].get<std::string>();
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline nlohmann::json annotations_to_json(const std::vector<Annotation>& anns, const fs::path& base_dir = {}) {
  auto arr = nlohmann::json::array();
  for (const auto& a : anns) {
    nlohmann::json e{{"image_id", a.image_id}, {"keyword", a.keyword}};
    if (a.rect) e["rect"] = *a.rect;
    if (a.mask_path) e["mask"] = fs::relative(*a.mask_path, base_dir.empty() ? fs::path(".") : base_dir).generic_string();
    arr.push_back(std::move(e));
  }
  return arr;
}

/// One entry per line so parse errors point at the right record.
inline void save_annotations(const std::vector<Annotation>& anns, const fs::path& path) {
  const auto arr = annotations_to_json(anns, path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "[\n";
  for (std::size_t i = 0; i < arr.size(); ++i) out << "  " << arr[i].dump() << (i + 1 < arr.size() ? ",\n" : "\n");
  out << "]\n";
}

/// Annotation-backed provider: (image id, keyword) -> rectangles or mask
/// files. Keyword matching is case-insensitive; several entries for one key
/// are united.
class AnnotationMaskProvider final : public MaskProvider {
 public:
  explicit AnnotationMaskProvider(std::vector<Annotation> anns) {
    for (auto& a : anns) index_[{a.image_id, lowercase(a.keyword)}].push_back(std::move(a));
  }

  static AnnotationMaskProvider from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return AnnotationMaskProvider(parse_annotations(ss.str(), path.parent_path()));
  }

  std::optional<RegionMask> query(const ImageTensor& image, std::string_view image_id,
                                  std::string_view keyword) const override {
    auto it = index_.find({std::string(image_id), lowercase(keyword)});
    if (it == index_.end()) return std::nullopt;
    std::vector<RegionMask> parts;
    for (const auto& a : it->second) {
      std::optional<RegionMask> m;
      if (a.rect) {
        const auto& r = *a.rect;
        m = RegionMask::from_rect(image.height(), image.width(), r[0], r[1], r[2], r[3], std::string(keyword));
      } else {
        ImageTensor mask_img = [&] {
          try {
            return load_image_file(*a.mask_path);
          } catch (const Error& e) {
            throw ProviderError("annotation mask '" + a.mask_path->string() + "': " + e.what());
          }
        }();
        if (mask_img.height() != image.height() || mask_img.width() != image.width()) {
          throw ProviderError("annotation mask '" + a.mask_path->string() + "' does not match the image size");
        }
        m = RegionMask::from_image(mask_img, std::string(keyword));
      }
      if (m) parts.push_back(std::move(*m));
    }
    if (parts.empty()) return std::nullopt;
    if (parts.size() == 1) return std::move(parts.front());
    return RegionMask::unite(parts, std::string(keyword));
  }

 private:
  std::map<std::pair<std::string, std::string>, std::vector<Annotation>> index_;
};

/// Shells out to an external segmenter. The command template may use
/// {image}, {keyword} and {out}; the image is written as PNG, and the tool
/// is expected to write a single-channel PNG mask to {out}.
/// Exit code 0 = mask written, 1 = no region, anything else = failure.
class CommandMaskProvider final : public MaskProvider {
 public:
  CommandMaskProvider(std::string command_template, fs::path scratch_dir)
      : template_(std::move(command_template)), scratch_(std::move(scratch_dir)) {
    fs::create_directories(scratch_);
  }

  std::optional<RegionMask> query(const ImageTensor& image, std::string_view image_id,
                                  std::string_view keyword) const override {
    const auto stem = mfpo::detail::safe_name(std::string(image_id)) + "." + mfpo::detail::safe_name(std::string(keyword));
    const auto in_path = scratch_ / (stem + ".in.png");
    const auto out_path = scratch_ / (stem + ".mask.png");
    save_image_file(image, in_path);
    fs::remove(out_path);

    std::string cmd = template_;
    substitute(cmd, "{image}", quote(in_path.string()));
    substitute(cmd, "{keyword}", quote(std::string(keyword)));
    substitute(cmd, "{out}", quote(out_path.string()));
    const int status = std::system(cmd.c_str());
    const int code = status == -1 ? -1 : WEXITSTATUS(status);
    if (code == 1) return std::nullopt;
    if (code != 0) throw ProviderError("segmenter command exited with status " + std::to_string(code));
    if (!fs::exists(out_path)) throw ProviderError("segmenter reported success but wrote no mask");
    const auto mask_img = load_image_file(out_path);
    if (mask_img.height() != image.height() || mask_img.width() != image.width()) {
      throw ProviderError("segmenter mask does not match the image size");
    }
    return RegionMask::from_image(mask_img, std::string(keyword));
  }

 private:
  static void substitute(std::string& s, std::string_view key, const std::string& value) {
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
      s.replace(pos, key.size(), value);
    }
  }
  static std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
  }

  std::string template_;
  fs::path scratch_;
};

}  // namespace mfpo::diffusion
