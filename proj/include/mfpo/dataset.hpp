#pragma once

// Line-delimited JSON preference datasets.
//
// One object per line:
//   {"id": "...", "prompt": [...], "chosen": [...], "rejected": [...],
//    "image": "rel/path.png" | {"h":..,"w":..,"c":..,"data":[..]},
//    "perturbed_image": <same forms>,            (optional)
//    "keywords": [{"word": "...", "score": ..}], (optional)
//    "masks": [{"keyword": "...", "mask": <path or inline 1-channel>}],
//    "entropy": .., "difficulty": "easy|medium|hard"}   (optional, together)
//
// Relative image paths resolve against the dataset file's directory.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfpo/error.hpp"
#include "mfpo/image.hpp"
#include "mfpo/sample.hpp"

namespace mfpo {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline ImageTensor load_image_file(const fs::path& path) { return decode_image(read_file_bytes(path)); }

inline void save_image_file(const ImageTensor& img, const fs::path& path, ImageCodec codec = ImageCodec::png8) {
  write_file_bytes(path, encode_image(img, codec));
}

struct SaveOptions {
  /// json_float inlines tensors in the record; png8 writes PNG files into a
  /// sibling directory `<stem>.images/` and stores relative paths.
  ImageCodec codec = ImageCodec::json_float;
};

namespace detail {

inline Tokens tokens_field(const nlohmann::json& rec, const char* key, std::size_t line) {
  if (!rec.contains(key)) throw ParseError(line, key, "missing");
  const auto& v = rec[key];
  if (!v.is_array()) throw ParseError(line, key, "expected an array of strings");
  Tokens out;
  for (const auto& w : v) {
    if (!w.is_string()) throw ParseError(line, key, "expected an array of strings");
    out.push_back(w.get<std::string>());
  }
  return out;
}

inline ImageTensor image_field(const nlohmann::json& v, const fs::path& base, std::size_t line,
                               const std::string& field) {
  try {
    if (v.is_string()) return load_image_file(base / v.get<std::string>());
    return image_from_json(v);
  } catch (const IoError& e) {
    throw ParseError(line, field, e.what());
  } catch (const ValidationError& e) {
    throw ParseError(line, field, e.what());
  }
}

class ImageSink {
 public:
  ImageSink(const fs::path& dataset_path, ImageCodec codec) : codec_(codec) {
    if (codec_ == ImageCodec::png8) {
      rel_dir_ = dataset_path.filename().replace_extension().string() + ".images";
      abs_dir_ = dataset_path.parent_path() / rel_dir_;
      fs::create_directories(abs_dir_);
    }
  }

  nlohmann::json put(const ImageTensor& img, const std::string& name) const {
    if (codec_ == ImageCodec::json_float) return image_to_json(img);
    const std::string file = name + ".png";
    save_image_file(img, abs_dir_ / file, ImageCodec::png8);
    return (fs::path(rel_dir_) / file).generic_string();
  }

 private:
  ImageCodec codec_;
  std::string rel_dir_;
  fs::path abs_dir_;
};

inline std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

}  // namespace detail

inline PreferenceSample sample_from_json(const nlohmann::json& rec, const fs::path& base_dir, std::size_t line = 0) {
  using detail::image_field;
  if (!rec.is_object()) throw ParseError(line, "", "record must be a JSON object");
  if (!rec.contains("id") || !rec["id"].is_string()) throw ParseError(line, "id", "missing or not a string");
  const auto id = rec["id"].get<std::string>();
  if (!rec.contains("image")) throw ParseError(line, "image", "missing");

  auto prompt = detail::tokens_field(rec, "prompt", line);
  auto chosen = detail::tokens_field(rec, "chosen", line);
  auto rejected = detail::tokens_field(rec, "rejected", line);
  auto image = image_field(rec["image"], base_dir, line, "image");

  try {
    PreferenceSample s(id, std::move(prompt), std::move(chosen), std::move(rejected), std::move(image));

    if (rec.contains("keywords")) {
      const auto& kws = rec["keywords"];
      if (!kws.is_array()) throw ParseError(line, "keywords", "expected an array");
      std::vector<Keyword> out;
      for (const auto& k : kws) {
        if (!k.is_object() || !k.contains("word") || !k["word"].is_string() || !k.contains("score") ||
            !k["score"].is_number()) {
          throw ParseError(line, "keywords", "entries must be {word: string, score: number}");
        }
        out.push_back({k["word"].get<std::string>(), k["score"].get<double>()});
      }
      s = s.with_keywords(std::move(out));
    }

    std::vector<RegionMask> masks;
    if (rec.contains("masks")) {
      const auto& ms = rec["masks"];
      if (!ms.is_array()) throw ParseError(line, "masks", "expected an array");
      for (const auto& m : ms) {
        if (!m.is_object() || !m.contains("keyword") || !m["keyword"].is_string() || !m.contains("mask")) {
          throw ParseError(line, "masks", "entries must be {keyword: string, mask: path-or-inline}");
        }
        auto kw = m["keyword"].get<std::string>();
        auto img = image_field(m["mask"], base_dir, line, "masks");
        auto mask = RegionMask::from_image(img, kw);
        if (!mask) throw ParseError(line, "masks", "mask for '" + kw + "' selects no pixels");
        masks.push_back(std::move(*mask));
      }
    }
    if (rec.contains("perturbed_image") && !rec["perturbed_image"].is_null()) {
      auto pert = image_field(rec["perturbed_image"], base_dir, line, "perturbed_image");
      s = s.with_perturbation(std::move(pert), std::move(masks));
    } else if (!masks.empty()) {
      throw ParseError(line, "masks", "masks given without a perturbed image");
    }

    const bool has_entropy = rec.contains("entropy") && !rec["entropy"].is_null();
    const bool has_difficulty = rec.contains("difficulty") && !rec["difficulty"].is_null();
    if (has_entropy != has_difficulty) {
      throw ParseError(line, has_entropy ? "difficulty" : "entropy", "entropy and difficulty must appear together");
    }
    if (has_entropy) {
      if (!rec["entropy"].is_number()) throw ParseError(line, "entropy", "expected a number");
      if (!rec["difficulty"].is_string()) throw ParseError(line, "difficulty", "expected a string");
      auto d = difficulty_from_string(rec["difficulty"].get<std::string>());
      if (!d) throw ParseError(line, "difficulty", "expected easy, medium or hard");
      s = s.with_difficulty(rec["entropy"].get<double>(), *d);
    }
    return s;
  } catch (const ParseError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ParseError(line, "", e.what());
  }
}

inline nlohmann::json sample_to_json(const PreferenceSample& s, const detail::ImageSink& sink) {
  const auto stem = detail::safe_name(s.id());
  nlohmann::json rec;
  rec["id"] = s.id();
  rec["prompt"] = s.prompt();
  rec["chosen"] = s.chosen();
  rec["rejected"] = s.rejected();
  rec["image"] = sink.put(s.image(), stem);
  if (s.perturbed_image()) rec["perturbed_image"] = sink.put(*s.perturbed_image(), stem + ".pert");
  if (!s.keywords().empty()) {
    auto& kws = rec["keywords"] = nlohmann::json::array();
    for (const auto& k : s.keywords()) kws.push_back({{"word", k.word}, {"score", k.score}});
  }
  if (!s.masks().empty()) {
    auto& ms = rec["masks"] = nlohmann::json::array();
    for (std::size_t i = 0; i < s.masks().size(); ++i) {
      const auto& m = s.masks()[i];
      ms.push_back({{"keyword", m.keyword()}, {"mask", sink.put(m.to_image(), stem + ".mask" + std::to_string(i))}});
    }
  }
  if (s.entropy()) {
    rec["entropy"] = *s.entropy();
    rec["difficulty"] = std::string(to_string(*s.difficulty()));
  }
  return rec;
}

/// Reads every record in file order. Blank lines are skipped.
inline std::vector<PreferenceSample> load_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  const auto base = path.parent_path();
  std::vector<PreferenceSample> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded()) throw ParseError(line, "", "not valid JSON");
    out.push_back(sample_from_json(rec, base, line));
  }
  return out;
}

inline void save_dataset(std::span<const PreferenceSample> samples, const fs::path& path, SaveOptions opts = {}) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open dataset '" + path.string() + "' for writing");
  const detail::ImageSink sink(path, opts.codec);
  for (const auto& s : samples) {
    s.validate();
    out << sample_to_json(s, sink).dump() << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace mfpo
