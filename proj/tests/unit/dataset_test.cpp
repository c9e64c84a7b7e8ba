#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "mfpo/dataset.hpp"
#include "oracles.hpp"

using namespace mfpo;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mfpo_dataset_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kValid =
    R"({"id":"s1","prompt":["what","is","it"],"chosen":["a","dog"],"rejected":["a","cat"],)"
    R"("image":{"h":1,"w":2,"c":1,"data":[0.1,0.2]}})";

PreferenceSample full_sample(std::mt19937_64& gen, const std::string& id) {
  auto s = fixture::random_sample(gen, id, 3, 5);
  const auto mask = *RegionMask::from_rect(3, 5, 1, 0, 2, 2, "dog");
  s = s.with_perturbation(*s.perturbed_image(), {mask});
  s = s.with_keywords({{"dog", 0.4}, {"red", 0.2}});
  return s.with_difficulty(0.7, Difficulty::medium);
}

}  // namespace

TEST(PreferenceSample, Invariants) {
  const auto img = ImageTensor::filled(2, 2, 3, 0.5);
  EXPECT_THROW(PreferenceSample("a", {"q"}, {"x"}, {"x"}, img), ValidationError);
  EXPECT_THROW(PreferenceSample("", {"q"}, {"x"}, {"y"}, img), ValidationError);
  EXPECT_THROW(PreferenceSample("a", {"q"}, {}, {"y"}, img), ValidationError);
  const PreferenceSample s("a", {"q"}, {"x"}, {"y"}, img);
  EXPECT_THROW(s.with_perturbation(ImageTensor::filled(3, 2, 3, 0.5), {}), ValidationError);
  EXPECT_THROW(s.with_perturbation(img, {RegionMask::full(3, 3, "k")}), ValidationError);
  EXPECT_THROW(s.with_difficulty(-1.0, Difficulty::easy), ValidationError);
  EXPECT_THROW(s.require_perturbed(), ValidationError);
}

TEST(Dataset, EmptyFileGivesEmptyList) {
  const auto dir = scratch("empty");
  write_text(dir / "d.jsonl", "");
  EXPECT_TRUE(load_dataset(dir / "d.jsonl").empty());
}

TEST(Dataset, OneValidRecord) {
  const auto dir = scratch("one");
  write_text(dir / "d.jsonl", std::string(kValid) + "\n");
  const auto ds = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].id(), "s1");
  EXPECT_EQ(ds[0].chosen(), (Tokens{"a", "dog"}));
}

TEST(Dataset, MismatchedPerturbedImageIsRejected) {
  const auto dir = scratch("mismatch");
  std::string rec = kValid;
  rec.insert(rec.size() - 1, R"(,"perturbed_image":{"h":2,"w":2,"c":1,"data":[0,0,0,0]})");
  write_text(dir / "d.jsonl", rec + "\n");
  try {
    load_dataset(dir / "d.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_NE(std::string(e.what()).find("dimensions"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("s1"), std::string::npos);
  }
}

TEST(Dataset, ParseErrorsNameLineAndField) {
  const auto dir = scratch("errors");
  const std::string missing_chosen =
      R"({"id":"s2","prompt":["q"],"rejected":["b"],"image":{"h":1,"w":1,"c":1,"data":[0]}})";
  write_text(dir / "d.jsonl", std::string(kValid) + "\n\n" + missing_chosen + "\n");
  try {
    load_dataset(dir / "d.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.field(), "chosen");
  }
  write_text(dir / "e.jsonl", std::string(kValid) + "\n{not json\n");
  try {
    load_dataset(dir / "e.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  write_text(dir / "f.jsonl", R"({"id":"s3","prompt":["q"],"chosen":["a"],"rejected":["b"],"image":"missing.png"})");
  try {
    load_dataset(dir / "f.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "image");
  }
}

TEST(Dataset, EntropyWithoutDifficultyIsRejected) {
  const auto dir = scratch("entropy");
  std::string rec = kValid;
  rec.insert(rec.size() - 1, R"(,"entropy":0.3)");
  write_text(dir / "d.jsonl", rec + "\n");
  try {
    load_dataset(dir / "d.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "difficulty");
  }
}

TEST(Dataset, UnreadableOrUnwritablePathsAreIoErrors) {
  EXPECT_THROW(load_dataset("/nonexistent/dir/d.jsonl"), IoError);
  const auto dir = scratch("unwritable");
  fs::create_directories(dir / "d.jsonl");
  std::mt19937_64 gen(1);
  const std::vector<PreferenceSample> one{fixture::random_sample(gen, "x")};
  EXPECT_THROW(save_dataset(one, dir / "d.jsonl"), IoError);
}

TEST(Dataset, FloatCodecRoundTripIsExact) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 25; ++trial) {
    const auto dir = scratch("float" + std::to_string(trial));
    std::vector<PreferenceSample> ds;
    for (int i = 0; i < 3; ++i) {
      auto s = fixture::random_sample(gen, "s" + std::to_string(trial) + "-" + std::to_string(i));
      if (i == 1) s = full_sample(gen, s.id());
      ds.push_back(s);
    }
    save_dataset(ds, dir / "d.jsonl");
    EXPECT_EQ(load_dataset(dir / "d.jsonl"), ds);
  }
}

TEST(Dataset, PngCodecRoundTripWithinOneLevel) {
  std::mt19937_64 gen(6);
  const auto dir = scratch("png");
  std::vector<PreferenceSample> ds{full_sample(gen, "a/1"), fixture::random_sample(gen, "b"),
                                   fixture::random_sample(gen, "c")};
  save_dataset(ds, dir / "d.jsonl", {ImageCodec::png8});
  EXPECT_TRUE(fs::exists(dir / "d.images"));
  const auto back = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].id(), ds[i].id());
    EXPECT_EQ(back[i].prompt(), ds[i].prompt());
    EXPECT_EQ(back[i].chosen(), ds[i].chosen());
    EXPECT_EQ(back[i].rejected(), ds[i].rejected());
    EXPECT_EQ(back[i].keywords(), ds[i].keywords());
    EXPECT_EQ(back[i].masks(), ds[i].masks());
    EXPECT_EQ(back[i].entropy(), ds[i].entropy());
    EXPECT_EQ(back[i].difficulty(), ds[i].difficulty());
    for (std::size_t k = 0; k < ds[i].image().size(); ++k) {
      EXPECT_LE(std::abs(back[i].image().data()[k] - ds[i].image().data()[k]), 1.0 / 255);
      EXPECT_LE(std::abs(back[i].perturbed_image()->data()[k] - ds[i].perturbed_image()->data()[k]), 1.0 / 255);
    }
  }
}
