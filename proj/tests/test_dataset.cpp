#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mqa/dataset.hpp"
#include "mqa/error.hpp"
#include "mqa/hash.hpp"

using namespace mqa;

namespace {

std::string line(const std::string& id, const std::string& expr, const std::string& bbox,
                 const std::string& split = "val") {
  return R"({"id":")" + id + R"(","image":"img/)" + id + R"(.jpg","expression":")" + expr + R"(","bbox":)" + bbox +
         R"(,"dataset":"refcocog","split":")" + split + "\"}";
}

SplitManifest make_manifest(std::size_t n) {
  SplitManifest m;
  m.split = {DatasetTag::custom, SplitTag::val};
  for (std::size_t i = 0; i < n; ++i)
    m.samples.push_back({"s" + std::to_string(i), "i.png", "thing " + std::to_string(i), Box{0, 0, 1, 1},
                         DatasetTag::custom, SplitTag::val});
  return m;
}

}  // namespace

TEST_CASE("parse_manifest keeps file order") {
  const std::string content = line("r1", "the tall green plant in the basket is standing near the woman in black top",
                                   "[92.34, 169.19, 412.26, 348.67]") +
                              "\n" + line("r2", "dog", "[0,0,5,5]") + "\n\n" + line("r3", "cat", "[1,1,2,2]") + "\n";
  const auto m = parse_manifest(content);
  REQUIRE(m.size() == 3);
  CHECK(m.samples[0].id == "r1");
  CHECK(m.samples[0].expression == "the tall green plant in the basket is standing near the woman in black top");
  CHECK(m.samples[0].gt_box == Box{92.34, 169.19, 412.26, 348.67});
  CHECK(m.samples[2].id == "r3");
  CHECK(m.split == SplitId{DatasetTag::refcocog, SplitTag::val});
  CHECK(m.source_checksum == sha256_hex(content));
}

TEST_CASE("parse_manifest validation errors name line and field") {
  const std::string bad = line("r1", "dog", "[0,0,5,5]") + "\n" + line("r2", "cat", "[10, 10, 5, 20]") + "\n";
  try {
    parse_manifest(bad);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("x_max <= x_min") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_manifest(line("r1", "   ", "[0,0,5,5]")), ValidationError);
  CHECK_THROWS_AS(parse_manifest(line("r1", "a", "[0,0,5,5]") + "\n" + line("r1", "b", "[0,0,5,5]")),
                  ValidationError);
  try {
    parse_manifest(line("r1", "a", "[0,0,5,5]") + "\n{not json\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_manifest(R"({"id":"x","image":"a","expression":"b","bbox":[0,0,1],"dataset":"refcoco","split":"val"})"),
                  ParseError);
  CHECK_THROWS_AS(parse_manifest(R"({"id":"x","image":"a","expression":"b","bbox":[0,0,1,1],"dataset":"coco","split":"val"})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_manifest(R"({"id":"x","image":"a","expression":"b","bbox":[-1,0,1,1],"dataset":"refcoco","split":"val"})"),
                  ValidationError);
}

TEST_CASE("mixed splits need a filter") {
  const std::string content = line("a", "x", "[0,0,1,1]", "val") + "\n" + line("b", "y", "[0,0,1,1]", "test") + "\n" +
                              line("a", "z", "[0,0,1,1]", "test") + "\n";
  CHECK_THROWS_AS(parse_manifest(content), ValidationError);
  const auto test = parse_manifest(content, SplitId{DatasetTag::refcocog, SplitTag::test});
  REQUIRE(test.size() == 2);
  CHECK(test.samples[0].id == "b");
  CHECK(test.samples[1].expression == "z");
}

TEST_CASE("ingestion round-trips field for field") {
  std::mt19937_64 rng(3);
  SplitManifest m;
  m.split = {DatasetTag::ref_l4, SplitTag::test};
  for (int i = 0; i < 50; ++i) {
    const double x = double(rng() % 1000) / 7.0, y = double(rng() % 1000) / 3.0;
    m.samples.push_back({"id-" + std::to_string(i), "dir/" + std::to_string(i) + ".jpg",
                         "a \"quoted\" thing \xC3\xA9 " + std::to_string(rng() % 100), Box{x, y, x + 1.25, y + 0.5},
                         DatasetTag::ref_l4, SplitTag::test});
  }
  const std::string text = serialize_manifest(m);
  const auto back = parse_manifest(text);
  CHECK(back.samples == m.samples);
  CHECK(serialize_manifest(back) == text);
}

TEST_CASE("load_manifest reads a file") {
  const auto path = std::filesystem::temp_directory_path() / "mqa_dataset_test.jsonl";
  {
    std::ofstream f(path);
    f << line("r1", "dog", "[0,0,5,5]") << "\n";
  }
  const auto m = load_manifest(path.string());
  CHECK(m.size() == 1);
  CHECK(m.source_checksum == sha256_hex(read_file_text(path.string())));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_manifest(path.string()), Error);
}

TEST_CASE("uniform_sample") {
  const auto m10 = make_manifest(10);
  CHECK(uniform_sample(m10, 1.0, 5).samples == m10.samples);
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) CHECK(uniform_sample(m10, 0.1, seed).size() == 1);
  CHECK_THROWS_AS(uniform_sample(m10, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(uniform_sample(m10, 1.5, 1), ValidationError);

  // Post-sampling split size of the RefCOCO train set is taken as-is at ratio 1.
  CHECK(uniform_sample(make_manifest(12062), 1.0, 0).size() == 12062);
}

TEST_CASE("uniform_sample properties") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    const std::uint64_t q = 1 + rng() % 20;
    const std::uint64_t p = 1 + rng() % q;
    const double ratio = double(p) / double(q);
    const auto m = make_manifest(n);
    const std::uint64_t seed = rng();
    const auto s = uniform_sample(m, ratio, seed);
    // ceil(p * n / q) in integer arithmetic
    CHECK(s.size() == (p * n + q - 1) / q);
    CHECK(uniform_sample(m, ratio, seed).samples == s.samples);
    // subsequence of the input order
    std::size_t pos = 0;
    for (const auto& smp : s.samples) {
      while (pos < n && m.samples[pos].id != smp.id) ++pos;
      CHECK(pos < n);
      ++pos;
    }
  }
  // Different seeds should not all agree.
  const auto m = make_manifest(100);
  std::set<std::string> firsts;
  for (std::uint64_t seed = 0; seed < 20; ++seed) firsts.insert(uniform_sample(m, 0.1, seed).samples[0].id);
  CHECK(firsts.size() > 1);
}

TEST_CASE("split_stats") {
  SplitManifest m = make_manifest(2);
  m.samples[0].expression = "a b";
  m.samples[1].expression = "a b c d";
  auto st = split_stats(m);
  CHECK(st.count == 2);
  CHECK(st.mean_words == doctest::Approx(3.0));
  m.samples.resize(1);
  m.samples[0].expression = "x";
  CHECK(split_stats(m).mean_words == doctest::Approx(1.0));
  m.samples.clear();
  CHECK_THROWS_AS(split_stats(m), ValidationError);
}

TEST_CASE("split ids") {
  CHECK(parse_split_id("refcoco+:testA") == SplitId{DatasetTag::refcoco_plus, SplitTag::testA});
  CHECK(parse_split_id("ref-l4:val").str() == "ref-l4:val");
  CHECK_THROWS_AS(parse_split_id("refcoco"), ParseError);
  CHECK_THROWS_AS(parse_split_id("refcoco:dev"), ParseError);
}

TEST_CASE("convert_records maps aliases and xywh boxes") {
  const std::string src =
      R"([{"ref_id": 7, "file_name": "COCO_1.jpg", "sentence": "left dog", "bbox": [10, 20, 30, 40]},
          {"id": "b", "image": "2.jpg", "expression": "cat", "bbox": [1, 1, 2, 2], "split": "testB"}])";
  ConvertOptions opt;
  opt.box_format = ConvertOptions::BoxFormat::xywh;
  opt.dataset = DatasetTag::refcoco;
  opt.split = SplitTag::testA;
  const auto out = convert_records(src, opt);
  REQUIRE(out.size() == 2);
  CHECK(out[0].id == "7");
  CHECK(out[0].image == "COCO_1.jpg");
  CHECK(out[0].gt_box == Box{10, 20, 40, 60});
  CHECK(out[0].split == SplitTag::testA);
  CHECK(out[1].split == SplitTag::testB);
  CHECK(out[1].dataset == DatasetTag::refcoco);

  CHECK_THROWS_AS(convert_records(R"([{"id":"x","image":"a","bbox":[0,0,1,1]}])", opt), ValidationError);
}

TEST_CASE("resolve_image_path") {
  QuerySample s;
  s.image = "a/b.jpg";
  CHECK(resolve_image_path(s, "/data") == "/data/a/b.jpg");
  s.image = "/abs/c.jpg";
  CHECK(resolve_image_path(s, "/data") == "/abs/c.jpg");
  s.image = "https://host/x.jpg";
  CHECK(resolve_image_path(s, "/data") == "https://host/x.jpg");
}
