#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "steerpid/control_vector.hpp"
#include "steerpid/features_classifier.hpp"
#include "steerpid/trace_io.hpp"
#include "synthetic.hpp"

using namespace steerpid;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("steerpid_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

ClassifierModel trained_model(bool standardize) {
  TrainConfig cfg;
  cfg.standardize = standardize;
  return train(synthetic::labeled(synthetic::symmetric(24, 0.7), 60, 31), cfg);
}

std::string drop_last_lines(const std::string& text, int n) {
  std::string s = text;
  for (int i = 0; i <= n; ++i) s.erase(s.find_last_of('\n', s.size() - 2) + 1);
  return s;
}

}  // namespace

TEST(ModelFile, RoundTripIsBitExact) {
  TempDir dir;
  for (bool standardize : {false, true}) {
    const auto m = trained_model(standardize);
    save_model(m, dir.file("m.model"));
    const auto back = load_model(dir.file("m.model"));
    ASSERT_EQ(back, m);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> x(24);
      for (double& v : x) v = n(rng);
      ASSERT_EQ(predict_proba(back, x), predict_proba(m, x));
    }
  }
}

TEST(ModelFile, TruncatedFileIsRejected) {
  const std::string text = serialize(trained_model(false));
  EXPECT_THROW(parse_classifier(drop_last_lines(text, 0)), ParseError);   // missing "end"
  EXPECT_THROW(parse_classifier(drop_last_lines(text, 5)), ParseError);   // missing weights
  EXPECT_THROW(parse_classifier(text.substr(0, 40)), ParseError);         // header cut mid-way
  EXPECT_THROW(parse_classifier(""), ParseError);
}

TEST(ModelFile, DeclaredDimensionMismatch) {
  std::string text = serialize(trained_model(false));
  const auto more = std::string(text).replace(text.find("dim 24"), 6, "dim 25");
  const auto fewer = std::string(text).replace(text.find("dim 24"), 6, "dim 23");
  try {
    parse_classifier(more);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("declared dimension 25"), std::string::npos) << e.what();
    EXPECT_GT(e.line(), 0u);
  }
  EXPECT_THROW(parse_classifier(fewer), ParseError);
}

TEST(ModelFile, MissingFileIsIoError) {
  EXPECT_THROW(load_model("/nonexistent/dir/model"), IoError);
}

TEST(ModelFile, GarbageValuesRejected) {
  std::string text = serialize(trained_model(false));
  const auto pos = text.find("weights\n") + 8;
  text.replace(pos, text.find('\n', pos) - pos, "nan");
  EXPECT_THROW(parse_classifier(text), ParseError);
}

TEST(VectorFile, RoundTripIsBitExact) {
  TempDir dir;
  const auto req = synthetic::samples(std::vector<double>(32, 0.4), 1.0, 17, 2);
  const auto red = synthetic::samples(std::vector<double>(32, -0.4), 1.0, 23, 3);
  for (bool normalize : {false, true}) {
    const auto v = extract(req, red, 20, normalize);
    save_vector(v, dir.file("v.vec"));
    EXPECT_EQ(load_vector(dir.file("v.vec")), v);
  }
}

TEST(VectorFile, ValidationErrors) {
  const auto v = extract(std::vector<ChunkFeatures>{{1.0, 2.0}}, std::vector<ChunkFeatures>{{0.0, 0.0}});
  const std::string text = serialize(v);
  EXPECT_THROW(parse_control_vector(drop_last_lines(text, 1)), ParseError);
  EXPECT_THROW(parse_control_vector(std::string(text).replace(text.find("dim 2"), 5, "dim 3")), ParseError);
  EXPECT_THROW(parse_control_vector(std::string(text).replace(text.find("n_required 1"), 12, "n_required 0")),
               ParseError);
  EXPECT_THROW(parse_classifier(text), ParseError);  // wrong magic
}

// Property: random traces survive a write/read cycle unchanged.
TEST(TraceFileProperty, RoundTrip) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1e3);
  std::uniform_int_distribution<int> len(0, 30), dimd(1, 9), coin(0, 2);
  for (int t = 0; t < 50; ++t) {
    TraceHeader h;
    h.dim = static_cast<std::size_t>(dimd(rng));
    h.pooled = t % 3 != 0;
    h.chunk_size = 5;
    h.config_hash = "abc";
    std::vector<TraceRecord> recs;
    std::uint64_t step = 0;
    for (int k = len(rng); k > 0; --k) {
      TraceRecord r;
      step += 1 + static_cast<std::uint64_t>(coin(rng));
      r.step_index = step;
      std::vector<double> x(h.dim);
      for (double& v : x) v = n(rng) * std::ldexp(1.0, coin(rng) * 40 - 40);
      if (h.pooled)
        r.features = x;
      else
        r.hidden_states = {x};
      if (coin(rng)) r.true_label = coin(rng) ? RedundancyLabel::Redundant : RedundancyLabel::Required;
      if (h.pooled && coin(rng)) r.token_count = 1 + coin(rng);
      recs.push_back(r);
    }
    const Trace back = parse_trace(serialize_trace(h, recs));
    ASSERT_EQ(back.records, recs);
    ASSERT_EQ(back.header.dim, h.dim);
    ASSERT_EQ(back.header.pooled, h.pooled);
    ASSERT_EQ(back.header.config_hash, "abc");
  }
}

TEST(TraceFile, ErrorsNameTheLine) {
  TraceHeader h;
  h.dim = 2;
  std::vector<TraceRecord> recs(3);
  for (std::size_t i = 0; i < 3; ++i) {
    recs[i].step_index = i;
    recs[i].features = {1.0 * static_cast<double>(i), 2.0};
  }
  const std::string good = serialize_trace(h, recs);
  ASSERT_NO_THROW(parse_trace(good));

  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_trace(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  // Cut in the middle of the last record.
  EXPECT_EQ(line_of(good.substr(0, good.size() - 6)), 4u);
  // Whole last record missing: header declares 3.
  EXPECT_EQ(line_of(good.substr(0, good.find_last_of('\n', good.size() - 2) + 1)), 4u);
  // Wrong dimension on record 2 (line 3).
  std::string bad_dim = good;
  bad_dim.replace(bad_dim.find("[1.0,2.0]"), 9, "[1.0]");
  EXPECT_EQ(line_of(bad_dim), 3u);
  // Non-monotone step.
  std::string bad_step = good;
  bad_step.replace(bad_step.find("\"step\":2"), 8, "\"step\":1");
  EXPECT_EQ(line_of(bad_step), 4u);
  // Bad label.
  std::string bad_label = good;
  bad_label.replace(bad_label.find("\"step\":1,"), 9, "\"step\":1,\"label\":\"maybe\",");
  EXPECT_EQ(line_of(bad_label), 3u);
  EXPECT_EQ(line_of(""), 1u);
  EXPECT_EQ(line_of("{\"format\":\"other\"}\n"), 1u);
}

TEST(TraceFile, LabeledChunksRequireLabels) {
  TraceHeader h;
  h.dim = 1;
  std::vector<TraceRecord> recs(2);
  recs[0].features = {1.0};
  recs[0].true_label = RedundancyLabel::Redundant;
  recs[1].step_index = 1;
  recs[1].features = {2.0};
  EXPECT_THROW(labeled_chunks(parse_trace(serialize_trace(h, recs))), ValidationError);
  recs[1].true_label = RedundancyLabel::Required;
  EXPECT_EQ(labeled_chunks(parse_trace(serialize_trace(h, recs))).size(), 2u);
}
