// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>

#include "scenarios.hpp"
#include "test_helpers.hpp"
#include "tinyllm/data_pipeline.hpp"
#include "tinyllm/error.hpp"
#include "tinyllm/shard.hpp"

namespace tinyllm {
namespace {

using testing::read_all;
using testing::split_documents;
using testing::synthetic_source;
using testing::TempDir;

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(NormalizeSeries, Endpoints) {
  const std::vector<double> lo{3.0}, hi{7.0};
  EXPECT_EQ(normalize_series(lo, 3.0, 7.0), std::vector<int>{0});
  EXPECT_EQ(normalize_series(hi, 3.0, 7.0), std::vector<int>{100});
}

TEST(NormalizeSeries, MidpointAndProximityRange) {
  const std::vector<double> mid{5.0};
  EXPECT_EQ(normalize_series(mid, 0.0, 10.0), std::vector<int>{50});
  // round(100 * v / 255) for 2, 10, 23 is 1, 4, 9
  const std::vector<double> prox{2.0, 10.0, 23.0};
  EXPECT_EQ(normalize_series(prox, 0.0, 255.0), (std::vector<int>{1, 4, 9}));
}

TEST(NormalizeSeries, ConstantRangeAndClamping) {
  const std::vector<double> v{1.0, 5.0, -3.0};
  EXPECT_EQ(normalize_series(v, 2.0, 2.0), (std::vector<int>{0, 0, 0}));
  const std::vector<double> out_of_range{-10.0, 20.0};
  EXPECT_EQ(normalize_series(out_of_range, 0.0, 10.0), (std::vector<int>{0, 100}));
}

TEST(NormalizeSeries, RejectsNonFinite) {
  const std::vector<double> v{1.0, std::nan("")};
  EXPECT_THROW(normalize_series(v, 0.0, 1.0), Error);
  EXPECT_THROW(normalize_series(std::vector<double>{1.0}, 2.0, 1.0), Error);
}

TEST(NormalizeSeriesProperty, BoundedAndMonotone) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> range(-1000.0, 1000.0);
  for (int trial = 0; trial < 200; ++trial) {
    double lo = range(rng), hi = range(rng);
    if (hi < lo) std::swap(lo, hi);
    std::vector<double> v(64);
    for (auto& x : v) x = range(rng) * 1.5;
    std::sort(v.begin(), v.end());
    const auto n = normalize_series(v, lo, hi);
    for (std::size_t i = 0; i < n.size(); ++i) {
      ASSERT_GE(n[i], 0);
      ASSERT_LE(n[i], 100);
      if (i) ASSERT_LE(n[i - 1], n[i]);
    }
  }
}

TEST(CleanText, CollapsesWhitespaceAndStripsControls) {
  EXPECT_EQ(clean_text("  a \t  b\x01  \n\n\n  c  "), "a b\nc");
  EXPECT_EQ(clean_text(""), "");
}

TEST(TransformTable, SingleRowStructure) {
  SensorTable t;
  t.columns.push_back({"Proximity", "", {42.0}});
  PromptTemplateConfig tmpl{"Proximity sensor, range 0-100.", {"Proximity"}};
  const auto docs = transform_table(t, tmpl, {{"Proximity", {0.0, 100.0}}});
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0], "Proximity sensor, range 0-100.\nProximity: [42]");
}

TEST(TransformTable, GestureLayout) {
  SensorTable t;
  t.columns.push_back({"Proximity", "", {2, 10, 23}});
  t.columns.push_back({"Red", "", {244, 243, 20}});
  t.columns.push_back({"Blue", "", {255, 255, 255}});
  t.columns.push_back({"Green", "", {200, 201, 45}});
  PromptTemplateConfig tmpl{"", {"Proximity", "Red", "Blue", "Green"}};
  std::map<std::string, NormRange> ranges;
  for (const auto& c : tmpl.column_order) ranges[c] = {0.0, 100.0};
  ranges["Proximity"] = {0.0, 255.0};
  const auto docs = transform_table(t, tmpl, ranges);
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0], "Proximity: [1, 4, 9]\nRed: [100, 100, 20]\nBlue: [100, 100, 100]\nGreen: [100, 100, 45]");
}

TEST(TransformTable, RowGroupsAndErrors) {
  SensorTable t;
  t.columns.push_back({"A", "", {0, 50, 100, 25}});
  PromptTemplateConfig tmpl{"ctx", {"A"}, "\n", 2};
  const auto docs = transform_table(t, tmpl, {{"A", {0, 100}}});
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[1], "ctx\nA: [100, 25]");

  SensorTable empty;
  empty.columns.push_back({"A", "", {}});
  try {
    transform_table(empty, tmpl, {{"A", {0, 100}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty table");
  }
  PromptTemplateConfig missing{"", {"B"}};
  EXPECT_THROW(transform_table(t, missing, {{"B", {0, 1}}}), Error);
}

TEST(SensorTable, ValidatesShape) {
  SensorTable t;
  t.columns.push_back({"A", "", {1, 2}});
  t.columns.push_back({"B", "", {1}});
  EXPECT_THROW(t.validate(), Error);
  SensorTable ts;
  ts.columns.push_back({"A", "", {1, 2}});
  ts.timestamps = {2.0, 1.0};
  EXPECT_THROW(ts.validate(), Error);
}

TEST(Csv, ReadsSensorColumns) {
  TempDir dir("csv");
  {
    std::ofstream f(dir / "s.csv");
    f << "t,Proximity,\"Red, raw\",label\n0,2,244,Hold\n1,10,243,Hold\n";
  }
  const auto csv = read_csv(dir / "s.csv");
  const auto table = sensor_table_from_csv(csv, {"Proximity", "Red, raw"}, {{"Proximity", "cm"}}, "t");
  EXPECT_EQ(table.rows(), 2u);
  EXPECT_EQ(table.columns[1].values[0], 244.0);
  EXPECT_EQ(table.columns[0].unit, "cm");
  EXPECT_THROW(sensor_table_from_csv(csv, {"label"}, {}), Error);
}

TEST(Shard, FileFormatIsBitExact) {
  TempDir dir("shard");
  ShardWriter w(dir.path(), kMinShardBytes);
  const std::vector<TokenId> toks{1, 258, 50256};
  w.append(toks);
  const auto shards = w.finish();
  ASSERT_EQ(shards.size(), 1u);
  const std::string bytes = file_bytes(shards[0].path);
  const std::string expected("TLLMSHRD\x01\0\0\0\0\0\0\0\x03\0\0\0\0\0\0\0\x01\0\x02\x01\x50\xC4", 30);
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(inspect_shard(shards[0].path).token_count, 3u);
}

TEST(Shard, DetectsCorruption) {
  TempDir dir("shard");
  {
    std::ofstream f(dir / "bad.bin", std::ios::binary);
    f << "NOTASHARD_______________";
  }
  EXPECT_THROW(inspect_shard(dir / "bad.bin"), Error);
  ShardWriter w(dir / "ok", kMinShardBytes);
  w.append(std::vector<TokenId>{1, 2, 3});
  const auto s = w.finish();
  std::filesystem::resize_file(s[0].path, kShardHeaderBytes + 4);
  EXPECT_THROW(inspect_shard(s[0].path), Error);
}

TEST(TokenizeCorpus, CountsDocumentsAndEndTokens) {
  const auto& tok = testing::gpt2_tokenizer();
  const std::string doc = "a a a a a a a a a a";
  ASSERT_EQ(tok.encode(doc).size(), 10u);
  TempDir dir("tokc");
  const std::vector<std::string> docs(3, doc);
  const auto shards = tokenize_corpus(docs, tok, kDefaultShardBytes, dir.path());
  ASSERT_EQ(shards.size(), 1u);
  EXPECT_EQ(shards[0].token_count, 33u);
  const auto all = read_all(shards);
  EXPECT_EQ(std::count(all.begin(), all.end(), kEndOfText), 3);
  EXPECT_EQ(std::filesystem::file_size(shards[0].path), kShardHeaderBytes + 2 * 33);
}

TEST(TokenizeCorpus, EmptyStreamAndLimits) {
  const auto& tok = testing::gpt2_tokenizer();
  TempDir dir("tokc");
  EXPECT_TRUE(tokenize_corpus(std::vector<std::string>{}, tok, kMinShardBytes, dir.path()).empty());
  EXPECT_THROW(tokenize_corpus(std::vector<std::string>{"x"}, tok, 1000, dir.path()), Error);
}

TEST(TokenizeCorpus, SpillsAcrossShardsLosslessly) {
  const auto& tok = testing::gpt2_tokenizer();
  TempDir dir("tokc");
  std::mt19937_64 rng(5);
  std::vector<std::string> docs;
  std::vector<TokenId> expected;
  const char* words[] = {"sensor", "value", "light", "red", "42", "Hold", "tap", "the", ",", "\n"};
  std::uniform_int_distribution<int> pick(0, 9), len(5, 400);
  std::size_t total = 0;
  while (total < 1'500'000) {
    std::string d;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) d += std::string(i ? " " : "") + words[pick(rng)];
    auto ids = tok.encode(d);
    ids.push_back(kEndOfText);
    total += ids.size();
    expected.insert(expected.end(), ids.begin(), ids.end());
    docs.push_back(std::move(d));
  }
  const std::uint64_t limit = 2ull << 20;
  const auto shards = tokenize_corpus(docs, tok, limit, dir.path());
  ASSERT_EQ(shards.size(), (2 * expected.size() + limit - 1) / limit);
  for (std::size_t i = 0; i + 1 < shards.size(); ++i) EXPECT_EQ(shards[i].token_count * 2, limit);
  EXPECT_EQ(read_all(shards), expected);
}

TEST(ShardWriter, HundredFiftyMegabytesIntoHundredMegabyteShards) {
  TempDir dir("big");
  const std::uint64_t limit = 100ull * 1000 * 1000;
  const std::uint64_t tokens = 75ull * 1000 * 1000;  // 150 MB of u16 ids
  std::vector<TokenId> chunk(1 << 16);
  {
    ShardWriter w(dir.path(), limit);
    for (std::uint64_t done = 0; done < tokens; done += chunk.size()) {
      for (std::size_t i = 0; i < chunk.size(); ++i) chunk[i] = static_cast<TokenId>((done + i) % 50257);
      w.append(std::span<const TokenId>(chunk).first(std::min<std::uint64_t>(chunk.size(), tokens - done)));
    }
    const auto shards = w.finish();
    ASSERT_EQ(shards.size(), 2u);
    EXPECT_EQ(shards[0].token_count, limit / 2);
    EXPECT_EQ(shards[1].token_count, tokens - limit / 2);
  }
  ShardStreamReader r(dir.path(), 1 << 20);
  EXPECT_EQ(r.total_tokens(), tokens);
  std::uint64_t pos = 0;
  std::vector<TokenId> buf(1 << 20);
  while (const auto n = r.read(buf)) {
    for (std::size_t i = 0; i < n; ++i, ++pos) ASSERT_EQ(buf[i], static_cast<TokenId>(pos % 50257)) << pos;
  }
  EXPECT_EQ(pos, tokens);
}

TEST(ShardStreamReader, DocumentsStraddleShards) {
  TempDir dir("rd");
  const auto shards = synthetic_source(dir.path(), 20000, 0, 5000, 10, 90, 3);
  ASSERT_GT(shards.size(), 1u);
  ShardStreamReader r(shards, 777);
  std::vector<TokenId> doc;
  std::vector<TokenId> joined;
  std::size_t docs = 0;
  while (r.next_document(doc)) {
    ASSERT_EQ(doc.back(), kEndOfText);
    joined.insert(joined.end(), doc.begin(), doc.end());
    ++docs;
  }
  EXPECT_EQ(docs, 20000u);
  EXPECT_EQ(joined, read_all(shards));
}

TEST(MixShards, SingleSourceIsIdentity) {
  TempDir dir("mix");
  const auto src = synthetic_source(dir / "a", 3000, 0, 1000, 5, 50, 1);
  const auto out = mix_shards(MixSpec{{{dir / "a", 1.0}}, 9, std::nullopt}, dir / "out", kMinShardBytes);
  EXPECT_EQ(read_all(out.shards), read_all(src));
}

TEST(MixShards, FortySixtyShareWithinOnePercent) {
  TempDir dir("mix");
  synthetic_source(dir / "a", 16000, 0, 1000, 20, 80, 1);
  synthetic_source(dir / "b", 24000, 1000, 2000, 20, 80, 2);
  MixSpec spec{{{dir / "a", 0.4}, {dir / "b", 0.6}}, 1234, 1'000'000};
  const auto out = mix_shards(spec, dir / "out", kMinShardBytes);
  const auto all = read_all(out.shards);
  ASSERT_GE(all.size(), 1'000'000u);
  // independent recount from the output ids (end tokens follow their document)
  std::uint64_t a = 0, b = 0;
  for (const auto& d : split_documents(all)) (d.front() < 1000 ? a : b) += d.size();
  const double share_a = static_cast<double>(a) / static_cast<double>(a + b);
  EXPECT_NEAR(share_a, 0.4, 0.01);
  EXPECT_NEAR(out.share(0), share_a, 1e-12);
  EXPECT_EQ(all.size(), a + b);
}

TEST(MixShards, TokenSharesHoldForUnequalDocumentLengths) {
  TempDir dir("mix");
  synthetic_source(dir / "a", 30000, 0, 1000, 10, 30, 1);
  synthetic_source(dir / "b", 10000, 1000, 2000, 80, 120, 2);
  MixSpec spec{{{dir / "a", 0.4}, {dir / "b", 0.6}}, 99, 1'000'000};
  const auto out = mix_shards(spec, dir / "out", kMinShardBytes);
  std::uint64_t a = 0, b = 0;
  for (const auto& d : split_documents(read_all(out.shards))) (d.front() < 1000 ? a : b) += d.size();
  ASSERT_GE(a + b, 1'000'000u);
  EXPECT_NEAR(static_cast<double>(a) / static_cast<double>(a + b), 0.4, 0.01);
}

TEST(MixShards, SameSeedIsByteIdentical) {
  TempDir dir("mix");
  synthetic_source(dir / "a", 4000, 0, 1000, 20, 80, 1);
  synthetic_source(dir / "b", 4000, 1000, 2000, 20, 80, 2);
  MixSpec spec{{{dir / "a", 0.3}, {dir / "b", 0.7}}, 77, std::nullopt};
  const auto x = mix_shards(spec, dir / "x", kMinShardBytes);
  const auto y = mix_shards(spec, dir / "y", kMinShardBytes);
  ASSERT_EQ(x.shards.size(), y.shards.size());
  for (std::size_t i = 0; i < x.shards.size(); ++i) {
    EXPECT_EQ(file_bytes(x.shards[i].path), file_bytes(y.shards[i].path));
  }
  spec.seed = 78;
  const auto z = mix_shards(spec, dir / "z", kMinShardBytes);
  EXPECT_NE(read_all(z.shards), read_all(x.shards));
}

TEST(MixShards, ExhaustedSourcesAreDroppedNotFatal) {
  TempDir dir("mix");
  const auto a = synthetic_source(dir / "a", 50, 0, 1000, 5, 10, 1);
  const auto b = synthetic_source(dir / "b", 2000, 1000, 2000, 5, 10, 2);
  const auto out = mix_shards(MixSpec{{{dir / "a", 0.5}, {dir / "b", 0.5}}, 3, std::nullopt}, dir / "o",
                              kMinShardBytes);
  // everything from both sources ends up in the output
  EXPECT_EQ(out.source_documents[0], 50u);
  EXPECT_EQ(out.source_documents[1], 2000u);
  EXPECT_EQ(read_all(out.shards).size(), read_all(a).size() + read_all(b).size());
}

TEST(MixShards, RejectsBadSpecs) {
  TempDir dir("mix");
  synthetic_source(dir / "a", 10, 0, 100, 5, 10, 1);
  std::filesystem::create_directories(dir / "empty");
  EXPECT_THROW(mix_shards(MixSpec{{{dir / "a", 0.5}, {dir / "a", 0.4}}, 1, std::nullopt}, dir / "o"), Error);
  EXPECT_THROW(mix_shards(MixSpec{{}, 1, std::nullopt}, dir / "o"), Error);
  EXPECT_THROW(mix_shards(MixSpec{{{dir / "a", 0.5}, {dir / "empty", 0.5}}, 1, std::nullopt}, dir / "o"), Error);
}

// Per-seed chi-square on document counts. A source is drawn with probability
// proportional to ratio / mean document length, so the expected document
// fractions use each source's realized mean length. 2 degrees of freedom,
// critical value 13.816 at p = 0.001.
TEST(MixShardsProperty, SharesConvergeAcrossSeeds) {
  TempDir dir("mix");
  synthetic_source(dir / "a", 3000, 0, 1000, 10, 30, 1);
  synthetic_source(dir / "b", 3000, 1000, 2000, 10, 30, 2);
  synthetic_source(dir / "c", 3000, 2000, 3000, 10, 30, 3);
  const std::vector<double> ratios{0.2, 0.3, 0.5};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    MixSpec spec{{{dir / "a", ratios[0]}, {dir / "b", ratios[1]}, {dir / "c", ratios[2]}}, seed, 60'000};
    const auto out = mix_shards(spec, dir / "o", kMinShardBytes);
    double n = 0, z = 0;
    std::vector<double> q(ratios.size());
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      n += static_cast<double>(out.source_documents[i]);
      const double mean_len = static_cast<double>(out.source_tokens[i]) / out.source_documents[i];
      z += q[i] = ratios[i] / mean_len;
    }
    double chi2 = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      const double expected = n * q[i] / z;
      chi2 += (out.source_documents[i] - expected) * (out.source_documents[i] - expected) / expected;
      EXPECT_NEAR(out.share(i), ratios[i], 0.04) << "seed " << seed;  // about 5 sigma at ~3k documents
    }
    EXPECT_LT(chi2, 13.816) << "seed " << seed;
  }
}

TEST(SplitDataset, NinetyEightTwoOnTenThousandDocs) {
  TempDir dir("split");
  const auto src = synthetic_source(dir / "in", 10000, 0, 1000, 50, 50, 4);
  const auto r = split_dataset(src, 0.98, 42, dir / "train", dir / "val", kMinShardBytes);
  EXPECT_GE(r.train_documents, 9750u);
  EXPECT_LE(r.train_documents, 9850u);
  EXPECT_EQ(r.train_documents + r.val_documents, 10000u);
}

TEST(SplitDataset, TokenShareOnMillionTokens) {
  TempDir dir("split");
  const auto src = synthetic_source(dir / "in", 25000, 0, 1000, 20, 60, 5);
  const auto r = split_dataset(src, 0.98, 7, dir / "train", dir / "val", kMinShardBytes);
  ASSERT_GE(r.train_tokens + r.val_tokens, 1'000'000u);
  EXPECT_NEAR(r.train_share(), 0.98, 0.005);
}

TEST(SplitDataset, PartitionPreservesDocumentMultiset) {
  TempDir dir("split");
  const auto src = synthetic_source(dir / "in", 500, 0, 1000, 3, 12, 6);
  auto original = split_documents(read_all(src));
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = split_dataset(src, 0.7, seed, dir / "train", dir / "val", kMinShardBytes);
    auto merged = split_documents(read_all(r.train));
    const auto val = split_documents(read_all(r.val));
    merged.insert(merged.end(), val.begin(), val.end());
    auto a = original;
    std::sort(a.begin(), a.end());
    std::sort(merged.begin(), merged.end());
    EXPECT_EQ(a, merged);
    const auto again = split_dataset(src, 0.7, seed, dir / "train2", dir / "val2", kMinShardBytes);
    EXPECT_EQ(read_all(again.train), read_all(r.train));
  }
}

TEST(SplitDataset, TwoDocumentsHalfSplit) {
  TempDir dir("split");
  const auto src = synthetic_source(dir / "in", 2, 0, 1000, 3, 3, 8);
  bool one_each = false;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const auto r = split_dataset(src, 0.5, seed, dir / "t", dir / "v", kMinShardBytes);
    EXPECT_EQ(r.train_documents + r.val_documents, 2u);
    one_each |= r.train_documents == 1;
  }
  EXPECT_TRUE(one_each);
}

TEST(SplitDataset, Errors) {
  TempDir dir("split");
  const auto src = synthetic_source(dir / "in", 5, 0, 10, 3, 3, 8);
  EXPECT_THROW(split_dataset(src, 1.0, 1, dir / "t", dir / "v"), Error);
  EXPECT_THROW(split_dataset({}, 0.5, 1, dir / "t", dir / "v"), Error);
}

}  // namespace
}  // namespace tinyllm
