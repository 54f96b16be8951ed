#include "crisis/embed.hpp"
#include "crisis/knn.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <atomic>

namespace crisis::embed {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "crisis_embed_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

EmbeddingMatrix sample_matrix() {
  EmbeddingMatrix m;
  m.values = DenseMatrix<float>(3, 4, {1, 2, 3, 4, -0.5f, 0, 0.25f, 1e-7f, 3.5f, -2, 8, 0});
  m.model_id = std::string(kDefaultModel);
  return m;
}

TEST(EmbeddingFormat, RoundTripIsBitIdentical) {
  const auto dir = scratch("roundtrip");
  auto m = sample_matrix();
  m.ids = {"c1", "c2", "c3"};
  write_embeddings(dir / "x.emb", m);
  const auto back = load_embeddings(dir / "x.emb");
  EXPECT_EQ(back.n(), 3u);
  EXPECT_EQ(back.d(), 4u);
  EXPECT_EQ(back.model_id, m.model_id);
  EXPECT_EQ(back.ids, m.ids);
  EXPECT_EQ(std::memcmp(back.values.data().data(), m.values.data().data(), 12 * sizeof(float)), 0);
}

TEST(EmbeddingFormat, HeaderLayout) {
  const auto bytes = serialize_embeddings(sample_matrix());
  EXPECT_EQ(bytes.substr(0, 4), "EMB1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 4);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), kDefaultModel.size());
  EXPECT_EQ(bytes.size(), 4 + 4 + 4 + 2 + kDefaultModel.size() + 12 * 4 + 8);
  float first;
  std::memcpy(&first, bytes.data() + 14 + kDefaultModel.size(), 4);
  EXPECT_EQ(first, 1.0f);
}

TEST(EmbeddingFormat, TruncationNamesByteCounts) {
  const auto bytes = serialize_embeddings(sample_matrix());
  try {
    deserialize_embeddings(std::string_view(bytes).substr(0, bytes.size() - 10));
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected " + std::to_string(bytes.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find("found " + std::to_string(bytes.size() - 10)), std::string::npos) << msg;
  }
}

TEST(EmbeddingFormat, RejectsCorruptionAndNonFiniteValues) {
  auto bytes = serialize_embeddings(sample_matrix());
  bytes[20 + kDefaultModel.size()] ^= 0x40;
  EXPECT_THROW(deserialize_embeddings(bytes), FormatError);
  EXPECT_THROW(deserialize_embeddings("EMB2"), FormatError);

  auto nan = sample_matrix();
  nan.values(1, 2) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(deserialize_embeddings(serialize_embeddings(nan)), FormatError);
  EXPECT_THROW(write_embeddings(scratch("nan") / "x.emb", nan), FormatError);
}

TEST(EmbeddingFormat, IdSidecarMustMatchRows) {
  const auto dir = scratch("sidecar");
  write_embeddings(dir / "x.emb", sample_matrix());
  write_file_atomic(ids_path(dir / "x.emb"), "a\nb\n");
  EXPECT_THROW(load_embeddings(dir / "x.emb"), FormatError);
}

TEST(EmbeddingFormat, NormalizationAndAlignment) {
  auto m = sample_matrix();
  m.values(2, 0) = m.values(2, 1) = m.values(2, 2) = m.values(2, 3) = 0;
  normalize_rows(m.values);
  double s = 0;
  for (float v : m.values.row(0)) s += double(v) * v;
  EXPECT_NEAR(s, 1.0, 1e-6);
  EXPECT_EQ(m.values(2, 0), 0.0f);

  m.ids = {"a", "b", "c"};
  const std::vector<std::string> good = {"a", "b", "c"}, bad = {"a", "c", "b"}, short_ids = {"a"};
  EXPECT_NO_THROW(verify_alignment(m, good));
  EXPECT_THROW(verify_alignment(m, bad), FormatError);
  EXPECT_THROW(verify_alignment(m, short_ids), FormatError);
}

// Deterministic stand-in for an embedding service; counts requests.
struct MockProvider {
  std::atomic<int> requests{0};
  std::size_t dims = 3;
  int fail_first = 0;         // transient failures before success
  int wrong_dim_batch = -1;   // batch index answering with the wrong width
  std::atomic<int> failures{0};

  static std::vector<float> vector_for(const std::string& text, std::size_t dims) {
    std::vector<float> v(dims);
    for (std::size_t i = 0; i < dims; ++i) v[i] = static_cast<float>(text.size() * (i + 1)) + 0.5f;
    return v;
  }

  BatchTransport transport() {
    return [this](const std::vector<std::string>& texts, const std::string&) {
      const int r = requests++;
      if (failures < fail_first) {
        ++failures;
        throw Error("transient");
      }
      std::vector<std::vector<float>> out;
      for (const auto& t : texts) {
        auto v = vector_for(t, dims);
        if (wrong_dim_batch >= 0 && t.rfind("b" + std::to_string(wrong_dim_batch) + ":", 0) == 0) v.push_back(0);
        out.push_back(v);
      }
      (void)r;
      return out;
    };
  }
};

std::vector<std::string> texts_for(std::size_t n, std::size_t batch) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("b" + std::to_string(i / batch) + ":" + std::string(i % 7 + 1, 'x'));
  return out;
}

ProviderConfig quick_provider(const fs::path& cache = {}) {
  ProviderConfig c;
  c.batch_size = 4;
  c.max_retries = 2;
  c.initial_backoff = std::chrono::milliseconds(1);
  c.max_concurrency = 3;
  c.cache_dir = cache;
  return c;
}

TEST(FetchEmbeddings, MatchesProviderOutputRowForRow) {
  MockProvider mock;
  const auto texts = texts_for(10, 4);
  const auto m = fetch_embeddings({}, texts, quick_provider(), mock.transport());
  ASSERT_EQ(m.n(), 10u);
  ASSERT_EQ(m.d(), 3u);
  for (std::size_t r = 0; r < 10; ++r) {
    const auto expect = MockProvider::vector_for(texts[r], 3);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(m.values(r, c), expect[c]);
  }
  EXPECT_EQ(mock.requests, 3);
  EXPECT_EQ(m.model_id, "all-mpnet-base-v2");
}

TEST(FetchEmbeddings, WrongDimensionFailsAndLeavesCacheEmpty) {
  const auto dir = scratch("wrongdim");
  MockProvider mock;
  mock.wrong_dim_batch = 1;
  const auto texts = texts_for(12, 4);
  try {
    fetch_embeddings({}, texts, quick_provider(dir), mock.transport());
    FAIL();
  } catch (const FetchError& e) {
    EXPECT_EQ(e.failed_batches, std::vector<std::size_t>{1});
  }
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST(FetchEmbeddings, WarmCacheMakesNoRequests) {
  const auto dir = scratch("cache");
  const auto texts = texts_for(9, 4);
  const std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f", "g", "h", "i"};
  MockProvider cold;
  const auto first = fetch_embeddings(ids, texts, quick_provider(dir), cold.transport());
  EXPECT_EQ(cold.requests, 3);
  MockProvider warm;
  const auto second = fetch_embeddings(ids, texts, quick_provider(dir), warm.transport());
  EXPECT_EQ(warm.requests, 0);
  EXPECT_EQ(second.values, first.values);
  EXPECT_EQ(second.ids, ids);
  // A different corpus misses the cache.
  auto other = texts;
  other[0] += "!";
  MockProvider miss;
  fetch_embeddings(ids, other, quick_provider(dir), miss.transport());
  EXPECT_EQ(miss.requests, 3);
}

TEST(FetchEmbeddings, RetriesTransientFailures) {
  MockProvider mock;
  mock.fail_first = 2;
  auto cfg = quick_provider();
  cfg.max_concurrency = 1;
  const auto texts = texts_for(4, 4);
  const auto m = fetch_embeddings({}, texts, cfg, mock.transport());
  EXPECT_EQ(m.n(), 4u);
  EXPECT_EQ(mock.requests, 3);
}

TEST(FetchEmbeddings, PersistentFailureReportsBatches) {
  int calls = 0;
  BatchTransport down = [&](const std::vector<std::string>&, const std::string&) -> std::vector<std::vector<float>> {
    ++calls;
    throw Error("503");
  };
  auto cfg = quick_provider();
  cfg.max_concurrency = 1;
  try {
    fetch_embeddings({}, texts_for(6, 4), cfg, down);
    FAIL();
  } catch (const FetchError& e) {
    EXPECT_EQ(e.failed_batches, (std::vector<std::size_t>{0, 1}));
  }
  EXPECT_EQ(calls, 2 * (cfg.max_retries + 1));
}

TEST(FetchEmbeddings, HttpTransportSpeaksTheProviderProtocol) {
  httplib::Server server;
  std::string seen_auth, seen_model;
  server.Post("/v1/embed", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    const auto body = json::parse(req.body);
    seen_model = body["model"];
    json vectors = json::array();
    for (const auto& t : body["texts"]) vectors.push_back({static_cast<double>(t.get<std::string>().size()), 1.0});
    res.set_content(json{{"vectors", vectors}}.dump(), "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ProviderConfig cfg = quick_provider();
  cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/embed";
  cfg.api_key = "secret";
  const std::vector<std::string> texts = {"a", "bbb", "cc", "dddd", "e"};
  const auto m = fetch_embeddings({}, texts, cfg, http_transport(cfg));
  EXPECT_EQ(seen_auth, "Bearer secret");
  EXPECT_EQ(seen_model, "all-mpnet-base-v2");
  ASSERT_EQ(m.n(), 5u);
  EXPECT_EQ(m.values(1, 0), 3.0f);
  EXPECT_EQ(m.values(4, 0), 1.0f);

  cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/broken";
  cfg.max_retries = 0;
  EXPECT_THROW(fetch_embeddings({}, texts, cfg, http_transport(cfg)), FetchError);
  server.stop();
  th.join();
  EXPECT_THROW(http_transport(ProviderConfig{}), ConfigError);
}

TEST(FetchEmbeddings, HashingProviderIsDeterministic) {
  const std::vector<std::string> texts = {"smoke over altadena", "smoke over altadena", "insurance claim help"};
  auto cfg = quick_provider();
  const auto a = fetch_embeddings({}, texts, cfg, hashing_transport(64));
  const auto b = fetch_embeddings({}, texts, cfg, hashing_transport(64));
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.d(), 64u);
  EXPECT_TRUE(std::equal(a.values.row(0).begin(), a.values.row(0).end(), a.values.row(1).begin()));
}

}  // namespace
}  // namespace crisis::embed

namespace crisis::knn {
namespace {

TEST(KnnGraph, CollinearHandExample) {
  const DenseMatrix<double> x(3, 1, {0.0, 1.0, 3.0});
  const auto g = knn_graph(x, 1);
  EXPECT_EQ(g.indices(0, 0), 1);
  EXPECT_EQ(g.indices(1, 0), 0);
  EXPECT_EQ(g.indices(2, 0), 1);
  EXPECT_DOUBLE_EQ(g.distances(2, 0), 2.0);
}

TEST(KnnGraph, DuplicatesKeepSelfExcluded) {
  const DenseMatrix<double> x(3, 2, {1, 1, 1, 1, 5, 5});
  const auto g = knn_graph(x, 2);
  EXPECT_EQ(g.indices(0, 0), 1);
  EXPECT_EQ(g.distances(0, 0), 0.0);
  EXPECT_EQ(g.indices(1, 0), 0);
  EXPECT_THROW(knn_graph(x, 3), ConfigError);
  EXPECT_THROW(knn_graph(x, 0), ConfigError);
}

TEST(KnnGraph, MatchesQuadraticScan) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_stream(seed, 31u);
    DenseMatrix<float> x(100, 6);
    for (auto& v : x.data()) v = static_cast<float>(uniform01(rng));
    const auto g = knn_graph(x, 7);
    const auto oracle = testing::brute_neighbors(testing::to_double(x));
    for (std::size_t i = 0; i < 100; ++i)
      for (std::size_t r = 0; r < 7; ++r) {
        ASSERT_EQ(g.indices(i, r), oracle[i][r].second) << seed << " " << i;
        ASSERT_NEAR(g.distances(i, r), oracle[i][r].first, 1e-12);
        if (r) ASSERT_LE(g.distances(i, r - 1), g.distances(i, r));
      }
  }
}

}  // namespace
}  // namespace crisis::knn
