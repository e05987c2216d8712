#include "prefquery/server.hpp"
#include "prefquery/harness/synthetic.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <thread>

#include "support.hpp"

using namespace prefquery;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Dataset cars_raw() {
  return Dataset::from_columns(
      {{"MPG", AttributeKind::numerical, Direction::higher_is_better},
       {"SR", AttributeKind::numerical, Direction::higher_is_better}},
      {"c1", "c2", "c3", "c4", "c5"},
      {std::vector<double>{59, 36, 46, 34, 35}, std::vector<double>{5, 4, 5, 5, 5}});
}

Dataset cars_utility() {
  return Dataset::from_columns({{"utility", AttributeKind::numerical, Direction::higher_is_better}},
                               {"c1", "c2", "c3", "c4", "c5"},
                               {std::vector<double>{159, 116, 164, 134, 158}});
}

SyntheticData synth() {
  SyntheticSpec spec;
  spec.N = 40;
  spec.m = 2;
  spec.n = 1;
  spec.numeric_weights = {1.0, 0.4};
  spec.text_weights = {0.8};
  spec.seed = 17;
  return generate_synthetic(spec);
}

ServerOptions small_options(std::optional<fs::path> state_dir = std::nullopt) {
  ServerOptions o;
  o.embed_dim = 2;
  o.state_dir = std::move(state_dir);
  return o;
}

std::vector<ServedDataset> served() {
  return {{"cars", cars_raw()}, {"cars_utility", cars_utility()}, {"synth", synth().dataset}};
}

json synth_create(std::size_t q_budget) {
  return {{"dataset", "synth"}, {"ranking", {"x1", "text1", "x2"}}, {"q_budget", q_budget}};
}

std::set<std::string> ids_of(const json& list) {
  std::set<std::string> out;
  for (const auto& t : list) out.insert(t.at("id").get<std::string>());
  return out;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("prefquery_server_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

// --- handlers ----------------------------------------------------------

TEST(Service, CreateReturnsHandleAndFirstQuestion) {
  SessionService svc(served(), small_options());
  auto r = svc.create_session(synth_create(3));
  ASSERT_EQ(r.status, 201) << r.body.dump();
  EXPECT_EQ(r.body.at("id").get<std::string>().size(), 16u);
  EXPECT_EQ(r.body.at("dataset"), "synth");
  EXPECT_EQ(r.body.at("status"), "collecting");
  EXPECT_FALSE(r.body.at("created_at").get<std::string>().empty());
  const auto& q = r.body.at("question");
  EXPECT_EQ(q.at("index"), 0);
  EXPECT_NE(q.at("a"), q.at("b"));
  auto ids = svc.snapshot(r.body.at("id").get<std::string>())->data->features.ids;
  EXPECT_NE(std::find(ids.begin(), ids.end(), q.at("a").get<std::string>()), ids.end());
}

TEST(Service, CreateRejectsBadInput) {
  SessionService svc(served(), small_options());
  EXPECT_EQ(svc.create_session({{"dataset", "nope"}, {"ranking", json::array()}, {"q_budget", 1}}).status, 404);
  EXPECT_EQ(svc.create_session(json::array()).status, 400);
  EXPECT_EQ(svc.create_session({{"dataset", "cars"}, {"ranking", {"MPG"}}, {"q_budget", 1}}).status, 400);
  EXPECT_EQ(svc.create_session({{"dataset", "cars"}, {"ranking", {"MPG", "SR"}}, {"q_budget", -1}}).status, 400);
  auto r = svc.create_session({{"dataset", "cars"}, {"ranking", {"MPG", "SR"}}, {"q_budget", 1}, {"scaling", "log"}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.body.at("code"), "invalid_input");
}

TEST(Service, SessionIdsAreDistinct) {
  SessionService svc(served(), small_options());
  std::set<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.insert(svc.create_session(synth_create(2)).body.at("id").get<std::string>());
  EXPECT_EQ(ids.size(), 20u);
}

TEST(Service, BudgetOfOneExhaustsAfterOneAnswer) {
  SessionService svc(served(), small_options());
  auto c = svc.create_session(synth_create(1)).body;
  const std::string id = c.at("id");
  auto r = svc.post_answer(id, {{"index", 0}, {"choice", "prefer_a"}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("status"), "exhausted");
  EXPECT_EQ(r.body.at("answered"), 1);
  EXPECT_TRUE(r.body.at("question").is_null());
  EXPECT_EQ(r.body.at("result"), "/sessions/" + id + "/result");

  auto again = svc.post_answer(id, {{"index", 1}, {"choice", "prefer_a"}});
  EXPECT_EQ(again.status, 409);
  EXPECT_EQ(again.body.at("code"), "state_conflict");
}

TEST(Service, AnswerIndexErrors) {
  SessionService svc(served(), small_options());
  const std::string id = svc.create_session(synth_create(4)).body.at("id");
  EXPECT_EQ(svc.post_answer(id, {{"index", 7}, {"choice", "prefer_a"}}).status, 400);
  EXPECT_EQ(svc.post_answer(id, {{"index", 0}, {"choice", "maybe"}}).status, 400);
  EXPECT_EQ(svc.post_answer(id, {{"choice", "prefer_a"}}).status, 400);
  EXPECT_EQ(svc.post_answer("missing", {{"index", 0}, {"choice", "prefer_a"}}).status, 404);
  EXPECT_EQ(svc.post_answer(id, {{"index", 0}, {"choice", "indifferent"}}).status, 200);
  EXPECT_EQ(svc.post_answer(id, {{"index", 0}, {"choice", "prefer_b"}}).status, 409);
  EXPECT_EQ(svc.snapshot(id)->answers.size(), 1u);
}

TEST(Service, ResultParametersAreValidated) {
  SessionService svc(served(), small_options());
  const std::string id = svc.create_session(synth_create(0)).body.at("id");
  EXPECT_EQ(svc.get_result(id, "-0.1", std::nullopt).status, 400);
  EXPECT_EQ(svc.get_result(id, "abc", std::nullopt).status, 400);
  EXPECT_EQ(svc.get_result(id, std::nullopt, "0").status, 400);
  EXPECT_EQ(svc.get_result(id, std::nullopt, "2.5").status, 400);
  EXPECT_EQ(svc.get_result(id, std::nullopt, "41").status, 400);
  EXPECT_EQ(svc.get_result(id, std::nullopt, std::nullopt, "-1").status, 400);
  EXPECT_EQ(svc.get_result(id, "0", "40").status, 200);
  EXPECT_EQ(svc.get_result("missing", std::nullopt, std::nullopt).status, 404);
}

TEST(Service, CarsUtilityColumnHighlightsThreeRows) {
  SessionService svc(served(), small_options());
  auto c = svc.create_session({{"dataset", "cars_utility"},
                               {"ranking", {"utility"}},
                               {"q_budget", 0},
                               {"scaling", "raw"},
                               {"prior", {{"numerical", {{"utility", 1.0}}}}}});
  ASSERT_EQ(c.status, 201) << c.body.dump();
  EXPECT_EQ(c.body.at("status"), "exhausted");
  auto r = svc.get_result(c.body.at("id"), "0.05", "1");
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(ids_of(r.body.at("indistinguishable")), (std::set<std::string>{"c1", "c3", "c5"}));
  EXPECT_EQ(ids_of(r.body.at("top_k")), (std::set<std::string>{"c3"}));
  EXPECT_EQ(r.body.at("scores").front().at("id"), "c3");
  EXPECT_DOUBLE_EQ(r.body.at("scores").front().at("score").get<double>(), 164.0);
}

// The raw-formula utility MPG + 20 SR disagrees with the printed column:
// c1 = 159 leads and c3 = 146 falls below 159 / 1.05.
TEST(Service, CarsRawFormulaFollowsItsOwnScores) {
  SessionService svc(served(), small_options());
  auto c = svc.create_session({{"dataset", "cars"},
                               {"ranking", {"SR", "MPG"}},
                               {"q_budget", 0},
                               {"scaling", "raw"},
                               {"prior", {{"numerical", {{"MPG", 1.0}, {"SR", 20.0}}}}}});
  ASSERT_EQ(c.status, 201) << c.body.dump();
  auto r = svc.get_result(c.body.at("id"), "0.05", "1");
  EXPECT_EQ(ids_of(r.body.at("indistinguishable")), (std::set<std::string>{"c1"}));
  EXPECT_DOUBLE_EQ(r.body.at("scores").at(2).at("score").get<double>(), 135.0);
}

TEST(Service, ZeroEpsilonReturnsArgmaxSet) {
  SessionService svc(served(), small_options());
  const std::string id = svc.create_session(synth_create(0)).body.at("id");
  auto r = svc.get_result(id, "0", "3").body;
  const auto& scores = r.at("scores");
  const double best = scores.front().at("score").get<double>();
  std::set<std::string> argmax;
  for (const auto& t : scores) {
    if (t.at("score").get<double>() == best) argmax.insert(t.at("id").get<std::string>());
  }
  EXPECT_EQ(ids_of(r.at("indistinguishable")), argmax);
  EXPECT_EQ(r.at("top_k").size(), 3u);
}

TEST(Service, ResultMatchesLibraryQueryOnSnapshot) {
  SessionService svc(served(), small_options());
  const std::string id = svc.create_session(synth_create(3)).body.at("id");
  for (std::size_t i = 0; i < 3; ++i) svc.post_answer(id, {{"index", i}, {"choice", i % 2 ? "prefer_b" : "prefer_a"}});
  auto snap = svc.snapshot(id);
  ASSERT_TRUE(snap);
  auto scored = score_tuples(snap->estimate, snap->data->features);
  auto expected = indistinguishability_query(scored, 0.1).id_set();
  auto r = svc.get_result(id, "0.1", "2").body;
  EXPECT_EQ(ids_of(r.at("indistinguishable")), expected);
  EXPECT_EQ(r.at("bound").at("q"), 3);
  EXPECT_EQ(r.at("bound").at("N"), 40);
}

TEST(Service, SessionDocumentShowsOutstandingQuestion) {
  SessionService svc(served(), small_options());
  auto c = svc.create_session(synth_create(2)).body;
  auto g = svc.get_session(c.at("id"));
  ASSERT_EQ(g.status, 200);
  EXPECT_EQ(g.body.at("question"), c.at("question"));
  EXPECT_EQ(g.body.at("scaling"), "rank_scaled");
  EXPECT_EQ(svc.get_session("missing").status, 404);
}

TEST(Service, ListsDatasets) {
  SessionService svc(served(), small_options());
  auto r = svc.list_datasets().body;
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].at("name"), "cars");
  EXPECT_EQ(r[0].at("rows"), 5);
  EXPECT_EQ(r[0].at("schema").size(), 2u);
}

TEST(Service, PersistsAndRestores) {
  auto dir = scratch_dir("persist");
  std::string id;
  json before;
  {
    SessionService svc(served(), small_options(dir));
    id = svc.create_session(synth_create(3)).body.at("id");
    svc.post_answer(id, {{"index", 0}, {"choice", "prefer_b"}});
    before = svc.get_session(id).body;
    EXPECT_TRUE(fs::exists(dir / (id + ".json")));
  }
  SessionService restored(served(), small_options(dir));
  auto after = restored.get_session(id);
  ASSERT_EQ(after.status, 200);
  EXPECT_EQ(after.body.dump(), before.dump());
  EXPECT_EQ(restored.post_answer(id, {{"index", 1}, {"choice", "prefer_a"}}).status, 200);
}

TEST(Service, RestoreRejectsChangedDataset) {
  auto dir = scratch_dir("fingerprint");
  {
    SessionService svc(served(), small_options(dir));
    svc.create_session(synth_create(1));
  }
  std::vector<ServedDataset> changed{{"synth", cars_raw()}};
  EXPECT_KIND(SessionService(changed, small_options(dir)), validation);
}

TEST(Port, FlagThenEnvironmentThenDefault) {
  ::unsetenv(kPortEnv);
  EXPECT_EQ(resolve_port(std::nullopt), 8080);
  ::setenv(kPortEnv, "9123", 1);
  EXPECT_EQ(resolve_port(std::nullopt), 9123);
  EXPECT_EQ(resolve_port(7000), 7000);
  ::setenv(kPortEnv, "abc", 1);
  EXPECT_KIND(resolve_port(std::nullopt), validation);
  ::unsetenv(kPortEnv);
}

// --- over HTTP ---------------------------------------------------------

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    service_ = std::make_unique<SessionService>(served(), small_options());
    server_ = std::make_unique<HttpServer>(*service_);
    port_ = server_->bind("127.0.0.1", 0);
    server_->start_background();
  }
  void TearDown() override { server_->stop(); }

  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

  json post(const std::string& path, const json& body, int expect) {
    auto res = client().Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << res->body;
    return json::parse(res->body);
  }

  json get(const std::string& path, int expect) {
    auto res = client().Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << res->body;
    return json::parse(res->body);
  }

  std::unique_ptr<SessionService> service_;
  std::unique_ptr<HttpServer> server_;
  int port_ = 0;
};

TEST_F(Http, ErrorBodiesCarryCodeAndMessage) {
  auto e = get("/sessions/doesnotexist", 404);
  EXPECT_EQ(e.at("code"), "not_found");
  EXPECT_TRUE(e.at("message").is_string());
  EXPECT_EQ(get("/nowhere", 404).at("code"), "not_found");
  auto res = client().Post("/sessions", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body).at("code"), "invalid_input");
}

TEST_F(Http, ConcurrentDoubleSubmitRecordsOneAnswer) {
  const std::string id = post("/sessions", synth_create(3), 201).at("id");
  const json answer{{"index", 0}, {"choice", "prefer_a"}};
  int statuses[2] = {0, 0};
  auto submit = [&](int slot) {
    auto res = client().Post("/sessions/" + id + "/answers", answer.dump(), "application/json");
    statuses[slot] = res ? res->status : -1;
  };
  std::thread t1(submit, 0), t2(submit, 1);
  t1.join();
  t2.join();
  std::multiset<int> got{statuses[0], statuses[1]};
  EXPECT_EQ(got, (std::multiset<int>{200, 409}));
  EXPECT_EQ(get("/sessions/" + id, 200).at("answers").size(), 1u);
}

TEST_F(Http, ScriptedSessionMatchesLibraryReplay) {
  auto data = synth();
  const json created = post("/sessions", synth_create(5), 201);
  const std::string id = created.at("id");
  auto snap = service_->snapshot(id);
  SimulatedUser user(snap->prior, 0.0, 1);
  json question = created.at("question");
  json last;
  while (!question.is_null()) {
    ComparisonQuestion q{question.at("index").get<std::size_t>(), question.at("a"), question.at("b")};
    auto a = user.answer(q, *snap->data);
    last = post("/sessions/" + id + "/answers",
                {{"index", a.index}, {"choice", std::string(to_string(a.choice))}}, 200);
    question = last.at("question");
  }
  EXPECT_EQ(last.at("status"), "exhausted");

  const json doc = get("/sessions/" + id, 200);
  auto ranking = make_ranking(data.dataset.schema(), {"x1", "text1", "x2"});
  auto built = service_->build_session_data(data.dataset, ranking, FeatureScaling::rank_scaled);
  Session replayed = replay_session(doc, built.data);
  EXPECT_EQ(replayed.estimate, service_->snapshot(id)->estimate);
  EXPECT_EQ(session_to_json(replayed).dump(), session_to_json(*service_->snapshot(id)).dump());

  const json over_http = get("/sessions/" + id + "/result?epsilon=0.05&k=3", 200);
  const json direct = SessionService::result_document(replayed, 0.05, 3, replayed.estimate.epsilon_noise,
                                                      built.max_x_num, built.max_h_text);
  EXPECT_EQ(over_http.dump(), direct.dump());
}

TEST_F(Http, ListsDatasetsRoute) {
  auto r = get("/datasets", 200);
  EXPECT_EQ(r.size(), 3u);
}
