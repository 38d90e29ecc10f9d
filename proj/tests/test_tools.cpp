#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <cmath>

#include "apo/tools.hpp"
#include "apo/tools_http.hpp"
#include "support.hpp"

using namespace apo;
using namespace apo::testing;

namespace {

NoiseProfile quiet(std::uint64_t seed = 0) {
  NoiseProfile p;
  p.gen_detail_error_rate = 0.0;
  p.edit_failure_rate = 0.0;
  p.edit_side_effect_rate = 0.0;
  p.vqa_error_rate = 0.0;
  p.seed = seed;
  return p;
}

}  // namespace

TEST_CASE("generate with zero error rate stores the prompt scene") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, quiet());
  Prompt p = Prompt::from_scene(parse_prompt("a red book and two yellow vases", v), v);
  std::string id = svc.generate(p, 42);
  ImageRecord rec = svc.image(id);
  CHECK(same_scene(rec.scene, p.scene, v));
  CHECK(rec.provenance.kind == Provenance::Kind::Generated);
  CHECK(svc.stats().imggen_calls == 1);
}

TEST_CASE("generate with error rate 1 always corrupts a colored group") {
  Vocabulary v = Vocabulary::default_vocab();
  NoiseProfile p = quiet(9);
  p.gen_detail_error_rate = 1.0;
  ToolService svc(v, p);
  Prompt prompt = Prompt::from_scene(parse_prompt("a red dog", v), v);
  for (int i = 0; i < 20; ++i) {
    ImageRecord rec = svc.image(svc.generate(prompt, i));
    REQUIRE(rec.scene.groups.size() == 1);
    CHECK(rec.scene.groups[0].color != prompt.scene.groups[0].color);
  }
}

TEST_CASE("per-detail corruption frequency matches the configured rate") {
  Vocabulary v = Vocabulary::default_vocab();
  NoiseProfile p = quiet(1234);
  p.gen_detail_error_rate = 0.3;
  ToolService svc(v, p);
  // Distinct categories and attributes keep every detail identifiable.
  Prompt prompt = Prompt::from_scene(
      parse_prompt("a red small dog and two blue big cats and three yellow "
                   "hats and four green balls",
                   v),
      v);
  std::uint64_t corrupted = 0, measured = 0;
  for (int i = 0; i < 10000; ++i) {
    ImageRecord rec = svc.image(svc.generate(prompt, i));
    for (const EntityGroup& want : prompt.scene.groups) {
      auto idx = groups_of_category(rec.scene, want.category);
      ++measured;  // presence detail
      if (idx.empty()) {
        ++corrupted;
        continue;  // count/attr details unmeasurable for a dropped group
      }
      const EntityGroup& got = rec.scene.groups[idx[0]];
      measured += 3;
      if (got.count != want.count) ++corrupted;
      if (got.color != want.color) ++corrupted;
      if (got.size != want.size) ++corrupted;
    }
  }
  double freq = static_cast<double>(corrupted) / static_cast<double>(measured);
  CHECK(std::abs(freq - 0.3) < 0.02);
}

TEST_CASE("edit with zero noise applies exactly the instruction") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, quiet());
  Prompt p = Prompt::from_scene(parse_prompt("a red book and two yellow vases", v), v);
  std::string id = svc.generate(p, 0);
  Scene src = svc.image(id).scene;
  int book = groups_of_category(src, "book").at(0);
  AtomicEdit e = RemoveGroup{book};
  std::string id2 = svc.edit(id, e);
  ImageRecord rec = svc.image(id2);
  CHECK(same_scene(rec.scene, apply_edit(src, e, v), v));
  CHECK(rec.provenance.kind == Provenance::Kind::Edited);
  CHECK(rec.provenance.from_id == id);
  CHECK(*rec.provenance.edit == e);
  CHECK(svc.stats().editor_calls == 1);

  CHECK_THROWS_AS(svc.edit("img-999999", e), NotFoundError);
  CHECK_THROWS_AS(svc.edit(id2, DecrementCount{5}), ValidationError);
}

TEST_CASE("edit with failure rate 1 never lands on the requested result") {
  Vocabulary v = Vocabulary::default_vocab();
  NoiseProfile p = quiet(7);
  p.edit_failure_rate = 1.0;
  ToolService svc(v, p);
  Prompt prompt = Prompt::from_scene(parse_prompt("a red dog and a blue cat", v), v);
  std::string id = svc.generate(prompt, 0);
  Scene src = svc.image(id).scene;
  int dog = groups_of_category(src, "dog").at(0);
  Scene correct = apply_edit(src, SetColor{dog, "green"}, v);
  for (int i = 0; i < 30; ++i) {
    ImageRecord rec = svc.image(svc.edit(id, SetColor{dog, "green"}));
    CHECK_FALSE(same_scene(rec.scene, correct, v));
  }
}

TEST_CASE("vqa answers worked examples and validates queries") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, quiet());
  Prompt p = Prompt::from_scene(parse_prompt("two yellow vases", v), v);
  std::string id = svc.generate(p, 0);

  VqaQuery count;
  count.kind = VqaQuery::Kind::CountOf;
  count.category = "vase";
  CHECK(svc.vqa(id, count) == VqaAnswer{2});

  VqaQuery present;
  present.kind = VqaQuery::Kind::GroupPresent;
  present.category = "dragon";
  CHECK_THROWS_AS(svc.vqa(id, present), ValidationError);
  CHECK_THROWS_AS(svc.vqa("nope", count), NotFoundError);
}

TEST_CASE("noise-free vqa equals direct scene inspection (exhaustive)") {
  Vocabulary v = tiny_vocab();
  ToolService svc(v, quiet());
  for (const Scene& s : all_scenes(v)) {
    Prompt p = Prompt::from_scene(s, v);
    std::string id = svc.generate(p, 0);
    for (const std::string& cat : v.categories) {
      auto idx = groups_of_category(s, cat);
      VqaQuery q;
      q.kind = VqaQuery::Kind::GroupPresent;
      q.category = cat;
      CHECK(svc.vqa(id, q) == VqaAnswer{!idx.empty()});
      for (int o = 0; o < v.max_groups; ++o) {
        VqaQuery c;
        c.kind = VqaQuery::Kind::CountOf;
        c.category = cat;
        c.ordinal = o;
        int want = o < (int)idx.size() ? s.groups[idx[o]].count : 0;
        CHECK(svc.vqa(id, c) == VqaAnswer{want});
        VqaQuery a;
        a.kind = VqaQuery::Kind::AttributeOf;
        a.category = cat;
        a.ordinal = o;
        a.attribute = VqaQuery::Attribute::Color;
        std::string want_color =
            o < (int)idx.size() && s.groups[idx[o]].color
                ? *s.groups[idx[o]].color
                : "none";
        CHECK(svc.vqa(id, a) == VqaAnswer{want_color});
      }
    }
    for (const Relation& r : s.relations) {
      VqaQuery q;
      q.kind = VqaQuery::Kind::RelationHolds;
      q.subject_category = s.groups[r.subject].category;
      q.predicate = r.predicate;
      q.object_category = s.groups[r.object].category;
      auto subj = groups_of_category(s, q.subject_category);
      auto obj = groups_of_category(s, q.object_category);
      q.subject_ordinal =
          (int)(std::find(subj.begin(), subj.end(), r.subject) - subj.begin());
      q.object_ordinal =
          (int)(std::find(obj.begin(), obj.end(), r.object) - obj.begin());
      CHECK(svc.vqa(id, q) == VqaAnswer{true});
    }
  }
}

TEST_CASE("fixed seed and request sequence replay identically") {
  Vocabulary v = Vocabulary::default_vocab();
  NoiseProfile p;
  p.seed = 5150;
  auto run = [&]() {
    ToolService svc(v, p);
    std::vector<std::string> log;
    Prompt prompt = Prompt::from_scene(
        parse_prompt("a red dog and two blue cats; the dog is left of the cats", v), v);
    for (int i = 0; i < 25; ++i) {
      std::string id = svc.generate(prompt, i);
      Scene s = svc.image(id).scene;
      log.push_back(render_prompt(s, v));
      auto edits = enumerate_edits(s, v);
      std::string id2 = svc.edit(id, edits[i % edits.size()]);
      log.push_back(render_prompt(svc.image(id2).scene, v));
      VqaQuery q;
      q.kind = VqaQuery::Kind::CountOf;
      q.category = "cat";
      log.push_back(to_json(svc.vqa(id2, q)).dump());
    }
    return log;
  };
  CHECK(run() == run());
}

TEST_CASE("wire path is observationally equivalent to in-process calls") {
  Vocabulary v = Vocabulary::default_vocab();
  NoiseProfile p;
  p.seed = 31337;
  p.vqa_error_rate = 0.2;

  ToolService local(v, p);
  ToolService remote_backend(v, p);
  ToolServer server(remote_backend);
  int port = server.start();
  ToolClient client("127.0.0.1", port);

  Prompt prompt = Prompt::from_scene(
      parse_prompt("a red book and two yellow vases", v), v);
  for (int i = 0; i < 10; ++i) {
    std::string a = local.generate(prompt, i);
    std::string b = client.generate(prompt, i);
    CHECK(a == b);
    CHECK(to_json(local.image(a)) == to_json(client.image(b)));
    Scene s = local.image(a).scene;
    auto edits = enumerate_edits(s, v);
    std::string a2 = local.edit(a, edits[i % edits.size()]);
    std::string b2 = client.edit(b, edits[i % edits.size()]);
    CHECK(a2 == b2);
    CHECK(to_json(local.image(a2)) == to_json(client.image(b2)));
    VqaQuery q;
    q.kind = VqaQuery::Kind::CountOf;
    q.category = "vase";
    CHECK(local.vqa(a2, q) == client.vqa(b2, q));
  }
  CHECK(local.stats() == client.stats());
  CHECK(client.stats().imggen_calls == 10);

  CHECK_THROWS_AS(client.image("img-424242"), NotFoundError);
  server.stop();
}

TEST_CASE("malformed request bodies return 400 and leave counters unchanged") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, quiet());
  ToolServer server(svc);
  int port = server.start();

  httplib::Client raw("127.0.0.1", port);
  auto res = raw.Post("/edit", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  json body = json::parse(res->body);
  CHECK(body.at("error").at("code") == "bad_request");
  CHECK(svc.stats().editor_calls == 0);

  // Parseable JSON with missing fields is also a 400.
  auto res2 = raw.Post("/edit", R"({"v":1})", "application/json");
  REQUIRE(res2);
  CHECK(res2->status == 400);
  server.stop();
}
