#include <doctest.h>

#include <array>
#include <vector>

#include "medkg/ontology.hpp"

using namespace medkg;

namespace {

using Rows = std::vector<std::array<std::string, 4>>;

Ontology heart_toy() {
  Rows rows{
      {"420-429", "1", "", "Other forms of heart disease"},
      {"428", "2", "420-429", "Heart failure"},
      {"428.0", "3", "428", "Congestive heart failure, unspecified"},
      {"428.1", "3", "428", "Left heart failure"},
  };
  return ontology_from_rows(ConceptType::dx, "", rows, "toy");
}

}  // namespace

TEST_CASE("three-level file yields expected per-level counts") {
  Ontology ont = heart_toy();
  CHECK(ont.depth == 3);
  CHECK(ont.level_size(1) == 1);
  CHECK(ont.level_size(2) == 1);
  CHECK(ont.level_size(3) == 2);
  CHECK(ont.node(3, 0).code == "428.0");  // file order preserved
  CHECK(ont.node(3, 1).code == "428.1");
}

TEST_CASE("bundled diagnosis sample loads with depth 3") {
  Ontology ont = load_ontology(std::string(SAMPLE_DATA_DIR) + "/ontologies/icd9_dx_sample.csv",
                               ConceptType::dx);
  CHECK(ont.depth == 3);
  // 486 has no children in the file and is repeated downward
  int pad = ont.find(3, "486");
  REQUIRE(pad >= 0);
  CHECK(ont.node(3, pad).padded);
  CHECK(ont.padded_count == 1);
  ConceptId leaf{ConceptType::dx, "486", 3};
  auto chain = ancestor_chain(ont, leaf);
  REQUIRE(chain.size() == 2);
  CHECK(chain[0].code == "486");
  CHECK(chain[1].code == "460-519");
}

TEST_CASE("structural errors are rejected") {
  SUBCASE("orphan parent") {
    Rows rows{
        {"A", "1", "", "root"},
        {"B", "2", "MISSING", "child"},
    };
    CHECK_THROWS_WITH_AS(ontology_from_rows(ConceptType::dx, "", rows, "t"),
                         doctest::Contains("MISSING"), DataError);
  }
  SUBCASE("two distinct parents") {
    Rows rows{
        {"A", "1", "", "root"},
        {"B", "1", "", "root2"},
        {"C", "2", "A", "child"},
        {"C", "2", "B", "child again"},
    };
    CHECK_THROWS_WITH_AS(ontology_from_rows(ConceptType::dx, "", rows, "t"),
                         doctest::Contains("two distinct parents"), DataError);
  }
  SUBCASE("duplicate code at one level") {
    Rows rows{
        {"A", "1", "", "root"},
        {"C", "2", "A", "child"},
        {"C", "2", "A", "child dup"},
    };
    CHECK_THROWS_WITH_AS(ontology_from_rows(ConceptType::dx, "", rows, "t"),
                         doctest::Contains("duplicate"), DataError);
  }
  SUBCASE("level gap") {
    Rows rows{
        {"A", "1", "", "root"},
        {"B", "3", "A", "skips level 2"},
    };
    CHECK_THROWS_AS(ontology_from_rows(ConceptType::dx, "", rows, "t"), DataError);
  }
  SUBCASE("root with a parent") {
    Rows rows{{"A", "1", "X", "root"}};
    CHECK_THROWS_AS(ontology_from_rows(ConceptType::dx, "", rows, "t"), DataError);
  }
}

TEST_CASE("map_level walks both directions") {
  Ontology ont = heart_toy();
  ConceptId leaf{ConceptType::dx, "428.0", 3};
  auto up = map_level(ont, leaf, 2);
  REQUIRE(up.size() == 1);
  CHECK(up[0].code == "428");
  CHECK(up[0].level == 2);

  ConceptId mid{ConceptType::dx, "428", 2};
  auto down = map_level(ont, mid, 3);
  REQUIRE(down.size() == 2);
  CHECK(down[0].code == "428.0");
  CHECK(down[1].code == "428.1");

  auto self = map_level(ont, leaf, 3);
  REQUIRE(self.size() == 1);
  CHECK(self[0] == leaf);

  CHECK_THROWS_AS(map_level(ont, leaf, 4), ConfigError);
  CHECK_THROWS_AS(map_level(ont, ConceptId{ConceptType::dx, "999", 3}, 2), DataError);
}

TEST_CASE("ancestor chain lists nearest ancestor first") {
  Ontology ont = load_ontology(std::string(TEST_DATA_DIR) + "/icd9_dx_l4.csv", ConceptType::dx);
  CHECK(ont.depth == 4);
  auto chain = ancestor_chain(ont, ConceptId{ConceptType::dx, "250.7", 4});
  REQUIRE(chain.size() == 3);
  CHECK(chain[0].code == "250");
  CHECK(ont.node(3, ont.find(3, "250")).description == "Diabetes mellitus");
  CHECK(chain[1].code == "249-259");
  CHECK(chain[2].code == "240-279");
  CHECK(ont.node(1, ont.find(1, "240-279")).description ==
        "Endocrine, Nutritional, and Metabolic Diseases, and Immunity Disorders");
}

TEST_CASE("unified node ids order systems dx, rx, px in file order") {
  auto base = std::string(SAMPLE_DATA_DIR) + "/ontologies/";
  std::vector<Ontology> onts;
  onts.push_back(load_ontology(base + "atc_rx_sample.csv", ConceptType::rx));
  onts.push_back(load_ontology(base + "icd9_px_sample.csv", ConceptType::px));
  onts.push_back(load_ontology(base + "icd9_dx_sample.csv", ConceptType::dx));
  OntologySet set(std::move(onts));  // reorders to dx, rx, px

  CHECK(set.depth() == 3);
  const Ontology* dx = set.ontology_by_type(ConceptType::dx);
  REQUIRE(dx != nullptr);
  int n_dx = dx->level_size(3);
  CHECK(set.dx_leaf_count() == n_dx);
  CHECK(set.find_leaf(ConceptType::dx, "428.0") == 0);  // first dx leaf in file order
  CHECK(set.find_leaf(ConceptType::rx, "N02BE01") == n_dx);
  CHECK(set.concept_at(3, 0).type == ConceptType::dx);
  CHECK(set.level_count(3) ==
        n_dx + set.ontology_by_type(ConceptType::rx)->level_size(3) +
            set.ontology_by_type(ConceptType::px)->level_size(3));

  // leaf_ancestor agrees with ancestor_chain for a spot-checked rx leaf
  int uid = set.find_leaf(ConceptType::rx, "C03CA01");
  REQUIRE(uid >= 0);
  int anc2 = set.leaf_ancestor(uid, 2);
  CHECK(set.concept_at(2, anc2).code == "C03");
  int anc1 = set.leaf_ancestor(uid, 1);
  CHECK(set.concept_at(1, anc1).code == "C");
  CHECK(set.leaf_ancestor(uid, 3) == uid);
}

TEST_CASE("depth mismatch across systems is rejected") {
  Rows shallow{{"R", "1", "", "root"}, {"L", "2", "R", "leaf"}};
  std::vector<Ontology> onts;
  onts.push_back(heart_toy());
  onts.push_back(ontology_from_rows(ConceptType::rx, "", shallow, "t"));
  CHECK_THROWS_AS(OntologySet(std::move(onts)), DataError);
}

TEST_CASE("ontology csv round-trips through write and load") {
  Ontology ont = load_ontology(std::string(SAMPLE_DATA_DIR) + "/ontologies/icd9_dx_sample.csv",
                               ConceptType::dx);
  std::string tmp = "roundtrip_ont.csv";
  write_ontology_csv(ont, tmp);
  Ontology again = load_ontology(tmp, ConceptType::dx);
  REQUIRE(again.depth == ont.depth);
  for (int l = 1; l <= ont.depth; ++l) {
    REQUIRE(again.level_size(l) == ont.level_size(l));
    for (int i = 0; i < ont.level_size(l); ++i) {
      CHECK(again.node(l, i).code == ont.node(l, i).code);
      CHECK(again.node(l, i).description == ont.node(l, i).description);
      CHECK(again.node(l, i).parent == ont.node(l, i).parent);
    }
  }
  std::remove(tmp.c_str());
}
