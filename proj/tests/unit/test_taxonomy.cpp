#include <gtest/gtest.h>

#include <map>

#include "mtuda/errors.hpp"
#include "mtuda/taxonomy.hpp"
#include "taxonomy_spots.hpp"

using namespace mtuda;

namespace {

// Used rows covering the seven super classes once each.
const std::string kMinimal =
    "0\tr\t1\tflat\n1\tb\t1\tconstruction\n2\tp\t1\tobject\n3\tv\t1\tnature\n"
    "4\ts\t1\tsky\n5\th\t1\thuman\n6\tc\t1\tvehicle\n";

std::string error_of(const std::string& text) {
  try {
    load_mapping(text, "t");
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Taxonomy, ShippedTablesLoad) {
  const std::map<std::string, std::size_t> rows{{"cityscapes", 35}, {"gta5", 20}, {"mapillary", 66}, {"idd", 40}};
  for (const auto& name : shipped_mapping_names()) {
    const ClassMapping m = shipped_mapping(name);
    EXPECT_EQ(m.dataset_name, name);
    EXPECT_EQ(m.entries.size(), rows.at(name)) << name;
  }
}

TEST(Taxonomy, SpotRowsAgreeWithPublishedTables) {
  std::map<std::string, int> per_dataset;
  for (const auto& r : spots::rows()) {
    const ClassEntry& e = shipped_mapping(r.dataset).find(r.orig_id);
    EXPECT_EQ(e.name, r.name) << r.dataset << " " << r.orig_id;
    EXPECT_EQ(e.used, r.used) << r.dataset << " " << r.orig_id;
    EXPECT_EQ(e.super_class, r.super_class) << r.dataset << " " << r.orig_id;
    ++per_dataset[r.dataset];
  }
  for (const auto& name : shipped_mapping_names()) EXPECT_GE(per_dataset[name], 10) << name;
}

TEST(Taxonomy, RemapRoadAndParkingInCityscapes) {
  const ClassMapping cs = shipped_mapping("cityscapes");
  LabelMap road(1, 4, 4, 7);
  for (auto v : remap_labels(cs, road).values) EXPECT_EQ(v, 0);
  LabelMap mixed(1, 1, 3, 0);
  mixed.values = {9, 26, 0};
  const LabelMap out = remap_labels(cs, mixed);
  EXPECT_EQ(out.values[0], kIgnoreLabel);
  EXPECT_EQ(out.values[1], 6);
  EXPECT_EQ(out.values[2], kIgnoreLabel);
}

TEST(Taxonomy, MapillaryCarIsVehicleAndIddCarIsVehicle) {
  EXPECT_EQ(shipped_mapping("mapillary").target(55), 6);
  EXPECT_EQ(shipped_mapping("idd").target(12), 6);
  EXPECT_EQ(shipped_mapping("gta5").target(10), 4);
}

TEST(Taxonomy, UnknownIdNamesTheId) {
  LabelMap l(1, 1, 2, 7);
  l.values[1] = 99;
  try {
    remap_labels(shipped_mapping("cityscapes"), l);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(Taxonomy, EverySuperClassHitByAUsedRow) {
  for (const auto& name : shipped_mapping_names()) {
    std::array<bool, kNumSuperClasses> hit{};
    for (const auto& e : shipped_mapping(name).entries) {
      if (e.used) hit[super_class_index(e.super_class)] = true;
    }
    for (bool h : hit) EXPECT_TRUE(h) << name;
  }
}

TEST(Taxonomy, SerializeRoundTrip) {
  for (const auto& name : shipped_mapping_names()) {
    const ClassMapping m = shipped_mapping(name);
    EXPECT_EQ(load_mapping(serialize_mapping(m), name), m);
  }
}

TEST(Taxonomy, ValidationErrorsCarryLineNumbers) {
  EXPECT_EQ(load_mapping("# header\n\n" + kMinimal, "t").entries.size(), 7u);
  EXPECT_NE(error_of(kMinimal + "3\tdup\t0\tvoid\n").find("t:8: duplicate class id 3"), std::string::npos);
  EXPECT_NE(error_of(kMinimal + "9\tx\t1\tvoid\n").find("t:8: used class"), std::string::npos);
  EXPECT_NE(error_of(kMinimal + "9\tx\t0\tmoon\n").find("t:8: unknown super class"), std::string::npos);
  EXPECT_NE(error_of(kMinimal + "9\tx\t2\tflat\n").find("t:8: used must be"), std::string::npos);
  EXPECT_NE(error_of("# c\n" + kMinimal + "z\tx\t0\tvoid\n").find("t:9: bad class id"), std::string::npos);
  EXPECT_NE(error_of("0 r 1 flat\n").find("t:1: expected 4"), std::string::npos);
  EXPECT_NE(error_of("0\tr\t1\tflat\n").find("super class 'construction' has no used row"), std::string::npos);
}

TEST(Taxonomy, UnknownShippedNameIsConfigError) {
  EXPECT_THROW(shipped_mapping("kitti"), ConfigError);
}
