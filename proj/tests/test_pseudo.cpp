#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lidarseed/pseudo.hpp"

using namespace lidarseed;

namespace {

std::map<SegmentKey, SegmentProposal> make_proposals(int n) {
  std::map<SegmentKey, SegmentProposal> props;
  for (int i = 0; i < n; ++i) {
    SegmentProposal p;
    p.segment_id = i;
    p.frame_id = "f0";
    p.bbox = {10.0 * i, 5.0, 10.0 * i + 8.0, 15.0};
    p.point_indices = {i};
    props[{p.frame_id, p.segment_id}] = p;
  }
  return props;
}

}  // namespace

TEST_CASE("export drops background and orders deterministically") {
  const auto proposals = make_proposals(5);
  std::vector<SegmentLabel> labels{
      {{"f0", 3}, 7}, {{"f0", 0}, 2}, {{"f0", 1}, 0}, {{"f0", 2}, 0}, {{"f0", 4}, 7}};
  auto [anns, summary] = collect_pseudo_annotations(labels, proposals);
  REQUIRE(anns.size() == 3);
  CHECK(summary.n_foreground == 3);
  CHECK(summary.n_background == 2);
  CHECK(anns[0].cluster_id == 2);  // segment 0 first
  CHECK(anns[1].frame_id == "f0");
  CHECK(anns[1].cluster_id == 7);  // segment 3
  CHECK(anns[2].cluster_id == 7);  // segment 4
}

TEST_CASE("all-background export is empty") {
  const auto proposals = make_proposals(3);
  std::vector<SegmentLabel> labels{{{"f0", 0}, 0}, {{"f0", 1}, 0}, {{"f0", 2}, 0}};
  auto [anns, summary] = collect_pseudo_annotations(labels, proposals);
  CHECK(anns.empty());
  CHECK(summary.n_foreground == 0);
}

TEST_CASE("dangling label is a hard failure") {
  const auto proposals = make_proposals(2);
  std::vector<SegmentLabel> labels{{{"f0", 9}, 1}};
  CHECK_THROWS_AS(collect_pseudo_annotations(labels, proposals), DanglingLabelError);
}

TEST_CASE("annotation file round-trip is exact") {
  const auto proposals = make_proposals(4);
  std::vector<SegmentLabel> labels{
      {{"f0", 0}, 1}, {{"f0", 1}, 2}, {{"f0", 2}, 0}, {{"f0", 3}, 300}};
  const auto summary = export_pseudo_annotations(labels, proposals, "anns_rt.jsonl");
  CHECK(summary.n_foreground == 3);
  const auto loaded = load_pseudo_annotations("anns_rt.jsonl");
  const auto [expected, _] = collect_pseudo_annotations(labels, proposals);
  REQUIRE(loaded.size() == expected.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].frame_id == expected[i].frame_id);
    CHECK(loaded[i].bbox == expected[i].bbox);
    CHECK(loaded[i].cluster_id == expected[i].cluster_id);
  }
  std::ifstream schema("anns_rt.jsonl.schema");
  std::string version;
  schema >> version;
  CHECK(version == kAnnotationSchemaVersion);
  std::remove("anns_rt.jsonl");
  std::remove("anns_rt.jsonl.schema");
}

TEST_CASE("negative proposal band filter") {
  const std::vector<BBox2D> pseudo{{0, 0, 10, 10}};

  // identical box: IoU 1 -> excluded
  CHECK(filter_negative_proposals({{0, 0, 10, 10}}, pseudo).empty());
  // disjoint: IoU 0 -> excluded (could be a missed object)
  CHECK(filter_negative_proposals({{50, 50, 60, 60}}, pseudo).empty());

  // brute-force equivalence on random instances
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::uniform_real_distribution<double> s(2.0, 30.0);
  std::vector<BBox2D> boxes, props;
  for (int i = 0; i < 10; ++i) {
    const double x = u(rng), y = u(rng);
    boxes.push_back({x, y, x + s(rng), y + s(rng)});
  }
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng), y = u(rng);
    props.push_back({x, y, x + s(rng), y + s(rng)});
  }
  const auto fast = filter_negative_proposals(props, boxes);
  std::vector<BBox2D> oracle;
  for (const auto& p : props) {
    double best = 0.0;
    for (const auto& g : boxes) best = std::max(best, box_iou(p, g));
    if (best >= 0.1 && best < 0.5) oracle.push_back(p);
  }
  REQUIRE(fast.size() == oracle.size());
  for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == oracle[i]);
  for (const auto& p : fast) {
    double best = 0.0;
    for (const auto& g : boxes) best = std::max(best, box_iou(p, g));
    CHECK(best >= 0.1);
    CHECK(best < 0.5);
  }
}

TEST_CASE("ground truth file round-trip") {
  std::vector<GroundTruthBox> gt{{"f0", {1, 2, 3, 4}, 2, false}, {"f1", {5, 6, 9, 9}, 1, true}};
  save_ground_truth(gt, "gt_rt.jsonl");
  const auto loaded = load_ground_truth("gt_rt.jsonl");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].category == 2);
  CHECK(loaded[1].heavily_occluded);
  CHECK(loaded[1].bbox == gt[1].bbox);
  std::remove("gt_rt.jsonl");
}
