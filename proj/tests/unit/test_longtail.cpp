#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "sdclr/errors.hpp"
#include "sdclr/longtail.hpp"

using namespace sdclr;

namespace {

SourceDataset small_source(int per_class = 60, int n_classes = 10) {
    SyntheticConfig c;
    c.n_classes = n_classes;
    c.train_per_class = per_class;
    c.test_per_class = 5;
    c.image_size = 8;
    c.seed = 3;
    return make_synthetic_shapes(c);
}

}  // namespace

TEST_CASE("exponential profile: endpoints, group sizes, frozen oracle") {
    const auto p = exp_profile(100, 500, 100);
    REQUIRE(p.counts.size() == 100);
    CHECK(p.counts.front() == 500);
    CHECK(p.counts.back() == 5);
    CHECK(std::is_sorted(p.counts.rbegin(), p.counts.rend()));
    // Oracle: round(500 * 100^(-k/99)) computed independently.
    CHECK(p.counts[33] == 108);
    CHECK(p.counts[34] == 103);
    CHECK(p.counts[66] == 23);
    CHECK(p.counts[67] == 22);
    CHECK(p.total() == 10899);

    const auto g = assign_groups(p, GroupScheme::thirds);
    CHECK(g.ranks_in(Group::many).size() == 34);
    CHECK(g.ranks_in(Group::medium).size() == 33);
    CHECK(g.ranks_in(Group::few).size() == 33);

    const auto ten = exp_profile(10, 500, 100);
    CHECK(ten.counts == std::vector<int>{500, 300, 180, 108, 65, 39, 23, 14, 8, 5});
    CHECK(ten.total() == 1242);
}

TEST_CASE("imbalance factor 1 gives a flat profile; invalid inputs throw") {
    const auto flat = exp_profile(10, 50, 1.0);
    CHECK(std::all_of(flat.counts.begin(), flat.counts.end(), [](int c) { return c == 50; }));
    CHECK_THROWS_AS(exp_profile(10, 500, 0.5), InvalidSpec);
    CHECK_THROWS_AS(exp_profile(1, 500, 10), InvalidSpec);
    CHECK_THROWS_AS(exp_profile(10, 0, 10), InvalidSpec);
}

TEST_CASE("pareto profile: published totals and endpoints") {
    const auto p = pareto_profile(1000, 1280, 5, 6);
    CHECK(p.counts.front() == 1280);
    CHECK(p.counts.back() == 5);
    CHECK(std::is_sorted(p.counts.rbegin(), p.counts.rend()));
    CHECK(std::abs(static_cast<double>(p.total()) - 115800.0) <= 1158.0);
    // Independent discretization oracle.
    CHECK(p.total() == 116079);
    const auto g = assign_groups(p, GroupScheme::thresholds);
    CHECK(g.ranks_in(Group::many).size() == 388);
    CHECK(g.ranks_in(Group::medium).size() == 469);
    CHECK(g.ranks_in(Group::few).size() == 143);

    const auto hundred = downsample_profile(p, 100);
    CHECK(hundred.counts.size() == 100);
    CHECK(hundred.counts.front() == 1280);
    CHECK(hundred.counts.back() == 5);
    CHECK(hundred.total() == 12248);
    CHECK(std::abs(static_cast<double>(hundred.total()) - 12210.0) / 12210.0 < 0.01);

    CHECK_THROWS_AS(pareto_profile(100, 10, 20, 6), InvalidSpec);
    CHECK_THROWS_AS(pareto_profile(100, 100, 5, 0), InvalidSpec);
}

TEST_CASE("group thresholds and thirds remainders") {
    ClassCountProfile p{{500, 150, 101, 100, 60, 20, 19, 5}};
    const auto g = assign_groups(p, GroupScheme::thresholds);
    CHECK(g.ranks_in(Group::many) == std::vector<int>{0, 1, 2});
    CHECK(g.ranks_in(Group::medium) == std::vector<int>{3, 4, 5});
    CHECK(g.ranks_in(Group::few) == std::vector<int>{6, 7});

    const auto ten = assign_groups(exp_profile(10, 500, 100), GroupScheme::thirds);
    CHECK(ten.ranks_in(Group::many).size() == 4);
    CHECK(ten.ranks_in(Group::medium).size() == 3);
    CHECK(ten.ranks_in(Group::few).size() == 3);
    const auto eleven = assign_groups(exp_profile(11, 500, 100), GroupScheme::thirds);
    CHECK(eleven.ranks_in(Group::many).size() == 4);
    CHECK(eleven.ranks_in(Group::medium).size() == 4);
    CHECK(eleven.ranks_in(Group::few).size() == 3);
}

TEST_CASE("long-tail sampling honours the profile, is seeded, and names short classes") {
    const auto src = small_source();
    const auto profile = exp_profile(10, 50, 10);
    const auto a = sample_longtail(src, profile, 7);
    const auto b = sample_longtail(src, profile, 7);
    const auto c = sample_longtail(src, profile, 8);
    CHECK(to_json(a) == to_json(b));
    CHECK(to_json(a) != to_json(c));

    const auto counts = a.train_class_counts(10);
    for (int cls = 0; cls < 10; ++cls) {
        CHECK(counts[static_cast<std::size_t>(cls)] ==
              profile.counts[static_cast<std::size_t>(a.class_ranks[static_cast<std::size_t>(cls)])]);
    }
    std::set<int> ranks(a.class_ranks.begin(), a.class_ranks.end());
    CHECK(ranks.size() == 10);
    CHECK(std::is_sorted(a.train_indices.begin(), a.train_indices.end()));
    for (std::size_t i = 0; i < a.train_indices.size(); ++i) {
        CHECK(src.train.labels[a.train_indices[i]] == a.train_labels[i]);
    }
    CHECK(a.test_indices.size() == src.test.size());

    try {
        sample_longtail(src, exp_profile(10, 61, 10), 1);
        FAIL("expected CapacityError");
    } catch (const CapacityError& e) {
        CHECK(std::string(e.what()).find("class") != std::string::npos);
    }
}

TEST_CASE("balanced counterpart and validation split") {
    const auto src = small_source();
    const auto bal = sample_balanced_counterpart(src, 95, 2);
    CHECK(bal.train_indices.size() == 95);
    const auto counts = bal.train_class_counts(10);
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
    CHECK_THROWS_AS(sample_balanced_counterpart(src, 5, 2), InvalidSpec);
    CHECK_THROWS_AS(sample_balanced_counterpart(src, 601, 2), InvalidSpec);

    auto lt = sample_longtail(src, exp_profile(10, 50, 10), 4);
    attach_validation(lt, src, 40, 9);
    CHECK(lt.val_indices.size() == 40);
    std::vector<std::size_t> both;
    std::set_intersection(lt.train_indices.begin(), lt.train_indices.end(), lt.val_indices.begin(),
                          lt.val_indices.end(), std::back_inserter(both));
    CHECK(both.empty());
}

TEST_CASE("split and group JSON round-trip") {
    const auto src = small_source();
    const auto split = sample_longtail(src, exp_profile(10, 40, 8), 11);
    const auto back = split_from_json(to_json(split));
    CHECK(to_json(back) == to_json(split));
    CHECK(back.class_ranks == split.class_ranks);

    const auto g = assign_groups(split.profile, GroupScheme::thirds);
    const auto j = to_json(g, split.class_ranks);
    std::size_t listed = 0;
    for (const char* k : {"Many", "Medium", "Few"}) listed += j.at(k).size();
    CHECK(listed == 10);
    const auto by_class = g.by_class(split.class_ranks);
    for (int cls : j.at("Few").get<std::vector<int>>()) CHECK(by_class[static_cast<std::size_t>(cls)] == Group::few);
}
