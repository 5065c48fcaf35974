#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "osnet/rng.hpp"
#include "osnet/serialize.hpp"

using namespace osnet;

namespace {

std::vector<uint8_t> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("tensor file write-read-write is byte identical") {
    Rng rng(123);
    auto t = random_tensor<float>({2, 3, 4, 5}, rng);
    const std::string p1 = "/tmp/osnet_t1.ostn", p2 = "/tmp/osnet_t2.ostn";
    save_tensor_file(p1, *t);
    auto back = load_tensor_file<float>(p1);
    CHECK(back->shape() == t->shape());
    CHECK(back->values() == t->values());
    save_tensor_file(p2, *back);
    CHECK(slurp(p1) == slurp(p2));

    auto d = random_tensor<double>({7}, rng);
    save_tensor_file(p1, *d);
    auto dback = load_tensor_file<double>(p1);
    CHECK(dback->values() == d->values());
}

TEST_CASE("tensor reader rejects bad magic, version, dtype, truncation") {
    Rng rng(5);
    auto t = random_tensor<float>({3, 3}, rng);
    std::ostringstream os(std::ios::binary);
    save_tensor(os, *t);
    std::string good = os.str();

    {
        std::string bad = good;
        bad[0] = 'X';
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(load_tensor<float>(is), doctest::Contains("magic"), std::runtime_error);
    }
    {
        std::string bad = good;
        bad[4] = 9;  // version
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(load_tensor<float>(is), doctest::Contains("version"), std::runtime_error);
    }
    {
        std::istringstream is(good, std::ios::binary);
        CHECK_THROWS_WITH_AS(load_tensor<double>(is), doctest::Contains("dtype"), std::runtime_error);
    }
    {
        std::istringstream is(good.substr(0, good.size() - 3), std::ios::binary);
        CHECK_THROWS_AS(load_tensor<float>(is), std::runtime_error);
    }
}

TEST_CASE("archive round trip preserves bytes and entry order") {
    Rng rng(9);
    Archive ar;
    archive_add_text(ar, "manifest", "alpha=1\nbeta=two\n");
    auto t1 = random_tensor<float>({4, 4}, rng);
    auto t2 = random_tensor<double>({2, 2, 2}, rng);
    archive_add_tensor(ar, "tensors/w1", *t1);
    archive_add_tensor(ar, "tensors/w2", *t2);

    const std::string p1 = "/tmp/osnet_a1.osar", p2 = "/tmp/osnet_a2.osar";
    ar.save(p1);
    Archive back = Archive::load(p1);
    back.save(p2);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(back.entries().size() == 3);
    CHECK(back.entries()[0].first == "manifest");
    CHECK(archive_get_text(back, "manifest") == "alpha=1\nbeta=two\n");
    CHECK(archive_get_tensor<float>(back, "tensors/w1")->values() == t1->values());
    CHECK(archive_get_tensor<double>(back, "tensors/w2")->values() == t2->values());
    CHECK_THROWS_AS(archive_get_text(back, "nope"), std::runtime_error);
    CHECK_THROWS_AS(ar.add("manifest", {}), std::runtime_error);
}
