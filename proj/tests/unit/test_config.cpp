#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "ldk/config.hpp"

using namespace ldk;

static const char* kSample = R"(
# training setup
[model]
width = 64          # base channels
depth = 2
lr = 2e-4
use_ema = false
name = "unet small"

[data]
root = "out/ds"
split = 0.9
)";

TEST_CASE("config parses sections and typed values") {
    Config c = Config::parse(kSample);
    CHECK(c.get_int("model", "width", -1) == 64);
    CHECK(c.get_int("model", "depth", -1) == 2);
    CHECK(c.get_real("model", "lr", 0.0) == Catch::Approx(2e-4));
    CHECK(c.get_bool("model", "use_ema", true) == false);
    CHECK(c.get_str("model", "name", "") == "unet small");
    CHECK(c.get_str("data", "root", "") == "out/ds");
    CHECK(c.get_real("data", "split", 0.0) == Catch::Approx(0.9));
}

TEST_CASE("config missing keys fall back to defaults") {
    Config c = Config::parse(kSample);
    CHECK(c.get_int("model", "missing", 7) == 7);
    CHECK(c.get_real("nosec", "lr", 1.5) == 1.5);
    CHECK(c.has("model", "width"));
    CHECK_FALSE(c.has("model", "missing"));
}

TEST_CASE("config int promotes to real but not the reverse") {
    Config c = Config::parse("[a]\nn = 3\nx = 2.5\n");
    CHECK(c.get_real("a", "n", 0.0) == 3.0);
    CHECK_THROWS_MATCHES(c.get_int("a", "x", 0), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("config type mismatches throw") {
    Config c = Config::parse(kSample);
    CHECK_THROWS_MATCHES(c.get_bool("model", "width", false), Error,
                         ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(c.get_str("model", "depth", ""), Error, ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(c.get_int("model", "name", 0), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("config rejects malformed input") {
    CHECK_THROWS_MATCHES(Config::parse("[a]\nkey_without_value\n"), Error,
                         ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(Config::parse("orphan = 1\n"), Error, ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(Config::parse("[a]\nx = bare_string\n"), Error,
                         ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(Config::parse("[a]\nx = 1\nx = 2\n"), Error,
                         ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(Config::parse("[a\nx = 1\n"), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("config serialization reaches a fixed point") {
    Config c = Config::parse(kSample);
    std::string once = c.serialize();
    std::string twice = Config::parse(once).serialize();
    CHECK(once == twice);
    CHECK(Config::parse(once).digest() == c.digest());
}

TEST_CASE("config digest is order independent but value sensitive") {
    Config a = Config::parse("[s]\nx = 1\ny = 2.0\n");
    Config b = Config::parse("[s]\ny = 2.0\nx = 1\n");
    CHECK(a.digest() == b.digest());
    Config c = Config::parse("[s]\nx = 1\ny = 2.5\n");
    CHECK(a.digest() != c.digest());
    // int and real spellings of the same number stay distinct
    Config d = Config::parse("[s]\nx = 1.0\ny = 2.0\n");
    CHECK(a.digest() != d.digest());
    CHECK(a.digest_hex().size() == 16);
}

TEST_CASE("config overrides reuse value inference") {
    Config c = Config::parse(kSample);
    c.set_override("model.width=128");
    c.set_override("model.lr = 1e-3");
    c.set_override("data.root=\"elsewhere\"");
    c.set_override("model.fresh=true");
    CHECK(c.get_int("model", "width", -1) == 128);
    CHECK(c.get_real("model", "lr", 0.0) == Catch::Approx(1e-3));
    CHECK(c.get_str("data", "root", "") == "elsewhere");
    CHECK(c.get_bool("model", "fresh", false));
    CHECK_THROWS_MATCHES(c.set_override("no_dot=1"), Error, ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(c.set_override("a.b"), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("config flags unread keys") {
    Config c = Config::parse("[a]\nused = 1\nmistyped = 2\n");
    c.get_int("a", "used", 0);
    CHECK_THROWS_MATCHES(c.require_all_consumed(), Error, ErrorKindIs(ErrKind::config));
    c.get_int("a", "mistyped", 0);
    CHECK_NOTHROW(c.require_all_consumed());
}

TEST_CASE("config keeps # inside quoted strings") {
    Config c = Config::parse("[s]\nx = \"a#b\"   # trailing comment\nn = 3 # note\n");
    CHECK(c.get_str("s", "x", "") == "a#b");
    CHECK(c.get_int("s", "n", 0) == 3);
}

TEST_CASE("config string escapes round trip") {
    Config c;
    c.set_str("s", "path", "a\"b\\c");
    Config back = Config::parse(c.serialize());
    CHECK(back.get_str("s", "path", "") == "a\"b\\c");
}

TEST_CASE("config real formatting keeps reals distinct from ints") {
    Config c;
    c.set_real("s", "x", 2.0);
    c.set_int("s", "n", 2);
    Config back = Config::parse(c.serialize());
    CHECK_THROWS(back.get_int("s", "x", 0));
    CHECK(back.get_real("s", "x", 0.0) == 2.0);
    CHECK(back.get_int("s", "n", 0) == 2);
}
