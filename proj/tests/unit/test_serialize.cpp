#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <fstream>

#include "helpers.hpp"
#include "ldk/nn.hpp"
#include "ldk/rng.hpp"
#include "ldk/serialize.hpp"

using namespace ldk;

namespace {

std::string temp_path(const char* tag) {
    return std::string("/tmp/ldk_test_") + tag + "_" + std::to_string(::getpid()) + ".ldkp";
}

ParamStore<float> make_store(uint64_t seed) {
    ParamStore<float> ps;
    Rng rng(seed, 0);
    for (auto& [name, shape] :
         std::vector<std::pair<std::string, Shape>>{{"enc.w", {3, 2, 3, 3}},
                                                    {"enc.b", {3}},
                                                    {"head.w", {4, 12}}}) {
        auto& p = ps.create(name, shape);
        p.v = rng.normal_tensor<float>(shape);
    }
    return ps;
}

}  // namespace

TEST_CASE("checkpoint round trips tensors and metadata") {
    std::string path = temp_path("roundtrip");
    ParamStore<float> src = make_store(11);
    CheckpointMeta meta;
    meta.config_text = "[model]\nwidth = 8\n";
    meta.seed = 1234;
    meta.scalars["latent_scale"] = 0.73;
    meta.strings["task"] = "denoise";
    save_checkpoint(path, src, meta);

    CheckpointReader reader(path);
    CHECK(reader.meta().config_text == meta.config_text);
    CHECK(reader.meta().seed == 1234);
    CHECK(reader.meta().scalars.at("latent_scale") == 0.73);
    CHECK(reader.meta().strings.at("task") == "denoise");
    CHECK(reader.meta().tool_version == kVersion);

    ParamStore<float> dst = make_store(99);  // same names/shapes, different values
    reader.read_into(dst);
    for (size_t i = 0; i < src.size(); ++i) {
        REQUIRE(dst[i].v.shape() == src[i].v.shape());
        CHECK(max_abs_diff(dst[i].v, src[i].v) == 0.0f);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint detects payload corruption") {
    std::string path = temp_path("corrupt");
    ParamStore<float> src = make_store(5);
    save_checkpoint(path, src, {});

    // flip one byte in the middle of the file
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    auto len = static_cast<long>(f.tellg());
    f.seekp(len / 2);
    char b;
    f.seekg(len / 2);
    f.read(&b, 1);
    b = static_cast<char>(b ^ 0x40);
    f.seekp(len / 2);
    f.write(&b, 1);
    f.close();

    CHECK_THROWS_MATCHES(CheckpointReader(path), Error, ErrorKindIs(ErrKind::checkpoint));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects mismatched stores") {
    std::string path = temp_path("mismatch");
    ParamStore<float> src = make_store(5);
    save_checkpoint(path, src, {});
    CheckpointReader reader(path);

    ParamStore<float> extra = make_store(5);
    extra.create("spare", {2});
    CHECK_THROWS_MATCHES(reader.read_into(extra), Error, ErrorKindIs(ErrKind::checkpoint));

    ParamStore<float> wrong_shape;
    wrong_shape.create("enc.w", {3, 2, 3, 3});
    wrong_shape.create("enc.b", {4});  // stored as {3}
    wrong_shape.create("head.w", {4, 12});
    CHECK_THROWS_MATCHES(reader.read_into(wrong_shape), Error,
                         ErrorKindIs(ErrKind::checkpoint));

    ParamStore<float> wrong_name;
    wrong_name.create("enc.w", {3, 2, 3, 3});
    wrong_name.create("enc.bias", {3});
    wrong_name.create("head.w", {4, 12});
    CHECK_THROWS_MATCHES(reader.read_into(wrong_name), Error,
                         ErrorKindIs(ErrKind::checkpoint));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects junk files") {
    std::string path = temp_path("junk");
    {
        std::ofstream f(path, std::ios::binary);
        f << "definitely not a checkpoint, padded to look plausible............";
    }
    CHECK_THROWS_MATCHES(CheckpointReader(path), Error, ErrorKindIs(ErrKind::checkpoint));
    std::remove(path.c_str());
    CHECK_THROWS_MATCHES(CheckpointReader("/tmp/ldk_does_not_exist.ldkp"), Error,
                         ErrorKindIs(ErrKind::io));
}

TEST_CASE("checkpoint config digest matches the embedded config") {
    std::string path = temp_path("digest");
    ParamStore<float> src = make_store(2);
    CheckpointMeta meta;
    meta.config_text = "[a]\nx = 1\n";
    save_checkpoint(path, src, meta);
    CheckpointReader reader(path);
    char want[17];
    std::snprintf(want, sizeof want, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(meta.config_text)));
    CHECK(reader.config_digest_hex() == want);
    std::remove(path.c_str());
}
