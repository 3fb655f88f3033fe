#include "support.hpp"

#include "uicoder/hashing.hpp"

#include <doctest.h>

#include <fstream>

using namespace uicoder;
using namespace uicoder::testing;

namespace {

Session three_round_session(Store& store) {
    Session s;
    s.id = "abc123";
    s.target = solid_image(store, 1, 2, 3);
    s.created_at = "2026-01-01T00:00:00Z";
    for (std::uint32_t i = 0; i < 3; ++i) {
        Round r;
        r.index = i;
        r.kind = i == 0 ? RoundKind::generate : RoundKind::polish;
        if (i > 0) {
            r.input_code = s.rounds.back().output_code;
            r.input_render = s.rounds.back().output_render;
        }
        r.output_code = HtmlDocument("<html><body>round " + std::to_string(i) + "</body></html>");
        r.output_render = i == 2 ? RenderResult::failure(RenderFailure::timeout)
                                 : RenderResult::success(solid_image(store, 10, 10, i), 48);
        if (i == 1) r.verdicts.push_back(JudgeVerdict{"raw", {70, 80}, "The third image is better", "j", "t"});
        r.accepted = true;
        s.rounds.push_back(r);
    }
    return s;
}

}  // namespace

TEST_CASE("put_blob is content addressed and idempotent") {
    TempDir dir;
    Store store(dir.path());
    auto a = store.put_blob("hello", MediaType::text);
    auto b = store.put_blob("hello", MediaType::text);
    CHECK(a == b);
    CHECK(a.hash == sha256_hex("hello"));
    CHECK(store.get_blob(a.hash) == "hello");
    std::size_t files = 0;
    for (auto& e : fs::recursive_directory_iterator(dir.path() / "blobs"))
        if (e.is_regular_file()) ++files;
    CHECK(files == 1);
}

TEST_CASE("put_blob rejects empty bytes") {
    TempDir dir;
    Store store(dir.path());
    try {
        store.put_blob("", MediaType::text);
        FAIL("expected precondition");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::precondition);
    }
}

TEST_CASE("size bookkeeping for a 1 MiB PNG") {
    TempDir dir;
    Store store(dir.path());
    std::string png = image::encode_png(image::solid(8, 8, 0, 0, 0));
    png.resize(1048576, '\0');  // trailing bytes after IEND are ignored by sniffing
    auto ref = store.put_blob(png, MediaType::png);
    CHECK(ref.size_bytes == 1048576);
}

TEST_CASE("put_image accepts PNG and rejects text") {
    TempDir dir;
    Store store(dir.path());
    auto img = store.put_image(image::encode_png(image::solid(7, 5, 0, 0, 0)));
    CHECK(img.width == 7);
    CHECK(img.height == 5);
    CHECK_THROWS_AS(store.put_image("not an image"), Error);
}

TEST_CASE("session round trip") {
    TempDir dir;
    Store store(dir.path());
    Session s = three_round_session(store);
    store.save_session(s);
    CHECK(store.load_session(s.id) == s);
    CHECK(store.list_sessions() == std::vector<std::string>{"abc123"});
}

TEST_CASE("sessions are append-only") {
    TempDir dir;
    Store store(dir.path());
    Session s = three_round_session(store);
    store.save_session(s);
    s.rounds[0].accepted = false;
    CHECK_THROWS_AS(store.save_session(s), Error);
}

TEST_CASE("unknown session id") {
    TempDir dir;
    Store store(dir.path());
    try {
        store.load_session("nope");
        FAIL("expected unknown id");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unknown_id);
    }
}

TEST_CASE("a flipped byte in the log is detected") {
    TempDir dir;
    Store store(dir.path());
    Session s = three_round_session(store);
    store.save_session(s);
    const fs::path log = dir.path() / "sessions" / "abc123.jsonl";
    std::string text;
    {
        std::ifstream in(log, std::ios::binary);
        text.assign(std::istreambuf_iterator<char>(in), {});
    }
    // One byte inside a round line, keeping the JSON well-formed.
    const auto pos = text.find("\"page_height_px\":48", text.find('\n') + 1);
    REQUIRE(pos != std::string::npos);
    text[pos + 17] = '5';
    std::ofstream(log, std::ios::binary) << text;
    try {
        store.load_session("abc123");
        FAIL("expected corrupt log");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::corrupt_log);
    }
}

TEST_CASE("judge cache") {
    TempDir dir;
    Store store(dir.path());
    CacheKey k1{"comparator_triplet", 1, {"a", "b", "c"}, "mock:faithful"};
    CacheKey k2{"comparator_triplet", 1, {"a", "c", "b"}, "mock:faithful"};
    CHECK(!store.cache_lookup(k1));
    JudgeVerdict v{"raw", {1, 2}, "The third image is better", "mock:faithful", "comparator_triplet"};
    store.cache_put(k1, v);
    CHECK(store.cache_lookup(k1) == v);
    CHECK(!store.cache_lookup(k2));
    CHECK(k1.digest() != k2.digest());
}

TEST_CASE("prune keeps referenced blobs") {
    TempDir dir;
    Store store(dir.path());
    Session s = three_round_session(store);
    store.save_session(s);
    auto orphan = store.put_blob("orphan", MediaType::text);
    CHECK(store.prune() == 1);
    CHECK_FALSE(store.has_blob(orphan.hash));
    CHECK(store.load_session(s.id) == s);
}
