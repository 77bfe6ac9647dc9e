// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "moelens/checkpoint.hpp"
#include "moelens/error.hpp"
#include "moelens/planted.hpp"
#include "oracle.hpp"

using namespace moelens;

namespace {

std::string bytes_of(const MoEModel& m) {
    std::ostringstream os;
    save_checkpoint(m, os);
    return os.str();
}

ErrorCode load_error(const std::string& bytes) {
    std::istringstream is(bytes);
    try {
        load_checkpoint(is);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidInput;  // no error: treated as a failure by callers
}

}  // namespace

TEST(Checkpoint, RoundTripIsLossless) {
    const auto m = build_planted_model(default_planted_spec()).first;
    std::istringstream is(bytes_of(m));
    EXPECT_EQ(load_checkpoint(is), m);
}

TEST(Checkpoint, SameModelGivesIdenticalBytes) {
    const auto a = init_random(ModelSpec{2, 4, 2, 8, 4, 16, 5});
    const auto b = init_random(ModelSpec{2, 4, 2, 8, 4, 16, 5});
    EXPECT_EQ(bytes_of(a), bytes_of(b));
}

TEST(Checkpoint, HeaderLayout) {
    const auto s = bytes_of(init_random(ModelSpec{2, 4, 2, 8, 4, 16, 5}));
    ASSERT_GT(s.size(), 9u);
    EXPECT_EQ(static_cast<unsigned char>(s[0]), 1u);
    EXPECT_EQ(s.substr(1, 8), std::string("MOELENS\0", 8));
    // 1 + 8 + 6*4 + 8 + 4 + 4 ("silu") header bytes, then float32 weights.
    const std::size_t weights = 16 * 8 + 2 * (4 * 8 + 4 * (4 * 8 + 8 * 4)) + 16 * 8;
    EXPECT_EQ(s.size(), 1 + 8 + 24 + 8 + 4 + 4 + 4 * weights);
}

TEST(Checkpoint, WrongVersionIsSchemaError) {
    auto s = bytes_of(init_random(ModelSpec{1, 2, 1, 4, 4, 8, 0}));
    s[0] = 2;
    EXPECT_EQ(load_error(s), ErrorCode::Schema);
}

TEST(Checkpoint, BadMagicTruncationAndTrailingBytesAreMalformed) {
    const auto s = bytes_of(init_random(ModelSpec{1, 2, 1, 4, 4, 8, 0}));
    auto bad = s;
    bad[3] = 'X';
    EXPECT_EQ(load_error(bad), ErrorCode::Malformed);
    EXPECT_EQ(load_error(s.substr(0, s.size() - 3)), ErrorCode::Malformed);
    EXPECT_EQ(load_error(s + "x"), ErrorCode::Malformed);
}

TEST(Checkpoint, MissingFileIsIoError) {
    try {
        load_checkpoint(std::string("/nonexistent/model.ckpt"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Io);
    }
}

TEST(Checkpoint, FileRoundTrip) {
    const auto dir = oracle::temp_dir("ckpt");
    const auto m = init_random(ModelSpec{2, 3, 2, 6, 5, 12, 1});
    const auto path = (dir / "m.ckpt").string();
    save_checkpoint(m, path);
    EXPECT_EQ(load_checkpoint(path), m);
}
