#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "headsplat/errors.hpp"

namespace headsplat::testkit {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string name = "headsplat_";
        if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
        path_ = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

} // namespace headsplat::testkit

/// Expects `stmt` to throw headsplat::Error with `code`.
#define EXPECT_ERROR_CODE(stmt, expected)                                                                          \
    do {                                                                                                       \
        try {                                                                                                  \
            stmt;                                                                                              \
            ADD_FAILURE() << "no exception from " #stmt;                                                       \
        } catch (const headsplat::Error& e) {                                                                  \
            EXPECT_EQ(e.code(), expected) << e.what();                                                             \
        }                                                                                                      \
    } while (0)
