// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <filesystem>
#include <random>
#include <string>

#include "priha/error.hpp"

#ifndef PRIHA_FIXTURES
#error "PRIHA_FIXTURES must point at tests/fixtures"
#endif

namespace priha::testing {

inline std::filesystem::path fixtures() { return PRIHA_FIXTURES; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path()
              / ("priha-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Code of the priha::Error thrown by `fn`, or nullopt if it returns normally.
inline std::optional<Errc> errc_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

}  // namespace priha::testing
