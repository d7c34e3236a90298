// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "priha/factory.hpp"
#include "priha/session.hpp"
#include "support.hpp"

namespace priha::testing {

inline const char* kZhuhaiQuestion = "Can I use my elderly health care voucher at Zhuhai People's Hospital?";
inline const char* kStaleUrl = "https://www.hcv.gov.hk/en/gba/pilot-2023.html";
inline const char* kFreshUrl = "https://www.hcv.gov.hk/en/gba/pilot-extension-2025.html";

inline PipelineConfig fixture_config(const std::filesystem::path& state_dir = {})
{
    auto cfg = load_config(fixtures() / "config.json");
    if (!state_dir.empty()) cfg.state_dir = state_dir;
    return cfg;
}

inline std::shared_ptr<Engine> fixture_engine(PipelineMode mode = PipelineMode::dual)
{
    auto cfg = fixture_config();
    cfg.mode = mode;
    return make_engine(cfg);
}

inline DirectAnswer ask_fixture(const Engine& engine, const std::string& question, PipelineMode mode)
{
    UserInput input{question, engine.providers().clock->now(), "test"};
    return answer_direct(engine, input, mode);
}

}  // namespace priha::testing
