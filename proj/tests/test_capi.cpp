// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "dualpeft/c_api.h"

namespace fs = std::filesystem;

namespace {

dpeft_config* tiny(const fs::path& dir) {
    dpeft_config* c = nullptr;
    REQUIRE(dpeft_config_new(&c) == DPEFT_OK);
    const std::pair<const char*, std::string> kv[] = {
        {"output.dir", dir.string()},
        {"cache.dir", (fs::temp_directory_path() / "dualpeft_test_capi" / "cache").string()},
        {"model.layers", "1"}, {"model.d_model", "16"}, {"model.heads", "2"}, {"model.d_ff", "24"},
        {"lora.rank", "2"}, {"corpus.facts", "4"}, {"corpus.train_system1", "8"}, {"corpus.train_system2", "8"},
        {"corpus.test_system1", "4"}, {"corpus.test_system2", "4"}, {"pretrain.count", "100"},
        {"pretrain.steps", "50"}, {"warmup.steps", "3"}, {"sft.steps", "5"}, {"grpo.steps", "1"},
        {"grpo.group_size", "2"}, {"grpo.prompts", "2"}, {"grpo.max_new_tokens", "6"}, {"eval.max_new_tokens", "8"},
    };
    for (const auto& [k, v] : kv) REQUIRE(dpeft_config_set(c, k, v.c_str()) == DPEFT_OK);
    return c;
}

}  // namespace

TEST_CASE("config handle") {
    dpeft_config* c = nullptr;
    REQUIRE(dpeft_config_new(&c) == DPEFT_OK);
    CHECK(dpeft_config_set(c, "partition.theta", "0.25") == DPEFT_OK);
    char buf[64];
    std::size_t len = 0;
    CHECK(dpeft_config_get(c, "partition.theta", buf, sizeof buf, &len) == DPEFT_OK);
    CHECK(std::string(buf) == "0.25");
    CHECK(len == 4);
    CHECK(dpeft_config_get(c, "partition.theta", buf, 3, &len) == DPEFT_E_BUFFER_TOO_SMALL);
    CHECK(len == 4);

    CHECK(dpeft_config_set(c, "no.such.key", "1") == DPEFT_E_INVALID_ARGUMENT);
    CHECK(std::string(dpeft_last_error()).find("no.such.key") != std::string::npos);
    CHECK(dpeft_config_set(c, "sft.steps", "-3") == DPEFT_E_INVALID_ARGUMENT);
    CHECK(dpeft_config_set(nullptr, "seed", "1") == DPEFT_E_INVALID_ARGUMENT);
    CHECK(dpeft_config_set(c, "partition.theta", "2") == DPEFT_OK);
    CHECK(dpeft_config_validate(c) == DPEFT_E_INVALID_ARGUMENT);

    CHECK(dpeft_config_key_count() > 40);
    CHECK(std::string(dpeft_config_key(0)) == "seed");
    CHECK(dpeft_config_key(dpeft_config_key_count()) == nullptr);

    const auto dir = fs::temp_directory_path() / "dualpeft_test_capi";
    fs::create_directories(dir);
    CHECK(dpeft_config_save(c, (dir / "c.cfg").string().c_str()) == DPEFT_OK);
    dpeft_config* back = nullptr;
    CHECK(dpeft_config_load((dir / "c.cfg").string().c_str(), &back) == DPEFT_OK);
    CHECK(dpeft_config_get(back, "partition.theta", buf, sizeof buf, nullptr) == DPEFT_OK);
    CHECK(std::string(buf) == "2");
    CHECK(dpeft_config_load((dir / "missing.cfg").string().c_str(), &back) == DPEFT_E_IO);
    dpeft_config_free(back);
    dpeft_config_free(c);
    dpeft_config_free(nullptr);
}

TEST_CASE("pipeline through the C interface") {
    const auto dir = fs::temp_directory_path() / "dualpeft_test_capi" / "run";
    fs::remove_all(dir);
    dpeft_config* c = tiny(dir);

    dpeft_result* r = nullptr;
    CHECK(dpeft_run_stage(c, "train", &r) == DPEFT_E_STAGE);
    CHECK(std::string(dpeft_last_error()).rfind("stage train", 0) == 0);
    CHECK(dpeft_run_stage(c, "dance", &r) == DPEFT_E_INVALID_ARGUMENT);

    int messages = 0;
    dpeft_set_log([](const char*, void* user) { ++*static_cast<int*>(user); }, &messages);
    REQUIRE(dpeft_run_stage(c, "pipeline", &r) == DPEFT_OK);
    dpeft_set_log(nullptr, nullptr);
    CHECK(messages > 0);
    double v = -1.0;
    CHECK(dpeft_result_number(r, "/partition/total", &v) == DPEFT_OK);
    CHECK(v > 0.0);
    CHECK(dpeft_result_number(r, "/eval/rl/overall", &v) == DPEFT_OK);
    CHECK((v >= 0.0 && v <= 1.0));
    CHECK(dpeft_result_number(r, "/nowhere", &v) == DPEFT_E_INVALID_ARGUMENT);
    CHECK(dpeft_result_number(r, "bad pointer", &v) == DPEFT_E_INVALID_ARGUMENT);
    CHECK(std::strstr(dpeft_result_json(r), "\"eval\"") != nullptr);
    dpeft_result_free(r);

    CHECK(dpeft_run_stage(c, "eval", nullptr) == DPEFT_OK);
    CHECK(dpeft_export_scatter(c, (dir / "s.csv").string().c_str()) == DPEFT_OK);
    CHECK(fs::exists(dir / "s.csv"));

    const char* strategies[] = {"gold"};
    CHECK(dpeft_ablate_splitter(c, strategies, 1, 1, &r) == DPEFT_E_INVALID_ARGUMENT);
    const double bad_theta[] = {1.5};
    const char* sites[] = {"QKV"};
    CHECK(dpeft_sweep_theta(c, bad_theta, 1, sites, 1, 1, &r) == DPEFT_E_INVALID_ARGUMENT);
    dpeft_config_free(c);
}

TEST_CASE("status names") {
    CHECK(std::string(dpeft_status_name(DPEFT_OK)) == "ok");
    CHECK(std::string(dpeft_status_name(DPEFT_E_STAGE)) == "stage failure");
    CHECK(std::string(dpeft_version()) == "0.1.0");
}
