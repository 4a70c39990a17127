// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "cap/config.hpp"

using namespace cap;

TEST_CASE("empty document resolves to the documented defaults") {
    const RunConfig c = parse_config("");
    REQUIRE(c.method == Method::cap_m);
    REQUIRE(c.target_sparsity == 90.0);
    REQUIRE(c.contrastive.temperature == 0.1);
    REQUIRE(c.contrastive.bank_size == 4096);
    REQUIRE(c.model.d_model == 64);
    REQUIRE(c.model.n_layers == 2);
    REQUIRE(c.model.pooling == Pooling::cls);
    REQUIRE(c.loss.lambda_ce == 1.0);
}

TEST_CASE("config errors name the offending key") {
    try {
        parse_config(R"({"contrastive": {"temperature": -1}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("temperature") != std::string::npos);
    }

    try {
        parse_config(R"({"target_sparsity": 140})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("target_sparsity") != std::string::npos);
    }

    try {
        parse_config(R"({"method": "blockdrop"})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("method") != std::string::npos);
    }
}

TEST_CASE("unknown keys are rejected with their path") {
    try {
        parse_config(R"({"train": {"batch_sized": 8}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("train.batch_sized") != std::string::npos);
    }
}

TEST_CASE("config round trip is exact") {
    RunConfig cfg = parse_config("");
    cfg.method = Method::cap_soft;
    cfg.target_sparsity = 77.0;
    cfg.seed = 99;
    cfg.contrastive.temperature = 0.2;
    cfg.contrastive.snc_pooled = true;
    cfg.loss.kd_weight = 0.5;
    cfg.train.snapshot_crossings = {0.5};
    cfg.data.family = "keyword";
    cfg.data.n_classes = 3;
    const RunConfig back = parse_config(serialize_config(cfg));
    REQUIRE(back == cfg);
    REQUIRE(serialize_config(back) == serialize_config(cfg));
}

TEST_CASE("method implies the schedule kind") {
    REQUIRE(schedule_kind_of(Method::cap_f) == ScheduleKind::milestones);
    REQUIRE(schedule_kind_of(Method::first_order) == ScheduleKind::milestones);
    REQUIRE(schedule_kind_of(Method::cap_m) == ScheduleKind::cubic);
    REQUIRE(schedule_kind_of(Method::soft_movement) == ScheduleKind::cubic);
    REQUIRE(schedule_kind_of(Method::magnitude) == ScheduleKind::cubic);

    // Expressing the mismatch explicitly is a config error.
    REQUIRE_THROWS_AS(parse_config(R"({"method": "soft_movement", "schedule_kind": "milestones"})"),
                      ConfigError);
    REQUIRE_NOTHROW(parse_config(R"({"method": "soft_movement", "schedule_kind": "cubic"})"));
}

TEST_CASE("bank must cover the anchor batch when unsupervised contrast is on") {
    REQUIRE_THROWS_AS(
        parse_config(R"({"contrastive": {"bank_size": 4}, "train": {"batch_size": 16}})"),
        ConfigError);
    REQUIRE_NOTHROW(parse_config(
        R"({"contrastive": {"bank_size": 4, "unsup_enabled": false}, "train": {"batch_size": 16}})"));
}
