#include "doctest.h"

#include <cstdlib>

#include "tuplenet/config.hpp"

using namespace tuplenet;

namespace {

std::size_t error_line(const std::string& text) {
    try {
        parse_config(text, "exp.toml");
    } catch (const ConfigError& e) {
        return e.line();
    }
    return 0;
}

std::string error_text(const std::string& text) {
    try {
        parse_config(text, "exp.toml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

const char* kFull = R"(# planted-channel experiment
seed = 42

[dataset]
subjects = 9
classes = 12
channels = 16
samples = 64
snr = 2.0
crop = false

[pretrain]
scheme = "cte"
filters = 2
width = 1
activation = "linear"
epochs = 30
learning_rate = 1e-3
strategy = "per_instance"
scope = "within"
stage2_epochs = 5

[train]
learning_rate = 0.005
batch_size = 64
epochs = 20
dropout_rate = 0.25
layer1_filters = 3
layer2 = false

[eval]
mode = "maj"
)";

}  // namespace

TEST_SUITE("config parsing") {
    TEST_CASE("defaults from an empty file") {
        const auto c = parse_config("");
        CHECK(c.seed == 1);
        CHECK(c.dataset.path.empty());
        CHECK(c.pretrain.scheme == "sce");
        CHECK(c.train.optimizer.batch_size == 128);
        CHECK(c.train.model.layer2.has_value());
        CHECK(c.eval.mode == AggregationMode::avg);
    }

    TEST_CASE("every section is read") {
        const auto c = parse_config(kFull);
        CHECK(c.seed == 42);
        CHECK(c.dataset.synth.channels == 16);
        CHECK(c.dataset.synth.snr == 2.0);
        CHECK(c.pretrain.scheme == "cte");
        CHECK(c.pretrain.shape.activation == Activation::linear);
        CHECK(c.pretrain.config.optimizer.learning_rate == 1e-3);
        CHECK(c.pretrain.config.strategy == HydraStrategy::per_instance);
        CHECK(c.pretrain.scope == PairScope::within_subject);
        CHECK(c.pretrain.stage2_epochs == 5);
        CHECK(c.train.optimizer.dropout_rate == 0.25);
        CHECK(c.train.model.layer1.filters == 3);
        CHECK_FALSE(c.train.model.layer2.has_value());
        CHECK(c.eval.mode == AggregationMode::maj);
    }

    TEST_CASE("unknown keys and sections are rejected with their line") {
        CHECK(error_line("seed = 1\n[train]\nlearning_rat = 0.1\n") == 3);
        CHECK(error_text("seed = 1\n[train]\nlearning_rat = 0.1\n").find("exp.toml:3:") == 0);
        CHECK(error_line("\n\n[model]\n") == 3);
        CHECK(error_line("colour = 1\n") == 1);
    }

    TEST_CASE("type and value errors point at the key") {
        CHECK(error_line("[train]\nbatch_size = \"big\"\n") == 2);
        CHECK(error_line("[train]\nbatch_size = 1.5\n") == 2);
        CHECK(error_line("[dataset]\n\nsnr = -1\n") == 3);
        CHECK(error_line("[pretrain]\nscheme = \"pca\"\n") == 2);
        CHECK(error_line("[train]\nlearning_rate = 0.1\nmomentum = 1.5\n") == 3);
        CHECK(error_line("[train]\nepochs = 3\ndropout_rate = 1.0\n") == 3);
        CHECK(error_line("[eval]\nmode = \"median\"\n") == 2);
        CHECK(error_line("[pretrain]\narity = 2\n") == 2);
        CHECK(error_line("[train]\nepochs = 3\nepochs = 4\n") == 3);
        CHECK(error_line("[train]\nepochs 3\n") == 2);
        CHECK(error_line("[train\n") == 1);
        CHECK(error_line("seed = \"abc\n") == 1);
    }

    TEST_CASE("comments, strings and numbers") {
        const auto c = parse_config("seed = 1_000 # thousand\n[dataset]\npath = \"data/a#b\\\"c\" # trailing\n");
        CHECK(c.seed == 1000);
        CHECK(c.dataset.path == "data/a#b\"c");
    }

    TEST_CASE("to_toml round trips") {
        const auto c = parse_config(kFull);
        const std::string text = to_toml(c);
        const auto back = parse_config(text);
        CHECK(to_toml(back) == text);
        CHECK(config_hash(back) == config_hash(c));
        CHECK(back.pretrain.config.optimizer.learning_rate == c.pretrain.config.optimizer.learning_rate);
        CHECK_FALSE(back.train.model.layer2.has_value());

        const auto d = parse_config("");
        CHECK(to_toml(parse_config(to_toml(d))) == to_toml(d));
    }

    TEST_CASE("hash is short hex and tracks content") {
        const auto a = parse_config("seed = 1\n");
        const auto b = parse_config("seed = 2\n");
        const std::string h = config_hash(a);
        CHECK(h.size() == 12);
        CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
        CHECK(config_hash(a) != config_hash(b));
        CHECK(config_hash(a) == config_hash(parse_config("# same\nseed = 1\n")));
    }

    TEST_CASE("TUPLENET_SEED replaces the config seed") {
        auto c = parse_config("seed = 5\n");
        ::setenv("TUPLENET_SEED", "99", 1);
        apply_env_overrides(c);
        CHECK(c.seed == 99);
        ::setenv("TUPLENET_SEED", "x9", 1);
        CHECK_THROWS_AS(apply_env_overrides(c), InvalidArgument);
        ::unsetenv("TUPLENET_SEED");
        auto d = parse_config("seed = 5\n");
        apply_env_overrides(d);
        CHECK(d.seed == 5);
    }

    TEST_CASE("missing file is a load error") {
        CHECK_THROWS_AS(load_config("/nonexistent/exp.toml"), LoadError);
    }
}

TEST_SUITE("config sweep") {
    TEST_CASE("grid sweep expands to the cartesian product") {
        const auto c = parse_config("[sweep]\nlearning_rate = [0.1, 0.01]\nbatch_size = [32, 64, 128]\n");
        const auto pts = sweep_points(c);
        CHECK(pts.size() == 6);
        auto copy = c;
        apply_train_values(copy, pts.back());
        CHECK(copy.train.optimizer.learning_rate == pts.back().at("learning_rate"));
        CHECK(copy.train.optimizer.batch_size == static_cast<std::size_t>(pts.back().at("batch_size")));
    }

    TEST_CASE("random sweep draws the budget within the ranges") {
        const auto c = parse_config(
            "seed = 3\n[sweep]\nstrategy = \"random\"\nbudget = 4\nlog_keys = [\"learning_rate\"]\n"
            "learning_rate = [1e-4, 1e-1]\nlayer1_filters = [1, 8]\n");
        const auto pts = sweep_points(c);
        CHECK(pts.size() == 4);
        for (const auto& p : pts) {
            CHECK(p.at("learning_rate") >= 1e-4);
            CHECK(p.at("learning_rate") <= 1e-1);
            CHECK(p.at("layer1_filters") == std::round(p.at("layer1_filters")));
        }
        CHECK(sweep_points(c) == pts);
    }

    TEST_CASE("sweep errors") {
        CHECK(error_line("[sweep]\nwidth = [1, 2]\n") == 2);
        CHECK(error_line("[sweep]\nstrategy = \"random\"\nlearning_rate = [0.1, 0.2, 0.3]\n") == 3);
        CHECK(error_line("[sweep]\nlearning_rate = []\n") == 2);
        CHECK(error_line("[sweep]\nlearning_rate = [0.1, -1]\n") == 2);
        CHECK(error_line("[sweep]\nlog_keys = [\"momentum\"]\nlearning_rate = [0.1]\n") == 2);
        CHECK(error_line("[sweep]\nstrategy = \"bayes\"\n") == 2);
        CHECK_THROWS_AS(sweep_points(parse_config("")), InvalidArgument);
    }
}
