#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfcq/config.hpp"
#include "mfcq/errors.hpp"
#include "mfcq/net.hpp"
#include "mfcq/solver.hpp"
#include "mfcq/version.hpp"

namespace mfcq {

// CSV with a fixed column order, 17-significant-digit floats and LF line
// endings, so reruns are byte-comparable.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header)
        : out_(path, std::ios::binary) {
        if (!out_) throw Error("CsvWriter: cannot open '" + path + "'");
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i > 0) out_ << ',';
            out_ << header[i];
        }
        out_ << '\n';
    }

    CsvWriter& add(double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        field(buf);
        return *this;
    }

    CsvWriter& add(int v) { return add(static_cast<std::int64_t>(v)); }

    CsvWriter& add(std::int64_t v) {
        field(std::to_string(v));
        return *this;
    }

    CsvWriter& add(std::uint64_t v) {
        field(std::to_string(v));
        return *this;
    }

    CsvWriter& add(const std::string& v) {
        field(v);
        return *this;
    }

    void end_row() {
        out_ << '\n';
        first_ = true;
    }

private:
    void field(const std::string& s) {
        if (!first_) out_ << ',';
        out_ << s;
        first_ = false;
    }

    std::ofstream out_;
    bool first_ = true;
};

namespace detail {

inline Json net_descriptor(const EpsilonNet& net) {
    return Json{{"num_states", net.num_states()},
                {"num_actions", net.num_actions()},
                {"epsilon", net.epsilon()},
                {"grid_m", net.grid_m()},
                {"mask", net.mask().has_value() ? "overshoot" : "none"},
                {"analytic_covering_radius", net.analytic_covering_radius()},
                {"measured_covering_radius", net.measured_covering_radius()}};
}

inline std::shared_ptr<const EpsilonNet> rebuild_net(const Json& j) {
    const int nx = j.at("num_states").get<int>();
    const int nu = j.at("num_actions").get<int>();
    const double eps = j.at("epsilon").get<double>();
    const std::string mask = j.value("mask", std::string("none"));
    std::optional<SupportMask> m;
    if (mask == "overshoot") {
        m = SupportMask::overshoot(nx, nu);
    } else if (mask != "none") {
        throw Error("net descriptor: unknown mask kind '" + mask + "'");
    }
    auto net = std::make_shared<const EpsilonNet>(EpsilonNet::build(nx, nu, eps, m));
    if (net->grid_m() != j.at("grid_m").get<int>()) {
        throw Error("net descriptor: grid step mismatch on rebuild");
    }
    return net;
}

inline void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << j.dump(1, '\t') << '\n';
}

inline Json read_json_file(const std::string& path, const char* expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw Error("parse error in '" + path + "': " + e.what());
    }
    if (j.value("magic", std::string()) != kFileMagic) {
        throw Error("'" + path + "' is not a " + std::string(kFileMagic) + " file");
    }
    if (j.value("kind", std::string()) != expected_kind) {
        throw Error("'" + path + "' holds kind '" + j.value("kind", std::string()) + "', expected '" +
                    expected_kind + "'");
    }
    return j;
}

}  // namespace detail

inline void save_qtable(const std::string& path, const QTable& table) {
    Json j;
    j["magic"] = kFileMagic;
    j["kind"] = "qtable";
    j["version"] = 1;
    j["toolkit_version"] = kToolkitVersion;
    j["net"] = detail::net_descriptor(*table.net);
    j["kernel"] = kernel_to_json(table.kernel);
    j["gamma"] = table.gamma;
    j["value_bound"] = table.value_bound;
    j["delta_trace"] = table.delta_trace;
    j["values"] = table.values;
    detail::write_json_file(path, j);
}

inline QTable load_qtable(const std::string& path) {
    const Json j = detail::read_json_file(path, "qtable");
    QTable table;
    try {
        table.net = detail::rebuild_net(j.at("net"));
        table.kernel = kernel_from_json(j.at("kernel"));
        table.gamma = j.at("gamma").get<double>();
        table.value_bound = j.value("value_bound", 0.0);
        table.delta_trace = j.value("delta_trace", std::vector<double>{});
        table.values = j.at("values").get<std::vector<double>>();
    } catch (const Json::exception& e) {
        throw Error("'" + path + "': " + e.what());
    }
    if (table.values.size() != table.net->size()) {
        throw Error("'" + path + "': table holds " + std::to_string(table.values.size()) +
                    " values for a net of " + std::to_string(table.net->size()));
    }
    return table;
}

inline void save_sample_store(const std::string& path, const SampleStore& store, const EpsilonNet& net) {
    Json j;
    j["magic"] = kFileMagic;
    j["kind"] = "sample_store";
    j["version"] = 1;
    j["toolkit_version"] = kToolkitVersion;
    j["net"] = detail::net_descriptor(net);
    j["num_states"] = store.num_states;
    j["steps_taken"] = store.steps_taken;
    j["coverage_step"] = store.coverage_step;
    j["visits"] = store.visits;
    j["reward_avg"] = store.reward_avg;
    j["next_mu_avg"] = store.next_mu_avg;
    detail::write_json_file(path, j);
}

struct LoadedSampleStore {
    SampleStore store;
    std::shared_ptr<const EpsilonNet> net;
};

inline LoadedSampleStore load_sample_store(const std::string& path) {
    const Json j = detail::read_json_file(path, "sample_store");
    LoadedSampleStore out;
    try {
        out.net = detail::rebuild_net(j.at("net"));
        out.store.num_states = j.at("num_states").get<int>();
        out.store.steps_taken = j.at("steps_taken").get<std::int64_t>();
        out.store.coverage_step = j.at("coverage_step").get<std::int64_t>();
        out.store.visits = j.at("visits").get<std::vector<std::int64_t>>();
        out.store.reward_avg = j.at("reward_avg").get<std::vector<double>>();
        out.store.next_mu_avg = j.at("next_mu_avg").get<std::vector<double>>();
    } catch (const Json::exception& e) {
        throw Error("'" + path + "': " + e.what());
    }
    out.store.visited_cells = 0;
    for (const auto v : out.store.visits) out.store.visited_cells += (v > 0) ? 1 : 0;
    if (out.store.visits.size() != out.net->size() ||
        out.store.reward_avg.size() != out.net->size() ||
        out.store.next_mu_avg.size() != out.net->size() * static_cast<std::size_t>(out.store.num_states)) {
        throw Error("'" + path + "': store arrays do not match the net");
    }
    return out;
}

}  // namespace mfcq
