#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>

#include "ecvl/rsd.hpp"

namespace testing {

inline std::shared_ptr<ecvl::ResponseRecord> record(const std::string& id, double edge_score, double cloud_score,
                                                    double edge_lat = 1.0, double cloud_lat = 4.0,
                                                    const std::string& source = "src") {
    auto r = std::make_shared<ecvl::ResponseRecord>();
    r->query_id = id;
    r->source_dataset = source;
    r->query_text = "what is shown in image " + id;
    r->outcomes.emplace("edge", ecvl::ModelOutcome{"edge", edge_score, edge_lat, std::nullopt});
    r->outcomes.emplace("cloud", ecvl::ModelOutcome{"cloud", cloud_score, cloud_lat, std::nullopt});
    return r;
}

inline ecvl::PairRecord pair(const std::string& id, double edge_score, double cloud_score, double edge_lat = 1.0,
                             double cloud_lat = 4.0, const std::string& source = "src") {
    auto r = record(id, edge_score, cloud_score, edge_lat, cloud_lat, source);
    return {r, r->outcomes.at("edge"), r->outcomes.at("cloud")};
}

/// Per-test scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "ecvl-test-XXXXXX").string();
        path = mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing
