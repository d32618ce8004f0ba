#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "biaslab/common.hpp"

namespace biaslab {

// One manifest per CLI command; digests make runs content-addressable.
struct RunManifest {
    std::string command;
    std::string config_digest;
    std::map<std::string, std::string> input_digests;  // path -> digest
    std::vector<std::string> outputs;
    std::string started_at;
    std::string finished_at;
    std::string tool_version{kToolVersion};

    void add_input(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;
};

}  // namespace biaslab
