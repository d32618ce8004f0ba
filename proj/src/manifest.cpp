#include "biaslab/manifest.hpp"

#include <json.hpp>

namespace biaslab {

using nlohmann::json;

void RunManifest::add_input(const std::filesystem::path& path) {
    input_digests[path.string()] = digest_file_hex(path);
}

void RunManifest::write(const std::filesystem::path& path) const {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "run_manifest";
    j["command"] = command;
    j["config_digest"] = config_digest;
    j["input_digests"] = input_digests;
    j["outputs"] = outputs;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["tool_version"] = tool_version;
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace biaslab
