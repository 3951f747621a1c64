#pragma once

#include <string>
#include <string_view>

#include "ptransfer/network.hpp"

namespace ptransfer {

struct LoadedCheckpoint {
    Network net;
    std::string config_text;
};

// Versioned binary container: magic, format version, layer specs, head kind,
// the producing run's config text, then parameter tensors in declaration
// order as little-endian 64-bit floats. Byte layout in docs/FORMATS.md.
void save_checkpoint(const std::string& path, const Network& net,
                     const std::string& config_text);
LoadedCheckpoint load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const Network& net, const std::string& config_text);
LoadedCheckpoint deserialize_checkpoint(std::string_view bytes);

// Hex SHA-1 of "blob <len>\0<bytes>", the same content id git assigns.
std::string git_blob_sha1(std::string_view bytes);
std::string file_blob_sha1(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace ptransfer
