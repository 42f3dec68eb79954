#pragma once

#include <string>
#include <vector>

namespace gmark {

std::vector<unsigned char> read_file(const std::string& path);
std::string read_text_file(const std::string& path);

// write to <path>.tmp then rename, so readers never see a partial file
void write_file_atomic(const std::string& path, const void* data, size_t size);
void write_file_atomic(const std::string& path, const std::string& text);

}  // namespace gmark
