#pragma once

#include <map>
#include <string>

namespace omnirestore {

// Entry point behind the binary: degrade / pretrain-encoder / train /
// restore / eval / selftest. Returns 0 on success, 1 on usage errors,
// 2 on runtime errors.
int dispatch(int argc, const char* const* argv);

// Flat key=value config file ('#' comments, blank lines ignored).
// Precedence everywhere is flags > config file > built-in defaults.
std::map<std::string, std::string> read_config_file(const std::string& path);

}  // namespace omnirestore
