#pragma once

// Runs the lota executable through the shell and captures its exit code,
// standard output and standard error.

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

namespace cli {

struct Result {
    int code = -1;
    std::string out;
    std::string err;

    // The JSON error object printed on stderr, or null.
    nlohmann::json error() const {
        const auto pos = err.find('{');
        if (pos == std::string::npos) return nullptr;
        return nlohmann::json::parse(err.substr(pos), nullptr, false);
    }
};

inline std::string quote(const std::string & s) {
    std::string q = "'";
    for (char c : s) {
        if (c == '\'') q += "'\\''";
        else q += c;
    }
    return q + "'";
}

inline std::string slurp(const std::filesystem::path & p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs in `cwd` when given; stdout and stderr are captured in `scratch`.
inline Result run(const std::filesystem::path & exe, const std::vector<std::string> & args,
                  const std::filesystem::path & scratch, const std::filesystem::path & cwd = {}) {
    std::filesystem::create_directories(scratch);
    const auto out_file = std::filesystem::absolute(scratch / "cli_stdout.txt");
    const auto err_file = std::filesystem::absolute(scratch / "cli_stderr.txt");
    std::string cmd = cwd.empty() ? "" : "cd " + quote(cwd.string()) + " && ";
    cmd += quote(std::filesystem::absolute(exe).string());
    for (const auto & a : args) cmd += " " + quote(a);
    cmd += " >" + quote(out_file.string()) + " 2>" + quote(err_file.string());
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

inline void write_json(const std::filesystem::path & p, const nlohmann::json & j) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(2) << '\n';
}

// Relative path -> file bytes for every regular file under `dir`.
inline std::vector<std::pair<std::string, std::string>> tree(const std::filesystem::path & dir) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto & e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.emplace_back(std::filesystem::relative(e.path(), dir).string(), slurp(e.path()));
    }
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace cli
