#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "nanofusion/common.hpp"

namespace nf {

// Writes via a temp file in the same directory plus rename, so readers never
// observe a half-written artifact.
void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer);

void check_magic(std::istream& in, const char expect[4], const std::string& path);

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("short read while reading " + what);
    return v;
}

template <typename T>
void write_span(std::ostream& out, const T* data, size_t n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
void read_span(std::istream& in, T* data, size_t n, const std::string& what) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw IoError("short read while reading " + what);
}

void write_string(std::ostream& out, const std::string& s);
std::string read_string(std::istream& in, const std::string& what);

}  // namespace nf
