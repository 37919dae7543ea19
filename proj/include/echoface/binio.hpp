#pragma once

// Little-endian binary file helpers used by the corpus and checkpoint
// formats. All readers throw FormatError naming the file on truncation.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "echoface/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace echoface::binio {

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw IoError("cannot open for writing: " + path);
  }
  void bytes(const void* p, std::size_t n) {
    f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void magic(const char m[4]) { bytes(m, 4); }
  template <class T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  void f64_matrix(const Mat& m) {
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) pod<double>(m(r, c));
  }
  void f32_matrix(const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        pod<float>(static_cast<float>(m(r, c)));
  }
  void close() {
    f_.close();
    if (!f_) throw IoError("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream f_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw IoError("cannot open for reading: " + path);
  }
  const std::string& path() const { return path_; }
  void bytes(void* p, std::size_t n) {
    f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f_.gcount() != static_cast<std::streamsize>(n))
      throw FormatError("truncated file: " + path_);
  }
  void expect_magic(const char m[4]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      throw FormatError("bad magic in file: " + path_);
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  Mat f64_matrix() {
    auto rows = pod<std::uint64_t>();
    auto cols = pod<std::uint64_t>();
    if (rows > (1u << 24) || cols > (1u << 24))
      throw FormatError("implausible matrix shape in file: " + path_);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = pod<double>();
    return m;
  }
  Mat f32_matrix(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        m(r, c) = static_cast<double>(pod<float>());
    return m;
  }
  void expect_eof() {
    char c;
    f_.read(&c, 1);
    if (!f_.eof()) throw FormatError("trailing bytes in file: " + path_);
  }

 private:
  std::string path_;
  std::ifstream f_;
};

}  // namespace echoface::binio
