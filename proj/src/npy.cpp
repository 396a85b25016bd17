#include "ccau/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ccau::npy {

namespace {

const char kMagic[] = "\x93NUMPY";

std::string shape_to_header(const std::vector<int64_t>& shape, const char* descr) {
  std::ostringstream os;
  os << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) os << ",";
    if (i + 1 < shape.size()) os << " ";
  }
  os << "), }";
  std::string h = os.str();
  // pad with spaces so that len(magic+version+len+header) % 64 == 0
  size_t total = 10 + h.size() + 1;
  size_t pad = (64 - total % 64) % 64;
  h.append(pad, ' ');
  h.push_back('\n');
  return h;
}

struct Header {
  std::string descr;
  std::vector<int64_t> shape;
};

Header parse_header(const std::string& h, const std::string& path) {
  Header out;
  auto find_field = [&](const std::string& key) -> size_t {
    size_t p = h.find(key);
    if (p == std::string::npos)
      throw std::runtime_error("npy: missing '" + key + "' in header of " + path);
    return p;
  };
  size_t dp = find_field("'descr'");
  size_t q1 = h.find('\'', h.find(':', dp));
  size_t q2 = h.find('\'', q1 + 1);
  out.descr = h.substr(q1 + 1, q2 - q1 - 1);

  if (h.find("'fortran_order': False") == std::string::npos)
    throw std::runtime_error("npy: only C-order arrays supported: " + path);

  size_t sp = find_field("'shape'");
  size_t p1 = h.find('(', sp);
  size_t p2 = h.find(')', p1);
  std::string tup = h.substr(p1 + 1, p2 - p1 - 1);
  std::istringstream ts(tup);
  std::string tok;
  while (std::getline(ts, tok, ',')) {
    std::string t;
    for (char c : tok)
      if (!isspace(static_cast<unsigned char>(c))) t += c;
    if (!t.empty()) out.shape.push_back(std::stoll(t));
  }
  return out;
}

std::pair<Header, std::ifstream> open_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("npy: cannot open " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("npy: bad magic in " + path);
  unsigned char ver[2];
  in.read(reinterpret_cast<char*>(ver), 2);
  uint32_t hlen = 0;
  if (ver[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    hlen = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    hlen = b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
  }
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  return {parse_header(header, path), std::move(in)};
}

void write_npy(const std::string& path, const std::vector<int64_t>& shape, const char* descr,
               const void* data, size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("npy: cannot write " + path);
  std::string header = shape_to_header(shape, descr);
  out.write(kMagic, 6);
  const unsigned char ver[2] = {1, 0};
  out.write(reinterpret_cast<const char*>(ver), 2);
  uint16_t hl = static_cast<uint16_t>(header.size());
  unsigned char lb[2] = {static_cast<unsigned char>(hl & 0xff),
                         static_cast<unsigned char>(hl >> 8)};
  out.write(reinterpret_cast<const char*>(lb), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

}  // namespace

Array load(const std::string& path) {
  auto [hdr, in] = open_npy(path);
  Array arr;
  arr.shape = hdr.shape;
  int64_t n = arr.numel();
  arr.data.resize(static_cast<size_t>(n));
  if (hdr.descr == "<f4") {
    in.read(reinterpret_cast<char*>(arr.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
  } else if (hdr.descr == "<f8") {
    std::vector<double> tmp(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(n * sizeof(double)));
    for (int64_t i = 0; i < n; ++i) arr.data[static_cast<size_t>(i)] = static_cast<float>(tmp[i]);
  } else {
    throw std::runtime_error("npy: unsupported dtype '" + hdr.descr + "' in " + path);
  }
  if (!in) throw std::runtime_error("npy: truncated data in " + path);
  return arr;
}

void save(const std::string& path, const Array& arr) {
  write_npy(path, arr.shape, "<f4", arr.data.data(), arr.data.size() * sizeof(float));
}

std::vector<double> load_f64(const std::string& path, std::vector<int64_t>* shape) {
  auto [hdr, in] = open_npy(path);
  int64_t n = 1;
  for (auto d : hdr.shape) n *= d;
  std::vector<double> out(static_cast<size_t>(n));
  if (hdr.descr == "<f8") {
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * sizeof(double)));
  } else if (hdr.descr == "<f4") {
    std::vector<float> tmp(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(n * sizeof(float)));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = tmp[static_cast<size_t>(i)];
  } else {
    throw std::runtime_error("npy: unsupported dtype '" + hdr.descr + "' in " + path);
  }
  if (!in) throw std::runtime_error("npy: truncated data in " + path);
  if (shape) *shape = hdr.shape;
  return out;
}

void save_f64(const std::string& path, const std::vector<int64_t>& shape,
              const std::vector<double>& data) {
  write_npy(path, shape, "<f8", data.data(), data.size() * sizeof(double));
}

}  // namespace ccau::npy
