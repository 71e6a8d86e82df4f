#include "attrsae/io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

namespace attrsae {
namespace {

constexpr uint32_t kFormatVersion = 1;

// All multi-byte values are serialized little-endian, byte by byte, so files
// are identical regardless of host endianness.
void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(bytes_[pos_++]);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string raw(size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void expect_magic(const char* magic) {
    need(4);
    if (bytes_.compare(pos_, 4, magic, 4) != 0)
      throw Error(ErrKind::BadMagic, path_ + ": expected magic \"" + magic + "\"");
    pos_ += 4;
  }

  void expect_version() {
    const uint32_t v = u32();
    if (v != kFormatVersion)
      throw Error(ErrKind::UnsupportedVersion,
                  path_ + ": version " + std::to_string(v) + ", supported " +
                      std::to_string(kFormatVersion));
  }

  void expect_end() const {
    if (pos_ != bytes_.size())
      throw Error(ErrKind::TruncatedPayload,
                  path_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
  }

  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(size_t len) const {
    if (pos_ + len > bytes_.size())
      throw Error(ErrKind::TruncatedPayload, path_ + ": payload ends early");
  }

  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrKind::IoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrKind::IoError, "read failed on " + path);
  return bytes;
}

// Write-to-temp-then-rename, so an interrupted run never leaves a torn file.
void spill(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrKind::IoError, "cannot create " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrKind::IoError, "write failed on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrKind::IoError, "cannot move temp file into place at " + path);
  }
}

void append_double_field(std::string& out, const char* key, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out += key;
  out += '=';
  out.append(buf, res.ptr);
  out += '\n';
}

double parse_double_field(const std::string& value, const std::string& key) {
  double v = 0.0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw Error(ErrKind::ConfigParseError, "bad value for " + key + ": \"" + value + "\"");
  return v;
}

int64_t parse_int_field(const std::string& value, const std::string& key) {
  int64_t v = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw Error(ErrKind::ConfigParseError, "bad value for " + key + ": \"" + value + "\"");
  return v;
}

uint64_t parse_uint_field(const std::string& value, const std::string& key) {
  uint64_t v = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw Error(ErrKind::ConfigParseError, "bad value for " + key + ": \"" + value + "\"");
  return v;
}

bool parse_bool_field(const std::string& value, const std::string& key) {
  if (value == "1") return true;
  if (value == "0") return false;
  throw Error(ErrKind::ConfigParseError, "bad value for " + key + ": \"" + value + "\"");
}

}  // namespace

void write_embeddings(const std::string& path, const EmbeddingBatch& batch) {
  if (batch.n == 0) throw Error(ErrKind::EmptyBatch, "write_embeddings: empty batch");
  std::string out;
  out.reserve(21 + batch.data.size() * 4);
  out += "ATSE";
  put_u32(out, kFormatVersion);
  put_u64(out, static_cast<uint64_t>(batch.n));
  put_u32(out, static_cast<uint32_t>(batch.d));
  put_u8(out, 0);  // dtype: binary32
  for (double v : batch.data) put_f32(out, v);
  spill(path, out);
}

EmbeddingBatch read_embeddings(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic("ATSE");
  r.expect_version();
  const uint64_t n = r.u64();
  const uint32_t d = r.u32();
  const uint8_t dtype = r.u8();
  if (dtype != 0)
    throw Error(ErrKind::UnsupportedVersion, path + ": unknown dtype code " + std::to_string(dtype));
  if (n == 0 || d == 0) throw Error(ErrKind::EmptyBatch, path + ": empty embedding file");
  if (r.remaining() != n * d * 4)
    throw Error(ErrKind::TruncatedPayload,
                path + ": header declares " + std::to_string(n * d * 4) + " payload bytes, file has " +
                    std::to_string(r.remaining()));
  EmbeddingBatch batch(static_cast<int64_t>(n), static_cast<int64_t>(d));
  for (double& v : batch.data) v = r.f32();
  r.expect_end();
  return batch;
}

void save_checkpoint(const std::string& path, const SaeModel& model,
                     const TrainConfig& cfg) {
  if (!model.shapes_ok()) throw Error(ErrKind::DimensionMismatch, "save_checkpoint: bad model shapes");
  const std::string config = encode_config(cfg);
  std::string out;
  out.reserve(24 + config.size() + (model.w_enc.size() + model.w_dec.size() +
                                    model.b_enc.size() + model.b_pre.size()) * 4);
  out += "ATSM";
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(model.d));
  put_u32(out, static_cast<uint32_t>(model.m));
  put_u64(out, static_cast<uint64_t>(config.size()));
  out += config;
  for (double v : model.w_enc) put_f32(out, v);  // m x d row-major as stored
  for (double v : model.b_enc) put_f32(out, v);
  // W_dec is column-contiguous in memory but row-major (d x m) on disk.
  for (int64_t i = 0; i < model.d; ++i)
    for (int64_t j = 0; j < model.m; ++j) put_f32(out, model.w_dec[j * model.d + i]);
  for (double v : model.b_pre) put_f32(out, v);
  spill(path, out);
}

std::pair<SaeModel, TrainConfig> load_checkpoint(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic("ATSM");
  r.expect_version();
  const uint32_t d = r.u32();
  const uint32_t m = r.u32();
  const uint64_t config_len = r.u64();
  const TrainConfig cfg = parse_config(r.raw(config_len));

  SaeModel model;
  model.d = d;
  model.m = m;
  if (d == 0 || m == 0) throw Error(ErrKind::TruncatedPayload, path + ": zero model dimensions");
  const uint64_t want = (2ull * d * m + m + d) * 4;
  if (r.remaining() != want)
    throw Error(ErrKind::TruncatedPayload,
                path + ": header declares " + std::to_string(want) + " parameter bytes, file has " +
                    std::to_string(r.remaining()));
  model.w_enc.resize(static_cast<size_t>(m) * d);
  for (double& v : model.w_enc) v = r.f32();
  model.b_enc.resize(m);
  for (double& v : model.b_enc) v = r.f32();
  model.w_dec.resize(static_cast<size_t>(d) * m);
  for (uint32_t i = 0; i < d; ++i)
    for (uint32_t j = 0; j < m; ++j) model.w_dec[static_cast<size_t>(j) * d + i] = r.f32();
  model.b_pre.resize(d);
  for (double& v : model.b_pre) v = r.f32();
  r.expect_end();
  return {std::move(model), cfg};
}

void write_dictionary(const std::string& path, const PlantedDictionary& dict) {
  std::string out;
  out.reserve(28 + (dict.atoms.size() + dict.offset.size() + dict.frequencies.size()) * 8);
  out += "ATSD";
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(dict.d));
  put_u32(out, static_cast<uint32_t>(dict.p));
  put_u64(out, dict.seed);
  // binary64 payload: the unit-norm and sum-to-one invariants must survive.
  for (double v : dict.atoms) put_f64(out, v);  // d x p column-contiguous
  for (double v : dict.offset) put_f64(out, v);
  for (double v : dict.frequencies) put_f64(out, v);
  spill(path, out);
}

PlantedDictionary read_dictionary(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic("ATSD");
  r.expect_version();
  PlantedDictionary dict;
  dict.d = r.u32();
  dict.p = r.u32();
  dict.seed = r.u64();
  if (dict.d == 0 || dict.p == 0)
    throw Error(ErrKind::TruncatedPayload, path + ": zero dictionary dimensions");
  const uint64_t want = (static_cast<uint64_t>(dict.d) * dict.p + dict.d + dict.p) * 8;
  if (r.remaining() != want)
    throw Error(ErrKind::TruncatedPayload,
                path + ": header declares " + std::to_string(want) + " payload bytes, file has " +
                    std::to_string(r.remaining()));
  dict.atoms.resize(static_cast<size_t>(dict.d) * dict.p);
  for (double& v : dict.atoms) v = r.f64();
  dict.offset.resize(dict.d);
  for (double& v : dict.offset) v = r.f64();
  dict.frequencies.resize(dict.p);
  for (double& v : dict.frequencies) v = r.f64();
  r.expect_end();

  dict.max_abs_cos = 0.0;
  for (int64_t a = 0; a < dict.p; ++a)
    for (int64_t b = a + 1; b < dict.p; ++b) {
      double dot = 0.0;
      for (int64_t i = 0; i < dict.d; ++i)
        dot += dict.atoms[a * dict.d + i] * dict.atoms[b * dict.d + i];
      dict.max_abs_cos = std::max(dict.max_abs_cos, std::abs(dot));
    }
  return dict;
}

void write_codes(const std::string& path, const std::vector<SparseCode>& codes, int64_t m) {
  std::string out;
  out += "ATSC";
  put_u32(out, kFormatVersion);
  put_u64(out, codes.size());
  put_u32(out, static_cast<uint32_t>(m));
  for (const SparseCode& code : codes) {
    put_u32(out, static_cast<uint32_t>(code.nnz()));
    for (uint32_t idx : code.indices) put_u32(out, idx);
    for (double c : code.coeffs) put_f64(out, c);
  }
  spill(path, out);
}

std::vector<SparseCode> read_codes(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic("ATSC");
  r.expect_version();
  const uint64_t n = r.u64();
  const uint32_t m = r.u32();
  std::vector<SparseCode> codes;
  codes.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    SparseCode code;
    code.m = m;
    const uint32_t cnt = r.u32();
    code.indices.resize(cnt);
    for (uint32_t& idx : code.indices) idx = r.u32();
    code.coeffs.resize(cnt);
    for (double& c : code.coeffs) c = r.f64();
    codes.push_back(std::move(code));
  }
  r.expect_end();
  return codes;
}

EmbeddingBatch read_npy(const std::string& path) {
  const std::string bytes = slurp(path);
  auto fail = [&](const std::string& why) -> Error {
    return Error(ErrKind::BadMagic, path + ": " + why);
  };
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY", 6) != 0)
    throw fail("not a .npy file");
  const uint8_t major = static_cast<uint8_t>(bytes[6]);
  size_t header_len = 0, header_off = 0;
  if (major == 1) {
    header_len = static_cast<uint8_t>(bytes[8]) | (static_cast<uint8_t>(bytes[9]) << 8);
    header_off = 10;
  } else if (major == 2) {
    if (bytes.size() < 12) throw fail("truncated header");
    header_len = 0;
    for (int i = 0; i < 4; ++i)
      header_len |= static_cast<size_t>(static_cast<uint8_t>(bytes[8 + i])) << (8 * i);
    header_off = 12;
  } else {
    throw Error(ErrKind::UnsupportedVersion, path + ": .npy major version " + std::to_string(major));
  }
  if (bytes.size() < header_off + header_len) throw fail("truncated header");
  const std::string header = bytes.substr(header_off, header_len);

  auto extract = [&](const std::string& key) -> std::string {
    const size_t at = header.find("'" + key + "'");
    if (at == std::string::npos) throw fail("header missing '" + key + "'");
    size_t colon = header.find(':', at);
    if (colon == std::string::npos) throw fail("malformed header");
    size_t start = header.find_first_not_of(" \t", colon + 1);
    if (start == std::string::npos) throw fail("malformed header");
    size_t end = start;
    if (header[start] == '(') {
      end = header.find(')', start);
      if (end == std::string::npos) throw fail("malformed shape");
      end += 1;
    } else {
      end = header.find_first_of(",}", start);
    }
    return header.substr(start, end - start);
  };

  const std::string descr = extract("descr");
  const std::string fortran = extract("fortran_order");
  const std::string shape = extract("shape");
  if (fortran.find("False") == std::string::npos)
    throw Error(ErrKind::UnsupportedVersion, path + ": Fortran-order arrays are not supported");

  size_t item = 0;
  bool is_f32 = false;
  if (descr.find("<f4") != std::string::npos) {
    item = 4;
    is_f32 = true;
  } else if (descr.find("<f8") != std::string::npos) {
    item = 8;
  } else {
    throw Error(ErrKind::UnsupportedVersion, path + ": dtype " + descr + " not supported (need <f4 or <f8)");
  }

  uint64_t dims[2] = {0, 0};
  int ndims = 0;
  size_t pos = 1;  // past '('
  while (pos < shape.size() && ndims < 3) {
    while (pos < shape.size() && !(shape[pos] >= '0' && shape[pos] <= '9')) {
      if (shape[pos] == ')') break;
      ++pos;
    }
    if (pos >= shape.size() || shape[pos] == ')') break;
    uint64_t v = 0;
    while (pos < shape.size() && shape[pos] >= '0' && shape[pos] <= '9') {
      v = v * 10 + (shape[pos] - '0');
      ++pos;
    }
    if (ndims < 2) dims[ndims] = v;
    ++ndims;
  }
  if (ndims != 2) throw Error(ErrKind::UnsupportedVersion, path + ": need a 2-D array, shape is " + shape);

  const uint64_t n = dims[0], d = dims[1];
  if (n == 0 || d == 0) throw Error(ErrKind::EmptyBatch, path + ": empty array");
  const size_t payload_off = header_off + header_len;
  if (bytes.size() - payload_off != n * d * item)
    throw Error(ErrKind::TruncatedPayload, path + ": payload size does not match shape");

  Reader r(bytes.substr(payload_off), path);
  EmbeddingBatch batch(static_cast<int64_t>(n), static_cast<int64_t>(d));
  for (double& v : batch.data) v = is_f32 ? r.f32() : r.f64();
  return batch;
}

std::string encode_config(const TrainConfig& cfg) {
  std::string out;
  out += "k=" + std::to_string(cfg.k) + "\n";
  out += "k_aux=" + std::to_string(cfg.k_aux) + "\n";
  append_double_field(out, "alpha", cfg.alpha);
  append_double_field(out, "learning_rate", cfg.learning_rate);
  out += "batch_size=" + std::to_string(cfg.batch_size) + "\n";
  out += "total_steps=" + std::to_string(cfg.total_steps) + "\n";
  out += "dead_window=" + std::to_string(cfg.dead_window) + "\n";
  out += "seed=" + std::to_string(cfg.seed) + "\n";
  out += std::string("normalize_decoder=") + (cfg.normalize_decoder ? "1" : "0") + "\n";
  out += std::string("masked_aux=") + (cfg.masked_aux ? "1" : "0") + "\n";
  return out;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  uint32_t seen = 0;
  auto mark = [&](int bit) {
    if (seen & (1u << bit))
      throw Error(ErrKind::ConfigParseError, "duplicate config key");
    seen |= 1u << bit;
  };
  size_t pos = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrKind::ConfigParseError, "config line without '=': \"" + line + "\"");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "k") {
      mark(0);
      cfg.k = parse_int_field(value, key);
    } else if (key == "k_aux") {
      mark(1);
      cfg.k_aux = parse_int_field(value, key);
    } else if (key == "alpha") {
      mark(2);
      cfg.alpha = parse_double_field(value, key);
    } else if (key == "learning_rate") {
      mark(3);
      cfg.learning_rate = parse_double_field(value, key);
    } else if (key == "batch_size") {
      mark(4);
      cfg.batch_size = parse_int_field(value, key);
    } else if (key == "total_steps") {
      mark(5);
      cfg.total_steps = parse_int_field(value, key);
    } else if (key == "dead_window") {
      mark(6);
      cfg.dead_window = parse_int_field(value, key);
    } else if (key == "seed") {
      mark(7);
      cfg.seed = parse_uint_field(value, key);
    } else if (key == "normalize_decoder") {
      mark(8);
      cfg.normalize_decoder = parse_bool_field(value, key);
    } else if (key == "masked_aux") {
      mark(9);
      cfg.masked_aux = parse_bool_field(value, key);
    } else {
      throw Error(ErrKind::ConfigParseError, "unknown config key \"" + key + "\"");
    }
  }
  if (seen != 0x3FF)
    throw Error(ErrKind::ConfigParseError, "config echo is missing fields");
  return cfg;
}

}  // namespace attrsae
