#include "handfit/uhm.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace handfit {

namespace {

constexpr char kMagic[4] = {'U', 'H', 'M', '1'};
constexpr int kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::string blob_bytes(const UhmBlob& b) {
  std::string out;
  out.reserve(b.data.size() * 4);
  for (float f : b.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

UhmBlob matrix_blob(const std::string& name, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  UhmBlob b{name, {m.rows(), m.cols()}, {}};
  b.data.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) b.data.push_back(static_cast<float>(m(r, c)));
  return b;
}

UhmBlob index_blob(const std::string& name, const std::vector<int>& v) {
  UhmBlob b{name, {static_cast<std::int64_t>(v.size())}, {}};
  for (int x : v) b.data.push_back(static_cast<float>(x));
  return b;
}

void expect_shape(const UhmBlob& b, std::vector<std::int64_t> shape) {
  if (b.shape != shape) {
    std::string want, got;
    for (auto s : shape) want += (want.empty() ? "" : "x") + std::to_string(s);
    for (auto s : b.shape) got += (got.empty() ? "" : "x") + std::to_string(s);
    throw FormatError("field " + b.name + ": shape " + got + " does not match declared " + want);
  }
}

Eigen::MatrixXd to_matrix(const UhmBlob& b, std::int64_t rows, std::int64_t cols) {
  expect_shape(b, {rows, cols});
  Eigen::MatrixXd m(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) m(r, c) = b.data[r * cols + c];
  return m;
}

int to_index(const UhmBlob& b, std::size_t k) {
  const float f = b.data[k];
  if (!std::isfinite(f) || f != std::floor(f) || std::abs(f) > 16777216.0f) {
    throw FormatError("field " + b.name + ": entry " + std::to_string(k) + " is not an integer");
  }
  return static_cast<int>(f);
}

std::vector<int> to_indices(const UhmBlob& b, std::int64_t n) {
  expect_shape(b, {n});
  std::vector<int> out(n);
  for (std::int64_t k = 0; k < n; ++k) out[k] = to_index(b, k);
  return out;
}

std::int64_t dim(const nlohmann::json& dims, const char* key) {
  if (!dims.contains(key) || !dims[key].is_number_integer() || dims[key].get<std::int64_t>() < 0) {
    throw FormatError(std::string("manifest dims.") + key + " missing or invalid");
  }
  return dims[key].get<std::int64_t>();
}

}  // namespace

std::int64_t UhmBlob::element_count() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

const UhmBlob& UhmFile::blob(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return b;
  throw FormatError("missing blob " + name);
}

bool UhmFile::has_blob(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return true;
  return false;
}

std::uint32_t crc32_of(const void* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string encode_uhm(const UhmFile& file) {
  std::string payload;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& b : file.blobs) {
    if (b.element_count() != static_cast<std::int64_t>(b.data.size())) {
      throw DimensionError("blob " + b.name + " shape does not match its data length");
    }
    const std::string bytes = blob_bytes(b);
    entries.push_back({{"name", b.name},
                       {"dtype", "f32le"},
                       {"shape", b.shape},
                       {"offset", payload.size()},
                       {"length", bytes.size()},
                       {"crc32", crc32_of(bytes.data(), bytes.size())}});
    payload += bytes;
  }
  nlohmann::json manifest = {{"format", "UHM"},
                             {"version", kVersion},
                             {"kind", file.kind},
                             {"meta", file.meta},
                             {"blobs", entries},
                             {"payload_length", payload.size()},
                             {"payload_crc32", crc32_of(payload.data(), payload.size())}};
  const std::string text = manifest.dump();
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

UhmFile decode_uhm(std::string_view bytes, const std::string& source) {
  auto fail = [&](const std::string& what) { return FormatError(source + ": " + what); };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail("not a UHM container (bad magic)");
  const std::uint32_t mlen = get_u32(reinterpret_cast<const unsigned char*>(bytes.data() + 4));
  if (bytes.size() - 8 < mlen) throw fail("manifest length " + std::to_string(mlen) + " exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(8, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    if (manifest.at("format") != "UHM") throw fail("manifest format is not UHM");
    if (manifest.at("version") != kVersion) throw fail("unsupported version " + manifest.at("version").dump());
    const std::string_view payload = bytes.substr(8 + mlen);
    const auto declared = manifest.at("payload_length").get<std::uint64_t>();
    if (payload.size() != declared) {
      throw fail("payload is " + std::to_string(payload.size()) + " bytes, manifest declares " +
                 std::to_string(declared));
    }
    if (crc32_of(payload.data(), payload.size()) != manifest.at("payload_crc32").get<std::uint32_t>()) {
      throw fail("payload checksum mismatch");
    }
    UhmFile file;
    file.kind = manifest.at("kind").get<std::string>();
    file.meta = manifest.at("meta");
    std::uint64_t expected_offset = 0;
    for (const auto& e : manifest.at("blobs")) {
      UhmBlob b;
      b.name = e.at("name").get<std::string>();
      if (e.at("dtype") != "f32le") throw fail("blob " + b.name + ": unsupported dtype");
      b.shape = e.at("shape").get<std::vector<std::int64_t>>();
      for (auto s : b.shape)
        if (s < 0) throw fail("blob " + b.name + ": negative dimension");
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto length = e.at("length").get<std::uint64_t>();
      if (offset != expected_offset) throw fail("blob " + b.name + ": offset out of order");
      if (length != static_cast<std::uint64_t>(b.element_count()) * 4) {
        throw fail("blob " + b.name + ": length " + std::to_string(length) + " does not match shape");
      }
      if (offset + length > payload.size()) throw fail("blob " + b.name + ": truncated");
      const std::string_view raw = payload.substr(offset, length);
      if (crc32_of(raw.data(), raw.size()) != e.at("crc32").get<std::uint32_t>()) {
        throw fail("blob " + b.name + ": checksum mismatch");
      }
      b.data.resize(b.element_count());
      const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
      for (std::size_t k = 0; k < b.data.size(); ++k) b.data[k] = std::bit_cast<float>(get_u32(p + 4 * k));
      expected_offset += length;
      file.blobs.push_back(std::move(b));
    }
    if (expected_offset != payload.size()) throw fail("payload has trailing bytes");
    return file;
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

void write_uhm(const std::string& path, const UhmFile& file) { write_file(path, encode_uhm(file)); }

UhmFile read_uhm(const std::string& path) { return decode_uhm(read_file(path), path); }

UhmFile model_to_uhm(const HandModel& model) {
  const int nv = model.vertex_count();
  const int nb = model.shape_dim();
  UhmFile f;
  f.kind = "hand_model";
  f.meta = {{"name", model.name},
            {"dims",
             {{"V", nv},
              {"F", model.faces.rows()},
              {"J", model.joint_count()},
              {"B", nb},
              {"fingertips", model.fingertip_count()}}},
            {"joint_names", model.joint_names}};
  f.blobs.push_back(matrix_blob("template_vertices", model.template_vertices));
  f.blobs.push_back(matrix_blob("faces", model.faces.cast<double>()));
  UhmBlob basis{"shape_basis", {nb, nv, 3}, {}};
  basis.data.reserve(static_cast<std::size_t>(nb) * nv * 3);
  for (int b = 0; b < nb; ++b)
    for (int i = 0; i < 3 * nv; ++i) basis.data.push_back(static_cast<float>(model.shape_basis(i, b)));
  f.blobs.push_back(std::move(basis));
  f.blobs.push_back(matrix_blob("skinning_weights", model.skinning_weights));
  f.blobs.push_back(index_blob("kinematic_tree", model.parents));
  f.blobs.push_back(matrix_blob("joint_regressor", model.joint_regressor));
  f.blobs.push_back(index_blob("fingertip_vertex_ids", model.fingertip_vertex_ids));
  return f;
}

HandModel model_from_uhm(const UhmFile& f) {
  if (f.kind != "hand_model") throw FormatError("container holds '" + f.kind + "', not a hand_model");
  HandModel m;
  try {
    m.name = f.meta.at("name").get<std::string>();
    const auto& dims = f.meta.at("dims");
    const auto nv = dim(dims, "V"), nf = dim(dims, "F"), nj = dim(dims, "J"), nb = dim(dims, "B"),
               nt = dim(dims, "fingertips");
    m.template_vertices = to_matrix(f.blob("template_vertices"), nv, 3);
    const UhmBlob& faces = f.blob("faces");
    expect_shape(faces, {nf, 3});
    m.faces.resize(nf, 3);
    for (std::int64_t k = 0; k < nf * 3; ++k) m.faces.data()[k] = to_index(faces, k);
    const UhmBlob& basis = f.blob("shape_basis");
    expect_shape(basis, {nb, nv, 3});
    m.shape_basis.resize(3 * nv, nb);
    for (std::int64_t b = 0; b < nb; ++b)
      for (std::int64_t i = 0; i < 3 * nv; ++i) m.shape_basis(i, b) = basis.data[b * 3 * nv + i];
    m.skinning_weights = to_matrix(f.blob("skinning_weights"), nv, nj);
    m.parents = to_indices(f.blob("kinematic_tree"), nj);
    m.joint_regressor = to_matrix(f.blob("joint_regressor"), nj, nv);
    m.fingertip_vertex_ids = to_indices(f.blob("fingertip_vertex_ids"), nt);
    m.joint_names = f.meta.at("joint_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed hand_model manifest: ") + e.what());
  }
  finalize_model(m);
  return m;
}

void save_model(const HandModel& model, const std::string& path) { write_uhm(path, model_to_uhm(model)); }

HandModel load_model(const std::string& path) { return model_from_uhm(read_uhm(path)); }

}  // namespace handfit
