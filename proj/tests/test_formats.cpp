#include <doctest.h>

#include "handfit/io.hpp"
#include "handfit/uhm.hpp"
#include "support.hpp"

using namespace handfit;

namespace {

UhmBlob& blob(UhmFile& f, const std::string& name) {
  for (auto& b : f.blobs)
    if (b.name == name) return b;
  throw std::runtime_error("no blob " + name);
}

Mesh tetrahedron() {
  Mesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  m.faces.resize(4, 3);
  m.faces << 0, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3;
  m.edges = mesh_edges(m.faces);
  return m;
}

int count_prefix(const std::string& text, const std::string& prefix) {
  int n = 0;
  std::size_t at = 0;
  while (at < text.size()) {
    const std::size_t end = text.find('\n', at);
    if (text.compare(at, prefix.size(), prefix) == 0) ++n;
    if (end == std::string::npos) break;
    at = end + 1;
  }
  return n;
}

}  // namespace

TEST_SUITE("formats") {

TEST_CASE("model container round trip is byte-exact") {
  testing::TempDir dir("uhm");
  const HandModel m = synth_model(7, 200, 16, 10);
  save_model(m, dir.file("a.uhm"));
  const HandModel back = load_model(dir.file("a.uhm"));
  save_model(back, dir.file("b.uhm"));
  CHECK(read_file(dir.file("a.uhm")) == read_file(dir.file("b.uhm")));
  CHECK(read_file(dir.file("a.uhm")).substr(0, 4) == "UHM1");

  CHECK(back.name == m.name);
  CHECK(back.joint_names == m.joint_names);
  CHECK(back.parents == m.parents);
  CHECK(back.faces == m.faces);
  CHECK(back.fingertip_vertex_ids == m.fingertip_vertex_ids);
  CHECK(back.edges == m.edges);
  CHECK(back.skinning_weights == m.skinning_weights);
  CHECK(back.joint_regressor == m.joint_regressor);
  CHECK((back.template_vertices - m.template_vertices).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(back.template_vertices == m.template_vertices.cast<float>().cast<double>());
  CHECK(back.shape_basis == m.shape_basis.cast<float>().cast<double>());

  const HandModel again = load_model(dir.file("b.uhm"));
  CHECK(again.template_vertices == back.template_vertices);
  CHECK(again.shape_basis == back.shape_basis);
}

TEST_CASE("generic container round trip") {
  UhmFile f;
  f.kind = "test";
  f.meta = {{"answer", 42}};
  f.blobs.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, 6}});
  f.blobs.push_back({"empty", {0}, {}});
  f.blobs.push_back({"b", {1}, {-0.5f}});
  const std::string bytes = encode_uhm(f);
  const UhmFile g = decode_uhm(bytes);
  CHECK(g.kind == "test");
  CHECK(g.meta["answer"] == 42);
  REQUIRE(g.blobs.size() == 3);
  CHECK(g.blob("a").data == f.blobs[0].data);
  CHECK(g.blob("a").shape == f.blobs[0].shape);
  CHECK(g.blob("empty").element_count() == 0);
  CHECK(g.blob("b").data[0] == -0.5f);
  CHECK(encode_uhm(g) == bytes);
  CHECK(crc32_of("123456789", 9) == 0xCBF43926u);
}

TEST_CASE("corrupted containers raise FormatError") {
  const std::string bytes = encode_uhm(model_to_uhm(synth_model(1, 60, 6, 2)));
  CHECK_THROWS_AS(decode_uhm(bytes.substr(0, bytes.size() - 4)), FormatError);
  CHECK_THROWS_AS(decode_uhm(bytes.substr(0, 6)), FormatError);
  CHECK_THROWS_AS(decode_uhm("UHM2" + bytes.substr(4)), FormatError);
  std::string flipped = bytes;
  flipped.back() = static_cast<char>(flipped.back() ^ 0x01);
  CHECK_THROWS_WITH_AS(decode_uhm(flipped), doctest::Contains("checksum"), FormatError);
  CHECK_THROWS_WITH_AS(decode_uhm(bytes + "x", "extra.uhm"), doctest::Contains("extra.uhm"), FormatError);
}

TEST_CASE("IO failures raise IoError") {
  const HandModel m = synth_model(1, 60, 6, 2);
  CHECK_THROWS_AS(save_model(m, "/nonexistent-dir/sub/model.uhm"), IoError);
  CHECK_THROWS_AS(load_model("/nonexistent-dir/model.uhm"), IoError);
  CHECK_THROWS_AS(export_obj(rest_mesh(m), "/nonexistent-dir/mesh.obj"), IoError);
}

TEST_CASE("invalid model contents are rejected on load") {
  UhmFile f = model_to_uhm(synth_model(2, 120, 8, 3));
  SUBCASE("skinning row not summing to one names the row") {
    UhmBlob& w = blob(f, "skinning_weights");
    const auto cols = w.shape[1];
    for (std::int64_t c = 0; c < cols; ++c) w.data[5 * cols + c] *= 0.9f;
    CHECK_THROWS_WITH_AS(model_from_uhm(decode_uhm(encode_uhm(f))), doctest::Contains("row 5"), InvariantError);
  }
  SUBCASE("cyclic kinematic tree") {
    UhmBlob& t = blob(f, "kinematic_tree");
    t.data[1] = 2;
    t.data[2] = 1;
    CHECK_THROWS_WITH_AS(model_from_uhm(f), doctest::Contains("cycle"), InvariantError);
  }
  SUBCASE("shape mismatch") {
    blob(f, "template_vertices").shape = {3, 120};
    CHECK_THROWS_AS(model_from_uhm(f), FormatError);
  }
  SUBCASE("wrong kind") {
    f.kind = "regressor";
    CHECK_THROWS_AS(model_from_uhm(f), FormatError);
  }
}

TEST_CASE("OBJ export of a tetrahedron") {
  const std::string text = format_obj(tetrahedron());
  CHECK(count_prefix(text, "v ") == 4);
  CHECK(count_prefix(text, "f ") == 4);
  CHECK(text.find("f 1 3 2\n") != std::string::npos);
  CHECK(text.find("v 1 0 0\n") != std::string::npos);
}

TEST_CASE("OBJ parse then re-export is byte-identical") {
  const HandModel m = synth_model(3, 150, 10, 2);
  Rng rng(4);
  const Mesh posed = forward(m, testing::random_pose(m, rng)).first;
  const std::string text = format_obj(posed);
  const Mesh back = parse_obj(text);
  CHECK(format_obj(back) == text);
  CHECK(back.vertices == posed.vertices);
  CHECK(back.faces == posed.faces);
  CHECK(back.edges == posed.edges);
  CHECK(rest_mesh(m).vertices.rows() == 150);
  CHECK(count_prefix(format_obj(rest_mesh(m)), "v ") == 150);
}

TEST_CASE("OBJ reader accepts common variants") {
  const Mesh m = parse_obj(
      "# comment\n"
      "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
      "vn 0 0 1\n"
      "f 1//1 2//1 3//1 4//1\n");
  CHECK(m.vertices.rows() == 4);
  REQUIRE(m.faces.rows() == 2);
  CHECK(m.faces.row(1) == Eigen::RowVector3i(0, 2, 3));
  const Mesh neg = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
  CHECK(neg.faces.row(0) == Eigen::RowVector3i(0, 1, 2));
  CHECK_THROWS_AS(parse_obj("v 0 0 0\nf 1 2 3\n"), FormatError);
  CHECK_THROWS_AS(parse_obj("v 0 zero 0\n"), FormatError);
}

}  // TEST_SUITE
