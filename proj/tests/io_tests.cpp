#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "retmap/io.hpp"
#include "retmap/registration.hpp"
#include "retmap/synth.hpp"

using namespace retmap;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("doubles render with shortest round-trip precision") {
  Rng rng(83);
  std::vector<double> cases = {0.0,   -0.0,    1.0,    -1.0,  0.1,
                               1e-300, 1e300,  M_PI,   2.0 / 3.0};
  for (int i = 0; i < 1000; ++i)
    cases.push_back(std::ldexp(rng.normal(), int(rng.uniform(-60, 60))));
  for (double x : cases) {
    std::string s = format_double(x);
    double back = std::strtod(s.c_str(), nullptr);
    CHECK(back == x);
    // Canonical: re-rendering the parsed value gives the same string.
    CHECK(format_double(back) == s);
  }
}

TEST_CASE("hash comments are stripped, tokens preserved") {
  std::string text = "1 2 # trailing\n# full line\n3 4#tight\n";
  std::string stripped = strip_hash_comments(text);
  CHECK(stripped.find('#') == std::string::npos);
  CHECK(stripped.find("trailing") == std::string::npos);
  std::istringstream in(stripped);
  double a, b, c, d;
  in >> a >> b >> c >> d;
  CHECK(a == 1);
  CHECK(b == 2);
  CHECK(c == 3);
  CHECK(d == 4);
}

TEST_CASE("csv split and numeric parsing") {
  std::vector<std::string> parts = split("a,b,,d", ',');
  REQUIRE(parts.size() == 4);
  CHECK(parts[0] == "a");
  CHECK(parts[2] == "");
  CHECK(parse_double("2.5", "ctx") == 2.5);
  CHECK_THROWS_AS(parse_double("zilch", "ctx"), ParseError);
  CHECK_THROWS_AS(parse_double("", "ctx"), ParseError);
}

TEST_CASE("config text round-trips with comments and spacing") {
  std::string text =
      "# a comment\n"
      "alpha = 1.5\n"
      "name=value with spaces\n"
      "  padded_key   =   7   # inline comment\n";
  ConfigMap c = parse_config(text);
  CHECK(c.at("alpha") == "1.5");
  CHECK(c.at("name") == "value with spaces");
  CHECK(c.at("padded_key") == "7");
  ConfigMap back = parse_config(serialize_config(c));
  CHECK(back == c);
  CHECK(config_get(c, "alpha", 0.0) == 1.5);
  CHECK(config_get(c, "padded_key", 0) == 7);
  CHECK(config_get(c, "missing", 42) == 42);
  CHECK(config_get(c, "missing", std::string("dflt")) == "dflt");
}

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ull);
  CHECK(checksum_hex("") == "cbf29ce484222325");
}

TEST_CASE("manifest round-trip and checksum verification") {
  auto dir = temp_dir("retmap_io_manifest");
  CaseDirectory cd{dir};
  write_text_file(cd.prf(), "vertex,ecc,ang,sigma,r2\n0,1,0,0.5,1\n");
  write_case_manifest(cd, {{"angle_convention", kAngleConventionMath}});
  CaseManifest m = load_manifest(cd.manifest());
  CHECK(m.meta.at("angle_convention") == kAngleConventionMath);
  REQUIRE(m.file_checksums.count("prf.csv") == 1);
  CHECK_NOTHROW(verify_checksum(cd, m, "prf.csv"));
  // Tamper and verify the mismatch is caught.
  write_text_file(cd.prf(), "vertex,ecc,ang,sigma,r2\n0,2,0,0.5,1\n");
  CHECK_THROWS_AS(verify_checksum(cd, m, "prf.csv"), ChecksumMismatch);
  CHECK_THROWS_AS(verify_checksum(cd, m, "mesh.retmesh"), IoError);
  // Save/load round-trip.
  auto copy = dir / "copy.txt";
  save_manifest(copy, m);
  CaseManifest back = load_manifest(copy);
  CHECK(back.meta == m.meta);
  CHECK(back.file_checksums == m.file_checksums);
  std::filesystem::remove_all(dir);
}

TEST_CASE("prf csv conversions between angle conventions") {
  auto dir = temp_dir("retmap_io_prf");
  auto path = dir / "prf.csv";
  // Clinical convention: 0 deg = upper vertical meridian, clockwise.
  // Math convention: ang_math = 90 - ang_clinical.
  write_text_file(path,
                  "# angle_convention: clockwise_from_upper_vertical\n"
                  "vertex,ecc,ang,sigma,r2\n"
                  "0,2.0,0,0.5,1\n"    // up -> (0, 2)
                  "1,3.0,90,0.5,1\n"   // right -> (3, 0)
                  "2,4.0,180,0.5,1\n"  // down -> (0, -4)
                  "3,5.0,-90,0.5,1\n");  // left -> (-5, 0)
  PrfTable t = load_prf_csv(path);
  REQUIRE(t.visual.size() == 4);
  CHECK((t.visual[0] - Vec2(0, 2)).norm() <= 1e-12);
  CHECK((t.visual[1] - Vec2(3, 0)).norm() <= 1e-12);
  CHECK((t.visual[2] - Vec2(0, -4)).norm() <= 1e-12);
  CHECK((t.visual[3] - Vec2(-5, 0)).norm() <= 1e-12);

  // Writing always uses the math convention and announces it.
  auto out = dir / "out.csv";
  save_prf_csv(out, t);
  std::string written = read_text_file(out);
  CHECK(written.find("# angle_convention: math_ccw_from_positive_x") !=
        std::string::npos);
  PrfTable back = load_prf_csv(out);
  for (std::size_t i = 0; i < t.visual.size(); ++i) {
    CHECK((back.visual[i] - t.visual[i]).norm() <= 1e-12);
    CHECK(back.prf_size[i] == t.prf_size[i]);
    CHECK(back.variance_explained[i] == t.variance_explained[i]);
  }

  // The in-file comment wins over the caller's default.
  PrfTable t2 = load_prf_csv(path, kAngleConventionMath);
  CHECK((t2.visual[0] - Vec2(0, 2)).norm() <= 1e-12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("prf csv without a sidecar uses the caller's convention") {
  auto dir = temp_dir("retmap_io_prf_plain");
  auto path = dir / "prf.csv";
  write_text_file(path, "vertex,ecc,ang,sigma,r2\n0,2.0,0,0.5,1\n");
  PrfTable math = load_prf_csv(path);  // default: math convention
  CHECK((math.visual[0] - Vec2(2, 0)).norm() <= 1e-12);
  PrfTable clinical = load_prf_csv(path, kAngleConventionClinical);
  CHECK((clinical.visual[0] - Vec2(0, 2)).norm() <= 1e-12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("case writers emit byte-identical files on rewrite") {
  SyntheticSpec spec;
  spec.mesh_resolution = 91;
  RetinotopicMap t = synth_template(spec);
  auto dir = temp_dir("retmap_io_case");
  CaseDirectory cd{dir};
  for (int round = 0; round < 2; ++round) {
    save_mesh(cd.mesh(), t.mesh);
    save_parameterization(cd.uv(), t.param);
    save_prf_csv(cd.prf(), {t.visual, t.prf_size, t.variance_explained});
    write_case_manifest(cd, {{"angle_convention", kAngleConventionMath}});
    if (round == 0) {
      // Stash first-round bytes.
      std::filesystem::copy(dir, dir.string() + "_first",
                            std::filesystem::copy_options::recursive);
    }
  }
  for (const auto& entry :
       std::filesystem::directory_iterator(dir.string() + "_first")) {
    std::string name = entry.path().filename().string();
    CHECK(read_text_file(entry.path()) == read_text_file(dir / name));
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir.string() + "_first");
}

}  // TEST_SUITE
