#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "nstm/errors.hpp"
#include "nstm/weights_io.hpp"
#include "support.hpp"

using namespace nstm;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string &name) {
  auto dir = fs::temp_directory_path() / "nstm_weights_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path &p, const std::string &bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

template <class F>
std::string error_of(F &&f) {
  try {
    f();
  } catch (const DataError &e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("round trip of a written model") {
  auto m = testing::small_model(1, 2);
  auto path = temp_path("two_layer.nstm");
  save_model(path, m);
  auto back = load_model(path);
  CHECK(back.config() == m.config());
  CHECK(back.config().n_layers == 2);
  CHECK(back.weights().tok_emb == m.weights().tok_emb);
  CHECK(back.weights().blocks[1].w_down == m.weights().blocks[1].w_down);
  CHECK(back.weights().lm_head == m.weights().lm_head);
  std::vector<TokenId> p{1, 2, 3};
  CHECK(back.forward_prefill(p).logits == m.forward_prefill(p).logits);
  // Writing again gives the same bytes.
  auto again = temp_path("two_layer_again.nstm");
  save_model(again, back);
  CHECK(slurp(path) == slurp(again));
  CHECK(slurp(path).substr(0, 4) == "NSTM");
}

TEST_CASE("header errors name what is wrong") {
  auto m = testing::small_model(1, 2);
  auto path = temp_path("good.nstm");
  save_model(path, m);
  const std::string bytes = slurp(path);

  auto bad = temp_path("bad.nstm");
  spit(bad, bytes.substr(0, 10));
  CHECK(error_of([&] { load_model(bad); }).find("malformed header") != std::string::npos);

  spit(bad, "XXXX" + bytes.substr(4));
  CHECK(error_of([&] { load_model(bad); }).find("magic") != std::string::npos);

  // d_model = 65 with 8 heads. Header: magic, version, n_layers, n_heads, d_model.
  std::string dims = bytes;
  std::uint32_t heads = 8, d = 65;
  std::memcpy(dims.data() + 12, &heads, 4);
  std::memcpy(dims.data() + 16, &d, 4);
  spit(bad, dims);
  CHECK(error_of([&] { load_model(bad); }).find("dimension mismatch") != std::string::npos);

  spit(bad, bytes + "z");
  CHECK(error_of([&] { load_model(bad); }).find("trailing") != std::string::npos);

  spit(bad, bytes.substr(0, bytes.size() - 3));
  CHECK_FALSE(error_of([&] { load_model(bad); }).empty());

  CHECK(error_of([&] { load_model(temp_path("does_not_exist.nstm")); }).find("cannot open") != std::string::npos);
}

TEST_CASE("non-finite weights are rejected by name") {
  auto m = testing::small_model(1, 2);
  auto path = temp_path("nan.nstm");
  save_model(path, m);
  // Overwrite the last lm_head element in the payload.
  std::string bytes = slurp(path);
  const float good = m.weights().lm_head.data.back();
  std::string needle(reinterpret_cast<const char *>(&good), 4);
  auto pos = bytes.rfind(needle);
  REQUIRE(pos != std::string::npos);
  float nan = NAN;
  std::memcpy(bytes.data() + pos, &nan, 4);
  spit(path, bytes);
  auto msg = error_of([&] { load_model(path); });
  CHECK(msg.find("lm_head") != std::string::npos);
  CHECK(msg.find("non-finite") != std::string::npos);
}
