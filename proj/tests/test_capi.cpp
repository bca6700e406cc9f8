// Exercises the shared library strictly through its C interface.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "crowdcount/crowdcount.h"

extern "C" int capi_header_check_label(long long cc_gt, long long cc_max);

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json take_json(char* s) {
  REQUIRE(s != nullptr);
  json j = json::parse(s);
  cc_string_free(s);
  return j;
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("crowdcount_capi_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

cc_dataset* synth(int n, int size, int max_count, uint64_t seed) {
  const json o = {{"n_images", n},
                  {"size_range", {size, size}},
                  {"count_range", {0, max_count}},
                  {"blob_radius", {2, 3}},
                  {"seed", seed}};
  cc_dataset* d = nullptr;
  REQUIRE(cc_dataset_synthesize(o.dump().c_str(), &d) == CC_OK);
  return d;
}

}  // namespace

TEST_CASE("status names and errors") {
  CHECK(std::string(cc_status_name(CC_OK)) == "ok");
  CHECK(std::string(cc_status_name(CC_ERR_LOAD)) == "load_error");
  CHECK(std::string(cc_status_name(CC_ERR_CONFIG)) == "config_error");
  CHECK(std::string(cc_status_name(static_cast<cc_status>(99))) == "unknown_error");

  int cls = -1;
  CHECK(cc_label_patch(-1, 10, &cls) == CC_ERR_ARGUMENT);
  CHECK(std::strlen(cc_last_error()) > 0);
  CHECK(cc_label_patch(1, 10, nullptr) == CC_ERR_ARGUMENT);
  CHECK(std::string(cc_last_error()).find("NULL") != std::string::npos);

  cc_model* m = nullptr;
  CHECK(cc_model_load("/nonexistent/model.ckpt", &m) == CC_ERR_IO);
  CHECK(m == nullptr);
  cc_dataset* d = nullptr;
  CHECK(cc_dataset_load("/nonexistent/manifest.jsonl", &d) == CC_ERR_LOAD);
  CHECK(cc_model_init("{not json", 0, &m) == CC_ERR_ARGUMENT);
  CHECK(cc_model_init(R"({"preset": "tiny", "bogus": 1})", 0, &m) == CC_ERR_CONFIG);
  CHECK(cc_dataset_synthesize(R"({"n_images": 1, "count_range": [5000, 5000], "seed": 7})", &d) ==
        CC_ERR_GENERATION);
}

TEST_CASE("labels and metrics") {
  int cls = -1;
  REQUIRE(cc_label_patch(0, 100, &cls) == CC_OK);
  CHECK(cls == CC_NCP);
  REQUIRE(cc_label_patch(5, 100, &cls) == CC_OK);
  CHECK(cls == CC_LCP);
  REQUIRE(cc_label_patch(20, 100, &cls) == CC_OK);
  CHECK(cls == CC_MCP);
  REQUIRE(cc_label_patch(21, 100, &cls) == CC_OK);
  CHECK(cls == CC_HCP);
  CHECK(capi_header_check_label(21, 100) == CC_HCP);

  const double p[] = {10, 20}, g[] = {12, 16};
  double mae = 0, rmse = 0;
  REQUIRE(cc_mae_rmse(p, g, 2, &mae, &rmse) == CC_OK);
  CHECK(mae == 3.0);
  CHECK(std::abs(rmse - std::sqrt(10.0)) < 1e-12);
  CHECK(cc_mae_rmse(p, g, 0, &mae, &rmse) == CC_ERR_ARGUMENT);

  double lr = 0;
  REQUIRE(cc_lr_at(nullptr, 30, &lr) == CC_OK);
  CHECK(lr == 0.0005);
  REQUIRE(cc_lr_at(R"({"base_lr": 0.1, "lr_halving_period": 2})", 5, &lr) == CC_OK);
  CHECK(lr == 0.025);
}

TEST_CASE("model lifecycle") {
  TempDir dir;
  cc_model* m = nullptr;
  REQUIRE(cc_model_init(R"({"preset": "tiny"})", 3, &m) == CC_OK);
  char* info = nullptr;
  REQUIRE(cc_model_info(m, &info) == CC_OK);
  const json j = take_json(info);
  CHECK(j.at("arch").at("base_channels") == 4);
  CHECK(j.at("parameter_count").get<int64_t>() > 0);

  const std::string path = (dir.path / "m.ckpt").string();
  REQUIRE(cc_model_save(m, path.c_str()) == CC_OK);
  cc_model* back = nullptr;
  REQUIRE(cc_model_load(path.c_str(), &back) == CC_OK);

  cc_dataset* d = synth(2, 100, 6, 5);
  CHECK(cc_dataset_size(d) == 2);
  int w = 0, h = 0;
  size_t n = 0;
  REQUIRE(cc_dataset_record(d, 1, &w, &h, &n) == CC_OK);
  CHECK(w == 100);
  CHECK(h == 100);
  CHECK(cc_dataset_record(d, 2, &w, &h, &n) == CC_ERR_ARGUMENT);

  cc_count_result *a = nullptr, *b = nullptr;
  REQUIRE(cc_count_record(m, d, 0, nullptr, &a) == CC_OK);
  REQUIRE(cc_count_record(back, d, 0, nullptr, &b) == CC_OK);
  CHECK(cc_count_result_total(a) == cc_count_result_total(b));
  CHECK(cc_count_result_patches(a) == 4);
  double sum = 0;
  for (size_t i = 0; i < cc_count_result_patches(a); ++i) {
    double c = -1;
    int row = -1, col = -1, pc = -1;
    REQUIRE(cc_count_result_patch(a, i, &row, &col, &pc, &c) == CC_OK);
    CHECK(row % 64 == 0);
    CHECK(pc >= 0);
    CHECK(pc <= 3);
    sum += c;
  }
  CHECK(std::abs(sum - cc_count_result_total(a)) < 1e-9);

  cc_count_result* ncp = nullptr;
  REQUIRE(cc_count_record(m, d, 1, R"({"forced_class": "NCP"})", &ncp) == CC_OK);
  CHECK(cc_count_result_total(ncp) == 0.0);
  CHECK(cc_count_record(m, d, 1, R"({"forced_class": "XXL"})", &ncp) == CC_ERR_ARGUMENT);
  CHECK(cc_count_record(m, d, 1, R"({"colour": 1})", &ncp) == CC_ERR_ARGUMENT);

  char* text = nullptr;
  REQUIRE(cc_count_result_json(a, &text) == CC_OK);
  CHECK(take_json(text).at("patches").size() == 4);

  char* manifest = nullptr;
  REQUIRE(cc_dataset_write(d, (dir.path / "ds").string().c_str(), &manifest) == CC_OK);
  cc_dataset* reloaded = nullptr;
  REQUIRE(cc_dataset_load(manifest, &reloaded) == CC_OK);
  cc_string_free(manifest);
  CHECK(cc_dataset_size(reloaded) == 2);

  char* report = nullptr;
  REQUIRE(cc_evaluate(m, reloaded, R"({"routing": "gt_labels"})", &report) == CC_OK);
  const json ev = take_json(report);
  CHECK(ev.at("mae").get<double>() <= ev.at("rmse").get<double>() + 1e-12);

  cc_count_result_free(a);
  cc_count_result_free(b);
  cc_count_result_free(ncp);
  cc_dataset_free(d);
  cc_dataset_free(reloaded);
  cc_model_free(m);
  cc_model_free(back);
  cc_model_free(nullptr);
  cc_dataset_free(nullptr);
  cc_count_result_free(nullptr);
}

TEST_CASE("training through the C interface") {
  cc_dataset* d = synth(8, 64, 10, 2);
  const json cfg = {{"epochs", 1},
                    {"batch_size", 4},
                    {"val_fraction", 0.25},
                    {"seed", 1},
                    {"arch", {{"preset", "tiny"}}}};
  cc_model *a = nullptr, *b = nullptr;
  char *ra = nullptr, *rb = nullptr;
  REQUIRE(cc_train(cfg.dump().c_str(), nullptr, d, nullptr, &a, &ra) == CC_OK);
  REQUIRE(cc_train(cfg.dump().c_str(), nullptr, d, nullptr, &b, &rb) == CC_OK);
  const json ja = take_json(ra), jb = take_json(rb);
  CHECK(ja.at("epochs").at(0).at("val") == jb.at("epochs").at(0).at("val"));
  CHECK(ja.at("total_steps") == 2);

  cc_model* resumed = nullptr;
  json more = cfg;
  more["epochs"] = 2;
  REQUIRE(cc_train(more.dump().c_str(), nullptr, d, a, &resumed, nullptr) == CC_OK);
  char* info = nullptr;
  REQUIRE(cc_model_info(resumed, &info) == CC_OK);
  CHECK(take_json(info).at("epochs_completed") == 2);

  json bad = cfg;
  bad["arch"] = {{"preset", "tiny"}, {"base_channels", 8}};
  cc_model* mismatch = nullptr;
  CHECK(cc_train(bad.dump().c_str(), nullptr, d, a, &mismatch, nullptr) == CC_ERR_TRAINING);
  CHECK(cc_train(R"({"epochs": 0})", nullptr, d, nullptr, &mismatch, nullptr) == CC_ERR_CONFIG);

  cc_model_free(a);
  cc_model_free(b);
  cc_model_free(resumed);
  cc_dataset_free(d);
}

TEST_CASE("count an image file with artefacts") {
  TempDir dir;
  cc_dataset* d = synth(1, 150, 5, 9);
  char* manifest = nullptr;
  REQUIRE(cc_dataset_write(d, dir.path.string().c_str(), &manifest) == CC_OK);
  cc_string_free(manifest);
  cc_model* m = nullptr;
  REQUIRE(cc_model_init(R"({"preset": "tiny"})", 1, &m) == CC_OK);
  const fs::path image = dir.path / "images" / "synth_000000.png";
  REQUIRE(fs::exists(image));
  cc_count_result* r = nullptr;
  const fs::path out = dir.path / "out";
  REQUIRE(cc_count_image_file(m, image.string().c_str(), nullptr, out.string().c_str(), &r) == CC_OK);
  CHECK(fs::exists(out / "synth_000000_report.json"));
  CHECK(fs::exists(out / "synth_000000_overlay.png"));
  CHECK(cc_count_image_file(m, (dir.path / "missing.png").string().c_str(), nullptr, nullptr, &r) ==
        CC_ERR_IO);
  CHECK(cc_count_image_file(m, image.string().c_str(), R"({"routing": "gt_labels"})", nullptr, &r) ==
        CC_ERR_ARGUMENT);

  size_t written = 0;
  const fs::path prm_out = dir.path / "prm";
  REQUIRE(cc_prm_dump(image.string().c_str(), CC_HCP, nullptr, prm_out.string().c_str(), &written) == CC_OK);
  CHECK(written == 4);
  CHECK(cc_prm_dump(image.string().c_str(), 7, nullptr, prm_out.string().c_str(), &written) == CC_ERR_ARGUMENT);

  cc_count_result_free(r);
  cc_model_free(m);
  cc_dataset_free(d);
}

TEST_CASE("gradient check through the C interface") {
  char* report = nullptr;
  REQUIRE(cc_gradcheck(R"({"preset": "tiny", "samples_per_tensor": 0, "vacm_enabled": false})", &report) == CC_OK);
  const json j = take_json(report);
  CHECK(j.at("max_rel_error").get<double>() < 1e-3);
  for (const auto& g : j.at("groups")) CHECK(g.at("group") != "vacm");
  CHECK(cc_gradcheck(R"({"wibble": 1})", &report) == CC_ERR_ARGUMENT);
}
