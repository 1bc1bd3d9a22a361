#pragma once

// Synthetic demo data (not measured data). Every object has a latent vector z
// drawn uniformly from [-1, 1]^k plus a one-hot category code; its reflectance
// is an affine function of that latent and its embeddings are fixed random
// linear maps of it plus small noise, so a regression head can recover the
// teacher exactly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "proxrefl/dataset.hpp"
#include "proxrefl/sensor.hpp"

namespace proxrefl {

struct DemoConfig {
  std::uint64_t seed = 7;
  int train_objects[3] = {30, 6, 4};  // regular, irregular, transparent
  int test_objects[3] = {8, 3, 3};
  int embedding_dim = kDefaultEmbeddingDim;
  int views = kViewsPerObject;
  int latent_dim = 6;
  double embedding_noise = 0.002;  // per-entry std on top of the linear map
  double sweep_noise_rel = 0.01;
  int sweep_repeats = 200;
  double reply_noise = 0.06;  // std of the canned prompt replies around the truth
  SensorIntrinsics intrinsics = SensorIntrinsics::example();
};

struct DemoData {
  Manifest manifest;                     // true_alpha filled with the planted values
  std::map<std::string, double> planted;  // object_id -> planted alpha
  std::string replies;                   // canned prompt replies for the test objects
};

DemoData make_demo(const DemoConfig& config = {});

struct DemoFiles {
  std::filesystem::path manifest;
  std::filesystem::path sweeps;
  std::filesystem::path embeddings;
  std::filesystem::path replies;
  std::filesystem::path planted;
};

// Writes manifest.json (without true_alpha, so `calibrate` has to fill it in),
// sweeps.csv, embeddings.csv, replies.md and planted_alpha.csv into `dir`.
DemoFiles write_demo(const DemoData& data, const std::filesystem::path& dir);

}  // namespace proxrefl
