#include "proxrefl/demo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "proxrefl/calibration.hpp"
#include "proxrefl/csv.hpp"
#include "proxrefl/prompt.hpp"

namespace proxrefl {

namespace {

// Household objects grouped by category; the generator takes names in order.
const std::vector<std::string> kRegularNames = {
    "cereal box",    "milk carton",   "tissue box",     "coffee can",    "soup can",      "cookie box",
    "tea box",       "rice bag",      "notebook",       "paperback",     "shoe box",      "soap bar",
    "sponge",        "mug",           "plastic cup",    "tennis ball",   "baseball",      "rubber duck",
    "wooden block",  "toy car",       "eraser",         "stapler",       "tape roll",     "glue stick",
    "marker",        "highlighter",   "lunch box",      "pill bottle",   "shampoo bottle", "lotion tube",
    "energy drink",  "yogurt",        "canned tuna",    "chocolate bar", "cracker box",   "toothpaste box",
    "remote control", "smartphone"};
const std::vector<std::string> kIrregularNames = {"banana", "apple",        "stuffed toy", "brush",    "glove",
                                                  "towel",  "plastic bag",  "sneaker",     "headphones"};
const std::vector<std::string> kTransparentNames = {"water bottle", "glass jar",  "marbles",        "clear box",
                                                    "wine glass",   "plastic wrap", "ice cube tray"};

constexpr std::array<double, 3> kCategoryOffset = {0.05, 0.0, -0.1};
constexpr std::array<double, 3> kCategoryStiffness = {2.0, 1.0, 1.5};

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<double> linear_map(const std::vector<double>& matrix, const std::vector<double>& latent, int dim) {
  const auto k = latent.size();
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (std::size_t r = 0; r < out.size(); ++r) {
    for (std::size_t c = 0; c < k; ++c) out[r] += matrix[r * k + c] * latent[c];
  }
  return out;
}

// Nearest multiple of 10^-decimals, as the closest double to that decimal.
double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

}  // namespace

DemoData make_demo(const DemoConfig& config) {
  if (config.embedding_dim < 1 || config.views < 1 || config.latent_dim < 1) {
    throw UsageError("demo dimensions must be positive");
  }
  const std::array<const std::vector<std::string>*, 3> pools = {&kRegularNames, &kIrregularNames, &kTransparentNames};
  for (std::size_t c = 0; c < 3; ++c) {
    if (config.train_objects[c] < 0 || config.test_objects[c] < 0 ||
        static_cast<std::size_t>(config.train_objects[c] + config.test_objects[c]) > pools[c]->size()) {
      throw UsageError(fmt::format("demo supports at most {} {} objects", pools[c]->size(),
                                   to_string(static_cast<Category>(c))));
    }
  }

  std::mt19937_64 rng(sub_seed(config.seed, 0));
  const auto k = static_cast<std::size_t>(config.latent_dim) + 3;
  const auto dim = static_cast<std::size_t>(config.embedding_dim);

  // Teacher weights on z with |u|_1 = 0.35, so alpha stays inside (0, 1).
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> u(static_cast<std::size_t>(config.latent_dim));
  double l1 = 0.0;
  for (auto& v : u) {
    v = gauss(rng);
    l1 += std::abs(v);
  }
  for (auto& v : u) v *= 0.35 / l1;

  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  std::vector<double> image_map(dim * k);
  std::vector<double> text_map(dim * k);
  for (auto& v : image_map) v = gauss(rng) * scale;
  for (auto& v : text_map) v = gauss(rng) * scale;

  DemoData data;
  auto& m = data.manifest;
  m.description = fmt::format("Synthetic demo data (planted linear teacher, seed {}); not measured data", config.seed);
  m.embedding_dim = config.embedding_dim;
  m.files.sweeps = {"sweeps.csv"};
  m.files.embeddings = {"embeddings.csv"};

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> emb_noise(0.0, config.embedding_noise);
  std::normal_distribution<double> reply_noise(0.0, config.reply_noise);
  std::vector<EstimateReply> replies;
  int serial = 0;
  for (Split split : {Split::Train, Split::Test}) {
    for (std::size_t c = 0; c < 3; ++c) {
      const int count = split == Split::Train ? config.train_objects[c] : config.test_objects[c];
      const std::size_t first = split == Split::Train ? 0 : static_cast<std::size_t>(config.train_objects[c]);
      for (int i = 0; i < count; ++i) {
        ObjectRecord obj;
        obj.object_id = fmt::format("obj{:02d}", ++serial);
        obj.name = (*pools[c])[first + static_cast<std::size_t>(i)];
        obj.category = static_cast<Category>(c);
        obj.split = split;
        obj.stiffness_n_per_mm = kCategoryStiffness[c];

        std::vector<double> latent(k, 0.0);
        double alpha = 0.5 + kCategoryOffset[c];
        for (std::size_t j = 0; j < u.size(); ++j) {
          latent[j] = unit(rng);
          alpha += u[j] * latent[j];
        }
        latent[u.size() + c] = 1.0;
        obj.true_alpha = Reflectance(alpha);
        data.planted[obj.object_id] = alpha;

        const auto image_clean = linear_map(image_map, latent, config.embedding_dim);
        for (int v = 0; v < config.views; ++v) {
          EmbeddingVector e{obj.object_id, Modality::Image, v, image_clean};
          for (auto& x : e.values) x += emb_noise(rng);
          m.embeddings.push_back(std::move(e));
        }
        EmbeddingVector t{obj.object_id, Modality::Text, 0, linear_map(text_map, latent, config.embedding_dim)};
        for (auto& x : t.values) x += emb_noise(rng);
        m.embeddings.push_back(std::move(t));

        SweepConfig sweep;
        sweep.noise_rel = config.sweep_noise_rel;
        sweep.repeats = config.sweep_repeats;
        sweep.seed = sub_seed(config.seed, 1000 + static_cast<std::uint64_t>(serial));
        m.sweeps.push_back(simulate_sweep(config.intrinsics, *obj.true_alpha, sweep, obj.object_id));

        if (split == Split::Test) {
          EstimateReply r;
          r.name = obj.name;
          r.prediction = round_to(std::clamp(alpha + reply_noise(rng), 0.01, 1.0), 3);
          r.range_lo = round_to(std::max(0.0, r.prediction - 0.04), 2);
          r.range_hi = round_to(std::min(1.0, r.prediction + 0.04), 2);
          r.has_range = true;
          r.reason = fmt::format("Synthetic reply for the demo object '{}'.", obj.name);
          replies.push_back(std::move(r));
        }
        m.objects.push_back(std::move(obj));
      }
    }
  }
  data.replies = render_reply(replies);
  return data;
}

DemoFiles write_demo(const DemoData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DemoFiles files{dir / "manifest.json", dir / "sweeps.csv", dir / "embeddings.csv", dir / "replies.md",
                  dir / "planted_alpha.csv"};
  Manifest m = data.manifest;
  for (auto& o : m.objects) o.true_alpha.reset();
  save_manifest(m, files.manifest);
  save_sweeps(data.manifest.sweeps, files.sweeps);
  save_embeddings(data.manifest.embeddings, files.embeddings);
  csv::write_file_atomic(files.replies, data.replies);
  std::string planted = "object_id,alpha\n";
  for (const auto& [id, alpha] : data.planted) planted += fmt::format("{},{}\n", id, csv::format_double(alpha));
  csv::write_file_atomic(files.planted, planted);
  return files;
}

}  // namespace proxrefl
