#include <png.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "metacl/clp.hpp"

namespace metacl {

namespace fs = std::filesystem;

ImagePool::ImagePool(std::size_t input_dim, std::vector<std::vector<std::vector<double>>> images,
                     std::vector<std::string> class_names)
    : dim_(input_dim), images_(std::move(images)), names_(std::move(class_names)) {
  if (names_.size() != images_.size()) throw std::invalid_argument("class name count mismatch");
}

std::optional<std::size_t> ImagePool::items_per_class(std::size_t cls) const {
  return images_.at(cls).size();
}

std::vector<Sample> ImagePool::draw(std::size_t cls, std::size_t count, Rng& rng,
                                    std::span<const std::size_t> excluded) const {
  const auto& imgs = images_.at(cls);
  std::vector<std::size_t> avail;
  for (std::size_t i = 0; i < imgs.size(); ++i)
    if (std::find(excluded.begin(), excluded.end(), i) == excluded.end()) avail.push_back(i);
  if (count > avail.size())
    throw DatasetError("class '" + names_.at(cls) + "' has " + std::to_string(avail.size()) +
                       " unused images, " + std::to_string(count) + " requested");
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, avail.size() - 1);
    std::swap(avail[i], avail[pick(rng)]);
  }
  std::vector<Sample> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = Sample{imgs[avail[i]], avail[i]};
  return out;
}

std::vector<double> load_image(const fs::path& path, std::size_t size) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DatasetError("cannot read image " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DatasetError("corrupt image " + path.string() + ": " + img.message);
  }
  const std::size_t w = img.width, h = img.height;
  if (w == 0 || h == 0) throw DatasetError("empty image " + path.string());
  // Area resampling: each output cell averages the source pixels it covers.
  std::vector<double> out(size * size, 0.0);
  for (std::size_t oy = 0; oy < size; ++oy) {
    const std::size_t y0 = oy * h / size, y1 = std::max(y0 + 1, (oy + 1) * h / size);
    for (std::size_t ox = 0; ox < size; ++ox) {
      const std::size_t x0 = ox * w / size, x1 = std::max(x0 + 1, (ox + 1) * w / size);
      double acc = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) acc += raw[y * w + x];
      const double avg = acc / static_cast<double>((y1 - y0) * (x1 - x0)) / 255.0;
      out[oy * size + ox] = 1.0 - avg;
    }
  }
  return out;
}

namespace {

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

// relative class dir -> sorted image paths
std::map<std::string, std::vector<fs::path>> index_tree(const fs::path& root) {
  std::map<std::string, std::vector<fs::path>> classes;
  const auto manifest = root / "manifest.txt";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const fs::path rel(line);
      classes[rel.parent_path().generic_string()].push_back(root / rel);
    }
  } else {
    if (!fs::is_directory(root)) throw DatasetError("dataset root not found: " + root.string());
    // Any directory holding images is a class, keyed by its path under root,
    // so both alphabet/character and images_background/alphabet/character work.
    for (const auto& f : fs::recursive_directory_iterator(root)) {
      if (!f.is_regular_file() || !is_image(f.path())) continue;
      classes[fs::relative(f.path().parent_path(), root).generic_string()].push_back(f.path());
    }
  }
  for (auto& [_, files] : classes) std::sort(files.begin(), files.end());
  return classes;
}

}  // namespace

Benchmark load_omniglot(const fs::path& root, const OmniglotOptions& options) {
  if (options.image_size == 0) throw std::invalid_argument("image_size must be >= 1");
  const auto tree = index_tree(root);
  const std::size_t needed = options.train_classes + options.test_classes;
  if (tree.size() < needed)
    throw DatasetError("dataset at " + root.string() + " has " + std::to_string(tree.size()) +
                       " classes; split requires " + std::to_string(needed));
  std::vector<std::vector<std::vector<double>>> images;
  std::vector<std::string> names;
  for (const auto& [name, files] : tree) {
    if (names.size() == needed) break;
    if (files.empty()) throw DatasetError("class '" + name + "' has no images");
    auto& imgs = images.emplace_back();
    for (const auto& f : files) imgs.push_back(load_image(f, options.image_size));
    names.push_back(name);
  }
  auto pool = std::make_shared<ImagePool>(options.image_size * options.image_size, std::move(images),
                                          std::move(names));
  Benchmark b;
  for (auto* d : {&b.meta_train, &b.meta_test}) {
    d->pool = pool;
    d->classes_per_task = options.classes_per_task;
    d->shots = options.shots;
  }
  b.meta_train.classes.resize(options.train_classes);
  std::iota(b.meta_train.classes.begin(), b.meta_train.classes.end(), 0);
  b.meta_test.classes.resize(options.test_classes);
  std::iota(b.meta_test.classes.begin(), b.meta_test.classes.end(), options.train_classes);
  b.meta_train.name = "omniglot/meta-train";
  b.meta_test.name = "omniglot/meta-test";
  return b;
}

TaskDistribution load_omniglot_pool(const fs::path& root, Split split, const OmniglotOptions& options) {
  auto b = load_omniglot(root, options);
  return split == Split::MetaTrain ? b.meta_train : b.meta_test;
}

}  // namespace metacl
