#pragma once

// Split-structured datasets: directory-backed loading with a class->split
// manifest, and in-memory splits for generated data.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bml/core/common.hpp"
#include "bml/data/image.hpp"
#include "bml/data/image_io.hpp"

namespace bml::data {

enum class SplitRole { base, val, novel };

inline const char* role_name(SplitRole r) {
  switch (r) {
    case SplitRole::base: return "base";
    case SplitRole::val: return "val";
    case SplitRole::novel: return "novel";
  }
  return "?";
}

/// Either a file on disk or an already-decoded image.
struct ImageSource {
  std::string path;              // empty when in-memory
  std::shared_ptr<Image> mem;

  Image load(int target_size) const {
    Image img = mem ? *mem : read_image(path);
    if (img.h != target_size || img.w != target_size)
      img = resize_bilinear(img, target_size, target_size);
    return img;
  }
};

struct DatasetSplit {
  std::string name;
  SplitRole role = SplitRole::base;
  std::vector<std::string> classes;               // lexicographic
  std::vector<std::vector<ImageSource>> images;   // parallel to classes
  int image_size = 84;

  int n_classes() const { return static_cast<int>(classes.size()); }
  std::size_t n_images() const {
    std::size_t n = 0;
    for (const auto& c : images) n += c.size();
    return n;
  }
  void validate() const {
    check(classes.size() == images.size(), "split ", name, ": class/image table mismatch");
    for (std::size_t i = 0; i < classes.size(); ++i)
      check(!images[i].empty(), "split ", name, ": class ", classes[i], " has no images");
  }
};

struct DatasetBundle {
  DatasetSplit base, val, novel;

  void validate() const {
    base.validate();
    val.validate();
    novel.validate();
    auto overlap = [](const DatasetSplit& a, const DatasetSplit& b) {
      for (const auto& c : a.classes)
        if (std::find(b.classes.begin(), b.classes.end(), c) != b.classes.end())
          fail("class ", c, " appears in both ", a.name, " and ", b.name);
    };
    overlap(base, val);
    overlap(base, novel);
    overlap(val, novel);
  }
};

/// Loads `root/<split>/<class>/<image>.{png,jpg}`. The optional manifest is a
/// JSON object mapping class name -> split name; when given, every class found
/// on disk must be listed under the split it sits in.
inline DatasetBundle load_dataset(const std::string& root_path,
                                  const std::string& manifest_path = "",
                                  int image_size = 84) {
  namespace fs = std::filesystem;
  std::map<std::string, std::string> manifest;
  if (!manifest_path.empty()) {
    std::ifstream in(manifest_path);
    check(in.good(), "cannot open manifest ", manifest_path);
    nlohmann::json j;
    in >> j;
    for (auto& [cls, split] : j.items()) manifest[cls] = split.get<std::string>();
  }

  DatasetBundle bundle;
  auto load_split = [&](SplitRole role) {
    DatasetSplit split;
    split.name = role_name(role);
    split.role = role;
    split.image_size = image_size;
    const fs::path dir = fs::path(root_path) / split.name;
    check(fs::is_directory(dir), "missing split directory ", dir.string());
    std::vector<std::string> class_names;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) class_names.push_back(e.path().filename().string());
    std::sort(class_names.begin(), class_names.end());
    for (const auto& cls : class_names) {
      if (!manifest.empty()) {
        auto it = manifest.find(cls);
        check(it != manifest.end(), "class ", cls, " not in manifest");
        check(it->second == split.name, "manifest assigns class ", cls, " to ", it->second,
              " but it sits in ", split.name);
      }
      std::vector<ImageSource> srcs;
      std::vector<std::string> files;
      for (const auto& f : fs::directory_iterator(dir / cls)) {
        const std::string p = f.path().string();
        if (has_suffix(p, ".png") || has_suffix(p, ".jpg") || has_suffix(p, ".jpeg"))
          files.push_back(p);
      }
      std::sort(files.begin(), files.end());
      for (auto& p : files) srcs.push_back({p, nullptr});
      check(!srcs.empty(), "class ", cls, " in split ", split.name, " has no images");
      split.classes.push_back(cls);
      split.images.push_back(std::move(srcs));
    }
    return split;
  };

  bundle.base = load_split(SplitRole::base);
  bundle.val = load_split(SplitRole::val);
  bundle.novel = load_split(SplitRole::novel);
  bundle.validate();
  return bundle;
}

}  // namespace bml::data
