#pragma once

// Dataset plumbing: benchmark split construction over image manifests,
// procedural fine-grained synthetic data, split validation, and the on-disk
// formats (image store, manifest, split csv).

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "facegcd/common.hpp"
#include "facegcd/tensor.hpp"

namespace facegcd {

enum class SplitPart { labeled_train, unlabeled_train, test };

inline const char* split_part_name(SplitPart p) {
  switch (p) {
    case SplitPart::labeled_train: return "labeled_train";
    case SplitPart::unlabeled_train: return "unlabeled_train";
    case SplitPart::test: return "test";
  }
  return "?";
}

inline SplitPart split_part_from(const std::string& s) {
  if (s == "labeled_train") return SplitPart::labeled_train;
  if (s == "unlabeled_train") return SplitPart::unlabeled_train;
  if (s == "test") return SplitPart::test;
  throw DataError("unknown split partition: " + s);
}

struct Sample {
  std::string id;         // opaque key; unique within a split
  std::string image_ref;  // "<store>#<index>"
  int class_id = -1;
  bool labeled = false;
  SplitPart split = SplitPart::unlabeled_train;
};

struct ManifestEntry {
  std::string image_ref;
  int class_id = -1;
};

struct SplitConfig {
  int min_images_per_id = 1;
  int num_ids = 0;
  double known_fraction = 0.5;
  double labeled_fraction = 0.5;  // of each known ID's train images
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct GFDSplit {
  std::vector<int> known_ids;
  std::vector<int> unknown_ids;
  std::vector<Sample> labeled_train;
  std::vector<Sample> unlabeled_train;
  std::vector<Sample> test;
  std::uint64_t seed = 0;

  std::vector<const Sample*> train_view() const {
    std::vector<const Sample*> v;
    v.reserve(labeled_train.size() + unlabeled_train.size());
    for (const auto& s : labeled_train) v.push_back(&s);
    for (const auto& s : unlabeled_train) v.push_back(&s);
    return v;
  }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// ---------------------------------------------------------------------------
// Split construction
// ---------------------------------------------------------------------------

inline GFDSplit build_gfd_split(const std::vector<ManifestEntry>& manifest,
                                const SplitConfig& cfg) {
  if (manifest.empty()) throw DataError("build_gfd_split: empty manifest");
  if (cfg.num_ids < 2) throw ConfigError("build_gfd_split: num_ids must be >= 2");
  for (double r : {cfg.known_fraction, cfg.labeled_fraction, cfg.test_fraction})
    if (!(r > 0.0 && r < 1.0))
      throw ConfigError("build_gfd_split: fractions must lie in (0,1)");
  if (cfg.min_images_per_id < 1) throw ConfigError("build_gfd_split: min_images_per_id >= 1");

  std::map<int, std::vector<const ManifestEntry*>> by_class;
  for (const auto& e : manifest) {
    if (e.class_id < 0) throw DataError("build_gfd_split: negative class_id");
    by_class[e.class_id].push_back(&e);
  }
  std::vector<int> retained;
  for (const auto& [cid, entries] : by_class)
    if (static_cast<int>(entries.size()) >= cfg.min_images_per_id) retained.push_back(cid);
  if (static_cast<int>(retained.size()) < cfg.num_ids)
    throw DataError("build_gfd_split: only " + std::to_string(retained.size()) +
                    " ids pass the min-image filter, need " + std::to_string(cfg.num_ids));

  Rng id_rng = make_rng(cfg.seed, "split-ids");
  std::shuffle(retained.begin(), retained.end(), id_rng);
  retained.resize(static_cast<size_t>(cfg.num_ids));
  const int n_known = static_cast<int>(cfg.known_fraction * cfg.num_ids);

  GFDSplit out;
  out.seed = cfg.seed;
  out.known_ids.assign(retained.begin(), retained.begin() + n_known);
  out.unknown_ids.assign(retained.begin() + n_known, retained.end());
  std::sort(out.known_ids.begin(), out.known_ids.end());
  std::sort(out.unknown_ids.begin(), out.unknown_ids.end());
  std::set<int> known_set(out.known_ids.begin(), out.known_ids.end());

  std::vector<int> selected = retained;
  std::sort(selected.begin(), selected.end());
  for (int cid : selected) {
    const auto& entries = by_class[cid];
    const int n = static_cast<int>(entries.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng = make_rng(cfg.seed, "split-per-id", static_cast<std::uint64_t>(cid));
    std::shuffle(order.begin(), order.end(), rng);

    const int n_test = std::max(1, static_cast<int>(cfg.test_fraction * n));
    const int n_train = n - n_test;
    const bool known = known_set.count(cid) != 0;
    const int n_labeled = known ? static_cast<int>(cfg.labeled_fraction * n_train) : 0;

    for (int k = 0; k < n; ++k) {
      const ManifestEntry* e = entries[static_cast<size_t>(order[static_cast<size_t>(k)])];
      Sample s;
      s.id = e->image_ref;
      s.image_ref = e->image_ref;
      s.class_id = cid;
      if (k < n_test) {
        s.split = SplitPart::test;
        out.test.push_back(std::move(s));
      } else if (k < n_test + n_labeled) {
        s.split = SplitPart::labeled_train;
        s.labeled = true;
        out.labeled_train.push_back(std::move(s));
      } else {
        s.split = SplitPart::unlabeled_train;
        out.unlabeled_train.push_back(std::move(s));
      }
    }
  }
  return out;
}

inline ValidationReport validate_split(const GFDSplit& s) {
  ValidationReport rep;
  std::set<int> known(s.known_ids.begin(), s.known_ids.end());
  std::set<int> unknown(s.unknown_ids.begin(), s.unknown_ids.end());
  for (int cid : known)
    if (unknown.count(cid))
      rep.violations.push_back("overlapping ID sets: class " + std::to_string(cid) +
                               " is both known and unknown");
  if (s.labeled_train.empty()) rep.violations.push_back("empty partition: labeled_train");
  if (s.unlabeled_train.empty()) rep.violations.push_back("empty partition: unlabeled_train");
  if (s.test.empty()) rep.violations.push_back("empty partition: test");

  std::map<std::string, int> seen;
  auto check = [&](const std::vector<Sample>& part, SplitPart expect) {
    for (const auto& smp : part) {
      if (smp.class_id < 0)
        rep.violations.push_back("negative class_id on sample " + smp.id);
      if (smp.split != expect)
        rep.violations.push_back("sample " + smp.id + " carries wrong partition tag");
      if (smp.labeled) {
        if (expect != SplitPart::labeled_train)
          rep.violations.push_back("labeled sample " + smp.id + " outside labeled_train");
        if (!known.count(smp.class_id))
          rep.violations.push_back("labeled sample " + smp.id + " has non-known class " +
                                   std::to_string(smp.class_id));
      }
      if (expect == SplitPart::labeled_train && !smp.labeled)
        rep.violations.push_back("unlabeled sample " + smp.id + " inside labeled_train");
      if (++seen[smp.id] == 2)
        rep.violations.push_back("sample " + smp.id + " appears in more than one partition");
    }
  };
  check(s.labeled_train, SplitPart::labeled_train);
  check(s.unlabeled_train, SplitPart::unlabeled_train);
  check(s.test, SplitPart::test);
  return rep;
}

// ---------------------------------------------------------------------------
// Image store
// ---------------------------------------------------------------------------

// Densely packed float32 images, all (channels, side, side), values in [0,1].
class ImageStore {
 public:
  ImageStore() = default;
  ImageStore(int side, int channels) : side_(side), channels_(channels) {}

  int side() const { return side_; }
  int channels() const { return channels_; }
  int count() const { return count_; }
  std::int64_t image_numel() const {
    return static_cast<std::int64_t>(channels_) * side_ * side_;
  }

  int add(const Tensor& img) {
    if (img.shape() != Shape{channels_, side_, side_})
      throw ShapeError("ImageStore::add: image shape mismatch");
    pixels_.insert(pixels_.end(), img.data(), img.data() + img.numel());
    return count_++;
  }

  Tensor image(int i) const {
    if (i < 0 || i >= count_) throw DataError("ImageStore: index out of range");
    const float* p = pixels_.data() + static_cast<std::int64_t>(i) * image_numel();
    return Tensor({channels_, side_, side_},
                  std::vector<float>(p, p + image_numel()));
  }

  const float* raw(int i) const { return pixels_.data() + static_cast<std::int64_t>(i) * image_numel(); }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image store: " + path);
    const char magic[4] = {'F', 'I', 'M', 'G'};
    f.write(magic, 4);
    write_u32(f, 1);
    write_u32(f, static_cast<std::uint32_t>(count_));
    write_u32(f, static_cast<std::uint32_t>(channels_));
    write_u32(f, static_cast<std::uint32_t>(side_));
    f.write(reinterpret_cast<const char*>(pixels_.data()),
            static_cast<std::streamsize>(pixels_.size() * sizeof(float)));
    if (!f) throw DataError("short write on image store: " + path);
  }

  static ImageStore load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open image store: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "FIMG")
      throw DataError("bad image store magic: " + path);
    const std::uint32_t version = read_u32(f);
    if (version != 1) throw DataError("unsupported image store version");
    const std::uint32_t count = read_u32(f);
    const std::uint32_t channels = read_u32(f);
    const std::uint32_t side = read_u32(f);
    ImageStore out(static_cast<int>(side), static_cast<int>(channels));
    out.count_ = static_cast<int>(count);
    out.pixels_.resize(static_cast<size_t>(count) * channels * side * side);
    f.read(reinterpret_cast<char*>(out.pixels_.data()),
           static_cast<std::streamsize>(out.pixels_.size() * sizeof(float)));
    if (!f) throw DataError("truncated image store: " + path);
    return out;
  }

 private:
  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw DataError("truncated image store header");
    return v;
  }

  int side_ = 0;
  int channels_ = 0;
  int count_ = 0;
  std::vector<float> pixels_;
};

// "store.bin#42" -> index 42. The store path before '#' is caller context.
inline int image_ref_index(const std::string& ref) {
  auto pos = ref.rfind('#');
  if (pos == std::string::npos) throw DataError("image_ref missing '#index': " + ref);
  return std::stoi(ref.substr(pos + 1));
}

// ---------------------------------------------------------------------------
// Synthetic fine-grained dataset
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  int num_ids = 0;
  int images_per_id = 0;
  int image_side = 32;
  double intra_class_jitter = 0.1;
  std::uint64_t seed = 0;
};

// Bilinear lookup with border clamp on a (C,S,S) image.
inline float bilinear_at(const float* img, int channels, int side, int c, float y, float x) {
  (void)channels;
  x = std::min(std::max(x, 0.0f), static_cast<float>(side - 1));
  y = std::min(std::max(y, 0.0f), static_cast<float>(side - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, side - 1);
  const int y1 = std::min(y0 + 1, side - 1);
  const float fx = x - static_cast<float>(x0);
  const float fy = y - static_cast<float>(y0);
  const float* ch = img + static_cast<std::int64_t>(c) * side * side;
  const float v00 = ch[y0 * side + x0];
  const float v01 = ch[y0 * side + x1];
  const float v10 = ch[y1 * side + x0];
  const float v11 = ch[y1 * side + x1];
  return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
}

namespace detail {

// One class prototype: layered gradient + soft blobs + faint stripes, all
// keyed by the class RNG so identities differ only in these parameters.
inline Tensor synth_prototype(int side, Rng& rng) {
  auto uni = [&rng](float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
  };
  Tensor img({3, side, side});
  float c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = uni(0.15f, 0.85f);
    c1[c] = uni(0.15f, 0.85f);
  }
  const float theta = uni(0.0f, 6.2831853f);
  const float ct = std::cos(theta), st = std::sin(theta);
  struct Blob {
    float cy, cx, r, col[3];
  };
  Blob blobs[6];
  for (auto& b : blobs) {
    b.cy = uni(0.15f, 0.85f) * static_cast<float>(side);
    b.cx = uni(0.15f, 0.85f) * static_cast<float>(side);
    b.r = uni(0.08f, 0.18f) * static_cast<float>(side);
    for (int c = 0; c < 3; ++c) b.col[c] = uni(0.0f, 1.0f);
  }
  const float freq = uni(2.0f, 6.0f) * 6.2831853f / static_cast<float>(side);
  const float phase = uni(0.0f, 6.2831853f);
  const float sdir = uni(0.0f, 6.2831853f);
  const float sc = std::cos(sdir), ss = std::sin(sdir);

  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const float t = 0.5f * (1.0f + (ct * (static_cast<float>(x) / side * 2 - 1) +
                                      st * (static_cast<float>(y) / side * 2 - 1)));
      const float tt = std::min(std::max(t, 0.0f), 1.0f);
      float px[3];
      for (int c = 0; c < 3; ++c) px[c] = c0[c] * (1 - tt) + c1[c] * tt;
      for (const auto& b : blobs) {
        const float dy = static_cast<float>(y) - b.cy;
        const float dx = static_cast<float>(x) - b.cx;
        const float w = 0.75f * std::exp(-(dx * dx + dy * dy) / (2.0f * b.r * b.r));
        for (int c = 0; c < 3; ++c) px[c] = px[c] * (1 - w) + b.col[c] * w;
      }
      const float stripe =
          0.08f * std::sin(freq * (sc * static_cast<float>(x) + ss * static_cast<float>(y)) + phase);
      for (int c = 0; c < 3; ++c) {
        float v = px[c] + stripe;
        img.at({c, y, x}) = std::min(std::max(v, 0.0f), 1.0f);
      }
    }
  return img;
}

inline Tensor synth_jitter(const Tensor& proto, int side, float j, Rng& rng) {
  auto uni = [&rng](float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
  };
  const float dx = uni(-3.0f * j, 3.0f * j);
  const float dy = uni(-3.0f * j, 3.0f * j);
  const float gain = 1.0f + uni(-0.25f * j, 0.25f * j);
  float ch_gain[3];
  for (int c = 0; c < 3; ++c) ch_gain[c] = 1.0f + uni(-0.1f * j, 0.1f * j);
  std::normal_distribution<float> noise(0.0f, 0.12f * j);
  Tensor img({3, side, side});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        float v = bilinear_at(proto.data(), 3, side, c, static_cast<float>(y) + dy,
                              static_cast<float>(x) + dx);
        v = v * gain * ch_gain[c];
        if (j > 0.0f) v += noise(rng);
        img.at({c, y, x}) = std::min(std::max(v, 0.0f), 1.0f);
      }
  return img;
}

}  // namespace detail

struct SyntheticDataset {
  ImageStore store;
  std::vector<ManifestEntry> manifest;
};

inline SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& cfg,
                                                   const std::string& ref_prefix = "synth") {
  if (cfg.num_ids < 2) throw ConfigError("generate_synthetic_dataset: num_ids must be >= 2");
  if (cfg.images_per_id < 1)
    throw ConfigError("generate_synthetic_dataset: images_per_id must be >= 1");
  if (cfg.image_side < 4) throw ConfigError("generate_synthetic_dataset: image_side too small");
  SyntheticDataset out;
  out.store = ImageStore(cfg.image_side, 3);
  const float j = static_cast<float>(cfg.intra_class_jitter);
  for (int cid = 0; cid < cfg.num_ids; ++cid) {
    Rng prng = make_rng(cfg.seed, "synth-proto", static_cast<std::uint64_t>(cid));
    Tensor proto = detail::synth_prototype(cfg.image_side, prng);
    for (int k = 0; k < cfg.images_per_id; ++k) {
      Rng jrng = make_rng(cfg.seed, "synth-jitter", static_cast<std::uint64_t>(cid),
                          static_cast<std::uint64_t>(k));
      Tensor img = detail::synth_jitter(proto, cfg.image_side, j, jrng);
      const int idx = out.store.add(img);
      out.manifest.push_back({ref_prefix + "#" + std::to_string(idx), cid});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and split files
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& m) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write manifest: " + path);
  f << "image_ref,class_id\n";
  for (const auto& e : m) f << e.image_ref << "," << e.class_id << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (first) {
      first = false;
      if (line.rfind("image_ref", 0) == 0) continue;
    }
    auto pos = line.rfind(',');
    if (pos == std::string::npos) throw DataError("malformed manifest line: " + line);
    out.push_back({line.substr(0, pos), std::stoi(line.substr(pos + 1))});
  }
  return out;
}

namespace detail {
inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}
inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}
}  // namespace detail

inline void write_split_csv(const std::string& path, const GFDSplit& s) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write split: " + path);
  f << "# facegcd split v1\n";
  f << "# seed = " << s.seed << "\n";
  f << "# known_ids = " << detail::join_ints(s.known_ids) << "\n";
  f << "# unknown_ids = " << detail::join_ints(s.unknown_ids) << "\n";
  f << "image_ref,class_id,partition\n";
  auto dump = [&f](const std::vector<Sample>& part) {
    for (const auto& smp : part)
      f << smp.image_ref << "," << smp.class_id << "," << split_part_name(smp.split) << "\n";
  };
  dump(s.labeled_train);
  dump(s.unlabeled_train);
  dump(s.test);
}

inline GFDSplit read_split_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open split: " + path);
  GFDSplit s;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      std::string val = line.substr(eq + 1);
      auto trim = [](std::string& x) {
        x.erase(0, x.find_first_not_of(" \t"));
        auto last = x.find_last_not_of(" \t");
        if (last != std::string::npos) x.erase(last + 1);
      };
      trim(key);
      trim(val);
      if (key == "seed") s.seed = std::stoull(val);
      else if (key == "known_ids") s.known_ids = detail::parse_ints(val);
      else if (key == "unknown_ids") s.unknown_ids = detail::parse_ints(val);
      continue;
    }
    if (line.rfind("image_ref", 0) == 0) continue;
    auto p2 = line.rfind(',');
    auto p1 = line.rfind(',', p2 - 1);
    if (p1 == std::string::npos || p2 == std::string::npos)
      throw DataError("malformed split line: " + line);
    Sample smp;
    smp.image_ref = line.substr(0, p1);
    smp.id = smp.image_ref;
    smp.class_id = std::stoi(line.substr(p1 + 1, p2 - p1 - 1));
    smp.split = split_part_from(line.substr(p2 + 1));
    smp.labeled = smp.split == SplitPart::labeled_train;
    switch (smp.split) {
      case SplitPart::labeled_train: s.labeled_train.push_back(std::move(smp)); break;
      case SplitPart::unlabeled_train: s.unlabeled_train.push_back(std::move(smp)); break;
      case SplitPart::test: s.test.push_back(std::move(smp)); break;
    }
  }
  return s;
}

}  // namespace facegcd
