#pragma once

// Dataset provisioning: synthetic Gaussian blobs, IDX ingestion, client
// partitioning and backdoor-trigger poisoning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fedosd/error.hpp"
#include "fedosd/nn.hpp"
#include "fedosd/random.hpp"

namespace fedosd {

/// Spatial layout of a feature row. rows == 0 means a flat feature vector.
struct ImageShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  bool is_image() const { return rows > 0 && cols > 0; }
  bool operator==(const ImageShape&) const = default;

  /// Square layout when `dim` is a perfect square, flat otherwise.
  static ImageShape for_dim(std::size_t dim) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
    if (side * side == dim && side > 0) return {side, side};
    return {};
  }
};

struct FullDataset {
  Batch train;
  Batch test;
  std::size_t num_classes = 0;
  ImageShape shape;
};

struct ClientDataset {
  std::size_t client_id = 0;
  Batch train;
  Batch test;
  std::vector<bool> poisoned_mask;          // one flag per train row
  std::vector<std::size_t> train_indices;   // rows of the source train set
  std::vector<std::size_t> test_indices;    // rows of the source test set
  std::vector<Label> classes;               // classes assigned by the partitioner
};

struct BlobSpec {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t dim = 64;
  double spread = 0.1;
};

/// Class c is centred on a point drawn uniformly from [0, 0.5)^dim, leaving
/// headroom below the default trigger intensity of 1.0. Each class is split
/// 80/20 into train/test, in generation order.
inline FullDataset generate_blobs(const BlobSpec& spec, Rng& rng) {
  if (spec.classes < 2) throw ConfigError("blobs.classes must be >= 2");
  if (spec.per_class < 2) throw ConfigError("blobs.per_class must be >= 2");
  if (spec.dim < 1) throw ConfigError("blobs.dim must be >= 1");
  if (spec.spread < 0.0) throw ConfigError("blobs.spread must be >= 0");

  std::vector<std::vector<double>> centers(spec.classes, std::vector<double>(spec.dim));
  for (auto& c : centers)
    for (double& x : c) x = rng.uniform(0.0, 0.5);

  const std::size_t n_train = std::max<std::size_t>(
      1, std::min(spec.per_class - 1,
                  static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(spec.per_class)))));
  const std::size_t n_test = spec.per_class - n_train;

  FullDataset ds;
  ds.num_classes = spec.classes;
  ds.shape = ImageShape::for_dim(spec.dim);
  ds.train.features = Matrix(spec.classes * n_train, spec.dim);
  ds.test.features = Matrix(spec.classes * n_test, spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      const bool is_train = s < n_train;
      Batch& dst = is_train ? ds.train : ds.test;
      const std::size_t row = is_train ? c * n_train + s : c * n_test + (s - n_train);
      auto r = dst.features.row(row);
      for (std::size_t j = 0; j < spec.dim; ++j) r[j] = centers[c][j] + spec.spread * rng.normal();
    }
    ds.train.labels.insert(ds.train.labels.end(), n_train, static_cast<Label>(c));
    ds.test.labels.insert(ds.test.labels.end(), n_test, static_cast<Label>(c));
  }
  return ds;
}

// --- IDX ------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxData {
  Batch batch;
  ImageShape shape;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at,
                               const std::string& field) {
  if (buf.size() < at + 4) throw IngestionError(field, "file truncated before header field");
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) |
         (std::uint32_t{buf[at + 2]} << 8) | std::uint32_t{buf[at + 3]};
}

}  // namespace detail

/// Big-endian IDX image/label pair. Pixels are scaled from [0,255] to [0,1].
inline IdxData load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lbl = detail::read_file(labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, 0, "images.magic");
  if (img_magic != kIdxImagesMagic)
    throw IngestionError("images.magic", "expected 0x00000803 in " + images_path);
  const std::uint32_t n_img = detail::read_be32(img, 4, "images.count");
  const std::uint32_t rows = detail::read_be32(img, 8, "images.rows");
  const std::uint32_t cols = detail::read_be32(img, 12, "images.cols");

  const std::uint32_t lbl_magic = detail::read_be32(lbl, 0, "labels.magic");
  if (lbl_magic != kIdxLabelsMagic)
    throw IngestionError("labels.magic", "expected 0x00000801 in " + labels_path);
  const std::uint32_t n_lbl = detail::read_be32(lbl, 4, "labels.count");

  if (n_img != n_lbl)
    throw IngestionError("labels.count", std::to_string(n_lbl) + " labels for " +
                                             std::to_string(n_img) + " images");
  const std::size_t pixels = std::size_t{rows} * cols;
  if (img.size() < 16 + std::size_t{n_img} * pixels)
    throw IngestionError("images.data", "file truncated: expected " + std::to_string(n_img) +
                                            " images of " + std::to_string(pixels) + " bytes");
  if (lbl.size() < 8 + std::size_t{n_lbl})
    throw IngestionError("labels.data", "file truncated: expected " + std::to_string(n_lbl) + " labels");

  IdxData out;
  out.shape = {rows, cols};
  out.batch.features = Matrix(n_img, pixels);
  for (std::size_t i = 0; i < std::size_t{n_img} * pixels; ++i)
    out.batch.features.data[i] = static_cast<double>(img[16 + i]) / 255.0;
  out.batch.labels.resize(n_lbl);
  for (std::size_t i = 0; i < n_lbl; ++i) out.batch.labels[i] = lbl[8 + i];
  return out;
}

inline FullDataset load_idx_dataset(const std::string& train_images, const std::string& train_labels,
                                    const std::string& test_images, const std::string& test_labels) {
  IdxData train = load_idx(train_images, train_labels);
  IdxData test = load_idx(test_images, test_labels);
  if (!(train.shape == test.shape)) throw IngestionError("images.rows", "train/test image shapes differ");
  FullDataset ds;
  ds.shape = train.shape;
  ds.train = std::move(train.batch);
  ds.test = std::move(test.batch);
  Label mx = 0;
  for (Label y : ds.train.labels) mx = std::max(mx, y);
  for (Label y : ds.test.labels) mx = std::max(mx, y);
  ds.num_classes = std::size_t{mx} + 1;
  if (ds.num_classes < 2) throw ConfigError("IDX dataset has fewer than 2 classes");
  return ds;
}

// --- partitioning ---------------------------------------------------------

enum class PartitionScheme { Pathological, Iid };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::Pathological;
  int percent = 50;  // Pathological only: 10, 20 or 50
  std::size_t clients = 4;
};

/// Classes per client under Pat-k: ceil(k% * C).
inline std::size_t classes_per_client(const PartitionSpec& spec, std::size_t num_classes) {
  return (static_cast<std::size_t>(spec.percent) * num_classes + 99) / 100;
}

namespace detail {

// Splits `idx` into `parts` contiguous chunks whose sizes differ by at most 1.
inline std::vector<std::vector<std::size_t>> split_even(const std::vector<std::size_t>& idx,
                                                        std::size_t parts) {
  std::vector<std::vector<std::size_t>> out(parts);
  const std::size_t base = idx.size() / parts, extra = idx.size() % parts;
  std::size_t at = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t n = base + (p < extra ? 1 : 0);
    out[p].assign(idx.begin() + static_cast<std::ptrdiff_t>(at),
                  idx.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> indices_by_class(const Batch& b, std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> out(num_classes);
  for (std::size_t i = 0; i < b.size(); ++i) out[b.labels[i]].push_back(i);
  return out;
}

}  // namespace detail

/// Pathological Pat-k: classes are dealt round-robin from a shuffled class
/// order, so every class is held by exactly m * k_c / C clients, and each
/// class's samples are split evenly among its holders. IID: shuffle, then
/// split evenly.
inline std::vector<ClientDataset> partition(const FullDataset& ds, const PartitionSpec& spec, Rng& rng) {
  const std::size_t m = spec.clients;
  const std::size_t c = ds.num_classes;
  if (m < 2) throw ConfigError("partition.clients must be >= 2");
  for (Label y : ds.train.labels)
    if (y >= c) throw ConfigError("train label out of range");

  std::vector<ClientDataset> clients(m);
  for (std::size_t i = 0; i < m; ++i) clients[i].client_id = i;

  if (spec.scheme == PartitionScheme::Iid) {
    const auto train_parts = detail::split_even(rng.permutation(ds.train.size()), m);
    const auto test_parts = detail::split_even(rng.permutation(ds.test.size()), m);
    for (std::size_t i = 0; i < m; ++i) {
      clients[i].train_indices = train_parts[i];
      clients[i].test_indices = test_parts[i];
      for (std::size_t k = 0; k < c; ++k) clients[i].classes.push_back(static_cast<Label>(k));
    }
  } else {
    if (spec.percent != 10 && spec.percent != 20 && spec.percent != 50)
      throw ConfigError("partition.percent must be 10, 20 or 50");
    const std::size_t kc = classes_per_client(spec, c);
    if (kc == 0 || kc > c) throw ConfigError("partition leaves clients without classes");
    if ((m * kc) % c != 0)
      throw ConfigError("infeasible Pat-" + std::to_string(spec.percent) + ": " + std::to_string(m) +
                        " clients x " + std::to_string(kc) + " classes cannot cover " +
                        std::to_string(c) + " classes evenly");
    const auto order = rng.permutation(c);
    std::vector<std::vector<std::size_t>> holders(c);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < kc; ++j) {
        const std::size_t cls = order[(i * kc + j) % c];
        clients[i].classes.push_back(static_cast<Label>(cls));
        holders[cls].push_back(i);
      }
      std::sort(clients[i].classes.begin(), clients[i].classes.end());
    }
    const auto train_by_class = detail::indices_by_class(ds.train, c);
    const auto test_by_class = detail::indices_by_class(ds.test, c);
    for (std::size_t cls = 0; cls < c; ++cls) {
      auto tr = train_by_class[cls];
      auto te = test_by_class[cls];
      rng.shuffle(tr);
      rng.shuffle(te);
      const auto tr_parts = detail::split_even(tr, holders[cls].size());
      const auto te_parts = detail::split_even(te, holders[cls].size());
      for (std::size_t h = 0; h < holders[cls].size(); ++h) {
        auto& cl = clients[holders[cls][h]];
        cl.train_indices.insert(cl.train_indices.end(), tr_parts[h].begin(), tr_parts[h].end());
        cl.test_indices.insert(cl.test_indices.end(), te_parts[h].begin(), te_parts[h].end());
      }
    }
  }

  for (auto& cl : clients) {
    std::sort(cl.train_indices.begin(), cl.train_indices.end());
    std::sort(cl.test_indices.begin(), cl.test_indices.end());
    cl.train = ds.train.subset(cl.train_indices);
    cl.test = ds.test.subset(cl.test_indices);
    cl.poisoned_mask.assign(cl.train.size(), false);
  }
  return clients;
}

// --- poisoning ------------------------------------------------------------

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

struct TriggerSpec {
  std::size_t patch_size = 3;
  double patch_value = 1.0;
  Corner corner = Corner::BottomRight;
  std::size_t label_shift = 5;
};

/// Feature indices covered by the patch. On a flat layout the patch is the
/// last patch_size^2 coordinates.
inline std::vector<std::size_t> trigger_pixels(const TriggerSpec& trig, const ImageShape& shape,
                                               std::size_t dim) {
  const std::size_t p = trig.patch_size;
  if (p == 0) throw ConfigError("trigger.patch_size must be >= 1");
  std::vector<std::size_t> px;
  if (shape.is_image()) {
    if (shape.rows * shape.cols != dim) throw ConfigError("image shape does not match feature dim");
    if (p > shape.rows || p > shape.cols) throw ConfigError("trigger patch does not fit the image");
    const bool bottom = trig.corner == Corner::BottomLeft || trig.corner == Corner::BottomRight;
    const bool right = trig.corner == Corner::TopRight || trig.corner == Corner::BottomRight;
    const std::size_t r0 = bottom ? shape.rows - p : 0;
    const std::size_t c0 = right ? shape.cols - p : 0;
    for (std::size_t r = r0; r < r0 + p; ++r)
      for (std::size_t c = c0; c < c0 + p; ++c) px.push_back(r * shape.cols + c);
  } else {
    if (p * p > dim) throw ConfigError("feature vector too short for the trigger patch");
    for (std::size_t k = dim - p * p; k < dim; ++k) px.push_back(k);
  }
  return px;
}

inline Label shifted_label(Label y, const TriggerSpec& trig, std::size_t num_classes) {
  return static_cast<Label>((std::size_t{y} + trig.label_shift) % num_classes);
}

/// Stamps the trigger on every row and shifts every label.
inline Batch apply_trigger(const Batch& b, const TriggerSpec& trig, const ImageShape& shape,
                           std::size_t num_classes) {
  const auto px = trigger_pixels(trig, shape, b.dim());
  Batch out = b;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto r = out.features.row(i);
    for (std::size_t k : px) r[k] = trig.patch_value;
    out.labels[i] = shifted_label(out.labels[i], trig, num_classes);
  }
  return out;
}

struct PoisonResult {
  ClientDataset client;
  Batch trigger_test;  // held-out test rows, patched and label-shifted
};

/// Patches floor(fraction * N) randomly chosen train rows and shifts their
/// labels by label_shift (mod C).
inline PoisonResult poison(const ClientDataset& client, const TriggerSpec& trig, double fraction,
                           const ImageShape& shape, std::size_t num_classes, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("trigger.fraction must lie in (0, 1]");
  if (trig.label_shift < 1 || trig.label_shift >= num_classes)
    throw ConfigError("trigger.label_shift must lie in [1, " + std::to_string(num_classes) + ")");
  const auto px = trigger_pixels(trig, shape, client.train.dim());

  PoisonResult out{client, apply_trigger(client.test, trig, shape, num_classes)};
  const std::size_t n = client.train.size();
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  const auto order = rng.permutation(n);
  out.client.poisoned_mask.assign(n, false);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = order[k];
    auto r = out.client.train.features.row(i);
    for (std::size_t p : px) r[p] = trig.patch_value;
    out.client.train.labels[i] = shifted_label(out.client.train.labels[i], trig, num_classes);
    out.client.poisoned_mask[i] = true;
  }
  return out;
}

}  // namespace fedosd
