#include "margin_audit/idx.hpp"

#include <algorithm>
#include <fstream>
#include <string>

namespace margin_audit {

IdxFormatError::IdxFormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

namespace {

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IdxFormatError("cannot open " + path.string(), 0);
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
  }

  void read(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      throw IdxFormatError(path_.string() + ": truncated while reading " + what, offset_ + got);
    }
    offset_ += n;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IdxFormatError("cannot open " + path.string() + " for writing", 0);
  return out;
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path, std::size_t max_items) {
  Reader r(path);
  const auto magic = r.u32("magic");
  if (magic != kIdxImagesMagic) {
    throw IdxFormatError(path.string() + ": bad image magic number", 0);
  }
  IdxImages img;
  img.count = r.u32("item count");
  img.rows = r.u32("row count");
  img.cols = r.u32("column count");
  // The whole declared payload must be present, even when truncating.
  const std::size_t item = std::size_t{img.rows} * img.cols;
  std::vector<std::uint8_t> all(std::size_t{img.count} * item);
  r.read(all.data(), all.size(), "pixel payload");
  if (max_items != 0 && max_items < img.count) {
    img.count = static_cast<std::uint32_t>(max_items);
    all.resize(max_items * item);
  }
  img.pixels = std::move(all);
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path,
                                          std::size_t max_items) {
  Reader r(path);
  const auto magic = r.u32("magic");
  if (magic != kIdxLabelsMagic) {
    throw IdxFormatError(path.string() + ": bad label magic number", 0);
  }
  const auto count = r.u32("item count");
  std::vector<std::uint8_t> labels(count);
  r.read(labels.data(), labels.size(), "label payload");
  if (max_items != 0 && max_items < labels.size()) labels.resize(max_items);
  return labels;
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  if (images.pixels.size() != std::size_t{images.count} * images.rows * images.cols) {
    throw IdxFormatError("image payload size does not match header", 0);
  }
  auto out = open_out(path);
  put_u32(out, kIdxImagesMagic);
  put_u32(out, images.count);
  put_u32(out, images.rows);
  put_u32(out, images.cols);
  out.write(reinterpret_cast<const char*>(images.pixels.data()),
            static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  auto out = open_out(path);
  put_u32(out, kIdxLabelsMagic);
  put_u32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t max_items) {
  // Read full files first so count mismatches are detected before truncation.
  const auto images = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (images.count != labels.size()) {
    throw DatasetError("image count " + std::to_string(images.count) +
                       " does not match label count " + std::to_string(labels.size()));
  }
  const std::size_t n = max_items == 0 ? labels.size() : std::min(max_items, labels.size());
  const std::size_t item = std::size_t{images.rows} * images.cols;

  Dataset d;
  d.n_features = item;
  d.bounds.assign(item, FeatureBounds{0.0, 1.0});
  d.inputs.resize(n * item);
  for (std::size_t i = 0; i < n * item; ++i) d.inputs[i] = images.pixels[i] / 255.0;
  d.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  std::size_t max_label = 1;
  for (auto l : d.labels) max_label = std::max<std::size_t>(max_label, l);
  d.num_classes = max_label + 1;
  d.validate();
  return d;
}

}  // namespace margin_audit
