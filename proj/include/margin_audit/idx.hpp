#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "margin_audit/dataset.hpp"

namespace margin_audit {

// IDX container error; `offset` is the byte position where parsing failed.
class IdxFormatError : public std::runtime_error {
 public:
  IdxFormatError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count·rows·cols bytes
};

// max_items = 0 reads everything.
IdxImages read_idx_images(const std::filesystem::path& path, std::size_t max_items = 0);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path,
                                          std::size_t max_items = 0);

void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

// Pixels scaled to [0,1]; class count is max(label)+1 (at least 2).
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t max_items = 0);

}  // namespace margin_audit
