#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segpost/common.hpp"

namespace segpost {

// Binary mask stored as a packed row-major bitset. Pixel (y, x) lives at bit
// y * width + x; bits past height * width in the last word are always zero.
class BinaryMask {
 public:
  using Word = std::uint64_t;
  static constexpr std::size_t kWordBits = 64;

  BinaryMask() = default;

  // All-background mask.
  BinaryMask(std::size_t height, std::size_t width)
      : height_(height), width_(width) {
    if (height == 0 || width == 0)
      throw DimensionMismatch("mask dimensions must be >= 1");
    words_.assign((height * width + kWordBits - 1) / kWordBits, 0);
  }

  // From one value per pixel, row-major; any nonzero value is foreground.
  BinaryMask(std::size_t height, std::size_t width,
             std::span<const std::uint8_t> bits)
      : BinaryMask(height, width) {
    if (bits.size() != height * width)
      throw DimensionMismatch("mask bit count " + std::to_string(bits.size()) +
                              " != " + std::to_string(height) + "x" +
                              std::to_string(width));
    for (std::size_t p = 0; p < bits.size(); ++p)
      if (bits[p]) words_[p / kWordBits] |= Word{1} << (p % kWordBits);
  }

  static BinaryMask filled(std::size_t height, std::size_t width) {
    BinaryMask m(height, width);
    const std::size_t n = height * width;
    for (std::size_t w = 0; w < m.words_.size(); ++w) m.words_[w] = ~Word{0};
    if (n % kWordBits) m.words_.back() = (Word{1} << (n % kWordBits)) - 1;
    return m;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return height_ * width_; }
  std::span<const Word> words() const { return words_; }

  bool at(std::size_t y, std::size_t x) const { return bit(y * width_ + x); }
  bool bit(std::size_t p) const {
    return (words_[p / kWordBits] >> (p % kWordBits)) & Word{1};
  }

  void set(std::size_t y, std::size_t x, bool on = true) {
    const std::size_t p = y * width_ + x;
    const Word m = Word{1} << (p % kWordBits);
    if (on)
      words_[p / kWordBits] |= m;
    else
      words_[p / kWordBits] &= ~m;
  }

  std::vector<std::uint8_t> to_bits() const {
    std::vector<std::uint8_t> out(size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = bit(p) ? 1 : 0;
    return out;
  }

  bool same_shape(const BinaryMask& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Word> words_;
};

// Row-major run-length encoding: alternating background/foreground runs,
// starting with background. Only the first count may be zero.
class RleMask {
 public:
  using Count = std::uint32_t;

  RleMask() = default;
  RleMask(std::size_t height, std::size_t width, std::vector<Count> counts)
      : height_(height), width_(width), counts_(std::move(counts)) {
    if (height == 0 || width == 0)
      throw MalformedInput("rle dimensions must be >= 1");
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      if (i > 0 && counts_[i] == 0)
        throw MalformedInput("rle has an interior zero run at position " +
                             std::to_string(i));
      total += counts_[i];
    }
    if (total != static_cast<std::uint64_t>(height) * width)
      throw MalformedInput("rle counts sum to " + std::to_string(total) +
                           ", expected " + std::to_string(height * width));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  const std::vector<Count>& counts() const { return counts_; }

  friend bool operator==(const RleMask&, const RleMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Count> counts_;
};

// Inclusive pixel-index box.
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  long long width() const { return static_cast<long long>(x_max) - x_min + 1; }
  long long height() const { return static_cast<long long>(y_max) - y_min + 1; }
  long long area() const { return width() * height(); }

  friend bool operator==(const Box&, const Box&) = default;
};

// Dense n x n overlap matrix, strictly upper triangular: entry (i, j) is the
// IoU of masks i and j for i < j and zero otherwise.
class IoUMatrix {
 public:
  IoUMatrix() = default;
  explicit IoUMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

  // Validating constructor for externally supplied matrices.
  IoUMatrix(std::size_t n, std::vector<double> values)
      : n_(n), values_(std::move(values)) {
    if (values_.size() != n * n)
      throw DimensionMismatch("iou matrix needs n*n values");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values_[i * n + j];
        if (!(v >= 0.0 && v <= 1.0))
          throw MalformedInput("iou entry outside [0,1]");
        if (i >= j && v != 0.0)
          throw MalformedInput("iou matrix must be strictly upper triangular");
      }
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_[i * n_ + j];
  }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * n_, n_};
  }
  std::span<const double> values() const { return values_; }

  // Symmetric lookup, for callers that hold an unordered pair.
  double pair(std::size_t a, std::size_t b) const {
    return a < b ? (*this)(a, b) : (*this)(b, a);
  }

  friend bool operator==(const IoUMatrix&, const IoUMatrix&) = default;

 private:
  friend struct IoUMatrixWriter;

  double& at(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }

  std::size_t n_ = 0;
  std::vector<double> values_;
};

// Write access for the builders in this header.
struct IoUMatrixWriter {
  static double& at(IoUMatrix& m, std::size_t i, std::size_t j) {
    return m.at(i, j);
  }
};

namespace detail {

inline std::size_t popcount_and(std::span<const BinaryMask::Word> a,
                                std::span<const BinaryMask::Word> b) {
  std::size_t c = 0;
  for (std::size_t w = 0; w < a.size(); ++w) c += std::popcount(a[w] & b[w]);
  return c;
}

// Shared by the scalar and matrix paths so both produce identical doubles.
inline double iou_from_counts(std::size_t inter, std::size_t area_a,
                              std::size_t area_b) {
  const std::size_t uni = area_a + area_b - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b))
    throw DimensionMismatch(
        "mask shapes differ: " + std::to_string(a.height()) + "x" +
        std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
        std::to_string(b.width()));
}

}  // namespace detail

inline RleMask rle_encode(const BinaryMask& mask) {
  std::vector<RleMask::Count> counts;
  bool current = false;
  RleMask::Count run = 0;
  const std::size_t n = mask.size();
  for (std::size_t p = 0; p < n; ++p) {
    const bool b = mask.bit(p);
    if (b != current) {
      counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  counts.push_back(run);
  return RleMask(mask.height(), mask.width(), std::move(counts));
}

inline BinaryMask rle_decode(const RleMask& rle) {
  BinaryMask mask(rle.height(), rle.width());
  std::size_t p = 0;
  bool fg = false;
  for (const auto c : rle.counts()) {
    if (fg)
      for (std::size_t k = 0; k < c; ++k, ++p)
        mask.set(p / rle.width(), p % rle.width());
    else
      p += c;
    fg = !fg;
  }
  return mask;
}

inline std::size_t mask_area(const BinaryMask& mask) {
  std::size_t c = 0;
  for (const auto w : mask.words()) c += std::popcount(w);
  return c;
}

// |a & b| / |a | b|; zero when both masks are empty.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b);
  return detail::iou_from_counts(detail::popcount_and(a.words(), b.words()),
                                 mask_area(a), mask_area(b));
}

// Masks may be any random-access range whose elements are BinaryMask or expose
// a `.mask` member (ScoredMask). Rows are split across `threads` workers; each
// entry is computed independently, so the result does not depend on threads.
template <typename Masks>
IoUMatrix pairwise_iou_matrix(const Masks& masks, std::size_t threads = 1) {
  auto get = [&](std::size_t i) -> const BinaryMask& {
    if constexpr (requires { masks[i].mask; })
      return masks[i].mask;
    else
      return masks[i];
  };
  const std::size_t n = std::size(masks);
  IoUMatrix out(n);
  if (n == 0) return out;
  std::vector<std::size_t> areas(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::require_same_shape(get(0), get(i));
    areas[i] = mask_area(get(i));
  }
  // Later rows hold fewer entries; interleave rows so chunks balance.
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k)
    order[k] = (k % 2 == 0) ? k / 2 : n - 1 - k / 2;
  parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      const std::size_t i = order[k];
      const auto wi = get(i).words();
      for (std::size_t j = i + 1; j < n; ++j)
        IoUMatrixWriter::at(out, i, j) = detail::iou_from_counts(
            detail::popcount_and(wi, get(j).words()), areas[i], areas[j]);
    }
  });
  return out;
}

// Builds a strictly-upper matrix from an (i, j) -> iou callback, i < j.
template <typename Fn>
IoUMatrix iou_matrix_from_fn(std::size_t n, Fn&& fn) {
  IoUMatrix out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) IoUMatrixWriter::at(out, i, j) = fn(i, j);
  return out;
}

inline Box mask_to_box(const BinaryMask& mask) {
  std::size_t x0 = mask.width(), y0 = mask.height(), x1 = 0, y1 = 0;
  bool any = false;
  const auto words = mask.words();
  for (std::size_t w = 0; w < words.size(); ++w) {
    BinaryMask::Word bits = words[w];
    while (bits) {
      const std::size_t p =
          w * BinaryMask::kWordBits + static_cast<std::size_t>(std::countr_zero(bits));
      bits &= bits - 1;
      const std::size_t y = p / mask.width(), x = p % mask.width();
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      any = true;
    }
  }
  if (!any) throw EmptyMaskError("cannot box an empty mask");
  return Box{static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(x1),
             static_cast<int>(y1)};
}

inline double box_iou(const Box& a, const Box& b) {
  const long long ix = static_cast<long long>(std::min(a.x_max, b.x_max)) -
                       std::max(a.x_min, b.x_min) + 1;
  const long long iy = static_cast<long long>(std::min(a.y_max, b.y_max)) -
                       std::max(a.y_min, b.y_min) + 1;
  const long long inter = (ix > 0 && iy > 0) ? ix * iy : 0;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// Paints a box as a filled mask of the given image size.
inline BinaryMask box_to_mask(const Box& box, std::size_t height,
                              std::size_t width) {
  if (box.x_min < 0 || box.y_min < 0 || box.x_min > box.x_max ||
      box.y_min > box.y_max || static_cast<std::size_t>(box.x_max) >= width ||
      static_cast<std::size_t>(box.y_max) >= height)
    throw DomainError("box outside image bounds");
  BinaryMask m(height, width);
  for (int y = box.y_min; y <= box.y_max; ++y)
    for (int x = box.x_min; x <= box.x_max; ++x)
      m.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  return m;
}

}  // namespace segpost
