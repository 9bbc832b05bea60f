#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lrp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major f32 array. Images, activations and relevances are
// [C,H,W]; linear-layer vectors are [N]; weights are [Cout,Cin,kH,kW] or
// [Nout,Nin].
//
// A default-constructed Tensor is an empty placeholder (rank 0, no data).
// Every other constructor enforces numel(shape) == data.size() and that
// all extents are >= 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  // [C,H,W] element access.
  float at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  float& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  // Same data, new shape. Throws ShapeError if element counts differ.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  double sum() const;
  float max_abs() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Argmax locations recorded by max pooling: one flat index into the
// pre-pool tensor per pooled element.
struct SwitchMap {
  Shape pooled_shape;
  Shape input_shape;
  std::vector<std::uint32_t> indices;

  friend bool operator==(const SwitchMap& a, const SwitchMap& b) = default;
};

}  // namespace lrp
