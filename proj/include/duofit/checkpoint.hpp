#pragma once

#include <string>

#include "duofit/fields.hpp"

namespace duofit {

// Flat binary checkpoint, bit-exact round trip. Layout (little-endian):
//   magic "DUOFITCK" | u32 version | u64 config digest | u64 img_h | u64 img_w
//   | u32 config text length | text | u32 array count
//   | per array: u32 name length | name | u32 rank | u64 dims[rank] | f32 data
void save_checkpoint(const std::string& path, fields::FieldModelT<float>& model);
fields::FieldModelT<float> load_checkpoint(const std::string& path);

} // namespace duofit
