#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <ATen/ATen.h>

namespace ostk {

// Flat view of a segmentation-network checkpoint: parameter and buffer
// tensors keyed by their dotted module path ("model.0.conv.weight") plus the
// class-name table the detection head was trained with.
struct Checkpoint {
  enum class Format { native, ultralytics };

  Format format = Format::native;
  std::vector<std::string> class_names;
  std::map<std::string, at::Tensor> tensors;
};

// Reads either the native format written by write_checkpoint() or a
// published Ultralytics YOLOv8 checkpoint (the pickled module tree inside a
// PyTorch zip archive). The reader never executes pickled code; unknown
// classes are walked as plain data.
//
// Throws WeightsNotFound when the file is missing and LoadFailure when it is
// not a readable checkpoint.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Writes a PyTorch-compatible zip archive holding
// {"format": "ostk-yolov8-seg", "version": 1, "names": [...], "state_dict": {...}}.
// Python can read it back with torch.load(path, weights_only=False).
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

}  // namespace ostk
