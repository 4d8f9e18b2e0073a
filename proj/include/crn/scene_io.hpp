// Scene files: one JSON document plus sibling CRNT tensors for the camera
// feature images ("<stem>_cam<i>.crnt", referenced by relative name). The
// occupancy mask and visibility records are derived from the boxes and are
// recomputed on load, so a file edit cannot desynchronize them. Calibration
// travels as 9-value intrinsics and 16-value cam-from-ego matrices, row-major.
#pragma once

#include <string>

#include "crn/scenegen.hpp"

namespace crn {

// Writes the JSON scene file and its CRNT images. Throws IoError when any
// file cannot be written. Saving the same scene twice yields identical bytes.
void save_scene(const Scene& scene, const std::string& path);

// Throws IoError for unreadable/unparseable files and std::invalid_argument
// when the content contradicts itself (image dims vs spec, bad counts).
Scene load_scene(const std::string& path);

}  // namespace crn
