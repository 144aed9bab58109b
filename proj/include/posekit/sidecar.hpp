// Binary descriptor sidecar ("PKDS"): per-image keypoint geometry and
// descriptors that the NVM format does not carry.
//
// Little-endian layout:
//   magic 'PKDS' | version u32 = 1 | image count u32
//   per image: image id u32 | keypoint count u32 | descriptor dim u32
//              per keypoint: (4 + D) float32 -> p, q, scale, orientation, f[0..D)
#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/scene.hpp"

namespace posekit {

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.write(buf, 4);
}

inline void write_f32(std::ostream& out, float v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.write(buf, 4);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
    char buf[4];
    in.read(buf, 4);
    if (!in) throw ParseError(std::string("sidecar truncated while reading ") + what);
    std::uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
}

inline float read_f32(std::istream& in, const char* what) {
    char buf[4];
    in.read(buf, 4);
    if (!in) throw ParseError(std::string("sidecar truncated while reading ") + what);
    float v;
    std::memcpy(&v, buf, 4);
    return v;
}

} // namespace detail

inline constexpr std::uint32_t kSidecarVersion = 1;

/// Write the keypoints of every image in the scene (skips images with no
/// keypoints, e.g. preprocessed test images).
inline void write_sidecar(const Scene& scene, std::ostream& out) {
    std::vector<const ImageRecord*> with_kps;
    for (const auto& img : scene.images)
        if (!img.keypoints.empty()) with_kps.push_back(&img);

    out.write("PKDS", 4);
    detail::write_u32(out, kSidecarVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(with_kps.size()));
    for (const ImageRecord* img : with_kps) {
        detail::write_u32(out, static_cast<std::uint32_t>(img->id));
        detail::write_u32(out, static_cast<std::uint32_t>(img->keypoints.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(scene.descriptor_dim));
        for (const auto& kp : img->keypoints) {
            detail::write_f32(out, static_cast<float>(kp.p));
            detail::write_f32(out, static_cast<float>(kp.q));
            detail::write_f32(out, static_cast<float>(kp.scale));
            detail::write_f32(out, static_cast<float>(kp.orientation));
            if (kp.descriptor.size() != scene.descriptor_dim)
                throw ParseError("keypoint descriptor dimension mismatch on write");
            for (int d = 0; d < kp.descriptor.size(); ++d)
                detail::write_f32(out, kp.descriptor(d));
        }
    }
}

struct SidecarImage {
    int image_id = 0;
    std::vector<Keypoint> keypoints;
};

struct SidecarData {
    std::vector<SidecarImage> images;
    int descriptor_dim = 0;
};

/// Read a standalone sidecar (no scene required).
inline SidecarData read_sidecar(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PKDS", 4) != 0)
        throw ParseError("not a descriptor sidecar (bad magic)");
    const std::uint32_t version = detail::read_u32(in, "version");
    if (version != kSidecarVersion)
        throw ParseError("unsupported sidecar version " + std::to_string(version));
    const std::uint32_t n_images = detail::read_u32(in, "image count");

    SidecarData data;
    data.descriptor_dim = -1;
    for (std::uint32_t i = 0; i < n_images; ++i) {
        SidecarImage img;
        img.image_id = static_cast<int>(detail::read_u32(in, "image id"));
        const std::uint32_t n_kps = detail::read_u32(in, "keypoint count");
        const std::uint32_t dim = detail::read_u32(in, "descriptor dim");
        if (data.descriptor_dim < 0)
            data.descriptor_dim = static_cast<int>(dim);
        else if (data.descriptor_dim != static_cast<int>(dim))
            throw ParseError("inconsistent descriptor dimension across sidecar images");
        img.keypoints.resize(n_kps);
        for (std::uint32_t k = 0; k < n_kps; ++k) {
            Keypoint& kp = img.keypoints[k];
            kp.p = detail::read_f32(in, "keypoint");
            kp.q = detail::read_f32(in, "keypoint");
            kp.scale = detail::read_f32(in, "keypoint");
            kp.orientation = detail::read_f32(in, "keypoint");
            kp.descriptor.resize(dim);
            for (std::uint32_t d = 0; d < dim; ++d)
                kp.descriptor(d) = detail::read_f32(in, "descriptor");
        }
        data.images.push_back(std::move(img));
    }
    if (data.descriptor_dim < 0) data.descriptor_dim = 0;
    return data;
}

enum class DescriptorLoadMode {
    kNormalize, // rescale each descriptor to unit L2 norm (standard practice)
    kRaw        // keep stored values bit-exactly
};

/// Attach sidecar keypoints to a parsed scene. Every image that already has
/// keypoint slots (referenced by tracks) must appear in the sidecar with at
/// least as many keypoints; the sidecar may add extra (non-SfM) keypoints.
inline void load_descriptors(Scene& scene, std::istream& in,
                             DescriptorLoadMode mode = DescriptorLoadMode::kNormalize) {
    SidecarData data = read_sidecar(in);
    if (scene.descriptor_dim > 0 && data.descriptor_dim != scene.descriptor_dim)
        throw ParseError("sidecar descriptor dimension " + std::to_string(data.descriptor_dim) +
                         " does not match scene dimension " +
                         std::to_string(scene.descriptor_dim));

    std::unordered_map<int, SidecarImage*> by_id;
    for (auto& img : data.images) by_id[img.image_id] = &img;

    for (auto& img : scene.images) {
        auto it = by_id.find(img.id);
        if (it == by_id.end()) {
            if (!img.keypoints.empty())
                throw ParseError("sidecar is missing image " + std::to_string(img.id));
            continue;
        }
        SidecarImage& side = *it->second;
        if (side.keypoints.size() < img.keypoints.size())
            throw ParseError("sidecar image " + std::to_string(img.id) + " has " +
                             std::to_string(side.keypoints.size()) +
                             " keypoints but tracks reference " +
                             std::to_string(img.keypoints.size()));
        img.keypoints = std::move(side.keypoints);
        if (mode == DescriptorLoadMode::kNormalize) {
            for (auto& kp : img.keypoints) {
                const float n = kp.descriptor.norm();
                if (n > 0.0f) kp.descriptor /= n;
            }
        }
    }
    scene.descriptor_dim = data.descriptor_dim;
    validate_scene(scene);
}

} // namespace posekit
