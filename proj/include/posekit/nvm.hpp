// VisualSFM NVM_V3 reconstruction files: parsing and serialization.
//
// Layout handled here:
//   NVM_V3
//   <blank line>
//   <camera count N>
//   N x: <filename> <focal> <qw> <qx> <qy> <qz> <cx> <cy> <cz> <k1> 0
//   <point count M>
//   M x: <X> <Y> <Z> <R> <G> <B> <num_meas> { <img> <feat> <x> <y> } ...
//
// Measurement coordinates are relative to the image center; they are
// converted to absolute pixels using the image dimensions (the format itself
// carries none, so defaults are supplied by the caller) with the principal
// point placed at the image center.
#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/scene.hpp"

namespace posekit {

struct NvmOptions {
    int default_width = 640;
    int default_height = 480;
};

namespace detail {

class LineTokenizer {
public:
    explicit LineTokenizer(std::istream& in) : in_(in) {}

    /// Next non-blank line split into whitespace tokens.
    std::vector<std::string> next_line() {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_number_;
            std::istringstream ls(line);
            std::vector<std::string> tokens;
            std::string tok;
            while (ls >> tok) tokens.push_back(tok);
            if (!tokens.empty()) return tokens;
        }
        throw ParseError("unexpected end of file", line_number_);
    }

    long line_number() const { return line_number_; }

private:
    std::istream& in_;
    long line_number_ = 0;
};

inline double parse_real(const std::string& tok, long line) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw ParseError("expected a number, got '" + tok + "'", line);
    }
    if (used != tok.size()) throw ParseError("trailing characters in number '" + tok + "'", line);
    return v;
}

inline long parse_int(const std::string& tok, long line) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(tok, &used);
    } catch (const std::exception&) {
        throw ParseError("expected an integer, got '" + tok + "'", line);
    }
    if (used != tok.size()) throw ParseError("trailing characters in integer '" + tok + "'", line);
    return v;
}

} // namespace detail

/// Parse an NVM_V3 stream into a Scene. Keypoint pixel positions referenced
/// by measurements are filled in; scales, orientations and descriptors stay
/// empty until a descriptor sidecar is loaded.
inline Scene parse_nvm(std::istream& in, const NvmOptions& opts = {}) {
    detail::LineTokenizer lines(in);

    auto header = lines.next_line();
    if (header[0] != "NVM_V3") {
        if (header[0].rfind("NVM_V", 0) == 0)
            throw ParseError("unsupported version '" + header[0] + "' (only NVM_V3 is handled)",
                             lines.line_number());
        throw ParseError("not an NVM file (missing NVM_V3 header)", lines.line_number());
    }

    Scene scene;
    const long n_cams = detail::parse_int(lines.next_line().at(0), lines.line_number());
    if (n_cams < 0) throw ParseError("negative camera count", lines.line_number());

    for (long i = 0; i < n_cams; ++i) {
        auto t = lines.next_line();
        const long ln = lines.line_number();
        if (t.size() < 11) throw ParseError("camera line has too few fields", ln);
        ImageRecord img;
        img.id = static_cast<int>(i);
        img.filename = t[0];
        img.intrinsics.focal = detail::parse_real(t[1], ln);
        if (!(img.intrinsics.focal > 0)) throw ParseError("non-positive focal length", ln);
        Quaternion q{detail::parse_real(t[2], ln), detail::parse_real(t[3], ln),
                     detail::parse_real(t[4], ln), detail::parse_real(t[5], ln)};
        img.pose.rotation = quat_normalize(q);
        img.pose.center = {detail::parse_real(t[6], ln), detail::parse_real(t[7], ln),
                           detail::parse_real(t[8], ln)};
        img.intrinsics.radial_k1 = detail::parse_real(t[9], ln);
        img.intrinsics.width = opts.default_width;
        img.intrinsics.height = opts.default_height;
        img.intrinsics.principal_point = {opts.default_width / 2.0, opts.default_height / 2.0};
        scene.images.push_back(std::move(img));
    }

    const long n_points = detail::parse_int(lines.next_line().at(0), lines.line_number());
    if (n_points < 0) throw ParseError("negative point count", lines.line_number());

    for (long i = 0; i < n_points; ++i) {
        auto t = lines.next_line();
        const long ln = lines.line_number();
        if (t.size() < 7) throw ParseError("point line has too few fields", ln);
        TrackedPoint point;
        point.position = {detail::parse_real(t[0], ln), detail::parse_real(t[1], ln),
                          detail::parse_real(t[2], ln)};
        for (int c = 0; c < 3; ++c) {
            const long v = detail::parse_int(t[3 + c], ln);
            if (v < 0 || v > 255) throw ParseError("color component out of range", ln);
            point.color[c] = static_cast<std::uint8_t>(v);
        }
        const long n_meas = detail::parse_int(t[6], ln);
        if (n_meas < 0) throw ParseError("negative measurement count", ln);
        if (t.size() != static_cast<std::size_t>(7 + 4 * n_meas))
            throw ParseError("measurement list length mismatch", ln);
        for (long m = 0; m < n_meas; ++m) {
            const long img_idx = detail::parse_int(t[7 + 4 * m], ln);
            const long feat_idx = detail::parse_int(t[8 + 4 * m], ln);
            if (img_idx < 0 || img_idx >= n_cams)
                throw ParseError("measurement references image " + std::to_string(img_idx) +
                                     " out of range",
                                 ln);
            if (feat_idx < 0) throw ParseError("negative keypoint index", ln);
            auto& img = scene.images[static_cast<std::size_t>(img_idx)];
            const double cx = img.intrinsics.width / 2.0;
            const double cy = img.intrinsics.height / 2.0;
            if (img.keypoints.size() <= static_cast<std::size_t>(feat_idx))
                img.keypoints.resize(static_cast<std::size_t>(feat_idx) + 1);
            img.keypoints[static_cast<std::size_t>(feat_idx)].p =
                detail::parse_real(t[9 + 4 * m], ln) + cx;
            img.keypoints[static_cast<std::size_t>(feat_idx)].q =
                detail::parse_real(t[10 + 4 * m], ln) + cy;
            point.observations.push_back({static_cast<int>(img_idx), static_cast<int>(feat_idx)});
        }
        scene.points.push_back(std::move(point));
    }
    return scene;
}

/// Serialize a Scene back to NVM_V3 text. Reals are printed with 9
/// significant digits, which round-trips through parse_nvm to within 1e-6.
inline void serialize_nvm(const Scene& scene, std::ostream& out) {
    out << "NVM_V3\n\n";
    auto real = [](double v) {
        std::ostringstream ss;
        ss << std::setprecision(9) << v;
        return ss.str();
    };
    out << scene.images.size() << "\n";
    for (const auto& img : scene.images) {
        const auto& q = img.pose.rotation;
        const auto& c = img.pose.center;
        out << (img.filename.empty() ? "image_" + std::to_string(img.id) + ".jpg" : img.filename)
            << ' ' << real(img.intrinsics.focal) << ' ' << real(q.w) << ' ' << real(q.x) << ' '
            << real(q.y) << ' ' << real(q.z) << ' ' << real(c.x()) << ' ' << real(c.y()) << ' '
            << real(c.z()) << ' ' << real(img.intrinsics.radial_k1) << " 0\n";
    }
    out << scene.points.size() << "\n";
    for (const auto& point : scene.points) {
        out << real(point.position.x()) << ' ' << real(point.position.y()) << ' '
            << real(point.position.z()) << ' ' << int(point.color[0]) << ' '
            << int(point.color[1]) << ' ' << int(point.color[2]) << ' '
            << point.observations.size();
        for (const auto& obs : point.observations) {
            const ImageRecord* img = scene.find_image(obs.image_id);
            double x = 0.0, y = 0.0;
            if (img && static_cast<std::size_t>(obs.keypoint_index) < img->keypoints.size()) {
                x = img->keypoints[obs.keypoint_index].p - img->intrinsics.width / 2.0;
                y = img->keypoints[obs.keypoint_index].q - img->intrinsics.height / 2.0;
            }
            out << ' ' << obs.image_id << ' ' << obs.keypoint_index << ' ' << real(x) << ' '
                << real(y);
        }
        out << "\n";
    }
}

} // namespace posekit
