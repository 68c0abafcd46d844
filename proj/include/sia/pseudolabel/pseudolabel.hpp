#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "sia/pseudolabel/confidence.hpp"
#include "sia/segnet/segnet.hpp"
#include "sia/soup/checkpoint.hpp"
#include "sia/synthdata/dataset.hpp"
#include "sia/synthdata/netpbm.hpp"
#include "sia/util/files.hpp"
#include "sia/util/text.hpp"

namespace sia {

inline constexpr double kDefaultPseudoTau = 0.9;

/// Thresholded labels for one image. labels[p] == 255 iff confidence[p] < tau.
struct PseudoLabelMap {
    Tensor<std::uint8_t> labels;  // H x W
    Tensor<float> confidence;     // H x W, empty when loaded without confidences
    double retained_fraction = 0;
};

struct PseudoLabelSet {
    double tau = kDefaultPseudoTau;
    std::string model_hash;
    std::vector<std::string> ids;
    std::vector<PseudoLabelMap> maps;

    std::size_t size() const { return ids.size(); }
};

inline double retained_fraction(const Tensor<std::uint8_t>& labels) {
    if (labels.numel() == 0) return 0.0;
    std::size_t kept = 0;
    for (auto l : labels.values()) kept += l != kIgnoreLabel;
    return static_cast<double>(kept) / static_cast<double>(labels.numel());
}

inline void require_tau(double tau) {
    if (!(tau > 0 && tau <= 1)) throw Error("pseudo-label tau must be in (0,1], got " + format_double(tau));
}

/// Pseudo-labels for one H x W x 3 image.
inline PseudoLabelMap pseudo_label_image(const SegNet& net, const ParamSet<float>& params, const Tensor<float>& image,
                                         double tau) {
    require_tau(tau);
    const auto pc = pixel_confidence(net.forward(params, to_batch(image)));
    const std::size_t H = image.dim(0), W = image.dim(1);
    PseudoLabelMap m;
    m.labels = threshold_labels(pc, tau).reshaped({H, W});
    m.confidence = pc.confidence.reshaped({H, W});
    m.retained_fraction = retained_fraction(m.labels);
    return m;
}

inline PseudoLabelSet compute_pseudo_labels(const SegNet& net, const Checkpoint& model, const Dataset& target,
                                            double tau = kDefaultPseudoTau, unsigned threads = 1) {
    require_tau(tau);
    PseudoLabelSet out;
    out.tau = tau;
    out.model_hash = hex64(params_hash(model.params));
    out.ids = target.ids;
    out.maps.resize(target.size());
    parallel_for(target.size(), threads,
                 [&](std::size_t i) { out.maps[i] = pseudo_label_image(net, model.params, target.samples[i].image, tau); });
    return out;
}

inline Tensor<std::uint16_t> quantize_confidence(const Tensor<float>& conf) {
    Tensor<std::uint16_t> q(conf.shape());
    for (std::size_t i = 0; i < conf.numel(); ++i)
        q[i] = static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(conf[i]), 0.0, 1.0) * 65535.0));
    return q;
}

inline std::string pseudo_manifest(const PseudoLabelSet& s) {
    std::ostringstream o;
    o << "sia-pseudo 1\n";
    o << "tau " << format_double(s.tau) << "\n";
    o << "model_hash " << s.model_hash << "\n";
    o << "count " << s.size() << "\n";
    for (std::size_t i = 0; i < s.size(); ++i)
        o << "image " << s.ids[i] << " " << format_double(s.maps[i].retained_fraction) << "\n";
    return o.str();
}

/// Writes <id>.pgm label maps (255 = ignore), optional <id>.conf.pgm 16-bit
/// confidences, and manifest.txt. Every file is written atomically.
inline void write_pseudo_labels(const fs::path& dir, const PseudoLabelSet& s, bool with_confidence = false) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < s.size(); ++i) {
        write_file_atomic(dir / (s.ids[i] + ".pgm"), encode_pgm8(s.maps[i].labels));
        if (with_confidence) write_file_atomic(dir / (s.ids[i] + ".conf.pgm"), encode_pgm16(quantize_confidence(s.maps[i].confidence)));
    }
    write_file_atomic(dir / "manifest.txt", pseudo_manifest(s));
}

inline PseudoLabelSet generate_pseudo_labels(const SegNet& net, const Checkpoint& model, const Dataset& target,
                                             const fs::path& dir, double tau = kDefaultPseudoTau,
                                             bool with_confidence = false, unsigned threads = 1) {
    auto s = compute_pseudo_labels(net, model, target, tau, threads);
    write_pseudo_labels(dir, s, with_confidence);
    return s;
}

/// Loads labels (and confidences when present) listed in dir/manifest.txt.
inline PseudoLabelSet load_pseudo_labels(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.txt";
    if (!fs::exists(mpath)) throw Error("pseudo-label manifest '" + mpath.string() + "' not found");
    std::istringstream in(read_text_file(mpath.string()));
    PseudoLabelSet s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto parts = split(trim(line), ' ');
        if (parts.empty() || parts[0].empty()) continue;
        try {
            const std::string& key = parts[0];
            if (key == "sia-pseudo" || key == "count") continue;
            if (parts.size() < 2) throw Error("missing value");
            if (key == "tau") {
                s.tau = parse_double(parts[1]);
            } else if (key == "model_hash") {
                s.model_hash = parts[1];
            } else if (key == "image" && parts.size() == 3) {
                s.ids.push_back(parts[1]);
                PseudoLabelMap m;
                m.retained_fraction = parse_double(parts[2]);
                s.maps.push_back(std::move(m));
            } else {
                throw Error("unrecognized line");
            }
        } catch (const Error& e) {
            throw Error(mpath.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto& m = s.maps[i];
        m.labels = read_pgm8((dir / (s.ids[i] + ".pgm")).string());
        const fs::path cpath = dir / (s.ids[i] + ".conf.pgm");
        if (fs::exists(cpath)) {
            const auto q = read_pgm16(cpath.string());
            m.confidence = Tensor<float>(q.shape());
            for (std::size_t k = 0; k < q.numel(); ++k) m.confidence[k] = static_cast<float>(q[k] / 65535.0);
        }
    }
    return s;
}

}  // namespace sia
