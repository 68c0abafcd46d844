#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "sia/synthdata/domain.hpp"
#include "sia/synthdata/netpbm.hpp"
#include "sia/synthdata/scene.hpp"
#include "sia/util/files.hpp"

namespace sia {

struct Dataset {
    DomainSpec spec;
    std::uint64_t seed = 0;
    std::vector<std::string> ids;
    std::vector<std::uint64_t> sample_seeds;
    std::vector<SceneSample> samples;

    std::size_t size() const { return samples.size(); }
};

inline std::string sample_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", index);
    return buf;
}

/// Sample i is gen_scene(spec, derive_seed(seed, first_index + i)), so any
/// sample can be regenerated on its own and generation order does not matter.
inline Dataset gen_dataset(const DomainSpec& spec, std::size_t n, std::uint64_t seed, unsigned threads = 1,
                           std::size_t first_index = 0) {
    if (n == 0) throw Error("gen_dataset: n must be >= 1");
    Dataset d{spec, seed, {}, {}, std::vector<SceneSample>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        d.ids.push_back(sample_id(first_index + i));
        d.sample_seeds.push_back(derive_seed(seed, first_index + i));
    }
    parallel_for(n, threads, [&](std::size_t i) { d.samples[i] = gen_scene(spec, d.sample_seeds[i]); });
    return d;
}

/// Per-class pixel frequency over all labeled pixels (ignore pixels skipped).
inline std::array<double, kNumClasses> class_frequency(const std::vector<SceneSample>& samples) {
    if (samples.empty()) throw Error("class_frequency: empty dataset");
    std::array<std::uint64_t, kNumClasses> counts{};
    std::uint64_t total = 0;
    for (const auto& s : samples)
        for (auto l : s.labels.values()) {
            if (l == kIgnoreLabel) continue;
            if (l >= kNumClasses) throw Error("class_frequency: label out of range");
            ++counts[l];
            ++total;
        }
    std::array<double, kNumClasses> f{};
    if (total == 0) return f;
    for (std::size_t c = 0; c < kNumClasses; ++c) f[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
    return f;
}

inline std::string dataset_manifest(const Dataset& d) {
    std::ostringstream out;
    out << "sia-dataset 1\n";
    out << "seed " << d.seed << "\n";
    out << "count " << d.size() << "\n";
    for (const auto& [k, v] : to_kv(d.spec)) out << "spec." << k << " = " << v << "\n";
    for (std::size_t i = 0; i < d.size(); ++i) out << "sample " << d.ids[i] << " " << d.sample_seeds[i] << "\n";
    return out.str();
}

/// Layout: <dir>/manifest.txt, <dir>/<id>.ppm (image), <dir>/<id>.pgm (labels).
inline void write_dataset(const fs::path& dir, const Dataset& d) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < d.size(); ++i) {
        write_file_atomic(dir / (d.ids[i] + ".ppm"), encode_ppm(d.samples[i].image));
        write_file_atomic(dir / (d.ids[i] + ".pgm"), encode_pgm8(d.samples[i].labels));
    }
    write_file_atomic(dir / "manifest.txt", dataset_manifest(d));
}

/// Reads the manifest and the listed samples. Image values are the 8-bit
/// quantized ones stored on disk.
inline Dataset load_dataset(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.txt";
    if (!fs::exists(mpath)) throw Error("dataset manifest '" + mpath.string() + "' not found");
    std::istringstream in(read_text_file(mpath.string()));
    Dataset d;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) continue;
        auto fail = [](const std::string& why) { return Error(why); };
        try {
            if (t.rfind("sia-dataset", 0) == 0) continue;
            if (t.rfind("seed ", 0) == 0) {
                d.seed = parse_u64(t.substr(5));
            } else if (t.rfind("count ", 0) == 0) {
                continue;
            } else if (t.rfind("spec.", 0) == 0) {
                const auto eq = t.find('=');
                if (eq == std::string::npos) throw fail("expected key = value");
                const std::string key = trim(t.substr(5, eq - 5));
                if (!set_domain_key(d.spec, key, trim(t.substr(eq + 1)))) throw fail("unknown spec key '" + key + "'");
            } else if (t.rfind("sample ", 0) == 0) {
                const auto parts = split(t.substr(7), ' ');
                if (parts.size() != 2) throw fail("expected 'sample <id> <seed>'");
                d.ids.push_back(parts[0]);
                d.sample_seeds.push_back(parse_u64(parts[1]));
            } else {
                throw fail("unrecognized line");
            }
        } catch (const Error& e) {
            throw Error(mpath.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    for (const auto& id : d.ids) {
        SceneSample s{read_ppm((dir / (id + ".ppm")).string()), read_pgm8((dir / (id + ".pgm")).string())};
        if (s.image.dim(0) != s.labels.dim(0) || s.image.dim(1) != s.labels.dim(1))
            throw Error("sample '" + id + "' in " + dir.string() + ": image and label extents differ");
        d.samples.push_back(std::move(s));
    }
    return d;
}

/// Stacks H x W x 3 images into an N x 3 x H x W tensor.
template <typename T = float>
Tensor<T> to_batch(const std::vector<const Tensor<float>*>& images) {
    if (images.empty()) throw Error("to_batch: no images");
    const std::size_t H = images[0]->dim(0), W = images[0]->dim(1);
    Tensor<T> out({images.size(), 3, H, W});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const auto& img = *images[n];
        require_shape(img, {H, W, 3}, "to_batch");
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c) out.at(n, c, y, x) = static_cast<T>(img[(y * W + x) * 3 + c]);
    }
    return out;
}

template <typename T = float>
Tensor<T> to_batch(const Tensor<float>& image) {
    return to_batch<T>(std::vector<const Tensor<float>*>{&image});
}

/// Stacks H x W label maps into N x H x W.
inline LabelMap to_label_batch(const std::vector<const Tensor<std::uint8_t>*>& labels) {
    if (labels.empty()) throw Error("to_label_batch: no labels");
    const std::size_t H = labels[0]->dim(0), W = labels[0]->dim(1);
    LabelMap out({labels.size(), H, W});
    for (std::size_t n = 0; n < labels.size(); ++n) {
        require_shape(*labels[n], {H, W}, "to_label_batch");
        std::copy(labels[n]->data(), labels[n]->data() + H * W, out.data() + n * H * W);
    }
    return out;
}

}  // namespace sia
