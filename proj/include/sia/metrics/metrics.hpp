#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sia/numerics/layers.hpp"
#include "sia/synthdata/domain.hpp"

namespace sia {

/// K x K counts; entry (g, p) holds pixels with ground truth g predicted as p.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = kNumClasses)
        : k_(num_classes), counts_(num_classes * num_classes, 0) {}

    std::size_t num_classes() const { return k_; }
    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts_) t += c;
        return t;
    }
    std::uint64_t trace() const {
        std::uint64_t t = 0;
        for (std::size_t c = 0; c < k_; ++c) t += at(c, c);
        return t;
    }
    std::uint64_t row_sum(std::size_t gt) const {
        std::uint64_t t = 0;
        for (std::size_t p = 0; p < k_; ++p) t += at(gt, p);
        return t;
    }
    std::uint64_t col_sum(std::size_t pred) const {
        std::uint64_t t = 0;
        for (std::size_t g = 0; g < k_; ++g) t += at(g, pred);
        return t;
    }

    /// Accumulates one prediction/ground-truth pair of equal shape. Pixels
    /// whose ground truth equals `ignore` are skipped.
    void update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                std::uint8_t ignore = kIgnoreLabel) {
        if (pred.size() != gt.size())
            throw ShapeError("cm_update: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                             std::to_string(gt.size()));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] >= k_)
                throw Error("cm_update: predicted class " + std::to_string(pred[i]) + " out of range");
            if (gt[i] == ignore) continue;
            if (gt[i] >= k_) throw Error("cm_update: ground-truth class " + std::to_string(gt[i]) + " out of range");
            ++counts_[gt[i] * k_ + pred[i]];
        }
    }

    void merge(const ConfusionMatrix& other) {
        if (other.k_ != k_) throw ShapeError("ConfusionMatrix::merge: class counts differ");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix& cm_update(ConfusionMatrix& cm, const Tensor<std::uint8_t>& pred,
                                  const Tensor<std::uint8_t>& gt, std::uint8_t ignore = kIgnoreLabel) {
    if (pred.shape() != gt.shape())
        throw ShapeError("cm_update: shapes " + shape_str(pred.shape()) + " and " + shape_str(gt.shape()) + " differ");
    cm.update(pred.values(), gt.values(), ignore);
    return cm;
}

/// Percent IoU per class; nullopt where the class is absent from both
/// prediction and ground truth (zero denominator).
inline std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw Error("iou_per_class: empty confusion matrix");
    std::vector<std::optional<double>> out(cm.num_classes());
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        const std::uint64_t inter = cm.at(c, c);
        const std::uint64_t uni = cm.row_sum(c) + cm.col_sum(c) - inter;
        if (uni > 0) out[c] = 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
    }
    return out;
}

/// Arithmetic mean of the defined per-class IoUs.
inline double mean_iou(std::span<const std::optional<double>> per_class) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& v : per_class)
        if (v) {
            sum += *v;
            ++n;
        }
    if (n == 0) throw Error("mean_iou: no class has a defined IoU");
    return sum / static_cast<double>(n);
}

inline double mean_iou(std::span<const double> per_class) {
    if (per_class.empty()) throw Error("mean_iou: no classes");
    double sum = 0;
    for (double v : per_class) sum += v;
    return sum / static_cast<double>(per_class.size());
}

inline double miou(const ConfusionMatrix& cm) {
    const auto ious = iou_per_class(cm);
    return mean_iou(std::span<const std::optional<double>>(ious));
}

/// Overall pixel accuracy in percent.
inline double pixel_acc(const ConfusionMatrix& cm) {
    const std::uint64_t t = cm.total();
    if (t == 0) throw Error("pixel_acc: empty confusion matrix");
    return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(t);
}

struct EvalReport {
    std::vector<std::string> class_names;
    std::vector<std::optional<double>> iou;
    double miou = 0;
    double acc = 0;
};

inline EvalReport make_report(const ConfusionMatrix& cm) {
    EvalReport r;
    for (std::size_t c = 0; c < cm.num_classes(); ++c)
        r.class_names.emplace_back(c < kClassNames.size() ? kClassNames[c] : "class" + std::to_string(c));
    r.iou = iou_per_class(cm);
    r.miou = mean_iou(std::span<const std::optional<double>>(r.iou));
    r.acc = pixel_acc(cm);
    return r;
}

struct NamedReport {
    std::string name;
    EvalReport report;
};

/// Fixed-width text table: one row per model, per-class IoU columns, mIoU and
/// Acc, two decimals. Undefined IoUs print as "-".
inline std::string emit_report(const std::vector<NamedReport>& rows) {
    if (rows.empty()) return {};
    const auto& names = rows.front().report.class_names;
    for (const auto& r : rows)
        if (r.report.class_names != names) throw Error("emit_report: inconsistent class names in row '" + r.name + "'");
    std::size_t name_w = 6;
    for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
    std::vector<std::size_t> col_w;
    for (const auto& n : names) col_w.push_back(std::max<std::size_t>(n.size(), 6));

    std::string out;
    char buf[256];
    auto cell = [&](const std::string& text, std::size_t w, bool left) {
        std::snprintf(buf, sizeof buf, left ? " %-*s |" : " %*s |", static_cast<int>(w), text.c_str());
        out += buf;
    };
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    auto rule = [&]() {
        std::size_t len = 1 + name_w + 3;
        for (auto w : col_w) len += w + 3;
        len += 2 * (6 + 3);
        out += std::string(len - 1, '-') + "\n";
    };

    out += "|";
    cell("Method", name_w, true);
    for (std::size_t c = 0; c < names.size(); ++c) cell(names[c], col_w[c], false);
    cell("mIoU", 6, false);
    cell("Acc", 6, false);
    out += "\n";
    rule();
    for (const auto& r : rows) {
        out += "|";
        cell(r.name, name_w, true);
        for (std::size_t c = 0; c < names.size(); ++c)
            cell(r.report.iou[c] ? num(*r.report.iou[c]) : "-", col_w[c], false);
        cell(num(r.report.miou), 6, false);
        cell(num(r.report.acc), 6, false);
        out += "\n";
    }
    return out;
}

/// key=value lines: miou, acc, iou.<class index>.
inline std::string report_kv(const EvalReport& r) {
    std::string out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "miou=%.6f\nacc=%.6f\n", r.miou, r.acc);
    out += buf;
    for (std::size_t c = 0; c < r.iou.size(); ++c) {
        if (r.iou[c])
            std::snprintf(buf, sizeof buf, "iou.%zu=%.6f\n", c, *r.iou[c]);
        else
            std::snprintf(buf, sizeof buf, "iou.%zu=nan\n", c);
        out += buf;
    }
    return out;
}

}  // namespace sia
