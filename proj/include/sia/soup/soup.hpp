#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sia/pseudolabel/confidence.hpp"
#include "sia/segnet/segnet.hpp"
#include "sia/soup/checkpoint.hpp"
#include "sia/training/model_ops.hpp"

namespace sia {

struct SoupIngredient {
    std::string id;
    Checkpoint ckpt;
};

/// Elementwise mean, accumulated in double and summed in the given order.
inline ParamSet<float> average_params(const std::vector<const ParamSet<float>*>& sets) {
    if (sets.empty()) throw Error("uniform_soup: no ingredients");
    for (std::size_t i = 1; i < sets.size(); ++i) require_compatible(*sets[0], *sets[i], "uniform_soup");
    ParamSet<float> out;
    const double n = static_cast<double>(sets.size());
    for (const auto& [name, first] : *sets[0]) {
        std::vector<double> acc(first.numel(), 0.0);
        for (const auto* s : sets) {
            const auto& t = s->at(name);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(t[i]);
        }
        Tensor<float> avg(first.shape());
        for (std::size_t i = 0; i < acc.size(); ++i) avg[i] = static_cast<float>(acc[i] / n);
        out.emplace(name, std::move(avg));
    }
    return out;
}

/// Mean of all ingredients, summed in ascending id order.
inline ParamSet<float> uniform_soup(const std::vector<SoupIngredient>& items) {
    std::vector<const SoupIngredient*> sorted;
    for (const auto& it : items) sorted.push_back(&it);
    std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::vector<const ParamSet<float>*> sets;
    for (const auto* it : sorted) sets.push_back(&it->ckpt.params);
    return average_params(sets);
}

using SoupEvaluator = std::function<double(const ParamSet<float>&)>;

struct SoupResult {
    std::vector<std::string> selected;  // acceptance order
    ParamSet<float> params;
    std::vector<double> trajectory;  // score after each accepted ingredient
    std::vector<std::pair<std::string, double>> individual;  // ranking order
};

/// Greedy soup: rank ingredients by individual score (descending, ties by
/// id), start from the best, and keep each further ingredient iff the
/// average with it scores >= the current best. Individual scores may be
/// computed on `threads` workers; the acceptance loop is sequential.
inline SoupResult greedy_soup(const std::vector<SoupIngredient>& items, const SoupEvaluator& evaluate_fn,
                              unsigned threads = 1) {
    if (items.empty()) throw Error("greedy_soup: no ingredients");
    for (std::size_t i = 1; i < items.size(); ++i)
        require_compatible(items[0].ckpt.params, items[i].ckpt.params, "greedy_soup ingredient '" + items[i].id + "'");
    auto run = [&](const std::string& id, const ParamSet<float>& p) {
        try {
            return evaluate_fn(p);
        } catch (const std::exception& e) {
            throw Error("soup evaluator failed on ingredient '" + id + "': " + e.what());
        }
    };
    std::vector<double> scores(items.size());
    parallel_for(items.size(), threads, [&](std::size_t i) { scores[i] = run(items[i].id, items[i].ckpt.params); });

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return items[a].id < items[b].id;
    });

    SoupResult r;
    for (auto i : order) r.individual.emplace_back(items[i].id, scores[i]);
    std::vector<const ParamSet<float>*> members{&items[order[0]].ckpt.params};
    r.selected.push_back(items[order[0]].id);
    r.params = items[order[0]].ckpt.params;
    double best = scores[order[0]];
    r.trajectory.push_back(best);
    for (std::size_t k = 1; k < order.size(); ++k) {
        const auto& cand = items[order[k]];
        auto trial_members = members;
        trial_members.push_back(&cand.ckpt.params);
        auto trial = average_params(trial_members);
        const double s = run(cand.id, trial);
        if (s >= best) {
            best = s;
            members = std::move(trial_members);
            r.params = std::move(trial);
            r.selected.push_back(cand.id);
            r.trajectory.push_back(s);
        }
    }
    return r;
}

/// Target-free evaluator labels: argmax of the ingredients' mean softmax,
/// thresholded at tau (255 below). One H x W map per image.
inline std::vector<Tensor<std::uint8_t>> consensus_labels(const SegNet& net,
                                                          const std::vector<const ParamSet<float>*>& models,
                                                          const std::vector<SceneSample>& data, double tau,
                                                          unsigned threads = 1) {
    if (models.empty()) throw Error("consensus_labels: no models");
    if (!(tau > 0 && tau <= 1)) throw Error("consensus_labels: tau must be in (0,1]");
    std::vector<Tensor<std::uint8_t>> out(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        const auto input = to_batch(data[i].image);
        Tensor<float> mean;
        for (const auto* m : models) {
            const auto p = softmax_channels(net.forward(*m, input));
            if (mean.numel() == 0) {
                mean = p;
            } else {
                for (std::size_t k = 0; k < p.numel(); ++k) mean[k] += p[k];
            }
        }
        const float inv = 1.0f / static_cast<float>(models.size());
        for (auto& v : mean.values()) v *= inv;
        const std::size_t K = mean.dim(1), H = mean.dim(2), W = mean.dim(3), P = H * W;
        Tensor<std::uint8_t> lab({H, W});
        for (std::size_t p = 0; p < P; ++p) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (mean[k * P + p] > mean[best * P + p]) best = k;
            lab[p] = static_cast<double>(mean[best * P + p]) < tau ? kIgnoreLabel : static_cast<std::uint8_t>(best);
        }
        out[i] = std::move(lab);
    });
    return out;
}

/// mIoU (percent) of `net` against fixed label maps for `data`'s images.
/// When every label is 255 there is nothing to score and all inputs get 0.
inline SoupEvaluator label_evaluator(const SegNet& net, const std::vector<SceneSample>& data,
                                     std::vector<Tensor<std::uint8_t>> labels, unsigned threads = 1) {
    if (labels.size() != data.size()) throw Error("label_evaluator: label count differs from image count");
    const bool any = std::ranges::any_of(labels, [](const auto& l) {
        return std::ranges::any_of(l.values(), [](std::uint8_t v) { return v != kIgnoreLabel; });
    });
    if (!any) return [](const ParamSet<float>&) { return 0.0; };
    std::vector<SceneSample> scored(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) scored[i] = {data[i].image, std::move(labels[i])};
    return [&net, scored = std::move(scored), threads](const ParamSet<float>& p) {
        return miou(confusion(net, p, scored, threads));
    };
}

/// mIoU (percent) against the samples' own ground truth.
inline SoupEvaluator ground_truth_evaluator(const SegNet& net, const std::vector<SceneSample>& data,
                                            unsigned threads = 1) {
    return [&net, &data, threads](const ParamSet<float>& p) { return miou(confusion(net, p, data, threads)); };
}

}  // namespace sia
