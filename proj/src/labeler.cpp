#include "scnn/labeler.hpp"

#include "scnn/random.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <tuple>

namespace scnn {

std::string to_string(SampleRole role) {
  switch (role) {
    case SampleRole::positive: return "positive";
    case SampleRole::background: return "background";
    case SampleRole::unlabeled: return "unlabeled";
  }
  return "unknown";
}

std::vector<std::string> LabelingThresholds::violations() const {
  std::vector<std::string> out;
  if (!(background_iou < rescue_iou && rescue_iou <= positive_iou)) {
    out.emplace_back("labeling thresholds must satisfy background_iou < rescue_iou <= positive_iou");
  }
  if (background_iou < 0.0 || positive_iou > 1.0) out.emplace_back("labeling thresholds must lie in [0, 1]");
  return out;
}

std::vector<LabeledSample> assign_labels(std::span<const CandidateSegment> candidates,
                                         std::span<const GroundTruthInstance> gts,
                                         const LabelingThresholds& th) {
  std::vector<LabeledSample> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    LabeledSample s{c, 0, 1.0, SampleRole::unlabeled, false, std::nullopt};
    const Overlap best = best_overlap(c.interval, gts);
    if (best.index && best.iou > th.positive_iou) {
      s.role = SampleRole::positive;
      s.label = gts[*best.index].category;
      s.overlap = best.iou;
      s.gt_index = best.index;
    } else if (best.iou < th.background_iou) {
      s.role = SampleRole::background;
    }
    out.push_back(std::move(s));
  }

  // Rescue: a ground truth without any candidate above the positive threshold
  // claims its best candidate when that overlap clears the rescue threshold.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    std::optional<std::size_t> best_c;
    double best_iou = 0.0;
    bool covered = false;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double o = iou(candidates[c].interval, gts[g].interval);
      covered = covered || o > th.positive_iou;
      if (!best_c || o > best_iou) {
        best_c = c;
        best_iou = o;
      }
    }
    if (covered || !best_c || !(best_iou > th.rescue_iou)) continue;

    auto& s = out[*best_c];
    // A positive held for another ground truth survives when its overlap is
    // higher, or equal with a lower ground-truth index.
    if (s.role == SampleRole::positive &&
        (s.overlap > best_iou || (s.overlap == best_iou && s.gt_index && *s.gt_index < g))) {
      continue;
    }
    s.role = SampleRole::positive;
    s.label = gts[g].category;
    s.overlap = best_iou;
    s.gt_index = g;
  }
  return out;
}

std::vector<LabeledSample> label_untrimmed(std::span<const VideoAnnotation> videos, const WindowConfig& windows,
                                           const LabelingThresholds& th) {
  std::vector<LabeledSample> all;
  for (const auto& v : videos) {
    if (v.trimmed) continue;
    if (v.total_frames < windows.min_length()) continue;
    const auto segs = generate_segments(v.id, v.total_frames, windows);
    auto labeled = assign_labels(segs, v.instances, th);
    all.insert(all.end(), std::make_move_iterator(labeled.begin()), std::make_move_iterator(labeled.end()));
  }
  std::stable_sort(all.begin(), all.end(), [](const LabeledSample& a, const LabeledSample& b) {
    const auto& ia = a.segment.interval;
    const auto& ib = b.segment.interval;
    return std::forward_as_tuple(a.segment.video_id, ia.start(), ia.length()) <
           std::forward_as_tuple(b.segment.video_id, ib.start(), ib.length());
  });
  return all;
}

std::vector<LabeledSample> trimmed_samples(std::span<const VideoAnnotation> videos, int sample_count) {
  std::vector<LabeledSample> out;
  for (const auto& v : videos) {
    if (!v.trimmed) continue;
    v.validate();
    if (v.total_frames < sample_count) {
      throw std::invalid_argument("trimmed video '" + v.id + "' is shorter than the sample count");
    }
    LabeledSample s{make_segment(v.id, TemporalInterval(0, v.total_frames), sample_count), 0, 1.0,
                    SampleRole::unlabeled, false, std::nullopt};
    s.label = v.instances.front().category;
    s.overlap = 1.0;
    s.role = SampleRole::positive;
    s.from_trimmed = true;
    s.gt_index = 0;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

TrainingSet build_balanced(std::span<const LabeledSample> labeled, std::span<const LabeledSample> trimmed,
                           bool collapse_labels, std::size_t (*target)(std::size_t, int), int num_classes,
                           std::uint64_t seed) {
  TrainingSet set;
  std::vector<std::size_t> background_idx;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& s = labeled[i];
    if (s.role == SampleRole::positive) {
      set.samples.push_back(s);
    } else if (s.role == SampleRole::background) {
      background_idx.push_back(i);
    }
  }
  for (const auto& s : trimmed) {
    if (s.role == SampleRole::positive) set.samples.push_back(s);
  }
  set.positives = set.samples.size();
  if (set.positives == 0) throw std::invalid_argument("training set has no positive samples");
  if (collapse_labels) {
    for (auto& s : set.samples) s.label = 1;
  }

  const std::size_t want = target(set.positives, num_classes);
  if (want > background_idx.size()) {
    set.backgrounds_exhausted = true;
    std::clog << "warning: only " << background_idx.size() << " background segments available, wanted "
              << want << '\n';
  }
  Rng rng(seed);
  rng.shuffle(background_idx);
  background_idx.resize(std::min(want, background_idx.size()));
  std::sort(background_idx.begin(), background_idx.end());
  for (std::size_t i : background_idx) {
    LabeledSample s = labeled[i];
    s.label = 0;
    s.overlap = 1.0;
    set.samples.push_back(std::move(s));
  }
  set.backgrounds = background_idx.size();
  return set;
}

}  // namespace

TrainingSet build_proposal_set(std::span<const LabeledSample> labeled, std::span<const LabeledSample> trimmed,
                               std::uint64_t seed) {
  return build_balanced(
      labeled, trimmed, true, [](std::size_t n, int) { return n; }, 1, seed);
}

TrainingSet build_classification_set(std::span<const LabeledSample> labeled,
                                     std::span<const LabeledSample> trimmed, int num_classes,
                                     std::uint64_t seed) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  return build_balanced(
      labeled, trimmed, false,
      [](std::size_t n, int k) { return (n + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k); },
      num_classes, seed);
}

TrainingSet build_localization_set(const TrainingSet& classification) {
  TrainingSet loc = classification;
  for (auto& s : loc.samples) {
    if (s.label == 0 || s.from_trimmed) s.overlap = 1.0;
  }
  return loc;
}

void write_labeling_report(const std::filesystem::path& path, std::span<const LabeledSample> samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "video_id,start,end,k,v,role\n";
  char buf[64];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%.6f", s.overlap);
    out << s.segment.video_id << ',' << s.segment.interval.start() << ',' << s.segment.interval.end() << ','
        << s.label << ',' << buf << ',' << to_string(s.role) << '\n';
  }
}

}  // namespace scnn
