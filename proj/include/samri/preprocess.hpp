#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "samri/data_io.hpp"
#include "samri/grid.hpp"

namespace samri {

struct SampleMeta {
  std::string dataset_id;
  std::string patient_id;
  std::size_t slice_index = 0;
  std::uint16_t target_id = 0;
  std::string target_name;
  int component = -1;  // >= 0 only when connected-component splitting is on
};

/// One 2D training pair: a grayscale slice replicated into three identical
/// channels and the binary mask of a single target.
struct SliceSample {
  RgbImage image;
  BinaryMask mask;
  SampleMeta meta;
  std::string key;
};

/// "dataset/patient/slice/target" with zero-padded numbers so lexicographic
/// key order equals numeric order; a "#<k>" suffix marks a component.
std::string sample_key(const SampleMeta& meta);

/// Drops floor(fraction_per_end * n) items from each end.
template <class T>
std::vector<T> trim_peripheral(const std::vector<T>& slices, double fraction_per_end = 0.10);

/// Number of items dropped per end by trim_peripheral.
std::size_t peripheral_count(std::size_t n, double fraction_per_end);

struct TargetMask {
  std::uint16_t target_id = 0;
  BinaryMask mask;
};

/// One mask per distinct nonzero label, ascending id; masks with fewer than
/// `min_pixels` foreground pixels are discarded.
std::vector<TargetMask> explode_targets_and_filter(const Grid2<std::uint16_t>& labels, std::size_t min_pixels = 10);

/// round(255 (v - min) / (max - min)) half away from zero, three channels.
/// Constant slices map to zero. Throws NonFiniteInput.
RgbImage normalize_to_u8(const Grid2<float>& slice);

/// Single channel of an RgbImage.
Grid2<std::uint8_t> gray_channel(const RgbImage& image);

Grid2<float> resize_bilinear(const Grid2<float>& in, std::size_t height, std::size_t width);
BinaryMask resize_nearest(const BinaryMask& in, std::size_t height, std::size_t width);

/// 8-connected components of a mask, in raster order of their first pixel.
std::vector<BinaryMask> connected_components(const BinaryMask& mask);

enum class Split { Train, Val, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitAssignment {
  std::map<std::string, Split> by_patient;
  SplitRatios ratios;
  std::uint64_t seed = 0;

  Split of(const std::string& patient_id) const { return by_patient.at(patient_id); }
};

/// Patients are sorted, shuffled with the seeded stream, then the first
/// ceil(train n) go to train, the next ceil(val n) (capped) to val and the
/// remainder to test.
SplitAssignment split_patients(std::vector<std::string> patient_ids, const SplitRatios& ratios, std::uint64_t seed);

struct PreprocessConfig {
  double trim_fraction_per_end = 0.10;
  std::size_t min_mask_pixels = 10;
  std::size_t target_size = 0;  // 0 keeps native slice size
  bool split_components = false;
};

/// Slice along the lowest-extent axis, trim the periphery, explode targets,
/// drop tiny masks and normalize. Output is ordered by key.
std::vector<SliceSample> preprocess_volume(const Volume& volume, const LabelVolume& labels,
                                           const std::string& dataset_id, const std::string& patient_id,
                                           const PreprocessConfig& cfg = {});

// ---- corpus on disk ----------------------------------------------------------

struct CorpusEntry {
  SliceSample sample;
  Split split = Split::Train;
};

/// Writes `<dir>/manifest.jsonl` (one record per sample, key order) and the
/// image/mask payloads in the native raw format under `<dir>/samples/`.
void write_corpus(const std::filesystem::path& dir, const std::vector<CorpusEntry>& entries);
std::vector<CorpusEntry> read_corpus(const std::filesystem::path& manifest);

}  // namespace samri
