#include "samri/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>
#include <set>

#include <json.hpp>

#include "samri/error.hpp"
#include "samri/rng.hpp"

namespace samri {

std::string sample_key(const SampleMeta& m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu/%03u", m.slice_index, static_cast<unsigned>(m.target_id));
  std::string key = m.dataset_id + "/" + m.patient_id + "/" + buf;
  if (m.component >= 0) key += "#" + std::to_string(m.component);
  return key;
}

std::size_t peripheral_count(std::size_t n, double fraction_per_end) {
  if (!(fraction_per_end >= 0.0 && fraction_per_end < 0.5))
    throw Error(ErrorCode::InvalidArgument, "trim fraction per end must be in [0, 0.5)");
  // tolerance keeps e.g. 0.1 * 30 from flooring to 2 through representation error
  return static_cast<std::size_t>(std::floor(fraction_per_end * static_cast<double>(n) + 1e-9));
}

template <class T>
std::vector<T> trim_peripheral(const std::vector<T>& slices, double fraction_per_end) {
  const std::size_t drop = peripheral_count(slices.size(), fraction_per_end);
  if (2 * drop >= slices.size()) return {};
  return std::vector<T>(slices.begin() + static_cast<std::ptrdiff_t>(drop),
                        slices.end() - static_cast<std::ptrdiff_t>(drop));
}

template std::vector<SliceRecord> trim_peripheral(const std::vector<SliceRecord>&, double);
template std::vector<std::size_t> trim_peripheral(const std::vector<std::size_t>&, double);
template std::vector<int> trim_peripheral(const std::vector<int>&, double);

std::vector<TargetMask> explode_targets_and_filter(const Grid2<std::uint16_t>& labels, std::size_t min_pixels) {
  std::map<std::uint16_t, std::size_t> counts;
  for (auto l : labels.data)
    if (l != 0) ++counts[l];
  std::vector<TargetMask> out;
  for (const auto& [id, n] : counts) {
    if (n < min_pixels) continue;
    TargetMask t{id, BinaryMask(labels.height, labels.width)};
    for (std::size_t i = 0; i < labels.data.size(); ++i) t.mask.data[i] = labels.data[i] == id;
    out.push_back(std::move(t));
  }
  return out;
}

RgbImage normalize_to_u8(const Grid2<float>& slice) {
  RgbImage img{slice.height, slice.width, std::vector<std::uint8_t>(slice.size() * 3, 0)};
  if (slice.data.empty()) return img;
  double lo = slice.data[0], hi = slice.data[0];
  for (float v : slice.data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "slice contains a non-finite value");
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
  }
  if (hi == lo) return img;
  const double range = hi - lo;
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const double scaled = std::round(255.0 * (static_cast<double>(slice.data[i]) - lo) / range);
    const auto u = static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
    img.data[3 * i] = img.data[3 * i + 1] = img.data[3 * i + 2] = u;
  }
  return img;
}

Grid2<std::uint8_t> gray_channel(const RgbImage& image) {
  Grid2<std::uint8_t> g(image.height, image.width);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = image.data[3 * i];
  return g;
}

Grid2<float> resize_bilinear(const Grid2<float>& in, std::size_t height, std::size_t width) {
  Grid2<float> out(height, width);
  const double sy = static_cast<double>(in.height) / height, sx = static_cast<double>(in.width) / width;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const auto y0 = std::min(static_cast<std::size_t>(fy), in.height - 1);
    const std::size_t y1 = std::min(y0 + 1, in.height - 1);
    const double ly = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const auto x0 = std::min(static_cast<std::size_t>(fx), in.width - 1);
      const std::size_t x1 = std::min(x0 + 1, in.width - 1);
      const double lx = fx - x0;
      const double top = (1 - lx) * in.at(y0, x0) + lx * in.at(y0, x1);
      const double bot = (1 - lx) * in.at(y1, x0) + lx * in.at(y1, x1);
      out.at(y, x) = static_cast<float>((1 - ly) * top + ly * bot);
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& in, std::size_t height, std::size_t width) {
  BinaryMask out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const auto sy = std::min(in.height - 1, static_cast<std::size_t>((y + 0.5) * in.height / height));
    for (std::size_t x = 0; x < width; ++x) {
      const auto sx = std::min(in.width - 1, static_cast<std::size_t>((x + 0.5) * in.width / width));
      out.at(y, x) = in.at(sy, sx);
    }
  }
  return out;
}

std::vector<BinaryMask> connected_components(const BinaryMask& mask) {
  std::vector<int> comp(mask.size(), -1);
  std::vector<BinaryMask> out;
  const auto h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (!mask.data[s] || comp[s] >= 0) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back(mask.height, mask.width);
    std::queue<std::size_t> q;
    comp[s] = id;
    q.push(s);
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      out.back().data[i] = 1;
      const long y = static_cast<long>(i) / w, x = static_cast<long>(i) % w;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          const auto j = static_cast<std::size_t>(ny * w + nx);
          if (mask.data[j] && comp[j] < 0) {
            comp[j] = id;
            q.push(j);
          }
        }
    }
  }
  return out;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + std::string(s) + "'");
}

SplitAssignment split_patients(std::vector<std::string> ids, const SplitRatios& ratios, std::uint64_t seed) {
  if (ids.empty()) throw Error(ErrorCode::InvalidArgument, "at least one patient is required");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Xoshiro256 rng(derive_seed(seed, stream_tag("split.patients")));
  shuffle(ids.begin(), ids.end(), rng);

  const std::size_t n = ids.size();
  auto ceil_part = [n](double r) {
    return static_cast<std::size_t>(std::ceil(r * static_cast<double>(n) - 1e-9));
  };
  const std::size_t n_train = std::min(n, ceil_part(ratios.train));
  const std::size_t n_val = std::min(n - n_train, ceil_part(ratios.val));

  SplitAssignment a;
  a.ratios = ratios;
  a.seed = seed;
  for (std::size_t i = 0; i < n; ++i)
    a.by_patient[ids[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
  return a;
}

std::vector<SliceSample> preprocess_volume(const Volume& volume, const LabelVolume& labels,
                                           const std::string& dataset_id, const std::string& patient_id,
                                           const PreprocessConfig& cfg) {
  const auto slices = trim_peripheral(extract_slices(volume, labels), cfg.trim_fraction_per_end);
  std::vector<SliceSample> out;
  for (const auto& s : slices) {
    auto targets = explode_targets_and_filter(s.labels, cfg.min_mask_pixels);
    if (targets.empty()) continue;
    Grid2<float> image = s.image;
    if (cfg.target_size > 0 && (image.height != cfg.target_size || image.width != cfg.target_size)) {
      image = resize_bilinear(image, cfg.target_size, cfg.target_size);
      for (auto& t : targets) t.mask = resize_nearest(t.mask, cfg.target_size, cfg.target_size);
    }
    const RgbImage rgb = normalize_to_u8(image);
    for (auto& t : targets) {
      std::vector<BinaryMask> parts;
      if (cfg.split_components)
        parts = connected_components(t.mask);
      else
        parts.push_back(std::move(t.mask));
      for (std::size_t c = 0; c < parts.size(); ++c) {
        if (foreground_count(parts[c]) < cfg.min_mask_pixels) continue;
        SliceSample sample;
        sample.image = rgb;
        sample.mask = std::move(parts[c]);
        sample.meta.dataset_id = dataset_id;
        sample.meta.patient_id = patient_id;
        sample.meta.slice_index = s.index;
        sample.meta.target_id = t.target_id;
        const auto name = labels.target_names.find(t.target_id);
        sample.meta.target_name =
            name != labels.target_names.end() ? name->second : "target_" + std::to_string(t.target_id);
        sample.meta.component = cfg.split_components ? static_cast<int>(c) : -1;
        sample.key = sample_key(sample.meta);
        out.push_back(std::move(sample));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const SliceSample& a, const SliceSample& b) { return a.key < b.key; });
  return out;
}

// ---- corpus on disk ----------------------------------------------------------

namespace {

std::string payload_stem(const std::string& key) {
  std::string s;
  for (char c : key) {
    if (c == '/')
      s += "__";
    else if (c == '#')
      s += "_c";
    else
      s += c;
  }
  return s;
}

Volume grid_to_volume(std::size_t h, std::size_t w, std::vector<float> values) {
  Volume v;
  v.dims = {w, h, 1};
  v.voxels = std::move(values);
  return v;
}

}  // namespace

void write_corpus(const std::filesystem::path& dir, const std::vector<CorpusEntry>& entries) {
  std::filesystem::create_directories(dir / "samples");
  std::vector<const CorpusEntry*> order;
  for (const auto& e : entries) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->sample.key < b->sample.key; });

  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw Error(ErrorCode::IoError, "cannot write manifest in " + dir.string());
  for (const CorpusEntry* e : order) {
    const SliceSample& s = e->sample;
    const std::string stem = payload_stem(s.key);
    std::vector<float> img(s.image.height * s.image.width), msk(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
      img[i] = s.image.data[3 * i];
      msk[i] = s.mask.data[i];
    }
    auto iv = grid_to_volume(s.image.height, s.image.width, std::move(img));
    iv.source = s.key;
    auto mv = grid_to_volume(s.mask.height, s.mask.width, std::move(msk));
    mv.source = s.key;
    native::write_files(iv, dir / "samples" / (stem + ".img"));
    native::write_files(mv, dir / "samples" / (stem + ".mask"));

    nlohmann::ordered_json j;
    j["key"] = s.key;
    j["split"] = split_name(e->split);
    j["dataset_id"] = s.meta.dataset_id;
    j["patient_id"] = s.meta.patient_id;
    j["slice_index"] = s.meta.slice_index;
    j["target_id"] = s.meta.target_id;
    j["target_name"] = s.meta.target_name;
    j["component"] = s.meta.component;
    j["dims"] = {s.image.height, s.image.width};
    j["mask_pixels"] = foreground_count(s.mask);
    j["image"] = "samples/" + stem + ".img";
    j["mask"] = "samples/" + stem + ".mask";
    manifest << j.dump() << '\n';
  }
}

std::vector<CorpusEntry> read_corpus(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + manifest.string());
  const auto root = manifest.parent_path();
  std::vector<CorpusEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CorpusEntry e;
    e.split = parse_split(j.at("split").get<std::string>());
    SliceSample& s = e.sample;
    s.key = j.at("key").get<std::string>();
    s.meta.dataset_id = j.at("dataset_id").get<std::string>();
    s.meta.patient_id = j.at("patient_id").get<std::string>();
    s.meta.slice_index = j.at("slice_index").get<std::size_t>();
    s.meta.target_id = j.at("target_id").get<std::uint16_t>();
    s.meta.target_name = j.at("target_name").get<std::string>();
    s.meta.component = j.value("component", -1);
    const Volume iv = native::read_files(root / j.at("image").get<std::string>());
    const Volume mv = native::read_files(root / j.at("mask").get<std::string>());
    const std::size_t w = iv.dims[0], h = iv.dims[1];
    if (mv.dims != iv.dims) throw Error(ErrorCode::DimMismatch, "image/mask payload dims differ for " + s.key);
    s.image = RgbImage{h, w, std::vector<std::uint8_t>(h * w * 3)};
    s.mask = BinaryMask(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      const auto u = static_cast<std::uint8_t>(iv.voxels[i]);
      s.image.data[3 * i] = s.image.data[3 * i + 1] = s.image.data[3 * i + 2] = u;
      s.mask.data[i] = mv.voxels[i] != 0.0F;
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace samri
