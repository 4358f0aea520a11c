#include "vaedist/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace vaedist {

// ---------------------------------------------------------------------------
// XYSquares

void XYSquaresParams::validate() const {
  if (image_size < 1 || square_size < 1 || grid_points < 1 || spacing < 1)
    throw std::invalid_argument("xysquares sizes must be positive");
  if (num_squares < 1 || num_squares > 3)
    throw std::invalid_argument("xysquares supports 1 to 3 squares");
  if ((grid_points - 1) * spacing + square_size > image_size)
    throw std::invalid_argument(
        "xysquares grid does not fit: (grid_points - 1) * spacing + "
        "square_size exceeds image_size");
}

static FactorSpace xysquares_space(const XYSquaresParams &p) {
  static const char *colour = "RGB";
  std::vector<std::string> names;
  for (int k = 0; k < p.num_squares; ++k) {
    names.push_back(std::string("x_") + colour[k]);
    names.push_back(std::string("y_") + colour[k]);
  }
  return FactorSpace(std::vector<int>(2 * p.num_squares, p.grid_points),
                     std::move(names));
}

XYSquares::XYSquares(XYSquaresParams params)
    : params_((params.validate(), params)), space_(xysquares_space(params_)) {}

static void render_xysquares(const XYSquaresParams &p, const FactorPos &pos,
                             Observation &obs) {
  if (pos.size() != static_cast<std::size_t>(2 * p.num_squares))
    throw InvalidPosition("xysquares position must have 2 * num_squares coords");
  for (std::size_t i = 0; i < pos.size(); ++i)
    if (pos[i] < 0 || pos[i] >= p.grid_points)
      throw InvalidPosition("xysquares coordinate out of range");

  obs.channels = p.num_squares;
  obs.height = obs.width = p.image_size;
  obs.data.assign(static_cast<std::size_t>(p.num_squares) * p.image_size * p.image_size,
                  0.0);
  for (int k = 0; k < p.num_squares; ++k) {
    int x0 = pos[2 * k] * p.spacing;
    int y0 = pos[2 * k + 1] * p.spacing;
    for (int y = y0; y < y0 + p.square_size; ++y)
      for (int x = x0; x < x0 + p.square_size; ++x)
        obs.at(k, y, x) = 1.0;
  }
}

Observation xysquares_generate(const XYSquaresParams &p, const FactorPos &pos) {
  p.validate();
  Observation obs;
  render_xysquares(p, pos, obs);
  return obs;
}

Observation XYSquares::observation(const FactorPos &pos) const {
  Observation obs;
  render_xysquares(params_, pos, obs);
  return obs;
}

void XYSquares::observe_into(const FactorPos &pos, Observation &out) const {
  render_xysquares(params_, pos, out);
}

std::string XYSquares::name() const {
  return "xysquares_s" + std::to_string(params_.spacing);
}

std::optional<ChannelStats> XYSquares::known_stats() const {
  // Every channel of every observation holds exactly square_size^2 ones, so
  // the per-observation statistics are the same for the whole dataset.
  const double ones = static_cast<double>(params_.square_size) * params_.square_size;
  const double n = static_cast<double>(params_.image_size) * params_.image_size;
  ChannelStats s;
  s.mean.assign(params_.num_squares, ones / n);
  s.std.assign(params_.num_squares, std::sqrt((ones - ones * ones / n) / (n - 1.0)));
  return s;
}

// ---------------------------------------------------------------------------
// FunctionDataset

FunctionDataset::FunctionDataset(std::string name, FactorSpace space,
                                 int channels, int height, int width,
                                 Generator gen)
    : name_(std::move(name)), space_(std::move(space)), channels_(channels),
      height_(height), width_(width), gen_(std::move(gen)) {}

Observation FunctionDataset::observation(const FactorPos &pos) const {
  if (!space_.valid(pos))
    throw InvalidPosition("position outside factor space");
  Observation o = gen_(pos);
  if (o.channels != channels_ || o.height != height_ || o.width != width_)
    throw std::logic_error("generator returned an observation of the wrong shape");
  return o;
}

// ---------------------------------------------------------------------------
// NPY-backed datasets

ArrayLayout parse_layout(const std::string &tag) {
  if (tag == "NHW")
    return ArrayLayout::NHW;
  if (tag == "NHWC")
    return ArrayLayout::NHWC;
  if (tag == "NCHW")
    return ArrayLayout::NCHW;
  throw std::invalid_argument("unknown layout tag '" + tag +
                              "' (expected NHW, NHWC or NCHW)");
}

NpyDataset::NpyDataset(std::string name, NpyArray array, ArrayLayout layout,
                       FactorSpace space)
    : name_(std::move(name)), array_(std::move(array)), layout_(layout),
      space_(std::move(space)) {
  const auto &shape = array_.shape();
  std::size_t rank = layout_ == ArrayLayout::NHW ? 3 : 4;
  if (shape.size() != rank)
    throw NpyError("array rank " + std::to_string(shape.size()) +
                   " does not match layout");
  switch (layout_) {
  case ArrayLayout::NHW:
    height_ = static_cast<int>(shape[1]);
    width_ = static_cast<int>(shape[2]);
    break;
  case ArrayLayout::NHWC:
    height_ = static_cast<int>(shape[1]);
    width_ = static_cast<int>(shape[2]);
    channels_ = static_cast<int>(shape[3]);
    break;
  case ArrayLayout::NCHW:
    channels_ = static_cast<int>(shape[1]);
    height_ = static_cast<int>(shape[2]);
    width_ = static_cast<int>(shape[3]);
    break;
  }
  if (static_cast<std::int64_t>(shape[0]) != space_.total())
    throw NpyError("array holds " + std::to_string(shape[0]) +
                   " observations but the factor space has " +
                   std::to_string(space_.total()));

  if (array_.dtype() == NpyDtype::UInt8) {
    auto bytes = array_.bytes();
    bool binary = std::all_of(bytes.begin(), bytes.end(), [](std::byte b) {
      return std::to_integer<unsigned>(b) <= 1;
    });
    scale_ = binary ? 1.0 : 1.0 / 255.0;
  }
}

Observation NpyDataset::observation(const FactorPos &pos) const {
  Observation o;
  observe_into(pos, o);
  return o;
}

void NpyDataset::observe_into(const FactorPos &pos, Observation &o) const {
  std::size_t n = static_cast<std::size_t>(space_.pos_to_index(pos));
  o.channels = channels_;
  o.height = height_;
  o.width = width_;
  o.data.resize(static_cast<std::size_t>(channels_) * height_ * width_);
  std::size_t per = o.size();
  std::size_t base = n * per;
  if (layout_ == ArrayLayout::NHWC) {
    std::size_t i = base;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        for (int c = 0; c < channels_; ++c)
          o.at(c, y, x) = array_.value(i++) * scale_;
  } else {
    for (std::size_t i = 0; i < per; ++i)
      o.data[i] = array_.value(base + i) * scale_;
  }
}

PreprocessedDataset::PreprocessedDataset(const GroundTruthDataset &base,
                                         int height, int width,
                                         std::optional<ChannelStats> stats)
    : base_(base), height_(height), width_(width), stats_(std::move(stats)) {
  if (height_ < 1 || width_ < 1)
    throw std::invalid_argument("preprocessed size must be positive");
  if (stats_ && stats_->channels() != static_cast<std::size_t>(base.channels()))
    throw std::invalid_argument("channel statistics do not match dataset");
}

Observation PreprocessedDataset::observation(const FactorPos &pos) const {
  Observation o = resize_bilinear(base_.observation(pos), height_, width_);
  return stats_ ? standardise(o, *stats_) : o;
}

static std::string trim(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

static std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    out.push_back(trim(item));
  return out;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#')
      continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  DatasetManifest m;
  if (!kv.count("npy") || !kv.count("factors"))
    throw std::runtime_error("manifest must define npy and factors");
  m.name = kv.count("name") ? kv["name"] : path.stem().string();
  m.npy = kv["npy"];
  if (m.npy.is_relative())
    m.npy = path.parent_path() / m.npy;
  if (kv.count("layout"))
    m.layout = parse_layout(kv["layout"]);
  for (const auto &f : split(kv["factors"], ','))
    m.factors.push_back(std::stoi(f));
  if (kv.count("factor_names"))
    m.factor_names = split(kv["factor_names"], ',');
  return m;
}

std::unique_ptr<NpyDataset> open_manifest(const DatasetManifest &m,
                                          bool memory_map) {
  return std::make_unique<NpyDataset>(m.name, NpyArray::load(m.npy, memory_map),
                                      m.layout,
                                      FactorSpace(m.factors, m.factor_names));
}

// ---------------------------------------------------------------------------
// Preprocessing

ChannelStats channel_stats(const GroundTruthDataset &ds,
                           std::int64_t sample_count, std::mt19937_64 &rng) {
  const auto &space = ds.space();
  if (space.total() < 1 || ds.observation_size() == 0)
    throw std::invalid_argument("cannot compute statistics of an empty dataset");
  const int C = ds.channels();
  const std::size_t plane = static_cast<std::size_t>(ds.height()) * ds.width();
  if (plane < 2)
    throw std::invalid_argument("statistics need at least 2 pixels per channel");
  std::vector<long double> mean_sum(C, 0.0L), std_sum(C, 0.0L);
  const std::int64_t n_obs = sample_count > 0 ? sample_count : space.total();

  // Per observation: channel mean and sample std (n - 1 denominator), both
  // averaged over observations.
  Observation o;
  for (std::int64_t i = 0; i < n_obs; ++i) {
    ds.observe_into(sample_count > 0 ? space.sample_pos(rng) : space.index_to_pos(i), o);
    for (int c = 0; c < C; ++c) {
      long double sum = 0.0L;
      for (double v : o.channel(c))
        sum += v;
      long double m = sum / plane, ss = 0.0L;
      for (double v : o.channel(c))
        ss += (v - m) * (v - m);
      mean_sum[c] += m;
      std_sum[c] += std::sqrt(ss / (plane - 1));
    }
  }

  ChannelStats s;
  for (int c = 0; c < C; ++c) {
    s.mean.push_back(static_cast<double>(mean_sum[c] / n_obs));
    s.std.push_back(static_cast<double>(std_sum[c] / n_obs));
    if (!(s.std.back() > 0.0))
      throw std::domain_error("channel " + std::to_string(c) +
                              " has zero standard deviation");
  }
  return s;
}

static void check_stats(const Observation &obs, const ChannelStats &stats) {
  if (stats.channels() != static_cast<std::size_t>(obs.channels) ||
      stats.std.size() != stats.mean.size())
    throw std::invalid_argument("channel statistics do not match observation");
}

Observation standardise(const Observation &obs, const ChannelStats &stats) {
  check_stats(obs, stats);
  Observation out = obs;
  for (int c = 0; c < obs.channels; ++c)
    for (double &v : out.channel(c))
      v = (v - stats.mean[c]) / stats.std[c];
  return out;
}

Observation destandardise(const Observation &obs, const ChannelStats &stats) {
  check_stats(obs, stats);
  Observation out = obs;
  for (int c = 0; c < obs.channels; ++c)
    for (double &v : out.channel(c))
      v = v * stats.std[c] + stats.mean[c];
  return out;
}

namespace {

struct Tap {
  int lo, hi;
  double w_hi;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = std::max(0.0, (i + 0.5) * scale - 0.5);
    int lo = std::min(static_cast<int>(src), in - 1);
    int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

} // namespace

Observation resize_bilinear(const Observation &obs, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("output dimensions must be positive");
  if (out_h == obs.height && out_w == obs.width)
    return obs;
  auto ty = bilinear_taps(obs.height, out_h);
  auto tx = bilinear_taps(obs.width, out_w);
  Observation out(obs.channels, out_h, out_w);
  for (int c = 0; c < obs.channels; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const Tap &a = ty[y], &b = tx[x];
        double top = obs.at(c, a.lo, b.lo) * (1 - b.w_hi) + obs.at(c, a.lo, b.hi) * b.w_hi;
        double bot = obs.at(c, a.hi, b.lo) * (1 - b.w_hi) + obs.at(c, a.hi, b.hi) * b.w_hi;
        out.at(c, y, x) = top * (1 - a.w_hi) + bot * a.w_hi;
      }
  return out;
}

} // namespace vaedist
