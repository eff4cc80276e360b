#include "grm/data.hpp"

#include "byteio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace grm {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr char kGridMagic[4] = {'G', 'R', 'M', 'S'};
constexpr std::uint32_t kGridVersion = 1;

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void ClassDataset::validate() const {
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw DataError("dataset has " + std::to_string(inputs.rows()) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (classes < 2) throw DataError("dataset needs at least 2 classes");
  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
    ++seen[static_cast<std::size_t>(labels[i])];
  }
  for (int c = 0; c < classes; ++c) {
    if (seen[static_cast<std::size_t>(c)] == 0) {
      throw DataError("class " + std::to_string(c) + " has no samples");
    }
  }
}

double SegDataset::background_fraction() const {
  if (masks.empty()) return 0.0;
  const auto bg = std::count(masks.begin(), masks.end(), 0);
  return static_cast<double>(bg) / static_cast<double>(masks.size());
}

void SegDataset::validate() const {
  const auto expected = static_cast<std::size_t>(images) * height * width;
  if (masks.size() != expected || static_cast<std::size_t>(cells.rows()) != expected) {
    throw DataError("segmentation dataset: expected " + std::to_string(expected) +
                    " cells, have " + std::to_string(cells.rows()) + " rows and " +
                    std::to_string(masks.size()) + " mask values");
  }
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i] < 0 || masks[i] >= classes) {
      throw DataError("mask value " + std::to_string(masks[i]) + " at cell " +
                      std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

ClassDataset gen_blobs(std::uint64_t seed, int classes, int n_per_class, int dim,
                       double spread) {
  if (classes < 2) throw DataError("gen_blobs: classes must be >= 2");
  if (dim < 2) throw DataError("gen_blobs: dim must be >= 2");
  if (n_per_class < 1) throw DataError("gen_blobs: n_per_class must be >= 1");
  if (!(spread >= 0.0)) throw DataError("gen_blobs: spread must be >= 0");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Matrix means(classes, dim);
  for (int c = 0; c < classes; ++c) {
    double norm = 0.0;
    while (norm < 1e-9) {
      for (int j = 0; j < dim; ++j) means(c, j) = unit(rng);
      norm = means.row(c).norm();
    }
    means.row(c) /= norm;
  }

  ClassDataset ds;
  ds.classes = classes;
  ds.name = "blobs";
  ds.seed = seed;
  ds.inputs.resize(static_cast<Eigen::Index>(classes) * n_per_class, dim);
  ds.labels.reserve(static_cast<std::size_t>(ds.inputs.rows()));
  Eigen::Index row = 0;
  for (int i = 0; i < n_per_class; ++i) {
    for (int c = 0; c < classes; ++c, ++row) {
      for (int j = 0; j < dim; ++j) {
        ds.inputs(row, j) = means(c, j) + spread * unit(rng);
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

SegDataset gen_shapes_seg(std::uint64_t seed, const ShapesOptions& o) {
  if (o.classes < 2) throw DataError("gen_shapes_seg: classes must be >= 2");
  if (o.height < 1 || o.width < 1 || o.images < 1) {
    throw DataError("gen_shapes_seg: height, width and images must be positive");
  }
  if (!(o.noise >= 0.0)) throw DataError("gen_shapes_seg: noise must be >= 0");
  const int area = o.height * o.width;
  const int target = static_cast<int>(std::lround((1.0 - o.bg_fraction) * area));
  if (!(o.bg_fraction > 0.0 && o.bg_fraction < 1.0) || target < 1 || target >= area) {
    throw DataError("gen_shapes_seg: bg_fraction " + std::to_string(o.bg_fraction) +
                    " impossible for a " + std::to_string(o.height) + "x" +
                    std::to_string(o.width) + " grid");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto uniform_int = [&rng](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  SegDataset ds;
  ds.images = o.images;
  ds.height = o.height;
  ds.width = o.width;
  ds.classes = o.classes;
  ds.masks.assign(static_cast<std::size_t>(o.images) * area, 0);

  std::vector<int> palette(static_cast<std::size_t>(o.classes - 1));
  std::iota(palette.begin(), palette.end(), 1);

  for (int n = 0; n < o.images; ++n) {
    int* mask = ds.masks.data() + static_cast<std::ptrdiff_t>(n) * area;
    std::shuffle(palette.begin(), palette.end(), rng);
    const int shapes = uniform_int(1, o.classes - 1);
    int painted = 0;

    auto paint = [&](int cls, int budget) {
      const int w_lo = std::max(1, (budget + o.height - 1) / o.height);
      const int w_hi = std::max(w_lo, std::min(o.width, budget));
      const int w = uniform_int(w_lo, w_hi);
      const int h = std::clamp(static_cast<int>(std::lround(double(budget) / w)), 1,
                               o.height);
      const int y0 = uniform_int(0, o.height - h);
      const int x0 = uniform_int(0, o.width - w);
      for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
          int& cell = mask[y * o.width + x];
          if (cell == 0) {
            cell = cls;
            ++painted;
          }
        }
      }
    };

    for (int s = 0; s < shapes; ++s) {
      const int share = std::max(1, (target - painted) / (shapes - s));
      paint(palette[static_cast<std::size_t>(s)], share);
    }
    // Overlaps leave a deficit; top up with smaller rectangles.
    for (int attempt = 0; attempt < 16 && painted < target; ++attempt) {
      paint(palette[static_cast<std::size_t>(uniform_int(0, shapes - 1))],
            target - painted);
    }
  }

  ds.cells = Matrix::Zero(static_cast<Eigen::Index>(ds.masks.size()), o.classes);
  for (std::size_t i = 0; i < ds.masks.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int j = 0; j < o.classes; ++j) {
      ds.cells(r, j) = (ds.masks[i] == j ? 1.0 : 0.0) + o.noise * noise(rng);
    }
  }
  return ds;
}

ClassDataset load_idx(const std::filesystem::path& images,
                      const std::filesystem::path& labels) {
  const io::Bytes img_bytes = io::read_file(images);
  const io::Bytes lbl_bytes = io::read_file(labels);
  try {
    io::Reader img(img_bytes, images.filename().string());
    const std::uint32_t magic = img.u32be();
    if (magic != kIdxImages) {
      throw DataError(images.filename().string() + ": bad magic at byte 0: 0x" +
                      hex(magic).substr(8) + ", expected 0x00000803");
    }
    const std::uint32_t n = img.u32be();
    const std::uint32_t rows = img.u32be();
    const std::uint32_t cols = img.u32be();
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    const std::size_t expected = 16 + static_cast<std::size_t>(n) * pixels;
    if (img_bytes.size() < expected) {
      throw DataError(images.filename().string() + ": truncated: expected " +
                      std::to_string(expected) + " bytes, got " +
                      std::to_string(img_bytes.size()));
    }

    io::Reader lbl(lbl_bytes, labels.filename().string());
    const std::uint32_t lmagic = lbl.u32be();
    if (lmagic != kIdxLabels) {
      throw DataError(labels.filename().string() + ": bad magic at byte 0: 0x" +
                      hex(lmagic).substr(8) + ", expected 0x00000801");
    }
    const std::uint32_t ln = lbl.u32be();
    if (ln != n) {
      throw DataError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(ln) + " labels (byte 4)");
    }
    if (lbl_bytes.size() < 8 + static_cast<std::size_t>(n)) {
      throw DataError(labels.filename().string() + ": truncated: expected " +
                      std::to_string(8 + static_cast<std::size_t>(n)) +
                      " bytes, got " + std::to_string(lbl_bytes.size()));
    }

    ClassDataset ds;
    ds.name = images.stem().string();
    ds.inputs.resize(n, static_cast<Eigen::Index>(pixels));
    ds.labels.resize(n);
    int max_label = -1;
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < pixels; ++j) {
        ds.inputs(i, static_cast<Eigen::Index>(j)) = img.byte() / 255.0;
      }
      ds.labels[i] = lbl.byte();
      max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = max_label + 1;
    return ds;
  } catch (const DataError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& s, std::size_t row, std::size_t col) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("csv row " + std::to_string(row) + " column " +
                    std::to_string(col) + ": '" + s + "' is not a number");
  }
}

}  // namespace

ClassDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_csv_line(line);
  const auto label_it = std::find(header.begin(), header.end(), "label");
  if (label_it == header.end()) {
    throw DataError(path.string() + ": header has no 'label' column");
  }
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t d = header.size() - 1;
  if (d == 0) throw DataError(path.string() + ": no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                      std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const double v = parse_number(fields[c], row, c);
      if (c == label_col) {
        if (v < 0 || v != std::floor(v)) {
          throw DataError(path.string() + ": row " + std::to_string(row) +
                          ": label must be a non-negative integer");
        }
        labels.push_back(static_cast<int>(v));
        max_label = std::max(max_label, labels.back());
      } else {
        values.push_back(v);
      }
    }
  }
  ClassDataset ds;
  ds.name = path.stem().string();
  ds.inputs = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                             Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(labels.size()),
      static_cast<Eigen::Index>(d));
  ds.labels = std::move(labels);
  ds.classes = max_label + 1;
  return ds;
}

std::string blobs_csv(const ClassDataset& ds) {
  std::ostringstream out;
  out << "label";
  for (Eigen::Index j = 0; j < ds.dim(); ++j) out << ",x" << j;
  out << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    out << ds.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.inputs(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

void save_grid(const SegDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  io::Bytes out(kGridMagic, kGridMagic + 4);
  io::put_u32le(out, kGridVersion);
  io::put_u32le(out, static_cast<std::uint32_t>(ds.images));
  io::put_u32le(out, static_cast<std::uint32_t>(ds.height));
  io::put_u32le(out, static_cast<std::uint32_t>(ds.width));
  io::put_u32le(out, static_cast<std::uint32_t>(ds.dim()));
  io::put_u32le(out, static_cast<std::uint32_t>(ds.classes));
  for (Eigen::Index r = 0; r < ds.cells.rows(); ++r) {
    for (Eigen::Index c = 0; c < ds.cells.cols(); ++c) io::put_f64le(out, ds.cells(r, c));
  }
  for (int m : ds.masks) io::put_i32le(out, m);
  io::write_atomic(path, out);
}

SegDataset load_grid(const std::filesystem::path& path) {
  const io::Bytes bytes = io::read_file(path);
  try {
    io::Reader in(bytes, path.filename().string());
    if (in.text(4) != std::string(kGridMagic, 4)) {
      throw DataError(path.filename().string() + ": bad magic at byte 0");
    }
    const auto version = in.u32le();
    if (version != kGridVersion) {
      throw DataError(path.filename().string() + ": unsupported grid version " +
                      std::to_string(version));
    }
    SegDataset ds;
    ds.images = static_cast<int>(in.u32le());
    ds.height = static_cast<int>(in.u32le());
    ds.width = static_cast<int>(in.u32le());
    const auto dim = static_cast<Eigen::Index>(in.u32le());
    ds.classes = static_cast<int>(in.u32le());
    const auto n = static_cast<Eigen::Index>(ds.images) * ds.height * ds.width;
    in.need(static_cast<std::size_t>(n * dim) * 8 + static_cast<std::size_t>(n) * 4);
    ds.cells.resize(n, dim);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < dim; ++c) ds.cells(r, c) = in.f64le();
    }
    ds.masks.resize(static_cast<std::size_t>(n));
    for (auto& m : ds.masks) m = in.i32le();
    ds.validate();
    return ds;
  } catch (const DataError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

Split split(const ClassDataset& ds, double test_frac, std::uint64_t seed) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) {
    throw DataError("split: test_frac must lie in (0, 1)");
  }
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.classes));
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(static_cast<int>(i));
  }
  // Largest-remainder allocation keeps the total at round(test_frac * N) and
  // every class within one sample of its exact share.
  const std::size_t c = by_class.size();
  std::vector<int> n_test(c);
  std::vector<std::pair<double, std::size_t>> remainders;
  long assigned = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const double share = test_frac * static_cast<double>(by_class[k].size());
    n_test[k] = static_cast<int>(std::floor(share));
    assigned += n_test[k];
    remainders.emplace_back(share - n_test[k], k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const long target = std::lround(test_frac * static_cast<double>(ds.labels.size()));
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) {
    ++n_test[remainders[i].second];
  }
  std::mt19937_64 rng(seed);
  Split out;
  for (std::size_t k = 0; k < c; ++k) {
    auto& members = by_class[k];
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<int>(members.size());
    const int take = n >= 2 ? std::clamp(n_test[k], 1, n - 1) : n_test[k];
    out.test.insert(out.test.end(), members.begin(), members.begin() + take);
    out.train.insert(out.train.end(), members.begin() + take, members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  }
  return out;
}

std::vector<int> gather(const std::vector<int>& v, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v.at(static_cast<std::size_t>(i)));
  return out;
}

ClassDataset subset(const ClassDataset& ds, const std::vector<int>& rows) {
  ClassDataset out;
  out.inputs = gather_rows(ds.inputs, rows);
  out.labels = gather(ds.labels, rows);
  out.classes = ds.classes;
  out.name = ds.name;
  out.seed = ds.seed;
  return out;
}

SegDataset subset(const SegDataset& ds, const std::vector<int>& images) {
  SegDataset out;
  out.images = static_cast<int>(images.size());
  out.height = ds.height;
  out.width = ds.width;
  out.classes = ds.classes;
  const auto per = ds.cells_per_image();
  out.cells.resize(per * out.images, ds.dim());
  out.masks.reserve(static_cast<std::size_t>(per * out.images));
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto src = static_cast<Eigen::Index>(images[k]) * per;
    out.cells.middleRows(static_cast<Eigen::Index>(k) * per, per) =
        ds.cells.middleRows(src, per);
    out.masks.insert(out.masks.end(), ds.masks.begin() + src,
                     ds.masks.begin() + src + per);
  }
  return out;
}

std::vector<std::vector<int>> batches(Eigen::Index n, int batch_size,
                                      std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw DataError("batch size must be >= 1");
  if (batch_size > n) {
    throw DataError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                    std::to_string(n));
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::string fingerprint(const ClassDataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv1a(ds.inputs.data(), static_cast<std::size_t>(ds.inputs.size()) * sizeof(double), h);
  h = fnv1a(ds.labels.data(), ds.labels.size() * sizeof(int), h);
  return hex(h);
}

std::string fingerprint(const SegDataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv1a(ds.cells.data(), static_cast<std::size_t>(ds.cells.size()) * sizeof(double), h);
  h = fnv1a(ds.masks.data(), ds.masks.size() * sizeof(int), h);
  return hex(h);
}

}  // namespace grm
