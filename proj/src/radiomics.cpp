#include "survrec/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "survrec/error.hpp"

namespace survrec {

void VoxelGrid::validate() const {
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw Error(ErrorKind::Shape, "voxel grid: zero dimension");
  if (intensities.size() != dims[0] * dims[1] * dims[2]) {
    throw Error(ErrorKind::Shape, "voxel grid: intensity count does not match dims");
  }
  for (double s : spacing) {
    if (!(s > 0.0)) throw Error(ErrorKind::Parameter, "voxel grid: spacing must be positive");
  }
}

void RegionMask::validate() const {
  if (occupied.size() != dims[0] * dims[1] * dims[2]) {
    throw Error(ErrorKind::Shape, "region mask: voxel count does not match dims");
  }
}

std::size_t RegionMask::count() const {
  return static_cast<std::size_t>(std::count_if(occupied.begin(), occupied.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

void check_pair(const VoxelGrid& grid, const RegionMask& mask) {
  grid.validate();
  mask.validate();
  if (grid.dims != mask.dims) throw Error(ErrorKind::Shape, "mask dims do not match the voxel grid");
  if (mask.count() == 0) throw Error(ErrorKind::EmptyRegion, "region mask is empty");
}

std::vector<double> masked_values(const VoxelGrid& grid, const RegionMask& mask) {
  std::vector<double> v;
  for (std::size_t i = 0; i < grid.intensities.size(); ++i) {
    if (mask.occupied[i]) v.push_back(grid.intensities[i]);
  }
  return v;
}

bool inside(const Dims& dims, long x, long y, long z) {
  return x >= 0 && y >= 0 && z >= 0 && x < static_cast<long>(dims[0]) && y < static_cast<long>(dims[1]) &&
         z < static_cast<long>(dims[2]);
}

}  // namespace

FeatureMap first_order(const VoxelGrid& grid, const RegionMask& mask) {
  check_pair(grid, mask);
  std::vector<double> v = masked_values(grid, mask);
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;

  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  const double median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);

  double skewness = 0.0;
  if (sorted.front() != sorted.back()) {
    double m2 = 0.0;
    double m3 = 0.0;
    for (double x : v) {
      const double d = x - mean;
      m2 += d * d;
      m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    skewness = m3 / std::pow(m2, 1.5);
  }
  return {{"mean", mean}, {"median", median}, {"skewness", skewness}};
}

FeatureMap shape_features(const RegionMask& mask, const Spacing& spacing) {
  mask.validate();
  for (double s : spacing) {
    if (!(s > 0.0)) throw Error(ErrorKind::Parameter, "shape: spacing must be positive");
  }
  const std::size_t count = mask.count();
  if (count == 0) throw Error(ErrorKind::EmptyRegion, "region mask is empty");

  const Dims& dims = mask.dims;
  const double volume = static_cast<double>(count) * spacing[0] * spacing[1] * spacing[2];
  const std::array<double, 3> face_area{spacing[1] * spacing[2], spacing[0] * spacing[2],
                                        spacing[0] * spacing[1]};
  double area = 0.0;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> points;
  points.reserve(count);
  for (std::size_t z = 0; z < dims[2]; ++z) {
    for (std::size_t y = 0; y < dims[1]; ++y) {
      for (std::size_t x = 0; x < dims[0]; ++x) {
        if (!mask.occupied[mask.index(x, y, z)]) continue;
        const long lx = static_cast<long>(x);
        const long ly = static_cast<long>(y);
        const long lz = static_cast<long>(z);
        for (int axis = 0; axis < 3; ++axis) {
          for (int sign : {-1, 1}) {
            const long nx = lx + (axis == 0 ? sign : 0);
            const long ny = ly + (axis == 1 ? sign : 0);
            const long nz = lz + (axis == 2 ? sign : 0);
            const bool exposed =
                !inside(dims, nx, ny, nz) ||
                !mask.occupied[mask.index(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny),
                                          static_cast<std::size_t>(nz))];
            if (exposed) area += face_area[static_cast<std::size_t>(axis)];
          }
        }
        points.emplace_back(static_cast<double>(x) * spacing[0], static_cast<double>(y) * spacing[1],
                            static_cast<double>(z) * spacing[2]);
        centroid += points.back();
      }
    }
  }
  centroid /= static_cast<double>(count);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) cov += (p - centroid) * (p - centroid).transpose();
  cov /= static_cast<double>(count);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
  const double major = eig.eigenvalues()[2];
  const double minor = std::max(0.0, eig.eigenvalues()[1]);
  const double elongation = major > 0.0 ? std::sqrt(minor / major) : 1.0;

  const double sphericity = std::cbrt(std::numbers::pi) * std::pow(6.0 * volume, 2.0 / 3.0) / area;
  return {{"volume", volume}, {"surface_area", area}, {"sphericity", sphericity}, {"elongation", elongation}};
}

std::vector<Offset> default_offsets() {
  std::vector<Offset> out;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        // keep the lexicographically positive half of the 26 neighbours
        if (dz > 0 || (dz == 0 && dy > 0) || (dz == 0 && dy == 0 && dx > 0)) out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

std::vector<int> discretize(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels) {
  if (levels < 2) throw Error(ErrorKind::Parameter, "texture: levels must be >= 2");
  check_pair(grid, mask);
  const std::vector<double> v = masked_values(grid, mask);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double min = *lo;
  const double range = *hi - *lo;
  std::vector<int> out(grid.intensities.size(), -1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!mask.occupied[i]) continue;
    if (range == 0.0) {
      out[i] = 0;
      continue;
    }
    const double scaled = (grid.intensities[i] - min) / range * static_cast<double>(levels);
    out[i] = std::min(static_cast<int>(levels) - 1, static_cast<int>(std::floor(scaled)));
  }
  return out;
}

TextureMatrices texture_matrices(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels,
                                 std::span<const Offset> offsets) {
  const std::vector<int> level = discretize(grid, mask, levels);
  std::vector<Offset> defaults;
  if (offsets.empty()) {
    defaults = default_offsets();
    offsets = defaults;
  }
  const Dims& dims = grid.dims;
  const auto L = static_cast<Eigen::Index>(levels);
  auto level_at = [&](long x, long y, long z) {
    if (!inside(dims, x, y, z)) return -1;
    return level[grid.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z))];
  };

  TextureMatrices tm;
  tm.levels = levels;
  tm.glcm = Eigen::MatrixXd::Zero(L, L);
  const std::size_t max_run = std::max({dims[0], dims[1], dims[2]});
  tm.glrlm = Eigen::MatrixXd::Zero(L, static_cast<Eigen::Index>(max_run));

  for (const Offset& o : offsets) {
    for (std::size_t z = 0; z < dims[2]; ++z) {
      for (std::size_t y = 0; y < dims[1]; ++y) {
        for (std::size_t x = 0; x < dims[0]; ++x) {
          const int g = level[grid.index(x, y, z)];
          if (g < 0) continue;
          const long lx = static_cast<long>(x);
          const long ly = static_cast<long>(y);
          const long lz = static_cast<long>(z);
          const int h = level_at(lx + o[0], ly + o[1], lz + o[2]);
          if (h >= 0) {
            tm.glcm(g, h) += 1.0;
            tm.glcm(h, g) += 1.0;
          }
          // A run starts where the predecessor along o is not the same level.
          if (level_at(lx - o[0], ly - o[1], lz - o[2]) == g) continue;
          std::size_t run = 1;
          long cx = lx + o[0];
          long cy = ly + o[1];
          long cz = lz + o[2];
          while (level_at(cx, cy, cz) == g) {
            ++run;
            cx += o[0];
            cy += o[1];
            cz += o[2];
          }
          tm.glrlm(g, static_cast<Eigen::Index>(run - 1)) += 1.0;
        }
      }
    }
  }
  const double total = tm.glcm.sum();
  if (total > 0.0) tm.glcm /= total;

  // Size zones: 26-connected components of equal level.
  std::vector<char> visited(level.size(), 0);
  std::vector<std::pair<int, std::size_t>> zones;
  std::size_t largest = 0;
  std::vector<std::array<long, 3>> stack;
  for (std::size_t z = 0; z < dims[2]; ++z) {
    for (std::size_t y = 0; y < dims[1]; ++y) {
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const std::size_t start = grid.index(x, y, z);
        if (level[start] < 0 || visited[start]) continue;
        const int g = level[start];
        std::size_t size = 0;
        visited[start] = 1;
        stack.push_back({static_cast<long>(x), static_cast<long>(y), static_cast<long>(z)});
        while (!stack.empty()) {
          const auto [cx, cy, cz] = stack.back();
          stack.pop_back();
          ++size;
          for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                const long nx = cx + dx;
                const long ny = cy + dy;
                const long nz = cz + dz;
                if (level_at(nx, ny, nz) != g) continue;
                const std::size_t ni = grid.index(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny),
                                                  static_cast<std::size_t>(nz));
                if (visited[ni]) continue;
                visited[ni] = 1;
                stack.push_back({nx, ny, nz});
              }
            }
          }
        }
        zones.emplace_back(g, size);
        largest = std::max(largest, size);
      }
    }
  }
  tm.glszm = Eigen::MatrixXd::Zero(L, static_cast<Eigen::Index>(largest));
  for (const auto& [g, size] : zones) tm.glszm(g, static_cast<Eigen::Index>(size - 1)) += 1.0;
  return tm;
}

double glcm_entropy(const Eigen::MatrixXd& glcm) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < glcm.size(); ++i) {
    const double p = glcm.data()[i];
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

double short_run_emphasis(const Eigen::MatrixXd& glrlm) {
  double weighted = 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < glrlm.cols(); ++r) {
    const double runs = glrlm.col(r).sum();
    const double len = static_cast<double>(r + 1);
    weighted += runs / (len * len);
    total += runs;
  }
  return total > 0.0 ? weighted / total : 0.0;
}

double zone_variance(const Eigen::MatrixXd& glszm) {
  const double total = glszm.sum();
  if (total <= 0.0) return 0.0;
  double mean = 0.0;
  for (Eigen::Index s = 0; s < glszm.cols(); ++s) mean += glszm.col(s).sum() / total * static_cast<double>(s + 1);
  double var = 0.0;
  for (Eigen::Index s = 0; s < glszm.cols(); ++s) {
    const double d = static_cast<double>(s + 1) - mean;
    var += glszm.col(s).sum() / total * d * d;
  }
  return var;
}

FeatureMap texture_features(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels,
                            std::span<const Offset> offsets) {
  const TextureMatrices tm = texture_matrices(grid, mask, levels, offsets);
  return {{"glcm_entropy", glcm_entropy(tm.glcm)},
          {"glrlm_short_run_emphasis", short_run_emphasis(tm.glrlm)},
          {"glszm_zone_variance", zone_variance(tm.glszm)}};
}

FeatureMap extract_radiomics(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels) {
  FeatureMap out = first_order(grid, mask);
  out.merge(shape_features(mask, grid.spacing));
  out.merge(texture_features(grid, mask, levels));
  return out;
}

namespace {

void read_header(std::istream& in, Dims& dims, Spacing& spacing, const char* what) {
  std::string token;
  if (!(in >> token) || token != "dims" || !(in >> dims[0] >> dims[1] >> dims[2])) {
    throw Error(ErrorKind::Parse, std::string(what) + ": expected \"dims nx ny nz\" header");
  }
  if (!(in >> token) || token != "spacing" || !(in >> spacing[0] >> spacing[1] >> spacing[2])) {
    throw Error(ErrorKind::Parse, std::string(what) + ": expected \"spacing sx sy sz\" line");
  }
}

}  // namespace

VoxelGrid read_voxel_grid(std::istream& in) {
  VoxelGrid grid;
  read_header(in, grid.dims, grid.spacing, "voxel grid");
  const std::size_t n = grid.dims[0] * grid.dims[1] * grid.dims[2];
  grid.intensities.reserve(n);
  double v;
  while (in >> v) grid.intensities.push_back(v);
  if (!in.eof()) throw Error(ErrorKind::Parse, "voxel grid: non-numeric intensity");
  grid.validate();
  return grid;
}

VoxelGrid read_voxel_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open voxel grid " + path.string());
  return read_voxel_grid(in);
}

RegionMask read_region_mask(std::istream& in) {
  RegionMask mask;
  Spacing ignored;
  read_header(in, mask.dims, ignored, "region mask");
  int v;
  while (in >> v) {
    if (v != 0 && v != 1) throw Error(ErrorKind::Parse, "region mask: values must be 0 or 1");
    mask.occupied.push_back(static_cast<std::uint8_t>(v));
  }
  if (!in.eof()) throw Error(ErrorKind::Parse, "region mask: non-integer value");
  mask.validate();
  return mask;
}

RegionMask read_region_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open region mask " + path.string());
  return read_region_mask(in);
}

void write_voxel_grid(std::ostream& out, const VoxelGrid& grid) {
  out << "dims " << grid.dims[0] << ' ' << grid.dims[1] << ' ' << grid.dims[2] << '\n';
  out << "spacing " << grid.spacing[0] << ' ' << grid.spacing[1] << ' ' << grid.spacing[2] << '\n';
  for (std::size_t i = 0; i < grid.intensities.size(); ++i) {
    out << grid.intensities[i] << ((i + 1) % grid.dims[0] == 0 ? '\n' : ' ');
  }
}

void write_region_mask(std::ostream& out, const RegionMask& mask, const Spacing& spacing) {
  out << "dims " << mask.dims[0] << ' ' << mask.dims[1] << ' ' << mask.dims[2] << '\n';
  out << "spacing " << spacing[0] << ' ' << spacing[1] << ' ' << spacing[2] << '\n';
  for (std::size_t i = 0; i < mask.occupied.size(); ++i) {
    out << static_cast<int>(mask.occupied[i]) << ((i + 1) % mask.dims[0] == 0 ? '\n' : ' ');
  }
}

}  // namespace survrec
