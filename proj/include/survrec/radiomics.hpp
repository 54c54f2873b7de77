#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace survrec {

using Dims = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;

// 3D intensity lattice, x-fastest storage, spacing in millimetres.
struct VoxelGrid {
  Dims dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<double> intensities;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  void validate() const;
};

struct RegionMask {
  Dims dims{0, 0, 0};
  std::vector<std::uint8_t> occupied;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  std::size_t count() const;
  void validate() const;
};

using FeatureMap = std::map<std::string, double>;

// mean, median and Fisher skewness g1 (population moments; 0 when the
// region has zero variance).
FeatureMap first_order(const VoxelGrid& grid, const RegionMask& mask);

// volume (mm^3), surface_area (exposed voxel faces, mm^2), sphericity and
// elongation sqrt(l2/l1) of the voxel-centre covariance. Elongation is 1 for
// a region with no spatial extent.
FeatureMap shape_features(const RegionMask& mask, const Spacing& spacing);

using Offset = std::array<int, 3>;

// The 13 unique 3D neighbour directions at distance 1.
std::vector<Offset> default_offsets();

struct TextureMatrices {
  std::size_t levels = 0;
  Eigen::MatrixXd glcm;   // L x L, symmetric, sums to 1 (zero if no pairs)
  Eigen::MatrixXd glrlm;  // L x Rmax run counts, direction-merged
  Eigen::MatrixXd glszm;  // L x Smax zone counts, 26-connected
};

// Equal-width discretization of masked intensities into `levels` bins over
// the masked [min, max]; returns a level per voxel (-1 outside the mask).
std::vector<int> discretize(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels);

TextureMatrices texture_matrices(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels = 32,
                                 std::span<const Offset> offsets = {});

// glcm_entropy (bits), glrlm_short_run_emphasis, glszm_zone_variance.
FeatureMap texture_features(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels = 32,
                            std::span<const Offset> offsets = {});

double glcm_entropy(const Eigen::MatrixXd& glcm);
double short_run_emphasis(const Eigen::MatrixXd& glrlm);
double zone_variance(const Eigen::MatrixXd& glszm);

// All of the above in one map.
FeatureMap extract_radiomics(const VoxelGrid& grid, const RegionMask& mask, std::size_t levels = 32);

// Text format: "dims nx ny nz", "spacing sx sy sz", then nx*ny*nz
// whitespace-separated values (x fastest). Masks use the same layout with
// 0/1 values; their spacing line is read and ignored.
VoxelGrid read_voxel_grid(std::istream& in);
VoxelGrid read_voxel_grid(const std::filesystem::path& path);
RegionMask read_region_mask(std::istream& in);
RegionMask read_region_mask(const std::filesystem::path& path);
void write_voxel_grid(std::ostream& out, const VoxelGrid& grid);
void write_region_mask(std::ostream& out, const RegionMask& mask, const Spacing& spacing);

}  // namespace survrec
