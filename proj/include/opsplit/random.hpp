#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace opsplit {

using Rng = std::mt19937_64;

/// Independent stream seed for (master, label, index). Adding a new label never
/// perturbs the streams of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

/// d x n matrix of independent standard normals, filled column by column.
Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index d, Eigen::Index n);

}  // namespace opsplit
