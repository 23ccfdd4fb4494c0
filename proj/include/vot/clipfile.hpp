#pragma once

#include <string>

#include "vot/tensor.hpp"
#include "vot/trajectory.hpp"

namespace vot {

inline constexpr std::uint8_t kRoleTop = 0;
inline constexpr std::uint8_t kRoleBottom = 1;

// "CGPV" | u16 version | u8 role | u16 T,H,W,C (little-endian) | T*H*W*C
// bytes of row-major, frame-major u8 RGB. 15-byte header.
void write_clip(const Tensor<std::uint8_t>& clip, std::uint8_t role, const std::string& path);
Tensor<std::uint8_t> read_clip(const std::string& path, std::uint8_t* role_out = nullptr);

// CSV with header "i,x,y".
void write_traj_csv(const TrajectoryLabel& label, const std::string& path);
TrajectoryLabel read_traj_csv(const std::string& path);

}  // namespace vot
