#pragma once

// Closed triangle meshes for test objects and built-in phantoms.

#include "softocc/geometry.hpp"

namespace softocc::mesh {

// Merges vertices whose coordinates agree after rounding to `tol`, drops
// triangles that collapse, and returns an indexed mesh.
inline TriMesh weld(const std::vector<std::array<Vec3, 3>>& soup, double tol = 1e-9) {
  struct KeyHash {
    std::size_t operator()(const std::array<long long, 3>& k) const {
      return hash_all(static_cast<std::uint64_t>(k[0]), static_cast<std::uint64_t>(k[1]), static_cast<std::uint64_t>(k[2]));
    }
  };
  std::unordered_map<std::array<long long, 3>, int, KeyHash> index;
  TriMesh m;
  auto vid = [&](const Vec3& p) {
    const std::array<long long, 3> k{std::llround(p.x() / tol), std::llround(p.y() / tol), std::llround(p.z() / tol)};
    auto [it, inserted] = index.emplace(k, static_cast<int>(m.vertices.size()));
    if (inserted) m.vertices.push_back(p);
    return it->second;
  };
  for (const auto& t : soup) {
    const std::array<int, 3> tri{vid(t[0]), vid(t[1]), vid(t[2])};
    if (tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2]) m.triangles.push_back(tri);
  }
  return m;
}

inline void translate(TriMesh& m, const Vec3& t) {
  for (auto& v : m.vertices) v += t;
}

// Icosahedron subdivided `level` times and projected onto the sphere.
inline TriMesh icosphere(int level, double radius = 1.0, const Vec3& center = Vec3::Zero()) {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, p, 0}, {1, p, 0},  {-1, -p, 0}, {1, -p, 0}, {0, -1, p},  {0, 1, p},
                         {0, -1, -p}, {0, 1, -p}, {p, 0, -1},  {p, 0, 1},  {-p, 0, -1}, {-p, 0, 1}};
  for (auto& x : v) x.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriMesh m;
  m.vertices.reserve(v.size());
  for (const auto& x : v) m.vertices.push_back(center + radius * x);
  m.triangles = std::move(f);
  return m;
}

// Axis-aligned box with each face split into an n0 x n1 grid.
inline TriMesh box(const Vec3& lo, const Vec3& hi, const std::array<int, 3>& cells) {
  std::vector<std::array<Vec3, 3>> soup;
  auto coord = [&](int axis, int i) {
    return i == cells[axis] ? hi[axis] : lo[axis] + (hi[axis] - lo[axis]) * i / cells[axis];
  };
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, w = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      for (int i = 0; i < cells[u]; ++i) {
        for (int j = 0; j < cells[w]; ++j) {
          auto corner = [&](int di, int dj) {
            Vec3 p;
            p[axis] = side ? hi[axis] : lo[axis];
            p[u] = coord(u, i + di);
            p[w] = coord(w, j + dj);
            return p;
          };
          const Vec3 a = corner(0, 0), b = corner(1, 0), c = corner(1, 1), d = corner(0, 1);
          // (u, w, axis) is right-handed; flip winding on the low side.
          if (side) {
            soup.push_back({a, b, c});
            soup.push_back({a, c, d});
          } else {
            soup.push_back({a, c, b});
            soup.push_back({a, d, c});
          }
        }
      }
    }
  }
  return weld(soup);
}

// Upright cylinder on z in [0, height], centered on the z axis, with polar
// grids on both caps.
inline TriMesh cylinder(double radius, double height, int around, int rows, int cap_rings) {
  std::vector<std::array<Vec3, 3>> soup;
  auto ring = [&](double r, int k, double z) {
    const double phi = 2.0 * kPi * (k % around) / around;
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
  };
  auto zrow = [&](int i) { return i == rows ? height : height * i / rows; };
  for (int i = 0; i < rows; ++i) {
    for (int k = 0; k < around; ++k) {
      const Vec3 a = ring(radius, k, zrow(i)), b = ring(radius, k + 1, zrow(i));
      const Vec3 c = ring(radius, k + 1, zrow(i + 1)), d = ring(radius, k, zrow(i + 1));
      soup.push_back({a, b, c});
      soup.push_back({a, c, d});
    }
  }
  for (int top = 0; top < 2; ++top) {
    const double z = top ? height : 0.0;
    auto rr = [&](int j) { return j == cap_rings ? radius : radius * j / cap_rings; };
    for (int j = 0; j < cap_rings; ++j) {
      for (int k = 0; k < around; ++k) {
        const Vec3 a = ring(rr(j), k, z), b = ring(rr(j), k + 1, z);
        const Vec3 c = ring(rr(j + 1), k + 1, z), d = ring(rr(j + 1), k, z);
        if (j == 0) {
          const Vec3 o(0, 0, z);
          if (top) soup.push_back({o, d, c});
          else soup.push_back({o, c, d});
          continue;
        }
        if (top) {
          soup.push_back({a, d, c});
          soup.push_back({a, c, b});
        } else {
          soup.push_back({a, c, d});
          soup.push_back({a, b, c});
        }
      }
    }
  }
  return weld(soup);
}

}  // namespace softocc::mesh
