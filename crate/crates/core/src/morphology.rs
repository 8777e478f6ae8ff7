//! Binary 3D morphology and connected-component labelling.
//!
//! Neighbours that fall outside the grid are ignored by both dilation and
//! erosion. This is the usual padding convention (dilation pads with false,
//! erosion pads with true) and makes the duality
//! `erode(m, se) == !dilate(!m, se)` hold exactly on finite grids.

use crate::volume::BinaryMask;

/// Neighbourhood shape for morphological operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuringElement {
    /// The 6 face neighbours plus the centre.
    Face6,
    /// The full 3x3x3 cube: 26 neighbours plus the centre.
    Full26,
    /// Discrete Euclidean ball of the given radius in voxels (at least 1).
    /// `Ball(1)` equals `Face6`.
    Ball(u32),
}

impl StructuringElement {
    /// Offsets covered by the element, centre included.
    pub fn offsets(&self) -> Vec<(i32, i32, i32)> {
        let mut out = Vec::new();
        match *self {
            StructuringElement::Face6 => {
                out.push((0, 0, 0));
                for d in [-1i32, 1] {
                    out.push((d, 0, 0));
                    out.push((0, d, 0));
                    out.push((0, 0, d));
                }
            }
            StructuringElement::Full26 => {
                for dz in -1i32..=1 {
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            out.push((dx, dy, dz));
                        }
                    }
                }
            }
            StructuringElement::Ball(r) => {
                assert!(r >= 1, "ball radius must be at least 1");
                let r = r as i32;
                let r2 = r * r;
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx * dx + dy * dy + dz * dz <= r2 {
                                out.push((dx, dy, dz));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Voxel adjacency for component labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    fn offsets(&self) -> Vec<(i32, i32, i32)> {
        match self {
            Connectivity::Six => StructuringElement::Face6
                .offsets()
                .into_iter()
                .filter(|&o| o != (0, 0, 0))
                .collect(),
            Connectivity::TwentySix => StructuringElement::Full26
                .offsets()
                .into_iter()
                .filter(|&o| o != (0, 0, 0))
                .collect(),
        }
    }
}

/// True wherever the element placed at the voxel touches any true input voxel.
pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let dims = mask.dims();
    let offsets = se.offsets();
    let mut out = BinaryMask::empty(dims);
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let hit = offsets.iter().any(|&(dx, dy, dz)| {
                    let (nx, ny, nz) = (x as i64 + dx as i64, y as i64 + dy as i64, z as i64 + dz as i64);
                    dims.contains_signed(nx, ny, nz) && mask.get(nx as usize, ny as usize, nz as usize)
                });
                if hit {
                    out.set(x, y, z, true);
                }
            }
        }
    }
    out
}

/// True only where every in-grid voxel covered by the element is true.
pub fn erode(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let dims = mask.dims();
    let offsets = se.offsets();
    let mut out = BinaryMask::empty(dims);
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let all = offsets.iter().all(|&(dx, dy, dz)| {
                    let (nx, ny, nz) = (x as i64 + dx as i64, y as i64 + dy as i64, z as i64 + dz as i64);
                    !dims.contains_signed(nx, ny, nz) || mask.get(nx as usize, ny as usize, nz as usize)
                });
                if all {
                    out.set(x, y, z, true);
                }
            }
        }
    }
    out
}

/// `dilate(m) and not erode(m)`: the boundary band of the mask.
pub fn morphological_gradient(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    dilate(mask, se).and_not(&erode(mask, se))
}

/// Connected components of the true voxels, each as its own mask.
///
/// Components are ordered by voxel count descending; ties break on the
/// smaller minimum linear index. The returned masks partition the input.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<BinaryMask> {
    let dims = mask.dims();
    let offsets = connectivity.offsets();
    let n = dims.voxel_count();
    let mut seen = vec![false; n];
    // (size, min linear index, member indices)
    let mut comps: Vec<(usize, usize, Vec<usize>)> = Vec::new();

    for start in 0..n {
        if !mask.get_linear(start) || seen[start] {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y, z) = dims.coords(i);
            for &(dx, dy, dz) in &offsets {
                let (nx, ny, nz) = (x as i64 + dx as i64, y as i64 + dy as i64, z as i64 + dz as i64);
                if !dims.contains_signed(nx, ny, nz) {
                    continue;
                }
                let j = dims.index(nx as usize, ny as usize, nz as usize);
                if mask.get_linear(j) && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        // Seeds are visited in raster order, so `start` is the component minimum.
        comps.push((members.len(), start, members));
    }

    comps.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    comps
        .into_iter()
        .map(|(_, _, members)| {
            let mut m = BinaryMask::empty(dims);
            for i in members {
                m.set_linear(i, true);
            }
            m
        })
        .collect()
}
