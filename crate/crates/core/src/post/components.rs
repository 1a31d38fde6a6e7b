use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridGeometry};

/// 3D neighbourhood used to decide whether two foreground voxels touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    /// Shared face.
    Six,
    /// Shared face or edge.
    Eighteen,
    /// Shared face, edge or corner.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_neighbours(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }

    pub fn neighbours(self) -> u32 {
        match self {
            Self::Six => 6,
            Self::Eighteen => 18,
            Self::TwentySix => 26,
        }
    }

    /// Whether offset `(dx, dy, dz)` (each in -1..=1, not all zero) is a neighbour.
    pub fn admits(self, d: [isize; 3]) -> bool {
        let nonzero = d.iter().filter(|&&v| v != 0).count();
        match self {
            Self::Six => nonzero == 1,
            Self::Eighteen => (1..=2).contains(&nonzero),
            Self::TwentySix => nonzero >= 1,
        }
    }

    /// Neighbour offsets that precede a voxel in x-fastest scan order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=0isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if before && self.admits([dx, dy, dz]) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbours())
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("connectivity {s:?} is not a number")))?;
        Self::from_neighbours(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: u32,
    pub voxel_count: usize,
    pub volume_ml: f64,
    /// Inclusive voxel bounding box.
    pub bbox_min: [usize; 3],
    pub bbox_max: [usize; 3],
}

/// Labels `1..=K` over the foreground of a mask; 0 is background.
///
/// Components are numbered in order of their smallest linear voxel index.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    geometry: GridGeometry,
    connectivity: Connectivity,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl ComponentLabeling {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.components.iter().map(|c| c.voxel_count).sum()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labeling of the foreground of `mask`.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let geometry = mask.geometry().clone();
    let [nx, ny, nz] = geometry.shape();
    let offsets = connectivity.backward_offsets();
    let fg = mask.data();
    let mut provisional = vec![u32::MAX; fg.len()];
    let mut sets = DisjointSet { parent: Vec::new() };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = geometry.index(x, y, z);
                if !fg[i] {
                    continue;
                }
                let mut current: Option<u32> = None;
                for d in &offsets {
                    let (qx, qy, qz) = (x as isize + d[0], y as isize + d[1], z as isize + d[2]);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                        continue;
                    }
                    let j = geometry.index(qx as usize, qy as usize, qz as usize);
                    if !fg[j] {
                        continue;
                    }
                    let l = provisional[j];
                    current = Some(match current {
                        None => sets.find(l),
                        Some(c) => sets.union(c, l),
                    });
                }
                provisional[i] = current.unwrap_or_else(|| sets.make());
            }
        }
    }

    // second pass: final labels in order of first appearance
    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut labels = vec![0u32; fg.len()];
    let mut components: Vec<Component> = Vec::new();
    for i in 0..fg.len() {
        if !fg[i] {
            continue;
        }
        let root = sets.find(provisional[i]) as usize;
        if final_of_root[root] == 0 {
            let label = components.len() as u32 + 1;
            final_of_root[root] = label;
            let c = geometry.coords(i);
            components.push(Component { label, voxel_count: 0, volume_ml: 0.0, bbox_min: c, bbox_max: c });
        }
        let label = final_of_root[root];
        labels[i] = label;
        let comp = &mut components[label as usize - 1];
        comp.voxel_count += 1;
        let c = geometry.coords(i);
        for a in 0..3 {
            comp.bbox_min[a] = comp.bbox_min[a].min(c[a]);
            comp.bbox_max[a] = comp.bbox_max[a].max(c[a]);
        }
    }
    for comp in components.iter_mut() {
        comp.volume_ml = geometry.volume_ml(comp.voxel_count);
    }
    ComponentLabeling { geometry, connectivity, labels, components }
}

/// Keep only components with at least `min_voxels` voxels.
pub fn filter_small_components(labeling: &ComponentLabeling, min_voxels: usize) -> Result<BinaryMask> {
    if min_voxels < 1 {
        return Err(Error::InvalidArgument("min_voxels must be at least 1".into()));
    }
    let keep: Vec<bool> = std::iter::once(false)
        .chain(labeling.components.iter().map(|c| c.voxel_count >= min_voxels))
        .collect();
    let data = labeling.labels.iter().map(|&l| keep[l as usize]).collect();
    BinaryMask::new(labeling.geometry.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn geom(shape: [usize; 3]) -> GridGeometry {
        GridGeometry::with_spacing(shape, [1.0; 3]).unwrap()
    }

    /// Independent flood-fill labeling, components numbered by discovery in scan order.
    fn flood_fill(mask: &BinaryMask, conn: Connectivity) -> Vec<u32> {
        let g = mask.geometry();
        let [nx, ny, nz] = g.shape();
        let mut labels = vec![0u32; g.len()];
        let mut next = 0;
        for start in 0..g.len() {
            if !mask.data()[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                let [x, y, z] = g.coords(i);
                for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if (dx, dy, dz) == (0, 0, 0) || !conn.admits([dx, dy, dz]) {
                                continue;
                            }
                            let (qx, qy, qz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                            if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize || qz >= nz as isize {
                                continue;
                            }
                            let j = g.index(qx as usize, qy as usize, qz as usize);
                            if mask.data()[j] && labels[j] == 0 {
                                labels[j] = next;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        labels
    }

    #[test]
    fn single_voxel() {
        let mut m = BinaryMask::empty(geom([3, 3, 3]));
        m.set(1, 1, 1, true);
        let l = connected_components(&m, Connectivity::TwentySix);
        assert_eq!(l.len(), 1);
        assert_eq!(l.components()[0].voxel_count, 1);
        assert_eq!(l.components()[0].bbox_min, [1, 1, 1]);
    }

    #[test]
    fn in_plane_diagonal_pair() {
        let mut m = BinaryMask::empty(geom([2, 2, 1]));
        m.set(0, 0, 0, true);
        m.set(1, 1, 0, true);
        assert_eq!(flood_fill(&m, Connectivity::Six).iter().max(), Some(&2));
        assert_eq!(connected_components(&m, Connectivity::Six).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).len(), 1);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).len(), 1);
    }

    #[test]
    fn corner_pair_only_joins_under_26() {
        let mut m = BinaryMask::empty(geom([2, 2, 2]));
        m.set(0, 0, 0, true);
        m.set(1, 1, 1, true);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).len(), 1);
    }

    #[test]
    fn matches_flood_fill_on_random_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let shape = [rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6)];
            let p: f64 = rng.gen_range(0.1..0.7);
            let m = BinaryMask::from_fn(geom(shape), |_| rng.gen_bool(p));
            for conn in [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix] {
                let l = connected_components(&m, conn);
                assert_eq!(l.labels(), flood_fill(&m, conn).as_slice());
                assert_eq!(l.foreground_count(), m.count());
            }
        }
    }

    /// Builds separate straight runs of the requested lengths.
    fn runs(sizes: &[usize]) -> BinaryMask {
        let width = sizes.iter().max().copied().unwrap_or(1);
        let g = geom([width, 2 * sizes.len(), 1]);
        let mut m = BinaryMask::empty(g);
        for (row, &len) in sizes.iter().enumerate() {
            for x in 0..len {
                m.set(x, 2 * row, 0, true);
            }
        }
        m
    }

    #[test]
    fn small_component_filter_boundary() {
        let l = connected_components(&runs(&[19]), Connectivity::Six);
        assert_eq!(filter_small_components(&l, 20).unwrap().count(), 0);
        let l = connected_components(&runs(&[20]), Connectivity::Six);
        assert_eq!(filter_small_components(&l, 20).unwrap().count(), 20);
        let l = connected_components(&runs(&[5, 40, 19, 20]), Connectivity::Six);
        assert_eq!(l.len(), 4);
        assert_eq!(filter_small_components(&l, 20).unwrap().count(), 60);
        assert!(filter_small_components(&l, 0).is_err());
    }

    #[test]
    fn labels_ordered_by_first_voxel() {
        let l = connected_components(&runs(&[3, 7, 1]), Connectivity::TwentySix);
        let counts: Vec<_> = l.components().iter().map(|c| c.voxel_count).collect();
        assert_eq!(counts, vec![3, 7, 1]);
    }

    #[test]
    fn parse_connectivity() {
        assert_eq!("18".parse::<Connectivity>().unwrap(), Connectivity::Eighteen);
        assert!("8".parse::<Connectivity>().is_err());
    }
}
