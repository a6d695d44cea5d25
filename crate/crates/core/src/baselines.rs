//! Comparison methods: least-squares estimation of the full cascaded
//! channel and hierarchical beam training.

use num_complex::Complex64;
use rand::Rng;

use crate::channels::{BsRisChannel, Link};
use crate::codebook::dft_matrix;
use crate::error::{invalid, Error, Result};
use crate::estimator::PilotRecord;
use crate::geometry::{ArrayGeometry, CMatrix, CVector};
use crate::simulator::metrics::spectral_efficiency;
use crate::widebeam::tiled_beam;

/// Relative singular-value cutoff of the least-squares solve.
pub const LS_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LsEstimate {
    pub g_hat: CVector,
    pub d_hat: CVector,
    pub rank: usize,
    /// False when the stacked system has fewer independent rows than
    /// unknowns.
    pub full_rank: bool,
}

/// Minimum-norm least-squares fit of `y = sqrt(P_p) [B D_h, 1] [g; d]`,
/// one block of rows per BS antenna.
pub fn ls_estimate(rec: &PilotRecord, bs: &BsRisChannel) -> Result<LsEstimate> {
    let (n, m, l) = (rec.elements(), rec.antennas(), rec.len());
    if l == 0 {
        return Err(invalid("least squares needs at least one pilot"));
    }
    if bs.elements() != n || bs.antennas() != m {
        return Err(invalid("record and BS-RIS channel sizes disagree"));
    }
    let sp = rec.pilot_power.sqrt();
    let unknowns = n + m;
    let mut a = CMatrix::zeros(l * m, unknowns);
    let mut y = CVector::zeros(l * m);
    for (li, theta) in rec.configs().iter().enumerate() {
        for ant in 0..m {
            let row = li * m + ant;
            for k in 0..n {
                a[(row, k)] = theta[k] * bs.matrix[(ant, k)] * sp;
            }
            a[(row, n + ant)] = Complex64::new(sp, 0.0);
            y[row] = rec.sample(li, ant);
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = LS_RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let x = svd.solve(&y, tol).map_err(|e| invalid(e.to_string()))?;
    Ok(LsEstimate {
        g_hat: x.rows(0, n).into_owned(),
        d_hat: x.rows(n, m).into_owned(),
        rank,
        full_rank: rank == unknowns,
    })
}

/// First `count` rows of the `(N+1)`-point DFT, without its all-ones first
/// column, rotated by the conjugate BS-RIS phases. Together with the direct
/// path's column this makes the stacked least-squares system a scaled DFT.
pub fn ls_dft_configs(h: &CVector, count: usize) -> Result<Vec<CVector>> {
    let n = h.len();
    if count == 0 || count > n + 1 {
        return Err(invalid(format!("DFT pilot count must lie in 1..={}", n + 1)));
    }
    let f = dft_matrix(n + 1);
    Ok((0..count)
        .map(|l| {
            CVector::from_fn(n, |k, _| {
                let p = if h[k].norm() > 0.0 { h[k].conj() / h[k].norm() } else { Complex64::new(1.0, 0.0) };
                f[(l, k + 1)] * p
            })
        })
        .collect())
}

/// Rectangle `[u0, u1] x [v0, v1]` in direction-cosine space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

impl Cell {
    pub fn centre(&self) -> (f64, f64) {
        (0.5 * (self.u0 + self.u1), 0.5 * (self.v0 + self.v1))
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (self.u0..=self.u1).contains(&u) && (self.v0..=self.v1).contains(&v)
    }

    /// Quadrants in order lower-left, lower-right, upper-left, upper-right.
    pub fn quadrants(&self) -> [Cell; 4] {
        let (um, vm) = self.centre();
        [
            Cell { u0: self.u0, u1: um, v0: self.v0, v1: vm },
            Cell { u0: um, u1: self.u1, v0: self.v0, v1: vm },
            Cell { u0: self.u0, u1: um, v0: vm, v1: self.v1 },
            Cell { u0: um, u1: self.u1, v0: vm, v1: self.v1 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalNode {
    pub level: usize,
    pub cell: Cell,
    pub config: CVector,
}

/// Quaternary beam tree. `levels[l - 1]` holds the `4^l` nodes of level `l`;
/// the children of node `i` are `4 i .. 4 i + 4` one level down.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalTree {
    pub levels: Vec<Vec<HierarchicalNode>>,
}

impl HierarchicalTree {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn leaves(&self) -> &[HierarchicalNode] {
        self.levels.last().map_or(&[], |l| l.as_slice())
    }
}

/// Beam covering `cell` at level `level`: the array is cut into
/// `K = N_H / 2^level` full-width strips of `2^level` rows, strip `j` aimed
/// at the `j`-th sub-cell centre in azimuth and the cell centre in
/// elevation. Leaves are single narrow beams.
fn cell_beam(geom: &ArrayGeometry, comp: &CVector, cell: &Cell, level: usize) -> Result<CVector> {
    let rows = 1usize << level;
    let k = geom.n_v / rows;
    let (_, vc) = cell.centre();
    let dirs: Vec<(f64, f64)> =
        (0..k).map(|j| (cell.u0 + (cell.u1 - cell.u0) * (j as f64 + 0.5) / k as f64, vc)).collect();
    tiled_beam(geom, rows, geom.n_h, &dirs, comp)
}

pub fn build_hier_codebook(geom: &ArrayGeometry, bs: &BsRisChannel, depth: usize) -> Result<HierarchicalTree> {
    geom.validate()?;
    if geom.n_h != geom.n_v || (geom.delta_h - geom.delta_v).abs() > 1e-12 * geom.wavelength {
        return Err(Error::UnsupportedGeometry("hierarchical search needs a square array".into()));
    }
    if depth == 0 {
        return Err(invalid("tree depth must be at least 1"));
    }
    let resolvable = 2.0 * geom.n_h as f64 * geom.delta_h / geom.wavelength;
    if (1u64 << depth.min(63)) as f64 > resolvable + 1e-9 || !geom.n_h.is_multiple_of(1usize << depth) {
        return Err(invalid(format!("depth {depth} exceeds the angular resolution of a {}-element row", geom.n_h)));
    }
    if bs.elements() != geom.len() {
        return Err(invalid("BS-RIS channel does not match the geometry"));
    }
    let comp = bs.compensation();
    let root = Cell { u0: -1.0, u1: 1.0, v0: -1.0, v1: 1.0 };
    let mut levels: Vec<Vec<HierarchicalNode>> = Vec::with_capacity(depth);
    let mut parents = vec![root];
    for level in 1..=depth {
        let cells: Vec<Cell> = parents.iter().flat_map(|p| p.quadrants()).collect();
        let nodes = cells
            .iter()
            .map(|cell| Ok(HierarchicalNode { level, cell: *cell, config: cell_beam(geom, &comp, cell, level)? }))
            .collect::<Result<Vec<_>>>()?;
        levels.push(nodes);
        parents = cells;
    }
    Ok(HierarchicalTree { levels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierOutcome {
    pub config: CVector,
    /// Leaf index reached.
    pub leaf: usize,
    /// Spectral efficiency of the chosen node's beam after each level.
    pub se_trace: Vec<f64>,
    pub pilots: usize,
}

/// Descends the tree with four pilots per level, keeping the child with the
/// largest received power (ties to the lowest index).
pub fn hierarchical_search<R: Rng + ?Sized>(
    link: &Link,
    tree: &HierarchicalTree,
    pilot_power: f64,
    noise_var: f64,
    data_snr: f64,
    rng: &mut R,
) -> Result<HierOutcome> {
    if tree.depth() == 0 {
        return Err(invalid("empty tree"));
    }
    let mut node = 0usize;
    let mut se_trace = Vec::with_capacity(tree.depth());
    let mut pilots = 0;
    for (depth, level) in tree.levels.iter().enumerate() {
        let first = if depth == 0 { 0 } else { 4 * node };
        let mut best: Option<(usize, f64)> = None;
        for (child, leaf) in level.iter().enumerate().skip(first).take(4) {
            let y = link.observe(rng, &leaf.config, pilot_power, noise_var);
            pilots += 1;
            let p = y.norm_squared();
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((child, p));
            }
        }
        node = best.expect("four children").0;
        se_trace.push(spectral_efficiency(link, &level[node].config, data_snr));
    }
    Ok(HierOutcome { config: tree.leaves()[node].config.clone(), leaf: node, se_trace, pilots })
}
