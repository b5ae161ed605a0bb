//! Finite-volume Hamiltonians `H_ω^l = -Δ_h + V₀ + V_ω` on `[0, l[^d`.
//!
//! The box is discretized with `m` cell-centred mesh points per unit cell and
//! axis; `-Δ_h` is the second-order central difference stencil with periodic
//! wrap-around. The random potential on the box is the restriction of the
//! infinite-volume potential `V_ω(x) = Σ_k ω_k u(x - k)`, so it depends on the
//! coupling constants indexed by `Λ⁺` only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::toeplitz::{cube_sites, ConvolutionVector, IndexBox, ToeplitzTransform};

/// Largest matrix dimension accepted for assembly and dense eigensolves.
pub const DENSE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    /// box side `l` in unit cells
    pub side: usize,
    /// mesh points per unit cell and axis
    pub mesh: usize,
}

impl GridSpec {
    pub fn new(dim: usize, side: usize, mesh: usize) -> Result<Self> {
        if dim == 0 || side == 0 || mesh == 0 {
            return Err(Error::Precondition(format!(
                "grid needs positive dim/side/mesh, got {dim}/{side}/{mesh}"
            )));
        }
        Ok(Self { dim, side, mesh })
    }

    /// Mesh defaults: `m = 8` in one dimension, `m = 4` otherwise.
    pub fn with_default_mesh(dim: usize, side: usize) -> Result<Self> {
        Self::new(dim, side, if dim == 1 { 8 } else { 4 })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.mesh as f64
    }

    pub fn points_per_axis(&self) -> usize {
        self.side * self.mesh
    }

    /// `n = (l m)^d`.
    pub fn len(&self) -> usize {
        self.points_per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `l^d`, the normalization of counting functions.
    pub fn volume(&self) -> f64 {
        (self.side as f64).powi(self.dim as i32)
    }

    /// Per-axis mesh indices of a flat point index (lexicographic, last axis fastest).
    pub fn point(&self, mut flat: usize) -> Vec<usize> {
        let n = self.points_per_axis();
        let mut idx = vec![0; self.dim];
        for c in idx.iter_mut().rev() {
            *c = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let n = self.points_per_axis();
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    /// Physical coordinates of a mesh point (cell-centred).
    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.point(flat).into_iter().map(|i| (i as f64 + 0.5) * self.h()).collect()
    }

    /// The unit cell containing a mesh point and the point's local coordinates in `[0, 1)^d`.
    pub fn cell_and_local(&self, flat: usize) -> (Vec<i64>, Vec<f64>) {
        let idx = self.point(flat);
        let cell = idx.iter().map(|&i| (i / self.mesh) as i64).collect();
        let local = idx
            .iter()
            .map(|&i| ((i % self.mesh) as f64 + 0.5) * self.h())
            .collect();
        (cell, local)
    }
}

/// The non-negative bump `w` supported in the unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseBump {
    /// `κ χ_{[0,1]^d}`
    Indicator { kappa: f64 },
    /// Piecewise constant on the `s^d` congruent subcells of `[0,1]^d`, values in
    /// lexicographic subcell order.
    Step { subdivisions: usize, values: Vec<f64> },
}

impl Default for BaseBump {
    fn default() -> Self {
        BaseBump::Indicator { kappa: 1.0 }
    }
}

impl BaseBump {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            BaseBump::Indicator { kappa } if *kappa > 0.0 && kappa.is_finite() => Ok(()),
            BaseBump::Indicator { kappa } => {
                Err(Error::Precondition(format!("kappa must be positive, got {kappa}")))
            }
            BaseBump::Step { subdivisions, values } => {
                if *subdivisions == 0 || values.len() != subdivisions.pow(dim as u32) {
                    return Err(Error::Precondition(format!(
                        "step bump needs {}^{dim} values, got {}",
                        subdivisions,
                        values.len()
                    )));
                }
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::Precondition("step bump values must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// `w` at local coordinates in `[0, 1)^d`.
    pub fn eval(&self, local: &[f64]) -> f64 {
        match self {
            BaseBump::Indicator { kappa } => *kappa,
            BaseBump::Step { subdivisions, values } => {
                let s = *subdivisions;
                let idx = local
                    .iter()
                    .fold(0, |acc, x| acc * s + ((x * s as f64) as usize).min(s - 1));
                values[idx]
            }
        }
    }

    /// The largest `κ` with `w ≥ κ χ_{[0,1]^d}`.
    pub fn kappa(&self) -> f64 {
        match self {
            BaseBump::Indicator { kappa } => *kappa,
            BaseBump::Step { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// `u(x) = Σ_{k∈Γ} α_k w(x - k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleSitePotential {
    pub alpha: ConvolutionVector,
    #[serde(default)]
    pub bump: BaseBump,
}

impl SingleSitePotential {
    pub fn new(alpha: ConvolutionVector, bump: BaseBump) -> Result<Self> {
        bump.validate(alpha.dim())?;
        Ok(Self { alpha, bump })
    }

    pub fn indicator(alpha: ConvolutionVector) -> Self {
        Self { alpha, bump: BaseBump::default() }
    }
}

/// Periodic background potential `V₀`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    #[default]
    Zero,
    /// `V₀(x) = amplitude Σ_i cos(2π x_i)`
    Cosine { amplitude: f64 },
}

impl Background {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Background::Zero => 0.0,
            Background::Cosine { amplitude } => {
                amplitude * x.iter().map(|xi| (2.0 * std::f64::consts::PI * xi).cos()).sum::<f64>()
            }
        }
    }
}

/// Coupling constants on `Λ⁺`, in the ordering of [`IndexBox::plus_set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingField {
    pub values: Vec<f64>,
    pub seed: u64,
    pub density_id: String,
}

impl CouplingField {
    pub fn constant(index_box: &IndexBox, value: f64) -> Self {
        Self { values: vec![value; index_box.len()], seed: 0, density_id: format!("constant[{value}]") }
    }
}

/// Draws iid coupling constants on `Λ⁺` from `density`, reproducibly in `seed`.
pub fn sample_field(density: &DensityModel, index_box: &IndexBox, seed: u64) -> CouplingField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..index_box.len()).map(|_| density.sample(rng.random::<f64>())).collect();
    CouplingField { values, seed, density_id: density.id() }
}

/// Per-cell strengths `η_j = Σ_{γ∈Γ} α_γ ω_{j-γ}` for the cells `j ∈ Λ̃`, computed
/// directly from the generalized step function.
fn cell_strengths(field: &CouplingField, u: &SingleSitePotential, index_box: &IndexBox) -> Result<Vec<f64>> {
    if field.values.len() != index_box.len() {
        return Err(Error::IndexMismatch { expected: index_box.len(), got: field.values.len() });
    }
    index_box
        .lattice()
        .iter()
        .map(|cell| {
            let mut s = 0.0;
            for (gamma, a) in u.alpha.entries() {
                let site: Vec<i64> = cell.iter().zip(gamma).map(|(c, g)| c - g).collect();
                let pos = index_box.position(&site).ok_or_else(|| {
                    Error::Precondition(format!("site {site:?} missing from the index box"))
                })?;
                s += a * field.values[pos];
            }
            Ok(s)
        })
        .collect()
}

fn check_grid(u: &SingleSitePotential, index_box: &IndexBox, grid: &GridSpec) -> Result<()> {
    if grid.dim != u.alpha.dim() || grid.dim != index_box.dim() || grid.side != index_box.side() {
        return Err(Error::Precondition(format!(
            "grid {grid:?} does not match the index box (d={}, l={})",
            index_box.dim(),
            index_box.side()
        )));
    }
    Ok(())
}

fn potential_from_cells(cells: &[f64], u: &SingleSitePotential, v0: &Background, grid: &GridSpec) -> Vec<f64> {
    let cell_sites = cube_sites(grid.dim, grid.side);
    let side = grid.side;
    (0..grid.len())
        .map(|p| {
            let (cell, local) = grid.cell_and_local(p);
            let cell_index = cell.iter().fold(0usize, |acc, &c| acc * side + c as usize);
            debug_assert_eq!(cell_sites[cell_index], cell);
            cells[cell_index] * u.bump.eval(&local) + v0.eval(&grid.position(p))
        })
        .collect()
}

/// `V₀ + V_ω` sampled at the mesh points, from `V_ω(x) = Σ_k ω_k u(x - k)`.
pub fn assemble_potential(
    field: &CouplingField,
    u: &SingleSitePotential,
    v0: &Background,
    index_box: &IndexBox,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    check_grid(u, index_box, grid)?;
    let cells = cell_strengths(field, u, index_box)?;
    Ok(potential_from_cells(&cells, u, v0, grid))
}

/// `V₀ + Σ_{j∈Λ̃} η_j w(x - j)` sampled at the mesh points.
pub fn potential_from_eta(
    eta: &[f64],
    u: &SingleSitePotential,
    v0: &Background,
    index_box: &IndexBox,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    check_grid(u, index_box, grid)?;
    if eta.len() != index_box.len() {
        return Err(Error::IndexMismatch { expected: index_box.len(), got: eta.len() });
    }
    let cells: Vec<f64> = index_box.lattice_positions().into_iter().map(|p| eta[p]).collect();
    Ok(potential_from_cells(&cells, u, v0, grid))
}

#[derive(Debug, Clone)]
pub struct DiscreteHamiltonian {
    grid: GridSpec,
    matrix: CsrMatrix,
    potential: Vec<f64>,
}

impl DiscreteHamiltonian {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn len(&self) -> usize {
        self.matrix.n()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n() == 0
    }

    pub fn periodic(&self) -> bool {
        true
    }
}

/// `-Δ_h + diag(potential)` with the periodic `(2d+1)`-point stencil.
pub fn assemble_hamiltonian(potential: &[f64], grid: &GridSpec) -> Result<DiscreteHamiltonian> {
    let n = grid.len();
    if n > DENSE_CAP {
        return Err(Error::SizeOverflow { n, cap: DENSE_CAP });
    }
    if potential.len() != n {
        return Err(Error::IndexMismatch { expected: n, got: potential.len() });
    }
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let per_axis = grid.points_per_axis();
    let mut triplets = Vec::with_capacity(n * (2 * grid.dim + 1));
    for p in 0..n {
        triplets.push((p, p, potential[p] + 2.0 * grid.dim as f64 * inv_h2));
        let idx = grid.point(p);
        for axis in 0..grid.dim {
            for step in [1, per_axis - 1] {
                let mut q = idx.clone();
                q[axis] = (q[axis] + step) % per_axis;
                triplets.push((p, grid.flat(&q), -inv_h2));
            }
        }
    }
    Ok(DiscreteHamiltonian {
        grid: *grid,
        matrix: CsrMatrix::from_triplets(n, triplets),
        potential: potential.to_vec(),
    })
}

/// Where the coupling constants come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSource {
    Random { density: DensityModel },
    /// Every `ω_k` forced to the same value (zero-disorder reference runs).
    Constant { value: f64 },
}

/// Everything needed to draw one realization `H_ω^l`.
#[derive(Debug, Clone)]
pub struct AlloyModel {
    pub grid: GridSpec,
    pub single_site: SingleSitePotential,
    pub background: Background,
    pub coupling: CouplingSource,
    index_box: IndexBox,
}

impl AlloyModel {
    pub fn new(
        grid: GridSpec,
        single_site: SingleSitePotential,
        background: Background,
        coupling: CouplingSource,
    ) -> Result<Self> {
        single_site.bump.validate(grid.dim)?;
        let index_box = IndexBox::new(grid.side, &single_site.alpha)?;
        check_grid(&single_site, &index_box, &grid)?;
        if grid.len() > DENSE_CAP {
            return Err(Error::SizeOverflow { n: grid.len(), cap: DENSE_CAP });
        }
        Ok(Self { grid, single_site, background, coupling, index_box })
    }

    pub fn index_box(&self) -> &IndexBox {
        &self.index_box
    }

    /// The same model on a box of a different side length.
    pub fn with_side(&self, side: usize) -> Result<Self> {
        let grid = GridSpec::new(self.grid.dim, side, self.grid.mesh)?;
        Self::new(grid, self.single_site.clone(), self.background, self.coupling.clone())
    }

    pub fn with_mesh(&self, mesh: usize) -> Result<Self> {
        let grid = GridSpec::new(self.grid.dim, self.grid.side, mesh)?;
        Self::new(grid, self.single_site.clone(), self.background, self.coupling.clone())
    }

    pub fn with_coupling(&self, coupling: CouplingSource) -> Result<Self> {
        Self::new(self.grid, self.single_site.clone(), self.background, coupling)
    }

    pub fn transform(&self) -> Result<ToeplitzTransform> {
        ToeplitzTransform::build(&self.single_site.alpha, &self.index_box)
    }

    pub fn field(&self, seed: u64) -> CouplingField {
        match &self.coupling {
            CouplingSource::Random { density } => sample_field(density, &self.index_box, seed),
            CouplingSource::Constant { value } => {
                CouplingField { seed, ..CouplingField::constant(&self.index_box, *value) }
            }
        }
    }

    pub fn hamiltonian(&self, field: &CouplingField) -> Result<DiscreteHamiltonian> {
        let v = assemble_potential(field, &self.single_site, &self.background, &self.index_box, &self.grid)?;
        assemble_hamiltonian(&v, &self.grid)
    }

    /// Hamiltonian written in transformed coordinates `η = Aω`.
    pub fn hamiltonian_from_eta(&self, eta: &[f64]) -> Result<DiscreteHamiltonian> {
        let v = potential_from_eta(eta, &self.single_site, &self.background, &self.index_box, &self.grid)?;
        assemble_hamiltonian(&v, &self.grid)
    }

    pub fn realize(&self, seed: u64) -> Result<DiscreteHamiltonian> {
        self.hamiltonian(&self.field(seed))
    }

    /// Mesh points lying in the unit cell `j`.
    pub fn cell_points(&self, cell: &[i64]) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&p| self.grid.cell_and_local(p).0 == cell)
            .collect()
    }
}
