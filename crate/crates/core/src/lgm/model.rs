//! Latent Gaussian model: layout, incidence, constraints and prior precision.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::rw2_structure;
use crate::ingest::ModelFrame;
use crate::linalg::{DenseMatrix, SymSparse};
use crate::mesh::{SpdeParams, SpdeStructure};

use super::prior::{HyperPrior, PriorSpec};

/// How one latent block's prior precision depends on θ.
#[derive(Debug, Clone)]
pub enum BlockPrecision {
    /// `precision · I`, no hyperparameter.
    Fixed { precision: f64 },
    /// `exp(θ[theta]) · structure + jitter · I`.
    Scaled {
        structure: SymSparse<f64>,
        jitter: f64,
        theta: usize,
    },
    /// SPDE precision with `(θ₁, θ₂) = (θ[theta[0]], θ[theta[1]])`.
    Spde {
        structure: SpdeStructure<f64>,
        theta: [usize; 2],
    },
}

#[derive(Debug, Clone)]
pub struct LatentBlock {
    pub name: String,
    pub offset: usize,
    pub size: usize,
    pub precision: BlockPrecision,
}

impl LatentBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.size
    }

    fn precision_at(&self, theta: &[f64]) -> Result<SymSparse<f64>> {
        match &self.precision {
            BlockPrecision::Fixed { precision } => Ok(SymSparse::diagonal(&vec![*precision; self.size])),
            BlockPrecision::Scaled {
                structure,
                jitter,
                theta: k,
            } => Ok(structure.scaled(theta[*k].exp()).add_diagonal(*jitter)),
            BlockPrecision::Spde { structure, theta: k } => {
                structure.precision(SpdeParams::new(theta[k[0]], theta[k[1]]))
            }
        }
    }
}

/// Observation model for one row of the linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum Likelihood {
    Poisson,
    /// Quadratic terms `−½ c_r (y_r − η_r)²` with known precisions `c_r`.
    Gaussian { precision: Vec<f64> },
}

impl Likelihood {
    pub fn log_density(&self, row: usize, y: f64, eta: f64) -> f64 {
        match self {
            Likelihood::Poisson => y * eta - eta.exp() - statrs::function::gamma::ln_gamma(y + 1.0),
            Likelihood::Gaussian { precision } => {
                let c = precision[row];
                0.5 * (c / (2.0 * std::f64::consts::PI)).ln() - 0.5 * c * (y - eta).powi(2)
            }
        }
    }

    /// First derivative and negative second derivative in η.
    pub fn derivatives(&self, row: usize, y: f64, eta: f64) -> (f64, f64) {
        match self {
            Likelihood::Poisson => {
                let mu = eta.exp();
                (y - mu, mu)
            }
            Likelihood::Gaussian { precision } => {
                let c = precision[row];
                (c * (y - eta), c)
            }
        }
    }
}

/// Rows of the linear predictor: `η_r = dense_r · x[0..n_dense] + Σ w · x[j]`.
#[derive(Debug, Clone)]
pub struct Observations {
    pub y: Vec<f64>,
    pub dense: DenseMatrix<f64>,
    /// Sparse part of each row, indices at or beyond `dense.ncols`.
    pub sparse: Vec<Vec<(usize, f64)>>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn eta_row(&self, r: usize, x: &[f64]) -> f64 {
        let d: f64 = self.dense.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        d + self.sparse[r].iter().map(|&(j, w)| w * x[j]).sum::<f64>()
    }

    pub fn eta(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|r| self.eta_row(r, x)).collect()
    }

    /// `Bᵀ v`.
    pub fn tr_mul(&self, v: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        let k = self.dense.ncols;
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out[..k].iter_mut().zip(self.dense.row(r)) {
                *o += a * vr;
            }
            for &(j, w) in &self.sparse[r] {
                out[j] += w * vr;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameter {
    pub name: String,
    pub prior: HyperPrior,
}

/// A latent Gaussian model with an observation layer.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub dim: usize,
    pub blocks: Vec<LatentBlock>,
    pub obs: Observations,
    pub likelihood: Likelihood,
    /// Linear constraints `a · x = 0`, one sparse row each.
    pub constraints: Vec<Vec<(usize, f64)>>,
    pub hyper: Vec<Hyperparameter>,
    pattern: SymSparse<f64>,
}

impl LatentModel {
    /// Checks the layout and records the joint precision pattern.
    ///
    /// Blocks must tile `0..dim` in order; dense observation columns map to the
    /// leading latent entries.
    pub fn new(
        blocks: Vec<LatentBlock>,
        obs: Observations,
        likelihood: Likelihood,
        constraints: Vec<Vec<(usize, f64)>>,
        hyper: Vec<Hyperparameter>,
    ) -> Result<Self> {
        let mut offset = 0;
        for b in &blocks {
            if b.offset != offset || b.size == 0 {
                return Err(Error::invalid(format!("latent block {} is misplaced or empty", b.name)));
            }
            let (structure_dim, thetas): (usize, Vec<usize>) = match &b.precision {
                BlockPrecision::Fixed { precision } => {
                    if !(*precision > 0.0) {
                        return Err(Error::invalid(format!("block {} needs a positive precision", b.name)));
                    }
                    (b.size, vec![])
                }
                BlockPrecision::Scaled { structure, theta, .. } => (structure.dim(), vec![*theta]),
                BlockPrecision::Spde { structure, theta } => (structure.dim(), theta.to_vec()),
            };
            if structure_dim != b.size {
                return Err(Error::invalid(format!(
                    "block {} has size {} but its structure has dimension {structure_dim}",
                    b.name, b.size
                )));
            }
            if let Some(&t) = thetas.iter().find(|&&t| t >= hyper.len()) {
                return Err(Error::invalid(format!("block {} refers to missing hyperparameter {t}", b.name)));
            }
            offset += b.size;
        }
        let dim = offset;
        let n = obs.len();
        if obs.dense.nrows != n || obs.sparse.len() != n {
            return Err(Error::invalid("observation parts have different row counts"));
        }
        if obs.dense.ncols > dim {
            return Err(Error::invalid("more dense columns than latent entries"));
        }
        for (r, row) in obs.sparse.iter().enumerate() {
            if row.iter().any(|&(j, w)| j < obs.dense.ncols || j >= dim || !w.is_finite()) {
                return Err(Error::invalid(format!("observation row {r} maps outside the latent vector")));
            }
        }
        if obs.y.iter().any(|v| !v.is_finite()) || obs.dense.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations contain non-finite values"));
        }
        match &likelihood {
            Likelihood::Poisson => {
                if obs.y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                    return Err(Error::invalid("Poisson responses must be non-negative integers"));
                }
            }
            Likelihood::Gaussian { precision } => {
                if precision.len() != n || precision.iter().any(|&c| !(c > 0.0)) {
                    return Err(Error::invalid("Gaussian likelihood needs one positive precision per row"));
                }
            }
        }
        for c in &constraints {
            if c.is_empty() || c.iter().any(|&(j, _)| j >= dim) {
                return Err(Error::invalid("constraint row is empty or out of range"));
            }
        }
        for h in &hyper {
            h.prior.validate()?;
        }
        let reference = vec![0.0; hyper.len()];
        let parts = blocks
            .iter()
            .map(|b| b.precision_at(&reference))
            .collect::<Result<Vec<_>>>()?;
        let pattern = SymSparse::block_diag(&parts.iter().collect::<Vec<_>>());
        let model = Self {
            dim,
            blocks,
            obs,
            likelihood,
            constraints,
            hyper,
            pattern,
        };
        model.check_constraint_rank()?;
        Ok(model)
    }

    fn check_constraint_rank(&self) -> Result<()> {
        let k = self.constraints.len();
        let mut gram = DenseMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                gram[(a, b)] = sparse_dot(&self.constraints[a], &self.constraints[b], self.dim);
            }
        }
        if k > 0 && crate::linalg::DenseCholesky::new(&gram).is_err() {
            return Err(Error::invalid("constraint rows are linearly dependent"));
        }
        Ok(())
    }

    pub fn n_theta(&self) -> usize {
        self.hyper.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn block(&self, name: &str) -> Option<&LatentBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.hyper.len() {
            return Err(Error::invalid(format!(
                "expected {} hyperparameters, got {}",
                self.hyper.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("non-finite hyperparameters {theta:?}")));
        }
        Ok(())
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.hyper.iter().zip(theta).map(|(h, &t)| h.prior.log_density(t)).sum()
    }

    /// The prior mode of each hyperparameter.
    pub fn prior_mode(&self) -> Vec<f64> {
        self.hyper.iter().map(|h| h.prior.mode()).collect()
    }

    /// Block-diagonal prior precision `Q_x(θ)`, always on the same pattern.
    pub fn joint_prior_precision(&self, theta: &[f64]) -> Result<SymSparse<f64>> {
        self.check_theta(theta)?;
        let mut q = self.pattern.clone();
        let values = q.values_mut();
        let mut pos = 0;
        for b in &self.blocks {
            let part = b.precision_at(theta)?;
            let v = part.values();
            if pos + v.len() > values.len() {
                return Err(Error::numerical(format!("precision pattern of block {} changed", b.name)));
            }
            values[pos..pos + v.len()].copy_from_slice(v);
            pos += v.len();
        }
        if pos != values.len() {
            return Err(Error::numerical("precision pattern changed"));
        }
        Ok(q)
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        (0..self.obs.len())
            .map(|r| self.likelihood.log_density(r, self.obs.y[r], self.obs.eta_row(r, x)))
            .sum()
    }

    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| c.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)], dim: usize) -> f64 {
    let mut dense = vec![0.0; dim];
    for &(j, v) in a {
        dense[j] += v;
    }
    b.iter().map(|&(j, v)| v * dense[j]).sum()
}

/// Spatial component of the charging model.
#[derive(Debug, Clone)]
pub enum SpatialSpec {
    /// ICAR structure `D − W` over the frame's stations in `cpids` order.
    Icar { structure: SymSparse<f64> },
    /// SPDE field on mesh vertices; `station_weights[j]` is the barycentric row of station `j`.
    Spde {
        structure: SpdeStructure<f64>,
        station_weights: Vec<Vec<(usize, f64)>>,
    },
}

impl SpatialSpec {
    pub fn kind(&self) -> SpatialKind {
        match self {
            SpatialSpec::Icar { .. } => SpatialKind::Icar,
            SpatialSpec::Spde { .. } => SpatialKind::Spde,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            SpatialSpec::Icar { structure } => structure.dim(),
            SpatialSpec::Spde { structure, .. } => structure.dim(),
        }
    }

    fn station_row(&self, station: usize) -> Vec<(usize, f64)> {
        match self {
            SpatialSpec::Icar { .. } => vec![(station, 1.0)],
            SpatialSpec::Spde { station_weights, .. } => station_weights[station].clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialKind {
    Icar,
    Spde,
}

impl SpatialKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpatialKind::Icar => "icar",
            SpatialKind::Spde => "spde",
        }
    }
}

/// RW2 over `n_days` consecutive days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalSpec {
    pub n_days: usize,
}

/// The charging-demand model: fixed effects, RW2 day effect and a spatial effect.
#[derive(Debug, Clone)]
pub struct ChargeModel {
    pub latent: LatentModel,
    pub spatial: SpatialKind,
    pub column_names: Vec<String>,
    pub cpids: Vec<String>,
    pub n_days: usize,
    /// Training days, one per RW2 node.
    pub calendar: Vec<NaiveDate>,
    /// Spatial weights per station in `cpids` order.
    pub station_weights: Vec<Vec<(usize, f64)>>,
    /// Frame row of each model observation (rows are held in canonical order).
    pub row_order: Vec<usize>,
}

impl ChargeModel {
    pub fn n_fixed(&self) -> usize {
        self.column_names.len()
    }

    pub fn time_offset(&self) -> usize {
        self.n_fixed()
    }

    pub fn space_offset(&self) -> usize {
        self.n_fixed() + self.n_days
    }

    pub fn n_space(&self) -> usize {
        self.latent.dim - self.space_offset()
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.latent.hyper.iter().map(|h| h.name.clone()).collect()
    }

    /// Latent incidence of a covariate row on `day_index` at station `station`.
    pub fn incidence(&self, day_index: usize, station: usize) -> Vec<(usize, f64)> {
        let mut row = vec![(self.time_offset() + day_index, 1.0)];
        row.extend(
            self.station_weights[station]
                .iter()
                .map(|&(j, w)| (self.space_offset() + j, w)),
        );
        row
    }
}

/// Builds the charging model from a frame.
///
/// Rows are stored sorted by day, station, response and covariates so the
/// result does not depend on the frame's row order.
pub fn assemble(
    frame: &ModelFrame,
    spatial: SpatialSpec,
    temporal: TemporalSpec,
    priors: &PriorSpec,
) -> Result<ChargeModel> {
    priors.validate()?;
    let n = frame.n_rows();
    let k = frame.n_cols();
    let n_t = temporal.n_days;
    let n_stations = frame.cpids.len();
    if frame.day_index.len() != n || frame.cpid_index.len() != n || frame.x.nrows != n {
        return Err(Error::invalid("frame columns have different lengths"));
    }
    if n_t > frame.calendar.len() {
        return Err(Error::invalid(format!(
            "{n_t} RW2 days requested but the frame calendar has {}",
            frame.calendar.len()
        )));
    }
    if let Some(&d) = frame.day_index.iter().find(|&&d| d >= n_t) {
        return Err(Error::invalid(format!("day index {d} outside the {n_t}-day RW2 range")));
    }
    if let Some(&j) = frame.cpid_index.iter().find(|&&j| j >= n_stations) {
        return Err(Error::invalid(format!("station index {j} outside the frame's {n_stations} stations")));
    }
    let station_weights: Vec<Vec<(usize, f64)>> = match &spatial {
        SpatialSpec::Icar { structure } => {
            if structure.dim() != n_stations {
                return Err(Error::invalid(format!(
                    "ICAR graph has {} nodes but the frame has {n_stations} stations",
                    structure.dim()
                )));
            }
            (0..n_stations).map(|j| spatial.station_row(j)).collect()
        }
        SpatialSpec::Spde {
            structure,
            station_weights,
        } => {
            if station_weights.len() != n_stations {
                return Err(Error::invalid(format!(
                    "{} station projection rows for {n_stations} stations",
                    station_weights.len()
                )));
            }
            for (j, row) in station_weights.iter().enumerate() {
                let s: f64 = row.iter().map(|&(_, w)| w).sum();
                if row.is_empty() || row.len() > 3 || row.iter().any(|&(v, _)| v >= structure.dim()) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("projection row of station {j} is not barycentric")));
                }
            }
            station_weights.clone()
        }
    };
    let m = spatial.n_nodes();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (frame.day_index[a], frame.cpid_index[a], frame.y[a])
            .cmp(&(frame.day_index[b], frame.cpid_index[b], frame.y[b]))
            .then_with(|| {
                frame
                    .x
                    .row(a)
                    .iter()
                    .zip(frame.x.row(b))
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });

    let dense = frame.x.select_rows(&order);
    let y: Vec<f64> = order.iter().map(|&r| f64::from(frame.y[r])).collect();
    let sparse: Vec<Vec<(usize, f64)>> = order
        .iter()
        .map(|&r| {
            let mut row = vec![(k + frame.day_index[r], 1.0)];
            row.extend(station_weights[frame.cpid_index[r]].iter().map(|&(j, w)| (k + n_t + j, w)));
            row
        })
        .collect();

    let mut blocks = Vec::new();
    if k > 0 {
        blocks.push(LatentBlock {
            name: "fixed".into(),
            offset: 0,
            size: k,
            precision: BlockPrecision::Fixed {
                precision: priors.fixed_precision,
            },
        });
    }
    blocks.push(LatentBlock {
        name: "time".into(),
        offset: k,
        size: n_t,
        precision: BlockPrecision::Scaled {
            structure: rw2_structure(n_t)?,
            jitter: priors.jitter,
            theta: 0,
        },
    });
    let mut hyper = vec![Hyperparameter {
        name: "theta_t".into(),
        prior: priors.rw2,
    }];
    let kind = spatial.kind();
    let space_precision = match spatial {
        SpatialSpec::Icar { structure } => {
            hyper.push(Hyperparameter {
                name: "log_tau_icar".into(),
                prior: priors.icar,
            });
            BlockPrecision::Scaled {
                structure,
                jitter: priors.jitter,
                theta: 1,
            }
        }
        SpatialSpec::Spde { structure, .. } => {
            hyper.push(Hyperparameter {
                name: "theta1".into(),
                prior: priors.spde_theta1,
            });
            hyper.push(Hyperparameter {
                name: "theta2".into(),
                prior: priors.spde_theta2,
            });
            BlockPrecision::Spde { structure, theta: [1, 2] }
        }
    };
    blocks.push(LatentBlock {
        name: "space".into(),
        offset: k + n_t,
        size: m,
        precision: space_precision,
    });
    let constraints = vec![
        (k..k + n_t).map(|j| (j, 1.0)).collect(),
        (k + n_t..k + n_t + m).map(|j| (j, 1.0)).collect(),
    ];
    let latent = LatentModel::new(
        blocks,
        Observations { y, dense, sparse },
        Likelihood::Poisson,
        constraints,
        hyper,
    )?;
    Ok(ChargeModel {
        latent,
        spatial: kind,
        column_names: frame.column_names.clone(),
        cpids: frame.cpids.clone(),
        n_days: n_t,
        calendar: frame.calendar[..n_t].to_vec(),
        station_weights,
        row_order: order,
    })
}
