//! Weighted least squares: the exact Gaussian posterior used as an oracle.
//!
//! For linear measurements z_a = h_aᵀx + noise the posterior precision is
//! A = Σ h_a h_aᵀ/σ_a² and the mean solves A x = b with b = Σ h_a z_a/σ_a².
//! The matrices are dense; the grids handled here have at most a few hundred
//! lines.
//!
//! A Cholesky factorization is tried first. If a pivot collapses relative to
//! its diagonal the system is rank deficient and a symmetric eigensolver takes
//! over: eigenvalues below 1e-10·λ_max span the null space, the mean is the
//! minimum-norm solution and a linear functional d is determined by the data
//! iff d is orthogonal to that null space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::factor_graph::FactorGraph;
use crate::grid::{GridCase, LineId};
use crate::scenarios::MeasurementSet;

const PIVOT_RATIO: f64 = 1e-8;
const EIGEN_CUTOFF: f64 = 1e-10;
const NULL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WlsError {
    #[error("line {0} is not retrievable from the measurements")]
    NotRetrievable(LineId),
    #[error("unknown line {0}")]
    UnknownLine(LineId),
    #[error("measurement set references unknown bus {0}")]
    UnknownBus(u32),
}

/// One linear measurement row: sparse coefficients, value, variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRow {
    pub coefficients: Vec<(usize, f64)>,
    pub z: f64,
    pub variance: f64,
}

/// Normal equations A x = b of Σ_a (h_aᵀx − z_a)²/2σ_a², plus the constant
/// c = Σ z_a²/σ_a², so the objective is ½(xᵀAx − 2bᵀx + c).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub precision: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub constant: f64,
    pub rows: Vec<MeasurementRow>,
}

impl LinearSystem {
    /// Rows with infinite variance carry no information and are dropped.
    pub fn from_rows(dim: usize, rows: Vec<MeasurementRow>) -> Self {
        let rows: Vec<MeasurementRow> = rows.into_iter().filter(|r| r.variance.is_finite()).collect();
        let mut precision = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        let mut constant = 0.0;
        for r in &rows {
            let w = 1.0 / r.variance;
            for &(i, hi) in &r.coefficients {
                rhs[i] += w * hi * r.z;
                for &(j, hj) in &r.coefficients {
                    precision[(i, j)] += w * hi * hj;
                }
            }
            constant += w * r.z * r.z;
        }
        Self {
            precision,
            rhs,
            constant,
            rows,
        }
    }

    /// Flow-variable system of a factor graph.
    pub fn from_graph(graph: &FactorGraph) -> Self {
        let rows = (0..graph.factor_count())
            .map(|f| {
                let factor = &graph.factors()[f];
                MeasurementRow {
                    coefficients: graph.factor_neighbors(f).collect(),
                    z: factor.z,
                    variance: factor.variance,
                }
            })
            .collect();
        Self::from_rows(graph.variable_count(), rows)
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Σ_a (h_aᵀx − z_a)²/2σ_a², evaluated row by row.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let fx: f64 = r.coefficients.iter().map(|&(i, h)| h * x[i]).sum();
                (fx - r.z).powi(2) / (2.0 * r.variance)
            })
            .sum()
    }
}

/// Inverse (or pseudo-inverse) of A and, if A is singular, a basis of its
/// null space.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub covariance: DMatrix<f64>,
    pub null_space: Option<DMatrix<f64>>,
}

impl Factorization {
    pub fn of(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        if n == 0 {
            return Self {
                covariance: DMatrix::zeros(0, 0),
                null_space: None,
            };
        }
        if let Some(chol) = Cholesky::<f64, Dyn>::new(a.clone()) {
            let l = chol.l_dirty();
            let well_posed = (0..n).all(|i| l[(i, i)] * l[(i, i)] >= PIVOT_RATIO * a[(i, i)]);
            if well_posed {
                return Self {
                    covariance: chol.inverse(),
                    null_space: None,
                };
            }
        }
        let eig = SymmetricEigen::new(a.clone());
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = EIGEN_CUTOFF * lambda_max;
        let mut covariance = DMatrix::zeros(n, n);
        let mut null_cols = Vec::new();
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            if lambda > cutoff && lambda_max > 0.0 {
                covariance += (&v * v.transpose()) / lambda;
            } else {
                null_cols.push(v.into_owned());
            }
        }
        let null_space = if null_cols.is_empty() {
            None
        } else {
            Some(DMatrix::from_columns(&null_cols))
        };
        Self {
            covariance,
            null_space,
        }
    }

    /// Whether dᵀx is pinned down by the data.
    pub fn identifiable(&self, d: &DVector<f64>) -> bool {
        match &self.null_space {
            None => true,
            Some(null) => (null.transpose() * d).norm() <= NULL_TOLERANCE * d.norm(),
        }
    }

    /// Identifiability of each coordinate x_i.
    pub fn identifiable_coordinates(&self) -> Vec<bool> {
        let n = self.covariance.nrows();
        match &self.null_space {
            None => vec![true; n],
            Some(null) => (0..n).map(|i| null.row(i).norm() <= NULL_TOLERANCE).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    /// Posterior means (MW); minimum-norm values where not retrievable.
    pub means: Vec<f64>,
    /// Posterior covariance (MW²); meaningful on retrievable rows/columns.
    pub covariance: DMatrix<f64>,
    pub retrievable: Vec<bool>,
    /// Σ_a (f_a(x̂) − z_a)²/σ_a².
    pub residual: f64,
}

impl WlsSolution {
    /// Posterior variance of variable `i`, `inf` if not retrievable.
    pub fn variance(&self, i: usize) -> f64 {
        if self.retrievable[i] {
            self.covariance[(i, i)]
        } else {
            f64::INFINITY
        }
    }
}

pub fn wls_flows(graph: &FactorGraph) -> WlsSolution {
    let system = LinearSystem::from_graph(graph);
    let fac = Factorization::of(&system.precision);
    let means = &fac.covariance * &system.rhs;
    let retrievable = if system.rows.is_empty() {
        vec![false; system.dim()]
    } else {
        fac.identifiable_coordinates()
    };
    let residual = 2.0 * system.objective(means.as_slice());
    WlsSolution {
        means: means.iter().copied().collect(),
        covariance: fac.covariance,
        retrievable,
        residual,
    }
}

/// Posterior covariance of the flows in `subset`. Depends only on the
/// measurement variances, never on the measured values.
pub fn exact_covariance(graph: &FactorGraph, subset: &[LineId]) -> Result<DMatrix<f64>, WlsError> {
    let idx: Vec<usize> = subset
        .iter()
        .map(|&l| graph.variable_index(l).ok_or(WlsError::UnknownLine(l)))
        .collect::<Result<_, _>>()?;
    let system = LinearSystem::from_graph(graph);
    let fac = Factorization::of(&system.precision);
    let retrievable = fac.identifiable_coordinates();
    for (&i, &l) in idx.iter().zip(subset) {
        if system.rows.is_empty() || !retrievable[i] {
            return Err(WlsError::NotRetrievable(l));
        }
    }
    Ok(DMatrix::from_fn(idx.len(), idx.len(), |r, c| fac.covariance[(idx[r], idx[c])]))
}

/// WLS over bus angles under the DC law, returned as implied line flows.
///
/// The lowest-numbered bus of each connected component is the angle
/// reference. A flow counts as retrievable when its angle difference is
/// identifiable.
pub fn wls_angles(case: &GridCase, meas: &MeasurementSet) -> Result<WlsSolution, WlsError> {
    for id in meas.flow.keys() {
        if case.line_index(*id).is_none() {
            return Err(WlsError::UnknownLine(*id));
        }
    }
    for id in meas.injection.keys() {
        if case.bus_index(*id).is_none() {
            return Err(WlsError::UnknownBus(*id));
        }
    }
    let components = case.components();
    let n_buses = case.buses().len();
    let mut reference: Vec<Option<usize>> = vec![None; n_buses];
    for b in 0..n_buses {
        let c = components[b];
        let current = reference[c];
        if current.is_none_or(|r| case.buses()[b].id < case.buses()[r].id) {
            reference[c] = Some(b);
        }
    }
    let is_reference = |b: usize| reference[components[b]] == Some(b);
    let mut column = vec![None; n_buses];
    let mut dim = 0;
    for b in 0..n_buses {
        if !is_reference(b) {
            column[b] = Some(dim);
            dim += 1;
        }
    }

    // Flow of line l as a sparse functional of the reduced angle vector.
    let flow_row = |l: usize| -> Vec<(usize, f64)> {
        let (f, t) = case.endpoints(l);
        let k = case.base_mva() * case.lines()[l].susceptance;
        let mut row = Vec::with_capacity(2);
        if let Some(c) = column[f] {
            row.push((c, k));
        }
        if let Some(c) = column[t] {
            row.push((c, -k));
        }
        row
    };
    let mut rows = Vec::new();
    for (l, line) in case.lines().iter().enumerate() {
        if let Some(m) = meas.flow.get(&line.id) {
            rows.push(MeasurementRow {
                coefficients: flow_row(l),
                z: m.z,
                variance: m.variance,
            });
        }
    }
    for (b, bus) in case.buses().iter().enumerate() {
        if let Some(m) = meas.injection.get(&bus.id) {
            let mut dense = std::collections::BTreeMap::new();
            for &(l, sign) in case.incident_lines(b) {
                for (c, h) in flow_row(l) {
                    *dense.entry(c).or_insert(0.0) += sign * h;
                }
            }
            rows.push(MeasurementRow {
                coefficients: dense.into_iter().collect(),
                z: m.z,
                variance: m.variance,
            });
        }
    }
    let system = LinearSystem::from_rows(dim, rows);
    let fac = Factorization::of(&system.precision);
    let theta = &fac.covariance * &system.rhs;

    let n_lines = case.lines().len();
    let mut d = DMatrix::zeros(n_lines, dim);
    for l in 0..n_lines {
        for (c, h) in flow_row(l) {
            d[(l, c)] = h;
        }
    }
    let means = &d * &theta;
    let covariance = &d * &fac.covariance * d.transpose();
    let retrievable = (0..n_lines)
        .map(|l| {
            let row = d.row(l).transpose();
            !system.rows.is_empty() && (row.norm() == 0.0 || fac.identifiable(&row))
        })
        .collect();
    let residual = 2.0 * system.objective(theta.as_slice());
    Ok(WlsSolution {
        means: means.iter().copied().collect(),
        covariance,
        retrievable,
        residual,
    })
}
