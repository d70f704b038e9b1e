//! Energy-weighted entropic optimal transport.
//!
//! The OT head produces a `K × N` matrix of cluster logits. From it we derive
//! per-sample energies (log-sum-exp over clusters), use the shifted energies
//! as the column marginal and as a per-sample weight on the cluster
//! probabilities, and solve the entropically regularized transport problem
//! with Sinkhorn scaling. The solver maximizes
//!
//! ```text
//! <Q, log C> - ε Σ Q log Q     subject to  Q 1 = α,  Qᵀ 1 = β
//! ```
//!
//! whose solution is `Q = Diag(u) C^(1/ε) Diag(v)` with the power taken
//! element-wise. Smaller `ε` therefore sharpens the coupling.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, log_sum_exp, softmax_into};

/// Relative offset that keeps shifted energies strictly positive.
pub const ENERGY_SHIFT_DELTA: f64 = 1e-3;

/// Default entropic weight.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Tolerance on marginal L1 errors used by `SinkhornOptions::default`.
pub const DEFAULT_TOL: f64 = 1e-6;

pub const DEFAULT_MAX_ITER: usize = 1000;

/// Below this value a kernel row is treated as underflowed by the dense path.
const KERNEL_UNDERFLOW: f64 = 1e-280;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    /// Rows index OT-head clusters.
    Cluster,
    /// Rows index classifier classes.
    Class,
}

/// Finite logits laid out with one row per cluster (or class) and one column
/// per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: Array2<f64>,
    kind: RowKind,
}

impl LogitMatrix {
    pub fn new(values: Array2<f64>, kind: RowKind) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "logit matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        for ((row, sample), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { sample, row });
            }
        }
        Ok(Self { values, kind })
    }

    /// Builds the matrix from network output laid out one sample per row.
    pub fn from_sample_rows(per_sample: &Array2<f64>, kind: RowKind) -> Result<Self> {
        Self::new(per_sample.t().to_owned(), kind)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> RowKind {
        self.kind
    }

    /// Number of clusters (or classes).
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn samples(&self) -> usize {
        self.values.ncols()
    }

    fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i).to_vec()
    }
}

/// Per-sample energies: the raw log-sum-exp values and the strictly positive
/// shifted copy used as transport mass.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector {
    raw: Vec<f64>,
    shifted: Vec<f64>,
}

impl EnergyVector {
    /// Wraps precomputed energies. `shifted` must be strictly positive and
    /// finite and have the same length as `raw`.
    pub fn new(raw: Vec<f64>, shifted: Vec<f64>) -> Result<Self> {
        if raw.len() != shifted.len() {
            return Err(Error::Shape {
                expected: format!("{} shifted energies", raw.len()),
                got: shifted.len().to_string(),
            });
        }
        if shifted.is_empty() {
            return Err(Error::invalid("energy vector must be non-empty"));
        }
        if let Some(i) = shifted.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::invalid(format!(
                "shifted energy at sample {i} is not strictly positive: {}",
                shifted[i]
            )));
        }
        Ok(Self { raw, shifted })
    }

    /// Shifts raw energies by `-min + δ·max(range, 1)`.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if let Some(i) = raw.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFinite { sample: i, row: 0 });
        }
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let offset = ENERGY_SHIFT_DELTA * (max - min).max(1.0);
        let shifted = raw.iter().map(|&e| e - min + offset).collect();
        Self::new(raw, shifted)
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn shifted(&self) -> &[f64] {
        &self.shifted
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Column-wise softmax of the logits.
pub fn cluster_probabilities(logits: &LogitMatrix) -> Array2<f64> {
    let (k, n) = logits.values.dim();
    let mut out = Array2::zeros((k, n));
    let mut buf = vec![0.0; k];
    for i in 0..n {
        softmax_into(&logits.column(i), &mut buf);
        for (j, p) in buf.iter().enumerate() {
            out[[j, i]] = *p;
        }
    }
    out
}

pub fn energy_scores(logits: &LogitMatrix) -> EnergyVector {
    let raw = logits
        .values
        .axis_iter(Axis(1))
        .map(|col| log_sum_exp(col.iter().copied()))
        .collect();
    // logits are finite, so every raw energy is finite too
    EnergyVector::from_raw(raw).expect("finite logits give finite energies")
}

/// Uniform cluster marginal and energy-proportional sample marginal.
pub fn transport_marginals(energy: &EnergyVector, k: usize) -> Result<(Array1<f64>, Array1<f64>)> {
    if k == 0 {
        return Err(Error::invalid("number of clusters must be at least 1"));
    }
    let alpha = Array1::from_elem(k, 1.0 / k as f64);
    let total: f64 = energy.shifted.iter().sum();
    let beta = energy.shifted.iter().map(|e| e / total).collect();
    Ok((alpha, beta))
}

/// Scales column `i` of the probability matrix by the shifted energy of sample `i`.
pub fn energy_cost(probabilities: &Array2<f64>, energy: &EnergyVector) -> Result<Array2<f64>> {
    if probabilities.ncols() != energy.len() {
        return Err(Error::Shape {
            expected: format!("{} columns", energy.len()),
            got: format!("{} columns", probabilities.ncols()),
        });
    }
    let weights = Array1::from(energy.shifted.clone());
    Ok(probabilities * &weights.insert_axis(Axis(0)))
}

/// Cost matrix, marginals and entropic weight of one transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    cost: Array2<f64>,
    alpha: Array1<f64>,
    beta: Array1<f64>,
    epsilon: f64,
}

const MARGINAL_SUM_TOL: f64 = 1e-12;

impl TransportProblem {
    pub fn new(cost: Array2<f64>, alpha: Array1<f64>, beta: Array1<f64>, epsilon: f64) -> Result<Self> {
        let (k, n) = cost.dim();
        if k == 0 || n == 0 {
            return Err(Error::invalid("cost matrix must be non-empty"));
        }
        if alpha.len() != k || beta.len() != n {
            return Err(Error::Shape {
                expected: format!("alpha of length {k}, beta of length {n}"),
                got: format!("alpha of length {}, beta of length {}", alpha.len(), beta.len()),
            });
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if let Some(((j, i), c)) = cost.indexed_iter().find(|(_, c)| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::invalid(format!(
                "cost entries must be strictly positive and finite; entry ({j}, {i}) is {c}"
            )));
        }
        if alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::invalid("alpha entries must be non-negative"));
        }
        if beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::invalid("beta entries must be strictly positive"));
        }
        for (name, m) in [("alpha", &alpha), ("beta", &beta)] {
            let s = m.sum();
            if (s - 1.0).abs() > MARGINAL_SUM_TOL {
                return Err(Error::invalid(format!("{name} must sum to 1, sums to {s}")));
            }
        }
        Ok(Self {
            cost,
            alpha,
            beta,
            epsilon,
        })
    }

    /// Builds the energy-weighted problem from OT-head logits.
    pub fn from_logits(logits: &LogitMatrix, epsilon: f64) -> Result<(Self, EnergyVector)> {
        let energy = energy_scores(logits);
        let probabilities = cluster_probabilities(logits);
        let (alpha, beta) = transport_marginals(&energy, logits.rows())?;
        // Softmax can underflow to exactly zero for extreme logit gaps; keep
        // the cost strictly positive so log C stays finite.
        let cost = energy_cost(&probabilities, &energy)?.mapv(|c| c.max(f64::MIN_POSITIVE));
        Ok((Self::new(cost, alpha, beta, epsilon)?, energy))
    }

    pub fn cost(&self) -> &Array2<f64> {
        &self.cost
    }

    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Power applied element-wise to the cost to form the Sinkhorn kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelExponent {
    /// `C^(1/ε)`: the maximizer of `<Q, log C> - ε Σ Q log Q`.
    #[default]
    InverseEpsilon,
    /// `C^ε`, reading `Q^(1/ε) = Diag(u) C Diag(v)` literally.
    Epsilon,
}

impl std::str::FromStr for KernelExponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse_epsilon" => Ok(KernelExponent::InverseEpsilon),
            "epsilon" => Ok(KernelExponent::Epsilon),
            other => Err(Error::invalid(format!(
                "unknown kernel exponent {other:?} (expected inverse_epsilon or epsilon)"
            ))),
        }
    }
}

impl KernelExponent {
    pub fn name(self) -> &'static str {
        match self {
            KernelExponent::InverseEpsilon => "inverse_epsilon",
            KernelExponent::Epsilon => "epsilon",
        }
    }

    pub fn power(self, epsilon: f64) -> f64 {
        match self {
            KernelExponent::InverseEpsilon => 1.0 / epsilon,
            KernelExponent::Epsilon => epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stabilization {
    /// Multiplicative scaling on the kernel; fails if a kernel row underflows.
    Dense,
    /// Scaling carried out on log-potentials with log-sum-exp reductions.
    LogDomain,
    /// Dense unless some kernel row underflows, then log-domain.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub exponent: KernelExponent,
    pub stabilization: Stabilization,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            exponent: KernelExponent::default(),
            stabilization: Stabilization::default(),
        }
    }
}

/// Result of a Sinkhorn solve.
///
/// `u` and `v` scale the column-normalized kernel
/// `exp(p·log C[j,i] - max_j p·log C[j,i])` with `p` the kernel power. The
/// per-column normalization is absorbed by `v` and leaves `Q` unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub q: Array2<f64>,
    pub row_marginal_error: f64,
    pub col_marginal_error: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub log_domain: bool,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

pub fn sinkhorn_solve(problem: &TransportProblem, opts: &SinkhornOptions) -> Result<AssignmentMatrix> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let (k, n) = problem.cost.dim();
    let power = opts.exponent.power(problem.epsilon);

    // Column-normalized log-kernel, row-major.
    let mut log_kernel = vec![0.0; k * n];
    for i in 0..n {
        let mut col_max = f64::NEG_INFINITY;
        for j in 0..k {
            let lk = power * problem.cost[[j, i]].ln();
            log_kernel[j * n + i] = lk;
            col_max = col_max.max(lk);
        }
        for j in 0..k {
            log_kernel[j * n + i] -= col_max;
        }
    }

    let underflows = (0..k).any(|j| {
        log_kernel[j * n..(j + 1) * n]
            .iter()
            .all(|&lk| lk.exp() < KERNEL_UNDERFLOW)
    });
    let use_log = match opts.stabilization {
        Stabilization::LogDomain => true,
        Stabilization::Auto => underflows,
        Stabilization::Dense => {
            if underflows {
                return Err(Error::Numerical(
                    "kernel row underflows in the dense domain; use log-domain stabilization".into(),
                ));
            }
            false
        }
    };
    let alpha = problem.alpha.as_slice().expect("contiguous");
    let beta = problem.beta.as_slice().expect("contiguous");
    if use_log {
        Ok(solve_log_domain(&log_kernel, k, n, alpha, beta, opts))
    } else {
        let kernel: Vec<f64> = log_kernel.iter().map(|lk| lk.exp()).collect();
        solve_dense(&kernel, k, n, alpha, beta, opts)
    }
}

fn l1_error(actual: &[f64], target: &[f64]) -> f64 {
    actual.iter().zip(target).map(|(a, t)| (a - t).abs()).sum()
}

/// Row and column L1 marginal errors of a materialized coupling.
fn coupling_errors(q: &Array2<f64>, alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let rows: Vec<f64> = q.rows().into_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = q.columns().into_iter().map(|c| c.sum()).collect();
    (l1_error(&rows, alpha), l1_error(&cols, beta))
}

fn solve_dense(
    kernel: &[f64],
    k: usize,
    n: usize,
    alpha: &[f64],
    beta: &[f64],
    opts: &SinkhornOptions,
) -> Result<AssignmentMatrix> {
    let mut u = vec![1.0; k];
    let mut v = vec![1.0; n];
    let mut kv = vec![0.0; k];
    let mut ktu = vec![0.0; n];
    let mut row_sums = vec![0.0; k];
    let mut col_sums = vec![0.0; n];

    let mat_vec = |v: &[f64], out: &mut [f64]| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = kernel[j * n..(j + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };
    let mat_t_vec = |u: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &uj) in u.iter().enumerate() {
            for (o, &kji) in out.iter_mut().zip(&kernel[j * n..(j + 1) * n]) {
                *o += kji * uj;
            }
        }
    };

    mat_vec(&v, &mut kv);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for j in 0..k {
            u[j] = alpha[j] / kv[j];
        }
        mat_t_vec(&u, &mut ktu);
        for i in 0..n {
            v[i] = beta[i] / ktu[i];
        }
        mat_vec(&v, &mut kv);
        mat_t_vec(&u, &mut ktu);
        for j in 0..k {
            row_sums[j] = u[j] * kv[j];
        }
        for i in 0..n {
            col_sums[i] = v[i] * ktu[i];
        }
        let row_err = l1_error(&row_sums, alpha);
        let col_err = l1_error(&col_sums, beta);
        if !(row_err.is_finite() && col_err.is_finite()) {
            return Err(Error::Numerical(format!(
                "dense Sinkhorn scaling became non-finite at iteration {iterations}"
            )));
        }
        if row_err <= opts.tol && col_err <= opts.tol {
            break;
        }
    }

    let mut q = Array2::zeros((k, n));
    for j in 0..k {
        for i in 0..n {
            q[[j, i]] = u[j] * kernel[j * n + i] * v[i];
        }
    }
    // Report the errors of the returned coupling itself.
    let (row_err, col_err) = coupling_errors(&q, alpha, beta);
    Ok(AssignmentMatrix {
        q,
        row_marginal_error: row_err,
        col_marginal_error: col_err,
        iterations_used: iterations,
        converged: row_err <= opts.tol && col_err <= opts.tol,
        log_domain: false,
        u: Array1::from(u),
        v: Array1::from(v),
    })
}

fn solve_log_domain(
    log_kernel: &[f64],
    k: usize,
    n: usize,
    alpha: &[f64],
    beta: &[f64],
    opts: &SinkhornOptions,
) -> AssignmentMatrix {
    let log_alpha: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    let log_beta: Vec<f64> = beta.iter().map(|b| b.ln()).collect();
    let mut f = vec![0.0; k];
    let mut g = vec![0.0; n];
    let mut col_buf = vec![0.0; k];

    let update_f = |g: &[f64], f: &mut [f64]| {
        for j in 0..k {
            let row = &log_kernel[j * n..(j + 1) * n];
            f[j] = log_alpha[j] - log_sum_exp(row.iter().zip(g).map(|(lk, gi)| lk + gi));
        }
    };
    let update_g = |f: &[f64], g: &mut [f64], buf: &mut [f64]| {
        for i in 0..n {
            for j in 0..k {
                buf[j] = log_kernel[j * n + i] + f[j];
            }
            g[i] = log_beta[i] - log_sum_exp(buf.iter().copied());
        }
    };

    let mut iterations = 0;
    let mut q = vec![0.0; k * n];
    while iterations < opts.max_iter {
        iterations += 1;
        update_f(&g, &mut f);
        update_g(&f, &mut g, &mut col_buf);
        for j in 0..k {
            for i in 0..n {
                q[j * n + i] = (f[j] + log_kernel[j * n + i] + g[i]).exp();
            }
        }
        let row_sums: Vec<f64> = (0..k).map(|j| q[j * n..(j + 1) * n].iter().sum()).collect();
        let col_sums: Vec<f64> = (0..n).map(|i| (0..k).map(|j| q[j * n + i]).sum()).collect();
        let row_err = l1_error(&row_sums, alpha);
        let col_err = l1_error(&col_sums, beta);
        if row_err <= opts.tol && col_err <= opts.tol {
            break;
        }
    }

    let q = Array2::from_shape_vec((k, n), q).expect("k*n entries");
    let (row_err, col_err) = coupling_errors(&q, alpha, beta);
    AssignmentMatrix {
        q,
        row_marginal_error: row_err,
        col_marginal_error: col_err,
        iterations_used: iterations,
        converged: row_err <= opts.tol && col_err <= opts.tol,
        log_domain: true,
        u: Array1::from(f).mapv(f64::exp),
        v: Array1::from(g).mapv(f64::exp),
    }
}

/// Entropic objective `<Q, log C> - ε Σ Q log Q` (with `0 log 0 = 0`).
pub fn entropic_objective(q: &Array2<f64>, cost: &Array2<f64>, epsilon: f64) -> f64 {
    q.iter()
        .zip(cost.iter())
        .map(|(&q, &c)| {
            let ent = if q > 0.0 { q * q.ln() } else { 0.0 };
            q * c.ln() - epsilon * ent
        })
        .sum()
}

/// Cluster index of every sample: the row holding the column maximum, lowest
/// index on ties.
pub fn harden(assignment: &AssignmentMatrix) -> Vec<usize> {
    harden_columns(&assignment.q)
}

pub fn harden_columns(q: &Array2<f64>) -> Vec<usize> {
    q.axis_iter(Axis(1))
        .map(|col| argmax(&col.to_vec()))
        .collect()
}

/// Energy-based transport end to end: logits in, energies, coupling and
/// hardened cluster indices out.
#[derive(Debug, Clone)]
pub struct EnergyTransport {
    pub energy: EnergyVector,
    pub assignment: AssignmentMatrix,
    pub clusters: Vec<usize>,
}

pub fn energy_transport(logits: &LogitMatrix, epsilon: f64, opts: &SinkhornOptions) -> Result<EnergyTransport> {
    let (problem, energy) = TransportProblem::from_logits(logits, epsilon)?;
    let assignment = sinkhorn_solve(&problem, opts)?;
    let clusters = harden(&assignment);
    Ok(EnergyTransport {
        energy,
        assignment,
        clusters,
    })
}
