//! Spectral graph machinery: distance-decay ("Dijkstra") adjacency,
//! clipped-deviation covariance adjacency, their Hadamard compound, the
//! scaled normalized Laplacian, and Chebyshev-basis application for the
//! graph convolution.

use crate::error::{Error, Result};
use crate::network::RoadNetwork;
use crate::seed;
use crate::tensor::{matmul_2d, Tensor};
use rand::Rng;

/// The three adjacency matrices plus the knobs that produced them.
#[derive(Debug, Clone)]
pub struct AdjacencySet {
    /// Distance-decay weights `w^(d)`, n×n.
    pub dijkstra: Tensor,
    /// Clipped-deviation covariance `σ`, n×n.
    pub covariance: Tensor,
    /// Hadamard product `w^(c) = σ ∘ w^(d)`, n×n.
    pub compound: Tensor,
    /// Spatial attenuation σ² in km².
    pub sigma2: f64,
    /// Sparsity cutoff ε.
    pub epsilon: f64,
}

/// Scaled Laplacian ready for Chebyshev filtering.
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    /// L̃ = 2L/λ_max − I, n×n, symmetric with spectrum in [−1, 1].
    pub scaled_laplacian: Tensor,
    pub lambda_max: f64,
    pub chebyshev_order: usize,
}

impl SpectralOperator {
    pub fn n(&self) -> usize {
        self.scaled_laplacian.shape()[0]
    }
}

/// Gaussian distance decay: `w_ij = exp(−d_ij²/σ²)`, zeroed below ε.
/// Distances in km, σ² in km². Unreachable pairs (infinite distance)
/// decay to zero.
pub fn dijkstra_matrix(dist_km: &[Vec<f64>], sigma2: f64, epsilon: f64) -> Result<Tensor> {
    if !(sigma2 > 0.0) {
        return Err(Error::Config(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0,1), got {epsilon}")));
    }
    let n = dist_km.len();
    let mut data = Vec::with_capacity(n * n);
    for row in dist_km {
        if row.len() != n {
            return Err(Error::Shape(format!(
                "distance matrix not square: row of {} in {n}×{n}",
                row.len()
            )));
        }
        for &d in row {
            let w = if d.is_finite() { (-d * d / sigma2).exp() } else { 0.0 };
            data.push(if w >= epsilon { w } else { 0.0 });
        }
    }
    Tensor::new(vec![n, n], data)
}

/// Clipped-deviation covariance over the training slots:
/// `σ_ij = Σ_t (τ_i,t − τ̄_i)₊ (τ_j,t − τ̄_j)₊` — deliberately without
/// the 1/S normalization.
pub fn covariance_matrix(train_tau: &Tensor) -> Result<Tensor> {
    let [n, s] = *train_tau.shape() else {
        return Err(Error::Shape(format!(
            "covariance input must be n×S, got {:?}",
            train_tau.shape()
        )));
    };
    if s < 2 {
        return Err(Error::Data(format!(
            "covariance needs at least 2 training slots, got {s}"
        )));
    }
    // positive parts of per-segment deviations
    let mut dev = vec![0.0; n * s];
    for i in 0..n {
        let row = &train_tau.data()[i * s..(i + 1) * s];
        let mean = row.iter().sum::<f64>() / s as f64;
        for (d, &x) in dev[i * s..(i + 1) * s].iter_mut().zip(row) {
            *d = (x - mean).max(0.0);
        }
    }
    // σ = dev · devᵀ
    let mut out = vec![0.0; n * n];
    crate::tensor::matmul_a_bt_into(&dev, &dev, &mut out, n, s, n);
    Tensor::new(vec![n, n], out)
}

/// Hadamard product of the covariance and distance-decay matrices.
pub fn compound_matrix(cov: &Tensor, dijkstra: &Tensor) -> Result<Tensor> {
    if cov.shape() != dijkstra.shape() {
        return Err(Error::Shape(format!(
            "compound factors disagree: {:?} vs {:?}",
            cov.shape(),
            dijkstra.shape()
        )));
    }
    let data = cov
        .data()
        .iter()
        .zip(dijkstra.data())
        .map(|(&a, &b)| a * b)
        .collect();
    Tensor::new(cov.shape().to_vec(), data)
}

/// Build all three adjacency matrices for a network and its training
/// travel-time series (n×S, in s/m).
pub fn build_adjacency(
    net: &RoadNetwork,
    train_tau: &Tensor,
    sigma2: f64,
    epsilon: f64,
) -> Result<AdjacencySet> {
    let dist = net.midpoint_distances_km();
    let dijkstra = dijkstra_matrix(&dist, sigma2, epsilon)?;
    let covariance = covariance_matrix(train_tau)?;
    let compound = compound_matrix(&covariance, &dijkstra)?;
    Ok(AdjacencySet { dijkstra, covariance, compound, sigma2, epsilon })
}

const SYMMETRY_TOL: f64 = 1e-9;
const POWER_ITER_TOL: f64 = 1e-9;
const POWER_ITER_CAP: usize = 10_000;

/// Normalized Laplacian `L = I − D^{−1/2} W D^{−1/2}` (rows with zero
/// degree use the convention `D^{−1/2}_ii = 0`, leaving `L_ii = 1`),
/// rescaled to `L̃ = 2L/λ_max − I` with λ_max from power iteration.
pub fn scaled_laplacian(w: &Tensor, chebyshev_order: usize) -> Result<SpectralOperator> {
    let [n, n2] = *w.shape() else {
        return Err(Error::Shape(format!("adjacency must be square, got {:?}", w.shape())));
    };
    if n != n2 {
        return Err(Error::Shape(format!("adjacency must be square, got {:?}", w.shape())));
    }
    if chebyshev_order == 0 {
        return Err(Error::Config("Chebyshev order must be at least 1".into()));
    }
    let wd = w.data();
    let mut any_edge = false;
    for i in 0..n {
        for j in 0..n {
            let v = wd[i * n + j];
            if v < 0.0 {
                return Err(Error::Graph(format!("negative adjacency weight at ({i},{j})")));
            }
            if (v - wd[j * n + i]).abs() > SYMMETRY_TOL {
                return Err(Error::Graph(format!("adjacency not symmetric at ({i},{j})")));
            }
            if i != j && v > 0.0 {
                any_edge = true;
            }
        }
    }
    if !any_edge {
        return Err(Error::Graph("adjacency has no edges; graph Laplacian is undefined".into()));
    }
    let mut dinv_sqrt = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = wd[i * n..(i + 1) * n].iter().sum();
        dinv_sqrt[i] = if deg > 0.0 { deg.powf(-0.5) } else { 0.0 };
    }
    let mut lap = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let norm = dinv_sqrt[i] * wd[i * n + j] * dinv_sqrt[j];
            lap[i * n + j] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    let lambda_max = power_iteration(&lap, n)?;
    let mut scaled = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = 2.0 * lap[i * n + j] / lambda_max;
            scaled[i * n + j] = if i == j { v - 1.0 } else { v };
        }
    }
    Ok(SpectralOperator {
        scaled_laplacian: Tensor::new(vec![n, n], scaled)?,
        lambda_max,
        chebyshev_order,
    })
}

/// Largest eigenvalue of a symmetric positive-semidefinite matrix by
/// power iteration with a fixed-seed start vector. Stops when the
/// residual ‖Mv − λv‖ falls below tolerance; the returned estimate is
/// inflated by a hair so the downstream rescaling never pushes the
/// spectrum of L̃ above 1 (the Rayleigh quotient only ever
/// underestimates the true maximum).
fn power_iteration(m: &[f64], n: usize) -> Result<f64> {
    let mut rng = seed::rng(0x5eed_1a11, "power-iteration");
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITER_CAP {
        let mut mv = vec![0.0; n];
        for i in 0..n {
            let row = &m[i * n..(i + 1) * n];
            mv[i] = row.iter().zip(&v).map(|(&a, &b)| a * b).sum();
        }
        lambda = v.iter().zip(&mv).map(|(&a, &b)| a * b).sum();
        let residual = mv
            .iter()
            .zip(&v)
            .map(|(&mvi, &vi)| (mvi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = mv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Graph("power iteration hit the null space".into()));
        }
        for (vi, m) in v.iter_mut().zip(&mv) {
            *vi = m / norm;
        }
        if residual <= POWER_ITER_TOL * lambda.abs().max(1.0) {
            break;
        }
    }
    Ok(lambda * (1.0 + 16.0 * POWER_ITER_TOL))
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// `T_k(L̃) · X` for a single order `k < spec.chebyshev_order`, via the
/// recurrence `T_0 = I`, `T_1 = L̃`, `T_k = 2 L̃ T_{k−1} − T_{k−2}`
/// applied as iterated matrix-vector products (the polynomial matrix is
/// never formed).
pub fn chebyshev_apply(spec: &SpectralOperator, x: &Tensor, k: usize) -> Result<Tensor> {
    if k >= spec.chebyshev_order {
        return Err(Error::Graph(format!(
            "Chebyshev order {k} out of range (operator order {})",
            spec.chebyshev_order
        )));
    }
    let n = spec.n();
    let [xn, c] = *x.shape() else {
        return Err(Error::Shape(format!("chebyshev input must be n×C, got {:?}", x.shape())));
    };
    if xn != n {
        return Err(Error::Shape(format!(
            "chebyshev input has {xn} rows, operator expects {n}"
        )));
    }
    if k == 0 {
        return Ok(x.clone());
    }
    let lap = spec.scaled_laplacian.data();
    let mut prev = x.data().to_vec();
    let mut cur = matmul_2d(lap, x.data(), n, n, c);
    for _ in 2..=k {
        let mut next = matmul_2d(lap, &cur, n, n, c);
        for (nx, &pv) in next.iter_mut().zip(&prev) {
            *nx = 2.0 * *nx - pv;
        }
        prev = cur;
        cur = next;
    }
    Tensor::new(vec![n, c], cur)
}
