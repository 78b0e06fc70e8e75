//! Grid and per-mode operator assembly.
//!
//! Functions on the surface separate into spherical-harmonic modes
//! u(s) Y_k(omega).  In the chart of `geometry` (stretch a, radius r) the
//! stability operator -L = -(Lap + |A|^2) acts on mode k as the
//! Sturm-Liouville operator
//!
//!   -L_k u = (1/w) [ -(p u')' + q_k u ],
//!   p = |r|^{n-1}/a,   q_k = nu_k a |r|^{n-3} - |A|^2 a |r|^{n-1},
//!   w = a |r|^{n-1},   nu_k = k (k + n - 2),
//!
//! discretized by the conservative second-order finite-volume scheme: fluxes
//! p at cell interfaces, trapezoidal node measures B_j = tau_j w_j.  The
//! resulting matrix is exactly self-adjoint in the weighted inner product
//! <u, v>_B = sum B_j u_j v_j, and the generalized eigenproblem A u = lambda
//! B u is solved through the symmetric similarity C = B^{-1/2} A B^{-1/2}.
//!
//! Boundary nodes at s = +-S are Dirichlet-eliminated.  On the plane chart
//! the axis node (r = 0) keeps its degree of freedom for k = 0 with the exact
//! cell-integrated measure (the trapezoidal value would vanish), and is
//! Dirichlet-pinned for k >= 1, which is the regularity condition there.

use crate::error::{Error, Result};
use crate::geometry::{Profile, Surface, SurfaceKind};
use nalgebra::{DMatrix, DVector};

/// Relative tolerance for the exact-symmetry invariant of assembled operators.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Discretized surface: profile samples plus quadrature weights and the
/// angular mode cutoff.
#[derive(Debug, Clone)]
pub struct Grid {
    pub profile: Profile,
    pub k_max: usize,
    /// Trapezoidal factors tau_j (h/2 at the ends, h inside).
    pub trap: Vec<f64>,
    /// Mode measure B_j = tau_j w_j (per unit-normalized spherical harmonic).
    pub measure_mode: Vec<f64>,
    /// Physical measure for axisymmetric fields: |S^{n-1}| B_j.
    pub measure: Vec<f64>,
}

/// Build the uniform chart grid with N_s nodes on [-S, S] and modes 0..=K.
pub fn build_grid(surface: Surface, s_max: f64, n_s: usize, k_max: usize) -> Result<Grid> {
    let profile = surface.profile(s_max, n_s)?;
    let h = profile.h;
    let n = profile.len();
    let mut trap = vec![h; n];
    trap[0] = 0.5 * h;
    trap[n - 1] = 0.5 * h;
    let mut measure_mode: Vec<f64> = (0..n).map(|j| trap[j] * profile.nodes[j].area_element).collect();
    for j in 0..n {
        // Plane axis cell: the trapezoidal nodal weight vanishes with the
        // area element; substitute the exact cell integral of |r|^{n-1}.
        if profile.nodes[j].r.abs() < 1e-12 && surface.kind == SurfaceKind::Plane {
            let half = 0.5 * h;
            measure_mode[j] = 2.0 * half.powi(surface.n as i32) / surface.n as f64;
        }
        if !(measure_mode[j] > 0.0) {
            return Err(Error::Config(format!("non-positive measure weight at node {j}")));
        }
    }
    let omega = surface.sphere_area();
    let measure = measure_mode.iter().map(|&b| b * omega).collect();
    Ok(Grid { profile, k_max, trap, measure_mode, measure })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.profile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profile.is_empty()
    }

    /// L2 inner product of axisymmetric fields over the whole surface
    /// (trapezoid on the profile, exact sphere factor).
    pub fn l2_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (0..self.len()).map(|j| self.measure[j] * u[j] * v[j]).sum()
    }

    pub fn l2_norm(&self, u: &DVector<f64>) -> f64 {
        self.l2_inner(u, u).sqrt()
    }

    /// Inner product of two mode-k profile factors against unit-normalized
    /// harmonics (the measure is k-independent).
    pub fn l2_inner_mode(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (0..self.len()).map(|j| self.measure_mode[j] * u[j] * v[j]).sum()
    }

    /// Assemble the mode-k operator -L_k.
    pub fn assemble(&self, k: usize) -> ModeOperator {
        let surface = self.profile.surface;
        let n = self.len();
        let nu_k = surface.harmonic_eigenvalue(k);
        let ni = surface.n as i32;
        // Active nodes: interior, minus the axis node for k >= 1 on the plane.
        let active: Vec<usize> = (1..n - 1)
            .filter(|&j| {
                !(k >= 1
                    && surface.kind == SurfaceKind::Plane
                    && self.profile.nodes[j].r.abs() < 1e-12)
            })
            .collect();
        let h = self.profile.h;
        let p_mid: Vec<f64> = self
            .profile
            .mids
            .iter()
            .map(|&(r, a)| r.abs().powi(ni - 1) / a)
            .collect();
        let dim = active.len();
        let mut a_diag = vec![0.0; dim];
        let mut a_off = vec![0.0; dim.saturating_sub(1)];
        let mut b = vec![0.0; dim];
        for (i, &j) in active.iter().enumerate() {
            let nd = &self.profile.nodes[j];
            let q = if nd.r.abs() < 1e-12 {
                // k = 0 axis row: nu_0 = 0 and |A|^2 = 0 on the plane.
                0.0
            } else {
                nu_k * nd.a * nd.r.abs().powi(ni - 3) - nd.norm_a_sq * nd.area_element
            };
            a_diag[i] = (p_mid[j - 1] + p_mid[j]) / h + q * self.trap[j];
            b[i] = self.measure_mode[j];
            if i + 1 < dim {
                // Coupling only between grid-adjacent active nodes; a pinned
                // node in between (plane axis, k >= 1) decouples the halves.
                a_off[i] = if active[i + 1] == j + 1 { -p_mid[j] / h } else { 0.0 };
            }
        }
        let b_sqrt: Vec<f64> = b.iter().map(|x| x.sqrt()).collect();
        let mut diag = vec![0.0; dim];
        let mut off = vec![0.0; dim.saturating_sub(1)];
        for i in 0..dim {
            diag[i] = a_diag[i] / b[i];
            if i + 1 < dim {
                off[i] = a_off[i] / (b_sqrt[i] * b_sqrt[i + 1]);
            }
        }
        ModeOperator { k, nu_k, active, diag, off, b_sqrt }
    }
}

/// Symmetric-tridiagonal representation of -L_k in the measure-weighted
/// inner product: C = B^{-1/2} A B^{-1/2} over the active nodes.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub k: usize,
    pub nu_k: f64,
    /// Grid indices of the active (non-eliminated) nodes.
    pub active: Vec<usize>,
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
    pub b_sqrt: Vec<f64>,
}

impl ModeOperator {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues of -L_k strictly below `shift`, by the Sturm
    /// (LDL^T inertia) count on C - shift I.  O(dim) and independent of the
    /// dense eigensolver; used both as the fast index path and as its oracle.
    pub fn count_below(&self, shift: f64) -> usize {
        let mut count = 0;
        let mut d_prev = 0.0;
        for i in 0..self.dim() {
            let mut d = self.diag[i] - shift;
            if i > 0 {
                d -= self.off[i - 1] * self.off[i - 1] / d_prev;
            }
            if d == 0.0 {
                d = -1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
            d_prev = d;
        }
        count
    }

    /// i-th smallest eigenvalue by Sturm bisection inside the Gershgorin
    /// interval.  Independent of the dense eigensolver, so the two serve as
    /// mutual oracles.
    pub fn eigenvalue_bisect(&self, i: usize, tol: f64) -> f64 {
        let dim = self.dim();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..dim {
            let mut radius = 0.0;
            if j > 0 {
                radius += self.off[j - 1].abs();
            }
            if j + 1 < dim {
                radius += self.off[j].abs();
            }
            lo = lo.min(self.diag[j] - radius);
            hi = hi.max(self.diag[j] + radius);
        }
        let mut guard = 0;
        while hi - lo > tol * lo.abs().max(hi.abs()).max(1.0) && guard < 200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) > i {
                hi = mid;
            } else {
                lo = mid;
            }
            guard += 1;
        }
        0.5 * (lo + hi)
    }

    /// Apply -L_k to a full-length profile field (Dirichlet values ignored);
    /// returns a full-length field with zeros at eliminated nodes.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        let dim = self.dim();
        for i in 0..dim {
            let j = self.active[i];
            // C acts on y = B^{1/2} u; map back through the same scaling.
            let mut acc = self.diag[i] * self.b_sqrt[i] * u[j];
            if i > 0 && self.off[i - 1] != 0.0 {
                acc += self.off[i - 1] * self.b_sqrt[i - 1] * u[self.active[i - 1]];
            }
            if i + 1 < dim && self.off[i] != 0.0 {
                acc += self.off[i] * self.b_sqrt[i + 1] * u[self.active[i + 1]];
            }
            out[j] = acc / self.b_sqrt[i];
        }
        out
    }

    /// Dense symmetric form of C for the eigensolver.
    pub fn dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = self.diag[i];
            if i + 1 < dim {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }

    /// Full eigendecomposition, eigenvalues ascending, eigenfunctions
    /// B-orthonormal with a deterministic sign (largest-magnitude entry
    /// positive, earliest node on ties).
    pub fn eigendecompose(&self, grid_len: usize) -> ModeEigen {
        let dim = self.dim();
        let eig = self.dense().symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut lambdas = DVector::zeros(dim);
        let mut phi = DMatrix::zeros(grid_len, dim);
        for (col, &src) in order.iter().enumerate() {
            lambdas[col] = eig.eigenvalues[src];
            let y = eig.eigenvectors.column(src);
            let mut best = 0;
            for i in 0..dim {
                if y[i].abs() > y[best].abs() + 1e-14 {
                    best = i;
                }
            }
            let sign = if y[best] >= 0.0 { 1.0 } else { -1.0 };
            for i in 0..dim {
                phi[(self.active[i], col)] = sign * y[i] / self.b_sqrt[i];
            }
        }
        ModeEigen { k: self.k, lambdas, phi }
    }
}

/// Eigenpairs of one angular mode: lambdas ascending, phi columns the
/// B-orthonormal profile eigenfunctions on the full grid (zero at eliminated
/// nodes).
#[derive(Debug, Clone)]
pub struct ModeEigen {
    pub k: usize,
    pub lambdas: DVector<f64>,
    pub phi: DMatrix<f64>,
}
