//! Weighted Holder norms on space-time fields over a profile grid.
//!
//! All norms weight decay by powers of rho = sqrt(1 + sigma^2), the smooth
//! stand-in for 1 + distance-to-neck, and scale time like two space orders:
//!
//! * C^k_beta:   sum_{2i+j <= k} sup |rho^{2i+j+beta} D_t^i grad^j u|,
//! * Holder seminorm over sampled pairs:
//!   (rho(x) + rho(y) + |s-t|^{1/2})^{beta_eff} |T(x,s) - T(y,t)| /
//!   (d(x,y)^alpha + |s-t|^{alpha/2}),
//! * the fixed-point norm
//!   ||u||_* = sup_{t <= 0} e^{-delta0 t} (||u(.,t)||_{C^{2,alpha}_beta} +
//!   ||dt u(.,t)||_{C^{0,alpha}_{beta+2}}).
//!
//! Spatial derivatives are covariant: grad u = u'/a along the profile and
//! the two Hessian frame components from the geometry module.  Distances are
//! meridian arc lengths |sigma_x - sigma_y|; fields are axisymmetric, so
//! rotational separations contribute no difference and are not sampled.
//! Pair sampling is dyadic in the node offset up to the near-diagonal
//! cutoff, which bounds the sup from below within a factor 2^alpha.
//! All sups run over the stored time grid [-T, 0] only.

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::geometry::{d1_profile, d2_profile, hessian_frame_components, Profile};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Homogeneity and triangle-inequality slack allowed in the norm axioms.
pub const NORM_AXIOM_TOL: f64 = 1e-12;
/// Relative nonuniformity allowed in the stored time grid.
pub const TIME_GRID_TOL: f64 = 1e-9;

/// Weight and decay parameters of the function spaces.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightParams {
    /// Spatial weight exponent, required > n.
    pub beta: f64,
    /// Holder exponent in (0, 1).
    pub alpha: f64,
    /// Backward decay rate in (0, -lambda_I).
    pub delta0: f64,
}

impl WeightParams {
    /// Defaults: beta = n + 1, alpha = 1/2, delta0 = -lambda_I / 2.
    pub fn defaults(n: usize, lambda_last: f64) -> Self {
        WeightParams { beta: n as f64 + 1.0, alpha: 0.5, delta0: -lambda_last / 2.0 }
    }

    /// Check the standing assumptions against the dimension and the slowest
    /// unstable rate lambda_I < 0.
    pub fn validate(&self, n: usize, lambda_last: f64) -> Result<()> {
        if !(self.beta > n as f64) {
            return Err(Error::Config(format!("beta = {} must exceed n = {n}", self.beta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if !(lambda_last < 0.0) {
            return Err(Error::Config(format!(
                "decay validation needs an unstable rate, got lambda_I = {lambda_last}"
            )));
        }
        if !(self.delta0 > 0.0 && self.delta0 < -lambda_last) {
            return Err(Error::Config(format!(
                "delta0 = {} outside (0, {})",
                self.delta0, -lambda_last
            )));
        }
        Ok(())
    }

    /// Rate delta' of the unexcited-part decay estimate.
    pub fn delta_prime(&self) -> f64 {
        self.delta0
    }

    /// Source growth rate delta = 2 delta0 of the Duhamel estimates.
    pub fn delta(&self) -> f64 {
        2.0 * self.delta0
    }

    /// Default backward horizon T = 12 / (-lambda_I): tail factors e^{-12}.
    pub fn default_horizon(lambda_last: f64) -> f64 {
        12.0 / (-lambda_last)
    }
}

/// An axisymmetric field u(s_j, t_m) on the profile grid and a uniform time
/// grid, together with its time derivative on the same grid.  The stored
/// dt_values are whatever the producer knows exactly (eigen-evolution,
/// Duhamel integrand); `dt_stencil_residual` measures their consistency with
/// finite differencing of `values`, which is O(dt^2) for smooth fields.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    /// Ascending, uniformly spaced times (the construction uses [-T, 0]).
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub dt_values: Vec<DVector<f64>>,
}

impl SpaceTimeField {
    pub fn new(
        times: Vec<f64>,
        values: Vec<DVector<f64>>,
        dt_values: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if times.len() < 3 {
            return Err(Error::Config(format!("time grid needs >= 3 slices, got {}", times.len())));
        }
        if values.len() != times.len() || dt_values.len() != times.len() {
            return Err(Error::Config(format!(
                "slice counts {} / {} do not match {} times",
                values.len(),
                dt_values.len(),
                times.len()
            )));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::Config("time grid must ascend".into()));
        }
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > TIME_GRID_TOL * dt {
                return Err(Error::Config(format!(
                    "nonuniform time grid: step {} vs {dt}",
                    w[1] - w[0]
                )));
            }
        }
        let glen = values[0].len();
        for (m, (v, d)) in values.iter().zip(&dt_values).enumerate() {
            if v.len() != glen || d.len() != glen {
                return Err(Error::Config(format!("slice {m} length mismatch")));
            }
            if v.iter().chain(d.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("non-finite entry in slice {m}")));
            }
        }
        Ok(SpaceTimeField { times, values, dt_values })
    }

    pub fn len_t(&self) -> usize {
        self.times.len()
    }

    pub fn len_s(&self) -> usize {
        self.values[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Time derivative of `values` by second-order stencils: one-sided at the
    /// two ends (backward at t = 0), centered inside.
    pub fn stencil_dt(&self, m: usize) -> DVector<f64> {
        let last = self.len_t() - 1;
        let dt = self.dt();
        if m == 0 {
            (-3.0 * &self.values[0] + 4.0 * &self.values[1] - &self.values[2]) / (2.0 * dt)
        } else if m == last {
            (3.0 * &self.values[last] - 4.0 * &self.values[last - 1] + &self.values[last - 2])
                / (2.0 * dt)
        } else {
            (&self.values[m + 1] - &self.values[m - 1]) / (2.0 * dt)
        }
    }

    /// Sup over the grid of |stencil_dt - dt_values|; O(dt^2 sup|dttt u|)
    /// when the stored derivative is exact.
    pub fn dt_stencil_residual(&self) -> f64 {
        (0..self.len_t())
            .map(|m| (self.stencil_dt(m) - &self.dt_values[m]).amax())
            .fold(0.0, f64::max)
    }

    /// a * f + b * g, slicewise.
    pub fn combine(a: f64, f: &Self, b: f64, g: &Self) -> Result<Self> {
        if f.times.len() != g.times.len() || f.len_s() != g.len_s() {
            return Err(Error::Config("combining fields on different grids".into()));
        }
        Ok(SpaceTimeField {
            times: f.times.clone(),
            values: f
                .values
                .iter()
                .zip(&g.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            dt_values: f
                .dt_values
                .iter()
                .zip(&g.dt_values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }
}

/// sup_j rho_j^beta |u_j|.
pub fn weighted_c0(profile: &Profile, u: &DVector<f64>, beta: f64) -> f64 {
    (0..profile.len())
        .map(|j| profile.nodes[j].rho.powf(beta) * u[j].abs())
        .fold(0.0, f64::max)
}

/// Diagnostic weighted L2 norm: (sum_j mu_j (rho_j^beta u_j)^2)^{1/2} with
/// the physical surface measure.
pub fn weighted_l2(grid: &Grid, u: &DVector<f64>, beta: f64) -> f64 {
    (0..grid.len())
        .map(|j| {
            let w = grid.profile.nodes[j].rho.powf(beta) * u[j];
            grid.measure[j] * w * w
        })
        .sum::<f64>()
        .sqrt()
}

/// Covariant gradient samples u'/a of one slice.
fn grad_trace(profile: &Profile, u: &DVector<f64>) -> DVector<f64> {
    let du = d1_profile(u, profile.h);
    DVector::from_iterator(
        profile.len(),
        (0..profile.len()).map(|j| du[j] / profile.nodes[j].a),
    )
}

/// Both Hessian frame-component traces of one slice.
fn hessian_traces(profile: &Profile, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let du = d1_profile(u, profile.h);
    let ddu = d2_profile(u, profile.h);
    let mut h11 = DVector::zeros(profile.len());
    let mut hrot = DVector::zeros(profile.len());
    for j in 0..profile.len() {
        let (a, b) = hessian_frame_components(profile, j, du[j], ddu[j]);
        h11[j] = a;
        hrot[j] = b;
    }
    (h11, hrot)
}

/// sum_{2i+j <= k} sup_{grid x times} rho^{2i+j+beta} |D_t^i grad^j u| for
/// k in {0, 1, 2}; the time derivative counts two orders.
pub fn weighted_ck(profile: &Profile, field: &SpaceTimeField, k: usize, beta: f64) -> Result<f64> {
    if k > 2 {
        return Err(Error::Config(format!("weighted C^k implemented for k <= 2, got {k}")));
    }
    let mut total = 0.0;
    let mut t0 = 0.0f64;
    let mut t1 = 0.0f64;
    let mut t2 = 0.0f64;
    let mut td = 0.0f64;
    for (m, u) in field.values.iter().enumerate() {
        t0 = t0.max(weighted_c0(profile, u, beta));
        if k >= 1 {
            t1 = t1.max(weighted_c0(profile, &grad_trace(profile, u), beta + 1.0));
        }
        if k >= 2 {
            let (h11, hrot) = hessian_traces(profile, u);
            let n = profile.surface.n as f64;
            let hess = DVector::from_iterator(
                profile.len(),
                (0..profile.len())
                    .map(|j| (h11[j] * h11[j] + (n - 1.0) * hrot[j] * hrot[j]).sqrt()),
            );
            t2 = t2.max(weighted_c0(profile, &hess, beta + 2.0));
            td = td.max(weighted_c0(profile, &field.dt_values[m], beta + 2.0));
        }
    }
    total += t0;
    if k >= 1 {
        total += t1;
    }
    if k >= 2 {
        total += t2 + td;
    }
    Ok(total)
}

/// Dyadic node offsets 1, 2, 4, ... not exceeding the grid length.
fn dyadic_offsets(len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut m = 1;
    while m < len {
        out.push(m);
        m *= 2;
    }
    out
}

/// Weighted Holder quotient sup over sampled pairs of one or more time
/// slices of a scalar trace.  Pairs: spatial node offsets {0, 1, 2, 4, ...}
/// with meridian distance <= the profile's near-diagonal cutoff, crossed
/// with time-slice offsets {0, 1, 4}; the degenerate pair (same node, same
/// time) is skipped.
pub fn holder_seminorm(
    profile: &Profile,
    times: &[f64],
    traces: &[DVector<f64>],
    alpha: f64,
    beta_eff: f64,
) -> f64 {
    assert_eq!(times.len(), traces.len(), "one trace per time");
    let cutoff = profile.holder_cutoff();
    let offsets = dyadic_offsets(profile.len());
    let mut sup = 0.0f64;
    for (mt, trace) in traces.iter().enumerate() {
        for &toff in &[0usize, 1, 4] {
            let other_t = mt + toff;
            if other_t >= traces.len() {
                continue;
            }
            let dt_gap = (times[other_t] - times[mt]).abs();
            let partner = &traces[other_t];
            // Same-node pairs across time.
            if toff > 0 {
                for j in 0..profile.len() {
                    let nd = &profile.nodes[j];
                    let weight = (2.0 * nd.rho + dt_gap.sqrt()).powf(beta_eff);
                    let denom = dt_gap.powf(alpha / 2.0);
                    sup = sup.max(weight * (trace[j] - partner[j]).abs() / denom);
                }
            }
            for &m in &offsets {
                for j in 0..profile.len().saturating_sub(m) {
                    let (x, y) = (&profile.nodes[j], &profile.nodes[j + m]);
                    // Pair distance is not monotone in j (widest at the
                    // domain edges, tightest at the neck), so skip, never
                    // break.
                    let d = (y.sigma - x.sigma).abs();
                    if d > cutoff {
                        continue;
                    }
                    let weight = (x.rho + y.rho + dt_gap.sqrt()).powf(beta_eff);
                    let denom = d.powf(alpha) + dt_gap.powf(alpha / 2.0);
                    sup = sup.max(weight * (trace[j] - partner[j + m]).abs() / denom);
                }
            }
        }
    }
    sup
}

/// One-slice Holder quotient (spatial pairs only).
fn holder_slice(profile: &Profile, trace: &DVector<f64>, alpha: f64, beta_eff: f64) -> f64 {
    holder_seminorm(profile, &[0.0], std::slice::from_ref(trace), alpha, beta_eff)
}

/// Slice norm ||u||_{C^{2,alpha}_beta}: weighted sups of u, grad u, Hess u
/// plus the Holder seminorm of the Hessian components at weight
/// beta + 2 + alpha.
pub fn slice_c2_alpha(profile: &Profile, u: &DVector<f64>, alpha: f64, beta: f64) -> f64 {
    let grad = grad_trace(profile, u);
    let (h11, hrot) = hessian_traces(profile, u);
    let n = profile.surface.n as f64;
    let hess = DVector::from_iterator(
        profile.len(),
        (0..profile.len()).map(|j| (h11[j] * h11[j] + (n - 1.0) * hrot[j] * hrot[j]).sqrt()),
    );
    weighted_c0(profile, u, beta)
        + weighted_c0(profile, &grad, beta + 1.0)
        + weighted_c0(profile, &hess, beta + 2.0)
        + holder_slice(profile, &h11, alpha, beta + 2.0 + alpha)
            .max(holder_slice(profile, &hrot, alpha, beta + 2.0 + alpha))
}

/// Slice norm ||u||_{C^{0,alpha}_base}: weighted sup plus Holder seminorm at
/// weight base + alpha.
pub fn slice_c0_alpha(profile: &Profile, u: &DVector<f64>, alpha: f64, base: f64) -> f64 {
    weighted_c0(profile, u, base) + holder_slice(profile, u, alpha, base + alpha)
}

/// Space-time composite C^{k,alpha}_beta: the C^k_beta sum plus the
/// space-time Holder seminorm of the top-order spatial derivative at weight
/// beta + k + alpha.
pub fn weighted_ck_alpha(
    profile: &Profile,
    field: &SpaceTimeField,
    k: usize,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let base = weighted_ck(profile, field, k, beta)?;
    let sem = match k {
        0 => holder_seminorm(profile, &field.times, &field.values, alpha, beta + alpha),
        1 => {
            let grads: Vec<DVector<f64>> =
                field.values.iter().map(|u| grad_trace(profile, u)).collect();
            holder_seminorm(profile, &field.times, &grads, alpha, beta + 1.0 + alpha)
        }
        2 => {
            let mut h11s = Vec::with_capacity(field.len_t());
            let mut hrots = Vec::with_capacity(field.len_t());
            for u in &field.values {
                let (h11, hrot) = hessian_traces(profile, u);
                h11s.push(h11);
                hrots.push(hrot);
            }
            let e = beta + 2.0 + alpha;
            holder_seminorm(profile, &field.times, &h11s, alpha, e)
                .max(holder_seminorm(profile, &field.times, &hrots, alpha, e))
        }
        _ => return Err(Error::Config(format!("composite norm implemented for k <= 2, got {k}"))),
    };
    Ok(base + sem)
}

/// The fixed-point norm sup_t e^{-delta0 t} (||u(.,t)||_{C^{2,alpha}_beta} +
/// ||dt u(.,t)||_{C^{0,alpha}_{beta+2}}) over the stored time grid.
pub fn star_norm(profile: &Profile, field: &SpaceTimeField, params: &WeightParams) -> f64 {
    (0..field.len_t())
        .map(|m| {
            let amp = (-params.delta0 * field.times[m]).exp();
            amp * (slice_c2_alpha(profile, &field.values[m], params.alpha, params.beta)
                + slice_c0_alpha(profile, &field.dt_values[m], params.alpha, params.beta + 2.0))
        })
        .fold(0.0, f64::max)
}

/// Per-slice decay trace (t_m, e^{-delta0 t_m} * slice C^{2,alpha}_beta).
pub fn star_norm_trace(
    profile: &Profile,
    field: &SpaceTimeField,
    params: &WeightParams,
) -> Vec<(f64, f64)> {
    (0..field.len_t())
        .map(|m| {
            let amp = (-params.delta0 * field.times[m]).exp();
            (
                field.times[m],
                amp * slice_c2_alpha(profile, &field.values[m], params.alpha, params.beta),
            )
        })
        .collect()
}

/// Interior-estimate ratio at slice `at`:
/// ||u(.,t)||_{C^{2,alpha}_beta} / sup_{s <= t} (||u(.,s)||_{C^0_beta} +
/// ||h(.,s)||_{C^{0,alpha}_{beta+2}}).  Finiteness of the max of this ratio
/// over solver outputs is the empirical interior-regularity check.
pub fn schauder_ratio(
    profile: &Profile,
    u: &SpaceTimeField,
    h: &SpaceTimeField,
    params: &WeightParams,
    at: usize,
) -> f64 {
    let lhs = slice_c2_alpha(profile, &u.values[at], params.alpha, params.beta);
    let rhs = (0..=at)
        .map(|m| {
            weighted_c0(profile, &u.values[m], params.beta)
                + slice_c0_alpha(profile, &h.values[m], params.alpha, params.beta + 2.0)
        })
        .fold(0.0, f64::max);
    if rhs == 0.0 {
        if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        lhs / rhs
    }
}
