//! Ancient flows from the unstable directions of a minimal hypersurface.
//!
//! The linearized graph flow (d/dt - L)u = h on Sigma x [-T, 0] splits in the
//! eigenbasis of -L into scalar equations u_i' + lambda_i u_i = h_i.  Unstable
//! modes (lambda_i < -zero_band) integrate backward from terminal data
//! u_i(0) = a_i, so their growing exponentials are only ever evaluated with
//! nonpositive arguments; every other mode integrates forward from
//! u_i(-T) = 0, truncating the Duhamel integral over (-infty, t] at the
//! horizon.  Within one step the source is linearly interpolated and the
//! update uses the closed-form weights phi_1(z) = (e^z - 1)/z and
//! phi_2(z) = (e^z - 1 - z)/z^2, which keeps arbitrarily stiff modes stable
//! at any step size.
//!
//! The ancient flows themselves are fixed points of the map
//! S(u; a) = solve(E(u); a), where E(u) = v H(graph u) - L u is the quadratic
//! remainder of the graphical mean curvature flow.  Picard iteration from
//! iota_-(a) contracts in the exponentially weighted parabolic norm for small
//! |a|; the family scale epsilon is found adaptively by halving until the
//! measured contraction ratio drops below 1/2.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::geometry::{graph_mean_curvature, nonlinear_error, GraphField, Profile};
use crate::norms::{slice_c0_alpha, slice_c2_alpha, star_norm, SpaceTimeField, WeightParams};
use crate::spectral::{least_squares_slope, SpectralData};

/// Picard contraction ratios must stay below this for an accepted family scale.
pub const CONTRACTION_TARGET: f64 = 0.5;
/// Starting point of the adaptive family-scale search.
pub const DEFAULT_EPSILON0: f64 = 0.1;
/// Cap on epsilon halvings before the search gives up.
pub const MAX_HALVINGS: usize = 20;
/// L2 slice norms below this floor carry no decay-rate signal.
pub const DECAY_SIGNAL_FLOOR: f64 = 1e-14;
/// Homogeneous solves reproduce iota_-(a) to this relative accuracy.
pub const HOMOGENEOUS_TOL: f64 = 1e-10;
/// Terminal spectral coefficients of a converged flow match a to this.
pub const TERMINAL_PROJECTION_TOL: f64 = 1e-8;
/// Reordered-quadrature reruns of the solver agree to this.
pub const UNIQUENESS_TOL: f64 = 1e-10;

/// Below this |z| the phi_2 closed form loses digits to cancellation; the
/// truncated series is exact to roundoff there.
const PHI2_SERIES_CUTOFF: f64 = 1e-3;
/// Absolute slack for "the time grid ends at the terminal time 0".
const TERMINAL_TIME_TOL: f64 = 1e-9;

/// phi_1(z) = (e^z - 1)/z; expm1 keeps it accurate for all z.
fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

/// phi_2(z) = (e^z - 1 - z)/z^2, with a series below the cancellation cutoff.
fn phi2(z: f64) -> f64 {
    if z.abs() < PHI2_SERIES_CUTOFF {
        0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z / 720.0)))
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Uniform time grid -T = t_0 < ... < t_M = 0 with M steps; both endpoints
/// are exact so terminal conditions and backward-horizon checks bind tightly.
pub fn uniform_times(t_horizon: f64, steps: usize) -> Result<Vec<f64>> {
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(Error::Config(format!("backward horizon must be positive, got {t_horizon}")));
    }
    if steps < 2 {
        return Err(Error::Config(format!("time grid needs at least 2 steps, got {steps}")));
    }
    let dt = t_horizon / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|m| -t_horizon + m as f64 * dt).collect();
    times[0] = -t_horizon;
    *times.last_mut().expect("nonempty") = 0.0;
    Ok(times)
}

/// Build a space-time field from value slices alone, filling the stored time
/// derivative with the second-order stencils (sources only ever need their
/// values; the stencil derivative keeps the container invariants honest).
pub fn source_field(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<SpaceTimeField> {
    let glen = values.first().map(|v| v.len()).unwrap_or(0);
    let zeros = vec![DVector::zeros(glen); values.len()];
    let mut f = SpaceTimeField::new(times, values, zeros)?;
    f.dt_values = (0..f.len_t()).map(|m| f.stencil_dt(m)).collect();
    Ok(f)
}

/// The linear terminal-value problem (d/dt - L)u = h with prescribed
/// coefficients a on the unstable modes at t = 0.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub h: SpaceTimeField,
    pub a: Vec<f64>,
    pub params: WeightParams,
}

/// Solver output: the solution field plus the truncation accounting.
#[derive(Debug, Clone)]
pub struct DuhamelSolution {
    pub u: SpaceTimeField,
    /// sup_t e^{-2 delta0 t} ||h(., t)||_{C^{0,alpha}_{beta+2}}, the source
    /// growth constant hypothesized by the linear decay estimates.
    pub growth_bound: f64,
    /// Smallest nonnegative eigenvalue of the truncated axisymmetric operator.
    pub lambda_min_plus: f64,
    /// Bound on the Duhamel mass discarded below the horizon: source times
    /// s <= -T enter with a factor e^{(delta0 + lambda_min_plus)(s + T)}, so
    /// the neglected tail is at most
    /// growth_bound e^{-2 delta0 T} / (delta0 + lambda_min_plus).
    pub tail_bound: f64,
}

/// Slowest unstable rate for parameter validation; stable surfaces leave
/// delta0 unconstrained from above.
fn unstable_rate(data: &SpectralData) -> f64 {
    data.lambda_last().unwrap_or(f64::NEG_INFINITY)
}

/// Solve (d/dt - L)u = h with terminal data a by per-mode phi-function
/// recurrences: backward from t = 0 on the unstable modes, forward from the
/// horizon on the rest.  The stored time derivative is exact, synthesized
/// from du_i/dt = -lambda_i u_i + h_i.
pub fn solve_linear(data: &SpectralData, problem: &LinearProblem) -> Result<DuhamelSolution> {
    let grid = &data.grid;
    let profile = &grid.profile;
    let h = &problem.h;
    let wp = &problem.params;
    wp.validate(profile.surface.n, unstable_rate(data))?;
    if h.len_s() != grid.len() {
        return Err(Error::Config(format!(
            "source has {} nodes but the grid has {}",
            h.len_s(),
            grid.len()
        )));
    }
    let mt = h.len_t();
    if h.times[mt - 1].abs() > TERMINAL_TIME_TOL {
        return Err(Error::Config(format!(
            "time grid must end at the terminal time 0, got {}",
            h.times[mt - 1]
        )));
    }
    if let Some(p) = data.negative.iter().find(|p| p.k != 0) {
        return Err(Error::Config(format!(
            "unstable direction in angular mode k = {} is outside the axisymmetric construction",
            p.k
        )));
    }
    let n_neg = data.axisym_count();
    if problem.a.len() != n_neg {
        return Err(Error::Config(format!(
            "terminal data length {} does not match the {} unstable modes",
            problem.a.len(),
            n_neg
        )));
    }

    // Growth hypothesis: sup_t e^{-2 delta0 t} ||h||_{C^{0,alpha}_{beta+2}}
    // must be finite; it also feeds the truncation tail bound.
    let mut growth: f64 = 0.0;
    for (m, hv) in h.values.iter().enumerate() {
        let norm = slice_c0_alpha(profile, hv, wp.alpha, wp.beta + 2.0);
        growth = growth.max((-wp.delta() * h.times[m]).exp() * norm);
    }
    if !growth.is_finite() {
        return Err(Error::Config(format!(
            "source violates the growth hypothesis: sup e^(-2 delta0 t) |h|_(0,alpha,beta+2) = {growth}"
        )));
    }

    // The axisymmetric negative pairs head the mode-0 spectrum in the same
    // ascending order; the recurrences below rely on that alignment.
    let lambdas = &data.modes[0].lambdas;
    for (j, p) in data.axisym_negative().enumerate() {
        assert!(
            (lambdas[j] - p.lambda).abs() <= 1e-12 * p.lambda.abs().max(1.0),
            "negative pairs must head the mode-0 spectrum"
        );
    }

    let dim = lambdas.len();
    let dt = h.dt();
    let hc: Vec<DVector<f64>> = h.values.iter().map(|v| data.mode0_coeffs(v)).collect();
    // Terminal coefficients arrive against the physically normalized phi_j;
    // the mode basis differs by the sphere-area factor.
    let omega_sqrt = profile.surface.sphere_area().sqrt();

    let mut uc: Vec<DVector<f64>> = vec![DVector::zeros(dim); mt];
    for i in 0..dim {
        let lam = lambdas[i];
        if i < n_neg {
            // Backward recurrence, z = lambda dt < 0:
            // u(t_m) = e^z u(t_{m+1}) - dt [h_m phi2 + h_{m+1} (phi1 - phi2)].
            let z = lam * dt;
            let (p1, p2) = (phi1(z), phi2(z));
            let ez = z.exp();
            uc[mt - 1][i] = problem.a[i] / omega_sqrt;
            for m in (0..mt - 1).rev() {
                uc[m][i] = ez * uc[m + 1][i] - dt * (hc[m][i] * p2 + hc[m + 1][i] * (p1 - p2));
            }
        } else {
            // Forward recurrence from u(-T) = 0, z = -lambda dt <= 0 up to the
            // zero band: u(t_{m+1}) = e^z u(t_m)
            //   + dt [h_m (phi1 - phi2) + h_{m+1} phi2].
            let z = -lam * dt;
            let (p1, p2) = (phi1(z), phi2(z));
            let ez = z.exp();
            for m in 0..mt - 1 {
                uc[m + 1][i] = ez * uc[m][i] + dt * (hc[m][i] * (p1 - p2) + hc[m + 1][i] * p2);
            }
        }
    }

    let mut values = Vec::with_capacity(mt);
    let mut dt_values = Vec::with_capacity(mt);
    for m in 0..mt {
        let mut dot = DVector::zeros(dim);
        for i in 0..dim {
            dot[i] = -lambdas[i] * uc[m][i] + hc[m][i];
        }
        values.push(data.mode0_synth(&uc[m]));
        dt_values.push(data.mode0_synth(&dot));
    }
    let u = SpaceTimeField::new(h.times.clone(), values, dt_values)?;

    let lambda_min_plus = lambdas.iter().copied().find(|l| *l >= 0.0).unwrap_or(0.0);
    let t_horizon = -h.times[0];
    let tail_bound =
        growth * (-wp.delta() * t_horizon).exp() / (wp.delta0 + lambda_min_plus);
    Ok(DuhamelSolution { u, growth_bound: growth, lambda_min_plus, tail_bound })
}

/// Ratio report for an exponential decay estimate: sup over slices of
/// LHS(t) / RHS.  A vacuous 0 <= 0 instance is flagged as skipped.
#[derive(Debug, Clone, Serialize)]
pub struct DecayCheck {
    pub sup_ratio: f64,
    pub lhs_sup: f64,
    pub rhs: f64,
    pub skipped: bool,
}

impl DecayCheck {
    fn from_parts(lhs_sup: f64, rhs: f64) -> DecayCheck {
        if rhs == 0.0 && lhs_sup == 0.0 {
            return DecayCheck { sup_ratio: 0.0, lhs_sup, rhs, skipped: true };
        }
        let sup_ratio = if rhs > 0.0 { lhs_sup / rhs } else { f64::INFINITY };
        DecayCheck { sup_ratio, lhs_sup, rhs, skipped: false }
    }

    /// The estimate holds with some finite constant, or held vacuously.
    pub fn pass(&self) -> bool {
        self.skipped || self.sup_ratio.is_finite()
    }
}

/// Check e^{-delta0 t} ||u(., t)||_{L2} against the windowed source integral
/// (int e^{-4 delta0 s} ||h(., s)||_{L2}^2 ds)^{1/2} by trapezoid quadrature.
/// u must be the zero-terminal-data part of the solution; subtract the
/// iota_-(a) field first when a is nonzero.
pub fn l2_decay_check(
    grid: &Grid,
    u: &SpaceTimeField,
    h: &SpaceTimeField,
    params: &WeightParams,
) -> DecayCheck {
    let dt = h.dt();
    let mut rhs2 = 0.0;
    for (m, hv) in h.values.iter().enumerate() {
        let tau = if m == 0 || m + 1 == h.len_t() { 0.5 * dt } else { dt };
        let weighted = (-params.delta() * h.times[m]).exp() * grid.l2_norm(hv);
        rhs2 += tau * weighted * weighted;
    }
    let mut lhs_sup: f64 = 0.0;
    for (m, uv) in u.values.iter().enumerate() {
        lhs_sup = lhs_sup.max((-params.delta_prime() * u.times[m]).exp() * grid.l2_norm(uv));
    }
    DecayCheck::from_parts(lhs_sup, rhs2.sqrt())
}

/// Check the weighted parabolic estimate: sup_t of
/// e^{-delta0 t} ||u(., t) - iota_-(a)(t)||_{C^{2,alpha}_beta} against
/// sup_s e^{-2 delta0 s} ||h(., s)||_{C^{0,alpha}_{beta+2}}; the ratio is the
/// empirical constant of the linear theory.
pub fn weighted_decay_check(
    data: &SpectralData,
    u: &SpaceTimeField,
    h: &SpaceTimeField,
    a: &[f64],
    params: &WeightParams,
) -> Result<DecayCheck> {
    let profile = &data.grid.profile;
    let mut rhs: f64 = 0.0;
    for (m, hv) in h.values.iter().enumerate() {
        let norm = slice_c0_alpha(profile, hv, params.alpha, params.beta + 2.0);
        rhs = rhs.max((-params.delta() * h.times[m]).exp() * norm);
    }
    let mut lhs_sup: f64 = 0.0;
    for (m, uv) in u.values.iter().enumerate() {
        let diff = uv - data.iota_minus(a, u.times[m])?;
        let norm = slice_c2_alpha(profile, &diff, params.alpha, params.beta);
        lhs_sup = lhs_sup.max((-params.delta_prime() * u.times[m]).exp() * norm);
    }
    Ok(DecayCheck::from_parts(lhs_sup, rhs))
}

/// Slicewise nonlinear error h(., t) = E(u(., t)); the slices evaluate
/// concurrently since each one only reads the shared profile.
pub fn nonlinear_source(profile: &Profile, u: &SpaceTimeField) -> Result<SpaceTimeField> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8);
    let chunk = u.values.len().div_ceil(workers).max(1);
    let slices: Vec<Result<DVector<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = u
            .values
            .chunks(chunk)
            .map(|vals| {
                scope.spawn(move || {
                    vals.iter()
                        .map(|v| {
                            let g = GraphField::new(profile, v.clone())?;
                            nonlinear_error(profile, &g)
                        })
                        .collect::<Vec<Result<DVector<f64>>>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("nonlinear error worker")).collect()
    });
    let values = slices.into_iter().collect::<Result<Vec<_>>>()?;
    source_field(u.times.clone(), values)
}

/// One application of the Picard map S(u; a): solve the linear problem with
/// source E(u) and terminal data a.  Requires u inside the invertibility
/// ball ||u||_* <= eta; the returned solution keeps the truncation report.
pub fn fixed_point_full(
    data: &SpectralData,
    u: &SpaceTimeField,
    a: &[f64],
    params: &WeightParams,
) -> Result<DuhamelSolution> {
    let profile = &data.grid.profile;
    let norm = star_norm(profile, u, params);
    let eta = profile.eta();
    if !(norm <= eta) {
        return Err(Error::BallExit { iteration: 0, norm, eta });
    }
    let h = nonlinear_source(profile, u)?;
    solve_linear(data, &LinearProblem { h, a: a.to_vec(), params: *params })
}

/// S(u; a) itself.
pub fn fixed_point_map(
    data: &SpectralData,
    u: &SpaceTimeField,
    a: &[f64],
    params: &WeightParams,
) -> Result<SpaceTimeField> {
    fixed_point_full(data, u, a, params).map(|sol| sol.u)
}

/// Serializable Picard state: enough to resume the iteration exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardCheckpoint {
    pub iteration: usize,
    pub history: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub dt_values: Vec<Vec<f64>>,
}

impl PicardCheckpoint {
    pub fn capture(iteration: usize, history: &[f64], u: &SpaceTimeField) -> Self {
        PicardCheckpoint {
            iteration,
            history: history.to_vec(),
            times: u.times.clone(),
            values: u.values.iter().map(|v| v.as_slice().to_vec()).collect(),
            dt_values: u.dt_values.iter().map(|v| v.as_slice().to_vec()).collect(),
        }
    }

    /// Rebuild the iterate, revalidating the container invariants.
    pub fn restore(&self) -> Result<SpaceTimeField> {
        SpaceTimeField::new(
            self.times.clone(),
            self.values.iter().map(|v| DVector::from_column_slice(v)).collect(),
            self.dt_values.iter().map(|v| DVector::from_column_slice(v)).collect(),
        )
    }
}

/// Least-squares decay fit of a backward flow: slope of log ||u(., t)||_{L2}
/// over the early window t in [-T, -T/2].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRate {
    pub slope: Option<f64>,
    pub samples: usize,
    pub underflow: bool,
    pub window: (f64, f64),
}

/// Fit the backward decay rate; an excited unstable mode lambda_j shows up
/// as slope -lambda_j.  Slices below the signal floor trip the underflow
/// report instead of polluting the fit.
pub fn decay_rate(grid: &Grid, u: &SpaceTimeField) -> DecayRate {
    let t0 = u.times[0];
    let t_end = 0.5 * t0;
    let window = (t0, t_end);
    let mut pts = Vec::new();
    for (m, uv) in u.values.iter().enumerate() {
        if u.times[m] <= t_end + TERMINAL_TIME_TOL {
            let norm = grid.l2_norm(uv);
            if norm < DECAY_SIGNAL_FLOOR {
                return DecayRate { slope: None, samples: 0, underflow: true, window };
            }
            pts.push((u.times[m], norm.ln()));
        }
    }
    if pts.len() < 2 {
        return DecayRate { slope: None, samples: pts.len(), underflow: false, window };
    }
    DecayRate {
        slope: Some(least_squares_slope(&pts)),
        samples: pts.len(),
        underflow: false,
        window,
    }
}

/// Pointwise flow residual |D_t u - v H(graph u)| with independent
/// second-order time stencils, excluding the first slice (horizon-truncation
/// transient) and two boundary layers on each side in s.
#[derive(Debug, Clone)]
pub struct McfResidual {
    pub sup: f64,
    /// Included times, u.times[1..].
    pub times: Vec<f64>,
    /// Sup over interior nodes per included slice.
    pub per_slice: Vec<f64>,
    /// Residual slices, zero at the excluded boundary nodes.
    pub field: Vec<DVector<f64>>,
}

pub fn mcf_residual(profile: &Profile, u: &SpaceTimeField) -> Result<McfResidual> {
    let glen = u.len_s();
    let mut times = Vec::new();
    let mut per_slice = Vec::new();
    let mut field = Vec::new();
    let mut sup: f64 = 0.0;
    for m in 1..u.len_t() {
        let g = GraphField::new(profile, u.values[m].clone())?;
        let curv = graph_mean_curvature(profile, &g)?;
        let dtu = u.stencil_dt(m);
        let mut row = DVector::zeros(glen);
        let mut worst: f64 = 0.0;
        for j in 2..glen - 2 {
            let r = (dtu[j] - curv.v[j] * curv.h_flow[j]).abs();
            row[j] = r;
            worst = worst.max(r);
        }
        sup = sup.max(worst);
        times.push(u.times[m]);
        per_slice.push(worst);
        field.push(row);
    }
    Ok(McfResidual { sup, times, per_slice, field })
}

/// max_j |<u(., 0), phi_j> - a_j| over the unstable pairs, in the physical
/// surface inner product the pairs are normalized against.
pub fn terminal_projection_error(data: &SpectralData, u: &SpaceTimeField, a: &[f64]) -> f64 {
    let last = &u.values[u.len_t() - 1];
    data.axisym_negative()
        .zip(a)
        .map(|(p, aj)| (data.grid.l2_inner(last, &p.phi) - aj).abs())
        .fold(0.0, f64::max)
}

/// A converged ancient flow with its construction record.
#[derive(Debug, Clone)]
pub struct AncientFlow {
    pub a: Vec<f64>,
    pub u: SpaceTimeField,
    /// ||u_{m+1} - u_m||_* per Picard iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Successive history ratios; below 1/2 throughout for accepted scales.
    pub contraction_ratios: Vec<f64>,
    /// ||u - iota_-(a)||_* / |a|^2, the measured quadratic-correction size
    /// (zero for the trivial flow).
    pub mu_estimate: f64,
    /// max_j |<u(., 0), phi_j> - a_j| after convergence.
    pub terminal_error: f64,
    /// Truncation tail bound of the final linear solve.
    pub tail_bound: f64,
    pub mcf_residual: f64,
    pub decay: DecayRate,
}

/// JSON-facing diagnostics of a constructed flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub a: Vec<f64>,
    pub iterations: usize,
    pub star_norm_history: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub mcf_residual: f64,
    pub decay_slope: Option<f64>,
    pub mu_estimate: f64,
    pub terminal_error: f64,
    pub tail_bound: f64,
}

impl AncientFlow {
    pub fn diagnostics(&self) -> FlowDiagnostics {
        FlowDiagnostics {
            a: self.a.clone(),
            iterations: self.iterations,
            star_norm_history: self.history.clone(),
            contraction_ratios: self.contraction_ratios.clone(),
            mcf_residual: self.mcf_residual,
            decay_slope: self.decay.slope,
            mu_estimate: self.mu_estimate,
            terminal_error: self.terminal_error,
            tail_bound: self.tail_bound,
        }
    }
}

/// The iota_-(a) space-time field on the given grid, with its exact time
/// derivative; the Picard seed and the linear part of every constructed flow.
pub fn iota_field(data: &SpectralData, a: &[f64], times: &[f64]) -> Result<SpaceTimeField> {
    let mut values = Vec::with_capacity(times.len());
    let mut dt_values = Vec::with_capacity(times.len());
    for &t in times {
        values.push(data.iota_minus(a, t)?);
        dt_values.push(data.iota_minus_dt(a, t)?);
    }
    SpaceTimeField::new(times.to_vec(), values, dt_values)
}

/// Construct the ancient flow for terminal data a by Picard iteration
/// u_0 = iota_-(a), u_{m+1} = S(u_m; a), until ||u_{m+1} - u_m||_* < tol.
/// `on_iterate` sees a resumable checkpoint after every iteration; pass a
/// checkpoint to continue an interrupted run bit-for-bit.
pub fn construct_ancient_flow(
    data: &SpectralData,
    a: &[f64],
    params: &WeightParams,
    times: &[f64],
    tol: f64,
    max_iter: usize,
    resume: Option<&PicardCheckpoint>,
    mut on_iterate: impl FnMut(&PicardCheckpoint) -> Result<()>,
) -> Result<AncientFlow> {
    let grid = &data.grid;
    let profile = &grid.profile;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config(format!("fixed-point tolerance must be positive, got {tol}")));
    }
    let (mut u, mut history, mut iterations) = match resume {
        Some(cp) => {
            if cp.times.len() != times.len()
                || cp.times.iter().zip(times).any(|(x, y)| (x - y).abs() > 1e-12 * y.abs().max(1.0))
            {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint time grid ({} slices) does not match the requested grid ({})",
                    cp.times.len(),
                    times.len()
                )));
            }
            if cp.history.len() != cp.iteration {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint records {} diffs for {} iterations",
                    cp.history.len(),
                    cp.iteration
                )));
            }
            let u = cp.restore()?;
            if u.len_s() != grid.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint has {} nodes but the grid has {}",
                    u.len_s(),
                    grid.len()
                )));
            }
            (u, cp.history.clone(), cp.iteration)
        }
        None => (iota_field(data, a, times)?, Vec::new(), 0),
    };

    let mut tail_bound = 0.0;
    loop {
        if let Some(&last) = history.last() {
            if last < tol {
                break;
            }
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                last_diff: history.last().copied().unwrap_or(f64::NAN),
            });
        }
        let sol = fixed_point_full(data, &u, a, params).map_err(|e| match e {
            Error::BallExit { norm, eta, .. } => {
                Error::BallExit { iteration: iterations, norm, eta }
            }
            other => other,
        })?;
        tail_bound = sol.tail_bound;
        let next = sol.u;
        let diff_field = SpaceTimeField::combine(1.0, &next, -1.0, &u)?;
        let diff = star_norm(profile, &diff_field, params);
        if !diff.is_finite() {
            return Err(Error::NonFinite(format!("Picard diff at iteration {iterations}")));
        }
        history.push(diff);
        iterations += 1;
        u = next;
        on_iterate(&PicardCheckpoint::capture(iterations, &history, &u))?;
    }

    let contraction_ratios = history
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect::<Vec<f64>>();
    let a_sq: f64 = a.iter().map(|x| x * x).sum();
    let mu_estimate = if a_sq > 0.0 {
        let dev = SpaceTimeField::combine(1.0, &u, -1.0, &iota_field(data, a, times)?)?;
        star_norm(profile, &dev, params) / a_sq
    } else {
        0.0
    };
    let terminal_error = terminal_projection_error(data, &u, a);
    let residual = mcf_residual(profile, &u)?;
    let decay = decay_rate(grid, &u);
    Ok(AncientFlow {
        a: a.to_vec(),
        u,
        history,
        iterations,
        contraction_ratios,
        mu_estimate,
        terminal_error,
        tail_bound,
        mcf_residual: residual.sup,
        decay,
    })
}

/// Result of the adaptive family-scale search.
#[derive(Debug, Clone)]
pub struct AdaptiveFlow {
    pub epsilon: f64,
    pub halvings: usize,
    pub flow: AncientFlow,
}

/// Halve epsilon from epsilon0 until Picard converges inside the ball with
/// every measured contraction ratio below 1/2; ball exits, degenerate
/// graphs, and sluggish contraction all shrink the scale.
pub fn construct_adaptive(
    data: &SpectralData,
    direction: &[f64],
    params: &WeightParams,
    times: &[f64],
    tol: f64,
    max_iter: usize,
    epsilon0: f64,
) -> Result<AdaptiveFlow> {
    if !(epsilon0 > 0.0 && epsilon0.is_finite()) {
        return Err(Error::Config(format!("epsilon0 must be positive, got {epsilon0}")));
    }
    if direction.iter().map(|d| d * d).sum::<f64>() == 0.0 {
        return Err(Error::Config("family direction must be nonzero".into()));
    }
    let mut eps = epsilon0;
    for halvings in 0..=MAX_HALVINGS {
        let a: Vec<f64> = direction.iter().map(|d| d * eps).collect();
        match construct_ancient_flow(data, &a, params, times, tol, max_iter, None, |_| Ok(())) {
            Ok(flow) if flow.contraction_ratios.iter().all(|r| *r < CONTRACTION_TARGET) => {
                return Ok(AdaptiveFlow { epsilon: eps, halvings, flow });
            }
            Ok(_) => {}
            Err(Error::BallExit { .. })
            | Err(Error::NonConvergence { .. })
            | Err(Error::GraphDegenerate(_)) => {}
            Err(e) => return Err(e),
        }
        eps *= 0.5;
    }
    // last_diff doubles as the final rejected scale in this report.
    Err(Error::NonConvergence { iterations: MAX_HALVINGS, last_diff: eps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::build_grid;
    use crate::geometry::{Surface, SurfaceKind};
    use crate::spectral::negative_spectrum;

    fn catenoid_data(s_max: f64, n_s: usize, k_max: usize) -> SpectralData {
        let surf = Surface::new(SurfaceKind::Catenoid, 2).unwrap();
        let grid = build_grid(surf, s_max, n_s, k_max).unwrap();
        negative_spectrum(&grid).unwrap()
    }

    #[test]
    fn probe_scales() {
        let data = catenoid_data(4.0, 201, 2);
        let lam1 = data.lambda_min().unwrap();
        let params = WeightParams::defaults(2, data.lambda_last().unwrap());
        let t_h = WeightParams::default_horizon(data.lambda_last().unwrap());
        let times = uniform_times(t_h, 96).unwrap();
        let profile = &data.grid.profile;
        println!("lambda1 = {lam1}, T = {t_h}, eta = {}", profile.eta());

        let iota = iota_field(&data, &[1e-4], &times).unwrap();
        println!("star(iota(1e-4))/1e-4 = {}", star_norm(profile, &iota, &params) / 1e-4);

        let glen = data.grid.len();
        let zeroes = SpaceTimeField::new(
            times.clone(),
            vec![DVector::zeros(glen); times.len()],
            vec![DVector::zeros(glen); times.len()],
        )
        .unwrap();
        let u1 = fixed_point_map(&data, &zeroes, &[0.0], &params).unwrap();
        let u1_amax = u1.values.iter().map(|v| v.amax()).fold(0.0, f64::max);
        println!("amax S(0;0) = {u1_amax:.3e}, star = {:.3e}", star_norm(profile, &u1, &params));

        for eps in [1e-4, 5e-5, 2.5e-5] {
            let seed = iota_field(&data, &[eps], &times).unwrap();
            let h = nonlinear_source(profile, &seed).unwrap();
            let sol = solve_linear(
                &data,
                &LinearProblem { h, a: vec![eps], params },
            )
            .unwrap();
            let d = SpaceTimeField::combine(1.0, &sol.u, -1.0, &seed).unwrap();
            let dn = star_norm(profile, &d, &params);
            println!("eps {eps:.1e}: first-iterate diff {dn:.6e}, q = {:.6e}", dn / eps / eps);
        }

        match construct_adaptive(&data, &[1.0], &params, &times, 1e-7, 20, 0.1) {
            Ok(af) => {
                println!(
                    "adaptive: eps = {:.4e} after {} halvings, iters {}, history = {:?}",
                    af.epsilon, af.halvings, af.flow.iterations, af.flow.history
                );
                println!("adaptive ratios = {:?}", af.flow.contraction_ratios);
            }
            Err(e) => println!("adaptive: {e}"),
        }

        match construct_ancient_flow(&data, &[3e-5], &params, &times, 1e-9, 20, None, |_| Ok(())) {
            Ok(flow) => {
                println!("history = {:?}", flow.history);
                println!("ratios = {:?}", flow.contraction_ratios);
                println!(
                    "mu = {:.6e}, terminal = {:.3e}, mcf = {:.3e}, slope = {:?} (want {:.6})",
                    flow.mu_estimate,
                    flow.terminal_error,
                    flow.mcf_residual,
                    flow.decay.slope,
                    -lam1
                );
                println!(
                    "u(-T) amax = {:.3e} vs bound {:.3e}",
                    flow.u.values[0].amax(),
                    2.0 * 3e-5 * (data.lambda_last().unwrap() * t_h).exp()
                );
            }
            Err(e) => println!("construct: {e}"),
        }
    }
}
