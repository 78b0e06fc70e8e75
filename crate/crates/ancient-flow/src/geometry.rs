//! Hypersurfaces of revolution and graphs over them.
//!
//! A hypersurface of revolution in R^{n+1} is generated by a profile curve
//! (r(s), z(s)) revolved over S^{n-1}.  Supported profiles:
//!
//! * `plane`:     r(s) = s (signed radius), z = 0, chart s in [-S, S].
//! * `catenoid`:  n = 2, conformal chart r = cosh s, z = s.
//! * `ncatenoid`: n >= 3, conformal chart obeying r'' = r + (n-2) r^{3-2n},
//!   r(0) = 1, r'(0) = 0, with z' = r^{2-n} and arc length sigma' = r.
//!
//! In the catenoid charts the induced metric is r^2 (ds^2 + g_{S^{n-1}}), in
//! the plane chart ds^2 + s^2 g_{S^{n-1}}.  Writing a = |d(embedding)/ds|
//! (a = r conformal, a = 1 plane), the area element per unit sphere measure
//! is a |r|^{n-1}, the unit normal chosen to point away from the axis is
//! nu = (z', -r')/a, and the principal curvatures of the revolved surface are
//!
//!   kappa_prof = (r' z'' - z' r'') / a^3,      kappa_sph = z' / (a r),
//!
//! so that H = div(nu) = kappa_prof + (n-1) kappa_sph and
//! |A|^2 = kappa_prof^2 + (n-1) kappa_sph^2.  All profile quantities here are
//! analytic (closed forms for plane/catenoid, the invariant-projected ODE for
//! the n-catenoid); only graph fields u are differentiated numerically, by
//! 4th-order finite differences on the uniform s-grid.
//!
//! A normal graph u over the surface is again a surface of revolution with
//! profile (R, Z) = (r, z) + u (nu_r, nu_z); its mean curvature and the tilt
//! factor v = (nu_Gamma . nu_Sigma)^{-1} are evaluated from that profile.
//! The graphical flow reads du/dt = v H_flow with H_flow = -div(nu_Gamma),
//! whose linearization at u = 0 is the stability operator
//! L u = Lap u + |A|^2 u; the quadratic remainder E(u) = v H_flow - L u is
//! the nonlinear error driving the fixed-point construction.

use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Tolerance on |H| / sup|A| for accepting a profile as minimal.
pub const MINIMALITY_TOL: f64 = 1e-8;
/// Signed radii below this are treated as on the rotation axis.
const AXIS_TOL: f64 = 1e-12;
/// Internal ODE step cap for the n-catenoid profile integration.
const ODE_MAX_STEP: f64 = 2.5e-3;

/// Which family the generating profile belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Plane,
    Catenoid,
    NCatenoid,
}

impl std::fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SurfaceKind::Plane => write!(f, "plane"),
            SurfaceKind::Catenoid => write!(f, "catenoid"),
            SurfaceKind::NCatenoid => write!(f, "ncatenoid"),
        }
    }
}

/// A rotationally symmetric hypersurface of dimension n in R^{n+1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub n: usize,
}

impl Surface {
    pub fn new(kind: SurfaceKind, n: usize) -> Result<Self> {
        match kind {
            SurfaceKind::Plane if n >= 2 => Ok(Surface { kind, n }),
            SurfaceKind::Catenoid if n == 2 => Ok(Surface { kind, n }),
            SurfaceKind::NCatenoid if n >= 3 => Ok(Surface { kind, n }),
            _ => Err(Error::Config(format!(
                "surface {kind} does not support dimension n = {n}"
            ))),
        }
    }

    pub fn parse(name: &str, n: usize) -> Result<Self> {
        let kind = match name {
            "plane" => SurfaceKind::Plane,
            "catenoid" => SurfaceKind::Catenoid,
            "ncatenoid" => SurfaceKind::NCatenoid,
            other => {
                return Err(Error::Config(format!(
                    "unknown surface '{other}' (expected plane|catenoid|ncatenoid)"
                )))
            }
        };
        Surface::new(kind, n)
    }

    /// Eigenvalue nu_k = k (k + n - 2) of -Lap on S^{n-1} for degree-k harmonics.
    pub fn harmonic_eigenvalue(&self, k: usize) -> f64 {
        (k * (k + self.n - 2)) as f64
    }

    /// Dimension of the degree-k spherical harmonic space on S^{n-1}:
    /// C(n+k-1, k) - C(n+k-3, k-2).  Equals 1 for k = 0 and 2 for all k >= 1
    /// when n = 2 (cos and sin branches).
    pub fn harmonic_multiplicity(&self, k: usize) -> usize {
        fn binom(n: usize, k: usize) -> usize {
            if k > n {
                return 0;
            }
            let k = k.min(n - k);
            let mut acc: usize = 1;
            for i in 0..k {
                acc = acc * (n - i) / (i + 1);
            }
            acc
        }
        match k {
            0 => 1,
            1 => self.n,
            k => binom(self.n + k - 1, k) - binom(self.n + k - 3, k - 2),
        }
    }

    /// Area of the unit sphere S^{n-1} (2 pi for n = 2, 4 pi for n = 3, ...).
    pub fn sphere_area(&self) -> f64 {
        let half_n = self.n as f64 / 2.0;
        2.0 * std::f64::consts::PI.powf(half_n) / gamma_fn(half_n)
    }
}

/// Lanczos approximation of the Gamma function, enough for sphere areas.
fn gamma_fn(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = C[0];
        for (i, c) in C.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + G + 0.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

/// Pointwise profile data at one grid node.  All fields are analytic in the
/// profile (no finite differences): closed forms for plane and catenoid, the
/// conformality-projected ODE solution for the n-catenoid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfileNode {
    /// Signed radius (negative on the left half of the plane chart only).
    pub r: f64,
    pub rp: f64,
    pub rpp: f64,
    pub z: f64,
    pub zp: f64,
    pub zpp: f64,
    /// Chart stretch a = sqrt(r'^2 + z'^2); a = r for catenoid kinds, 1 plane.
    pub a: f64,
    pub ap: f64,
    /// Arc length along the profile from the neck (signed).
    pub sigma: f64,
    /// Weight rho = sqrt(1 + sigma^2); rho >= 1 with equality at the neck.
    pub rho: f64,
    /// Area element per unit sphere measure, a |r|^{n-1}.
    pub area_element: f64,
    /// Principal curvature of the profile curve w.r.t. the away-from-axis normal.
    pub kappa_prof: f64,
    /// Common principal curvature of the n-1 rotational directions.
    pub kappa_sph: f64,
    pub mean_curvature: f64,
    pub norm_a_sq: f64,
    /// Normal nu = (z', -r')/a and its first two s-derivatives.
    pub nu_r: f64,
    pub nu_z: f64,
    pub nu_rp: f64,
    pub nu_zp: f64,
    pub nu_rpp: f64,
    pub nu_zpp: f64,
    /// First-order Laplacian coefficient: Lap u = u''/a^2 + c_lap u'.
    pub c_lap: f64,
    /// Euclidean distance of the point from the origin (for the 1 + |x| weight).
    pub x_norm: f64,
}

/// Sampled profile of a surface on the uniform chart grid s_j = -S + j h,
/// j = 0..N_s-1, plus interface (midpoint) samples used by the conservative
/// operator assembly.
#[derive(Debug, Clone)]
pub struct Profile {
    pub surface: Surface,
    pub s_max: f64,
    pub h: f64,
    pub s: Vec<f64>,
    pub nodes: Vec<ProfileNode>,
    /// (r, a) at the N_s - 1 cell interfaces s_{j+1/2}.
    pub mids: Vec<(f64, f64)>,
    pub sup_norm_a: f64,
}

/// Raw profile state (r, r', z, sigma) at one parameter value.
#[derive(Debug, Clone, Copy)]
struct RawState {
    r: f64,
    rp: f64,
    z: f64,
    sigma: f64,
}

impl Surface {
    /// Closed-form profile state where available; `None` for the n-catenoid.
    fn closed_form(&self, s: f64) -> Option<RawState> {
        match self.kind {
            SurfaceKind::Plane => Some(RawState { r: s, rp: 1.0, z: 0.0, sigma: s }),
            SurfaceKind::Catenoid => Some(RawState {
                r: s.cosh(),
                rp: s.sinh(),
                z: s,
                sigma: s.sinh(),
            }),
            SurfaceKind::NCatenoid => None,
        }
    }

    /// n-catenoid profile ODE right-hand side in the conformal chart.
    fn ode_rhs(&self, y: RawState) -> RawState {
        let n = self.n as f64;
        RawState {
            r: y.rp,
            rp: y.r + (n - 2.0) * y.r.powi(3 - 2 * self.n as i32),
            z: y.r.powi(2 - self.n as i32),
            sigma: y.r,
        }
    }

    /// One RK4 step followed by projection onto the conformality invariant
    /// r'^2 = r^2 - r^{4-2n}.  The projection pins H to zero in exact
    /// arithmetic independently of the integration error, which only
    /// reparametrizes the exact catenoid by a negligible shift.
    fn ode_step(&self, y: RawState, dt: f64) -> RawState {
        let add = |y: RawState, k: RawState, c: f64| RawState {
            r: y.r + c * k.r,
            rp: y.rp + c * k.rp,
            z: y.z + c * k.z,
            sigma: y.sigma + c * k.sigma,
        };
        let k1 = self.ode_rhs(y);
        let k2 = self.ode_rhs(add(y, k1, dt / 2.0));
        let k3 = self.ode_rhs(add(y, k2, dt / 2.0));
        let k4 = self.ode_rhs(add(y, k3, dt));
        let mut out = RawState {
            r: y.r + dt / 6.0 * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r),
            rp: y.rp + dt / 6.0 * (k1.rp + 2.0 * k2.rp + 2.0 * k3.rp + k4.rp),
            z: y.z + dt / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z),
            sigma: y.sigma + dt / 6.0 * (k1.sigma + 2.0 * k2.sigma + 2.0 * k3.sigma + k4.sigma),
        };
        let inv = out.r * out.r - out.r.powi(4 - 2 * self.n as i32);
        out.rp = inv.max(0.0).sqrt();
        out
    }

    /// Integrate the n-catenoid profile over [0, s_max], reporting states at
    /// the requested positive parameter values (must be sorted ascending).
    fn integrate(&self, targets: &[f64]) -> Vec<RawState> {
        let mut out = Vec::with_capacity(targets.len());
        let mut y = RawState { r: 1.0, rp: 0.0, z: 0.0, sigma: 0.0 };
        let mut s = 0.0;
        for &target in targets {
            while s < target - 1e-14 {
                let dt = ODE_MAX_STEP.min(target - s);
                y = self.ode_step(y, dt);
                s += dt;
            }
            out.push(y);
        }
        out
    }

    fn raw_state(&self, s: f64, half_states: &[RawState], half_step: f64) -> RawState {
        if let Some(st) = self.closed_form(s) {
            return st;
        }
        // Mirror symmetry of the n-catenoid: r even, r'/z/sigma odd.
        let idx = (s.abs() / half_step).round() as usize;
        let st = half_states[idx.min(half_states.len() - 1)];
        if s >= 0.0 {
            st
        } else {
            RawState { r: st.r, rp: -st.rp, z: -st.z, sigma: -st.sigma }
        }
    }

    /// Complete a raw state into the full analytic node bundle.
    fn complete(&self, st: RawState) -> ProfileNode {
        let n = self.n as f64;
        let (r, rp) = (st.r, st.rp);
        let (rpp, zp, zpp, a, ap) = match self.kind {
            SurfaceKind::Plane => (0.0, 0.0, 0.0, 1.0, 0.0),
            // Catenoid kinds: r'' from the profile ODE, z' = r^{2-n} slaved,
            // a = r by conformality.
            _ => {
                let rpp = r + (n - 2.0) * r.powi(3 - 2 * self.n as i32);
                let zp = r.powi(2 - self.n as i32);
                let zpp = (2.0 - n) * r.powi(1 - self.n as i32) * rp;
                (rpp, zp, zpp, r, rp)
            }
        };
        let zppp = match self.kind {
            SurfaceKind::Plane => 0.0,
            _ => {
                (2.0 - n)
                    * ((1.0 - n) * r.powi(-(self.n as i32)) * rp * rp
                        + r.powi(1 - self.n as i32) * rpp)
            }
        };
        let rppp = match self.kind {
            SurfaceKind::Plane => 0.0,
            _ => rp * (1.0 + (n - 2.0) * (3.0 - 2.0 * n) * r.powi(2 - 2 * self.n as i32)),
        };
        let a2 = a * a;
        // nu = (z', -r')/a with derivatives; app = a'' matches r'' conformally.
        let app = match self.kind {
            SurfaceKind::Plane => 0.0,
            _ => rpp,
        };
        let nu_r = zp / a;
        let nu_z = -rp / a;
        let nu_rp = zpp / a - zp * ap / a2;
        let nu_zp = -(rpp / a - rp * ap / a2);
        let nu_rpp = zppp / a - 2.0 * zpp * ap / a2 - zp * app / a2 + 2.0 * zp * ap * ap / (a2 * a);
        let nu_zpp =
            -(rppp / a - 2.0 * rpp * ap / a2 - rp * app / a2 + 2.0 * rp * ap * ap / (a2 * a));
        let kappa_prof = (rp * zpp - zp * rpp) / (a2 * a);
        let kappa_sph = if zp == 0.0 { 0.0 } else { zp / (a * r) };
        let mean_curvature = kappa_prof + (n - 1.0) * kappa_sph;
        let norm_a_sq = kappa_prof * kappa_prof + (n - 1.0) * kappa_sph * kappa_sph;
        // Lap u = u''/a^2 + c_lap u'; at the plane axis the regular value is
        // Lap u = n u'' (even fields), encoded as c_lap = 0 plus the n-fold
        // second-derivative handled in `laplacian`.
        let c_lap = if r.abs() < AXIS_TOL {
            0.0
        } else {
            (n - 1.0) * rp / (a2 * r) - ap / (a2 * a)
        };
        ProfileNode {
            r,
            rp,
            rpp,
            z: st.z,
            zp,
            zpp,
            a,
            ap,
            sigma: st.sigma,
            rho: (1.0 + st.sigma * st.sigma).sqrt(),
            area_element: a * r.abs().powi(self.n as i32 - 1),
            kappa_prof,
            kappa_sph,
            mean_curvature,
            norm_a_sq,
            nu_r,
            nu_z,
            nu_rp,
            nu_zp,
            nu_rpp,
            nu_zpp,
            c_lap,
            x_norm: (r * r + st.z * st.z).sqrt(),
        }
    }

    /// Sample the profile on the symmetric uniform grid with N_s nodes.
    pub fn profile(&self, s_max: f64, n_s: usize) -> Result<Profile> {
        if !(s_max > 0.0) || !s_max.is_finite() {
            return Err(Error::Config(format!("S must be positive and finite, got {s_max}")));
        }
        if n_s < 16 {
            return Err(Error::Config(format!("N_s must be at least 16, got {n_s}")));
        }
        let h = 2.0 * s_max / (n_s - 1) as f64;
        let s: Vec<f64> = (0..n_s).map(|j| -s_max + h * j as f64).collect();
        let half_states = if self.kind == SurfaceKind::NCatenoid {
            let targets: Vec<f64> =
                (0..2 * n_s - 1).map(|j| 0.5 * h * j as f64).take_while(|&t| t <= s_max + h).collect();
            self.integrate(&targets)
        } else {
            Vec::new()
        };
        let nodes: Vec<ProfileNode> = s
            .iter()
            .map(|&sj| self.complete(self.raw_state(sj, &half_states, 0.5 * h)))
            .collect();
        let mids: Vec<(f64, f64)> = (0..n_s - 1)
            .map(|j| {
                let st = self.raw_state(s[j] + 0.5 * h, &half_states, 0.5 * h);
                let a = if self.kind == SurfaceKind::Plane { 1.0 } else { st.r };
                (st.r, a)
            })
            .collect();
        let sup_norm_a = nodes.iter().map(|nd| nd.norm_a_sq.sqrt()).fold(0.0, f64::max);
        let profile = Profile { surface: *self, s_max, h, s, nodes, mids, sup_norm_a };
        // Minimal surfaces must report vanishing mean curvature; the plane and
        // both catenoid kinds all qualify.
        if sup_norm_a > 0.0 {
            let worst = profile.nodes.iter().map(|nd| nd.mean_curvature.abs()).fold(0.0, f64::max);
            if worst > MINIMALITY_TOL * sup_norm_a {
                return Err(Error::NonFinite(format!(
                    "profile failed minimality check: |H| = {worst:.3e}"
                )));
            }
        }
        Ok(profile)
    }
}

impl Profile {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Contraction-ball radius eta = min(0.1, 1/(4 sup|A|)).
    pub fn eta(&self) -> f64 {
        if self.sup_norm_a == 0.0 {
            0.1
        } else {
            (1.0 / (4.0 * self.sup_norm_a)).min(0.1)
        }
    }

    /// Near-diagonal cutoff for Holder quotients: min(1, neck circumference/4)
    /// for catenoid kinds; the plane has no neck and uses 1.
    pub fn holder_cutoff(&self) -> f64 {
        match self.surface.kind {
            SurfaceKind::Plane => 1.0,
            _ => {
                let r_min = self.nodes.iter().map(|nd| nd.r).fold(f64::INFINITY, f64::min);
                (2.0 * std::f64::consts::PI * r_min / 4.0).min(1.0)
            }
        }
    }

    /// Laplacian of an axisymmetric field from supplied derivative samples.
    pub fn laplacian(&self, j: usize, du: f64, ddu: f64) -> f64 {
        let nd = &self.nodes[j];
        if nd.r.abs() < AXIS_TOL {
            // Plane axis: regular limit for even fields.
            self.surface.n as f64 * ddu
        } else {
            ddu / (nd.a * nd.a) + nd.c_lap * du
        }
    }

    /// Stability operator L u = Lap u + |A|^2 u on an axisymmetric field.
    pub fn jacobi_apply(&self, field: &GraphField) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|j| {
                self.laplacian(j, field.du[j], field.ddu[j]) + self.nodes[j].norm_a_sq * field.u[j]
            }),
        )
    }
}

/// First derivative of a profile-sampled field, 4th-order stencils
/// (centered inside, one-sided at the two nodes next to each boundary).
pub fn d1_profile(u: &DVector<f64>, h: f64) -> DVector<f64> {
    let n = u.len();
    assert!(n >= 6, "stencils need at least 6 nodes");
    let mut out = DVector::zeros(n);
    out[0] = (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3] - 3.0 * u[4]) / (12.0 * h);
    out[1] = (-3.0 * u[0] - 10.0 * u[1] + 18.0 * u[2] - 6.0 * u[3] + u[4]) / (12.0 * h);
    for j in 2..n - 2 {
        out[j] = (u[j - 2] - 8.0 * u[j - 1] + 8.0 * u[j + 1] - u[j + 2]) / (12.0 * h);
    }
    out[n - 2] =
        (3.0 * u[n - 1] + 10.0 * u[n - 2] - 18.0 * u[n - 3] + 6.0 * u[n - 4] - u[n - 5]) / (12.0 * h);
    out[n - 1] = (25.0 * u[n - 1] - 48.0 * u[n - 2] + 36.0 * u[n - 3] - 16.0 * u[n - 4]
        + 3.0 * u[n - 5])
        / (12.0 * h);
    out
}

/// Second derivative companion to `d1_profile`, same accuracy and layout.
pub fn d2_profile(u: &DVector<f64>, h: f64) -> DVector<f64> {
    let n = u.len();
    assert!(n >= 6, "stencils need at least 6 nodes");
    let h2 = h * h;
    let mut out = DVector::zeros(n);
    out[0] = (45.0 * u[0] - 154.0 * u[1] + 214.0 * u[2] - 156.0 * u[3] + 61.0 * u[4] - 10.0 * u[5])
        / (12.0 * h2);
    out[1] = (10.0 * u[0] - 15.0 * u[1] - 4.0 * u[2] + 14.0 * u[3] - 6.0 * u[4] + u[5]) / (12.0 * h2);
    for j in 2..n - 2 {
        out[j] =
            (-u[j - 2] + 16.0 * u[j - 1] - 30.0 * u[j] + 16.0 * u[j + 1] - u[j + 2]) / (12.0 * h2);
    }
    out[n - 2] = (10.0 * u[n - 1] - 15.0 * u[n - 2] - 4.0 * u[n - 3] + 14.0 * u[n - 4]
        - 6.0 * u[n - 5]
        + u[n - 6])
        / (12.0 * h2);
    out[n - 1] = (45.0 * u[n - 1] - 154.0 * u[n - 2] + 214.0 * u[n - 3] - 156.0 * u[n - 4]
        + 61.0 * u[n - 5]
        - 10.0 * u[n - 6])
        / (12.0 * h2);
    out
}

/// An axisymmetric normal graph over the background surface: displacement u
/// along nu, with cached stencil derivatives.  u is clamped to zero at the
/// chart boundary (Dirichlet truncation).
#[derive(Debug, Clone)]
pub struct GraphField {
    pub u: DVector<f64>,
    pub du: DVector<f64>,
    pub ddu: DVector<f64>,
}

impl GraphField {
    /// Build a graph field, enforcing the embeddedness margin
    /// sup|u| * sup|A| < 1/2 that keeps the normal exponential injective.
    pub fn new(profile: &Profile, mut u: DVector<f64>) -> Result<Self> {
        if u.len() != profile.len() {
            return Err(Error::Config(format!(
                "graph field length {} does not match grid {}",
                u.len(),
                profile.len()
            )));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("graph field".into()));
        }
        let n = u.len();
        u[0] = 0.0;
        u[n - 1] = 0.0;
        let sup_u = u.amax();
        if sup_u * profile.sup_norm_a >= 0.5 {
            return Err(Error::GraphDegenerate(format!(
                "sup|u| sup|A| = {:.3e} >= 1/2",
                sup_u * profile.sup_norm_a
            )));
        }
        let du = d1_profile(&u, profile.h);
        let ddu = d2_profile(&u, profile.h);
        Ok(GraphField { u, du, ddu })
    }
}

/// Mean curvature data of the graph surface at every node.
#[derive(Debug, Clone)]
pub struct GraphCurvature {
    /// Flow-oriented mean curvature: du/dt = v * h_flow on graphs.
    pub h_flow: DVector<f64>,
    /// Tilt factor v = (nu_Gamma . nu_Sigma)^{-1} >= 1.
    pub v: DVector<f64>,
}

/// Mean curvature of the revolved graph profile (R, Z) = (r, z) + u nu.
///
/// With (R', Z') = (1 + u kappa_prof)(r', z') + u' nu (a Frenet identity for
/// the away-from-axis normal), m = |(R', Z')|, the divergence-form mean
/// curvature of the graph is (R'Z'' - Z'R'')/m^3 + (n-1) Z'/(m R), and the
/// flow orientation flips its sign; v = m a / (R'r' + Z'z').
pub fn graph_mean_curvature(profile: &Profile, field: &GraphField) -> Result<GraphCurvature> {
    let n_nodes = profile.len();
    let nf = profile.surface.n as f64;
    let mut h_flow = DVector::zeros(n_nodes);
    let mut v = DVector::zeros(n_nodes);
    for j in 0..n_nodes {
        let nd = &profile.nodes[j];
        let (u, du, ddu) = (field.u[j], field.du[j], field.ddu[j]);
        let rr = nd.r + u * nd.nu_r;
        let rrp = nd.rp + du * nd.nu_r + u * nd.nu_rp;
        let zzp = nd.zp + du * nd.nu_z + u * nd.nu_zp;
        let rrpp = nd.rpp + ddu * nd.nu_r + 2.0 * du * nd.nu_rp + u * nd.nu_rpp;
        let zzpp = nd.zpp + ddu * nd.nu_z + 2.0 * du * nd.nu_zp + u * nd.nu_zpp;
        let m2 = rrp * rrp + zzp * zzp;
        let m = m2.sqrt();
        if !(m > 0.0) {
            return Err(Error::GraphDegenerate(format!("graph profile stalls at node {j}")));
        }
        let kappa1 = (rrp * zzpp - zzp * rrpp) / (m2 * m);
        let kappa2 = if rr.abs() < 1e-9 {
            // Axis limit (plane chart): Z'/R -> Z''/R' for even fields.
            if rrp.abs() < AXIS_TOL { 0.0 } else { zzpp / (m * rrp) }
        } else {
            zzp / (m * rr)
        };
        let div_h = kappa1 + (nf - 1.0) * kappa2;
        let denom = rrp * nd.rp + zzp * nd.zp;
        if denom <= 0.0 {
            return Err(Error::GraphDegenerate(format!(
                "graph normal turns past the background tangent at node {j}"
            )));
        }
        h_flow[j] = -div_h;
        v[j] = m * nd.a / denom;
    }
    Ok(GraphCurvature { h_flow, v })
}

/// Nonlinear error E(u) = v H_flow(graph u) - L u, the quadratic remainder of
/// the graphical flow around the minimal background.
pub fn nonlinear_error(profile: &Profile, field: &GraphField) -> Result<DVector<f64>> {
    let curv = graph_mean_curvature(profile, field)?;
    let lin = profile.jacobi_apply(field);
    let mut e = DVector::zeros(profile.len());
    for j in 0..profile.len() {
        e[j] = curv.v[j] * curv.h_flow[j] - lin[j];
    }
    // Dirichlet-clamped ends carry u = 0 exactly, where both terms vanish.
    e[0] = 0.0;
    let last = profile.len() - 1;
    e[last] = 0.0;
    Ok(e)
}

/// Measured constant in the pointwise quadratic bound
/// r |E(u)| <= C (r^{-1}|u| + |grad u|) (r^{-1}|u| + |grad u| + r |grad^2 u|),
/// with r(x) = 1 + |x|.  Returns the max ratio over interior nodes.
pub fn quadratic_bound_ratio(profile: &Profile, field: &GraphField) -> Result<f64> {
    let e = nonlinear_error(profile, field)?;
    let mut worst: f64 = 0.0;
    for j in 2..profile.len() - 2 {
        let nd = &profile.nodes[j];
        let r = 1.0 + nd.x_norm;
        let grad = (field.du[j] / nd.a).abs();
        let hess = hessian_frame_norm(profile, j, field.du[j], field.ddu[j]);
        let first = field.u[j].abs() / r + grad;
        let second = first + r * hess;
        let rhs = first * second;
        let lhs = r * e[j].abs();
        if rhs > 1e-300 {
            worst = worst.max(lhs / rhs);
        } else if lhs > 1e-12 {
            return Err(Error::NonFinite("quadratic bound ratio degenerate".into()));
        }
    }
    Ok(worst)
}

/// The two distinct covariant-Hessian components of an axisymmetric field in
/// the orthonormal frame: (1/a)(u'/a)' along the profile and (r'/(a r))(u'/a)
/// on each of the n-1 rotational directions.
pub fn hessian_frame_components(profile: &Profile, j: usize, du: f64, ddu: f64) -> (f64, f64) {
    let nd = &profile.nodes[j];
    let h11 = ddu / (nd.a * nd.a) - du * nd.ap / (nd.a * nd.a * nd.a);
    let hrot = if nd.r.abs() < AXIS_TOL {
        // Regular limit at the plane axis equals the profile component.
        h11
    } else {
        (nd.rp / (nd.a * nd.r)) * (du / nd.a)
    };
    (h11, hrot)
}

/// Frobenius norm of the covariant Hessian of an axisymmetric field in the
/// orthonormal frame.
pub fn hessian_frame_norm(profile: &Profile, j: usize, du: f64, ddu: f64) -> f64 {
    let n = profile.surface.n as f64;
    let (h11, hrot) = hessian_frame_components(profile, j, du, ddu);
    (h11 * h11 + (n - 1.0) * hrot * hrot).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn catenoid() -> Profile {
        Surface::new(SurfaceKind::Catenoid, 2).unwrap().profile(6.0, 301).unwrap()
    }

    #[test]
    fn stencils_are_fourth_order() {
        let f = |s: f64| (1.3 * s + 0.4).sin() * (0.2 * s).exp();
        let fp = |s: f64| {
            (0.2 * s).exp() * (1.3 * (1.3 * s + 0.4).cos() + 0.2 * (1.3 * s + 0.4).sin())
        };
        let fpp = |s: f64| {
            (0.2 * s).exp()
                * ((0.04 - 1.69) * (1.3 * s + 0.4).sin() + 2.0 * 0.2 * 1.3 * (1.3 * s + 0.4).cos())
        };
        let mut errs1 = Vec::new();
        let mut errs2 = Vec::new();
        for &n in &[41usize, 81, 161] {
            let h = 2.0 / (n - 1) as f64;
            let u = DVector::from_iterator(n, (0..n).map(|j| f(-1.0 + h * j as f64)));
            let d1 = d1_profile(&u, h);
            let d2 = d2_profile(&u, h);
            let e1 = (0..n)
                .map(|j| (d1[j] - fp(-1.0 + h * j as f64)).abs())
                .fold(0.0f64, f64::max);
            let e2 = (0..n)
                .map(|j| (d2[j] - fpp(-1.0 + h * j as f64)).abs())
                .fold(0.0f64, f64::max);
            errs1.push(e1);
            errs2.push(e2);
        }
        for w in [&errs1, &errs2] {
            let p1 = (w[0] / w[1]).log2();
            let p2 = (w[1] / w[2]).log2();
            assert!(p1 > 3.5 && p2 > 3.5, "observed orders {p1:.2}, {p2:.2}");
        }
    }

    #[test]
    fn catenoid_closed_forms() {
        let p = catenoid();
        let j = p.s.iter().position(|&s| (s - 2.0).abs() < 1e-12).unwrap();
        let nd = &p.nodes[j];
        // Conformal metric: area element cosh^2 s, |A|^2 = 2/cosh^4 s.
        assert_relative_eq!(nd.area_element, 2.0f64.cosh().powi(2), max_relative = 1e-13);
        assert_relative_eq!(nd.norm_a_sq, 2.0 / 2.0f64.cosh().powi(4), max_relative = 1e-12);
        assert_relative_eq!(nd.rho, 2.0f64.cosh(), max_relative = 1e-13);
        assert_abs_diff_eq!(nd.mean_curvature, 0.0, epsilon = 1e-13);
        let j0 = p.s.iter().position(|&s| s.abs() < 1e-12).unwrap();
        assert_relative_eq!(p.nodes[j0].norm_a_sq, 2.0, max_relative = 1e-13);
        assert_relative_eq!(p.nodes[j0].rho, 1.0, max_relative = 1e-14);
        let j3 = p.s.iter().position(|&s| (s - 3.0).abs() < 1e-12).unwrap();
        assert_relative_eq!(p.nodes[j3].norm_a_sq, 2.0 / 3.0f64.cosh().powi(4), max_relative = 1e-12);
    }

    /// Independent oracle: second fundamental form of the revolved embedding
    /// in R^3 by centered finite differences on a fine local grid.
    fn fd_curvature_oracle(surf: Surface, s0: f64, eps: f64) -> (f64, f64) {
        assert_eq!(surf.n, 2);
        let state = |s: f64| surf.closed_form(s).unwrap();
        let emb = |s: f64, th: f64| {
            let st = state(s);
            [st.r * th.cos(), st.r * th.sin(), st.z]
        };
        let diff2 = |f: &dyn Fn(f64) -> [f64; 3], x: f64| {
            let (fm, f0, fp) = (f(x - eps), f(x), f(x + eps));
            let d1 = [
                (fp[0] - fm[0]) / (2.0 * eps),
                (fp[1] - fm[1]) / (2.0 * eps),
                (fp[2] - fm[2]) / (2.0 * eps),
            ];
            let d2 = [
                (fp[0] - 2.0 * f0[0] + fm[0]) / (eps * eps),
                (fp[1] - 2.0 * f0[1] + fm[1]) / (eps * eps),
                (fp[2] - 2.0 * f0[2] + fm[2]) / (eps * eps),
            ];
            (d1, d2)
        };
        let th0 = 0.7;
        let (xs, xss) = diff2(&|s| emb(s, th0), s0);
        let (xt, xtt) = diff2(&|t| emb(s0, t), th0);
        let xst = {
            let fpp = emb(s0 + eps, th0 + eps);
            let fpm = emb(s0 + eps, th0 - eps);
            let fmp = emb(s0 - eps, th0 + eps);
            let fmm = emb(s0 - eps, th0 - eps);
            [
                (fpp[0] - fpm[0] - fmp[0] + fmm[0]) / (4.0 * eps * eps),
                (fpp[1] - fpm[1] - fmp[1] + fmm[1]) / (4.0 * eps * eps),
                (fpp[2] - fpm[2] - fmp[2] + fmm[2]) / (4.0 * eps * eps),
            ]
        };
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let nrm = cross(xs, xt);
        let nlen = dot(nrm, nrm).sqrt();
        let nu = [nrm[0] / nlen, nrm[1] / nlen, nrm[2] / nlen];
        // Orient away from the axis to match the library convention.
        let sgn = if nu[0] * th0.cos() + nu[1] * th0.sin() >= 0.0 { 1.0 } else { -1.0 };
        let nu = [sgn * nu[0], sgn * nu[1], sgn * nu[2]];
        let (e, f, g) = (dot(xs, xs), dot(xs, xt), dot(xt, xt));
        let (l, m, nn) = (dot(xss, nu), dot(xst, nu), dot(xtt, nu));
        let det = e * g - f * f;
        let h = (e * nn - 2.0 * f * m + g * l) / det;
        let k = (l * nn - m * m) / det;
        // |A|^2 = H^2 - 2K for a surface in R^3.
        (h, h * h - 2.0 * k)
    }

    #[test]
    fn curvature_matches_embedding_oracle() {
        for (kind, nodes) in [
            (SurfaceKind::Catenoid, vec![128usize, 154, 73, 208]),
            (SurfaceKind::Plane, vec![157, 186, 44]),
        ] {
            let surf = Surface::new(kind, 2).unwrap();
            let prof = surf.profile(4.0, 257).unwrap();
            for &j in &nodes {
                let (h_fd, a2_fd) = fd_curvature_oracle(surf, prof.s[j], 1e-4);
                assert_abs_diff_eq!(prof.nodes[j].mean_curvature, h_fd, epsilon = 1e-6);
                assert_abs_diff_eq!(prof.nodes[j].norm_a_sq, a2_fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn ncatenoid_profile_satisfies_first_integral() {
        let surf = Surface::new(SurfaceKind::NCatenoid, 3).unwrap();
        let prof = surf.profile(3.0, 181).unwrap();
        for nd in &prof.nodes {
            // Conserved quantity r^{n-1} z_sigma = 1, i.e. z' = r^{2-n}.
            assert_relative_eq!(nd.zp, nd.r.powi(-1), max_relative = 1e-9);
            // Minimality via the first integral: |A|^2 = n(n-1) r^{-2n}.
            assert_relative_eq!(nd.norm_a_sq, 6.0 * nd.r.powi(-6), max_relative = 1e-8);
            assert!(nd.mean_curvature.abs() < 1e-10);
            // Conformality a = r.
            assert_relative_eq!(nd.a, nd.r, max_relative = 1e-12);
        }
        // Neck at r = 1, profile even.
        assert_relative_eq!(prof.nodes[90].r, 1.0, max_relative = 1e-12);
        assert_relative_eq!(prof.nodes[30].r, prof.nodes[150].r, max_relative = 1e-12);
    }

    #[test]
    fn plane_chart_basics() {
        let surf = Surface::new(SurfaceKind::Plane, 2).unwrap();
        let prof = surf.profile(10.0, 101).unwrap();
        for (j, nd) in prof.nodes.iter().enumerate() {
            assert_relative_eq!(nd.rho, (1.0 + prof.s[j] * prof.s[j]).sqrt(), max_relative = 1e-14);
            assert_eq!(nd.norm_a_sq, 0.0);
            assert_eq!(nd.mean_curvature, 0.0);
        }
        // Area element |s|^{n-1} = |s| for n = 2; equals 1 at s = 1.
        let j1 = prof.s.iter().position(|&s| (s - 1.0).abs() < 1e-12).unwrap();
        assert_relative_eq!(prof.nodes[j1].area_element, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn graph_over_plane_translation_is_flat() {
        let surf = Surface::new(SurfaceKind::Plane, 2).unwrap();
        let prof = surf.profile(8.0, 161).unwrap();
        // Constant displacement: translate the plane along its normal.  The
        // boundary clamp is irrelevant to interior nodes two layers in.
        let mut u = DVector::from_element(prof.len(), 0.05);
        u[0] = 0.0;
        u[prof.len() - 1] = 0.0;
        let field = GraphField::new(&prof, u).unwrap();
        let curv = graph_mean_curvature(&prof, &field).unwrap();
        for j in 4..prof.len() - 4 {
            assert_abs_diff_eq!(curv.h_flow[j], 0.0, epsilon = 1e-10);
            assert_relative_eq!(curv.v[j], 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn tilt_factor_dual_route() {
        // v from the normal-dot-product route must match
        // sqrt(1 + u'^2 / (a^2 (1 + u kappa_prof)^2)) identically.
        let prof = catenoid();
        let u = DVector::from_iterator(
            prof.len(),
            prof.s.iter().map(|&s| 0.08 * (-s * s / 2.0).exp() * (1.0 + 0.3 * s)),
        );
        let field = GraphField::new(&prof, u).unwrap();
        let curv = graph_mean_curvature(&prof, &field).unwrap();
        for j in 2..prof.len() - 2 {
            let nd = &prof.nodes[j];
            let tilt = field.du[j] / (nd.a * (1.0 + field.u[j] * nd.kappa_prof));
            let v_ref = (1.0 + tilt * tilt).sqrt();
            assert_relative_eq!(curv.v[j], v_ref, max_relative = 1e-11);
            assert!(curv.v[j] >= 1.0 - 1e-15);
        }
    }

    #[test]
    fn zero_graph_reproduces_background() {
        let prof = catenoid();
        let field = GraphField::new(&prof, DVector::zeros(prof.len())).unwrap();
        let curv = graph_mean_curvature(&prof, &field).unwrap();
        let e = nonlinear_error(&prof, &field).unwrap();
        for j in 0..prof.len() {
            assert_abs_diff_eq!(curv.h_flow[j], 0.0, epsilon = 1e-13);
            assert_relative_eq!(curv.v[j], 1.0, max_relative = 1e-14);
            assert_abs_diff_eq!(e[j], 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn nonlinear_error_is_quadratic() {
        // E(eps w)/eps^2 must be stable under eps halving: the linear term of
        // v H_flow cancels against L(eps w) at the stencil level.
        let prof = catenoid();
        let w = DVector::from_iterator(prof.len(), prof.s.iter().map(|&s| (-s * s / 2.0).exp()));
        let mut ratios = Vec::new();
        for &eps in &[1e-2, 5e-3, 2.5e-3] {
            let field = GraphField::new(&prof, &w * eps).unwrap();
            let e = nonlinear_error(&prof, &field).unwrap();
            ratios.push(e.amax() / (eps * eps));
        }
        for pair in ratios.windows(2) {
            assert!(
                (pair[0] - pair[1]).abs() < 0.1 * pair[0].abs(),
                "quadratic ratio drift: {ratios:?}"
            );
        }
        assert!(ratios[0] > 1e-4, "nonlinear error unexpectedly vanishes");
    }

    #[test]
    fn embeddedness_guard_rejects_large_graphs() {
        let prof = catenoid();
        let u = DVector::from_element(prof.len(), 0.5);
        assert!(matches!(GraphField::new(&prof, u), Err(Error::GraphDegenerate(_))));
    }

    #[test]
    fn harmonic_multiplicities() {
        let s2 = Surface::new(SurfaceKind::Catenoid, 2).unwrap();
        assert_eq!(s2.harmonic_multiplicity(0), 1);
        assert_eq!(s2.harmonic_multiplicity(1), 2);
        assert_eq!(s2.harmonic_multiplicity(5), 2);
        let s3 = Surface::new(SurfaceKind::NCatenoid, 3).unwrap();
        assert_eq!(s3.harmonic_multiplicity(0), 1);
        assert_eq!(s3.harmonic_multiplicity(1), 3);
        assert_eq!(s3.harmonic_multiplicity(2), 5);
        assert_relative_eq!(s2.sphere_area(), 2.0 * std::f64::consts::PI, max_relative = 1e-12);
        assert_relative_eq!(s3.sphere_area(), 4.0 * std::f64::consts::PI, max_relative = 1e-12);
    }
}
