//! Assumption audits for strong (`A0`–`A3`) and weak (`B0`–`B2`) extrema.
//!
//! The majorant `L(t)` is constructed empirically: at every knot the
//! integrand and its gradients are evaluated on a fixed set of tube points
//! and the largest norm is kept. Its `ω`-weighted integral is then judged by
//! the improper-integral machinery.

use std::fmt;

use super::{CandidateProcess, ControlProblem};
use crate::config::{Mode, Tolerances, Verdict};
use crate::error::{Error, Result};
use crate::integrate::grid::Grid;
use crate::integrate::path::norm;
use crate::integrate::quadrature::{improper_integral, Convergence, ImproperIntegral, ImproperOptions};
use crate::weights::{check_distribution, check_weight_properties, PropertyReport};

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in the `dim`-th prime base.
pub fn halton(index: u64, dim: usize) -> f64 {
    let base = PRIMES[dim % PRIMES.len()] as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Maps a point of `[0,1]^d` radially onto the ball of radius `r`.
pub(crate) fn cube_to_ball(c: &[f64], r: f64) -> Vec<f64> {
    let z: Vec<f64> = c.iter().map(|v| 2.0 * v - 1.0).collect();
    let inf = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let two = norm(&z);
    if two == 0.0 {
        return z;
    }
    z.iter().map(|v| v * r * inf / two).collect()
}

/// Deterministic low-discrepancy point `j` for knot `k`.
pub(crate) fn tube_point(k: usize, j: usize, per_knot: usize, dims: usize) -> Vec<f64> {
    let idx = (k * per_knot + j + 1) as u64;
    (0..dims).map(|d| halton(idx, d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub value: f64,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.6e}", self.t)?;
        if !self.x.is_empty() {
            write!(f, " x={:?}", self.x)?;
        }
        if !self.u.is_empty() {
            write!(f, " u={:?}", self.u)?;
        }
        write!(f, " value={:.6e}", self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub name: String,
    pub verdict: Verdict,
    pub note: String,
    pub witness: Option<Witness>,
}

impl AuditEntry {
    fn new(name: &str, verdict: Verdict, note: impl Into<String>, witness: Option<Witness>) -> Self {
        AuditEntry {
            name: name.to_string(),
            verdict,
            note: note.into(),
            witness,
        }
    }
}

impl fmt::Display for AuditEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<12} {}", self.name, self.verdict)?;
        if !self.note.is_empty() {
            write!(f, "  {}", self.note)?;
        }
        if let Some(w) = &self.witness {
            write!(f, "  [{w}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub mode: Mode,
    pub gamma: f64,
    pub entries: Vec<AuditEntry>,
    /// Growth constant of the dynamics.
    pub c0: f64,
    /// `max |ν̇| / ν`.
    pub k: f64,
    /// `(t_k, L(t_k))`.
    pub majorant: Vec<(f64, f64)>,
    pub majorant_integral: Option<ImproperIntegral>,
    pub weights: Option<PropertyReport>,
    pub distribution: Option<PropertyReport>,
}

impl AssumptionReport {
    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.verdict)
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.verdict.is_acceptable())
    }

    /// Name of the majorant condition for the report's mode.
    pub fn majorant_name(&self) -> &'static str {
        match self.mode {
            Mode::Strong => "A2",
            Mode::Weak => "B2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub gamma: f64,
    pub mode: Mode,
    /// Tube points per knot.
    pub samples: usize,
    pub tol: Tolerances,
    /// Continuity is probed on every `continuity_stride`-th knot.
    pub continuity_stride: usize,
}

impl AuditOptions {
    pub fn new(mode: Mode, gamma: f64) -> Self {
        AuditOptions {
            gamma,
            mode,
            samples: 32,
            tol: Tolerances::default(),
            continuity_stride: 16,
        }
    }
}

/// Tube sample: state, control.
type Sample = (Vec<f64>, Vec<f64>);

/// Points of the tube at knot `k`: centre, axis extremes, then quasi-random fill.
fn tube_samples(prob: &ControlProblem, k: usize, x: &[f64], u: &[f64], r: f64, opts: &AuditOptions) -> Vec<Sample> {
    let (n, m) = (prob.n, prob.m);
    let mut out: Vec<Sample> = vec![(x.to_vec(), u.to_vec())];
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let mut xs = x.to_vec();
            xs[i] += s * r;
            out.push((xs, u.to_vec()));
        }
    }
    let u_radius = match opts.mode {
        Mode::Strong => opts.gamma,
        Mode::Weak => r,
    };
    for i in 0..m {
        let b = &prob.controls.bounds[i];
        let ends = match opts.mode {
            Mode::Strong if b.is_bounded() => [b.inner_lo(), b.inner_hi()],
            _ => [b.clamp(u[i] - u_radius), b.clamp(u[i] + u_radius)],
        };
        for e in ends {
            let mut us = u.to_vec();
            us[i] = e;
            out.push((x.to_vec(), us));
        }
    }
    let fill = opts.samples.saturating_sub(out.len()).max(8);
    for j in 0..fill {
        let c = tube_point(k, j, fill, n + m);
        let xs: Vec<f64> = cube_to_ball(&c[..n], r).iter().zip(x).map(|(d, v)| v + d).collect();
        let us: Vec<f64> = match opts.mode {
            Mode::Strong => (0..m)
                .map(|i| {
                    let b = &prob.controls.bounds[i];
                    if b.is_bounded() {
                        b.clamp(b.lo + c[n + i] * (b.hi - b.lo))
                    } else {
                        b.clamp(u[i] + opts.gamma * (2.0 * c[n + i] - 1.0))
                    }
                })
                .collect(),
            Mode::Weak => cube_to_ball(&c[n..], r)
                .iter()
                .zip(u)
                .enumerate()
                .map(|(i, (d, v))| prob.controls.bounds[i].clamp(v + d))
                .collect(),
        };
        out.push((xs, us));
    }
    out
}

struct Measure {
    l: f64,
    growth: f64,
    jac: f64,
}

fn measure(prob: &ControlProblem, t: f64, x: &[f64], u: &[f64], mode: Mode) -> Result<Measure> {
    let f = prob.f_at(t, x, u)?;
    let fx = prob.f_x_at(t, x, u)?;
    let mut sq = f * f + fx.iter().map(|v| v * v).sum::<f64>();
    if mode == Mode::Weak {
        sq += prob.f_u_at(t, x, u)?.iter().map(|v| v * v).sum::<f64>();
    }
    let phi = prob.phi_at(t, x, u)?;
    let px = prob.phi_x_at(t, x, u)?;
    let (growth, jac) = match mode {
        Mode::Strong => (norm(&phi) / (1.0 + norm(x)), norm(&px)),
        Mode::Weak => {
            let pu = prob.phi_u_at(t, x, u)?;
            (
                norm(&phi) / (1.0 + norm(x) + norm(u)),
                (norm(&px).powi(2) + norm(&pu).powi(2)).sqrt(),
            )
        }
    };
    let l = sq.sqrt();
    Ok(Measure {
        l: if l.is_nan() { f64::INFINITY } else { l },
        growth,
        jac,
    })
}

/// Values at `hi - 10^{-k}·width` (k = 4, 8, 12) grow without saturating.
fn open_end_unbounded(vals: &[f64; 3]) -> bool {
    let d1 = vals[1] - vals[0];
    let d2 = vals[2] - vals[1];
    !vals.iter().all(|v| v.is_finite()) || (d1 > 1e-6 * (1.0 + vals[0].abs()) && d2 >= 0.5 * d1)
}

/// Runs the audit of the mode in `opts` along `cand`.
pub fn audit_assumptions(prob: &ControlProblem, cand: &CandidateProcess, opts: &AuditOptions) -> Result<AssumptionReport> {
    if !(opts.gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {}", opts.gamma)));
    }
    if opts.mode == Mode::Weak && prob.eta.is_none() {
        return Err(Error::MissingEta);
    }
    let grid = &cand.grid;
    let knots = grid.knots();
    let mode = opts.mode;
    let mut entries = Vec::new();

    // A0 / B0: weights.
    // Weight properties are data-only; probe them on a horizon of at least 50.
    let property_grid = Grid::log_uniform(grid.t_max().max(50.0), 2048)?;
    let weights = check_weight_properties(&prob.nu, &property_grid, mode, opts.tol.limit)?;
    let distribution = match check_distribution(&prob.omega, &property_grid, opts.tol.divergence_growth) {
        Ok(mut r) => {
            if mode == Mode::Weak {
                r.entries[0].name = "F5".into();
            }
            Some(r)
        }
        Err(Error::MissingTailBound(_)) => None,
        Err(e) => return Err(e),
    };
    let mut sub: Vec<(String, Verdict, Option<(f64, f64)>)> = weights
        .entries
        .iter()
        .map(|e| (e.name.clone(), e.verdict, e.witnesses.first().copied()))
        .collect();
    match &distribution {
        Some(d) => sub.extend(d.entries.iter().map(|e| (e.name.clone(), e.verdict, e.witnesses.first().copied()))),
        None => sub.push((
            if mode == Mode::Strong { "E6" } else { "F5" }.into(),
            Verdict::Undetermined,
            None,
        )),
    }
    let dual = prob.p_exp > 1.0 && prob.p_exp.is_finite();
    sub.insert(
        0,
        (
            if mode == Mode::Strong { "E0" } else { "F0" }.into(),
            Verdict::from_bool(dual),
            (!dual).then_some((0.0, prob.p_exp)),
        ),
    );
    if let (Mode::Weak, Some(eta)) = (mode, &prob.eta) {
        let mut bad = None;
        let mut prev = f64::INFINITY;
        for &t in knots {
            let v = eta.eval(t);
            if !(v > 0.0) || v > prev * (1.0 + 1e-12) {
                bad = Some((t, v));
                break;
            }
            prev = v;
        }
        sub.push(("F6".into(), Verdict::from_bool(bad.is_none()), bad));
    }
    let a0_name = if mode == Mode::Strong { "A0" } else { "B0" };
    let a0 = if sub.iter().any(|s| s.1.is_fail()) {
        Verdict::Fail
    } else if sub.iter().any(|s| s.1 == Verdict::Undetermined) {
        Verdict::Undetermined
    } else {
        Verdict::Pass
    };
    let a0_note = sub.iter().map(|s| format!("{}={}", s.0, s.1)).collect::<Vec<_>>().join(" ");
    let a0_witness = sub.iter().find(|s| s.1.is_fail()).and_then(|s| s.2).map(|(t, v)| Witness {
        t,
        x: vec![],
        u: vec![],
        value: v,
    });
    entries.push(AuditEntry::new(a0_name, a0, a0_note, a0_witness));

    // Tube sampling.
    let mut majorant = Vec::with_capacity(knots.len());
    let mut argmax: Vec<Sample> = Vec::with_capacity(knots.len());
    let mut domain_witness: Option<Witness> = None;
    let mut c0 = 0.0f64;
    let mut c0_series = Vec::with_capacity(knots.len());
    let mut c0_witness: Option<Witness> = None;
    let mut cont_witness: Option<Witness> = None;
    for (k, &t) in knots.iter().enumerate() {
        let x = cand.x_knot(k).to_vec();
        let u = cand.u_knot(k)?;
        let r = prob.tube_radius(mode, opts.gamma, t)?;
        if !(r > f64::EPSILON * norm(&x)) {
            return Err(Error::EmptyTube { t });
        }
        let samples = tube_samples(prob, k, &x, &u, r, opts);
        let mut lmax = 0.0f64;
        let mut best = samples[0].clone();
        let mut cmax = 0.0f64;
        for (xs, us) in &samples {
            match measure(prob, t, xs, us, mode) {
                Ok(mm) => {
                    if mm.l > lmax || !mm.l.is_finite() {
                        lmax = mm.l;
                        best = (xs.clone(), us.clone());
                    }
                    let c = mm.growth.max(mm.jac);
                    if !(c <= cmax) {
                        cmax = c;
                        if !(c <= c0) {
                            c0_witness = Some(Witness {
                                t,
                                x: xs.clone(),
                                u: us.clone(),
                                value: c,
                            });
                        }
                    }
                }
                Err(Error::Domain { .. }) | Err(Error::DimensionMismatch(_)) => {
                    lmax = f64::INFINITY;
                    best = (xs.clone(), us.clone());
                    if domain_witness.is_none() {
                        domain_witness = Some(Witness {
                            t,
                            x: xs.clone(),
                            u: us.clone(),
                            value: f64::INFINITY,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
            if !lmax.is_finite() && domain_witness.is_some() {
                break;
            }
        }
        if mode == Mode::Strong && domain_witness.is_none() {
            for i in 0..prob.m {
                let b = &prob.controls.bounds[i];
                if !(b.hi_open && b.hi.is_finite()) && !(b.lo_open && b.lo.is_finite()) {
                    continue;
                }
                let width = if b.is_bounded() { b.hi - b.lo } else { 1.0 };
                let mut ends = Vec::new();
                if b.hi_open && b.hi.is_finite() {
                    ends.push((b.hi, -1.0));
                }
                if b.lo_open && b.lo.is_finite() {
                    ends.push((b.lo, 1.0));
                }
                for (end, dir) in ends {
                    let mut vals = [0.0; 3];
                    let mut last = u.clone();
                    for (slot, p) in vals.iter_mut().zip([4, 8, 12]) {
                        let mut us = u.clone();
                        us[i] = end + dir * width * 10f64.powi(-p);
                        *slot = measure(prob, t, &x, &us, mode).map(|mm| mm.l).unwrap_or(f64::INFINITY);
                        last = us;
                    }
                    if open_end_unbounded(&vals) {
                        lmax = f64::INFINITY;
                        best = (x.clone(), last.clone());
                        if domain_witness.is_none() {
                            domain_witness = Some(Witness {
                                t,
                                x: x.clone(),
                                u: last,
                                value: vals[2],
                            });
                        }
                    }
                }
            }
        }
        if cont_witness.is_none() && k % opts.continuity_stride.max(1) == 0 && lmax.is_finite() {
            cont_witness = continuity_probe(prob, t, &samples, mode);
        }
        c0 = c0.max(cmax);
        c0_series.push(cmax);
        majorant.push((t, lmax));
        argmax.push(best);
    }

    // A1 / B1.
    let a1_name = if mode == Mode::Strong { "A1" } else { "B1" };
    let a1 = match &cont_witness {
        Some(_) => Verdict::Fail,
        None => Verdict::NoCounterexample,
    };
    entries.push(AuditEntry::new(
        a1_name,
        a1,
        "measurability in t assumed; continuity in (x,u) probed by perturbation",
        cont_witness,
    ));

    // A2 / B2.
    let a2_name = if mode == Mode::Strong { "A2" } else { "B2" };
    let mut majorant_integral = None;
    let (a2, a2_note, a2_witness) = if let Some(w) = domain_witness {
        (
            Verdict::Fail,
            "majorant L(t) is infinite: integrand undefined or unbounded in the tube".to_string(),
            Some(w),
        )
    } else {
        let t_max = grid.t_max();
        let t_last = knots[knots.len() - 1];
        let lvals: Vec<f64> = majorant.iter().map(|p| p.1).collect();
        let interp = |t: f64| -> f64 {
            if t >= t_last {
                return lvals[lvals.len() - 1];
            }
            let k = grid.cell_of(t);
            let (a, b) = (knots[k], knots[k + 1]);
            let s = ((t - a) / (b - a)).clamp(0.0, 1.0);
            lvals[k] + s * (lvals[k + 1] - lvals[k])
        };
        let omega = &prob.omega;
        let iopts = ImproperOptions {
            pole: Some(omega.pole_exponent()),
            growth_tol: opts.tol.divergence_growth,
            ..Default::default()
        };
        let integral = improper_integral(|t| Ok(omega.eval(t) * interp(t)), grid, iopts)?;
        let verdict = match integral.convergence {
            Convergence::Finite => Verdict::Pass,
            Convergence::Divergent => Verdict::Fail,
            Convergence::Undetermined => Verdict::Undetermined,
        };
        let witness = if verdict.is_fail() {
            let t = integral.witness.unwrap_or(t_max);
            let k = grid.knot_at_or_before(t);
            Some(Witness {
                t: knots[k],
                x: argmax[k].0.clone(),
                u: argmax[k].1.clone(),
                value: integral.cumulative[k.min(integral.cumulative.len() - 1)],
            })
        } else {
            None
        };
        let note = format!(
            "int omega*L: partial {:.6e}, tail {:.3e}, {}",
            integral.partial, integral.tail, integral.convergence
        );
        majorant_integral = Some(integral);
        (verdict, note, witness)
    };
    entries.push(AuditEntry::new(a2_name, a2, a2_note, a2_witness));

    // Growth constant: finite and not still increasing over the last decade.
    let t_max = grid.t_max();
    let window = |lo: f64, hi: f64| {
        knots
            .iter()
            .zip(&c0_series)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .fold(0.0f64, |a, (_, c)| a.max(*c))
    };
    let growing = window(t_max / 10.0, t_max) > 1.1 * window(t_max / 100.0, t_max / 10.0) + 1e-12;
    let growth_ok = c0.is_finite() && !growing;
    let growth_name = if mode == Mode::Strong { "A2-growth" } else { "B2-growth" };
    entries.push(AuditEntry::new(
        growth_name,
        Verdict::from_bool(growth_ok),
        format!("C0 = {c0:.6e}"),
        if growth_ok { None } else { c0_witness },
    ));

    if mode == Mode::Strong {
        entries.push(audit_constraints(prob, cand, opts)?);
    }

    Ok(AssumptionReport {
        mode,
        gamma: opts.gamma,
        entries,
        c0,
        k: weights.k_estimate,
        majorant,
        majorant_integral,
        weights: Some(weights),
        distribution,
    })
}

/// Compares every sample with a tiny perturbation; a jump that does not
/// shrink with the perturbation marks a discontinuity.
fn continuity_probe(prob: &ControlProblem, t: f64, samples: &[Sample], mode: Mode) -> Option<Witness> {
    const EPS: f64 = 1e-9;
    let perturb_u = mode == Mode::Weak || prob.m > 0;
    let jump = |x: &[f64], u: &[f64], f0: f64, p0: &[f64], eps: f64| -> Option<f64> {
        let xs: Vec<f64> = x.iter().map(|v| v + eps * (1.0 + v.abs())).collect();
        let us: Vec<f64> = if perturb_u {
            u.iter()
                .enumerate()
                .map(|(i, v)| prob.controls.bounds[i].clamp(v + eps * (1.0 + v.abs())))
                .collect()
        } else {
            u.to_vec()
        };
        let (Ok(f1), Ok(p1)) = (prob.f_at(t, &xs, &us), prob.phi_at(t, &xs, &us)) else { return None };
        let fj = (f1 - f0).abs() / (1.0 + f0.abs());
        let pj = p0
            .iter()
            .zip(&p1)
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max);
        Some(fj.max(pj))
    };
    for (x, u) in samples.iter().take(8) {
        let (Ok(f0), Ok(p0)) = (prob.f_at(t, x, u), prob.phi_at(t, x, u)) else { continue };
        let Some(coarse) = jump(x, u, f0, &p0, EPS) else { continue };
        if coarse <= 1e-3 {
            continue;
        }
        // Steep but continuous data (ln x near 0) shrink with the step.
        let Some(fine) = jump(x, u, f0, &p0, EPS * 1e-3) else { continue };
        if fine > 1e-3 && fine > 0.5 * coarse {
            return Some(Witness {
                t,
                x: x.clone(),
                u: u.clone(),
                value: coarse,
            });
        }
    }
    None
}

/// `A3`: linear growth and Lipschitz bounds for the state constraints.
fn audit_constraints(prob: &ControlProblem, cand: &CandidateProcess, opts: &AuditOptions) -> Result<AuditEntry> {
    if prob.l() == 0 {
        return Ok(AuditEntry::new("A3", Verdict::NotApplicable, "no state constraints", None));
    }
    let knots = cand.grid.knots();
    let mut c = 0.0f64;
    let mut witness = None;
    for (k, &t) in knots.iter().enumerate() {
        let x = cand.x_knot(k).to_vec();
        let r = opts.gamma;
        let nu = prob.nu.eval(t);
        let pts: Vec<Vec<f64>> = (0..8)
            .map(|j| {
                let cpt = tube_point(k, j, 8, prob.n);
                cube_to_ball(&cpt, r).iter().zip(&x).map(|(d, v)| v + d).collect()
            })
            .chain(std::iter::once(x.clone()))
            .collect();
        for j in 0..prob.l() {
            let mut grads = Vec::with_capacity(pts.len());
            for p in &pts {
                let g = prob.g_at(j, t, p);
                let gx = prob.g_x_at(j, t, p);
                let (g, gx) = match (g, gx) {
                    (Ok(g), Ok(gx)) => (g, gx),
                    _ => {
                        return Ok(AuditEntry::new(
                            "A3",
                            Verdict::Fail,
                            format!("g{} undefined in the tube", j + 1),
                            Some(Witness {
                                t,
                                x: p.clone(),
                                u: vec![],
                                value: f64::INFINITY,
                            }),
                        ))
                    }
                };
                let v = (g.abs() / (1.0 + norm(p))).max(norm(&gx));
                if v > c {
                    c = v;
                    witness = Some(Witness {
                        t,
                        x: p.clone(),
                        u: vec![],
                        value: v,
                    });
                }
                grads.push(gx);
            }
            for a in 0..pts.len() {
                for b in a + 1..pts.len() {
                    let dx: Vec<f64> = pts[a].iter().zip(&pts[b]).map(|(p, q)| p - q).collect();
                    let dg: Vec<f64> = grads[a].iter().zip(&grads[b]).map(|(p, q)| p - q).collect();
                    let d = norm(&dx);
                    if d > 0.0 {
                        let v = nu * norm(&dg) / d;
                        if v > c {
                            c = v;
                            witness = Some(Witness {
                                t,
                                x: pts[a].clone(),
                                u: vec![],
                                value: v,
                            });
                        }
                    }
                }
            }
        }
    }
    let ok = c.is_finite();
    Ok(AuditEntry::new(
        "A3",
        Verdict::from_bool(ok),
        format!("constraint constant C0 = {c:.6e}"),
        if ok { None } else { witness },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientDiagnostic {
    pub integral: ImproperIntegral,
    pub convergence: Convergence,
    /// `(λ, (J(x*+λξ) - J(x*))/λ)` when the integral is finite.
    pub quotients: Vec<(f64, f64)>,
    /// Largest relative gap between the quotients and the integral.
    pub quotient_gap: Option<f64>,
}

/// Partial integrals of `∫ ω ⟨f_x(t, x*, u*), ξ⟩` and difference quotients of `J`
/// along `ξ` (bounded, `‖ξ‖∞ ≤ 1`).
pub fn check_objective_gradient<X>(prob: &ControlProblem, cand: &CandidateProcess, xi: X, steps: &[f64]) -> Result<GradientDiagnostic>
where
    X: Fn(f64) -> Vec<f64>,
{
    let omega = &prob.omega;
    let opts = ImproperOptions {
        pole: Some(omega.pole_exponent()),
        ..Default::default()
    };
    let grad = |t: f64| -> Result<f64> {
        let x = cand.x_at(t)?;
        let u = cand.u_at(t)?;
        let fx = prob.f_x_at(t, &x, &u)?;
        Ok(omega.eval(t) * fx.iter().zip(xi(t)).map(|(a, b)| a * b).sum::<f64>())
    };
    let integral = improper_integral(grad, &cand.grid, opts)?;
    let mut quotients = Vec::new();
    let mut gap = None;
    if integral.convergence == Convergence::Finite {
        let j = |lam: f64| -> Result<f64> {
            let r = improper_integral(
                |t| {
                    let mut x = cand.x_at(t)?;
                    for (xi_i, d) in x.iter_mut().zip(xi(t)) {
                        *xi_i += lam * d;
                    }
                    let u = cand.u_at(t)?;
                    Ok(omega.eval(t) * prob.f_at(t, &x, &u)?)
                },
                &cand.grid,
                opts,
            )?;
            Ok(r.value)
        };
        let j0 = j(0.0)?;
        let mut worst = 0.0f64;
        for &lam in steps {
            let q = (j(lam)? - j0) / lam;
            worst = worst.max((q - integral.value).abs() / integral.value.abs().max(1.0));
            quotients.push((lam, q));
        }
        if !steps.is_empty() {
            gap = Some(worst);
        }
    }
    Ok(GradientDiagnostic {
        convergence: integral.convergence,
        integral,
        quotients,
        quotient_gap: gap,
    })
}

/// Largest mixed error `|analytic - fd| / max(|analytic|, 1)` of every
/// Jacobian entry at `count` quasi-random tube points.
pub fn jacobian_fd_check(prob: &ControlProblem, cand: &CandidateProcess, gamma: f64, count: usize) -> Result<f64> {
    let (n, m) = (prob.n, prob.m);
    let knots = cand.grid.knots();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut attempt = 0usize;
    while checked < count && attempt < 20 * count {
        attempt += 1;
        let c = tube_point(attempt, 0, 1, n + m + 1);
        // Times concentrated towards the start, where the candidate varies most.
        let t = knots[knots.len() - 1] * c[0] * c[0];
        let k = cand.grid.knot_at_or_before(t);
        let x0 = cand.x_knot(k).to_vec();
        let u0 = cand.u_knot(k)?;
        let x: Vec<f64> = cube_to_ball(&c[1..=n], gamma).iter().zip(&x0).map(|(d, v)| v + d).collect();
        let u: Vec<f64> = (0..m)
            .map(|i| prob.controls.bounds[i].clamp(u0[i] + gamma * (2.0 * c[1 + n + i] - 1.0) * 0.5))
            .collect();
        let Ok(fx) = prob.f_x_at(t, &x, &u) else { continue };
        let Ok(fu) = prob.f_u_at(t, &x, &u) else { continue };
        let Ok(px) = prob.phi_x_at(t, &x, &u) else { continue };
        let Ok(pu) = prob.phi_u_at(t, &x, &u) else { continue };
        let mut errs = Vec::new();
        let central = |var: usize, is_u: bool, h: f64| -> Result<(f64, Vec<f64>)> {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            if is_u {
                up[var] += h;
                um[var] -= h;
            } else {
                xp[var] += h;
                xm[var] -= h;
            }
            let df = (prob.f_at(t, &xp, &up)? - prob.f_at(t, &xm, &um)?) / (2.0 * h);
            let pp = prob.phi_at(t, &xp, &up)?;
            let pm = prob.phi_at(t, &xm, &um)?;
            Ok((df, pp.iter().zip(&pm).map(|(a, b)| (a - b) / (2.0 * h)).collect()))
        };
        // Richardson extrapolation of central differences; the step is relative
        // so that steep data such as ln x near 0 are resolved.
        let fd = |var: usize, is_u: bool| -> Result<(f64, Vec<f64>)> {
            let z = if is_u { u[var] } else { x[var] };
            let h = 1e-3 * z.abs().max(1e-3);
            let (f1, p1) = central(var, is_u, h)?;
            let (f2, p2) = central(var, is_u, 0.5 * h)?;
            Ok(((4.0 * f2 - f1) / 3.0, p1.iter().zip(&p2).map(|(a, b)| (4.0 * b - a) / 3.0).collect()))
        };
        let mut ok = true;
        for j in 0..n {
            match fd(j, false) {
                Ok((df, dphi)) => {
                    errs.push((fx[j], df));
                    for i in 0..n {
                        errs.push((px[i * n + j], dphi[i]));
                    }
                }
                Err(_) => ok = false,
            }
        }
        for j in 0..m {
            match fd(j, true) {
                Ok((df, dphi)) => {
                    errs.push((fu[j], df));
                    for i in 0..n {
                        errs.push((pu[i * m + j], dphi[i]));
                    }
                }
                Err(_) => ok = false,
            }
        }
        if !ok {
            continue;
        }
        for (a, f) in errs {
            worst = worst.max((a - f).abs() / a.abs().max(1.0));
        }
        checked += 1;
    }
    if checked < count {
        return Err(Error::Config(format!(
            "only {checked} of {count} tube points lie in the domain of the problem"
        )));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_base_two() {
        assert_eq!(halton(1, 0), 0.5);
        assert_eq!(halton(2, 0), 0.25);
        assert_eq!(halton(3, 0), 0.75);
        assert!((halton(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ball_mapping_stays_inside() {
        for i in 1..200u64 {
            let c = [halton(i, 0), halton(i, 1), halton(i, 2)];
            let b = cube_to_ball(&c, 0.3);
            assert!(norm(&b) <= 0.3 + 1e-15);
        }
        let corner = cube_to_ball(&[1.0, 1.0], 2.0);
        assert!((norm(&corner) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn open_end_detection() {
        let ln = |k: i32| -(10f64.powi(-k)).ln();
        assert!(open_end_unbounded(&[ln(4), ln(8), ln(12)]));
        assert!(!open_end_unbounded(&[1.0 - 1e-4, 1.0 - 1e-8, 1.0 - 1e-12]));
    }
}
