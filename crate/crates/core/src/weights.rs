//! Weight functions `ν`, `η` and distribution functions `ω`.
//!
//! A [`WeightSpec`] carries an evaluator, an optional analytic derivative and
//! an optional analytic tail bound `B(T) ≥ ∫_T^∞ w`. The property checks below
//! sample these on a grid; limits at infinity use the shared decade test in
//! [`crate::limits`].

use std::fmt;
use std::sync::Arc;

use crate::config::{Mode, Verdict};
use crate::error::{Error, Result};
use crate::expr::{self, Expr, Point, Scope, Var};
use crate::integrate::grid::{Grid, T_FLOOR};
use crate::integrate::quadrature::{improper_integral, Convergence, ImproperIntegral, ImproperOptions};
use crate::limits::decay_test;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative step of the central difference used when no derivative is known.
pub const FD_REL_STEP: f64 = 6e-6;

#[derive(Clone)]
enum Kind {
    /// `e^{-a t}`
    ExpDecay { rate: f64 },
    /// `(1 + t)^{-a}`
    Power { a: f64 },
    /// `t^{k-1} e^{-t^k}`
    Weibull { k: f64 },
    Expr {
        expr: Expr,
        deriv: Expr,
        tail: Option<Expr>,
        pole: Option<f64>,
    },
    Custom {
        f: ScalarFn,
        df: Option<ScalarFn>,
        tail: Option<ScalarFn>,
        pole: Option<f64>,
    },
}

#[derive(Clone)]
pub struct WeightSpec {
    pub label: String,
    kind: Kind,
}

impl fmt::Debug for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightSpec").field("label", &self.label).finish()
    }
}

/// Weights compare by label; closures cannot be compared.
impl PartialEq for WeightSpec {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl WeightSpec {
    pub fn exp_decay(rate: f64) -> Self {
        WeightSpec {
            label: format!("exp_decay {rate}"),
            kind: Kind::ExpDecay { rate },
        }
    }

    pub fn power(a: f64) -> Self {
        WeightSpec {
            label: format!("power {a}"),
            kind: Kind::Power { a },
        }
    }

    pub fn weibull(k: f64) -> Self {
        WeightSpec {
            label: format!("weibull {k}"),
            kind: Kind::Weibull { k },
        }
    }

    /// Expression in `t`; the derivative is taken symbolically.
    pub fn from_expr(expr: Expr, tail: Option<Expr>, pole: Option<f64>, label: impl Into<String>) -> Self {
        let deriv = expr.diff(Var::T);
        WeightSpec {
            label: label.into(),
            kind: Kind::Expr { expr, deriv, tail, pole },
        }
    }

    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        WeightSpec {
            label: label.into(),
            kind: Kind::Custom {
                f: Arc::new(f),
                df: None,
                tail: None,
                pole: None,
            },
        }
    }

    /// Attaches an analytic derivative to a custom weight.
    pub fn with_derivative(mut self, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        if let Kind::Custom { df: slot, .. } = &mut self.kind {
            *slot = Some(Arc::new(df));
        }
        self
    }

    /// Attaches a tail bound to a custom weight.
    pub fn with_tail(mut self, tail: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        if let Kind::Custom { tail: slot, .. } = &mut self.kind {
            *slot = Some(Arc::new(tail));
        }
        self
    }

    pub fn with_pole(mut self, beta: f64) -> Self {
        match &mut self.kind {
            Kind::Custom { pole, .. } | Kind::Expr { pole, .. } => *pole = Some(beta),
            _ => {}
        }
        self
    }

    /// Power exponent `β` of the singularity `w ~ t^β` at 0 (0 when regular).
    pub fn pole_exponent(&self) -> f64 {
        match &self.kind {
            Kind::Weibull { k } if *k < 1.0 => k - 1.0,
            Kind::Expr { pole, .. } | Kind::Custom { pole, .. } => pole.unwrap_or(0.0),
            _ => 0.0,
        }
    }

    fn clamp(&self, t: f64) -> f64 {
        if self.pole_exponent() < 0.0 {
            t.max(T_FLOOR)
        } else {
            t
        }
    }

    /// Value at `t`; expression domain errors are propagated.
    pub fn try_eval(&self, t: f64) -> Result<f64> {
        let t = self.clamp(t);
        Ok(match &self.kind {
            Kind::ExpDecay { rate } => (-rate * t).exp(),
            Kind::Power { a } => (1.0 + t).powf(-a),
            Kind::Weibull { k } => t.powf(k - 1.0) * (-t.powf(*k)).exp(),
            Kind::Expr { expr, .. } => expr.eval(&Point::time(t))?,
            Kind::Custom { f, .. } => f(t),
        })
    }

    /// Value at `t`, NaN where an expression is undefined.
    pub fn eval(&self, t: f64) -> f64 {
        self.try_eval(t).unwrap_or(f64::NAN)
    }

    /// `ln w(t)`, accurate where `w` underflows for closed-form families.
    pub fn ln_eval(&self, t: f64) -> f64 {
        let t = self.clamp(t);
        match &self.kind {
            Kind::ExpDecay { rate } => -rate * t,
            Kind::Power { a } => -a * (1.0 + t).ln(),
            Kind::Weibull { k } => (k - 1.0) * t.ln() - t.powf(*k),
            _ => self.eval(t).ln(),
        }
    }

    pub fn has_analytic_derivative(&self) -> bool {
        !matches!(&self.kind, Kind::Custom { df: None, .. })
    }

    /// Step used by the finite-difference fallback at `t`.
    pub fn fd_step(&self, t: f64) -> f64 {
        FD_REL_STEP * t.abs().max(1.0)
    }

    /// Derivative at `t`: analytic when known, else a central difference with
    /// step [`WeightSpec::fd_step`] (one-sided near 0).
    pub fn deriv(&self, t: f64) -> f64 {
        let tc = self.clamp(t);
        match &self.kind {
            Kind::ExpDecay { rate } => -rate * (-rate * tc).exp(),
            Kind::Power { a } => -a * (1.0 + tc).powf(-a - 1.0),
            Kind::Weibull { k } => {
                let w = tc.powf(k - 1.0) * (-tc.powf(*k)).exp();
                w * ((k - 1.0) / tc - k * tc.powf(k - 1.0))
            }
            Kind::Expr { deriv, .. } => deriv.eval(&Point::time(tc)).unwrap_or(f64::NAN),
            Kind::Custom { df: Some(df), .. } => df(tc),
            Kind::Custom { df: None, .. } => self.fd_derivative(tc),
        }
    }

    /// Finite-difference derivative regardless of whether an analytic one exists.
    pub fn fd_derivative(&self, t: f64) -> f64 {
        let h = self.fd_step(t);
        let floor = if self.pole_exponent() < 0.0 { T_FLOOR } else { 0.0 };
        if t - h >= floor {
            (self.eval(t + h) - self.eval(t - h)) / (2.0 * h)
        } else {
            (-3.0 * self.eval(t) + 4.0 * self.eval(t + h) - self.eval(t + 2.0 * h)) / (2.0 * h)
        }
    }

    /// Declared analytic bound on `∫_T^∞ w`.
    pub fn tail_bound(&self, t: f64) -> Option<f64> {
        match &self.kind {
            Kind::ExpDecay { rate } if *rate > 0.0 => Some((-rate * t).exp() / rate),
            Kind::Power { a } if *a > 1.0 => Some((1.0 + t).powf(1.0 - a) / (a - 1.0)),
            Kind::Weibull { k } if *k > 0.0 => Some((-t.powf(*k)).exp() / k),
            Kind::Expr { tail: Some(e), .. } => e.eval(&Point::time(t)).ok(),
            Kind::Custom { tail: Some(f), .. } => Some(f(t)),
            _ => None,
        }
    }

    /// Closed-form `∫_0^t w` for the built-in families.
    pub fn head_mass(&self, t: f64) -> Option<f64> {
        match &self.kind {
            Kind::ExpDecay { rate } if *rate == 0.0 => Some(t),
            Kind::ExpDecay { rate } => Some(-(-rate * t).exp_m1() / rate),
            Kind::Power { a } if *a == 1.0 => Some(t.ln_1p()),
            Kind::Power { a } => Some(-((1.0 - a) * t.ln_1p()).exp_m1() / (a - 1.0)),
            Kind::Weibull { k } if *k > 0.0 => Some(-(-t.powf(*k)).exp_m1() / k),
            _ => None,
        }
    }

    pub fn declares_tail(&self) -> bool {
        self.tail_bound(1.0).is_some()
    }
}

/// Parses a weight literal: `exp_decay a`, `power a`, `weibull k`,
/// `expr(<e>) [tail(<e>)] [pole(<β>)]`, or a bare expression in `t`.
pub fn parse_weight(src: &str, scope: &Scope, line: usize, column: usize) -> Result<WeightSpec> {
    let text = src.trim();
    let lead = src.len() - src.trim_start().len();
    let col = column + lead;
    let tscope = scope.time_only();
    let number = |arg: &str, offset: usize| -> Result<f64> {
        let e = expr::parse_at(arg, &tscope, line, col + offset)?;
        if e.depends_on(Var::T) {
            return Err(Error::Syntax {
                line,
                column: col + offset,
                message: "weight parameter must be constant".into(),
            });
        }
        e.eval(&Point::time(0.0))
    };
    for (kw, make) in [
        ("exp_decay", WeightSpec::exp_decay as fn(f64) -> WeightSpec),
        ("power", WeightSpec::power),
        ("weibull", WeightSpec::weibull),
    ] {
        if let Some(rest) = text.strip_prefix(kw) {
            if rest.starts_with(char::is_whitespace) {
                let v = number(rest, kw.len())?;
                if kw == "weibull" && !(v > 0.0) {
                    return Err(Error::Config(format!("Weibull shape must be positive, got {v}")));
                }
                let mut w = make(v);
                w.label = text.to_string();
                return Ok(w);
            }
        }
    }
    if text.starts_with("expr(") {
        let mut rest = text;
        let mut offset = 0;
        let mut body = None;
        let mut tail = None;
        let mut pole = None;
        while !rest.is_empty() {
            let (kw, inner, consumed) = take_call(rest).ok_or_else(|| Error::Syntax {
                line,
                column: col + offset,
                message: "expected expr(...), tail(...) or pole(...)".into(),
            })?;
            let inner_col = col + offset + kw.len() + 1;
            match kw {
                "expr" => body = Some(expr::parse_at(inner, &tscope, line, inner_col)?),
                "tail" => tail = Some(expr::parse_at(inner, &tscope, line, inner_col)?),
                "pole" => pole = Some(number(inner, offset + kw.len() + 1)?),
                other => {
                    return Err(Error::UnknownIdentifier {
                        name: other.to_string(),
                        line,
                        column: col + offset,
                    })
                }
            }
            let trimmed = rest[consumed..].trim_start();
            offset += rest.len() - trimmed.len();
            rest = trimmed;
        }
        let body = body.ok_or_else(|| Error::Syntax {
            line,
            column: col,
            message: "missing expr(...)".into(),
        })?;
        return Ok(WeightSpec::from_expr(body, tail, pole, text));
    }
    let e = expr::parse_at(text, &tscope, line, col)?;
    Ok(WeightSpec::from_expr(e, None, None, text))
}

/// Splits `name(inner)rest` with balanced parentheses.
fn take_call(s: &str) -> Option<(&str, &str, usize)> {
    let open = s.find('(')?;
    let name = s[..open].trim();
    let mut depth = 0;
    for (i, c) in s[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    let close = open + i;
                    return Some((name, &s[open + 1..close], close + 1));
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyEntry {
    pub name: String,
    pub verdict: Verdict,
    /// `(t, measured value)` pairs; non-empty whenever `verdict` is `Fail`.
    pub witnesses: Vec<(f64, f64)>,
    pub note: String,
}

impl PropertyEntry {
    fn new(name: &str, verdict: Verdict, witnesses: Vec<(f64, f64)>, note: impl Into<String>) -> Self {
        PropertyEntry {
            name: name.to_string(),
            verdict,
            witnesses,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub label: String,
    pub entries: Vec<PropertyEntry>,
    /// `max |ẇ| / w` over the grid.
    pub k_estimate: f64,
    /// Finite-difference step at `t = 1` when no analytic derivative exists.
    pub fd_step: Option<f64>,
    /// `∫_0^∞ w` for distribution checks.
    pub integral: Option<f64>,
}

impl PropertyReport {
    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.verdict)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.verdict.is_acceptable())
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyEntry> {
        self.entries.iter().filter(|e| e.verdict.is_fail())
    }
}

fn verdict_of(c: Convergence) -> Verdict {
    match c {
        Convergence::Finite => Verdict::Pass,
        Convergence::Divergent => Verdict::Fail,
        Convergence::Undetermined => Verdict::Undetermined,
    }
}

fn integral_witness(r: &ImproperIntegral) -> Vec<(f64, f64)> {
    match r.witness {
        Some(t) => {
            let k = r.times.partition_point(|&s| s <= t).saturating_sub(1);
            vec![(t, r.cumulative[k])]
        }
        None => Vec::new(),
    }
}

/// Samples the weight-function properties on `grid`.
///
/// Strong mode reports `E1`–`E5`; weak mode `F1`–`F4` (there is no decay
/// requirement on `ν` for weak extrema).
pub fn check_weight_properties(nu: &WeightSpec, grid: &Grid, mode: Mode, tol: f64) -> Result<PropertyReport> {
    let knots = grid.knots();
    let prefix = match mode {
        Mode::Strong => "E",
        Mode::Weak => "F",
    };
    let name = |i: u8| format!("{prefix}{i}");

    let values: Vec<f64> = knots.iter().map(|&t| nu.eval(t)).collect();
    for (&t, &v) in knots.iter().zip(&values) {
        if !(v > 0.0) {
            return Err(Error::NonPositiveWeight {
                label: nu.label.clone(),
                t,
                value: v,
            });
        }
    }
    let mut entries = vec![PropertyEntry::new(
        &name(1),
        Verdict::Pass,
        vec![],
        "positive at every grid point",
    )];

    let mut mono = Vec::new();
    for k in 1..knots.len() {
        if values[k] > values[k - 1] * (1.0 + 1e-12) {
            mono.push((knots[k], values[k] - values[k - 1]));
            if mono.len() >= 3 {
                break;
            }
        }
    }
    entries.push(PropertyEntry::new(
        &name(2),
        Verdict::from_bool(mono.is_empty()),
        mono,
        "nonincreasing on the grid",
    ));

    let opts = ImproperOptions {
        pole: Some(nu.pole_exponent()),
        ..Default::default()
    };
    let mass = improper_integral(|t| Ok(nu.eval(t)), grid, opts)?;
    let var = improper_integral(|t| Ok(nu.deriv(t).abs()), grid, ImproperOptions::default())?;
    let w11 = match (mass.convergence, var.convergence) {
        (Convergence::Finite, Convergence::Finite) => Verdict::Pass,
        (Convergence::Divergent, _) | (_, Convergence::Divergent) => Verdict::Fail,
        _ => Verdict::Undetermined,
    };
    let mut w11_witness = integral_witness(&mass);
    w11_witness.extend(integral_witness(&var));
    entries.push(PropertyEntry::new(
        &name(3),
        w11,
        w11_witness,
        format!("int nu = {:.6e}, int |nu'| = {:.6e}", mass.value, var.value),
    ));

    let ratios: Vec<f64> = knots
        .iter()
        .zip(&values)
        .map(|(&t, &v)| nu.deriv(t).abs() / v)
        .collect();
    let (k_arg, k_estimate) = ratios
        .iter()
        .enumerate()
        .fold((0, 0.0), |(ia, a), (i, &r)| if r > a { (i, r) } else { (ia, a) });
    let t_max = grid.t_max();
    let window_max = |lo: f64, hi: f64| {
        knots
            .iter()
            .zip(&ratios)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    };
    let k_prev = window_max(t_max / 100.0, t_max / 10.0);
    let k_last = window_max(t_max / 10.0, t_max);
    let growing = k_last > 1.1 * k_prev + 1e-12;
    let huge = !k_estimate.is_finite() || k_estimate > 1e8;
    let e4 = Verdict::from_bool(!growing && !huge);
    let e4_witness = if e4.is_fail() {
        vec![(knots[k_arg], k_estimate)]
    } else {
        vec![]
    };
    entries.push(PropertyEntry::new(
        &name(4),
        e4,
        e4_witness,
        format!("K estimate {k_estimate:.6e}"),
    ));

    if mode == Mode::Strong {
        let d = decay_test(|t| Ok(t * nu.eval(t)), t_max, tol)?;
        let witness = d.witness().into_iter().collect();
        entries.push(PropertyEntry::new(
            "E5",
            d.verdict,
            witness,
            format!(
                "t*nu(t) at T/100, T/10, T: {:.3e}, {:.3e}, {:.3e} (tol {:e})",
                d.samples[0].1, d.samples[1].1, d.samples[2].1, tol
            ),
        ));
    }

    Ok(PropertyReport {
        label: nu.label.clone(),
        entries,
        k_estimate,
        fd_step: (!nu.has_analytic_derivative()).then(|| nu.fd_step(1.0)),
        integral: None,
    })
}

/// Nonnegativity and integrability of a distribution function `ω`.
///
/// `growth_tol` is the relative growth per decade of the partial integral
/// that counts as divergence.
pub fn check_distribution(omega: &WeightSpec, grid: &Grid, growth_tol: f64) -> Result<PropertyReport> {
    let knots = grid.knots();
    let negative: Vec<(f64, f64)> = knots
        .iter()
        .map(|&t| (t, omega.eval(t)))
        .filter(|(_, v)| !(*v >= 0.0))
        .take(3)
        .collect();
    let opts = ImproperOptions {
        pole: Some(omega.pole_exponent()),
        growth_tol,
        ..Default::default()
    };
    let r = improper_integral(|t| Ok(omega.eval(t)), grid, opts)?;
    let t_max = grid.t_max();
    let (verdict, value, note) = match (omega.tail_bound(t_max), r.convergence) {
        (_, Convergence::Divergent) => (Verdict::Fail, f64::INFINITY, "partial integrals keep growing".to_string()),
        (Some(b), _) => (
            Verdict::Pass,
            r.partial + b,
            format!("int_0^T = {:.6e}, declared tail {:.3e}", r.partial, b),
        ),
        (None, Convergence::Finite) => (
            Verdict::Pass,
            r.value,
            format!("int_0^T = {:.6e}, extrapolated tail {:.3e}", r.partial, r.tail),
        ),
        (None, Convergence::Undetermined) => return Err(Error::MissingTailBound(omega.label.clone())),
    };
    let mut witnesses = integral_witness(&r);
    let verdict = if negative.is_empty() {
        verdict
    } else {
        witnesses.extend(negative.iter().copied());
        Verdict::Fail
    };
    let note = if negative.is_empty() {
        note
    } else {
        format!("negative values; {note}")
    };
    Ok(PropertyReport {
        label: omega.label.clone(),
        entries: vec![PropertyEntry::new("E6", verdict, witnesses, note)],
        k_estimate: f64::NAN,
        fd_step: None,
        integral: Some(value),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub p: f64,
    pub q: f64,
    pub verdict: Verdict,
    /// Exponent of `ν^{1-q} ω^q` at 0.
    pub pole_exponent: f64,
    pub integral: ImproperIntegral,
}

impl DominanceReport {
    pub fn residual(&self) -> f64 {
        self.integral.value
    }
}

/// Default horizon of the dominance integral.
pub const DOMINANCE_HORIZON: f64 = 100.0;

/// Legacy coupling `ν^{1-q} ∈ L_1(ω^q)`, on the default grid.
pub fn check_dominance(nu: &WeightSpec, omega: &WeightSpec, p: f64) -> Result<DominanceReport> {
    check_dominance_on(nu, omega, p, &Grid::standard(DOMINANCE_HORIZON, 4096)?)
}

pub fn check_dominance_on(nu: &WeightSpec, omega: &WeightSpec, p: f64, grid: &Grid) -> Result<DominanceReport> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    let q = p / (p - 1.0);
    let pole = q * omega.pole_exponent() + (1.0 - q) * nu.pole_exponent();
    let integrand = |t: f64| {
        let lw = omega.ln_eval(t);
        let ln = nu.ln_eval(t);
        if lw == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        Ok(((1.0 - q) * ln + q * lw).exp())
    };
    let opts = ImproperOptions {
        pole: Some(pole),
        ..Default::default()
    };
    let integral = improper_integral(integrand, grid, opts)?;
    Ok(DominanceReport {
        p,
        q,
        verdict: verdict_of(integral.convergence),
        pole_exponent: pole,
        integral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_grid() -> Grid {
        Grid::log_uniform(50.0, 2048).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
        (f(a) + f(b) + inner) * h / 3.0
    }

    #[test]
    fn head_mass_matches_quadrature_and_tail() {
        for w in [WeightSpec::exp_decay(0.7), WeightSpec::power(2.5), WeightSpec::power(1.0), WeightSpec::weibull(0.5)] {
            let (a, b) = (1.0, 3.0);
            let exact = w.head_mass(b).unwrap() - w.head_mass(a).unwrap();
            let num = simpson(|t| w.eval(t), a, b, 4000);
            assert!((exact - num).abs() < 1e-10, "{w}: {exact} vs {num}");
            if let Some(tail) = w.tail_bound(b) {
                let total = w.head_mass(b).unwrap() + tail;
                let total_a = w.head_mass(a).unwrap() + w.tail_bound(a).unwrap();
                assert!((total - total_a).abs() < 1e-12);
            }
        }
        assert_eq!(WeightSpec::exp_decay(2.0).head_mass(0.0), Some(0.0));
    }

    #[test]
    fn exponential_weight_has_all_properties() {
        let r = check_weight_properties(&WeightSpec::exp_decay(1.0), &default_grid(), Mode::Strong, 1e-2).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert!((r.k_estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_weight_fails_decay() {
        let r = check_weight_properties(&WeightSpec::power(1.0), &default_grid(), Mode::Strong, 1e-2).unwrap();
        assert_eq!(r.verdict("E5"), Some(Verdict::Fail));
        let e5 = r.entries.iter().find(|e| e.name == "E5").unwrap();
        assert!(!e5.witnesses.is_empty());
        assert!(e5.witnesses[0].1 > 0.8);
        let weak = check_weight_properties(&WeightSpec::power(1.0), &default_grid(), Mode::Weak, 1e-2).unwrap();
        assert_eq!(weak.verdict("E5"), None);
        assert_eq!(weak.verdict("F2"), Some(Verdict::Pass));
    }

    #[test]
    fn polynomial_weight_passes_with_k_near_a() {
        let r = check_weight_properties(&WeightSpec::power(3.0), &default_grid(), Mode::Strong, 1e-2).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert!((r.k_estimate - 3.0).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_weight_is_an_error() {
        let w = WeightSpec::custom("1 - t", |t| 1.0 - t);
        let err = check_weight_properties(&w, &default_grid(), Mode::Strong, 1e-2).unwrap_err();
        assert!(matches!(err, Error::NonPositiveWeight { .. }));
    }

    #[test]
    fn growing_log_derivative_fails_e4() {
        let w = WeightSpec::custom("exp(-t^2/100)", |t| (-t * t / 100.0).exp());
        let r = check_weight_properties(&w, &default_grid(), Mode::Weak, 1e-2).unwrap();
        assert_eq!(r.verdict("F4"), Some(Verdict::Fail));
        assert!(r.fd_step.is_some());
    }

    #[test]
    fn distributions() {
        let g = Grid::standard(50.0, 2048).unwrap();
        let r = check_distribution(&WeightSpec::exp_decay(2.0), &g, 1e-2).unwrap();
        assert_eq!(r.verdict("E6"), Some(Verdict::Pass));
        assert!((r.integral.unwrap() - 0.5).abs() < 1e-12);

        let one = parse_weight("expr(1)", &Scope::time(), 1, 1).unwrap();
        let r = check_distribution(&one, &g, 1e-2).unwrap();
        assert_eq!(r.verdict("E6"), Some(Verdict::Fail));
        assert!(!r.entries[0].witnesses.is_empty());

        let r = check_distribution(&WeightSpec::weibull(0.5), &g, 1e-2).unwrap();
        assert_eq!(r.verdict("E6"), Some(Verdict::Pass));
        // s = sqrt(t): the integral is 2 * int e^{-s} ds = 2.
        assert!((r.integral.unwrap() - 2.0).abs() < 1e-6, "{:?}", r.integral);
    }

    #[test]
    fn slowly_converging_distribution_without_tail_is_an_error() {
        let w = WeightSpec::custom("1/(1+t)", |t| 1.0 / (1.0 + t));
        let g = Grid::standard(50.0, 512).unwrap();
        match check_distribution(&w, &g, 10.0) {
            Err(Error::MissingTailBound(_)) => {}
            other => panic!("expected MissingTailBound, got {other:?}"),
        }
    }

    #[test]
    fn dominance_examples() {
        let w = WeightSpec::weibull(0.5);
        let nu = WeightSpec::power(2.0);
        assert_eq!(check_dominance(&nu, &w, 3.0).unwrap().verdict, Verdict::Pass);
        assert_eq!(check_dominance(&nu, &w, 2.0).unwrap().verdict, Verdict::Fail);
        let om = WeightSpec::exp_decay(2.0);
        assert_eq!(check_dominance(&WeightSpec::exp_decay(3.9), &om, 2.0).unwrap().verdict, Verdict::Pass);
        assert_eq!(check_dominance(&WeightSpec::exp_decay(4.0), &om, 2.0).unwrap().verdict, Verdict::Fail);
        assert_eq!(check_dominance(&WeightSpec::exp_decay(4.5), &om, 2.0).unwrap().verdict, Verdict::Fail);
        assert!(matches!(check_dominance(&nu, &w, 1.0), Err(Error::InvalidExponent(_))));
    }

    #[test]
    fn dominance_integral_value_matches_closed_form() {
        // nu^{-1} omega^2 = e^{(a-4)t}, integral 1/(4-a).
        let r = check_dominance(&WeightSpec::exp_decay(3.0), &WeightSpec::exp_decay(2.0), 2.0).unwrap();
        assert!((r.integral.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parse_literals() {
        let s = Scope::time().with_consts(&[("rho".into(), 0.5)]);
        let w = parse_weight("exp_decay rho", &s, 1, 1).unwrap();
        assert!((w.eval(2.0) - (-1.0f64).exp()).abs() < 1e-15);
        let w = parse_weight("expr(exp(-t)/2) tail(exp(-t)/2) pole(0)", &s, 1, 1).unwrap();
        assert_eq!(w.tail_bound(0.0), Some(0.5));
        assert!((w.deriv(0.0) + 0.5).abs() < 1e-15);
        let w = parse_weight("weibull 0.5", &s, 1, 1).unwrap();
        assert_eq!(w.pole_exponent(), -0.5);
        assert!(matches!(parse_weight("expr(exp(-q*t))", &s, 3, 9), Err(Error::UnknownIdentifier { line: 3, .. })));
        assert!(matches!(parse_weight("expr(1) bogus(2)", &s, 1, 1), Err(Error::UnknownIdentifier { .. })));
    }

    #[test]
    fn weibull_tail_bound_is_exact() {
        let w = WeightSpec::weibull(0.5);
        let g = Grid::standard(400.0, 4096).unwrap();
        let full = improper_integral(|t| Ok(w.eval(t)), &g, ImproperOptions { pole: Some(-0.5), ..Default::default() }).unwrap();
        let k = g.knot_at_or_before(9.0);
        let t = g.knots()[k];
        let tail_numeric = full.value - full.cumulative[k];
        assert!((tail_numeric - w.tail_bound(t).unwrap()).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn fd_derivative_consistent(a in 0.1f64..5.0, t in 0.0f64..40.0) {
            for w in [WeightSpec::exp_decay(a), WeightSpec::power(a)] {
                let h = w.fd_step(t);
                // |w''| ≤ a(a+1) for both families on t ≥ 0.
                let bound = 10.0 * h * a * (a + 1.0) + 1e-9;
                prop_assert!((w.deriv(t) - w.fd_derivative(t)).abs() <= bound);
            }
        }

        #[test]
        fn dominance_monotone_in_p(k in 0.3f64..0.9) {
            let omega = WeightSpec::weibull(k);
            let nu = WeightSpec::power(2.0);
            let ps = [2.0, 2.5, 3.0, 4.0];
            let passes: Vec<bool> = ps.iter().map(|&p| check_dominance(&nu, &omega, p).unwrap().verdict == Verdict::Pass).collect();
            for w in passes.windows(2) {
                prop_assert!(!w[0] || w[1]);
            }
        }
    }

    #[test]
    fn verdicts_stable_under_refinement() {
        for w in [WeightSpec::exp_decay(1.0), WeightSpec::power(1.0), WeightSpec::power(3.0)] {
            let a = check_weight_properties(&w, &Grid::log_uniform(50.0, 1024).unwrap(), Mode::Strong, 1e-2).unwrap();
            let b = check_weight_properties(&w, &Grid::log_uniform(50.0, 2048).unwrap(), Mode::Strong, 1e-2).unwrap();
            for (x, y) in a.entries.iter().zip(&b.entries) {
                if x.verdict != Verdict::Undetermined {
                    assert_eq!(x.verdict, y.verdict, "{} {}", w, x.name);
                }
            }
        }
    }
}
