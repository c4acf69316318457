//! Problem-definition files.
//!
//! ```text
//! [params]      named constants usable in every expression
//! [problem]     name, n, m, x0, sense, p_exp
//! [dynamics]    phi1 = ..., optional Jacobian overrides phi1_x1, phi1_u1
//! [objective]   f = ..., omega = <weight>, optional f_x1 / f_u1
//! [space]       nu = <weight>, eta = <weight>
//! [controls]    u1 = [lo, hi] with ( ) for open ends and inf; convex = true
//! [constraints] g1 = ...
//! [candidate]   x1, u1, p1 closed forms in t; lambda0
//! ```

use std::collections::BTreeMap;

use super::{Bound, ClosedForm, ControlProblem, ControlSet};
use crate::error::{Error, Result};
use crate::expr::{self, Expr, Point, Scope, Var};
use crate::weights::{parse_weight, WeightSpec};

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    /// 1-based column of the first character of `value`.
    column: usize,
}

const SECTIONS: [&str; 8] = [
    "params",
    "problem",
    "dynamics",
    "objective",
    "space",
    "controls",
    "constraints",
    "candidate",
];

fn split_sections(src: &str) -> Result<BTreeMap<&'static str, Vec<Entry>>> {
    let mut out: BTreeMap<&'static str, Vec<Entry>> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let text = match raw.find('#') {
            Some(k) => &raw[..k],
            None => raw,
        };
        let trimmed = text.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            let sec = SECTIONS.iter().find(|s| **s == name).ok_or_else(|| Error::Syntax {
                line,
                column: raw.find('[').unwrap() + 1,
                message: format!("unknown section [{name}]"),
            })?;
            current = Some(sec);
            out.entry(sec).or_default();
            continue;
        }
        let sec = current.ok_or_else(|| Error::Syntax {
            line,
            column: 1,
            message: "entry outside of any section".into(),
        })?;
        let eq = text.find('=').ok_or_else(|| Error::Syntax {
            line,
            column: text.len() - text.trim_start().len() + 1,
            message: "expected `key = value`".into(),
        })?;
        let key = text[..eq].trim().to_string();
        let rest = &text[eq + 1..];
        let lead = rest.len() - rest.trim_start().len();
        out.entry(sec).or_default().push(Entry {
            key,
            value: rest.trim().to_string(),
            line,
            column: eq + 2 + lead,
        });
    }
    Ok(out)
}

fn syntax(e: &Entry, message: impl Into<String>) -> Error {
    Error::Syntax {
        line: e.line,
        column: e.column,
        message: message.into(),
    }
}

fn constant(e: &Entry, text: &str, offset: usize, scope: &Scope) -> Result<f64> {
    let ex = expr::parse_at(text, &scope.time_only(), e.line, e.column + offset)?;
    if ex.depends_on(Var::T) {
        return Err(syntax(e, "expected a constant"));
    }
    ex.eval(&Point::time(0.0))
}

fn indexed(key: &str, prefix: &str) -> Option<usize> {
    key.strip_prefix(prefix)?.parse::<usize>().ok().filter(|&i| i >= 1)
}

/// `phi2_x1` → `(2, 'x', 1)`.
fn jacobian_key(key: &str, prefix: &str) -> Option<(usize, char, usize)> {
    let rest = key.strip_prefix(prefix)?;
    let (head, var) = rest.split_once('_')?;
    let row = if prefix == "f" {
        if !head.is_empty() {
            return None;
        }
        1
    } else {
        head.parse().ok()?
    };
    let kind = var.chars().next()?;
    let col = var[1..].parse().ok()?;
    Some((row, kind, col))
}

fn parse_bound(e: &Entry, scope: &Scope) -> Result<Bound> {
    let v = e.value.trim();
    let empty = || Error::EmptyControlSet(format!("{} declared empty on line {}", e.key, e.line));
    let (lo_open, hi_open) = match (v.chars().next(), v.chars().last()) {
        (Some(l @ ('[' | '(')), Some(r @ (']' | ')'))) if v.len() >= 2 => (l == '(', r == ')'),
        _ => return Err(syntax(e, "expected an interval such as [0, 1] or (0, inf)")),
    };
    let inner = &v[1..v.len() - 1];
    if inner.trim().is_empty() {
        return Err(empty());
    }
    let (a, b) = inner
        .split_once(',')
        .ok_or_else(|| syntax(e, "interval needs two comma-separated ends"))?;
    let end = |s: &str, offset: usize| -> Result<f64> {
        match s.trim() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => constant(e, other, offset, scope),
        }
    };
    let lo = end(a, 1)?;
    let hi = end(b, 2 + a.len())?;
    let bound = Bound {
        lo,
        hi,
        lo_open: lo_open || lo.is_infinite(),
        hi_open: hi_open || hi.is_infinite(),
    };
    if bound.is_empty() {
        return Err(empty());
    }
    Ok(bound)
}

/// Parses a problem file with its own `[params]` values.
pub fn parse_problem(src: &str) -> Result<ControlProblem> {
    parse_problem_with(src, &[])
}

/// Parses a problem file, replacing declared `[params]` values by `overrides`.
pub fn parse_problem_with(src: &str, overrides: &[(String, f64)]) -> Result<ControlProblem> {
    let sections = split_sections(src)?;
    let get = |name: &str| sections.get(name).map(Vec::as_slice).unwrap_or(&[]);

    let mut params: Vec<(String, f64)> = Vec::new();
    for e in get("params") {
        let scope = Scope::time().with_consts(&params);
        let v = constant(e, &e.value, 0, &scope)?;
        params.push((e.key.clone(), v));
    }
    for (name, v) in overrides {
        match params.iter_mut().find(|(k, _)| k == name) {
            Some(slot) => slot.1 = *v,
            None => return Err(Error::Config(format!("parameter `{name}` is not declared in [params]"))),
        }
    }
    // Later parameters may depend on overridden ones.
    if !overrides.is_empty() {
        let mut recomputed: Vec<(String, f64)> = Vec::new();
        for e in get("params") {
            let v = match overrides.iter().find(|(k, _)| *k == e.key) {
                Some((_, v)) => *v,
                None => constant(e, &e.value, 0, &Scope::time().with_consts(&recomputed))?,
            };
            recomputed.push((e.key.clone(), v));
        }
        params = recomputed;
    }
    let cscope = Scope::time().with_consts(&params);

    let mut name = String::from("problem");
    let mut n_decl = None;
    let mut m_decl = None;
    let mut x0 = None;
    let mut maximize = false;
    let mut p_exp = 2.0;
    for e in get("problem") {
        match e.key.as_str() {
            "name" => name = e.value.clone(),
            "n" => n_decl = Some(e.value.parse::<usize>().map_err(|_| syntax(e, "n must be a positive integer"))?),
            "m" => m_decl = Some(e.value.parse::<usize>().map_err(|_| syntax(e, "m must be a positive integer"))?),
            "x0" => {
                let mut vals = Vec::new();
                let mut offset = 0;
                for part in e.value.split(',') {
                    vals.push(constant(e, part, offset, &cscope)?);
                    offset += part.len() + 1;
                }
                x0 = Some(vals);
            }
            "sense" => {
                maximize = match e.value.as_str() {
                    "min" => false,
                    "max" => true,
                    other => return Err(syntax(e, format!("sense must be min or max, got `{other}`"))),
                }
            }
            "p_exp" => p_exp = constant(e, &e.value, 0, &cscope)?,
            other => return Err(syntax(e, format!("unknown key `{other}` in [problem]"))),
        }
    }
    let x0 = x0.ok_or_else(|| Error::Config("[problem] must declare x0".into()))?;
    let n = n_decl.unwrap_or(x0.len());
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries but n = {n}", x0.len())));
    }
    if !(p_exp >= 1.0) {
        return Err(Error::InvalidExponent(p_exp));
    }

    let control_entries: Vec<&Entry> = get("controls").iter().filter(|e| e.key != "convex").collect();
    let m = match m_decl {
        Some(m) => m,
        None if control_entries.is_empty() => {
            return Err(Error::EmptyControlSet("no [controls] declared".into()));
        }
        None => control_entries.len(),
    };
    let scope = Scope::new(n, m).with_consts(&params);
    let expr_at = |e: &Entry, sc: &Scope| expr::parse_at(&e.value, sc, e.line, e.column);

    let mut bounds: Vec<Option<Bound>> = vec![None; m];
    let mut convex = true;
    for e in get("controls") {
        if e.key == "convex" {
            convex = match e.value.as_str() {
                "true" => true,
                "false" => false,
                _ => return Err(syntax(e, "convex must be true or false")),
            };
            continue;
        }
        let i = indexed(&e.key, "u").ok_or_else(|| syntax(e, format!("unknown control `{}`", e.key)))?;
        if i > m {
            return Err(Error::DimensionMismatch(format!("{} declared but m = {m}", e.key)));
        }
        bounds[i - 1] = Some(parse_bound(e, &cscope)?);
    }
    if m == 0 || bounds.iter().all(Option::is_none) {
        return Err(Error::EmptyControlSet("no [controls] declared".into()));
    }
    let bounds = bounds
        .into_iter()
        .enumerate()
        .map(|(i, b)| b.ok_or_else(|| Error::DimensionMismatch(format!("no bounds for u{}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    let mut controls = ControlSet::new(bounds)?;
    controls.convex = convex;

    let mut phi: Vec<Option<Expr>> = vec![None; n];
    let mut phi_over = Vec::new();
    for e in get("dynamics") {
        if let Some(i) = indexed(&e.key, "phi") {
            if i > n {
                return Err(Error::DimensionMismatch(format!("{} declared but n = {n}", e.key)));
            }
            phi[i - 1] = Some(expr_at(e, &scope)?);
        } else if let Some(j) = jacobian_key(&e.key, "phi") {
            phi_over.push((j, expr_at(e, &scope)?, e));
        } else {
            return Err(syntax(e, format!("unknown key `{}` in [dynamics]", e.key)));
        }
    }
    let phi = phi
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::DimensionMismatch(format!("missing phi{} for n = {n}", i + 1))))
        .collect::<Result<Vec<_>>>()?;

    let mut f = None;
    let mut omega = None;
    let mut f_over = Vec::new();
    for e in get("objective") {
        match e.key.as_str() {
            "f" => f = Some(expr_at(e, &scope)?),
            "omega" => omega = Some(parse_weight(&e.value, &cscope, e.line, e.column)?),
            k => match jacobian_key(k, "f") {
                Some(j) => f_over.push((j, expr_at(e, &scope)?, e)),
                None => return Err(syntax(e, format!("unknown key `{k}` in [objective]"))),
            },
        }
    }
    let f = f.ok_or_else(|| Error::Config("[objective] must declare f".into()))?;
    let omega: WeightSpec = omega.ok_or_else(|| Error::Config("[objective] must declare omega".into()))?;

    let mut nu = None;
    let mut eta = None;
    for e in get("space") {
        match e.key.as_str() {
            "nu" => nu = Some(parse_weight(&e.value, &cscope, e.line, e.column)?),
            "eta" => eta = Some(parse_weight(&e.value, &cscope, e.line, e.column)?),
            "p_exp" => p_exp = constant(e, &e.value, 0, &cscope)?,
            other => return Err(syntax(e, format!("unknown key `{other}` in [space]"))),
        }
    }
    let nu = nu.ok_or_else(|| Error::Config("[space] must declare nu".into()))?;

    let mut prob = ControlProblem::new(name, f, phi, controls, x0, omega, nu)?.with_p_exp(p_exp);
    prob.eta = eta;
    prob.params = params.clone();

    for ((row, kind, col), ex, e) in phi_over {
        let slot = match kind {
            'x' if row <= n && col >= 1 && col <= n => &mut prob.phi_x[row - 1][col - 1],
            'u' if row <= n && col >= 1 && col <= m => &mut prob.phi_u[row - 1][col - 1],
            _ => return Err(Error::DimensionMismatch(format!("override `{}` out of range", e.key))),
        };
        *slot = ex;
    }
    for ((_, kind, col), ex, e) in f_over {
        let slot = match kind {
            'x' if col >= 1 && col <= n => &mut prob.f_x[col - 1],
            'u' if col >= 1 && col <= m => &mut prob.f_u[col - 1],
            _ => return Err(Error::DimensionMismatch(format!("override `{}` out of range", e.key))),
        };
        *slot = ex;
    }

    let xscope = Scope::new(n, 0).with_consts(&params);
    let mut g = Vec::new();
    for e in get("constraints") {
        let j = indexed(&e.key, "g").ok_or_else(|| syntax(e, format!("unknown key `{}` in [constraints]", e.key)))?;
        if j != g.len() + 1 {
            return Err(syntax(e, format!("constraints must be numbered consecutively, expected g{}", g.len() + 1)));
        }
        g.push(expr_at(e, &xscope)?);
    }
    prob = prob.with_constraints(g)?;

    let cand = get("candidate");
    if !cand.is_empty() {
        let tscope = cscope.time_only();
        let mut xs: Vec<Option<Expr>> = vec![None; n];
        let mut us: Vec<Option<Expr>> = vec![None; m];
        let mut ps: Vec<Option<Expr>> = vec![None; n];
        let mut lambda0 = 1.0;
        for e in cand {
            if e.key == "lambda0" {
                lambda0 = constant(e, &e.value, 0, &cscope)?;
                continue;
            }
            let (slot, i) = if let Some(i) = indexed(&e.key, "x") {
                (&mut xs, i)
            } else if let Some(i) = indexed(&e.key, "u") {
                (&mut us, i)
            } else if let Some(i) = indexed(&e.key, "p") {
                (&mut ps, i)
            } else {
                return Err(syntax(e, format!("unknown key `{}` in [candidate]", e.key)));
            };
            if i > slot.len() {
                return Err(Error::DimensionMismatch(format!("{} out of range", e.key)));
            }
            slot[i - 1] = Some(expr_at(e, &tscope)?);
        }
        let all = |v: Vec<Option<Expr>>, what: &str| {
            v.into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::DimensionMismatch(format!("[candidate] must give every {what} component")))
        };
        let p = if ps.iter().all(Option::is_none) {
            None
        } else {
            Some(all(ps, "p")?)
        };
        prob = prob.with_candidate(ClosedForm {
            x: all(xs, "x")?,
            u: all(us, "u")?,
            p,
            lambda0,
        })?;
    }

    if maximize {
        prob = prob.maximize();
    }
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Sense;

    const REGULATOR: &str = "\
# linear-quadratic regulator
[problem]
name = regulator
n = 1
m = 1
x0 = 2

[dynamics]
phi1 = 2*x1 + u1

[objective]
f = (x1^2 + u1^2)/2
omega = exp_decay 2

[space]
nu = exp_decay 4.5

[controls]
u1 = (-inf, inf)
";

    #[test]
    fn parses_regulator() {
        let p = parse_problem(REGULATOR).unwrap();
        assert_eq!((p.n, p.m), (1, 1));
        assert_eq!(p.x0, vec![2.0]);
        assert!(!p.controls.bounds[0].is_bounded());
        assert_eq!(p.phi_x_at(0.0, &[1.0], &[0.0]).unwrap(), vec![2.0]);
        assert_eq!(p.nu.label, "exp_decay 4.5");
    }

    #[test]
    fn empty_controls_rejected() {
        let src = REGULATOR.replace("u1 = (-inf, inf)", "u1 = []");
        assert!(matches!(parse_problem(&src), Err(Error::EmptyControlSet(_))));
        let src = REGULATOR.replace("u1 = (-inf, inf)", "u1 = [1, 0]");
        assert!(matches!(parse_problem(&src), Err(Error::EmptyControlSet(_))));
        let src = REGULATOR.replace("[controls]\nu1 = (-inf, inf)\n", "");
        assert!(matches!(parse_problem(&src), Err(Error::EmptyControlSet(_))));
    }

    #[test]
    fn unknown_identifier_is_located() {
        let src = REGULATOR.replace("phi1 = 2*x1 + u1", "phi1 = 2*x2 + u1");
        match parse_problem(&src) {
            Err(Error::UnknownIdentifier { name, line, column }) => {
                assert_eq!(name, "x2");
                assert_eq!(line, 9);
                assert_eq!(column, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let src = REGULATOR.replace("x0 = 2", "x0 = 2, 3");
        assert!(matches!(parse_problem(&src), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn params_max_sense_and_candidate() {
        let src = "\
[params]
rho = 0.5
[problem]
x0 = 1
sense = max
[dynamics]
phi1 = u1*x1
[objective]
f = ln((1 - u1)*x1)
omega = exp_decay rho
[space]
nu = exp_decay 1.5
eta = exp_decay 0.1
[controls]
u1 = [0, 1)
[candidate]
x1 = exp((1 - rho)*t)
u1 = 1 - rho
p1 = exp(-t)/rho
";
        let p = parse_problem(src).unwrap();
        assert_eq!(p.sense, Sense::Max);
        assert!((p.f_at(0.0, &[1.0], &[0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(p.controls.bounds[0].hi_open);
        let c = p.candidate.as_ref().unwrap();
        assert_eq!(c.u[0].eval(&Point::time(3.0)).unwrap(), 0.5);
        let q = parse_problem_with(src, &[("rho".into(), 0.25)]).unwrap();
        assert_eq!(q.candidate.unwrap().u[0].eval(&Point::time(0.0)).unwrap(), 0.75);
        assert!(matches!(parse_problem_with(src, &[("zeta".into(), 1.0)]), Err(Error::Config(_))));
    }

    #[test]
    fn jacobian_override() {
        let src = REGULATOR.replace("phi1 = 2*x1 + u1", "phi1 = 2*x1 + u1\nphi1_x1 = 3");
        let p = parse_problem(&src).unwrap();
        assert_eq!(p.phi_x_at(0.0, &[1.0], &[0.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn syntax_error_position() {
        let src = REGULATOR.replace("f = (x1^2 + u1^2)/2", "f = (x1^2 + u1^2/2");
        assert!(matches!(parse_problem(&src), Err(Error::Syntax { line: 12, .. })));
    }
}
