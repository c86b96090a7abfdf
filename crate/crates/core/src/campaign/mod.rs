//! Verification campaigns: one statement, many sample points, one report.

pub mod config;
pub mod report;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bracket::BracketExpr;
use crate::deriv::{factorial, kth_derivative, DiffOpts};
use crate::error::{Error, Result};
use crate::field::{bracket_word, BoxDomain, VectorField};
use crate::flow::{bracket_curve, curve_velocity, IntegratorOpts, LocalCurve};
use crate::group::{verify_trotter_first, verify_trotter_second, MatAlgebra, TrotterReport};
use crate::tensor::{leibniz_check, lie_derivative_exact, pullback_curve_section, TensorSection};
pub use config::{CampaignConfig, Statement};
pub use report::{emit_report, write_report, Check, Format, Record, Report, Verdict};

/// Smallest base step tried before a point is given up as skipped.
pub const MIN_RETRY_STEP: f64 = 1e-4;

fn config_err(what: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(m) => Error::Config(format!("{what}: {m}")),
        other => Error::Config(format!("{what}: {other}")),
    }
}

/// Drops an optional `X1 =` style label.
pub fn strip_label(text: &str) -> &str {
    if let Some((lhs, rhs)) = text.split_once('=') {
        let lhs = lhs.trim();
        if !lhs.is_empty() && lhs.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return rhs;
        }
    }
    text
}

/// Explicit points, or `points` uniform draws from 90% of the sample box.
pub fn sample_points(cfg: &CampaignConfig) -> Result<Vec<Vec<f64>>> {
    let dim = cfg.dimension()?;
    let domain = cfg.domain_box()?;
    if let Some(list) = &cfg.point_list {
        for p in list {
            if p.len() != dim {
                return Err(Error::Config(format!("point {p:?} is not in R^{dim}")));
            }
            if !domain.contains(p) {
                return Err(Error::Config(format!("point {p:?} is outside the domain")));
            }
        }
        return Ok(list.clone());
    }
    let n = cfg
        .points
        .ok_or_else(|| Error::Config("give 'points' or 'point_list'".into()))?;
    let seed = cfg
        .seed
        .ok_or_else(|| Error::Config("random points need a 'seed'".into()))?;
    let sample = match &cfg.sample_box {
        Some(b) => CampaignConfig::box_from(b)?.intersect(&domain)?,
        None => domain,
    }
    .shrunk(0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            sample
                .lo
                .iter()
                .zip(&sample.hi)
                .map(|(a, b)| rng.random_range(*a..*b))
                .collect()
        })
        .collect())
}

struct Setup {
    domain: BoxDomain,
    fields: Vec<VectorField>,
    orders: Vec<u32>,
    iopts: IntegratorOpts,
    dopts: DiffOpts,
}

impl Setup {
    fn new(cfg: &CampaignConfig, min_fields: usize) -> Result<Self> {
        let domain = cfg.domain_box()?;
        if cfg.fields.len() < min_fields {
            return Err(Error::Config(format!(
                "{} needs at least {min_fields} field(s), got {}",
                cfg.statement()?,
                cfg.fields.len()
            )));
        }
        let fields = cfg
            .fields
            .iter()
            .enumerate()
            .map(|(i, text)| {
                VectorField::parse_on(strip_label(text), domain.clone())
                    .map_err(config_err(&format!("field {}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let orders = if cfg.orders.is_empty() {
            vec![1; fields.len()]
        } else {
            cfg.orders.clone()
        };
        if orders.len() != fields.len() {
            return Err(Error::Config(format!(
                "{} orders for {} fields",
                orders.len(),
                fields.len()
            )));
        }
        if orders.contains(&0) {
            return Err(Error::Config("leading orders start at 1".into()));
        }
        let iopts = cfg.integrator_opts();
        let exact = iopts.closed_form && fields.iter().all(|f| f.affine_part().is_some());
        Ok(Setup {
            domain,
            fields,
            orders,
            iopts,
            dopts: cfg.diff_opts(exact),
        })
    }

    fn total_order(&self) -> Result<usize> {
        let k = self.orders.iter().map(|&k| k as usize).sum();
        if k > crate::deriv::MAX_ORDER {
            return Err(Error::Config(format!(
                "total order {k} exceeds the supported maximum"
            )));
        }
        Ok(k)
    }

    fn curves(&self) -> Vec<LocalCurve> {
        self.fields
            .iter()
            .zip(&self.orders)
            .map(|(x, &k)| LocalCurve::flow(x, &self.iopts).reparam(k))
            .collect()
    }

    fn section(&self, cfg: &CampaignConfig) -> Result<TensorSection> {
        let text = cfg
            .section
            .as_deref()
            .ok_or_else(|| Error::Config("this statement needs a 'section'".into()))?;
        TensorSection::parse_on(text, self.domain.clone()).map_err(config_err("section"))
    }
}

fn bracket(cfg: &CampaignConfig, default: Option<&str>) -> Result<BracketExpr> {
    let text = cfg
        .bracket
        .as_deref()
        .or(default)
        .ok_or_else(|| Error::Config("no bracket given".into()))?;
    BracketExpr::parse(text).map_err(config_err("bracket"))
}

fn check_arity(b: &BracketExpr, n: usize) -> Result<()> {
    if b.len() != n {
        return Err(Error::Config(format!(
            "bracket {b} takes {} arguments, got {n}",
            b.len()
        )));
    }
    Ok(())
}

/// Runs `f` at `point`, halving the base step on locality failures.
fn attempt<F>(point: &[f64], order: usize, opts: &DiffOpts, f: &F) -> Vec<Record>
where
    F: Fn(&[f64], &DiffOpts) -> Result<Vec<Record>>,
{
    let mut o = opts.clone();
    loop {
        match f(point, &o) {
            Ok(records) => return records,
            Err(e) if e.is_locality() => {
                let next = o.step_for(order.max(1)) / 2.0;
                if next < MIN_RETRY_STEP {
                    return vec![Record::unusable(
                        point,
                        order,
                        Verdict::Skipped,
                        e.to_string(),
                    )];
                }
                o.h0 = Some(next);
            }
            Err(e) => return vec![Record::unusable(point, order, Verdict::Fail, e.to_string())],
        }
    }
}

fn sweep<F>(points: &[Vec<f64>], order: usize, opts: &DiffOpts, f: F) -> Vec<Vec<Record>>
where
    F: Fn(&[f64], &DiffOpts) -> Result<Vec<Record>> + Sync,
{
    points
        .par_iter()
        .map(|p| attempt(p, order, opts, &f))
        .collect()
}

/// Records for orders `1..k` (vanishing) and `k` (matched against `oracle`
/// after multiplying the estimate by `scale`).
fn leading_records<G>(
    p: &[f64],
    g: G,
    k: usize,
    oracle: Vec<f64>,
    scale: f64,
    o: &DiffOpts,
) -> Result<Vec<Record>>
where
    G: Fn(f64) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(k);
    for j in 1..k {
        let e = kth_derivative(&g, j, o)?;
        out.push(Record::vanish(
            p,
            j,
            e.value,
            o.vanish_tol,
            e.error_estimate,
        ));
    }
    let e = kth_derivative(&g, k, o)?;
    out.push(Record::compare(
        p,
        k,
        Check::Match,
        e.scaled(scale),
        oracle,
        o.match_tol,
        e.error_estimate * scale,
    ));
    Ok(out)
}

fn trotter_records(r: &TrotterReport, opts: &DiffOpts, compared_order: usize) -> Vec<Record> {
    let mut out: Vec<Record> = r
        .lower
        .iter()
        .map(|c| {
            let mut rec = Record::vanish(
                &[],
                c.order,
                vec![c.max_entry],
                opts.vanish_tol,
                c.error_estimate,
            );
            rec.residual = c.max_entry;
            rec
        })
        .collect();
    out.push(Record::compare(
        &[],
        compared_order,
        Check::Match,
        r.estimate.clone(),
        r.oracle.clone(),
        opts.match_tol,
        r.error_estimate,
    ));
    out
}

fn load_algebra(cfg: &CampaignConfig) -> Result<MatAlgebra> {
    match (&cfg.algebra, &cfg.algebra_file) {
        (Some(_), Some(_)) => Err(Error::Config(
            "give 'algebra' or 'algebra_file', not both".into(),
        )),
        (Some(name), None) => MatAlgebra::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown algebra preset '{name}'"))),
        (None, Some(path)) => MatAlgebra::load(path).map_err(config_err("algebra file")),
        (None, None) => Err(Error::Config("this statement needs an 'algebra'".into())),
    }
}

fn run_matrix(cfg: &CampaignConfig, st: Statement) -> Result<Vec<Vec<Record>>> {
    let b = bracket(cfg, None)?;
    let alg = load_algebra(cfg)?;
    let k = b.len();
    let names: Vec<String> = if cfg.generators.is_empty() {
        alg.basis.iter().take(k).map(|(n, _)| n.clone()).collect()
    } else {
        cfg.generators.clone()
    };
    check_arity(&b, names.len())?;
    let basis = names
        .iter()
        .map(|n| {
            alg.get(n)
                .cloned()
                .ok_or_else(|| Error::Config(format!("algebra {} has no element '{n}'", alg.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = cfg.diff_opts(true);
    let result = if st == Statement::Cor12First {
        verify_trotter_first(&b, &basis, &opts).map(|r| trotter_records(&r, &opts, k))
    } else {
        verify_trotter_second(&b, &basis, &opts).map(|r| trotter_records(&r, &opts, k - 1))
    };
    Ok(vec![match result {
        Ok(r) => r,
        Err(e @ (Error::OrderTooHigh(_) | Error::Arity { .. })) => {
            return Err(Error::Config(e.to_string()))
        }
        Err(e) => vec![Record::unusable(&[], k, Verdict::Fail, e.to_string())],
    }])
}

/// Runs a campaign. `Err` means the configuration itself is unusable;
/// numeric trouble at individual points ends up in the records.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Report> {
    let start = Instant::now();
    let st = cfg.statement()?;
    let groups = if st.is_matrix() {
        run_matrix(cfg, st)?
    } else {
        let points = sample_points(cfg)?;
        run_field_statement(cfg, st, &points)?
    };
    Ok(Report::assemble(
        st.name(),
        cfg.clone(),
        groups,
        start.elapsed().as_secs_f64(),
    ))
}

fn single_field(s: &Setup, st: Statement) -> Result<()> {
    if s.fields.len() != 1 {
        return Err(Error::Config(format!("{st} takes exactly one field")));
    }
    Ok(())
}

fn run_field_statement(
    cfg: &CampaignConfig,
    st: Statement,
    points: &[Vec<f64>],
) -> Result<Vec<Vec<Record>>> {
    match st {
        Statement::Theorem1 => {
            let s = Setup::new(cfg, 1)?;
            let b = bracket(cfg, None)?;
            check_arity(&b, s.fields.len())?;
            let k = s.total_order()?;
            let c = bracket_curve(&b, &s.curves())?;
            let exact = bracket_word(&b, &s.fields)?;
            Ok(sweep(points, k, &s.dopts, |p, o| {
                let oracle = exact.eval(p)?;
                leading_records(p, |t| c.eval(t, p), k, oracle, 1.0 / factorial(k), o)
            }))
        }
        Statement::Theorem10 | Statement::Lemma9 => {
            let s = Setup::new(cfg, 1)?;
            let b = if st == Statement::Lemma9 {
                let b = bracket(cfg, Some("[1,2]"))?;
                if b.len() != 2 || b.depth() != 1 {
                    return Err(Error::Config(
                        "lemma9 is about a single bracket [1,2]".into(),
                    ));
                }
                b
            } else {
                bracket(cfg, None)?
            };
            check_arity(&b, s.fields.len())?;
            let k = s.total_order()?;
            let sec = s.section(cfg)?;
            let c = bracket_curve(&b, &s.curves())?;
            let lie = lie_derivative_exact(&bracket_word(&b, &s.fields)?, &sec)?;
            // theorem10 normalizes by 1/k!; lemma9 compares the raw derivative
            let (oracle_scale, est_scale) = if st == Statement::Lemma9 {
                (factorial(k), 1.0)
            } else {
                (1.0, 1.0 / factorial(k))
            };
            Ok(sweep(points, k, &s.dopts, |p, o| {
                let oracle: Vec<f64> = lie.eval(p)?.iter().map(|v| v * oracle_scale).collect();
                let g = pullback_curve_section(&c, &sec, p);
                leading_records(p, g, k, oracle, est_scale, o)
            }))
        }
        Statement::Lemma6 => {
            let s = Setup::new(cfg, 1)?;
            single_field(&s, st)?;
            let k = s.total_order()?;
            let sec = s.section(cfg)?;
            let c = s.curves().remove(0);
            let lie = lie_derivative_exact(&s.fields[0], &sec)?;
            Ok(sweep(points, k, &s.dopts, |p, o| {
                let oracle: Vec<f64> = lie.eval(p)?.iter().map(|v| v * factorial(k)).collect();
                leading_records(p, pullback_curve_section(&c, &sec, p), k, oracle, 1.0, o)
            }))
        }
        Statement::Lemma7 => {
            let s = Setup::new(cfg, 1)?;
            let kmax = cfg.order.unwrap_or(3);
            if kmax == 0 || kmax > crate::deriv::MAX_ORDER {
                return Err(Error::Config(format!("order {kmax} is out of range")));
            }
            let sec = s.section(cfg)?;
            let curves = s.curves();
            Ok(sweep(points, kmax, &s.dopts, |p, o| {
                (1..=kmax)
                    .map(|k| {
                        let r = leibniz_check(&curves, &sec, p, k, o)?;
                        Ok(Record::compare(
                            p,
                            k,
                            Check::Match,
                            r.lhs,
                            r.rhs,
                            o.match_tol,
                            r.error_estimate,
                        ))
                    })
                    .collect()
            }))
        }
        Statement::Lemma8 => {
            let s = Setup::new(cfg, 1)?;
            single_field(&s, st)?;
            let k = s.total_order()?;
            let base = s.curves().remove(0);
            // hide the structure so that the inverse is found by Newton
            let dim = base.dim();
            let c = LocalCurve::from_map(dim, move |t, x| base.eval(t, x), None);
            let inv = c.invert();
            Ok(sweep(points, k, &s.dopts, |p, o| {
                let fwd = kth_derivative(|t| c.eval(t, p), k, o)?;
                let oracle: Vec<f64> = fwd.value.iter().map(|v| -v).collect();
                let mut recs = leading_records(p, |t| inv.eval(t, p), k, oracle, 1.0, o)?;
                if let Some(last) = recs.last_mut() {
                    last.error_estimate += fwd.error_estimate;
                }
                Ok(recs)
            }))
        }
        Statement::Prop11 => {
            let s = Setup::new(cfg, 1)?;
            single_field(&s, st)?;
            let k = s.total_order()?;
            let c = s.curves().remove(0);
            let x = s.fields[0].clone();
            Ok(sweep(points, k, &s.dopts, |p, o| {
                let dt = o.step_for(1);
                let v = |t: f64| curve_velocity(&c, t, p, dt);
                let oracle: Vec<f64> = x.eval(p)?.iter().map(|v| v * factorial(k)).collect();
                let mut out = Vec::new();
                for j in 0..k - 1 {
                    let e = kth_derivative(v, j, o)?;
                    out.push(Record::vanish(
                        p,
                        j,
                        e.value,
                        o.vanish_tol,
                        e.error_estimate,
                    ));
                }
                let e = kth_derivative(v, k - 1, o)?;
                out.push(Record::compare(
                    p,
                    k - 1,
                    Check::Match,
                    e.value,
                    oracle,
                    o.match_tol,
                    e.error_estimate,
                ));
                Ok(out)
            }))
        }
        Statement::Cor12First | Statement::Cor12Second => unreachable!("matrix statements"),
    }
}
