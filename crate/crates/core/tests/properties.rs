use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use commflow::bracket::{matrix_commutator, BracketExpr};
use commflow::campaign::{CampaignConfig, Check, Record, Report, Verdict};
use commflow::deriv::{factorial, kth_derivative, leading_derivative, DiffOpts, Leading};
use commflow::field::{lie_bracket, BoxDomain, ScalarExpr, VectorField};
use commflow::flow::{commutator_curve, FlowField, IntegratorOpts, LocalCurve};
use commflow::group::{mat_exp, verify_trotter_first, verify_trotter_second, MatAlgebra};
use commflow::tensor::{
    leibniz_check, lie_derivative_exact, pullback_at, pullback_curve_section, Composed,
    LocalDiffeo, MapDiffeo, TensorSection, TensorType, VectorBundleFunctor,
};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Quadratic polynomial in `dim` variables with coefficients in `(-c, c)`.
fn poly(dim: usize, c: f64) -> impl Strategy<Value = ScalarExpr> {
    let n = 1 + dim + dim * (dim + 1) / 2;
    prop::collection::vec(-c..c, n).prop_map(move |coef| {
        let mut monomials = vec![ScalarExpr::one()];
        for i in 0..dim {
            monomials.push(ScalarExpr::var(i));
        }
        for i in 0..dim {
            for j in i..dim {
                monomials.push(ScalarExpr::var(i).mul(&ScalarExpr::var(j)));
            }
        }
        monomials
            .iter()
            .zip(coef)
            .fold(ScalarExpr::zero(), |acc, (m, c)| {
                acc.add(&m.mul(&ScalarExpr::constant(c)))
            })
    })
}

fn quad_field(dim: usize, c: f64) -> impl Strategy<Value = VectorField> {
    prop::collection::vec(poly(dim, c), dim)
        .prop_map(move |cs| VectorField::new(cs, BoxDomain::cube(dim, 10.0)).unwrap())
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.8f64..0.8, dim)
}

fn arb_bracket() -> impl Strategy<Value = BracketExpr> {
    let leaf = Just(BracketExpr::leaf(0));
    leaf.prop_recursive(4, 12, 2, |inner| {
        (inner.clone(), inner).prop_map(|(l, r)| BracketExpr::node(l, r))
    })
    .prop_map(|b| b.normalized())
}

/// Inserts random whitespace between the tokens of a canonical bracket.
fn spaced(b: &BracketExpr, gaps: &[u8]) -> String {
    let mut out = String::new();
    for (i, ch) in b.to_string().chars().enumerate() {
        let pad = gaps.get(i).copied().unwrap_or(0) as usize % 3;
        out.push_str(&" \t "[..pad]);
        out.push(ch);
    }
    out
}

/// Runs `f` with the step halved after each locality error, as campaigns do;
/// rejects the case once the step drops below 1e-4.
fn local<T>(
    opts: &DiffOpts,
    order: usize,
    f: impl Fn(&DiffOpts) -> commflow::Result<T>,
) -> Result<T, TestCaseError> {
    let mut h = opts.step_for(order);
    loop {
        match f(&opts.clone().with_h0(h)) {
            Err(e) if e.is_locality() && h / 2.0 >= 1e-4 => h /= 2.0,
            Err(e) if e.is_locality() => return Err(TestCaseError::reject(e.to_string())),
            r => return r.map_err(|e| TestCaseError::fail(e.to_string())),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_reformat_is_idempotent(b in arb_bracket(), gaps in prop::collection::vec(any::<u8>(), 64)) {
        let text = spaced(&b, &gaps);
        let parsed = BracketExpr::parse(&text).unwrap();
        let canon = parsed.to_string();
        prop_assert_eq!(BracketExpr::parse(&canon).unwrap().to_string(), canon);
        prop_assert_eq!(parsed, b);
    }

    #[test]
    fn bracket_evaluation_is_pure(b in arb_bracket(), seed in prop::collection::vec(-1.0f64..1.0, 12 * 4)) {
        let k = b.len();
        let mats: Vec<DMatrix<f64>> = (0..k)
            .map(|i| DMatrix::from_row_slice(2, 2, &seed[4 * i..4 * i + 4]))
            .collect();
        let a = b.eval(&mats, matrix_commutator).unwrap();
        let c = b.eval(&mats, matrix_commutator).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn polynomial_curves_are_exact(coef in prop::collection::vec(-3.0f64..3.0, 8), k in 1usize..=4) {
        // a fourth-order central stencil is exact through degree k + 3
        let c = coef[..=k + 3].to_vec();
        let curve = |t: f64| Ok(vec![c.iter().enumerate().map(|(i, a)| a * t.powi(i as i32)).sum()]);
        let opts = DiffOpts { levels: 1, ..DiffOpts::closed_form() };
        let d = kth_derivative(curve, k, &opts).unwrap();
        let exact = c[k] * factorial(k);
        prop_assert!((d.value[0] - exact).abs() < 1e-12 * exact.abs().max(1.0), "{} vs {exact}", d.value[0]);
    }

    #[test]
    fn derivative_scaling_law(w in prop::collection::vec(0.2f64..1.5, 3), a_big in any::<bool>(), k in 1usize..=4) {
        let a = if a_big { 2.0 } else { 0.5 };
        let c = |t: f64| vec![(w[0] * t).sin() + (w[1] * t).cos(), (w[2] * t).exp()];
        let opts = DiffOpts::closed_form();
        let base = kth_derivative(|t| Ok(c(t)), k, &opts).unwrap();
        let scaled = kth_derivative(|t| Ok(c(a * t)), k, &opts).unwrap();
        let want: Vec<f64> = base.value.iter().map(|b| a.powi(k as i32) * b).collect();
        let norm = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = max_abs_diff(&scaled.value, &want);
        prop_assert!(diff <= 1e-8 * norm.max(1.0), "{:?} vs {want:?}", scaled.value);
    }

    #[test]
    fn exp_homomorphism(entries in prop::collection::vec(-1.0f64..1.0, 9), s in -1.0f64..1.0, t in -1.0f64..1.0) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let lhs = mat_exp(&a, t).unwrap() * mat_exp(&a, s).unwrap();
        let rhs = mat_exp(&a, s + t).unwrap();
        prop_assert!((lhs - rhs).abs().max() < 1e-13);
    }

    #[test]
    fn verdict_soundness(kinds in prop::collection::vec(0u8..3, 0..20)) {
        let groups: Vec<Vec<Record>> = kinds
            .iter()
            .map(|k| {
                let mut r = Record::compare(&[0.0], 1, Check::Match, vec![0.0], vec![0.0], 1.0, 0.0);
                r.verdict = match k { 0 => Verdict::Pass, 1 => Verdict::Fail, _ => Verdict::Skipped };
                vec![r]
            })
            .collect();
        let n = groups.len();
        let report = Report::assemble("t", CampaignConfig::default(), groups, 0.0);
        if report.verdict == Verdict::Pass {
            prop_assert!(report.records.iter().all(|r| r.verdict != Verdict::Fail));
            prop_assert!(report.points_passed >= (0.8 * n as f64).ceil() as usize);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn curves_start_at_identity(x in quad_field(2, 0.5), y in quad_field(2, 0.5), pts in prop::collection::vec(point(2), 50)) {
        let o = IntegratorOpts::numeric();
        let a = LocalCurve::flow(&x, &o);
        let b = LocalCurve::flow(&y, &o).reparam(2);
        let curves = [
            a.clone(),
            b.clone(),
            a.invert(),
            commutator_curve(&a, &b).unwrap(),
            LocalCurve::flow(&field("-x2, x1"), &IntegratorOpts::default()),
        ];
        for c in &curves {
            for p in &pts {
                prop_assert!(max_abs_diff(&c.eval(0.0, p).unwrap(), p) < 1e-12);
            }
        }
    }

    #[test]
    fn flow_semigroup(x in quad_field(2, 0.5), p in point(2), s in -0.4f64..0.4, t in -0.4f64..0.4) {
        let o = IntegratorOpts::numeric();
        let ff = FlowField::new(x);
        let two = ff.flow(s, &ff.flow(t, &p, &o).unwrap(), &o).unwrap();
        let one = ff.flow(s + t, &p, &o).unwrap();
        let scale = one.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&two, &one) < 10.0 * (o.abs_tol + o.rel_tol * scale), "{two:?} {one:?}");
    }

    #[test]
    fn inverse_curve_has_negated_field(x in quad_field(2, 0.5), p in point(2), k in 1u32..=3) {
        let c = LocalCurve::flow(&x, &IntegratorOpts::numeric()).reparam(k);
        let inv = c.invert();
        let (order, field) = inv.declared().unwrap();
        prop_assert_eq!(order, k as usize);
        let opts = DiffOpts::default();
        match local(&opts, 4, |o| leading_derivative(|t| inv.eval(t, &p), 4, o))? {
            Leading::Found { order, estimate, .. } => {
                prop_assert_eq!(order, k as usize);
                let want: Vec<f64> = field.eval(&p).unwrap().iter().map(|v| v * factorial(order)).collect();
                let neg: Vec<f64> = x.eval(&p).unwrap().iter().map(|v| -v * factorial(order)).collect();
                prop_assert!(max_abs_diff(&estimate.value, &want) < 1e-5);
                prop_assert!(max_abs_diff(&want, &neg) < 1e-15);
            }
            Leading::AllVanish { norms } => {
                // a field vanishing at p has no leading derivative there
                prop_assert!(x.eval(&p).unwrap().iter().all(|v| v.abs() < 1e-5), "{norms:?}");
            }
        }
    }

    #[test]
    fn self_commutator_is_identity(x in quad_field(2, 0.5), p in point(2)) {
        let a = LocalCurve::flow(&x, &IntegratorOpts::numeric());
        let c = commutator_curve(&a, &a).unwrap();
        for k in 1..=4 {
            let d = local(&DiffOpts::default(), k, |o| kth_derivative(|t| c.eval(t, &p), k, o))?;
            prop_assert!(d.norm() < 1e-5, "k={k}: {}", d.norm());
        }
    }

    #[test]
    fn second_order_commutator_identity(x in quad_field(2, 0.5), y in quad_field(2, 0.5), p in point(2)) {
        let o = IntegratorOpts::numeric();
        let c = commutator_curve(&LocalCurve::flow(&x, &o), &LocalCurve::flow(&y, &o)).unwrap();
        let opts = DiffOpts::default();
        let d1 = local(&opts, 1, |o| kth_derivative(|t| c.eval(t, &p), 1, o))?;
        prop_assert!(d1.norm() < opts.vanish_tol);
        let d2 = local(&opts, 2, |o| kth_derivative(|t| c.eval(t, &p), 2, o))?;
        let want = lie_bracket(&x, &y).unwrap().eval(&p).unwrap();
        prop_assert!(max_abs_diff(&d2.scaled(0.5), &want) < opts.match_tol);
    }

    #[test]
    fn pullback_functoriality(f in quad_field(2, 0.2), g in quad_field(2, 0.2), s in section(), p in point(2)) {
        // near-identity maps x + small quadratic
        let phi = MapDiffeo::new(near_identity(&f));
        let psi = MapDiffeo::new(near_identity(&g));
        let comp = Composed { outer: &phi, inner: &psi };
        let direct = pullback_at(&comp, &s, &p).unwrap();
        let (y, j) = psi.apply_with_jacobian(&p).unwrap();
        let inv = j.clone().try_inverse().unwrap();
        let inner = pullback_at(&phi, &s, &y).unwrap();
        let two_step = VectorBundleFunctor::pull_fiber(&s.tensor_type(), &inner, &j, &inv);
        prop_assert!(max_abs_diff(&direct, &two_step) < 1e-9);
    }

    #[test]
    fn pullback_leading_order(x in quad_field(2, 0.5), s in section(), p in point(2), k in 1u32..=3) {
        let c = LocalCurve::flow(&x, &IntegratorOpts::numeric()).reparam(k);
        let g = pullback_curve_section(&c, &s, &p);
        let opts = DiffOpts::default();
        for j in 1..k as usize {
            prop_assert!(local(&opts, j, |o| kth_derivative(&g, j, o))?.norm() < opts.vanish_tol);
        }
        let d = local(&opts, k as usize, |o| kth_derivative(&g, k as usize, o))?;
        let want: Vec<f64> = lie_derivative_exact(&x, &s)
            .unwrap()
            .eval(&p)
            .unwrap()
            .iter()
            .map(|v| v * factorial(k as usize))
            .collect();
        prop_assert!(max_abs_diff(&d.value, &want) < 1e-5, "{:?} {want:?}", d.value);
    }

    #[test]
    fn binomial_leibniz_rule(x in quad_field(2, 0.3), y in quad_field(2, 0.3), s in section(), p in point(2), k in 1usize..=3) {
        let o = IntegratorOpts::numeric();
        let curves = [LocalCurve::flow(&x, &o), LocalCurve::flow(&y, &o)];
        let opts = DiffOpts::default();
        let r = local(&opts, k, |d| leibniz_check(&curves, &s, &p, k, d))?;
        prop_assert!(r.residual < opts.match_tol, "{r:?}");
    }

    #[test]
    fn trotter_formulas_agree(alg in 0usize..3, i in 0usize..3, j in 0usize..3, l in 0usize..3, triple in any::<bool>()) {
        let algebra = [MatAlgebra::so3(), MatAlgebra::sl2(), MatAlgebra::heisenberg()][alg].clone();
        let m = |n: usize| algebra.basis[n].1.clone();
        let (b, basis) = if triple {
            (BracketExpr::parse("[[1,2],3]").unwrap(), vec![m(i), m(j), m(l)])
        } else {
            (BracketExpr::parse("[1,2]").unwrap(), vec![m(i), m(j)])
        };
        let opts = DiffOpts::closed_form();
        let first = verify_trotter_first(&b, &basis, &opts).unwrap();
        let second = verify_trotter_second(&b, &basis, &opts).unwrap();
        prop_assert!(first.pass && second.pass, "{first:?} {second:?}");
        prop_assert!(max_abs_diff(&first.estimate, &second.estimate) < 2.0 * opts.match_tol);
    }
}

fn field(text: &str) -> VectorField {
    VectorField::parse(text, 2).unwrap()
}

fn near_identity(f: &VectorField) -> VectorField {
    let comps = f
        .components()
        .iter()
        .enumerate()
        .map(|(i, c)| ScalarExpr::var(i).add(c))
        .collect();
    VectorField::new(comps, f.domain().clone()).unwrap()
}

fn section() -> impl Strategy<Value = TensorSection> {
    prop_oneof![Just((0, 0)), Just((1, 0)), Just((0, 1)), Just((1, 1))].prop_flat_map(|(p, q)| {
        let ty = TensorType::new(p, q);
        prop::collection::vec(poly(2, 1.0), ty.fiber_dim(2))
            .prop_map(move |cs| TensorSection::new(ty, cs, BoxDomain::cube(2, 10.0)).unwrap())
    })
}
