//! Property tests for the structural invariants: interval combinatorics,
//! averaging identities, solution algebra, kernel mass, and the exact
//! three-term decomposition of the branch-increment estimates.

use num_traits::{One, Zero};
use proptest::prelude::*;
use tree_harmonic::datum::Polynomial;
use tree_harmonic::dirichlet::{solve_characteristic, BetaParam, Solution};
use tree_harmonic::dtn::{
    gamma_sweep, gradient, kernel_finite_integral, successor_index_vector,
    successor_midpoint_offsets, NormalVector,
};
use tree_harmonic::{
    containment_level, BoundaryDatum, Branch, Q, QuadConfig, TreeConfig, Vertex,
};

fn q(n: i64, d: i64) -> Q {
    Q::new(n.into(), d.into())
}

fn cfg(m: u32) -> TreeConfig {
    TreeConfig::new(m).unwrap()
}

prop_compose! {
    fn arb_vertex()(m in 2u32..=5)(m in Just(m), digits in prop::collection::vec(0u32..m, 0..7)) -> Vertex {
        Vertex::new(cfg(m), digits).unwrap()
    }
}

prop_compose! {
    fn arb_rational01()(num in 0i64..=64, den in 1i64..=64) -> Q {
        let a = q(num.min(den), den);
        if a > Q::one() { Q::one() } else { a }
    }
}

prop_compose! {
    fn arb_subcritical_beta()(num in 0i64..45) -> BetaParam {
        BetaParam::from_ints(num, 100).unwrap()
    }
}

prop_compose! {
    fn arb_poly()(coeffs in prop::collection::vec((-8i64..=8, 1i64..=6), 1..5)) -> Polynomial {
        Polynomial::new(coeffs.into_iter().map(|(n, d)| q(n, d)).collect())
    }
}

proptest! {
    #[test]
    fn ancestor_intervals_nest(x in arb_vertex()) {
        let own = x.interval();
        for j in 0..=x.level() {
            let anc = x.ancestor(j).unwrap().interval();
            prop_assert!(anc.contains_interval(&own));
            prop_assert_eq!(j == 0, anc == own);
        }
    }

    #[test]
    fn successor_intervals_partition(x in arb_vertex()) {
        let m = x.config().m();
        let own = x.interval();
        let mut total = Q::zero();
        let succ = x.successors();
        for (i, s) in succ.iter().enumerate() {
            let iv = s.interval();
            prop_assert!(own.contains_interval(&iv));
            total += iv.length();
            if i > 0 {
                // adjacent children share exactly their endpoint
                prop_assert_eq!(succ[i - 1].interval().upper(), iv.lower());
            }
        }
        prop_assert_eq!(total, own.length());
        prop_assert_eq!(succ[0].interval().lower(), own.lower());
        prop_assert_eq!(succ[(m - 1) as usize].interval().upper(), own.upper());
    }

    #[test]
    fn psi_is_interval_lower_endpoint(x in arb_vertex()) {
        prop_assert_eq!(x.psi(), x.interval().lower());
    }

    #[test]
    fn canonical_branch_passes_through_vertex(x in arb_vertex()) {
        let branch = Branch::from_point(&x.psi(), x.config()).unwrap();
        prop_assert_eq!(branch.prefix(x.level()), x);
    }

    #[test]
    fn branch_psi_round_trips(t in arb_rational01(), m in 2u32..=5) {
        let branch = Branch::from_point(&t, cfg(m)).unwrap();
        prop_assert_eq!(branch.psi(), t);
    }

    #[test]
    fn containment_level_is_monotone_along_branches(
        t in arb_rational01(),
        s in arb_rational01(),
        m in 2u32..=4,
    ) {
        let branch = Branch::from_point(&t, cfg(m)).unwrap();
        prop_assume!(s != branch.psi());
        prop_assume!(branch.interval(1).contains(&s));
        let big_n = branch.containment_depth(&s).unwrap();
        let mut prev = 1;
        for k in 1..=(big_n + 4) {
            let n = containment_level(&branch.prefix(k), &s).unwrap();
            prop_assert!(n >= prev, "containment level dropped");
            prop_assert!(n <= big_n);
            if k >= big_n {
                prop_assert_eq!(n, big_n);
            }
            prev = n;
        }
    }

    #[test]
    fn average_refines_exactly(g in arb_poly(), x in arb_vertex()) {
        let datum = BoundaryDatum::Polynomial(g);
        let own = datum.average_exact(&x.interval()).unwrap();
        let m = x.config().m();
        let mut acc = Q::zero();
        for s in x.successors() {
            acc += datum.average_exact(&s.interval()).unwrap();
        }
        prop_assert_eq!(own, acc / Q::from_integer(m.into()));
    }

    #[test]
    fn average_is_linear(f in arb_poly(), g in arb_poly(), x in arb_vertex(), a in -4i64..=4, b in -4i64..=4) {
        let alpha = q(a, 3);
        let gamma = q(b, 2);
        let combo = BoundaryDatum::Polynomial(f.scale(&alpha).add(&g.scale(&gamma)));
        let df = BoundaryDatum::Polynomial(f);
        let dg = BoundaryDatum::Polynomial(g);
        let iv = x.interval();
        let lhs = combo.average_exact(&iv).unwrap();
        let rhs = alpha * df.average_exact(&iv).unwrap() + gamma * dg.average_exact(&iv).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn solve_is_linear_and_order_independent(
        f in arb_poly(),
        g in arb_poly(),
        x in arb_vertex(),
        beta in arb_subcritical_beta(),
    ) {
        let quad = QuadConfig::default();
        let config = x.config();
        let alpha = q(2, 3);
        let gamma = q(-1, 4);
        let combo = BoundaryDatum::Polynomial(f.scale(&alpha).add(&g.scale(&gamma)));
        let sf = Solution::<Q>::solve(BoundaryDatum::Polynomial(f), beta.clone(), config, quad).unwrap();
        let sg = Solution::<Q>::solve(BoundaryDatum::Polynomial(g), beta.clone(), config, quad).unwrap();
        let sc = Solution::<Q>::solve(combo, beta, config, quad).unwrap();
        let lhs = sc.value(&x).unwrap();
        let rhs = alpha * sf.value(&x).unwrap() + gamma * sg.value(&x).unwrap();
        prop_assert_eq!(&lhs, &rhs);
        // root-first memoized accumulation equals the leaf-first explicit sum
        prop_assert_eq!(lhs, sc.value_direct_sum(&x).unwrap());
    }

    #[test]
    fn solution_residual_vanishes_exactly(
        g in arb_poly(),
        x in arb_vertex(),
        beta in arb_subcritical_beta(),
    ) {
        let sol = Solution::<Q>::solve(
            BoundaryDatum::Polynomial(g),
            beta,
            x.config(),
            QuadConfig::default(),
        )
        .unwrap();
        prop_assert!(sol.harmonic_residual(&x).unwrap().is_zero());
    }

    #[test]
    fn solution_respects_datum_range(
        x in arb_vertex(),
        beta in arb_subcritical_beta(),
    ) {
        // g(t) = t has range [0,1]; the solution is an average of averages
        let sol = Solution::<Q>::solve(
            BoundaryDatum::linear(),
            beta,
            x.config(),
            QuadConfig::default(),
        )
        .unwrap();
        let v = sol.value(&x).unwrap();
        prop_assert!(Q::zero() <= v && v <= Q::one());
    }

    #[test]
    fn beta_zero_gradient_is_orthogonal_to_ones(g in arb_poly(), x in arb_vertex()) {
        let sol = Solution::<Q>::solve(
            BoundaryDatum::Polynomial(g),
            BetaParam::from_ints(0, 1).unwrap(),
            x.config(),
            QuadConfig::default(),
        )
        .unwrap();
        let total: Q = gradient(&sol, &x).unwrap().into_iter().sum();
        prop_assert!(total.is_zero());
    }

    #[test]
    fn scaled_weight_identity_for_zero_sum_vectors(
        m in 2u32..=6,
        seeds in prop::collection::vec((-6i64..=6, 1i64..=6), 1..6),
    ) {
        // eta with components summing to zero: m <eta, omega> == <eta, varpi>
        let mut components: Vec<Q> = (0..m as usize)
            .map(|i| seeds.get(i).map(|&(n, d)| q(n, d)).unwrap_or_else(Q::zero))
            .collect();
        let total: Q = components.iter().sum();
        components[0] = &components[0] - total;
        let eta = NormalVector::new(components);
        prop_assert!(eta.is_zero_sum());
        let lhs = Q::from_integer(m.into()) * eta.dot(&successor_midpoint_offsets(m));
        let rhs = eta.dot(&successor_index_vector(m));
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn finite_kernels_have_zero_mass(
        x in arb_vertex(),
        beta_num in 1i64..49,
    ) {
        prop_assume!(!x.is_root());
        let beta = BetaParam::from_ints(beta_num, 100).unwrap();
        let one = BoundaryDatum::constant(Q::one());
        for j in 0..x.config().m() {
            let mass: Q =
                kernel_finite_integral(&one, &x, j, &beta, &QuadConfig::default()).unwrap();
            prop_assert!(mass.is_zero());
        }
    }

    #[test]
    fn kernel_reproduces_successor_differences(
        g in arb_poly(),
        x in arb_vertex(),
        beta_num in 1i64..49,
    ) {
        prop_assume!(!x.is_root());
        let beta = BetaParam::from_ints(beta_num, 100).unwrap();
        let p = beta.p().unwrap();
        let datum = BoundaryDatum::Polynomial(g);
        let sol =
            Solution::<Q>::solve(datum.clone(), beta.clone(), x.config(), QuadConfig::default())
                .unwrap();
        let j = x.digits().first().copied().unwrap_or(0);
        let lhs = sol.value(&x.child(j).unwrap()).unwrap() - sol.value(&x).unwrap();
        let integral: Q =
            kernel_finite_integral(&datum, &x, j, &beta, &QuadConfig::default()).unwrap();
        prop_assert_eq!(lhs, -(Q::one() - p) * integral);
    }

    #[test]
    fn gamma_decomposition_is_exact(
        t in arb_rational01(),
        beta_num in 1i64..49,
        g in arb_poly(),
    ) {
        let beta = BetaParam::from_ints(beta_num, 100).unwrap();
        let branch = Branch::from_point(&t, cfg(2)).unwrap();
        let datum = BoundaryDatum::Polynomial(g);
        let sweep =
            gamma_sweep::<Q>(&datum, &beta, &branch, &[1, 4], &QuadConfig::default()).unwrap();
        let p = beta.p().unwrap();
        for row in &sweep.rows {
            let recomposed = (Q::one() - &p) * (row.bulk.clone() + row.j1.clone() + row.j2.clone());
            prop_assert_eq!(&row.estimate, &recomposed);
        }
    }

    #[test]
    fn characteristic_sequences_increase_with_ratio_p(
        m in 2u32..=4,
        beta_num in 1i64..49,
        n in 1u32..=3,
    ) {
        let beta = BetaParam::from_ints(beta_num, 100).unwrap();
        let p = beta.p().unwrap();
        let c = solve_characteristic(cfg(m), n, &0u32.into(), &beta, 8).unwrap();
        let seq = c.b_sequence();
        for i in 1..seq.len() {
            prop_assert!(seq[i] > seq[i - 1], "sequence must increase");
            if i >= 2 {
                let inc = &seq[i] - &seq[i - 1];
                let prev = &seq[i - 1] - &seq[i - 2];
                prop_assert_eq!(inc, &p * prev);
            }
        }
        prop_assert!(c.limit() > &Q::zero());
        // the limit closes the geometric series exactly
        let closed = &seq[0] + (&seq[1] - &seq[0]) / (Q::one() - &p);
        prop_assert_eq!(c.limit(), &closed);
    }

    #[test]
    fn float_and_exact_solutions_agree(
        g in arb_poly(),
        x in arb_vertex(),
        beta in arb_subcritical_beta(),
    ) {
        let quad = QuadConfig::default();
        let exact = Solution::<Q>::solve(
            BoundaryDatum::Polynomial(g.clone()),
            beta.clone(),
            x.config(),
            quad,
        )
        .unwrap();
        let float = Solution::<f64>::solve(BoundaryDatum::Polynomial(g), beta, x.config(), quad)
            .unwrap();
        let a = exact.value(&x).unwrap();
        let b = float.value(&x).unwrap();
        let a64 = num_traits::ToPrimitive::to_f64(&a).unwrap();
        prop_assert!((a64 - b).abs() <= 1e-10 * (1.0 + a64.abs()));
    }
}

#[test]
fn comparison_f64_fast_path_matches_exact_path() {
    // same sweep through both backends on a small grid
    let f = BoundaryDatum::polynomial(vec![q(1, 4), q(1, 2)]);
    let g = BoundaryDatum::polynomial(vec![q(1, 2), q(1, 2), q(1, 3)]);
    let beta = BetaParam::from_ints(1, 10).unwrap();
    let quad = QuadConfig::default();
    let exact = tree_harmonic::dirichlet::comparison_check::<Q>(
        &f,
        &g,
        &beta,
        cfg(3),
        5,
        &Q::zero(),
        &quad,
    )
    .unwrap();
    let fast = tree_harmonic::dirichlet::comparison_check::<f64>(
        &f, &g, &beta, cfg(3), 5, &1e-9, &quad,
    )
    .unwrap();
    assert_eq!(exact.vertices_checked, fast.vertices_checked);
    assert!(exact.violations.is_empty());
    assert!(fast.violations.is_empty());
}

#[test]
fn strong_comparison_counterexample_shape() {
    // the beta = 0 counterexample: nonnegative, vanishes at (0), value 1 at (2)
    let ce = tree_harmonic::counterexample_beta0();
    assert!(ce.u_child0.is_zero());
    assert_eq!(ce.u_child2, Q::one());
    assert!(ce.u_root > Q::zero());
    // interior vanishing without being identically zero: exactly what the
    // strong comparison principle (valid only for beta > 0) rules out
    assert!(ce.u_child0 < ce.u_root);
}
