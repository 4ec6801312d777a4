//! Library invariants as randomized properties.

use std::sync::Arc;

use framecert::alphamod::{required_decay, AlphaModScenario};
use framecert::certificate::{certify, l2_criterion, pair_matrices, default_rule, CertifyOptions, FrequencyWeight};
use framecert::cover::{build_alpha_modulation_cover, build_dyadic_cover, build_uniform_cover, Cover};
use framecert::numerics::bounds::{box_polar_integral, lattice_series_bound, lattice_series_bruteforce};
use framecert::numerics::finite_diff::central_partial;
use framecert::numerics::matrix::{lp_norm, schur_norm, DenseMatrix};
use framecert::numerics::quadrature::gauss_legendre;
use framecert::numerics::{integrate_over_base_set, spectral_norm, QuadratureRule, Region};
use framecert::partition::{build_regular_partition, BumpProfile};
use framecert::system::{Generator, GeneratorSpec, StructuredSystem};
use framecert::walnut::{apply_direct, gaussian_corpus, t_alpha, FreqGrid};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn uniform_system(generator: Generator, index_radius: i64, delta: f64) -> StructuredSystem {
    StructuredSystem::new(Arc::new(build_uniform_cover(1, 1.0, index_radius).unwrap()), Arc::new(generator), delta)
        .unwrap()
}

fn covers() -> Vec<Cover> {
    vec![
        build_uniform_cover(1, 1.0, 6).unwrap(),
        build_uniform_cover(2, 1.0, 3).unwrap(),
        build_dyadic_cover(1, -3, 3).unwrap(),
        build_alpha_modulation_cover(1, 0.5, 1.5, 12).unwrap(),
    ]
}

fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, c), r))
}

/// `∫ max{c, ‖x‖_∞}^{-α}` by tensor Gauss–Legendre after `x = s/(1−s)`.
fn box_polar_quadrature(d: usize, alpha: f64, c: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(16);
    // Panel edges placed at the kink s = c/(1+c).
    let kink = c / (1.0 + c);
    let mut pts = Vec::new();
    for (lo, hi, panels) in [(0.0, kink, 50), (kink, 1.0, 400)] {
        for p in 0..panels {
            let a = lo + (hi - lo) * p as f64 / panels as f64;
            let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
            for (x, w) in nodes.iter().zip(&weights) {
                let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
                pts.push((s / (1.0 - s), 0.5 * (b - a) * w / ((1.0 - s) * (1.0 - s))));
            }
        }
    }
    let f = |m: f64| c.max(m).powf(-alpha);
    let orthant = if d == 1 {
        pts.iter().map(|(x, w)| w * f(*x)).sum::<f64>()
    } else {
        pts.iter()
            .map(|(x, wx)| pts.iter().map(|(y, wy)| wx * wy * f(x.max(*y))).sum::<f64>())
            .sum()
    };
    2f64.powi(d as i32) * orthant
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn schur_bounds_every_lp_norm(rows in matrix_strategy(), seed in 0u64..1000) {
        let m = DenseMatrix::from_rows(&rows);
        let s = schur_norm(&m);
        prop_assert!((schur_norm(&m.transpose()) - s).abs() <= 1e-12 * s.max(1.0));
        let x: Vec<f64> = (0..m.ncols()).map(|k| ((seed as f64 + 1.3) * (k as f64 + 0.7)).sin()).collect();
        for p in [1.0, 2.0, f64::INFINITY] {
            prop_assert!(lp_norm(m.apply(&x), p) <= s * lp_norm(x.iter().copied(), p) * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn box_polar_matches_quadrature(d in 1usize..=2, extra in 1.0f64..5.0, c in 0.1f64..10.0) {
        let alpha = d as f64 + extra;
        let closed = box_polar_integral(d, alpha, c).unwrap().value().unwrap();
        let quad = box_polar_quadrature(d, alpha, c);
        prop_assert!(((closed - quad) / quad).abs() < 0.01, "{closed} vs {quad}");
    }

    #[test]
    fn lattice_sums_below_bounds(
        d in 1usize..=2,
        entries in prop::collection::vec(-2.0f64..2.0, 4),
        eta in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let a = DMatrix::from_fn(d, d, |i, j| entries[i * 2 + j]);
        let inv = a.clone().try_inverse();
        prop_assume!(inv.is_some());
        let inv = inv.unwrap();
        let cond = spectral_norm(&a) * spectral_norm(&inv);
        prop_assume!(cond <= 100.0 && a.determinant().abs() > 1e-3);
        let eta = &eta[..d];
        let brute = lattice_series_bruteforce(&a, eta, if d == 1 { 200 } else { 30 }).unwrap();
        let bound = lattice_series_bound(d, spectral_norm(&inv), eta.iter().map(|v| v * v).sum::<f64>().sqrt());
        prop_assert!(brute.full <= bound.full && brute.nonzero <= bound.nonzero);
    }

    #[test]
    fn quadrature_doubling_converges(a in 0.2f64..2.0, b in -1.0f64..1.0, r in 0.5f64..2.0) {
        let f = |x: &[f64]| (-a * x[0] * x[0]).exp() * (1.0 + b * x[0]).cos();
        let region = Region::cube(1, r);
        let rule = QuadratureRule::default();
        let one = integrate_over_base_set(f, &region, &rule).unwrap();
        let two = integrate_over_base_set(f, &region, &rule.doubled()).unwrap();
        prop_assert!((one - two).abs() < 1e-6 * one.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn safe_region_is_covered(which in 0usize..4, u in prop::collection::vec(0.0f64..1.0, 2)) {
        let cover = &covers()[which];
        let grid = cover.safe_grid(if cover.dimension() == 1 { 401 } else { 41 });
        let xi = &grid[((u[0] * grid.len() as f64) as usize).min(grid.len() - 1)];
        let inside = cover.containing(xi);
        prop_assert!(!inside.is_empty());
        prop_assert!(cover.elements().iter().any(|e| e.inner_contains(xi)));
    }

    #[test]
    fn partition_of_unity(which in 0usize..4, u in 0.0f64..1.0) {
        let cover = Arc::new(covers().swap_remove(which));
        let partition = build_regular_partition(cover.clone(), BumpProfile::default()).unwrap();
        let grid = cover.safe_grid(if cover.dimension() == 1 { 401 } else { 41 });
        let xi = &grid[((u * grid.len() as f64) as usize).min(grid.len() - 1)];
        let mut sum = 0.0;
        for i in 0..cover.len() {
            let phi = partition.phi(i, xi);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&phi));
            if !cover.element(i).contains(xi) {
                prop_assert_eq!(phi, 0.0);
            }
            sum += phi;
        }
        prop_assert!((sum - 1.0).abs() < 1e-10, "{sum}");
    }

    #[test]
    fn t_zero_is_the_calderon_function(x in -4.0f64..4.0, delta in prop::sample::select(vec![0.25, 0.5, 1.0])) {
        let sys = uniform_system(Generator::gaussian(1), 8, delta);
        let t = t_alpha(&sys, &[0.0], &[x]);
        prop_assert!((t.re - sys.calderon_t0(&[x])).abs() < 1e-12 && t.im.abs() < 1e-12);
        let n = sys.len();
        let order: Vec<usize> = (0..n).map(|k| (k * 7 + 3) % n).collect();
        let perm = StructuredSystem::new(
            Arc::new(sys.cover().permuted(&order).unwrap()),
            sys.generator_arc().clone(),
            delta,
        ).unwrap();
        prop_assert!((perm.calderon_t0(&[x]) - sys.calderon_t0(&[x])).abs() < 1e-13);
    }

    #[test]
    fn analytic_partials_match_finite_differences(
        which in 0usize..3,
        x in -1.5f64..1.5,
        order in 1u32..=2,
    ) {
        let g = [
            Generator::gaussian(1),
            Generator::inverse_poly(1, 4.0).unwrap(),
            Generator::compact_bump(1, 2.0).unwrap(),
        ][which].clone();
        prop_assert!(g.has_exact_partials());
        let exact = g.partial(&[order], &[x]).re;
        let fd: f64 = central_partial(&|p: &[f64]| g.ghat(p).re, &[x], &[order], 1e-3);
        // Central differences carry an O(h²) error, about 1e-5 here.
        prop_assert!((exact - fd).abs() < 1e-4 * exact.abs().max(1.0), "{exact} vs {fd}");
    }

    #[test]
    fn required_decay_is_continuous_at_zero(eps in 1e-9f64..1e-6) {
        let s = |alpha| AlphaModScenario {
            d: 1,
            alpha,
            r: None,
            s0: 0.0,
            s: 0.0,
            generator: GeneratorSpec::Gaussian { amplitude: 1.0 },
            index_radius: 8,
            delta: None,
        };
        prop_assert!((required_decay(&s(eps)) - required_decay(&s(0.0))).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn certify_is_monotone_in_delta(f1 in 0.05f64..3.0, f2 in 0.05f64..3.0) {
        let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
        let base = uniform_system(Generator::gaussian(1), 5, 1.0);
        let opts = CertifyOptions { quadrature_doubling: false, truncation_doubling: false, l2: false, ..Default::default() };
        let dmax = certify(&base, None, 2.0, 2.0, &opts).unwrap().delta_max;
        let at = |f: f64| certify(&base.with_delta(f * dmax).unwrap(), None, 2.0, 2.0, &opts).unwrap();
        let (small, large) = (at(lo), at(hi));
        prop_assert!(small.invertible || !large.invertible);
        prop_assert!(small.bound_product <= large.bound_product);
        if lo < 1.0 {
            prop_assert!(small.invertible);
        }
    }

    #[test]
    fn frame_operator_is_positive(seed in 0u64..10_000) {
        let sys = uniform_system(Generator::gaussian(1), 24, 0.5);
        let points = sys.cover().safe_grid(2001);
        let l2 = l2_criterion(&sys, FrequencyWeight::Constant, &points, 8.0).unwrap();
        prop_assert!(l2.satisfied);
        let grid = FreqGrid::new(1, 16.0, 2048).unwrap();
        let f = &gaussian_corpus(&grid, 1, seed, 4.0)[0];
        let sf = apply_direct(&sys, f, 24).unwrap().signal;
        let quad = sf.inner(f).re;
        prop_assert!(quad >= (l2.a_raw - l2.lhs) * f.norm() * f.norm() * (1.0 - 1e-9));
    }
}

#[test]
fn ytilde_below_translated_yhat() {
    for cover in [build_uniform_cover(1, 1.0, 5).unwrap(), build_dyadic_cover(1, -3, 3).unwrap()] {
        let r_q = cover.admissibility_constants(None, true).r_q;
        let d = cover.dimension();
        let sys = StructuredSystem::new(Arc::new(cover), Arc::new(Generator::gaussian(1)), 0.5).unwrap();
        let pairs = pair_matrices(&sys, None, &default_rule(d)).unwrap();
        let factor = (1.0 + r_q).powi(d as i32 + 1);
        for i in 0..sys.len() {
            for j in 0..sys.len() {
                let (y, t) = (pairs.yhat.get(i, j), pairs.ytilde.get(i, j));
                assert!(t <= factor * y * (1.0 + 1e-9) + 1e-300, "({i},{j}): {t} > {factor}·{y}");
            }
        }
    }
}
