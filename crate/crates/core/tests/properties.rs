//! Randomized invariants across modules.

use proptest::prelude::*;

use sgd_diffusion::config::parse_config;
use sgd_diffusion::cutoff::CutoffSpec;
use sgd_diffusion::harness::{
    error_table, ChainSource, DiffusionSource, WeakErrorSetup, DEFAULT_PROBES,
};
use sgd_diffusion::observable::Observable;
use sgd_diffusion::output::fmt_f64;
use sgd_diffusion::problems::ProblemSpec;
use sgd_diffusion::sde::{DriftModel, OuParams};
use sgd_diffusion::semigroup::{Grid1D, GridFunction, TransferOperator};
use sgd_diffusion::sgd::{closed_form_u, estimate_u, sgd_step, ChainConfig};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn csv_floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let s = fmt_f64(v);
        prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    // One step from anywhere in B(0, R) with η ≤ η₀ lands back in B(0, R).
    #[test]
    fn single_step_stays_trapped(
        mu in 0.5f64..2.0,
        s in 0.0f64..1.0,
        frac in 0.0f64..=1.0,
        x in -1.0f64..=1.0,
        sign in prop::bool::ANY,
    ) {
        let p = ProblemSpec::quadratic(1, mu, s).unwrap();
        let r = 2.0 * p.confinement().1.max(0.5);
        let eta0 = p.constants(r).unwrap().eta0;
        let eta = frac * eta0;
        let xi = [if sign { s } else { -s }];
        let y = sgd_step(&p, &[x * r], &xi, eta);
        prop_assert!(y[0].abs() <= r * (1.0 + 1e-12), "{} -> {}", x * r, y[0]);
    }

    #[test]
    fn transfer_operator_preserves_constants_and_contracts(
        c in -5.0f64..5.0,
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..4),
        eta in 0.01f64..0.15,
        trig in prop::bool::ANY,
    ) {
        let p = if trig { ProblemSpec::trig(1.0, 1.0).unwrap() } else { ProblemSpec::quadratic(1, 1.0, 0.5).unwrap() };
        let r = if trig { 4.0 } else { 2.0 };
        let grid = Grid1D::symmetric(r, 513).unwrap();
        let op = TransferOperator::new(&p, grid, eta, 16).unwrap();
        let k = op.apply(&GridFunction::sample(grid, |_| c)).unwrap();
        prop_assert!(k.values.iter().all(|v| (v - c).abs() <= 1e-12 * (1.0 + c.abs())));
        let phi = GridFunction::sample(grid, |x| coeffs.iter().rev().fold(0.0, |acc, a| acc * x / r + a));
        let out = op.apply(&phi).unwrap();
        prop_assert!(out.sup_norm() <= phi.sup_norm() * (1.0 + 1e-9));
    }

    #[test]
    fn estimates_are_deterministic_across_thread_counts(seed in any::<u64>(), threads in 1usize..4) {
        let p = ProblemSpec::trig(1.0, 2.0).unwrap();
        let cfg = ChainConfig::from_point(0.1, 20, vec![0.7], seed);
        let phi = Observable::SquaredNorm;
        let a = estimate_u(&p, &phi, &cfg, 3000).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let b = pool.install(|| estimate_u(&p, &phi, &cfg, 3000)).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    // Closed-form chain means are linear in the start point.
    #[test]
    fn closed_form_mean_is_linear(x in -2.0f64..2.0, eta in 0.01f64..0.2, n in 0usize..200) {
        let p = ProblemSpec::quadratic(1, 1.0, 0.5).unwrap();
        let phi = Observable::Coordinate(0);
        let u = closed_form_u(&p, &phi, eta, &[x], n).unwrap();
        let u1 = closed_form_u(&p, &phi, eta, &[1.0], n).unwrap();
        prop_assert!((u - x * u1).abs() <= 1e-14 * (1.0 + x.abs()));
    }

    #[test]
    fn ou_variance_is_monotone_and_bounded(eta in 0.01f64..0.3, s in 0.0f64..2.0, t1 in 0.0f64..20.0, dt in 0.0f64..20.0) {
        let ou = OuParams::new(1.0, eta, s * s, DriftModel::Modified).unwrap();
        let v1 = ou.variance(t1);
        let v2 = ou.variance(t1 + dt);
        prop_assert!(v1 <= v2 + 1e-15);
        prop_assert!(v2 <= eta * s * s / (2.0 * ou.a) + 1e-15);
    }

    #[test]
    fn weak_error_sup_grows_with_horizon(t1 in 0.0f64..30.0, dt in 0.0f64..20.0, eta in 0.02f64..0.2) {
        let setup = WeakErrorSetup {
            problem: ProblemSpec::quadratic(1, 1.0, 0.5).unwrap(),
            cutoff: CutoffSpec::new(2.0, 4.0).unwrap(),
            phi: Observable::SquaredNorm,
            probes: DEFAULT_PROBES.to_vec(),
            chain: ChainSource::ClosedForm,
            diffusion: DiffusionSource::OuExact,
            drift: DriftModel::Modified,
        };
        let table = error_table(&setup, eta, 50.0).unwrap();
        let a = table.sup_error(t1, &setup.probes).error;
        let b = table.sup_error(t1 + dt, &setup.probes).error;
        prop_assert!(b >= a);
    }

    #[test]
    fn materialized_configs_reparse_identically(
        seed in 0..=i64::MAX as u64,
        r in 1.0f64..3.0,
        k in 0usize..4,
        m in 100usize..100_000,
    ) {
        let eta = [0.2, 0.1, 0.05, 0.025][k];
        let text = format!("[cutoff]\nR = {r}\n[numerics]\nseed = {seed}\neta = {eta}\nM = {m}\n");
        let cfg = parse_config(&text).unwrap();
        let again = parse_config(&toml::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
