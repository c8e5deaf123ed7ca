use mmb_core::cones::{
    block_contains, project_power_block, project_soc, prox_f_block, BlockKind,
};
use mmb_core::driver::Normalization;
use mmb_core::lifting::{
    achieved_rates, build_problem, from_complex, permute_from_ap_major, permute_to_ap_major,
    to_complex, Dims,
};
use mmb_core::scenario::{generate_scenario, ScenarioConfig, C64};
use mmb_core::solvers::SolverConfig;
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soc_projection_satisfies_moreau(x in (2usize..9).prop_flat_map(vec_of)) {
        let p = project_soc(&x);
        prop_assert!(block_contains(&p, BlockKind::Soc));
        let r: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
        prop_assert!(dot(&r, &p).abs() <= 1e-9 * (1.0 + dot(&x, &x)));
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        // -(x - P(x)) lies in the dual (self-dual) cone
        prop_assert!(block_contains(&neg, BlockKind::Soc) || dot(&neg, &neg) < 1e-18);
    }

    #[test]
    fn ball_projection_is_nearest(x in (1usize..9).prop_flat_map(vec_of), radius in 0.01f64..5.0) {
        let p = project_power_block(&x, radius);
        prop_assert!(dot(&p, &p).sqrt() <= radius * (1.0 + 1e-12));
        let d = |y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let scaled: Vec<f64> = p.iter().map(|v| 0.9 * v).collect();
        prop_assert!(d(&p) <= d(&scaled) + 1e-12);
    }

    #[test]
    fn prox_lies_between_point_and_projection(x in (2usize..9).prop_flat_map(vec_of), beta in 0.01f64..100.0) {
        let w = prox_f_block(&x, beta, BlockKind::Soc).unwrap();
        let p = project_soc(&x);
        let t = 1.0 / (1.0 + beta);
        for i in 0..x.len() {
            prop_assert!((w[i] - (t * p[i] + (1.0 - t) * x[i])).abs() <= 1e-9 * (1.0 + x[i].abs()));
        }
    }

    #[test]
    fn block_adjoint_identity(m in 1usize..4, n in 1usize..3, k in 1usize..4, seed in 0u64..1000, rate in 0.05f64..5.0) {
        let raw = generate_scenario(&ScenarioConfig::new(m, n, k, 0.01).with_seed(seed)).unwrap();
        let s = Normalization::new(&raw).unwrap().scenario;
        let p = build_problem(&s, rate).unwrap();
        let mut rng_state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let v: Vec<f64> = (0..p.block_len()).map(|_| next()).collect();
        let r: Vec<f64> = (0..p.rows()).map(|_| next()).collect();
        for j in 0..k {
            let av = p.apply_block(j, &v).unwrap();
            let atr = p.apply_block_transpose(j, &r).unwrap();
            let (lhs, rhs) = (dot(&av, &r), dot(&v, &atr));
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn layout_conversions_round_trip(m in 1usize..4, n in 1usize..4, k in 1usize..5, vals in vec_of(2 * 3 * 3 * 4)) {
        let dims = Dims { num_aps: m, antennas: n, num_users: k };
        let real: Vec<f64> = vals[..dims.real_len()].to_vec();
        let c = to_complex(dims, &real).unwrap();
        prop_assert_eq!(&from_complex(dims, &c).unwrap(), &real);
        let breve = permute_to_ap_major(dims, &real).unwrap();
        prop_assert_eq!(&permute_from_ap_major(dims, &breve).unwrap(), &real);
    }

    #[test]
    fn rates_are_scale_monotone(seed in 0u64..500, scale in 1.0f64..10.0) {
        let s = generate_scenario(&ScenarioConfig::new(2, 2, 1, 0.01).with_seed(seed)).unwrap();
        let v: Vec<C64> = (0..4).map(|i| C64::new(1e-2 * (i as f64 + 1.0), -1e-2)).collect();
        let vs: Vec<C64> = v.iter().map(|z| z * scale).collect();
        let (a, b) = (achieved_rates(&s, &v).unwrap()[0], achieved_rates(&s, &vs).unwrap()[0]);
        prop_assert!(b >= a);
    }

    #[test]
    fn solver_config_json_round_trip(beta in 1e-4f64..10.0, alpha in 0.01f64..1.0, seed in any::<u64>(), max_iter in 1usize..100000) {
        let cfg = SolverConfig { beta, alpha, seed, max_iter, ..SolverConfig::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SolverConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
