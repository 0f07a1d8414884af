use super::*;
use crate::data::Point;
use crate::models::{Activation, Architecture};
use crate::tabular::{
    empirical_joint_from_data, ratio_power_step, regularized_update_closed_form, RatioVector, TabularChain,
};
use crate::SeededRng;

fn chain_dataset(chain: &TabularChain, probe: &[f64], n: usize, rng: &mut SeededRng) -> TransitionDataset {
    let pick = |w: &[f64], rng: &mut SeededRng| WeightedIndex::new(w).unwrap().sample(rng);
    let mut xs = Vec::with_capacity(n);
    let mut xps = Vec::with_capacity(n);
    for _ in 0..n {
        let i = pick(probe, rng);
        let j = pick(chain.row(i), rng);
        xs.push(Point::scalar(i as f64));
        xps.push(Point::scalar(j as f64));
    }
    TransitionDataset::from_pairs(&xs, &xps, None).unwrap()
}

fn tabular_cfg() -> VpmConfig {
    VpmConfig {
        batch: BatchSize::Full,
        damping: Damping::Undamped,
        optimizer: Optimizer::Sgd,
        ..VpmConfig::default()
    }
}

fn objective(st: &SaddleState, mb: &Minibatch, init: Option<&[f64]>, cfg: &VpmConfig) -> f64 {
    loss_and_grads(st, mb, init, cfg).unwrap().objective
}

#[test]
fn dual_gradient_at_normalized_start() {
    let mut rng = seeded_rng(0);
    let model = RatioModel::new(Architecture::tabular(3), &mut rng).unwrap();
    let ds = TransitionDataset::from_flat(1, vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.0], None).unwrap();
    let mut st = SaddleState::new(model);
    let cfg = tabular_cfg();
    let lg = loss_and_grads(&st, &ds.full_batch(), None, &cfg).unwrap();
    assert!((lg.mean_tau - 1.0).abs() < 1e-15);
    assert_eq!(lg.g_v, 0.0);
    st.v = 0.3;
    let lg = loss_and_grads(&st, &ds.full_batch(), None, &cfg).unwrap();
    assert!((lg.g_v + 2.0 * cfg.lambda * 0.3).abs() < 1e-14);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = seeded_rng(1);
    let chain = TabularChain::random_ergodic(4, &mut rng);
    let tab_ds = chain_dataset(&chain, &[0.25; 4], 16, &mut rng);
    let cont_xs: Vec<f64> = (0..24).map(|_| rng.random_range(-2.0..2.0)).collect();
    let cont_xps: Vec<f64> = (0..24).map(|_| rng.random_range(-2.0..2.0)).collect();
    let cont_ds = TransitionDataset::from_flat(2, cont_xs, cont_xps, None).unwrap();
    let archs = vec![
        (Architecture::tabular(4), &tab_ds, vec![0.0, 3.0]),
        (Architecture::fourier(2, 12, 1.0, &mut rng), &cont_ds, vec![0.5, -0.5, 1.0, 1.0]),
        (Architecture::mlp(2, &[6, 5], Activation::Tanh), &cont_ds, vec![0.5, -0.5, 1.0, 1.0]),
    ];
    for (arch, ds, init) in archs {
        for gamma in [None, Some(0.7)] {
            let mut model = RatioModel::new(arch.clone(), &mut rng).unwrap();
            let d: Vec<f64> = (0..model.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
            model.apply_update(&d).unwrap();
            let mut st = SaddleState::new(model.clone());
            let d: Vec<f64> = (0..model.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
            st.model.apply_update(&d).unwrap();
            st.v = 0.2;
            st.outer_step = 3;
            let cfg = VpmConfig {
                gamma,
                damping: Damping::InvSqrt,
                lambda: 0.7,
                ..VpmConfig::default()
            };
            let mb = ds.sample_minibatch(7, &mut rng);
            let init = gamma.map(|_| init.as_slice());
            let lg = loss_and_grads(&st, &mb, init, &cfg).unwrap();
            let h = 1e-5;
            for k in 0..st.model.param_count() {
                let mut plus = st.clone();
                let mut minus = st.clone();
                let mut e = vec![0.0; st.model.param_count()];
                e[k] = h;
                plus.model.apply_update(&e).unwrap();
                e[k] = -h;
                minus.model.apply_update(&e).unwrap();
                let fd = (objective(&plus, &mb, init, &cfg) - objective(&minus, &mb, init, &cfg)) / (2.0 * h);
                let g = lg.g_theta.g[k];
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
                assert!(rel < 1e-5, "{:?} gamma {gamma:?} coordinate {k}: {fd} vs {g}", arch.kind());
            }
            let mut plus = st.clone();
            let mut minus = st.clone();
            plus.v += h;
            minus.v -= h;
            let fd = (objective(&plus, &mb, init, &cfg) - objective(&minus, &mb, init, &cfg)) / (2.0 * h);
            assert!((fd - lg.g_v).abs() < 1e-8);
        }
    }
}

#[test]
fn discounted_objective_requires_initial_points() {
    let mut rng = seeded_rng(2);
    let model = RatioModel::new(Architecture::tabular(2), &mut rng).unwrap();
    let ds = TransitionDataset::from_flat(1, vec![0.0, 1.0], vec![1.0, 0.0], None).unwrap();
    let cfg = VpmConfig {
        gamma: Some(0.5),
        ..tabular_cfg()
    };
    let st = SaddleState::new(model.clone());
    assert!(loss_and_grads(&st, &ds.full_batch(), None, &cfg).is_err());
    assert!(run_vpm(&ds, model, &cfg).is_err());
}

#[test]
fn full_batch_descent_matches_closed_form() {
    let mut rng = seeded_rng(3);
    let chain = TabularChain::random_ergodic(5, &mut rng);
    let ds = chain_dataset(&chain, &[0.2; 5], 400, &mut rng);
    let (joint, probe) = empirical_joint_from_data(&ds, 5).unwrap();
    let ones = RatioVector::ones(5);
    let lambda = 1.0;
    let expected = regularized_update_closed_form(&joint, &probe, &ones, lambda).unwrap();
    let model = RatioModel::new(Architecture::tabular(5), &mut rng).unwrap();
    let cfg = VpmConfig {
        inner_steps: 20_000,
        lr_theta: 1.0,
        lr_v: 0.5,
        ..tabular_cfg()
    };
    let mut st = SaddleState::new(model);
    inner_optimize(&mut st, &ds, None, &cfg, &mut rng).unwrap();
    let got = st.model.tabular_values().unwrap();
    for (g, e) in got.iter().zip(expected.as_slice()) {
        assert!((g - e).abs() < 1e-4, "{got:?} vs {expected:?}");
    }
    let mean: f64 = got.iter().zip(probe.as_slice()).map(|(t, p)| t * p).sum();
    assert!((st.v - (mean - 1.0)).abs() < 1e-3);
}

#[test]
fn inner_descent_in_theta_is_monotone() {
    let mut rng = seeded_rng(4);
    let chain = TabularChain::random_ergodic(6, &mut rng);
    let ds = chain_dataset(&chain, &[1.0 / 6.0; 6], 300, &mut rng);
    let model = RatioModel::new(Architecture::tabular(6), &mut rng).unwrap();
    let cfg = VpmConfig {
        lr_theta: 1e-3,
        ..tabular_cfg()
    };
    let mut st = SaddleState::new(model);
    st.v = 0.1;
    let mb = ds.full_batch();
    let mut last = objective(&st, &mb, None, &cfg);
    for _ in 0..200 {
        let lg = loss_and_grads(&st, &mb, None, &cfg).unwrap();
        let step: Vec<f64> = lg.g_theta.g.iter().map(|g| -cfg.lr_theta * g).collect();
        st.model.apply_update(&step).unwrap();
        let j = objective(&st, &mb, None, &cfg);
        assert!(j <= last + 1e-15, "{j} > {last}");
        last = j;
    }
}

#[test]
fn zero_inner_steps_leave_state_unchanged() {
    let mut rng = seeded_rng(5);
    let model = RatioModel::new(Architecture::mlp(1, &[4], Activation::Relu), &mut rng).unwrap();
    let ds = TransitionDataset::from_flat(1, vec![0.5, 1.5], vec![1.0, 0.0], None).unwrap();
    let cfg = VpmConfig {
        inner_steps: 0,
        ..VpmConfig::default()
    };
    let mut st = SaddleState::new(model.clone());
    let out = inner_optimize(&mut st, &ds, None, &cfg, &mut rng).unwrap();
    assert!(out.is_none());
    assert_eq!(st.model, model);
    assert_eq!(st.v, 0.0);
}

#[test]
fn runs_are_deterministic() {
    let mut rng = seeded_rng(6);
    let xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
    let xps: Vec<f64> = xs.iter().map(|x| 0.5 * x + 0.2).collect();
    let ds = TransitionDataset::from_flat(1, xs, xps, None).unwrap();
    let cfg = VpmConfig {
        outer_steps: 3,
        inner_steps: 10,
        batch: BatchSize::Sampled(32),
        seed: 9,
        ..VpmConfig::default()
    };
    let model = RatioModel::new(Architecture::mlp(1, &[8], Activation::Relu), &mut seeded_rng(1)).unwrap();
    let a = run_vpm(&ds, model.clone(), &cfg).unwrap();
    let b = run_vpm(&ds, model, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(a.diagnostics.rows.len(), 3);
}

#[test]
fn exact_step_equals_damped_ratio_power_step() {
    let mut rng = seeded_rng(7);
    for _ in 0..5 {
        let chain = TabularChain::random_ergodic(8, &mut rng);
        let ds = chain_dataset(&chain, &[0.125; 8], 2000, &mut rng);
        let (joint, probe) = empirical_joint_from_data(&ds, 8).unwrap();
        let raw: Vec<f64> = (0..8).map(|_| rng.random_range(0.2..2.0)).collect();
        let norm: f64 = raw.iter().zip(probe.as_slice()).map(|(t, p)| t * p).sum();
        let tau_t: Vec<f64> = raw.iter().map(|t| t / norm).collect();
        let model = RatioModel::tabular_from_values(vec![8], &tau_t).unwrap();
        let solver = ExactSolver::new(&model, &ds, None).unwrap();
        let alpha = rng.random_range(0.1..1.0);
        let step = solver.solve(&tau_t, alpha, 1.0, 1.0).unwrap();
        let power = ratio_power_step(&joint, &probe, &RatioVector::new(tau_t.clone()).unwrap()).unwrap();
        for i in 0..8 {
            let expected = (1.0 - alpha) * tau_t[i] + alpha * power.as_slice()[i];
            assert!((step.tau[i] - expected).abs() < 1e-12);
        }
        assert!(step.v.abs() < 1e-12);
    }
}

#[test]
fn stationary_probe_gives_unit_ratio() {
    // The spread of the empirical fixed point around 1 is pure sampling
    // noise; over random 10-state chains at n = 50 000 its max deviation
    // exceeds 0.05 for roughly one chain in five, so the instance is pinned.
    let mut rng = seeded_rng(3);
    let chain = TabularChain::random_ergodic(10, &mut rng);
    let (mu, _) = crate::tabular::solve_stationary(&chain, 1e-14, 100_000).unwrap();
    let ds = chain_dataset(&chain, &mu, 50_000, &mut rng);
    let model = RatioModel::new(Architecture::tabular(10), &mut rng).unwrap();
    let cfg = VpmConfig {
        outer_steps: 200,
        inner_solver: InnerSolver::Exact,
        ..tabular_cfg()
    };
    let run = run_vpm(&ds, model, &cfg).unwrap();
    let tau = run.model.tabular_values().unwrap();
    assert!(tau.iter().all(|t| (t - 1.0).abs() < 0.05), "{tau:?}");
    let mean = run.diagnostics.rows.last().unwrap().mean_tau;
    assert!((0.95..=1.05).contains(&mean));

    // Same answer as iterating the ratio power step on the empirical joint.
    let (joint, probe) = empirical_joint_from_data(&ds, 10).unwrap();
    let mut oracle = RatioVector::ones(10);
    for _ in 0..200 {
        oracle = ratio_power_step(&joint, &probe, &oracle).unwrap();
    }
    for (a, b) in tau.iter().zip(oracle.as_slice()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn gamma_zero_recovers_initial_ratio_by_descent() {
    let mut rng = seeded_rng(9);
    let chain = TabularChain::random_ergodic(4, &mut rng);
    let ds = chain_dataset(&chain, &[0.25; 4], 400, &mut rng);
    let (_, probe) = empirical_joint_from_data(&ds, 4).unwrap();
    let init = InitialTermSpec::new(1, vec![0.0, 0.0, 1.0, 2.0, 2.0, 3.0]).unwrap();
    let m0 = [2.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
    let model = RatioModel::new(Architecture::tabular(4), &mut rng).unwrap();
    let cfg = VpmConfig {
        outer_steps: 1,
        inner_steps: 30_000,
        lr_theta: 1.0,
        lr_v: 0.5,
        gamma: Some(0.0),
        ..tabular_cfg()
    };
    let run = run_vpm_discounted(&ds, &init, model, &cfg).unwrap();
    let tau = run.model.tabular_values().unwrap();
    for i in 0..4 {
        let expected = m0[i] / probe.as_slice()[i];
        assert!((tau[i] - expected).abs() < 1e-3, "{tau:?} vs {expected}");
    }
}

#[test]
fn high_discount_approaches_stationary_ratio() {
    let mut rng = seeded_rng(10);
    let chain = TabularChain::random_ergodic(6, &mut rng);
    let ds = chain_dataset(&chain, &[1.0 / 6.0; 6], 20_000, &mut rng);
    let init = InitialTermSpec::new(1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let base = VpmConfig {
        outer_steps: 3000,
        inner_solver: InnerSolver::Exact,
        ..tabular_cfg()
    };
    let model = RatioModel::new(Architecture::tabular(6), &mut rng).unwrap();
    let stationary = run_vpm(&ds, model.clone(), &base).unwrap();
    let discounted = run_vpm_discounted(
        &ds,
        &init,
        model,
        &VpmConfig {
            gamma: Some(0.99),
            ..base
        },
    )
    .unwrap();
    let a = stationary.model.tabular_values().unwrap();
    let b = discounted.model.tabular_values().unwrap();
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 0.05, "{a:?} vs {b:?}");
}

#[test]
fn exact_solver_rejects_continuous_models() {
    let mut rng = seeded_rng(11);
    let ds = TransitionDataset::from_flat(1, vec![0.0], vec![0.0], None).unwrap();
    let model = RatioModel::new(Architecture::mlp(1, &[2], Activation::Relu), &mut rng).unwrap();
    let cfg = VpmConfig {
        inner_solver: InnerSolver::Exact,
        ..VpmConfig::default()
    };
    assert!(run_vpm(&ds, model, &cfg).is_err());
}

#[test]
fn config_validation() {
    assert!(VpmConfig::default().validate().is_ok());
    let bad = [
        VpmConfig {
            lambda: 0.0,
            ..VpmConfig::default()
        },
        VpmConfig {
            outer_steps: 0,
            ..VpmConfig::default()
        },
        VpmConfig {
            gamma: Some(1.0),
            ..VpmConfig::default()
        },
        VpmConfig {
            lr_v: -1.0,
            ..VpmConfig::default()
        },
        VpmConfig {
            batch: BatchSize::Sampled(0),
            ..VpmConfig::default()
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn damping_schedules() {
    assert_eq!(Damping::InvSqrt.alpha(0), 1.0);
    assert!((Damping::InvSqrt.alpha(3) - 0.5).abs() < 1e-15);
    assert_eq!(Damping::Constant { alpha: 0.3 }.alpha(10), 0.3);
    assert_eq!(Damping::Undamped.alpha(10), 1.0);
}

#[test]
fn self_normalized_estimates() {
    let mut rng = seeded_rng(12);
    let xs: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ds = TransitionDataset::from_flat(1, xs.clone(), xs.clone(), None).unwrap();
    let mut model = RatioModel::new(Architecture::mlp(1, &[5], Activation::Relu), &mut rng).unwrap();
    let d: Vec<f64> = (0..model.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    model.apply_update(&d).unwrap();
    let c = estimate_expectation(&model, &ds, |_| 2.5).unwrap();
    assert!((c - 2.5).abs() < 1e-14);

    let arch = Architecture::tabular(3);
    let ones = RatioModel::new(arch, &mut rng).unwrap();
    let ds = TransitionDataset::from_flat(1, vec![0.0, 1.0, 2.0, 2.0], vec![0.0; 4], None).unwrap();
    let m = estimate_expectation(&ones, &ds, |x| x[0]).unwrap();
    assert!((m - 1.25).abs() < 1e-14);
    let u = estimate_expectation_unnormalized(&ones, &ds, |x| x[0]).unwrap();
    assert!((u - 1.25).abs() < 1e-14);
}

#[test]
fn weighted_sample_normalizes_and_resamples() {
    let model = RatioModel::tabular_from_values(vec![3], &[1.0, 2.0, 5.0]).unwrap();
    let ws = WeightedSample::from_model(&model, vec![0.0, 1.0, 2.0]).unwrap();
    assert!((ws.normalized().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(ws.raw().iter().all(|&w| w > 0.0));
    let mut rng = seeded_rng(13);
    let draws = ws.resample(80_000, &mut rng);
    let frac = draws.iter().filter(|&&x| x == 2.0).count() as f64 / 80_000.0;
    assert!((frac - 0.625).abs() < 0.01);
}

#[test]
fn diagnostics_csv_layout() {
    let diag = Diagnostics {
        rows: vec![
            DiagnosticsRow {
                outer_step: 0,
                objective: -0.5,
                mean_tau: 1.0,
                v: 0.0,
                alpha: 1.0,
                metrics: vec![("kl".into(), 0.25)],
            },
            DiagnosticsRow {
                outer_step: 1,
                objective: -0.6,
                mean_tau: 0.99,
                v: 0.01,
                alpha: 0.5,
                metrics: vec![],
            },
        ],
    };
    let mut buf = Vec::new();
    diag.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "outer_step,J,E_p_tau,v,alpha,kl");
    assert_eq!(lines[1], "0,-0.5,1.0,0.0,1.0,0.25");
    assert_eq!(lines[2], "1,-0.6,0.99,0.01,0.5,");
}

