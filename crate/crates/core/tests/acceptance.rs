//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mixreg::harness::{self, experiment, Cell, ExperimentConfig, Technique};
use mixreg::math::{LayerShape, ParamLayout, ParamVector};
use mixreg::mixreg::{Anchor, Granularity, MaskStream, MixPolicy, Regularizer};
use mixreg::net::{self, Activation, Batch, Head, HiddenLayer, NetworkSpec, Targets};
use mixreg::optim::{
    adam_step, lr_at, train_step, AdamParams, AdamState, NetObjective, TrainConfig,
};
use mixreg::theory::{self, verify, QuadraticLoss, SgdSettings};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn desk_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml");
    ExperimentConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Mask units listed straight from the layout: every weight alone, or every
/// input column of a layer's weight matrix.
fn units(layout: &ParamLayout, granularity: Granularity, excluded: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for l in layout.layers() {
        if excluded.contains(&l.id) {
            continue;
        }
        let (rows, cols) = (l.shape.out_dim, l.shape.in_dim);
        match granularity {
            Granularity::PerParameter => out.extend(l.weights().map(|i| vec![i])),
            Granularity::PerSourceNeuron => {
                for c in 0..cols {
                    out.push((0..rows).map(|r| l.weight_index(r, c)).collect());
                }
            }
        }
    }
    out
}

/// Expectation over all keep/drop patterns of `f(phi)`, summed naively.
fn brute_force<F: Fn(&[f64]) -> f64>(
    w: &[f64],
    u: &[f64],
    units: &[Vec<usize>],
    p: f64,
    f: F,
) -> f64 {
    let keep = 1.0 - p;
    let mut total = 0.0;
    for bits in 0u64..(1 << units.len()) {
        let mut phi = w.to_vec();
        let mut prob = 1.0;
        for (k, unit) in units.iter().enumerate() {
            let kept = bits >> k & 1 == 1;
            prob *= if kept { keep } else { p };
            for &i in unit {
                phi[i] = if kept {
                    u[i] + (w[i] - u[i]) / keep
                } else {
                    u[i]
                };
            }
        }
        total += prob * f(&phi);
    }
    total
}

fn quad_value(a: &[f64], w_star: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += (x[i] - w_star[i]) * a[i * d + j] * (x[j] - w_star[j]);
        }
    }
    0.5 * s
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut enum_err, mut oracle_err, mut worst_slack, mut iso_slack) =
        (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    let mut cases = 0;
    for granularity in [Granularity::PerParameter, Granularity::PerSourceNeuron] {
        for k in 0..60 {
            let p = GRID[k % GRID.len()];
            let inst = verify::random_instance(&mut rng, granularity, p, 12).unwrap();
            let quad = &inst.quad;
            let exact =
                theory::enum_expected_loss(|x| quad.value(x.values()), &inst.w, &inst.policy)
                    .unwrap();
            let closed = theory::quadratic_expected_loss(quad, &inst.w, &inst.policy).unwrap();
            let u = units(inst.w.layout(), granularity, &[]);
            let naive = brute_force(inst.w.values(), inst.u.values(), &u, p, |x| {
                quad_value(quad.matrix(), quad.minimizer(), x)
            });
            enum_err = enum_err.max((exact - closed).abs());
            oracle_err = oracle_err.max((naive - closed).abs());
            worst_slack = worst_slack.min(
                theory::check_lower_bound(quad, &inst.w, &inst.policy)
                    .unwrap()
                    .slack,
            );

            let m = rng.random_range(0.2..3.0);
            let iso = QuadraticLoss::isotropic(m, quad.minimizer().to_vec()).unwrap();
            iso_slack = iso_slack.max(
                theory::check_lower_bound(&iso, &inst.w, &inst.policy)
                    .unwrap()
                    .slack
                    .abs(),
            );
            cases += 1;
        }
    }
    let t = start.elapsed();
    let passed = enum_err <= 1e-12
        && oracle_err <= 1e-12
        && worst_slack >= -1e-12
        && iso_slack <= 1e-12
        && within(t, 10);
    outcome(
        passed,
        format!(
            "{cases} quadratics: |enum - closed| {enum_err:.2e}, |naive - closed| {oracle_err:.2e} (tol 1e-12); \
             min slack {worst_slack:.2e} (>= -1e-12); |slack| at A=mI {iso_slack:.2e} (tol 1e-12); {t:.2?} (< 10s)"
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut mean_err, mut second_err, mut excl_err) = (0.0f64, 0.0f64, 0.0f64);
    for granularity in [Granularity::PerParameter, Granularity::PerSourceNeuron] {
        for k in 0..40 {
            let p = GRID[k % GRID.len()];
            let inst = verify::random_instance(&mut rng, granularity, p, 12).unwrap();
            let mo = theory::enum_moments(&inst.w, &inst.policy).unwrap();
            for (e, w) in mo.mean.iter().zip(inst.w.values()) {
                mean_err = mean_err.max((e - w).abs());
            }
            let dist: f64 = inst
                .w
                .values()
                .iter()
                .zip(inst.u.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let coeff = p / (1.0 - p);
            second_err = second_err.max((mo.deviation_sq - coeff * dist).abs());
        }
    }
    // Excluding the first layer: only the second layer's coordinates count,
    // and moving excluded weights leaves the second moment unchanged.
    let layout = std::sync::Arc::new(ParamLayout::new(&[
        LayerShape::weights_only(3, 2),
        LayerShape::weights_only(2, 3),
    ]));
    for k in 0..20 {
        let p = GRID[k % GRID.len()];
        let d = layout.total_len();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let w = ParamVector::from_values(layout.clone(), draw(&mut rng)).unwrap();
        let u = ParamVector::from_values(layout.clone(), draw(&mut rng)).unwrap();
        let policy = MixPolicy::mixout(Anchor::Explicit(u.clone()), p)
            .unwrap()
            .excluding([0]);
        let second = layout.layers()[1].weights();
        let restricted: f64 = second
            .clone()
            .map(|i| (w.values()[i] - u.values()[i]).powi(2))
            .sum();
        let mo = theory::enum_moments(&w, &policy).unwrap();
        excl_err = excl_err.max((mo.deviation_sq - p / (1.0 - p) * restricted).abs());
        let mut moved = w.values().to_vec();
        for i in layout.layers()[0].weights() {
            moved[i] += 10.0;
        }
        let moved = ParamVector::from_values(layout.clone(), moved).unwrap();
        let mo2 = theory::enum_moments(&moved, &policy).unwrap();
        excl_err = excl_err.max((mo2.deviation_sq - mo.deviation_sq).abs());
    }
    let t = start.elapsed();
    let passed = mean_err <= 1e-12 && second_err <= 1e-12 && excl_err <= 1e-12 && within(t, 5);
    outcome(
        passed,
        format!(
            "|E[phi] - w| {mean_err:.2e}, |E||phi-w||^2 - s2/mu2 ||w-u||^2| {second_err:.2e}, \
             exclusion {excl_err:.2e} (tol 1e-12); {t:.2?} (< 5s)"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for granularity in [Granularity::PerParameter, Granularity::PerSourceNeuron] {
        for &p in &GRID {
            for _ in 0..4 {
                let layout = verify::random_layout(&mut rng, 12);
                let d = layout.total_len();
                let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
                };
                let m = rng.random_range(0.2..3.0);
                let quad = QuadraticLoss::isotropic(m, draw(&mut rng)).unwrap();
                let w = ParamVector::from_values(layout.clone(), draw(&mut rng)).unwrap();
                let u = ParamVector::from_values(layout.clone(), draw(&mut rng)).unwrap();
                let mut policy = MixPolicy::mixout(Anchor::Explicit(u.clone()), p).unwrap();
                policy.granularity = granularity;
                let penalty = theory::enum_expected_loss(|x| quad.value(x.values()), &w, &policy)
                    .unwrap()
                    - quad.value(w.values()).unwrap();
                let dist: f64 = w
                    .values()
                    .iter()
                    .zip(u.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                worst = worst.max((penalty - m * p / (2.0 * (1.0 - p)) * dist).abs());
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("|penalty - m p/(2(1-p)) ||w-u||^2| max {worst:.2e} (tol 1e-12)"),
    )
}

fn hidden(width: usize, activation: Activation, layer_norm: bool) -> HiddenLayer {
    HiddenLayer {
        width,
        activation,
        layer_norm,
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, spec: &NetworkSpec) -> Batch {
    let inputs: Vec<f64> = (0..n * spec.input_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let targets = match spec.head {
        Head::SoftmaxXent { classes } => {
            Targets::Classes((0..n).map(|_| rng.random_range(0..classes)).collect())
        }
        Head::Mse { outputs } => Targets::Values(
            (0..n * outputs)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        ),
    };
    Batch::new(inputs, spec.input_dim, targets).unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let softmax = Head::SoftmaxXent { classes: 3 };
    let mse = Head::Mse { outputs: 2 };
    let matrix: Vec<(&str, NetworkSpec)> = vec![
        (
            "linear softmax",
            NetworkSpec {
                input_dim: 6,
                hidden: vec![],
                head: softmax,
            },
        ),
        (
            "linear mse",
            NetworkSpec {
                input_dim: 6,
                hidden: vec![],
                head: mse,
            },
        ),
        (
            "relu softmax",
            NetworkSpec {
                input_dim: 6,
                hidden: vec![hidden(8, Activation::Relu, false)],
                head: softmax,
            },
        ),
        ("relu+ln softmax", NetworkSpec::mlp(6, &[8, 4], 3)),
        (
            "relu+ln mse",
            NetworkSpec {
                input_dim: 6,
                hidden: vec![
                    hidden(8, Activation::Relu, true),
                    hidden(5, Activation::Relu, true),
                ],
                head: mse,
            },
        ),
        (
            "identity+ln mse",
            NetworkSpec {
                input_dim: 6,
                hidden: vec![hidden(7, Activation::Identity, true)],
                head: mse,
            },
        ),
        (
            "mixed softmax",
            NetworkSpec {
                input_dim: 6,
                hidden: vec![
                    hidden(8, Activation::Identity, false),
                    hidden(6, Activation::Relu, true),
                ],
                head: softmax,
            },
        ),
    ];
    let (mut worst, mut weakest_fault) = (0.0f64, f64::INFINITY);
    let mut worst_name = "";
    for (k, (name, spec)) in matrix.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + k as u64);
        let w = net::random_params(spec, 0.5, &mut rng);
        let batch = random_batch(&mut rng, 16, spec);
        let err = net::grad_check(spec, &w, &batch, 1e-5, &mut rng).unwrap();
        if err > worst {
            worst = err;
            worst_name = name;
        }
        let (_, g) = net::loss_and_grad(spec, &w, &batch).unwrap();
        let bad: Vec<f64> = g.values().iter().map(|v| v * 1.01).collect();
        let coords = net::grad_check_coordinates(w.layout(), 200, &mut rng);
        weakest_fault = weakest_fault
            .min(net::compare_gradient(spec, &w, &batch, &bad, &coords, 1e-5).unwrap());
    }
    let t = start.elapsed();
    let passed = worst < 1e-6 && weakest_fault > 1e-3 && within(t, 30);
    outcome(
        passed,
        format!(
            "{} architectures: max rel err {worst:.2e} ({worst_name}) (< 1e-6, h=1e-5); \
             x1.01 fault min rel err {weakest_fault:.2e} (> 1e-3); {t:.2?} (< 30s)",
            matrix.len()
        ),
    )
}

/// `(G + r diag G) w = b + r diag(G) u` for a two-column design, by Cramer's rule.
fn ls_oracle(x: &[f64], y: &[f64], u: &[f64], p: f64) -> [f64; 2] {
    let r = p / (1.0 - p);
    let (mut g, mut b) = ([0.0f64; 4], [0.0f64; 2]);
    for (row, t) in x.chunks_exact(2).zip(y) {
        for i in 0..2 {
            b[i] += row[i] * t;
            for j in 0..2 {
                g[i * 2 + j] += row[i] * row[j];
            }
        }
    }
    let a = [g[0] * (1.0 + r), g[1], g[2], g[3] * (1.0 + r)];
    let rhs = [b[0] + r * g[0] * u[0], b[1] + r * g[3] * u[1]];
    let det = a[0] * a[3] - a[1] * a[2];
    [
        (rhs[0] * a[3] - a[1] * rhs[1]) / det,
        (a[0] * rhs[1] - a[2] * rhs[0]) / det,
    ]
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let grid = [0.0, 0.3, 0.6, 0.9];
    let demo = theory::ls_regression_demo(0, &grid, None).unwrap();
    let devs: Vec<f64> = demo.rows.iter().map(|r| r.dev_from_u).collect();
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    let mut oracle_err = 0.0f64;
    let mut sgd_err = 0.0f64;
    let settings = SgdSettings::default();
    for row in &demo.rows {
        let want = ls_oracle(&demo.problem.x, &demo.problem.y, &demo.u, row.p);
        for (a, b) in row.w_hat.iter().zip(want) {
            oracle_err = oracle_err.max(((a - b) / b).abs());
        }
        let sgd = theory::ls_sgd_solve(&demo.problem, &demo.u, row.p, &settings, 7).unwrap();
        for (a, b) in sgd.iter().zip(&row.w_hat) {
            sgd_err = sgd_err.max(((a - b) / b).abs());
        }
    }
    let hand = theory::RegressionProblem::new(vec![1.0, -1.0], vec![2.0, -2.0], 1).unwrap();
    let w = theory::ls_mixout_solve(&hand, &[0.0], 0.5).unwrap();
    let hand_err = (w[0] - 1.0).abs();
    let t = start.elapsed();
    let passed =
        decreasing && oracle_err <= 1e-12 && sgd_err <= 1e-3 && hand_err <= 1e-12 && within(t, 10);
    let devs: Vec<String> = devs.iter().map(|d| format!("{d:.4}")).collect();
    outcome(
        passed,
        format!(
            "||w(p)-u|| over {{0,.3,.6,.9}} = [{}] strictly decreasing: {decreasing}; closed form vs oracle {oracle_err:.1e} \
             (tol 1e-12); SGD max rel err {sgd_err:.2e} (tol 1e-3); hand example |w-1| {hand_err:.1e} (tol 1e-12); {t:.2?} (< 10s)",
            devs.join(", ")
        ),
    )
}

/// Non-increasing (sign = 1) or non-decreasing (sign = -1) with at most one
/// adjacent violation of at most 5%.
fn trend_ok(values: &[f64], sign: f64) -> (bool, usize, f64) {
    let mut count = 0;
    let mut largest = 0.0f64;
    for w in values.windows(2) {
        let rise = sign * (w[1] - w[0]) / w[0].abs();
        if rise > 0.0 {
            count += 1;
            largest = largest.max(rise);
        }
    }
    (
        values.iter().all(|v| v.is_finite()) && count <= 1 && largest <= 0.05,
        count,
        largest,
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = desk_config();
    let data = harness::prepare_data(&cfg).unwrap();
    let pre = harness::pretrain(&cfg, &data).unwrap();
    let ckpt = pre.checkpoint;
    let result = harness::sweep(&cfg, &data, &ckpt).unwrap();
    let stat = |tech: Technique, p: f64, f: &dyn Fn(&harness::RunRecord) -> f64| {
        median(
            result
                .records
                .iter()
                .filter(|r| r.technique == tech && r.p == p)
                .map(f)
                .collect(),
        )
    };
    let dev = |tech| -> Vec<f64> {
        GRID.iter()
            .map(|&p| stat(tech, p, &|r| r.deviation_sq))
            .collect()
    };
    let drop = |tech, p| ckpt.source_val_accuracy - stat(tech, p, &|r| r.source_acc);
    let (mix_ok, mix_n, mix_v) = trend_ok(&dev(Technique::Mixout), 1.0);
    let (drop_ok, drop_n, drop_v) = trend_ok(&dev(Technique::Dropout), -1.0);
    let retention: Vec<(f64, f64, f64)> = [0.1, 0.2, 0.3]
        .iter()
        .map(|&p| (p, drop(Technique::Mixout, p), drop(Technique::Dropout, p)))
        .collect();
    let retain_ok = retention.iter().all(|&(_, m, d)| m <= d);
    let t = start.elapsed();
    let passed = mix_ok && drop_ok && retain_ok && within(t, 600);
    let ret: Vec<String> = retention
        .iter()
        .map(|(p, m, d)| format!("p={p}: {m:.4}<={d:.4}"))
        .collect();
    outcome(
        passed,
        format!(
            "restarts {}, source acc {:.4}; mixout dev non-increasing ({mix_n} violation, max {:.1}%), \
             dropout dev non-decreasing ({drop_n} violation, max {:.1}%) (<= 1 of <= 5%); source drop {}; {t:.1?} (< 600s)",
            cfg.sweep.restarts,
            ckpt.source_val_accuracy,
            100.0 * mix_v,
            100.0 * drop_v,
            ret.join(", ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut cfg = desk_config();
    cfg.data.target_train_per_class = Some(5);
    cfg.sweep.restarts = 20;
    let data = harness::prepare_data(&cfg).unwrap();
    let ckpt = harness::pretrain(&cfg, &data).unwrap().checkpoint;
    let threshold = experiment::degenerate_threshold(&cfg, &data);
    let degenerate = |cell: Cell| {
        (0..cfg.sweep.restarts)
            .filter(|&r| {
                let s = harness::finetune(&cfg, &data, &ckpt, &cell, r)
                    .unwrap()
                    .dev_score;
                !(s > threshold)
            })
            .count()
    };
    let mix = degenerate(Cell {
        technique: Technique::Mixout,
        p: 0.7,
    });
    let drop = degenerate(Cell {
        technique: Technique::Dropout,
        p: 0.1,
    });
    let t = start.elapsed();
    outcome(
        mix <= drop && within(t, 900),
        format!(
            "{} target examples, 20 restarts, threshold {threshold:.3}: degenerate mixout(0.7) {mix} <= dropout(0.1) {drop}; \
             {t:.1?} (< 900s)",
            data.target_train.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let spec = NetworkSpec::mlp(5, &[6, 4], 3);
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let w0 = net::random_params(&spec, 0.5, &mut rng);
    let batches: Vec<Batch> = (0..4).map(|_| random_batch(&mut rng, 8, &spec)).collect();
    let hp = AdamParams::default();
    let lr = 0.01;
    let steps = 60u64;
    let stream = MaskStream::new(42);
    let p = 0.5;

    // Origin-anchored mixout against activation dropout built from the same draws.
    let reg = Regularizer::new(
        MixPolicy::mixout(Anchor::Origin, p).unwrap(),
        layout.clone(),
    )
    .unwrap();
    let (mut w_mix, mut w_drop) = (w0.clone(), w0.clone());
    let (mut s_mix, mut s_drop) = (AdamState::new(w0.len()), AdamState::new(w0.len()));
    let mut dropout_ok = true;
    for step in 0..steps {
        let batch = &batches[step as usize % batches.len()];
        train_step(
            &NetObjective { spec: &spec, batch },
            &mut w_mix,
            &reg,
            &mut s_mix,
            lr,
            &hp,
            &stream,
            step,
            None,
        )
        .unwrap();
        let scales: Vec<Option<Vec<f64>>> = layout
            .layers()
            .iter()
            .map(|l| {
                let mut r = stream.rng(step, l.id);
                Some(
                    (0..l.shape.in_dim)
                        .map(|_| {
                            if r.random::<f64>() < 1.0 - p {
                                1.0 / (1.0 - p)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )
            })
            .collect();
        let (_, g) = net::loss_and_grad_raw(&spec, &w_drop, batch, Some(&scales)).unwrap();
        let d = adam_step(&mut s_drop, &g, lr, &hp).unwrap();
        for (x, d) in w_drop.values_mut().iter_mut().zip(d) {
            *x += d;
        }
        dropout_ok &= w_mix
            .values()
            .iter()
            .zip(w_drop.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let moved = w_mix.values().iter().zip(w0.values()).any(|(a, b)| a != b);

    // p = 0 without decay against plain Adam.
    let reg = Regularizer::new(
        MixPolicy::mixout(Anchor::PretrainedSnapshot(w0.clone()), 0.0).unwrap(),
        layout.clone(),
    )
    .unwrap();
    let (mut w_mix, mut w_plain) = (w0.clone(), w0.clone());
    let (mut s_mix, mut s_plain) = (AdamState::new(w0.len()), AdamState::new(w0.len()));
    let mut adam_ok = true;
    for step in 0..steps {
        let batch = &batches[step as usize % batches.len()];
        train_step(
            &NetObjective { spec: &spec, batch },
            &mut w_mix,
            &reg,
            &mut s_mix,
            lr,
            &hp,
            &stream,
            step,
            None,
        )
        .unwrap();
        let (_, g) = net::loss_and_grad_raw(&spec, &w_plain, batch, None).unwrap();
        let d = adam_step(&mut s_plain, &g, lr, &hp).unwrap();
        for (x, d) in w_plain.values_mut().iter_mut().zip(d) {
            *x += d;
        }
        adam_ok &= w_mix
            .values()
            .iter()
            .zip(w_plain.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    outcome(
        dropout_ok && adam_ok && moved,
        format!(
            "3-layer net, {steps} steps: origin mixout == inverted dropout (p={p}) bitwise: {dropout_ok}; \
             p=0, lambda=0 == plain Adam bitwise: {adam_ok}"
        ),
    )
}

fn run_cli(args: &[&std::ffi::OsStr]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mixreg"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_config();
    cfg.data.target_train_per_class = Some(20);
    cfg.pretrain.epoch_grid = vec![3];
    cfg.finetune.epochs = 3;
    cfg.sweep.p_grid = vec![0.3, 0.7];
    cfg.sweep.restarts = 2;
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    let mut ran = true;
    for out in &outs {
        ran &= run_cli(&[
            "sweep".as_ref(),
            "--config".as_ref(),
            cfg_path.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
    }
    let read = |p: PathBuf| std::fs::read(p).unwrap_or_default();
    let runs_a = read(outs[0].join("runs.csv"));
    let identical = ran && !runs_a.is_empty() && runs_a == read(outs[1].join("runs.csv"));
    let summary = read(outs[0].join("summary.csv"));
    std::fs::write(outs[0].join("summary.csv"), b"").unwrap();
    let reported = run_cli(&["report".as_ref(), outs[0].as_os_str()]);
    let recomputed =
        reported && !summary.is_empty() && read(outs[0].join("summary.csv")) == summary;
    outcome(
        identical && recomputed,
        format!(
            "two sweeps ({} runs.csv bytes) byte-identical: {identical}; report rewrites summary.csv byte-identical: {recomputed}",
            runs_a.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let lr = 3e-4;
    let cfg = TrainConfig::new(lr, 1);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for total in [10u64, 100, 1000] {
        let w = (total / 10) as f64;
        let tf = total as f64;
        let oracle = |t: f64| {
            if t <= w {
                lr * t / w
            } else {
                lr * (tf - t) / (tf - w)
            }
        };
        for t in [0.0, w / 2.0, w, (w + tf) / 2.0, tf] {
            let got = lr_at(&cfg, t, total).unwrap();
            worst = worst.max((got - oracle(t)).abs());
            checked += 1;
        }
        worst = worst.max((lr_at(&cfg, w, total).unwrap() - lr).abs());
        worst = worst.max((lr_at(&cfg, w / 2.0, total).unwrap() - lr / 2.0).abs());
        worst = worst.max((lr_at(&cfg, (w + tf) / 2.0, total).unwrap() - lr / 2.0).abs());
        worst = worst.max(
            lr_at(&cfg, 0.0, total)
                .unwrap()
                .abs()
                .max(lr_at(&cfg, tf, total).unwrap().abs()),
        );
    }
    outcome(
        worst == 0.0,
        format!("{checked} points at T in {{10,100,1000}}, warmup 10%: max |lr_at - expected| {worst:.1e} (exact)"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("enumeration equals closed form; lower bound", criterion_1),
        ("mixing moments and exclusion", criterion_2),
        ("isotropic penalty coefficient", criterion_3),
        ("gradient check matrix", criterion_4),
        ("least-squares demo", criterion_5),
        ("transfer trends", criterion_6),
        ("stability on a tiny target", criterion_7),
        ("special-case collapse", criterion_8),
        ("reproducibility", criterion_9),
        ("learning-rate schedule", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!(
            "criterion {:>2} {} {name}: {}",
            k + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
