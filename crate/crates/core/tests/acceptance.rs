//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{bowl_hyper, Bowl};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revmem::check::mode_gradient_error;
use revmem::cli::{eer, eer_canonical, memreport, quantbench, train, Command, NetSource, RunConfig};
use revmem::optim::{OptimKind, Optimizer};
use revmem::rev::{gpus_required, plan, Category, Mode, ResidualFn, ResidualKind, RevBlock};
use revmem::zoo::{build, build_spec, registry, toy_spec, NetworkSpec, PoolMethod, RevType, Stage};
use revmem::{Network, Param, Scalar, Shape, Tensor};

type Outcome = (bool, String);

/// Random mixed network: per-stage branch kind, Type I or II transitions.
fn random_spec(rng: &mut ChaCha8Rng, id: usize) -> NetworkSpec {
    let stages_n = rng.random_range(2..=3);
    let ty = if rng.random_bool(0.5) { RevType::TypeII } else { RevType::TypeI };
    let mut w = 8;
    let mut stages = vec![Stage::Conv { channels: w, kernel: 3, stride: 1 }];
    for i in 0..stages_n {
        let kind = ResidualKind::ALL[rng.random_range(0..3)];
        if i > 0 {
            match ty {
                RevType::TypeII => {
                    stages.push(Stage::Conv { channels: w / 2, kernel: 3, stride: 1 });
                    stages.push(Stage::RevDs { r: 2, c_out: 2 * w });
                }
                RevType::TypeI if kind == ResidualKind::DfBottleneck => {
                    stages.push(Stage::Conv { channels: 2 * w, kernel: 3, stride: 2 });
                }
                RevType::TypeI => stages.push(Stage::Ds { kind, channels: 2 * w / kind.expansion() }),
            }
            w *= 2;
        }
        stages.push(Stage::RevRes { kind, c_half: w / 2, repeat: rng.random_range(1..=2) });
    }
    let mut spec = NetworkSpec { name: format!("mixed-{id}"), stages, embedding_dim: 16, feat_dim: 16 };
    let pooled = spec.clone();
    spec.stages.push(Stage::Pooling { method: PoolMethod::Gsp });
    spec.stages.push(Stage::Fc { d_in: 0, d_out: 16 });
    let c_f = pooled.validate().expect("trunk validates");
    if let Some(Stage::Fc { d_in, .. }) = spec.stages.last_mut() {
        *d_in = 2 * c_f.final_channels * c_f.final_freq;
    }
    spec
}

fn gradient_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst64, mut worst32) = (0f64, 0f64);
    let mut kinds = std::collections::BTreeSet::new();
    let (mut with_rev_ds, nets) = (0, 24);
    for id in 0..nets {
        let spec = random_spec(&mut rng, id);
        for st in &spec.stages {
            match st {
                Stage::RevRes { kind, .. } => {
                    kinds.insert(kind.name());
                }
                Stage::RevDs { .. } => with_rev_ds += 1,
                _ => {}
            }
        }
        let net64: Network<f64> = build_spec(&spec, id as u64).expect("mixed spec builds");
        let net32: Network<f32> = build_spec(&spec, id as u64).expect("mixed spec builds");
        let x = Tensor::<f64>::randn(net64.input_shape(2, 8), 1.0, &mut rng);
        let dy = Tensor::<f64>::randn(net64.output_shape(x.shape()).unwrap(), 1.0, &mut rng);
        worst64 = worst64.max(mode_gradient_error(&net64, &x, &dy).unwrap());
        worst32 = worst32.max(mode_gradient_error(&net32, &x.cast(), &dy.cast()).unwrap());
    }
    let pass = worst64 <= 1e-6 && worst32 <= 1e-3 && kinds.len() == 3 && with_rev_ds > 0;
    (pass, format!("{nets} nets, kinds {kinds:?}, rev_ds in {with_rev_ds} transitions; max rel err f64 {worst64:.2e}, f32 {worst32:.2e}"))
}

fn inverse_error<S: Scalar>(kind: ResidualKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = if rng.random_bool(0.5) { 4 } else { 8 };
    let f = ResidualFn::<S>::reversible(kind, half, &mut rng).unwrap();
    let g = ResidualFn::<S>::reversible(kind, half, &mut rng).unwrap();
    let mut block = RevBlock::new(f, g).unwrap();
    let s = Shape::new(2, half, 6, 5);
    let (x1, x2) = (Tensor::randn(s, 1.0, &mut rng), Tensor::randn(s, 1.0, &mut rng));
    let (y1, y2, stats) = block.forward(&x1, &x2).unwrap();
    let (r1, r2) = block.inverse(&y1, &y2, &stats).unwrap();
    r1.max_abs_diff(&x1).unwrap().f64().max(r2.max_abs_diff(&x2).unwrap().f64())
}

fn inverse_reconstruction() -> Outcome {
    let (mut e32, mut e64) = (0f64, 0f64);
    for kind in ResidualKind::ALL {
        for i in 0..100u64 {
            e32 = e32.max(inverse_error::<f32>(kind, i));
            e64 = e64.max(inverse_error::<f64>(kind, i));
        }
    }
    (e32 <= 1e-4 && e64 <= 1e-12, format!("300 blocks; max |x - inv(fwd(x))| f32 {e32:.2e}, f64 {e64:.2e}"))
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn constant_activation_memory() -> Outcome {
    let depths = memreport::SWEEP_DEPTHS;
    let (mut rev, mut stored) = (Vec::new(), Vec::new());
    for d in depths {
        let spec = toy_spec(&[d / 2, d / 2], 16, ResidualKind::DfBottleneck, RevType::TypeII).unwrap();
        let net: Network<f32> = build_spec(&spec, 0).unwrap();
        let shape = net.input_shape(memreport::DEFAULT_BATCH, memreport::DEFAULT_FRAMES);
        rev.push(plan(&net, shape, Mode::Reversible).unwrap().activations);
        stored.push(plan(&net, shape, Mode::Stored).unwrap().activations as f64);
    }
    let xs: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
    let r2 = r_squared(&xs, &stored);
    let constant = rev.windows(2).all(|w| w[0] == w[1]);
    (constant && r2 >= 0.999, format!("reversible activations {rev:?} bytes; stored {stored:?}, R^2 {r2:.6}"))
}

fn resnet34_ledger() -> Outcome {
    let mut cfg = RunConfig::new(Command::Memreport);
    cfg.net = NetSource::Named("ResNet34".into());
    let net: Network<f32> = cfg.net.build(0).unwrap();
    let l = memreport::ledger(&net, &cfg, Mode::Stored).unwrap();
    let share = l.share(Category::Activations);
    (share >= 0.85, format!("batch 64, 80x200, stored: activations {:.2}% of {} bytes", 100.0 * share, l.total()))
}

fn optimizer_state_memory() -> Outcome {
    let mut worst = 0f64;
    for n in [1_000_000usize, 1_048_576, 1_000_001, 10_000_000] {
        for (dense, eight) in [(OptimKind::Sgd, OptimKind::Sgd8), (OptimKind::AdamW, OptimKind::Adam8)] {
            let a = Optimizer::<f32>::state_bytes_for(dense, 2048, &[n]);
            let b = Optimizer::<f32>::state_bytes_for(eight, 2048, &[n]);
            worst = worst.max(b as f64 / a as f64);
        }
    }
    // Live optimizer after one step must book the same bytes as the formula.
    let n = 1_000_000;
    let mut p = Param::<f32>::new(Tensor::zeros(Shape::flat(1, n)));
    p.grad.data_mut().iter_mut().enumerate().for_each(|(i, g)| *g = ((i % 97) as f32 - 48.0) * 1e-3);
    let mut opt = Optimizer::<f32>::new(OptimKind::Adam8, revmem::cli::default_hyper(OptimKind::Adam8)).unwrap();
    opt.step(&mut [&mut p]).unwrap();
    let live = opt.state_bytes() == Optimizer::<f32>::state_bytes_for(OptimKind::Adam8, 2048, &[n]);
    (worst <= 0.2505 && live, format!("max 8-bit/32-bit slot ratio {:.4}% (B=2048, n >= 1e6); live ledger matches: {live}", 100.0 * worst))
}

fn quantizer_correctness() -> Outcome {
    let n = 1_000_000;
    let (mut agree, mut total, mut violations, mut zeros) = (0f64, 0usize, 0usize, true);
    for (bi, b) in [1usize, 7, 2048, 5000].into_iter().enumerate() {
        for (di, dist) in quantbench::DISTRIBUTIONS.into_iter().enumerate() {
            let m = n / 3 + usize::from(di == 0);
            let values = quantbench::sample(dist, m, (10 * bi + di) as u64).unwrap();
            let row = quantbench::bench(dist, &values, b).unwrap();
            agree += row.oracle_agreement * m as f64;
            total += m;
            violations += row.bound_violations;
            zeros &= row.zeros_exact;
        }
    }
    let rate = agree / total as f64;
    (
        rate == 1.0 && violations == 0 && zeros,
        format!("{total} elements over B in {{1,7,2048,5000}}: oracle agreement {:.6}%, bound violations {violations}", 100.0 * rate),
    )
}

fn training_parity() -> Outcome {
    let rel = |a: f64, b: f64| (b - a).abs() / a;
    let bowl = Bowl::new(1000, 0);
    let pairs = [(OptimKind::Sgd, OptimKind::Sgd8), (OptimKind::AdamW, OptimKind::Adam8)];
    let mut pass = true;
    let mut detail = Vec::new();
    for (full, eight) in pairs {
        let a = bowl.minimize(full, bowl_hyper(full), 200);
        let b = bowl.minimize(eight, bowl_hyper(eight), 200);
        pass &= rel(a, b) <= 0.05;
        detail.push(format!("bowl {eight} {b:.4e} vs {full} {a:.4e} ({:.2}%)", 100.0 * rel(a, b)));
    }
    let kinds = [OptimKind::Sgd, OptimKind::Sgd8, OptimKind::AdamW, OptimKind::Adam8];
    let finals: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&k| s.spawn(move || train::train::<f32>(&RunConfig::new(Command::Train).with_optim(k)).unwrap().final_loss()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (i, (full, eight)) in pairs.into_iter().enumerate() {
        let (a, b) = (finals[2 * i], finals[2 * i + 1]);
        pass &= rel(a, b) <= 0.05;
        detail.push(format!("toy {eight} {b:.4} vs {full} {a:.4} ({:.2}%)", 100.0 * rel(a, b)));
    }
    (pass, detail.join("; "))
}

/// Reference fc input widths.
const REFERENCE_FC: &[(&str, usize)] = &[
    ("RevNet46", 6000),
    ("RevNet126", 7680),
    ("RevNet140", 24000),
    ("RevNet57", 6000),
    ("RevNet137", 7680),
    ("RevNet155", 24000),
    ("DF-RevNet66", 7680),
    ("DF-RevNet89", 7680),
];

fn architecture_fidelity() -> Outcome {
    let names = registry::reversible_family_names();
    let mut off = Vec::new();
    let mut fc_ok = true;
    for &name in &names {
        let net: Network<f32> = match build(name, 0) {
            Ok(n) => n,
            Err(e) => return (false, format!("{name} failed to build: {e}")),
        };
        let got = net.param_count() as f64 / 1e6;
        let want = registry::reference_param_count(name).unwrap() / 1e6;
        let e = (got - want).abs() / want;
        if e > 0.02 {
            off.push(format!("{name} {got:.2}M vs {want}M ({:+.1}%)", 100.0 * (got - want) / want));
        }
        let fc = registry::spec(name).unwrap().validate().unwrap().fc;
        if let Some(&(_, d)) = REFERENCE_FC.iter().find(|(n, _)| *n == name) {
            fc_ok &= fc == Some((d, 256));
        }
    }
    let pass = off.is_empty() && fc_ok;
    let mut detail = format!("{} nets built, fc dims exact: {fc_ok}, {} of {} counts within 2%", names.len(), names.len() - off.len(), names.len());
    if !off.is_empty() {
        detail.push_str(&format!("; off: {}", off.join(", ")));
    }
    (pass, detail)
}

fn gpu_arithmetic() -> Outcome {
    let a = gpus_required(256, 31).unwrap();
    let b = gpus_required(256, 297).unwrap();
    (a == 9 && b == 1, format!("gpus_required(256, 31) = {a}, gpus_required(256, 297) = {b}"))
}

fn eer_utility() -> Outcome {
    let third = eer(&[0.9, 0.8, 0.7], &[0.75, 0.3, 0.1]).unwrap();
    let separated = eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
    let same = eer(&[0.1, 0.5, 0.9], &[0.9, 0.1, 0.5]).unwrap();
    let mirrored = eer(&[-0.75, -0.3, -0.1], &[-0.9, -0.8, -0.7]).unwrap();
    let canonical = eer_canonical(&[0.1, 0.2], &[0.9, 0.8]).unwrap();
    let pass = (third - 1.0 / 3.0).abs() <= 1e-9 && separated == 0.0 && same == 0.5 && mirrored == third && canonical == 0.0;
    (pass, format!("three-score {third:.12}, separated {separated}, identical {same}, mirrored {mirrored:.12}, swapped canonical {canonical}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient equivalence", gradient_equivalence),
        ("inverse reconstruction", inverse_reconstruction),
        ("constant activation memory", constant_activation_memory),
        ("ResNet34 activation share", resnet34_ledger),
        ("optimizer-state memory", optimizer_state_memory),
        ("quantizer correctness", quantizer_correctness),
        ("8-bit training parity", training_parity),
        ("architecture fidelity", architecture_fidelity),
        ("GPU count arithmetic", gpu_arithmetic),
        ("EER utility", eer_utility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let (pass, detail) = f();
        failed += usize::from(!pass);
        println!("{} {:>2} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, i + 1, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
