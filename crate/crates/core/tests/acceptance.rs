//! End-to-end acceptance checks, one line per criterion.

mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use circuit_em::data::{ycc_continuous, ycc_inverse, ycc_transform, YccMode};
use circuit_em::flows::{backward_flows, evidence_flows, loglik_gradient, normalized_child_flows, td_probs};
use circuit_em::format::serialize;
use circuit_em::inference::{dataset_log_likelihood, log_likelihood, log_partition};
use circuit_em::normalize::{gradient_invariance_check, kl_joint, kl_linear_form_check, renormalize};
use circuit_em::optim::{full_batch_em_step, minibatch_em_step_proposed, train_loop, Optimizer, TrainConfig};
use circuit_em::oracle::{brute_joint_kl, brute_marginal, brute_partition, brute_q_maximizer, prop1_residual};
use circuit_em::structure::{build_clt, CategoricalMixture};
use circuit_em::{Dataset, Evidence, Params, Reduction, Value};
use common::{normalized, random_rows, refs, small_circuit, unnormalized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: circuit_em::Error) -> String {
    e.to_string()
}

fn prop1_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0f64;
    for i in 0..30 {
        let (c, _) = small_circuit(&mut rng, 10);
        let p = normalized(&c, &mut rng);
        let q = if i % 2 == 0 { normalized(&c, &mut rng) } else { unnormalized(&c, &mut rng) };
        let rows = random_rows(&c, rng.random_range(1..=8), &mut rng);
        let r = prop1_residual(&c, &p, &q, &refs(&rows)).map_err(err)?;
        worst = worst.max(r.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-8, || format!("max |residual| = {worst:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("30 circuits, max |residual| = {worst:.2e}, {secs:.2}s"))
}

fn gradient_vs_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst = 0f64;
    for _ in 0..25 {
        let (c, p) = small_circuit(&mut rng, 8);
        let rows = random_rows(&c, rng.random_range(1..=4), &mut rng);
        let data = refs(&rows);
        let g = loglik_gradient(&c, &p, &data, Reduction::Sequential).map_err(err)?;
        let objective = |phi: &[f64]| -> Result<f64, String> {
            let q = Params::from_log(&c, phi.to_vec()).map_err(err)?;
            let z = log_partition(&c, &q);
            let mut total = 0.0;
            for x in &data {
                total += log_likelihood(&c, &q, x).map_err(err)? - z;
            }
            Ok(total / data.len() as f64)
        };
        let mut fd = vec![0.0; g.len()];
        let mut phi = p.phi().to_vec();
        for e in 0..g.len() {
            let orig = phi[e];
            phi[e] = orig + h;
            let up = objective(&phi)?;
            phi[e] = orig - h;
            let down = objective(&phi)?;
            phi[e] = orig;
            fd[e] = (up - down) / (2.0 * h);
        }
        let scale = fd.iter().fold(0f64, |m, v| m.max(v.abs())).max(1e-12);
        let diff = g.iter().zip(&fd).fold(0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff / scale);
    }
    ensure(worst < 1e-6, || format!("max relative error = {worst:e}"))?;
    Ok(format!("25 circuits, max relative error = {worst:.2e}"))
}

fn kl_linear_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_form, mut worst_kl) = (0f64, 0f64);
    for _ in 0..25 {
        let (c, p) = small_circuit(&mut rng, 8);
        let a = normalized(&c, &mut rng);
        let b = normalized(&c, &mut rng);
        worst_form = worst_form.max(kl_linear_form_check(&c, &p, &a, &b).map_err(err)?.residual());
        let kl = kl_joint(&c, &p, &a).map_err(err)?;
        let oracle = brute_joint_kl(&c, &p, &a).map_err(err)?;
        worst_kl = worst_kl.max((kl - oracle).abs());
    }
    ensure(worst_form < 1e-8, || format!("linear-form residual {worst_form:e}"))?;
    ensure(worst_kl < 1e-10, || format!("kl_joint vs enumeration {worst_kl:e}"))?;
    Ok(format!("25 triples, residual {worst_form:.2e}, kl vs oracle {worst_kl:.2e}"))
}

fn normalized_child_flows_sum_to_one() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_sum, mut worst_edge) = (0f64, 0f64);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let (c, p) = small_circuit(&mut rng, 10);
        let x = random_rows(&c, 1, &mut rng).remove(0);
        let hat = normalized_child_flows(&c, &p, &x).map_err(err)?;
        let flows = evidence_flows(&c, &p, &Evidence::observed(&x)).map_err(err)?;
        for n in c.sum_nodes() {
            let edges = c.edges(n);
            if hat[edges.start].is_none() || flows.node[n.0] == 0.0 {
                continue;
            }
            checked += 1;
            let s: f64 = edges.clone().map(|e| hat[e].unwrap_or(0.0)).sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            for e in edges {
                let expect = flows.node[n.0] * hat[e].unwrap_or(0.0);
                worst_edge = worst_edge.max((flows.edge[e] - expect).abs());
            }
        }
    }
    ensure(worst_sum <= 1e-12, || format!("max |sum - 1| = {worst_sum:e}"))?;
    ensure(worst_edge <= 1e-12, || format!("max edge decomposition error = {worst_edge:e}"))?;
    Ok(format!("1000 pairs, {checked} active nodes, |sum-1| {worst_sum:.1e}, decomposition {worst_edge:.1e}"))
}

fn full_em_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut worst_drop, mut worst_q) = (0f64, 0f64);
    for _ in 0..20 {
        let (c, mut p) = small_circuit(&mut rng, 10);
        let rows = random_rows(&c, rng.random_range(5..=30), &mut rng);
        let data = refs(&rows);
        let mean_ll = |p: &Params<f64>| -> Result<f64, String> {
            let mut t = 0.0;
            for x in &data {
                t += log_likelihood(&c, p, x).map_err(err)?;
            }
            Ok(t / data.len() as f64)
        };
        let best = brute_q_maximizer(&c, &p, &data).map_err(err)?;
        let flows = backward_flows(&c, &p, &data, Reduction::Sequential).map_err(err)?;
        let first = full_batch_em_step(&c, &p, &flows, 0.0).map_err(err)?;
        for (a, b) in first.thetas().iter().zip(best.thetas()) {
            worst_q = worst_q.max((a - b).abs());
        }
        let mut prev = mean_ll(&p)?;
        for _ in 0..50 {
            let flows = backward_flows(&c, &p, &data, Reduction::Sequential).map_err(err)?;
            p = full_batch_em_step(&c, &p, &flows, 0.0).map_err(err)?;
            let cur = mean_ll(&p)?;
            worst_drop = worst_drop.max(prev - cur);
            prev = cur;
        }
    }
    ensure(worst_drop <= 1e-9, || format!("log-likelihood dropped by {worst_drop:e}"))?;
    ensure(worst_q <= 1e-6, || format!("EM step vs Q maximizer {worst_q:e}"))?;
    Ok(format!("20 runs x 50 steps, max drop {worst_drop:.1e}, Q-maximizer gap {worst_q:.1e}"))
}

fn proposed_reduces_to_full_em() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0f64;
    for _ in 0..20 {
        let (c, p) = small_circuit(&mut rng, 10);
        let rows = random_rows(&c, 16, &mut rng);
        let data = refs(&rows);
        let flows = backward_flows(&c, &p, &data, Reduction::Sequential).map_err(err)?;
        let td = td_probs(&c, &p);
        let a = minibatch_em_step_proposed(&c, &p, &flows, &td, 1.0).map_err(err)?;
        let b = full_batch_em_step(&c, &p, &flows, 0.0).map_err(err)?;
        for (x, y) in a.phi().iter().zip(b.phi()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("single-step difference {worst:e}"))?;

    let (c, p) = small_circuit(&mut rng, 8);
    let rows: Vec<Vec<u32>> = random_rows(&c, 40, &mut rng)
        .iter()
        .map(|r| r.iter().map(|v| if let Value::Cat(k) = v { *k } else { 0 }).collect())
        .collect();
    let data = Dataset::categorical(&vec![2; c.num_vars()], &rows).map_err(err)?;
    let full = TrainConfig { optimizer: Optimizer::FullEm, epochs: 10, deterministic: true, eval_every: Some(1), ..TrainConfig::default() };
    let mini = TrainConfig {
        optimizer: Optimizer::MiniEmProposed,
        alpha_start: 1.0,
        alpha_end: 1.0,
        batch_size: data.len(),
        ..full.clone()
    };
    let a = train_loop(&c, &p, &data, None, &full).map_err(err)?;
    let b = train_loop(&c, &p, &data, None, &mini).map_err(err)?;
    ensure(a.metrics.len() == b.metrics.len(), || "trajectory lengths differ".into())?;
    let mut traj = 0f64;
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        ensure(x.samples_consumed == y.samples_consumed, || "sample counts differ".into())?;
        traj = traj.max((x.train_ll - y.train_ll).abs());
    }
    for (x, y) in a.params.phi().iter().zip(b.params.phi()) {
        traj = traj.max((x - y).abs());
    }
    ensure(traj <= 1e-12, || format!("trajectory difference {traj:e}"))?;
    Ok(format!("step diff {worst:.1e}, 10-step trajectory diff {traj:.1e}"))
}

fn renormalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut worst_z, mut worst_p, mut worst_g) = (0f64, 0f64, 0f64);
    for _ in 0..25 {
        let (c, _) = small_circuit(&mut rng, 8);
        let p = unnormalized(&c, &mut rng);
        let q = renormalize(&c, &p).map_err(err)?;
        worst_z = worst_z.max((log_partition(&c, &q).exp() - 1.0).abs());
        worst_z = worst_z.max((brute_partition(&c, &q).map_err(err)? - 1.0).abs());
        let z = brute_partition(&c, &p).map_err(err)?;
        for x in circuit_em::oracle::assignments(&c).map_err(err)? {
            let before = brute_marginal(&c, &p, &x).map_err(err)? / z;
            let after = brute_marginal(&c, &q, &x).map_err(err)?;
            worst_p = worst_p.max((before - after).abs() / before.max(1e-300));
        }
        let rows = random_rows(&c, 4, &mut rng);
        worst_g = worst_g.max(gradient_invariance_check(&c, &p, &refs(&rows)).map_err(err)?);
    }
    ensure(worst_z <= 1e-10, || format!("|Z - 1| = {worst_z:e}"))?;
    ensure(worst_p <= 1e-10, || format!("probability relative error {worst_p:e}"))?;
    ensure(worst_g < 1e-9, || format!("gradient deviation {worst_g:e}"))?;
    Ok(format!("25 circuits, |Z-1| {worst_z:.1e}, prob rel err {worst_p:.1e}, grad dev {worst_g:.1e}"))
}

/// Final validation LL per optimizer on one synthetic mixture.
fn ordering_run(seed: u64) -> Result<[f64; 3], String> {
    let mix = CategoricalMixture::random(8, 16, 2, 0.5, seed);
    let train = mix.sample(50_000, 1000 + seed);
    let valid = mix.sample(10_000, 2000 + seed);
    let (c, init) = build_clt::<f64>(&train, 8, seed).map_err(err)?;
    // metrics are only recorded at the start and end
    let base = TrainConfig { epochs: 5, batch_size: 512, seed, eta: 0.9, eval_every: Some(usize::MAX), ..TrainConfig::default() };
    let mut out = [0.0; 3];
    let configs = [
        TrainConfig { optimizer: Optimizer::MiniEmProposed, ..base.clone() },
        TrainConfig { optimizer: Optimizer::MiniEmBaseline, ..base.clone() },
        TrainConfig { optimizer: Optimizer::Adam, lr: 1e-2, ..base.clone() },
    ];
    for (slot, cfg) in out.iter_mut().zip(&configs) {
        let trained = train_loop(&c, &init, &train, None, cfg).map_err(err)?;
        *slot = dataset_log_likelihood(&c, &trained.params, &valid).map_err(err)?;
    }
    Ok(out)
}

fn optimizer_ordering() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let [proposed, baseline, adam] = ordering_run(seed)?;
        let ok = proposed >= baseline - 0.01 && proposed >= adam - 0.01;
        wins += usize::from(ok);
        lines.push(format!(
            "seed {seed}: proposed {proposed:.4} baseline {baseline:.4} adam {adam:.4} {}",
            if ok { "ok" } else { "MISS" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = lines.join("; ");
    ensure(wins >= 2, || format!("{wins}/3 seeds ordered: {detail}"))?;
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!("{wins}/3 seeds ordered, {secs:.1}s; {detail}"))
}

fn ycc() -> Outcome {
    let cases = [((0, 0, 0), [0, 128, 128]), ((255, 255, 255), [255, 128, 128]), ((255, 0, 0), [64, 255, 64])];
    for ((r, g, b), expect) in cases {
        let got = ycc_transform(r, g, b, YccMode::Centered);
        ensure(got == expect, || format!("({r},{g},{b}) -> {got:?}, expected {expect:?}"))?;
    }
    let mut worst = 0f64;
    for r in 0..=255u8 {
        for g in 0..=255u8 {
            for b in 0..=255u8 {
                let [y, co, cg] = ycc_continuous(r, g, b, YccMode::Centered);
                let back = ycc_inverse(y, co, cg);
                for (v, orig) in back.iter().zip([r, g, b]) {
                    worst = worst.max((v - f64::from(orig) / 255.0).abs());
                }
            }
        }
    }
    ensure(worst < 1e-12, || format!("round-trip error {worst:e}"))?;
    Ok(format!("3 examples exact, all 2^24 colors round-trip within {worst:.1e}"))
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_circuit-em");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mix = CategoricalMixture::random(4, 10, 3, 0.5, 9);
    let data = mix.sample(3000, 10);
    let (c, p) = build_clt::<f64>(&data, 4, 3).map_err(err)?;
    let circuit_path = dir.path().join("model.pc");
    let data_path = dir.path().join("train.csv");
    std::fs::write(&circuit_path, serialize(&c, &p)).map_err(|e| e.to_string())?;
    std::fs::write(&data_path, data.to_csv()).map_err(|e| e.to_string())?;
    let seed: u64 = rng.random_range(0..1000);
    let mut checked = 0;
    for optimizer in ["mini-em", "mini-em-baseline", "adam", "full-em"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let metrics = dir.path().join(format!("{optimizer}-{run}.csv"));
            let ckpt = dir.path().join(format!("{optimizer}-{run}.pc"));
            let status = Command::new(bin)
                .args(["train", "--circuit"])
                .arg(&circuit_path)
                .arg("--data")
                .arg(&data_path)
                .arg("--valid")
                .arg(&data_path)
                .args(["--optimizer", optimizer, "--batch-size", "256", "--epochs", "2", "--eta", "0.9"])
                .args(["--seed", &seed.to_string(), "--deterministic", "--eval-every", "3"])
                .arg("--metrics-out")
                .arg(&metrics)
                .arg("--checkpoint-out")
                .arg(&ckpt)
                .status()
                .map_err(|e| e.to_string())?;
            ensure(status.success(), || format!("{optimizer}: exit {status}"))?;
            let m = std::fs::read(&metrics).map_err(|e| e.to_string())?;
            let k = std::fs::read(&ckpt).map_err(|e| e.to_string())?;
            outputs.push((m, k));
        }
        ensure(outputs[0] == outputs[1], || format!("{optimizer}: outputs differ between runs"))?;
        checked += 1;
    }
    Ok(format!("{checked} optimizers, metrics and checkpoints byte-identical"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 prop1 identity", prop1_identity),
        ("2 gradient = finite differences", gradient_vs_finite_differences),
        ("3 KL linear form", kl_linear_form),
        ("4 normalized child flows", normalized_child_flows_sum_to_one),
        ("5 full-batch EM monotone", full_em_monotone),
        ("6 mini-batch EM reduction", proposed_reduces_to_full_em),
        ("7 global renormalization", renormalization),
        ("8 optimizer ordering", optimizer_ordering),
        ("9 YCC transform", ycc),
        ("10 CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
