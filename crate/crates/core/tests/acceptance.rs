//! End-to-end acceptance checks. Runs as a plain binary so every check prints
//! its own PASS/FAIL line; exits non-zero if any check fails.

use std::path::Path;
use std::time::{Duration, Instant};

use edge_unlearn::cli::{self, Stage, ROW_LABELS};
use edge_unlearn::nn::{Architecture, Dataset, Model, Role, Sample};
use edge_unlearn::numeric::{encode_slice, WEIGHT_FRAC_BITS};
use edge_unlearn::obs::{
    adjust_block_fixed, damped_fisher, fisher_blocks, make_partition, obs_adjust, quadratic_value, unlearn_update, Damping,
    FisherBlocks, UpdateVector,
};
use edge_unlearn::protocol::{client_setup, prove, verify, Backend, Commitment, Openings, Proof, PublicParams, Witness};
use edge_unlearn::unlearn::{MaskScope, PruneMask};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ms(d: Duration) -> String {
    format!("{:.0} ms", d.as_secs_f64() * 1e3)
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = a.transpose() * &a + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    (0..n * n).map(|k| h[(k / n, k % n)]).collect()
}

/// Single pruned weight against `δ = -(w_i / [H⁻¹]_ii) H⁻¹ e_i`.
fn closed_form_fidelity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let h = random_pd(&mut rng, n);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let i = rng.gen_range(0..n);
        let got = obs_adjust(&w, &h, &[i]).unwrap();
        let inv = DMatrix::from_row_slice(n, n, &h).try_inverse().unwrap();
        let want: Vec<f64> = (0..n).map(|k| -(w[i] / inv[(i, i)]) * inv[(k, i)]).collect();
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let err = got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-10 && el < Duration::from_secs(1),
        format!("max relative error {worst:.2e} over 100 blocks (<= 1e-10), {}", ms(el)),
    )
}

/// Objective against an elimination solve on the free coordinates.
fn optimality_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=12);
        let h = random_pd(&mut rng, n);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let k = rng.gen_range(1..n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        let mut pruned = idx[..k].to_vec();
        pruned.sort();
        let free: Vec<usize> = (0..n).filter(|i| !pruned.contains(i)).collect();
        // F_UU δ_U = F_UP w_P with δ_P = -w_P
        let fuu = DMatrix::from_fn(free.len(), free.len(), |a, b| h[free[a] * n + free[b]]);
        let rhs = DVector::from_fn(free.len(), |a, _| pruned.iter().map(|&p| h[free[a] * n + p] * w[p]).sum::<f64>());
        let du = fuu.lu().solve(&rhs).unwrap();
        let mut oracle = vec![0.0; n];
        for &p in &pruned {
            oracle[p] = -w[p];
        }
        for (a, &u) in free.iter().enumerate() {
            oracle[u] = du[a];
        }
        let got = obs_adjust(&w, &h, &pruned).unwrap();
        worst = worst.max((quadratic_value(&h, &got) - quadratic_value(&h, &oracle)).abs());
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-8 && el < Duration::from_secs(5),
        format!("max objective gap {worst:.2e} over 100 blocks (<= 1e-8), {}", ms(el)),
    )
}

fn gradient_and_fisher() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let depth = rng.gen_range(2..=4);
        let dims: Vec<usize> = (0..=depth).map(|_| rng.gen_range(2..=6)).collect();
        let m = Model::random(Architecture::mlp(&dims).unwrap(), &mut rng);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = rng.gen_range(0..*dims.last().unwrap());
        let (_, g) = m.backward(&x, y).unwrap();
        let h = 1e-5;
        for i in 0..m.num_params() {
            let loss = |d: f64| {
                let mut mm = m.clone();
                *mm.param_mut(i).unwrap() += d;
                let logits = mm.forward(&x).unwrap().logits().to_vec();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                lse - logits[y]
            };
            let fd = (loss(h) - loss(-h)) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }

    let m = Model::random(Architecture::mlp(&[2, 3, 2]).unwrap(), &mut rng);
    let samples: Vec<Sample> = (0..7)
        .map(|i| Sample {
            x: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            y: i % 2,
        })
        .collect();
    let d = Dataset::new(samples.clone(), 2, Role::Personal).unwrap();
    let p = make_partition(m.architecture(), 4).unwrap();
    let lambda = 0.01;
    let (real, _) = damped_fisher(&m, &d, &p, Damping::Fixed(lambda)).unwrap();
    let n = m.num_params();
    let mut full = vec![0.0; n * n];
    for s in &samples {
        let (_, g) = m.backward(&s.x, s.y).unwrap();
        for i in 0..n {
            for j in 0..n {
                full[i * n + j] += g[i] * g[j] / samples.len() as f64;
            }
        }
    }
    let fixed = fisher_blocks(&m, &d, &p, Damping::Fixed(lambda)).unwrap();
    let mut fisher_err = 0.0f64;
    let mut fixed_off = 0i64;
    for (b, blk) in p.blocks().iter().enumerate() {
        for i in 0..blk.len {
            for j in 0..blk.len {
                let want = full[(blk.start + i) * n + blk.start + j] + if i == j { lambda } else { 0.0 };
                fisher_err = fisher_err.max((real[b][i * blk.len + j] - want).abs());
                let margin = if i == j { blk.len.div_ceil(2) as i64 } else { 0 };
                let q = (want * (1u64 << 20) as f64).round_ties_even() as i64 + margin;
                fixed_off = fixed_off.max((fixed.fixed(b)[i * blk.len + j] - q).abs());
            }
        }
    }
    outcome(
        worst <= 1e-4 && fisher_err <= 1e-10 && fixed_off == 0,
        format!(
            "gradient max relative error {worst:.2e} on 20 nets (<= 1e-4); Fisher max error {fisher_err:.2e} on 2-3-2 (<= 1e-10), fixed-point blocks off by {fixed_off} units"
        ),
    )
}

struct Setup {
    params: PublicParams,
    pre: Model,
    fb: FisherBlocks,
    mask: PruneMask,
    com_p: Commitment,
    com_h: Commitment,
    openings: Openings,
}

fn random_setup(rng: &mut ChaCha8Rng, dims: &[usize], bs: usize, damping: Damping, backend: Backend) -> Setup {
    let arch = Architecture::mlp(dims).unwrap();
    let pre = Model::random(arch.clone(), rng);
    let classes = *dims.last().unwrap();
    let samples = (0..16)
        .map(|i| Sample {
            x: (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            y: i % classes,
        })
        .collect();
    let d = Dataset::new(samples, classes, Role::Personal).unwrap();
    let params = PublicParams::new(arch.clone(), bs, 3).unwrap();
    let fb = fisher_blocks(&pre, &d, params.partition(), damping).unwrap();
    let hidden: Vec<(u32, u32)> = (0..dims.len() - 2)
        .flat_map(|l| (0..dims[l + 1]).map(move |n| (l as u32, n as u32)))
        .collect();
    let count = rng.gen_range(1..=3.min(hidden.len()));
    let neurons = (0..count).map(|_| hidden[rng.gen_range(0..hidden.len())]).collect();
    let scope = if rng.gen() { MaskScope::WithOutgoing } else { MaskScope::Incoming };
    let mask = PruneMask::from_neurons(&arch, neurons, scope, 0.1, 1e-6).unwrap();
    let (com_p, com_h, openings) = client_setup(&params, &pre, &fb, backend, rng.gen()).unwrap();
    Setup {
        params,
        pre,
        fb,
        mask,
        com_p,
        com_h,
        openings,
    }
}

fn prove_post(s: &Setup, post: &Model) -> (Proof, Commitment) {
    let delta = UpdateVector::from_models(&s.pre, post, s.params.partition(), &s.mask).unwrap();
    let w = Witness {
        pre: &s.pre,
        post,
        delta: &delta,
        fisher: &s.fb,
        openings: &s.openings,
    };
    prove(&s.params, &s.com_p, &s.com_h, &s.mask, &w).unwrap()
}

fn accepts(s: &Setup, post: &Model) -> bool {
    let (proof, com_post) = prove_post(s, post);
    verify(&s.params, &s.com_p, &com_post, &s.com_h, &s.mask, &proof).is_ok()
}

fn completeness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut accepted = [0usize; 2];
    let mut max_touched = 0;
    let mut took = [Duration::ZERO; 2];
    for (k, backend) in [Backend::Merkle, Backend::Pedersen].into_iter().enumerate() {
        let tb = Instant::now();
        for _ in 0..1000 {
            let depth = rng.gen_range(2..=3);
            let mut dims: Vec<usize> = (0..depth).map(|_| rng.gen_range(3..=12)).collect();
            dims.push(rng.gen_range(2..=5));
            let damping = if rng.gen_bool(0.5) { Damping::Auto } else { Damping::Fixed(rng.gen_range(0.05..2.0)) };
            let s = random_setup(&mut rng, &dims, 32, damping, backend);
            max_touched = max_touched.max(s.params.partition().touched(&s.mask).unwrap().len());
            let (post, _) = unlearn_update(&s.pre, &s.fb, &s.mask).unwrap();
            if accepts(&s, &post) {
                accepted[k] += 1;
            }
        }
        took[k] = tb.elapsed();
    }
    let el = t.elapsed();
    outcome(
        accepted == [1000, 1000] && max_touched <= 20 && el < Duration::from_secs(60),
        format!(
            "accepted merkle {}/1000 ({}), pedersen {}/1000 ({}) at B=32 (max {max_touched} touched blocks), {} total",
            accepted[0],
            ms(took[0]),
            accepted[1],
            ms(took[1]),
            ms(el)
        ),
    )
}

#[derive(Clone, Copy, Debug)]
enum Attack {
    Perturb,
    Substitute,
    FisherSwap,
}

/// A cheating post-update model, or `None` if this draw gives no real attack.
fn attack(s: &Setup, honest: &Model, kind: Attack, rng: &mut ChaCha8Rng) -> Option<Model> {
    let p = s.params.partition();
    let touched = p.touched(&s.mask).unwrap();
    let id = touched[rng.gen_range(0..touched.len())];
    let blk = *p.block(id);
    let mut post = honest.clone();
    match kind {
        Attack::Perturb => {
            let i = blk.start + rng.gen_range(0..blk.len);
            let by = rng.gen_range(1..=16) as f64 / 256.0 * if rng.gen() { 1.0 } else { -1.0 };
            *post.param_mut(i).unwrap() += by;
        }
        Attack::Substitute => {
            let pruned = p.local_pruned(id, &s.mask);
            let w_fx = encode_slice(&s.pre.params()[blk.range()], WEIGHT_FRAC_BITS).unwrap();
            for k in 0..blk.len {
                let v = if pruned.contains(&k) { 0 } else { w_fx[k] + rng.gen_range(-(1i64 << 20)..(1i64 << 20)) };
                *post.param_mut(blk.start + k).unwrap() = v as f64 / (1u64 << 24) as f64;
            }
        }
        Attack::FisherSwap => {
            let others: Vec<usize> = (0..p.len())
                .filter(|&b| b != id && p.block(b).len == blk.len && s.fb.fixed(b) != s.fb.fixed(id))
                .collect();
            if others.is_empty() {
                return None;
            }
            let other = others[rng.gen_range(0..others.len())];
            let w_fx = encode_slice(&s.pre.params()[blk.range()], WEIGHT_FRAC_BITS).unwrap();
            let delta = adjust_block_fixed(id, &w_fx, s.fb.fixed(other), &p.local_pruned(id, &s.mask)).ok()?;
            for k in 0..blk.len {
                *post.param_mut(blk.start + k).unwrap() = (w_fx[k] + delta[k]) as f64 / (1u64 << 24) as f64;
            }
        }
    }
    (post.params() != honest.params()).then_some(post)
}

fn soundness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut lines = Vec::new();
    let mut pass = true;
    for backend in [Backend::Merkle, Backend::Pedersen] {
        let setups: Vec<(Setup, Model)> = (0..40)
            .map(|_| {
                let dims = [rng.gen_range(3..=6), rng.gen_range(3..=6), rng.gen_range(2..=4)];
                let s = random_setup(&mut rng, &dims, 8, Damping::Fixed(1.0), backend);
                let (post, _) = unlearn_update(&s.pre, &s.fb, &s.mask).unwrap();
                (s, post)
            })
            .collect();
        for kind in [Attack::Perturb, Attack::Substitute, Attack::FisherSwap] {
            let (mut trials, mut accepted, mut draws) = (0, 0, 0);
            while trials < 10_000 && draws < 100_000 {
                draws += 1;
                let (s, honest) = &setups[draws % setups.len()];
                let Some(bad) = attack(s, honest, kind, &mut rng) else { continue };
                trials += 1;
                if accepts(s, &bad) {
                    accepted += 1;
                }
            }
            pass &= trials == 10_000 && accepted == 0;
            lines.push(format!("{backend}/{kind:?} {accepted}/{trials}"));
        }
    }
    outcome(pass, format!("accepted attacks: {} ({})", lines.join(", "), ms(t.elapsed())))
}

fn proof_cost() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let dims = [64, 96, 10];
    let arch = Architecture::mlp(&dims).unwrap();
    let p = make_partition(&arch, 32).unwrap();
    let mut neurons = Vec::new();
    let mut mask = PruneMask::empty();
    for n in 0..96 {
        neurons.push((0u32, n as u32));
        mask = PruneMask::from_neurons(&arch, neurons.clone(), MaskScope::WithOutgoing, 0.1, 1e-6).unwrap();
        if p.touched(&mask).unwrap().len() >= 100 {
            break;
        }
    }
    let touched = p.touched(&mask).unwrap().len();
    let mut lines = Vec::new();
    let mut pass = touched >= 100;
    for backend in [Backend::Merkle, Backend::Pedersen] {
        let mut s = random_setup(&mut rng, &dims, 32, Damping::Auto, backend);
        s.mask = mask.clone();
        let (post, _) = unlearn_update(&s.pre, &s.fb, &s.mask).unwrap();
        let t = Instant::now();
        let (proof, com_post) = prove_post(&s, &post);
        let tp = t.elapsed();
        let ok = verify(&s.params, &s.com_p, &com_post, &s.com_h, &s.mask, &proof).is_ok();
        let el = t.elapsed();
        let size = proof.to_bytes().len();
        pass &= ok && el < Duration::from_secs(5);
        lines.push(format!(
            "{backend}: prove {} + verify {}, {size} bytes ({} per block)",
            ms(tp),
            ms(el - tp),
            size / touched
        ));
    }
    outcome(pass, format!("{touched} touched blocks at B=32; {}", lines.join("; ")))
}

fn run_pipeline(dir: &Path) -> Duration {
    let cfg = cli::default_config()
        .with_overrides(&[format!("out_dir=\"{}\"", dir.display())])
        .unwrap();
    let t = Instant::now();
    match cli::run(Stage::Pipeline, &cfg, true) {
        Ok(cli::Outcome::Done { .. }) => {}
        other => panic!("pipeline did not complete: {other:?}"),
    }
    t.elapsed()
}

fn desk_and_determinism() -> (Outcome, Outcome) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let el = run_pipeline(a.path());
    let cfg = cli::default_config();
    let report = cli::evaluate_models(
        &cfg,
        &a.path().join(&cfg.paths.personalized),
        &a.path().join(&cfg.paths.masked),
        &a.path().join(&cfg.paths.unlearned),
    )
    .unwrap();
    let [base, masked, adjusted] = ROW_LABELS.map(|l| report.row(l).unwrap().clone());
    let forget_drop = base.forget_accuracy - masked.forget_accuracy;
    let personal_drop = base.personal_accuracy - masked.personal_accuracy;
    let recovery = (adjusted.personal_accuracy - masked.personal_accuracy) / personal_drop;
    let forget_rise = adjusted.forget_accuracy - masked.forget_accuracy;
    let desk = outcome(
        forget_drop >= 0.20 && personal_drop > 0.0 && recovery >= 0.30 && forget_rise <= 0.02 && el < Duration::from_secs(600),
        format!(
            "forget {:.1} -> {:.1} -> {:.1}, personalized {:.1} -> {:.1} -> {:.1}; forget drop {:.1} pp (>= 20), recovery {:.0}% (>= 30%), forget rise {:.1} pp (<= 2), {}",
            100.0 * base.forget_accuracy,
            100.0 * masked.forget_accuracy,
            100.0 * adjusted.forget_accuracy,
            100.0 * base.personal_accuracy,
            100.0 * masked.personal_accuracy,
            100.0 * adjusted.personal_accuracy,
            100.0 * forget_drop,
            100.0 * recovery,
            100.0 * forget_rise,
            ms(el)
        ),
    );

    run_pipeline(b.path());
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join(n)).ok() != std::fs::read(b.path().join(n)).ok())
        .collect();
    let det = outcome(
        differing.is_empty() && names.iter().any(|n| n == "proof.uprf") && names.iter().any(|n| n == "report.txt"),
        format!("{} files compared across two runs, differing: {differing:?}", names.len()),
    );
    (desk, det)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    // Optional numeric filters, e.g. `cargo test --test acceptance -- 4 7`.
    let only: Vec<&str> = args.iter().filter(|a| !a.starts_with('-')).map(String::as_str).collect();
    let wanted = |n: &str| only.is_empty() || only.contains(&n);
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let simple: [(&str, &str, fn() -> Outcome); 5] = [
        ("1", "closed-form fidelity", closed_form_fidelity),
        ("2", "optimality oracle", optimality_oracle),
        ("3", "gradient and Fisher", gradient_and_fisher),
        ("4", "protocol completeness", completeness),
        ("5", "protocol soundness", soundness),
    ];
    for (n, name, check) in simple {
        if wanted(n) {
            results.push((format!("{n} {name}"), check()));
        }
    }
    let pipeline = if wanted("6") || wanted("8") { Some(desk_and_determinism()) } else { None };
    let (desk, det) = match pipeline {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    if let Some(o) = desk.filter(|_| wanted("6")) {
        results.push(("6 desk-scale table".into(), o));
    }
    if wanted("7") {
        results.push(("7 proof cost".into(), proof_cost()));
    }
    if let Some(o) = det.filter(|_| wanted("8")) {
        results.push(("8 determinism".into(), o));
    }
    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
