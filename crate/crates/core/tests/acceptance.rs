//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `ADVNAS_CRITERIA=1,2,5` restricts the run to a subset.

mod common;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use advnas_core::derive::{derive, sample_random_arch};
use advnas_core::search::{run_search, Streams};
use advnas_core::train::train_derived;
use advnas_core::{DerivedArch, RunConfig, SearchConfig, SearchState, SpaceConfig};
use common::suite::{self, Check};

const GRADIENT_CASES: usize = 20;
const GUMBEL_DRAWS: usize = 100_000;
const EQUIVALENCE_ARCHS: usize = 10;
const FROZEN_ITERS: usize = 100;
const DESK_SEEDS: [u64; 3] = [0, 1, 2];
const DESK_ITERS: usize = 2500;
const DESK_BATCH: usize = 32;

fn desk_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(seed);
    cfg.space = SpaceConfig {
        base_channels: 16,
        noise_dim: 16,
        base_resolution: 2,
        img_channels: 1,
        ..SpaceConfig::default()
    };
    cfg.search = SearchConfig {
        iters: DESK_ITERS,
        batch_m: DESK_BATCH,
        seed,
        ..SearchConfig::default()
    };
    cfg
}

/// Outcome of one seed of the desk benchmark.
#[derive(Debug, Clone)]
struct DeskRun {
    seed: u64,
    entropy_start: f64,
    entropy_end: f64,
    searched: DerivedArch,
    searched_text: String,
    searched_proxy: f64,
    random_proxy: f64,
}

fn out_dir(seed: u64, tag: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(format!("{tag}-seed{seed}"));
    fs::create_dir_all(&dir).expect("acceptance output directory");
    dir
}

fn desk_run(seed: u64, tag: &str) -> advnas_core::Result<DeskRun> {
    let cfg = desk_config(seed);
    let template = cfg.space.template()?;
    let (train, heldout) = cfg.datasets()?;
    let mut state = SearchState::new(cfg.search.clone(), template.clone(), &train)?;
    let started = Instant::now();
    let outcome = run_search(&mut state, &train, |st, rec| {
        if st.iter % 250 == 0 {
            eprintln!(
                "  [{tag} seed {seed}] iter {:>4}  entropy {:.4}  loss_d_w {:.4}  ({:.0} s)",
                st.iter,
                rec.mean_edge_entropy,
                rec.loss_d_w,
                started.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let entropy_start = outcome.snapshots[0].1.mean_edge_entropy()?;
    let entropy_end = state.arch.mean_edge_entropy()?;
    let searched = derive(&state.arch, &template, seed, true)?;
    let random = sample_random_arch(&template, seed, &mut Streams::new(seed).random_arch)?;
    let dir = out_dir(seed, tag);
    let searched_text = searched.to_text(&template);
    let _ = fs::write(dir.join("searched.arch"), &searched_text);
    let _ = fs::write(dir.join("random.arch"), random.to_text(&template));
    let mut proxies = Vec::new();
    for arch in [&searched, &random] {
        let out = train_derived(arch, &template, &train, &heldout, cfg.train.clone(), &cfg.eval, seed, |_| {})?;
        match (out.report, out.error) {
            (Some(r), None) => proxies.push(r.frechet_proxy),
            (_, Some(e)) => {
                eprintln!("  [{tag} seed {seed}] {} retraining diverged: {e}", arch.source.name());
                proxies.push(f64::INFINITY);
            }
            (None, None) => unreachable!("training returns a report or an error"),
        }
    }
    let run = DeskRun {
        seed,
        entropy_start,
        entropy_end,
        searched,
        searched_text,
        searched_proxy: proxies[0],
        random_proxy: proxies[1],
    };
    let _ = fs::write(
        dir.join("summary.txt"),
        format!(
            "entropy_start = {}\nentropy_end = {}\nsearched_proxy = {}\nrandom_proxy = {}\nseconds = {:.1}\n",
            run.entropy_start,
            run.entropy_end,
            run.searched_proxy,
            run.random_proxy,
            started.elapsed().as_secs_f64()
        ),
    );
    eprintln!(
        "  [{tag} seed {seed}] entropy {:.4} -> {:.4}, proxy searched {:.4} random {:.4}",
        run.entropy_start, run.entropy_end, run.searched_proxy, run.random_proxy
    );
    Ok(run)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_desk(runs: &mut Vec<DeskRun>) -> Check {
    let limit = Duration::from_secs(45 * 60);
    let started = Instant::now();
    for &seed in &DESK_SEEDS {
        match desk_run(seed, "run") {
            Ok(r) => runs.push(r),
            Err(e) => return Check { pass: false, detail: format!("seed {seed}: {e}") },
        }
    }
    let elapsed = started.elapsed();
    let decreased = runs.iter().filter(|r| r.entropy_end < r.entropy_start).count();
    let searched = mean(runs.iter().map(|r| r.searched_proxy));
    let random = mean(runs.iter().map(|r| r.random_proxy));
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: entropy {:.4}->{:.4}, proxy {:.3} vs {:.3}",
                r.seed, r.entropy_start, r.entropy_end, r.searched_proxy, r.random_proxy
            )
        })
        .collect();
    let (a, b, t) = (decreased >= 2, searched < random, elapsed < limit);
    Check {
        pass: a && b && t,
        detail: format!(
            "(a) entropy fell on {decreased}/3 seeds [{}]; (b) mean proxy searched {searched:.4} vs random {random:.4} [{}]; runtime {:.1} min of 45 [{}]; {}",
            verdict(a),
            verdict(b),
            elapsed.as_secs_f64() / 60.0,
            verdict(t),
            per_seed.join("; ")
        ),
    }
}

fn criterion_repeat(first: Option<&DeskRun>) -> Check {
    let seed = DESK_SEEDS[0];
    let first = match first {
        Some(r) => r.clone(),
        None => match desk_run(seed, "run") {
            Ok(r) => r,
            Err(e) => return Check { pass: false, detail: format!("seed {seed}: {e}") },
        },
    };
    let again = match desk_run(seed, "repeat") {
        Ok(r) => r,
        Err(e) => return Check { pass: false, detail: format!("seed {seed} repeat: {e}") },
    };
    let same_text = first.searched_text == again.searched_text && first.searched == again.searched;
    let ds = (first.searched_proxy - again.searched_proxy).abs();
    let dr = (first.random_proxy - again.random_proxy).abs();
    let same_proxy = first.searched_proxy == again.searched_proxy || ds < 1e-6;
    let same_random = first.random_proxy == again.random_proxy || dr < 1e-6;
    Check {
        pass: same_text && same_proxy && same_random,
        detail: format!(
            "seed {seed} rerun: architecture file identical {same_text}; proxy diff searched {ds:.1e}, random {dr:.1e}"
        ),
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Check) -> (Check, Duration) {
    let start = Instant::now();
    let mut c = f();
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took >= limit {
            c.pass = false;
            c.detail += &format!("; runtime {:.1} s exceeds {} s", took.as_secs_f64(), limit.as_secs());
        }
    }
    (c, took)
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ADVNAS_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut desk = Vec::new();
    let mut failed = 0;
    let names = [
        "gradient suite",
        "gumbel-softmax suite",
        "golden derivation",
        "cardinality",
        "topology",
        "supernet/derived equivalence",
        "update order contract",
        "desk benchmark",
        "determinism",
    ];
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) {
            continue;
        }
        let (check, took) = match n {
            1 => timed(Some(Duration::from_secs(120)), || suite::criterion_gradients(GRADIENT_CASES)),
            2 => timed(Some(Duration::from_secs(60)), || suite::criterion_gumbel(GUMBEL_DRAWS)),
            3 => timed(None, suite::criterion_golden),
            4 => timed(None, suite::criterion_cardinality),
            5 => timed(None, suite::criterion_topology),
            6 => timed(None, || suite::criterion_equivalence(EQUIVALENCE_ARCHS)),
            7 => timed(None, || suite::criterion_update_order(FROZEN_ITERS)),
            8 => timed(None, || criterion_desk(&mut desk)),
            _ => timed(None, || criterion_repeat(desk.first())),
        };
        if !check.pass {
            failed += 1;
        }
        println!(
            "criterion {n} {:<30} {}  ({:.1} s)  {}",
            name,
            if check.pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            check.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
