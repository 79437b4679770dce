use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advnas_core::derive::{derive, sample_random_arch};
use advnas_core::eval::evaluate;
use advnas_core::io::{load_generator, load_search_state, save_search_state, save_weights};
use advnas_core::search::{run_search, Streams};
use advnas_core::space::count_architectures;
use advnas_core::train::{sample_generator, train_derived, TrainRecord};
use advnas_core::{
    ArchCheckpoint, Dataset, DerivedArch, Error, LogRecord, Result, RunConfig, SearchState, SpaceConfig,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "advnas", version, about = "Adversarial architecture search for GAN generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; without one, defaults plus `--seed` are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory or `synth:<name>[@resolution]`.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Search the joint space and write a run directory.
    Search {
        #[command(flatten)]
        common: Common,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directory to resume from its saved state. The run's
        /// `config.toml` may raise `search.iters`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Derive a discrete architecture from an architecture checkpoint.
    Derive {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a uniformly random architecture.
    Random {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count the architectures of the configured space.
    Count {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a derived architecture from scratch and evaluate it.
    Train {
        #[arg(long)]
        arch: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trained weights, or a second dataset, against held-out images.
    Eval {
        /// `weights.bin` from `train`, or a dataset used as the fake samples.
        #[arg(long)]
        checkpoint: String,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Search { common, out, checkpoint } => search(&common, out, checkpoint),
        Command::Derive { checkpoint, out } => derive_cmd(&checkpoint, out.as_deref()),
        Command::Random { common, out } => random(&common, out.as_deref()),
        Command::Count { config } => count(config.as_deref()),
        Command::Train { arch, common, out } => train(&arch, &common, &out),
        Command::Eval { checkpoint, common } => eval(&checkpoint, &common),
    }
}

fn load_config(common: &Common) -> Result<(RunConfig, bool)> {
    let mut cfg = match (&common.config, common.seed) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(seed)) => RunConfig::new(seed),
        (None, None) => return Err(Error::Config("seed is required: pass --seed or a --config with `seed`".into())),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(ds) = &common.dataset {
        cfg.io.dataset = ds.clone();
    }
    Ok((cfg, common.config.is_some()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(io_err(path))?;
        Ok(JsonLines { path: path.into(), out: BufWriter::new(f) })
    }

    fn push(&mut self, value: &impl serde::Serialize) -> Result<()> {
        let line = serde_json::to_string(value).expect("record serializes");
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(io_err(&self.path))
    }
}

fn read_log(path: &Path, upto: usize) -> Result<Vec<LogRecord>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        let bad = |e: serde_json::Error| Error::Format(format!("{}: {e}", path.display()));
        let value: serde_json::Value = serde_json::from_str(&line).map_err(bad)?;
        if value.get("error").is_some() {
            continue;
        }
        let rec: LogRecord = serde_json::from_value(value).map_err(bad)?;
        if rec.iter <= upto {
            out.push(rec);
        }
    }
    Ok(out)
}

fn series(initial_entropy: f64, log: &[LogRecord]) -> String {
    let mut s = String::from("iter,loss_d_arch,loss_d_w,loss_g_arch,loss_g_w,mean_edge_entropy\n");
    s += &format!("0,,,,,{initial_entropy}\n");
    for r in log {
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.iter, r.loss_d_arch, r.loss_d_w, r.loss_g_arch, r.loss_g_w, r.mean_edge_entropy
        );
    }
    s
}

fn arch_checkpoint(state: &SearchState, space: SpaceConfig) -> ArchCheckpoint {
    ArchCheckpoint {
        seed: state.config.seed,
        space,
        iter: state.iter,
        arch: state.arch.clone(),
        has_beta: true,
    }
}

fn search(common: &Common, out: Option<PathBuf>, resume: Option<PathBuf>) -> Result<()> {
    let (dir, mut cfg) = match &resume {
        Some(dir) => {
            let mut cfg = RunConfig::load(&dir.join("config.toml"))?;
            if let Some(ds) = &common.dataset {
                cfg.io.dataset = ds.clone();
            }
            (dir.clone(), cfg)
        }
        None => {
            let (cfg, has_file) = load_config(common)?;
            if !has_file {
                return Err(Error::Config("search needs --config".into()));
            }
            let dir = out
                .or_else(|| cfg.io.out.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(format!("runs/seed-{}", cfg.seed)));
            (dir, cfg)
        }
    };
    let (data, _) = cfg.datasets()?;
    let state_dir = dir.join("state");
    let (mut state, log) = match &resume {
        Some(_) => {
            let (mut state, space) = load_search_state(&state_dir, &data)?;
            state.config.iters = cfg.search.iters;
            cfg.space = space;
            let log = read_log(&dir.join("log.jsonl"), state.iter)?;
            (state, log)
        }
        None => {
            if dir.join("log.jsonl").exists() {
                return Err(Error::Config(format!(
                    "{} already holds a run; pass --checkpoint to resume it",
                    dir.display()
                )));
            }
            mkdir(&dir)?;
            write(&dir.join("config.toml"), &cfg.to_toml())?;
            (SearchState::new(cfg.search.clone(), cfg.space.template()?, &data)?, Vec::new())
        }
    };
    let template = state.template.clone();
    let ck_dir = dir.join("checkpoints");
    mkdir(&ck_dir)?;
    let initial_entropy = advnas_core::ArchParams::<f32>::zeros(&template, cfg.search.tau).mean_edge_entropy()?;
    let mut jl = JsonLines::create(&dir.join("log.jsonl"))?;
    for r in &log {
        jl.push(r)?;
    }
    let mut all = log;
    let every = cfg.search.snapshot_every;
    let space = cfg.space;
    println!("search: seed {} for {} iterations into {}", cfg.seed, cfg.search.iters, dir.display());
    let result = run_search(&mut state, &data, |st, rec| {
        jl.push(rec)?;
        all.push(rec.clone());
        if st.iter.is_multiple_of(every) || st.iter == st.config.iters {
            arch_checkpoint(st, space).save(&ck_dir.join(format!("arch-{:05}.json", st.iter)))?;
            save_search_state(st, &space, &state_dir)?;
            write(&dir.join("series.csv"), &series(initial_entropy, &all))?;
            println!(
                "iter {:>5}  loss_d_w {:>8.4}  loss_g_w {:>8.4}  entropy {:.4}",
                rec.iter, rec.loss_d_w, rec.loss_g_w, rec.mean_edge_entropy
            );
        }
        Ok(())
    });
    if let Err(e) = result {
        jl.push(&json!({ "iter": state.iter + 1, "error": e.to_string() }))?;
        return Err(e);
    }
    write(&dir.join("series.csv"), &series(initial_entropy, &all))?;
    let arch = derive(&state.arch, &template, cfg.seed, true)?;
    write(&dir.join("derived.arch"), &arch.to_text(&template))?;
    println!("derived architecture written to {}", dir.join("derived.arch").display());
    Ok(())
}

fn emit_arch(arch: &DerivedArch, template: &advnas_core::NetworkTemplate, out: Option<&Path>) -> Result<()> {
    let text = arch.to_text(template);
    match out {
        Some(path) => {
            write(path, &text)?;
            println!("{} architecture written to {}", arch.source.name(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn derive_cmd(checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let ck = ArchCheckpoint::load(checkpoint)?;
    let template = ck.template()?;
    let arch = derive(&ck.arch, &template, ck.seed, ck.has_beta)?;
    emit_arch(&arch, &template, out)
}

fn random(common: &Common, out: Option<&Path>) -> Result<()> {
    let (cfg, _) = load_config(common)?;
    let template = cfg.space.template()?;
    let arch = sample_random_arch(&template, cfg.seed, &mut Streams::new(cfg.seed).random_arch)?;
    emit_arch(&arch, &template, out)
}

fn count(config: Option<&Path>) -> Result<()> {
    let space = match config {
        Some(path) => RunConfig::load(path)?.space,
        None => SpaceConfig::default(),
    };
    let t = space.template()?;
    let rows = [
        ("generator", count_architectures(&t.generator.cells)),
        ("discriminator", count_architectures(&t.discriminator.cells)),
        ("joint", t.count()),
    ];
    for (name, c) in rows {
        println!("{name} = {}", c.exact);
        println!("{name}_log10 = {:.4}", c.log10);
    }
    Ok(())
}

fn train(arch_path: &Path, common: &Common, out: &Path) -> Result<()> {
    let text = fs::read_to_string(arch_path).map_err(io_err(arch_path))?;
    let arch = DerivedArch::from_text(&text)?;
    let common = Common {
        seed: common.seed.or(common.config.is_none().then_some(arch.seed)),
        ..common.clone()
    };
    let (mut cfg, has_file) = load_config(&common)?;
    if !has_file {
        cfg.space.base_channels = arch.channels;
        cfg.space.base_resolution = arch.base_resolution;
    }
    let template = cfg.space.template()?;
    arch.validate(&template)?;
    let (data, heldout) = cfg.datasets()?;
    mkdir(out)?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    write(&out.join("arch.arch"), &arch.to_text(&template))?;
    let mut jl = JsonLines::create(&out.join("log.jsonl"))?;
    let every = cfg.train.log_every.max(1);
    let mut failed = None;
    let outcome = train_derived(&arch, &template, &data, &heldout, cfg.train.clone(), &cfg.eval, cfg.seed, |r: &TrainRecord| {
        if let Err(e) = jl.push(r) {
            failed.get_or_insert(e);
        }
        if r.iter.is_multiple_of(every) {
            println!("iter {:>5}  loss_d {:>8.4}  loss_g {:>8.4}", r.iter, r.loss_d, r.loss_g);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    save_weights(&outcome.trainer, &arch, &cfg.space, cfg.seed, &out.join("weights.bin"))?;
    if let Some(e) = outcome.error {
        jl.push(&json!({ "iter": outcome.trainer.iter + 1, "error": e.to_string() }))?;
        eprintln!("last finite weights saved to {}", out.join("weights.bin").display());
        return Err(e);
    }
    let report = outcome.report.expect("report present without error");
    write(&out.join("report.txt"), &format!("{report}\n"))?;
    println!("{report}");
    Ok(())
}

fn eval(checkpoint: &str, common: &Common) -> Result<()> {
    let path = Path::new(checkpoint);
    let weights = path.is_file();
    let common = match (weights, common.seed, &common.config) {
        (true, None, None) => Common {
            seed: Some(load_generator(path)?.2.seed),
            ..common.clone()
        },
        (false, None, None) => Common { seed: Some(0), ..common.clone() },
        _ => common.clone(),
    };
    let (cfg, _) = load_config(&common)?;
    let (_, heldout) = cfg.datasets()?;
    let n = cfg.eval.samples.min(heldout.len());
    let real = heldout.gather(&(0..n).collect::<Vec<_>>());
    let fake = if weights {
        let (g, _, _) = load_generator(path)?;
        sample_generator(&g, n, cfg.seed)?
    } else {
        let mut other = cfg.clone();
        other.io.dataset = checkpoint.to_string();
        let (_, fake) = other.datasets()?;
        fake_rows(&fake, n)?
    };
    println!("{}", evaluate(&real, &fake, cfg.eval.features)?);
    Ok(())
}

fn fake_rows(ds: &Dataset, n: usize) -> Result<advnas_core::Tensor<f32>> {
    if ds.len() < n {
        return Err(Error::Config(format!("fake dataset has {} images, {n} needed", ds.len())));
    }
    Ok(ds.gather(&(0..n).collect::<Vec<_>>()))
}
