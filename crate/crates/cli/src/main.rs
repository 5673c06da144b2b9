//! `ladder`: experiment runner for biased walks on the percolation ladder.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use ladder_core::config::ExperimentConfig;
use ladder_core::experiment::{sample_pp_env, with_threads};
use ladder_core::percolation::{decompose, ConditionedSampler};
use ladder_core::report::{run_einstein, run_kappa, run_sigma, run_speed, to_json, CsvTable, Provenance};
use ladder_core::rng::{phase_seed, stream_rng};
use ladder_core::selftest::{hitting_table, run_selftest, SelftestSizes};
use ladder_core::{LadderError, Result};

const VERSION: &str = env!("LADDER_VERSION");

#[derive(Parser)]
#[command(name = "ladder", version = VERSION, about = "Biased random walk on the conditioned percolation ladder")]
struct Cli {
    /// Config file in `key = value` format.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores); `LADDER_THREADS` takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Bias, or a comma-separated bias grid.
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample environments under P_p and report their decomposition.
    SampleEnv,
    /// Estimate kappa from harvested cycles.
    Kappa,
    /// Exact hitting probabilities against their closed-form brackets.
    HittingCheck,
    /// Direct and regeneration speed at the first bias of the grid.
    Speed,
    /// Path variance and psi-moment covariance at zero bias.
    Sigma,
    /// Full bias sweep with the Einstein verdict.
    Einstein,
    /// All exact oracle checks.
    Selftest {
        /// Reduced sizes.
        #[arg(long)]
        quick: bool,
    },
}

impl Command {
    fn kind(&self) -> &'static str {
        match self {
            Command::SampleEnv => "sample-env",
            Command::Kappa => "kappa",
            Command::HittingCheck => "hitting-check",
            Command::Speed => "speed",
            Command::Sigma => "sigma",
            Command::Einstein => "einstein",
            Command::Selftest { .. } => "selftest",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| LadderError::Parameter(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let flags: [(&str, Option<String>); 7] = [
        ("seed", cli.seed.map(|v| v.to_string())),
        ("out", cli.out.as_ref().map(|v| v.display().to_string())),
        ("threads", cli.threads.map(|v| v.to_string())),
        ("p", cli.p.map(|v| format!("{v:?}"))),
        ("lambdas", cli.lambda.clone()),
        ("alpha", cli.alpha.map(|v| format!("{v:?}"))),
        ("replicas", cli.replicas.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(0, key, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Artifacts<'a> {
    cfg: &'a ExperimentConfig,
    prov: Provenance,
    kind: &'a str,
}

impl Artifacts<'_> {
    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.cfg.out.join(name);
        let dir = path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| LadderError::Parameter(format!("{}: {e}", dir.display())))?;
        fs::write(&path, body).map_err(|e| LadderError::Parameter(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, body: &T) -> Result<()> {
        let text = to_json(self.kind, self.cfg, &self.prov, body)?;
        let path = self.write(&format!("{}.json", self.kind), &text)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }

    /// CSV with the provenance header; `rows` already carries its column line.
    fn csv(&self, suffix: &str, rows: &str) -> Result<()> {
        let text = format!("{}{rows}", self.prov.csv_header(self.cfg));
        let path = self.write(&format!("{}{suffix}.csv", self.kind), &text)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }

    fn table(&self, t: &CsvTable) -> Result<()> {
        let path = self.write(
            &format!("{}.csv", self.kind),
            &t.render(&self.prov.csv_header(self.cfg)),
        )?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

/// Serializes as `{ name: value }`.
struct Wrap<'a, T>(&'static str, &'a T);

impl<T: Serialize> Serialize for Wrap<'_, T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(1))?;
        m.serialize_entry(self.0, self.1)?;
        m.end()
    }
}

#[derive(Serialize)]
struct EnvStats {
    env: usize,
    open_edges: usize,
    preregeneration_points: usize,
    cycles: usize,
    mean_cycle_length: f64,
    traps: usize,
    max_trap_length: u32,
}

fn sample_env(cfg: &ExperimentConfig, out: &Artifacts) -> Result<bool> {
    let sampler = ConditionedSampler::new(cfg.p, cfg.n1, cfg.n2)?;
    let seed = phase_seed(cfg.seed, "sample-env");
    let envs = (0..cfg.envs)
        .into_par_iter()
        .map(|i| sample_pp_env(&sampler, &mut stream_rng(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let stats: Vec<EnvStats> = envs
        .iter()
        .enumerate()
        .map(|(env, w)| {
            let d = decompose(w, cfg.margin);
            let lengths: Vec<u32> = d.cycles.iter().map(|c| c.length).collect();
            EnvStats {
                env,
                open_edges: w.open_edge_count(),
                preregeneration_points: d.prereg_xs.len(),
                cycles: lengths.len(),
                mean_cycle_length: lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len().max(1) as f64,
                traps: d.traps.len(),
                max_trap_length: d.trap_lengths().into_iter().max().unwrap_or(0),
            }
        })
        .collect();
    let header = out.prov.csv_header(cfg);
    for (i, w) in envs.iter().enumerate() {
        out.write(
            &format!("sample-env-windows/env-{i:04}.txt"),
            &format!("{header}{}", w.to_text()),
        )?;
    }
    let mut rows =
        String::from("env,open_edges,preregeneration_points,cycles,mean_cycle_length,traps,max_trap_length\n");
    for s in &stats {
        rows.push_str(&format!(
            "{},{},{},{},{:?},{},{}\n",
            s.env, s.open_edges, s.preregeneration_points, s.cycles, s.mean_cycle_length, s.traps, s.max_trap_length
        ));
    }
    out.csv("", &rows)?;
    out.json(&Wrap("environments", &stats))?;
    println!("{} environments on [-{}, {}]", stats.len(), cfg.n1, cfg.n2);
    Ok(true)
}

fn kappa(cfg: &ExperimentConfig, out: &Artifacts) -> Result<bool> {
    let k = run_kappa(cfg)?;
    let mut t = CsvTable::default();
    t.push(0.0, "kappa", &k.as_estimate());
    out.table(&t)?;
    out.json(&Wrap("kappa", &k))?;
    println!("kappa = {:.6} +- {:.6} from {} cycles", k.kappa, k.se, k.n_cycles);
    Ok(true)
}

fn hitting_check(cfg: &ExperimentConfig, out: &Artifacts) -> Result<bool> {
    let lambdas: Vec<f64> = cfg
        .lambdas
        .iter()
        .copied()
        .filter(|&l| l > 0.0 && l <= cfg.lambda0)
        .collect();
    if lambdas.is_empty() {
        return Err(LadderError::Parameter(format!(
            "no bias in {:?} lies in (0, lambda0 = {}]",
            cfg.lambdas, cfg.lambda0
        )));
    }
    let rows = hitting_table(cfg.envs, cfg.p, &lambdas, cfg.lambda0, cfg.seed)?;
    let mut text = String::from("env,lambda,L,R,exact,lower,upper,inside\n");
    for r in &rows {
        let big_r = r.r.map_or("inf".to_string(), |v| v.to_string());
        text.push_str(&format!(
            "{},{:?},{},{},{:?},{:?},{:?},{}\n",
            r.env, r.lambda, r.l, big_r, r.exact, r.lower, r.upper, r.inside
        ));
    }
    out.csv("", &text)?;
    out.json(&Wrap("rows", &rows))?;
    let bad: Vec<_> = rows.iter().filter(|r| !r.inside).collect();
    println!("{} cases, {} outside their bracket", rows.len(), bad.len());
    if let Some(r) = bad.first() {
        eprintln!(
            "first failure: env {} lambda {} L {} R {:?}: {} not in [{}, {}]",
            r.env, r.lambda, r.l, r.r, r.exact, r.lower, r.upper
        );
    }
    Ok(bad.is_empty())
}

fn speed(cfg: &ExperimentConfig, out: &Artifacts) -> Result<bool> {
    let lambda = *cfg
        .lambdas
        .first()
        .ok_or_else(|| LadderError::Parameter("empty bias grid".into()))?;
    let sp = run_speed(cfg, lambda)?;
    let mut t = CsvTable::default();
    t.push(lambda, "direct", &sp.direct);
    if let Some(e) = &sp.regen {
        t.push(lambda, "regen", e);
    }
    out.table(&t)?;
    let mut gaps = String::from("replica,tau_gap,rho_gap\n");
    for (i, r) in sp.records.iter().enumerate() {
        for (tg, rg) in r.gaps() {
            gaps.push_str(&format!("{i},{tg},{rg}\n"));
        }
    }
    out.csv("-gaps", &gaps)?;
    out.json(&sp)?;
    println!(
        "lambda {lambda}: direct {:.6} +- {:.6}, regen {}",
        sp.direct.value,
        sp.direct.se,
        sp.regen.map_or_else(
            || sp.regen_note.clone().unwrap_or_default(),
            |e| format!("{:.6} +- {:.6}", e.value, e.se)
        )
    );
    Ok(true)
}

fn sigma(cfg: &ExperimentConfig, out: &Artifacts) -> Result<bool> {
    let s = run_sigma(cfg)?;
    let mut t = CsvTable::default();
    s.push_csv(&mut t);
    out.table(&t)?;
    out.json(&s)?;
    println!(
        "Var(X_n)/n = {:.4} +- {:.4}; s11 = {:.4} +- {:.4}; s12 = {:.4} +- {:.4}; s22 = {:.4} +- {:.4}",
        s.path_variance.sigma2.value,
        s.path_variance.sigma2.se,
        s.psi.s11.value,
        s.psi.s11.se,
        s.psi.s12.value,
        s.psi.s12.se,
        s.psi.s22.value,
        s.psi.s22.se
    );
    Ok(true)
}

fn einstein(cfg: &ExperimentConfig, out: &Artifacts) -> Result<bool> {
    let r = run_einstein(cfg)?;
    out.table(&r.csv())?;
    out.json(&r)?;
    for row in &r.per_lambda {
        println!(
            "lambda {:<6} v/lambda {:.4} +- {:.4}",
            row.lambda, row.ratio.value, row.ratio.se
        );
    }
    println!(
        "sigma2 {:.4} +- {:.4}; verdict: {}",
        r.sigma.path_variance.sigma2.value,
        r.sigma.path_variance.sigma2.se,
        if r.verdict.passed {
            "consistent"
        } else {
            "not consistent"
        }
    );
    Ok(true)
}

fn selftest(cfg: &ExperimentConfig, out: &Artifacts, quick: bool) -> Result<bool> {
    let sizes = if quick {
        SelftestSizes::quick()
    } else {
        SelftestSizes::full()
    };
    let checks = run_selftest(cfg.seed, sizes);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    out.json(&Wrap("checks", &checks))?;
    if let Some(c) = checks.iter().find(|c| !c.passed) {
        eprintln!("first failing check: {}: {}", c.name, c.detail);
        return Ok(false);
    }
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let out = Artifacts {
        cfg: &cfg,
        prov: Provenance::new(VERSION, cfg.seed),
        kind: cli.command.kind(),
    };
    with_threads(cfg.effective_threads(), || match &cli.command {
        Command::SampleEnv => sample_env(&cfg, &out),
        Command::Kappa => kappa(&cfg, &out),
        Command::HittingCheck => hitting_check(&cfg, &out),
        Command::Speed => speed(&cfg, &out),
        Command::Sigma => sigma(&cfg, &out),
        Command::Einstein => einstein(&cfg, &out),
        Command::Selftest { quick } => selftest(&cfg, &out, *quick),
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
