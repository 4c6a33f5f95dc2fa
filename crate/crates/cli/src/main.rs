use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use chanshort::channel::ChannelSpec;
use chanshort::design::{design_shortener, DesignOptions, Shortener, ShortenerFilters};
use chanshort::rates::{rate_report, write_rate_csv};
use chanshort::sim::{delay_sweep, run, sigma_experiment, write_results_csv, SimConfig};
use chanshort::FrequencyGrid;
use chanshort_verify::{run_all, Budget};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{Map, Value};

/// Channel shortener design, rate tables and Monte Carlo experiments.
#[derive(Parser, Debug)]
#[command(name = "chanshort", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frequency grid size for design and rate integrals.
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Override a configuration key, e.g. `--set channel.snr_db=12`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

/// Shorthands shared by the commands; each one sets a configuration key.
#[derive(Args, Debug, Default)]
struct Shorthand {
    /// Channel preset: epr4, proakis_c or iid.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    shortener: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long)]
    modulation: Option<String>,
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long)]
    blocks: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design one shortener and print its filters as JSON.
    Design(Shorthand),
    /// Rate table over SNR (bits/symbol, CSV).
    Rates(Shorthand),
    /// Monte Carlo SER/BER/MI per SNR point (CSV).
    Simulate(Shorthand),
    /// σ_in → σ_out experiment for the FOM shortener (CSV).
    SweepSigma(Shorthand),
    /// MI versus SNR per decision delay, with the SNR reaching a target MI.
    SweepDelay(Shorthand),
    /// Run the acceptance checks.
    Verify {
        /// Use the full Monte Carlo budget.
        #[arg(long)]
        full: bool,
    },
}

enum Failure {
    /// Bad input or a failed design: exit 2.
    Usage(anyhow::Error),
    /// A check reported a failure: exit 1.
    Check(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

const CHANNEL_KEYS: [&str; 8] = ["name", "taps_re", "taps_im", "n0", "snr_db", "preset", "length", "seed"];
const SIM_KEYS: [&str; 9] = ["channel", "modulation", "shortener", "nu", "d", "block_len", "n_blocks", "snr_db", "seed"];

fn known_keys(cmd: &Command) -> Vec<&'static str> {
    match cmd {
        Command::Design(_) => vec!["channel", "shortener", "nu", "snr_db"],
        Command::Rates(_) => vec!["channel", "nu", "snr_db"],
        Command::Simulate(_) => SIM_KEYS.to_vec(),
        Command::SweepSigma(_) => [&SIM_KEYS[..], &["sigma_grid"]].concat(),
        Command::SweepDelay(_) => [&SIM_KEYS[..], &["d_values", "target_mi_norm"]].concat(),
        Command::Verify { .. } => Vec::new(),
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Map<String, Value>, key: &str, value: Value) {
    match key.split_once('.') {
        Some((head, rest)) => {
            let child = root.entry(head).or_insert_with(|| Value::Object(Map::new()));
            if !child.is_object() {
                *child = Value::Object(Map::new());
            }
            set_path(child.as_object_mut().expect("object"), rest, value);
        }
        None => {
            root.insert(key.to_string(), value);
        }
    }
}

fn check_key(key: &str, known: &[&str]) -> anyhow::Result<()> {
    let (head, rest) = key.split_once('.').map_or((key, None), |(h, r)| (h, Some(r)));
    let ok = known.contains(&head)
        && match (head, rest) {
            (_, None) => true,
            ("channel", Some(r)) => CHANNEL_KEYS.contains(&r),
            ("shortener", Some(r)) => ["kind", "sigma"].contains(&r),
            _ => false,
        };
    if !ok {
        bail!("unknown configuration key `{key}`");
    }
    Ok(())
}

fn shorthand_overrides(s: &Shorthand) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    if let Some(p) = &s.preset {
        out.push(("channel.preset".into(), Value::from(p.as_str())));
    }
    if let Some(k) = &s.shortener {
        out.push(("shortener.kind".into(), Value::from(k.to_ascii_lowercase())));
    }
    if let Some(x) = s.sigma {
        out.push(("shortener.sigma".into(), Value::from(x)));
    }
    if let Some(x) = s.nu {
        out.push(("nu".into(), Value::from(x)));
    }
    if let Some(m) = &s.modulation {
        out.push(("modulation".into(), Value::from(m.to_ascii_lowercase())));
    }
    if let Some(v) = &s.snr_db {
        out.push(("snr_db".into(), Value::from(v.clone())));
    }
    if let Some(b) = s.blocks {
        out.push(("n_blocks".into(), Value::from(b)));
    }
    out
}

/// Config file, then shorthand flags, then `--seed`, then `--set`.
fn load_config(common: &Common, cmd: &Command, shorthand: &Shorthand) -> anyhow::Result<Map<String, Value>> {
    let mut root = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            match serde_json::from_str::<Value>(&text).with_context(|| format!("config {} is not JSON", path.display()))? {
                Value::Object(m) => m,
                _ => bail!("config {} must hold a JSON object", path.display()),
            }
        }
        None => Map::new(),
    };
    let known = known_keys(cmd);
    for key in root.keys() {
        check_key(key, &known)?;
    }
    let mut sets = shorthand_overrides(shorthand);
    if let Some(seed) = common.seed {
        if known.contains(&"seed") {
            sets.push(("seed".into(), Value::from(seed)));
        }
    }
    for raw in &common.overrides {
        let (k, v) = raw.split_once('=').ok_or_else(|| anyhow!("override `{raw}` is not KEY=VALUE"))?;
        sets.push((k.trim().to_string(), parse_value(v.trim())));
    }
    for (k, v) in sets {
        check_key(&k, &known)?;
        set_path(&mut root, &k, v);
    }
    Ok(root)
}

fn take<T: for<'de> Deserialize<'de>>(root: &mut Map<String, Value>, key: &str) -> anyhow::Result<Option<T>> {
    root.remove(key)
        .map(|v| serde_json::from_value(v).with_context(|| format!("invalid `{key}`")))
        .transpose()
}

fn design_options(common: &Common) -> anyhow::Result<DesignOptions> {
    let mut opts = DesignOptions::default();
    if let Some(n) = common.grid_points {
        opts.grid = FrequencyGrid::new(n)?;
    }
    Ok(opts)
}

fn shortener_from(root: &mut Map<String, Value>) -> anyhow::Result<Shortener> {
    let s: Shortener = take(root, "shortener")?.ok_or_else(|| anyhow!("`shortener` is required"))?;
    Ok(Shortener::new(s.kind(), s.sigma())?)
}

fn sim_config(mut root: Map<String, Value>, common: &Common) -> anyhow::Result<SimConfig> {
    let shortener = shortener_from(&mut root)?;
    root.insert("shortener".into(), serde_json::to_value(shortener)?);
    let mut cfg: SimConfig = serde_json::from_value(Value::Object(root)).context("invalid simulation config")?;
    cfg.design = design_options(common)?;
    cfg.validate()?;
    if cfg.snr_db.is_empty() {
        bail!("`snr_db` needs at least one point");
    }
    Ok(cfg)
}

fn emit(common: &Common, text: &[u8]) -> anyhow::Result<()> {
    match &common.out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => io::stdout().write_all(text).context("stdout"),
    }
}

fn design(common: &Common, cmd: &Command, s: &Shorthand) -> Result<(), Failure> {
    let mut root = load_config(common, cmd, s)?;
    let shortener = shortener_from(&mut root)?;
    let nu: usize = take(&mut root, "nu")?.ok_or_else(|| anyhow!("`nu` is required"))?;
    let snr: Option<Vec<f64>> = take::<Value>(&mut root, "snr_db")?
        .map(|v| if v.is_array() { serde_json::from_value(v) } else { serde_json::from_value(v).map(|x: f64| vec![x]) })
        .transpose()?;
    let spec: ChannelSpec = take(&mut root, "channel")?.ok_or_else(|| anyhow!("`channel` is required"))?;
    let cir = match snr.as_deref() {
        Some([x]) => spec.at_snr_db(*x)?,
        Some(_) => return Err(anyhow!("design takes a single SNR").into()),
        None => spec.to_cir()?,
    };
    let filters = design_shortener(&cir, nu, shortener, &design_options(common)?)?;
    if let ShortenerFilters::Ubm(u) = &filters {
        eprintln!("stationarity mean(M(1+G)) = {:.12} (residual {:.3e})", u.stationarity, u.stationarity + 1.0);
    }
    let mut json = filters.to_json();
    json.push('\n');
    emit(common, json.as_bytes())?;
    Ok(())
}

fn rates(common: &Common, cmd: &Command, s: &Shorthand) -> Result<(), Failure> {
    let mut root = load_config(common, cmd, s)?;
    let nu: usize = take(&mut root, "nu")?.ok_or_else(|| anyhow!("`nu` is required"))?;
    let snrs: Vec<f64> = take(&mut root, "snr_db")?.ok_or_else(|| anyhow!("`snr_db` is required"))?;
    let spec: ChannelSpec = take(&mut root, "channel")?.ok_or_else(|| anyhow!("`channel` is required"))?;
    let opts = design_options(common)?;
    let rows = snrs
        .iter()
        .map(|&x| rate_report(&spec.at_snr_db(x)?, nu, &opts))
        .collect::<chanshort::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    let bits: Vec<_> = rows.iter().map(|r| r.in_bits()).collect();
    write_rate_csv(&mut buf, &bits, "bits")?;
    emit(common, &buf)?;
    let flagged: Vec<String> = rows
        .iter()
        .flat_map(|r| r.violations(1e-9).into_iter().map(move |v| format!("{} dB: {} (slack {:.3e})", r.snr_db, v.name, v.slack())))
        .collect();
    if flagged.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("rate ordering violated:\n  {}", flagged.join("\n  "))))
    }
}

fn simulate(common: &Common, cmd: &Command, s: &Shorthand) -> Result<(), Failure> {
    let cfg = sim_config(load_config(common, cmd, s)?, common)?;
    let rows = run(&cfg)?;
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &rows)?;
    emit(common, &buf)?;
    Ok(())
}

fn sweep_sigma(common: &Common, cmd: &Command, s: &Shorthand) -> Result<(), Failure> {
    let mut root = load_config(common, cmd, s)?;
    let grid: Vec<f64> = take(&mut root, "sigma_grid")?.unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect());
    if !root.contains_key("shortener") {
        root.insert("shortener".into(), serde_json::json!({"kind": "fom", "sigma": 0.0}));
    }
    let cfg = sim_config(root, common)?;
    let mut rows = Vec::new();
    for &snr in &cfg.snr_db {
        rows.extend(sigma_experiment(&cfg, snr, &grid)?);
    }
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &rows)?;
    emit(common, &buf)?;
    Ok(())
}

fn sweep_delay(common: &Common, cmd: &Command, s: &Shorthand) -> Result<(), Failure> {
    let mut root = load_config(common, cmd, s)?;
    let d_values: Vec<usize> = take(&mut root, "d_values")?.ok_or_else(|| anyhow!("`d_values` is required"))?;
    let target: f64 = take(&mut root, "target_mi_norm")?.unwrap_or(0.5);
    let cfg = sim_config(root, common)?;
    let sweep = delay_sweep(&cfg, &d_values, target)?;
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &sweep.rows)?;
    emit(common, &buf)?;
    for (d, snr) in &sweep.snr_at_target {
        match snr {
            Some(x) => eprintln!("D = {d}: normalized MI {target} at {x:.3} dB"),
            None => eprintln!("D = {d}: normalized MI {target} not reached in the SNR range"),
        }
    }
    Ok(())
}

fn verify(common: &Common, full: bool) -> Result<(), Failure> {
    if let Some(p) = &common.config {
        if !p.exists() {
            return Err(anyhow!("config {} does not exist", p.display()).into());
        }
    }
    let budget = if full { Budget::full() } else { Budget::from_env() };
    let outcomes = run_all(&budget, |o| println!("{o} [{:.1} s]", o.seconds));
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Check(format!("{failed} of {} criteria failed", outcomes.len())))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = &cli.common;
    let result = match &cli.command {
        Command::Design(s) => design(common, &cli.command, s),
        Command::Rates(s) => rates(common, &cli.command, s),
        Command::Simulate(s) => simulate(common, &cli.command, s),
        Command::SweepSigma(s) => sweep_sigma(common, &cli.command, s),
        Command::SweepDelay(s) => sweep_delay(common, &cli.command, s),
        Command::Verify { full } => verify(common, *full),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
