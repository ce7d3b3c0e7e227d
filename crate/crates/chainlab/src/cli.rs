//! Batch CLI over the experiment modules. Every run writes its outputs plus
//! a metadata echo (full config, tool version, corrector-table hash) so the
//! CSV bytes can be reproduced exactly from the metadata alone.
//!
//! Exit codes: 0 on success and on "property check passed", 2 when a
//! property check fails (the report is still written), 1 on usage or
//! configuration errors.

use crate::chain::{ChainParams, ChainState};
use crate::corrector::CorrectorSet;
use crate::decay::{breather_init, classify_spectrum, run_decay};
use crate::effective::{
    breather_ladder_samples, ratio_names, states_from_rows, verify_error_bounds, BarVariant,
    DELTA,
};
use crate::error::{Error, Result};
use crate::freeosc::kappa;
use crate::integrate::{simulate, IntegratorConfig, Observable, SCHEME_ID};
use crate::lyapunov::{
    calibrate_u0_power, gamma_mix, sample_states, verify_dissipation, LyapunovConfig,
};
use crate::spectral::{ladder_scaling, EigenfunctionSpec, Variant};
use crate::timeseries::{RunMetadata, TimeSeries};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "chainlab", version, about = "Energy dissipation experiments for thermostated anharmonic chains")]
struct Cli {
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $CHAINLAB_OUT_DIR or ".").
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the decay constant kappa_{k,n}.
    Kappa(KappaArgs),
    /// Classify the spectral trichotomy from (k, n).
    Classify(ClassifyArgs),
    /// Integrate the chain SDE and record observables.
    Simulate(SimulateArgs),
    /// Breather decay run with slope fit against the predicted law.
    Decay(DecayArgs),
    /// Quasi-eigenfunction norm/residual scaling across a shell ladder.
    Spectral(SpectralArgs),
    /// Effective-dynamics remainder bounds along breather trajectories.
    Effective(EffectiveArgs),
    /// Lyapunov dissipation verification on sampled states.
    Lyapunov(LyapunovArgs),
}

#[derive(Args, Serialize, Clone)]
struct KappaArgs {
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Serialize, Clone)]
struct ClassifyArgs {
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Serialize, Clone)]
struct SimulateArgs {
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial breather energy on the middle site (0 = rest).
    #[arg(long)]
    e_mid: Option<f64>,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Serialize, Clone)]
struct DecayArgs {
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    e_mid: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the full phase-space states (flat p..., q... columns).
    #[arg(long)]
    dump_states: bool,
    #[arg(long)]
    states_stride: Option<usize>,
}

#[derive(Args, Serialize, Clone)]
struct SpectralArgs {
    /// three | long
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Shell ladder as lo:hi in powers of 3 (e.g. 17:23).
    #[arg(long)]
    ladder: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    starred: bool,
}

#[derive(Args, Serialize, Clone)]
struct EffectiveArgs {
    #[arg(long)]
    k: Option<f64>,
    /// 41 | 43
    #[arg(long)]
    variant: Option<String>,
    /// Flat-state CSV produced by `decay --dump-states`.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Breather ladder lo:hi:count in log10 E, used when --from is absent.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    seg_time: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Serialize, Clone)]
struct LyapunovArgs {
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    u0_power: Option<u32>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Entry point: parse, dispatch, map errors to exit codes.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/usage; map every parse failure to exit 1
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 1;
        }
    };
    let out_dir = cli
        .out_dir
        .or_else(|| std::env::var_os("CHAINLAB_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let result = match cli.command {
        Command::Kappa(a) => cmd_kappa(a, &config),
        Command::Classify(a) => cmd_classify(a, &config),
        Command::Simulate(a) => cmd_simulate(a, &config, &out_dir),
        Command::Decay(a) => cmd_decay(a, &config, &out_dir),
        Command::Spectral(a) => cmd_spectral(a, &config, &out_dir),
        Command::Effective(a) => cmd_effective(a, &config, &out_dir),
        Command::Lyapunov(a) => cmd_lyapunov(a, &config, &out_dir),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<serde_json::Value> {
    match path {
        None => Ok(serde_json::Value::Null),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

/// Flag wins over config value wins over default.
fn pick<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    config: &serde_json::Value,
    key: &str,
    default: T,
) -> T {
    if let Some(v) = flag {
        return v;
    }
    if let Some(v) = config.get(key) {
        if let Ok(parsed) = serde_json::from_value(v.clone()) {
            return parsed;
        }
    }
    default
}

fn write_outputs(
    out_dir: &Path,
    stem: &str,
    series: Option<&TimeSeries>,
    summary: &impl Serialize,
    meta: RunMetadata,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    if let Some(ts) = series {
        let mut buf = Vec::new();
        ts.write_csv(&mut buf)?;
        std::fs::write(out_dir.join(format!("{stem}.csv")), buf)?;
    }
    std::fs::write(
        out_dir.join(format!("{stem}-summary.json")),
        serde_json::to_string_pretty(summary)?,
    )?;
    meta.write(&out_dir.join(format!("{stem}.meta.json")))?;
    Ok(())
}

fn cmd_kappa(a: KappaArgs, config: &serde_json::Value) -> Result<i32> {
    let k = pick(a.k, config, "k", 2.0);
    let n = pick(a.n, config, "n", 1);
    let r = kappa(k, n)?;
    println!("kappa({k}, {n}) = {:.8} (truncation estimate {:.2e})", r.kappa, r.stderr_estimate);
    Ok(0)
}

fn cmd_classify(a: ClassifyArgs, config: &serde_json::Value) -> Result<i32> {
    let k = pick(a.k, config, "k", 2.0);
    let n = pick(a.n, config, "n", 1);
    println!("{}", classify_spectrum(k, n)?);
    Ok(0)
}

fn cmd_simulate(a: SimulateArgs, config: &serde_json::Value, out_dir: &Path) -> Result<i32> {
    let k = pick(a.k, config, "k", 2.0);
    let sites = pick(a.sites, config, "sites", 3);
    let gamma = pick(a.gamma, config, "gamma", 1.3);
    let temp = pick(a.temp, config, "temp", 1.0);
    let h = pick(a.h, config, "h", 1e-3);
    let t_final = pick(a.t_final, config, "t_final", 10.0);
    let stride = pick(a.stride, config, "stride", 100);
    let seed = pick(a.seed, config, "seed", 1);
    let e_mid = pick(a.e_mid, config, "e_mid", 0.0);
    let name = pick(a.name.clone(), config, "name", "simulate".to_string());

    let params = ChainParams::symmetric(sites, k, gamma, temp)?;
    let cfg = IntegratorConfig::new(h, t_final, stride, seed)?;
    let state0 =
        if e_mid > 0.0 { breather_init(&params, e_mid) } else { ChainState::zeros(sites) };
    let mut obs = vec![Observable::total_energy()];
    for i in 0..sites {
        obs.push(Observable::site_energy(i));
    }
    let series = simulate(&state0, &params, &cfg, &obs)?;

    #[derive(Serialize)]
    struct Summary {
        params: ChainParams,
        integrator: IntegratorConfig,
        rows: usize,
    }
    let summary = Summary { params, integrator: cfg.clone(), rows: series.len() };
    let mut meta = RunMetadata::new(serde_json::to_value(&a)?);
    meta.scheme = Some(SCHEME_ID.into());
    meta.seed = Some(seed);
    write_outputs(out_dir, &name, Some(&series), &summary, meta)?;
    println!("wrote {}.csv ({} rows)", name, series.len());
    Ok(0)
}

#[derive(Serialize)]
struct DecaySummary {
    params: ChainParams,
    e_mid: f64,
    predicted_beta: f64,
    predicted_slope: f64,
    kappa: f64,
    fitted_slope: f64,
    fit_stderr: f64,
    relative_error: f64,
    window_len: usize,
    pass: bool,
}

fn cmd_decay(a: DecayArgs, config: &serde_json::Value, out_dir: &Path) -> Result<i32> {
    let k = pick(a.k, config, "k", 2.0);
    let sites = pick(a.sites, config, "sites", 3);
    let gamma = pick(a.gamma, config, "gamma", 1.3);
    let temp = pick(a.temp, config, "temp", 1.0);
    let h = pick(a.h, config, "h", 1e-3);
    let e_mid = pick(a.e_mid, config, "e_mid", 1e3);
    let t_final = pick(a.t_final, config, "t_final", 650.0);
    let seed = pick(a.seed, config, "seed", 1);
    let states_stride = pick(a.states_stride, config, "states_stride", 1000);

    let params = ChainParams::symmetric(sites, k, gamma, temp)?;
    let cfg = IntegratorConfig::new(h, t_final, 100, seed)?;
    let run = run_decay(&params, e_mid, &cfg)?;
    let rel = (run.fitted_slope - run.prediction.slope) / run.prediction.slope;
    let pass = rel.abs() <= 0.05;
    let summary = DecaySummary {
        params,
        e_mid,
        predicted_beta: run.prediction.beta,
        predicted_slope: run.prediction.slope,
        kappa: run.prediction.kappa,
        fitted_slope: run.fitted_slope,
        fit_stderr: run.fit_stderr,
        relative_error: rel,
        window_len: run.window_len,
        pass,
    };
    let stem = format!("decay-k{k}");
    let mut meta = RunMetadata::new(serde_json::to_value(&a)?);
    meta.scheme = Some(SCHEME_ID.into());
    meta.seed = Some(seed);
    write_outputs(out_dir, &stem, Some(&run.series), &summary, meta)?;

    if a.dump_states {
        // re-run recording raw states; columns t, p0..pN, q0..qN
        let state0 = breather_init(&params, e_mid);
        let mut names: Vec<String> = (0..sites).map(|i| format!("p{i}")).collect();
        names.extend((0..sites).map(|i| format!("q{i}")));
        let mut obs: Vec<Observable> = Vec::new();
        for i in 0..sites {
            obs.push(Observable::new(&names[i], move |s, _| s.p[i]));
        }
        for i in 0..sites {
            obs.push(Observable::new(&names[sites + i], move |s, _| s.q[i]));
        }
        let cfg2 = IntegratorConfig::new(h, t_final, states_stride, seed)?;
        let st = simulate(&state0, &params, &cfg2, &obs)?;
        let mut buf = Vec::new();
        st.write_csv(&mut buf)?;
        std::fs::write(out_dir.join(format!("{stem}-states.csv")), buf)?;
    }

    println!(
        "decay k={k}: fitted {:.6} vs predicted {:.6} ({:+.2}%) -> {}",
        run.fitted_slope,
        run.prediction.slope,
        100.0 * rel,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct SpectralSummary {
    variant: String,
    starred: bool,
    k: f64,
    beta: f64,
    ladder: Vec<f64>,
    norm_slope: f64,
    norm_slope_stderr: f64,
    predicted_norm_slope: f64,
    ratio_slope: f64,
    ratio_slope_stderr: f64,
    predicted_ratio_slope: f64,
    rejection_acceptance: f64,
    pass: bool,
}

fn parse_ladder(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidParameter(format!("ladder must be lo:hi, got {spec}")));
    }
    let lo: i32 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad ladder bound {}", parts[0])))?;
    let hi: i32 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad ladder bound {}", parts[1])))?;
    if lo >= hi {
        return Err(Error::InvalidParameter("ladder lo must be < hi".into()));
    }
    Ok((lo..=hi).map(|n| 3.0_f64.powi(n)).collect())
}

fn cmd_spectral(a: SpectralArgs, config: &serde_json::Value, out_dir: &Path) -> Result<i32> {
    let variant_s = pick(a.variant.clone(), config, "variant", "three".to_string());
    let k = pick(a.k, config, "k", 2.0);
    let beta = pick(a.beta, config, "beta", 0.5);
    let ladder_s = pick(a.ladder.clone(), config, "ladder", "17:23".to_string());
    let samples = pick(a.samples, config, "samples", 120_000);
    let seed = pick(a.seed, config, "seed", 1);

    let (variant, sites) = match variant_s.as_str() {
        "three" => (Variant::ThreeSite, 3),
        "long" => (Variant::LongChain, 5),
        other => {
            return Err(Error::InvalidParameter(format!(
                "variant must be three|long, got {other}"
            )))
        }
    };
    if let Some(s) = a.sites {
        if s != sites {
            return Err(Error::InvalidParameter(format!(
                "variant {variant_s} requires {sites} sites"
            )));
        }
    }
    let ladder = parse_ladder(&ladder_s)?;
    let params = ChainParams::new(sites, k, 1.3, 1.3, 1.0, 1.0, beta)?;
    let corr = CorrectorSet::build(k)?;
    let spec = EigenfunctionSpec::new(variant, params, ladder[0], a.starred)?;
    let fit = ladder_scaling(&spec, &corr, &ladder, samples, seed)?;

    let pass = (fit.ratio_slope - fit.predicted_ratio_slope).abs() <= 0.05;
    let mut ts = TimeSeries::new(&["norm", "norm_stderr", "ratio", "ratio_stderr"]);
    for (i, &e) in ladder.iter().enumerate() {
        ts.push_row(
            e,
            &[fit.norms[i].mean, fit.norms[i].stderr, fit.ratios[i].mean, fit.ratios[i].stderr],
        );
    }
    let summary = SpectralSummary {
        variant: variant_s.clone(),
        starred: a.starred,
        k,
        beta,
        ladder: ladder.clone(),
        norm_slope: fit.norm_slope,
        norm_slope_stderr: fit.norm_slope_stderr,
        predicted_norm_slope: fit.predicted_norm_slope,
        ratio_slope: fit.ratio_slope,
        ratio_slope_stderr: fit.ratio_slope_stderr,
        predicted_ratio_slope: fit.predicted_ratio_slope,
        rejection_acceptance: fit.rejection_acceptance,
        pass,
    };
    let stem = format!(
        "spectral-{variant_s}-k{k}{}",
        if a.starred { "-starred" } else { "" }
    );
    let mut meta = RunMetadata::new(serde_json::to_value(&a)?);
    meta.seed = Some(seed);
    meta.corrector_table_hash = Some(corr.content_hash()?);
    write_outputs(out_dir, &stem, Some(&ts), &summary, meta)?;
    println!(
        "spectral {variant_s} k={k}{}: ratio slope {:.4} (predicted {:.4}) -> {}",
        if a.starred { " starred" } else { "" },
        fit.ratio_slope,
        fit.predicted_ratio_slope,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct EffectiveSummary {
    k: f64,
    variant: String,
    delta: f64,
    n_samples: usize,
    ratio_names: Vec<String>,
    sup_ratio: Vec<f64>,
    pass_per_ratio: Vec<bool>,
    pass: bool,
}

fn cmd_effective(a: EffectiveArgs, config: &serde_json::Value, out_dir: &Path) -> Result<i32> {
    let k = pick(a.k, config, "k", 2.0);
    let variant_s = pick(a.variant.clone(), config, "variant", "41".to_string());
    let h = pick(a.h, config, "h", 1e-3);
    let seg_time = pick(a.seg_time, config, "seg_time", 20.0);
    let seed = pick(a.seed, config, "seed", 1);
    let delta = pick(a.delta, config, "delta", DELTA);
    let levels_s = pick(a.levels.clone(), config, "levels", "2:6:9".to_string());

    let variant = match variant_s.as_str() {
        "41" => BarVariant::Thm41,
        "43" => BarVariant::Thm43,
        other => {
            return Err(Error::InvalidParameter(format!("variant must be 41|43, got {other}")))
        }
    };
    let params = ChainParams::symmetric(3, k, 1.3, 1.0)?;
    let corr = CorrectorSet::build(k)?;

    let samples: Vec<ChainState> = match &a.from {
        Some(path) => {
            let rows = read_csv_rows(path)?;
            states_from_rows(&rows, 3)?
        }
        None => {
            let parts: Vec<&str> = levels_s.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidParameter("levels must be lo:hi:count".into()));
            }
            let lo: f64 = parts[0].parse().map_err(|_| {
                Error::InvalidParameter(format!("bad level bound {}", parts[0]))
            })?;
            let hi: f64 = parts[1].parse().map_err(|_| {
                Error::InvalidParameter(format!("bad level bound {}", parts[1]))
            })?;
            let count: usize = parts[2].parse().map_err(|_| {
                Error::InvalidParameter(format!("bad level count {}", parts[2]))
            })?;
            let levels: Vec<f64> = (0..count)
                .map(|i| 10.0_f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
                .collect();
            breather_ladder_samples(&params, &levels, h, seg_time, seg_time * 0.25, 50, seed)?
        }
    };

    let report = verify_error_bounds(&samples, &params, &corr, variant, delta)?;
    // per-sample ratio series
    let names = ratio_names(variant);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut header = vec!["E1"];
    header.extend(name_refs.iter());
    let mut ts = TimeSeries::new(&header[..]);
    let mut idx = 0.0;
    for s in &samples {
        let r = crate::effective::remainders(s, &params, &corr, variant)?;
        let mut row = vec![r.e1];
        row.extend(bound_ratio_row(&r, variant, k, delta));
        idx += 1.0;
        ts.push_row(idx, &row);
    }
    let summary = EffectiveSummary {
        k,
        variant: variant_s.clone(),
        delta,
        n_samples: samples.len(),
        ratio_names: report.ratio_names.clone(),
        sup_ratio: report.sup_ratio.clone(),
        pass_per_ratio: report.pass_per_ratio.clone(),
        pass: report.pass,
    };
    let stem = format!("effective-k{k}-thm{variant_s}");
    let mut meta = RunMetadata::new(serde_json::to_value(&a)?);
    meta.seed = Some(seed);
    meta.corrector_table_hash = Some(corr.content_hash()?);
    write_outputs(out_dir, &stem, Some(&ts), &summary, meta)?;
    println!(
        "effective k={k} thm{variant_s}: {} (sup ratios {:?})",
        if report.pass { "PASS" } else { "FAIL" },
        report.sup_ratio
    );
    Ok(if report.pass { 0 } else { 2 })
}

fn bound_ratio_row(
    r: &crate::effective::RemainderSample,
    variant: BarVariant,
    k: f64,
    delta: f64,
) -> Vec<f64> {
    // mirror of the module-private normalization, kept in lockstep by the
    // shared ratio_names()
    let (e0, e2) = (r.ebar[0], r.ebar[1]);
    match variant {
        BarVariant::Thm41 => {
            let mut v = Vec::with_capacity(8);
            for slot in 0..2 {
                let ei = r.ebar[slot];
                let eo = r.ebar[1 - slot];
                v.push(r.r_p[slot].abs() / (e0 + e2).powf(0.5 - delta));
                v.push(
                    r.r_q[slot].abs()
                        / (ei.powf(0.5 / k - delta) + eo.powf(0.5 / k) / ei.powf(delta)),
                );
                v.push(r.sigma_p[slot].abs());
                v.push(r.sigma_q[slot].abs() * ei.sqrt());
            }
            v
        }
        BarVariant::Thm43 => {
            let h = r.h_total;
            let mut v = Vec::with_capacity(4);
            for slot in 0..2 {
                v.push(r.r_p[slot].abs() / ((e0 + e2).powi(2) * h.powf(1.5 / k - 1.0)));
                v.push(r.r_q[slot].abs() / ((e0 + e2) * h.powf(1.5 / k - 1.0)));
            }
            v
        }
    }
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::InvalidParameter(format!("csv line {i}: {e}")))?);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct LyapunovSummary {
    k: f64,
    n: u32,
    u0_power: u32,
    gamma_mix: f64,
    points: usize,
    skipped: usize,
    negativity_threshold: f64,
    envelope_exponent: f64,
    predicted_exponent: f64,
    u0_drift_sup: f64,
    stationary_mean: f64,
    stationary_stderr: f64,
    pass_negativity: bool,
    pass_envelope: bool,
    pass_u0_drift: bool,
    pass_stationary: bool,
    pass: bool,
}

fn cmd_lyapunov(a: LyapunovArgs, config: &serde_json::Value, out_dir: &Path) -> Result<i32> {
    let k = pick(a.k, config, "k", 2.0);
    let n = pick(a.n, config, "n", 2);
    let points = pick(a.points, config, "points", 3000);
    let seed = pick(a.seed, config, "seed", 1);

    let params = ChainParams::symmetric(3, k, 1.3, 1.0)?;
    let corr = CorrectorSet::build(k)?;
    let u0_power = match pick(a.u0_power, config, "u0_power", 0) {
        0 => {
            let probe = sample_states(&params, 400, seed.wrapping_add(9));
            calibrate_u0_power(&params, &corr, n, &probe, 1e3)?
        }
        p => p,
    };
    let cfg = LyapunovConfig::new(k, n, u0_power)?;
    let report = verify_dissipation(&params, &corr, &cfg, points, seed)?;

    let mut ts = TimeSeries::new(&["H", "E1", "LV", "dominant_term"]);
    let kap = corr.kappa_shell;
    for (i, s) in report.samples.iter().enumerate() {
        let dominant = -(n as f64)
            * kap
            * (params.gamma0 + params.gamma_n)
            * s.h.powi(n as i32 - 1)
            * s.e1.powf(2.0 / k - 1.0);
        ts.push_row((i + 1) as f64, &[s.h, s.e1, s.lv, dominant]);
    }
    let summary = LyapunovSummary {
        k,
        n,
        u0_power,
        gamma_mix: gamma_mix(&params),
        points,
        skipped: report.skipped,
        negativity_threshold: report.negativity_threshold,
        envelope_exponent: report.envelope_exponent,
        predicted_exponent: report.predicted_exponent,
        u0_drift_sup: report.u0_drift_sup,
        stationary_mean: report.stationary_mean,
        stationary_stderr: report.stationary_stderr,
        pass_negativity: report.pass_negativity,
        pass_envelope: report.pass_envelope,
        pass_u0_drift: report.pass_u0_drift,
        pass_stationary: report.pass_stationary,
        pass: report.pass,
    };
    let stem = format!("lyapunov-k{k}");
    let mut meta = RunMetadata::new(serde_json::to_value(&a)?);
    meta.seed = Some(seed);
    meta.corrector_table_hash = Some(corr.content_hash()?);
    write_outputs(out_dir, &stem, Some(&ts), &summary, meta)?;
    println!(
        "lyapunov k={k} n={n} U0^{u0_power}: threshold {:.1}, envelope {:.3} (want {:.3}) -> {}",
        report.negativity_threshold,
        report.envelope_exponent,
        report.predicted_exponent,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(if report.pass { 0 } else { 2 })
}
