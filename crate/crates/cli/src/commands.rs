use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use pda_core::exec::Executor;
use pda_core::harness::{
    evaluate, load_dataset, load_run, persist_run, simulate_pv, Evaluation, Manifest, PersistError, RunInfo, RunMetrics,
    Schema, ScoredRecord, StudyError, MANIFEST_FILE,
};
use pda_core::model::Backends;
use pda_core::pipeline::{expected_budget, expected_caption_budget, RecordStatus, Variant, VariantConfig};

use crate::config::RunConfig;
use crate::{BudgetArgs, CliError, ReportArgs, RunArgs, SimulateArgs};

fn io(e: std::io::Error) -> CliError {
    CliError::Runtime(e.into())
}

/// File values, then flags.
fn effective_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = args.$flag.clone() {
                config.$field = v.into();
            }
        )*};
    }
    set!(variant => variant, intensity => change_intensity);
    set!(n => n_paraphrases, k => k_atomic, dataset => dataset, schema => schema, out => out, seed => seed, fan_out => fan_out);
    config.fallback_undefended |= args.fallback_undefended;
    Ok(config)
}

pub fn run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = effective_config(args)?;
    let backends = config.build_backends()?;
    run_with_backends(&config, &backends, out)
}

/// Runs `config` against caller-supplied backends (the config's own backend
/// section is ignored).
pub fn run_with_backends(config: &RunConfig, backends: &Backends, out: &mut dyn Write) -> Result<(), CliError> {
    let variant_config = config.variant_config()?;
    let dataset = config.dataset.as_ref().ok_or_else(|| CliError::Config("no dataset given (--dataset)".into()))?;
    let schema = config.schema.ok_or_else(|| CliError::Config("no dataset schema given (--schema)".into()))?;
    let items = load_dataset(dataset, schema).map_err(|e| CliError::Config(format!("{}: {e}", dataset.display())))?;
    let exec = match config.fan_out {
        Some(0) => return Err(CliError::Config("fan_out must be at least 1".into())),
        fan_out => Executor::parallel(fan_out),
    };
    log::info!("running {} over {} items ({:?})", variant_config.variant, items.len(), exec);
    let eval = evaluate(&items, &variant_config, backends, &exec, config.scoring)
        .map_err(|e| CliError::Config(e.to_string()))?;

    print_run(&variant_config, &eval, out).map_err(io)?;
    if let Some(dir) = &config.out {
        let info = RunInfo { config: config.redacted(), backend_ids: backends.ids() };
        persist_run(dir, &eval, &info).with_context(|| format!("persisting run to {}", dir.display()))?;
        writeln!(out, "wrote {}", dir.display()).map_err(io)?;
    }

    let m = &eval.metrics;
    if !eval.violations.is_empty() {
        for v in &eval.violations {
            writeln!(out, "BudgetViolation: {v}").map_err(io)?;
        }
        return Err(anyhow!("{} of {} items violated the call budget", eval.violations.len(), m.n_items).into());
    }
    if m.failure_count > 0 {
        return Err(anyhow!("{} of {} items failed", m.failure_count, m.n_items).into());
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

fn print_run(config: &VariantConfig, eval: &Evaluation, out: &mut dyn Write) -> std::io::Result<()> {
    let m = &eval.metrics;
    writeln!(out, "variant {}  N={}  K={}", config.variant, config.n_paraphrases, config.k_atomic)?;
    print_metrics(m, out)?;
    writeln!(out, "wall clock       {:.1} ms", eval.wall_clock_ms)
}

fn print_metrics(m: &RunMetrics, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "items            {}", m.n_items)?;
    writeln!(out, "scored           {}", m.n_scored)?;
    writeln!(out, "unscored         {}", m.n_unscored)?;
    writeln!(out, "failed           {}", m.failure_count)?;
    writeln!(out, "fallback         {}", m.fallback_count)?;
    writeln!(out, "accuracy         {}", fmt_opt(m.accuracy))?;
    writeln!(out, "agreement        {}", fmt_opt(m.agreement_rate))?;
    writeln!(out, "vote margin      {}", fmt_opt(m.mean_vote_margin))?;
    writeln!(out, "budget violations {}", m.budget_violations)?;
    if !m.mean_calls_per_item.is_empty() {
        writeln!(out, "calls per item:")?;
        for (key, mean) in &m.mean_calls_per_item {
            writeln!(out, "  {key:<28} {mean:.2}")?;
        }
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let exec = Executor::parallel(args.fan_out);
    writeln!(out, "q={} trials={} seed={}", args.q, args.trials, args.seed).map_err(io)?;
    writeln!(out, "{:>3} | {:>9} | {:>9} | {:>7} | {:>7}", "n", "simulated", "oracle", "|delta|", "se").map_err(io)?;
    for &n in &args.n {
        let row = simulate_pv(args.q, n, args.trials, args.seed, &exec).map_err(|e| match e {
            StudyError::Pipeline(e) => CliError::Runtime(e.into()),
            other => CliError::Config(other.to_string()),
        })?;
        writeln!(
            out,
            "{:>3} | {:>9.5} | {:>9.5} | {:>7.5} | {:>7.5}",
            row.n, row.accuracy, row.oracle, row.delta, row.std_error
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn budget(args: &BudgetArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = if args.schema == Some(Schema::Caption) {
        VariantConfig::caption(args.variant)
    } else {
        VariantConfig::new(args.variant)
    }
    .with_n(args.n)
    .with_k(args.k);
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ledger = if args.schema == Some(Schema::Caption) {
        if args.variant != Variant::Full {
            return Err(CliError::Config(format!("variant {} does not support captioning; use full", args.variant)));
        }
        expected_caption_budget(args.n, args.k)
    } else {
        expected_budget(args.variant, args.n, args.k)
    };
    let [p, v, d, a] = ledger.budget_row();
    writeln!(out, "{} (N={}, K={})", args.variant, args.n, args.k).map_err(io)?;
    writeln!(out, "paraphrase LLM | VLM | decomposition LLM | aggregation LLM").map_err(io)?;
    writeln!(out, "{p} | {v} | {d} | {a}").map_err(io)?;
    Ok(())
}

/// Loads a run and checks its persisted metrics against the records.
fn checked_run(dir: &Path) -> Result<(Manifest, Vec<ScoredRecord>), CliError> {
    let (manifest, records) = load_run(dir).map_err(|e| match e {
        PersistError::MissingManifest(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.into()),
    })?;
    let recomputed = RunMetrics::from_records(&records);
    if recomputed != manifest.metrics {
        return Err(anyhow!("{}: persisted metrics do not match the records", dir.display()).into());
    }
    Ok((manifest, records))
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_owned()]);
    }
    let entries = fs::read_dir(root).map_err(|e| CliError::Config(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Config(format!("no {MANIFEST_FILE} in {} or its subdirectories", root.display())));
    }
    Ok(dirs)
}

fn describe(manifest: &Manifest) -> String {
    let field = |k: &str| manifest.config.get(k).map(|v| v.to_string().trim_matches('"').to_owned());
    let variant = field("variant").unwrap_or_else(|| "?".into());
    match (field("n_paraphrases"), field("k_atomic")) {
        (Some(n), Some(k)) => format!("{variant} N={n} K={k}"),
        (Some(n), None) => format!("{variant} N={n}"),
        _ => variant,
    }
}

/// Failure reasons with counts, most frequent first.
fn failure_digest(records: &[ScoredRecord]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        if let RecordStatus::Failed { error } | RecordStatus::Fallback { error } = &r.record.status {
            *counts.entry(error.clone()).or_default() += 1;
        }
    }
    let mut digest: Vec<_> = counts.into_iter().collect();
    digest.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    digest
}

pub fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dirs = run_dirs(&args.run_dir)?;
    let runs = dirs.iter().map(|d| checked_run(d)).collect::<Result<Vec<_>, _>>()?;
    if let [(manifest, records)] = runs.as_slice() {
        writeln!(out, "run {} ({})", dirs[0].display(), describe(manifest)).map_err(io)?;
        writeln!(out, "config sha256    {}", manifest.config_hash).map_err(io)?;
        print_metrics(&manifest.metrics, out).map_err(io)?;
        let digest = failure_digest(records);
        if !digest.is_empty() {
            writeln!(out, "failures:").map_err(io)?;
            for (error, n) in digest.iter().take(10) {
                writeln!(out, "  {n:>4}  {error}").map_err(io)?;
            }
        }
        return Ok(());
    }
    compare(&dirs, &runs, out).map_err(io)
}

fn compare(dirs: &[PathBuf], runs: &[(Manifest, Vec<ScoredRecord>)], out: &mut dyn Write) -> std::io::Result<()> {
    let names: Vec<String> = dirs
        .iter()
        .map(|d| d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned()))
        .collect();
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("config".into(), runs.iter().map(|(m, _)| describe(m)).collect()),
        ("items".into(), runs.iter().map(|(m, _)| m.metrics.n_items.to_string()).collect()),
        ("accuracy".into(), runs.iter().map(|(m, _)| fmt_opt(m.metrics.accuracy)).collect()),
        ("agreement".into(), runs.iter().map(|(m, _)| fmt_opt(m.metrics.agreement_rate)).collect()),
        ("failed".into(), runs.iter().map(|(m, _)| m.metrics.failure_count.to_string()).collect()),
        ("fallback".into(), runs.iter().map(|(m, _)| m.metrics.fallback_count.to_string()).collect()),
        ("violations".into(), runs.iter().map(|(m, _)| m.metrics.budget_violations.to_string()).collect()),
    ];
    let keys: std::collections::BTreeSet<&String> = runs.iter().flat_map(|(m, _)| m.metrics.mean_calls_per_item.keys()).collect();
    for key in keys {
        let cells = runs
            .iter()
            .map(|(m, _)| m.metrics.mean_calls_per_item.get(key).map_or_else(|| "-".into(), |v| format!("{v:.2}")))
            .collect();
        rows.push((key.clone(), cells));
    }
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..names.len())
        .map(|i| rows.iter().map(|(_, c)| c[i].len()).chain([names[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |label: &str, cells: &[String]| {
        let cells: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        format!("{label:<label_width$} | {}", cells.join(" | "))
    };
    writeln!(out, "{}", line("", &names))?;
    for (label, cells) in &rows {
        writeln!(out, "{}", line(label, cells))?;
    }
    Ok(())
}
