use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use afdo_core::adversary::{
    accuracy_csv, run_ablation, run_sweep, run_theta_sweep, AccuracyRow, AttackModel, SweepConfig,
};
use afdo_core::consensus::{ConsensusConfig, Strategy};
use afdo_core::corpus::{
    bucket_histogram, filter_pipeline, generate_corpus, mean_submissions, parse_raw_tsv, to_raw_row, write_raw_tsv,
    CorpusSpec, StageCounts,
};
use afdo_core::model::{read_jsonl, write_jsonl, ConflictRecord};
use afdo_core::policy::{
    behaviour_on, consensus_trigger_policy, evaluate_policy, generate_battery, observation_policy, parse_document,
    parse_policies, serialise_policy, ConditionResult, DutyState, FieldMode,
};
use afdo_core::simnet::{
    compare_snapshots, default_nodes, run_workload, timing_csv, CostModel, ExecutionMode, LatencyModel, SimRun,
    TIME_FIELDS,
};
use afdo_core::trust::{perturbation_sensitivity, sensitivity_csv, sensitivity_sweep, SensitivityConfig};
use afdo_core::{AuditLog, DisagreementBucket, VirtualTime};
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{read, relative, OutputDir};
use crate::{
    AblationArgs, CliError, Context, CorpusArg, FilterArgs, Format, GenerateArgs, Outcome, PipelineArgs,
    PolicyCheckArgs, SensitivityArgs, SimnetArgs, SweepArgs, TrustSensitivityArgs,
};

/// A report file: name relative to the output directory, and its bytes.
type File = (String, Vec<u8>);

fn table<T: Serialize + ?Sized>(ctx: &Context, stem: &str, csv: String, rows: &T) -> File {
    match ctx.format {
        Format::Csv => (format!("{stem}.csv"), csv.into_bytes()),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("rows serialise");
            s.push('\n');
            (format!("{stem}.json"), s.into_bytes())
        }
    }
}

fn write_all(out: &mut OutputDir, files: &[File]) -> Result<(), CliError> {
    for (name, data) in files {
        out.write(name, data)?;
    }
    Ok(())
}

fn corpus_spec(ctx: &Context, args: Option<&GenerateArgs>) -> Result<CorpusSpec, CliError> {
    let mut spec = CorpusSpec::scaled(ctx.scale, ctx.seed()).map_err(CliError::usage)?;
    if let Some(a) = args {
        if let Some(m) = a.mean_submissions {
            spec.mean_submissions = m;
        }
        if let Some(m) = a.min_submissions {
            spec.min_submissions = m;
        }
        if let Some(m) = a.max_submissions {
            spec.max_submissions = m;
        }
    }
    spec.validate().map_err(CliError::usage)?;
    Ok(spec)
}

/// Reads the corpus named by `arg`, or generates the default one.
fn load_corpus(ctx: &Context, arg: &CorpusArg, out: &mut OutputDir) -> Result<Vec<ConflictRecord>, CliError> {
    match &arg.corpus {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!("corpus file {} does not exist", path.display())));
            }
            let data = read(path)?;
            out.record_input(path.display().to_string(), &data);
            let text =
                String::from_utf8(data).map_err(|_| CliError::usage(format!("{} is not UTF-8", path.display())))?;
            let recs = read_jsonl(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            if recs.is_empty() {
                return Err(CliError::usage(format!("corpus {} is empty", path.display())));
            }
            Ok(recs)
        }
        None => generate_corpus(&corpus_spec(ctx, None)?).map_err(CliError::usage),
    }
}

#[derive(Serialize)]
struct BucketRow {
    bucket: &'static str,
    records: usize,
}

fn generate_files(ctx: &Context, args: Option<&GenerateArgs>) -> Result<(Vec<ConflictRecord>, Vec<File>), CliError> {
    let spec = corpus_spec(ctx, args)?;
    let recs = generate_corpus(&spec).map_err(CliError::usage)?;
    let raw: Vec<_> = recs.iter().map(to_raw_row).collect();
    let hist = bucket_histogram(&recs);
    let rows: Vec<BucketRow> = DisagreementBucket::ALL
        .iter()
        .map(|b| BucketRow { bucket: b.name(), records: hist.get(b).copied().unwrap_or(0) })
        .collect();
    let mut csv = String::from("bucket,records\n");
    for r in &rows {
        csv.push_str(&format!("{},{}\n", r.bucket, r.records));
    }
    let files = vec![
        ("corpus.jsonl".to_string(), write_jsonl(&recs).into_bytes()),
        ("corpus_raw.tsv".to_string(), write_raw_tsv(&raw).into_bytes()),
        table(ctx, "buckets", csv, &rows),
    ];
    Ok((recs, files))
}

pub fn generate(ctx: &Context, args: &GenerateArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    let (recs, files) = generate_files(ctx, Some(args))?;
    let mut out = OutputDir::create(root)?;
    write_all(&mut out, &files)?;
    let m = out.finish("generate", ctx.seed, config)?;
    Ok(Outcome::ok(vec![
        format!("records: {}", recs.len()),
        format!("mean submissions: {:.3}", mean_submissions(&recs)),
        format!("corpus sha256: {}", m.outputs.iter().find(|f| f.path == "corpus.jsonl").map_or("", |f| &f.sha256)),
    ]))
}

#[derive(Serialize)]
struct StageRow {
    stage: &'static str,
    records: usize,
}

fn filter_files(ctx: &Context, tsv: &str) -> Result<(StageCounts, usize, Vec<File>), CliError> {
    let rows = parse_raw_tsv(tsv).map_err(CliError::usage)?;
    let (kept, counts) = filter_pipeline(&rows).map_err(CliError::usage)?;
    let names = ["total", "distinct_submitters", "expert_panel", "non_expert_inputs", "disagreement"];
    let stages: Vec<StageRow> =
        names.iter().zip(counts.as_array()).map(|(stage, records)| StageRow { stage, records }).collect();
    let mut csv = String::from("stage,records\n");
    for s in &stages {
        csv.push_str(&format!("{},{}\n", s.stage, s.records));
    }
    let files =
        vec![("conflicts.jsonl".to_string(), write_jsonl(&kept).into_bytes()), table(ctx, "stages", csv, &stages)];
    Ok((counts, kept.len(), files))
}

pub fn filter(ctx: &Context, args: &FilterArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    if !args.input.is_file() {
        return Err(CliError::usage(format!("input file {} does not exist", args.input.display())));
    }
    let data = read(&args.input)?;
    let text = String::from_utf8(data.clone()).map_err(|_| CliError::usage("input is not UTF-8"))?;
    let (counts, kept, files) = filter_files(ctx, &text)?;
    let mut out = OutputDir::create(root)?;
    out.record_input(args.input.display().to_string(), &data);
    write_all(&mut out, &files)?;
    out.finish("filter", ctx.seed, config)?;
    Ok(Outcome::ok(vec![format!("stages: {:?}", counts.as_array()), format!("conflicts kept: {kept}")]))
}

fn sweep_config(ctx: &Context, args: &SweepArgs) -> Result<SweepConfig, CliError> {
    let models =
        args.models.iter().map(|m| m.parse::<AttackModel>()).collect::<Result<Vec<_>, _>>().map_err(CliError::usage)?;
    let strategies = args
        .strategies
        .iter()
        .map(|s| s.parse::<Strategy>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::usage)?;
    if let Some(f) = args.fractions.iter().find(|f| !(0.0..=0.5).contains(*f)) {
        return Err(CliError::usage(format!("fraction {f} is outside [0, 0.5]")));
    }
    check_thetas(&args.theta)?;
    if args.trials == 0 || args.resamples == 0 {
        return Err(CliError::usage("--trials and --resamples must be positive"));
    }
    Ok(SweepConfig {
        models,
        fractions: args.fractions.clone(),
        strategies,
        thetas: args.theta.clone(),
        trials: args.trials,
        resamples: args.resamples,
        seed: ctx.seed(),
    })
}

fn check_thetas(thetas: &[f64]) -> Result<(), CliError> {
    match thetas.iter().find(|t| !(0.0..0.5).contains(*t)) {
        Some(t) => Err(CliError::usage(format!("trim ratio {t} is outside [0, 0.5)"))),
        None if thetas.is_empty() => Err(CliError::usage("no trim ratio given")),
        None => Ok(()),
    }
}

fn accuracy_table(ctx: &Context, stem: &str, rows: &[AccuracyRow]) -> File {
    table(ctx, stem, accuracy_csv(rows), rows)
}

fn overall_line(rows: &[AccuracyRow]) -> Vec<String> {
    rows.iter()
        .filter(|r| r.bucket == "overall")
        .map(|r| {
            format!(
                "{} f/n={} {}{}: {:.3} [{:.3}, {:.3}]",
                r.model,
                r.fraction,
                r.strategy,
                r.theta.map(|t| format!(" theta={t}")).unwrap_or_default(),
                r.accuracy,
                r.ci_low,
                r.ci_high
            )
        })
        .collect()
}

pub fn sweep(ctx: &Context, args: &SweepArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    let cfg = sweep_config(ctx, args)?;
    let mut out = OutputDir::create(root)?;
    let corpus = load_corpus(ctx, &args.corpus, &mut out)?;
    let rows = run_sweep(&corpus, &cfg).map_err(CliError::usage)?;
    write_all(&mut out, &[accuracy_table(ctx, "sweep", &rows)])?;
    out.finish("sweep", ctx.seed, config)?;
    Ok(Outcome::ok(overall_line(&rows)))
}

pub fn ablation(ctx: &Context, args: &AblationArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    let mut out = OutputDir::create(root)?;
    let corpus = load_corpus(ctx, &args.corpus, &mut out)?;
    let rows = run_ablation(&corpus, args.resamples.max(1), ctx.seed());
    write_all(&mut out, &[accuracy_table(ctx, "ablation", &rows)])?;
    out.finish("ablation", ctx.seed, config)?;
    Ok(Outcome::ok(overall_line(&rows)))
}

fn sensitivity_files(
    ctx: &Context,
    corpus: &[ConflictRecord],
    grid: &[f64],
    resamples: usize,
) -> (Vec<AccuracyRow>, Vec<File>) {
    let rows = run_theta_sweep(corpus, grid, resamples.max(1), ctx.seed());
    let (overall, buckets): (Vec<AccuracyRow>, Vec<AccuracyRow>) =
        rows.into_iter().partition(|r| r.bucket == "overall");
    let files =
        vec![accuracy_table(ctx, "sensitivity", &overall), accuracy_table(ctx, "sensitivity_buckets", &buckets)];
    (overall, files)
}

pub fn sensitivity(ctx: &Context, args: &SensitivityArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    check_thetas(&args.theta_grid)?;
    let mut out = OutputDir::create(root)?;
    let corpus = load_corpus(ctx, &args.corpus, &mut out)?;
    let (rows, files) = sensitivity_files(ctx, &corpus, &args.theta_grid, args.resamples);
    write_all(&mut out, &files)?;
    out.finish("sensitivity", ctx.seed, config)?;
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let spread =
        acc.iter().copied().fold(f64::NEG_INFINITY, f64::max) - acc.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lines = overall_line(&rows);
    lines.push(format!("spread: {:.1} pp", 100.0 * spread));
    Ok(Outcome::ok(lines))
}

fn trust_files(ctx: &Context, args: &TrustSensitivityArgs) -> Result<Vec<File>, CliError> {
    let cfg = SensitivityConfig {
        alphas: args.alphas.clone(),
        betas: args.betas.clone(),
        gammas: args.gammas.clone(),
        replicates: args.replicates,
        seed: ctx.seed(),
        ..SensitivityConfig::default()
    };
    cfg.mix.validate().map_err(CliError::usage)?;
    let grid = sensitivity_sweep(&cfg).map_err(CliError::usage)?;
    let pert = perturbation_sensitivity(&cfg, args.perturbation).map_err(CliError::usage)?;
    let mut pcsv = String::from("parameter,recovery_change_pct,ks_distance\n");
    for p in &pert {
        pcsv.push_str(&format!("{},{},{}\n", p.parameter, p.recovery_change_pct, p.ks_distance));
    }
    Ok(vec![
        table(ctx, "trust_sensitivity", sensitivity_csv(&grid), &grid),
        table(ctx, "trust_perturbation", pcsv, &pert),
    ])
}

pub fn trust_sensitivity(
    ctx: &Context,
    args: &TrustSensitivityArgs,
    root: &Path,
    config: Value,
) -> Result<Outcome, CliError> {
    let files = trust_files(ctx, args)?;
    let mut out = OutputDir::create(root)?;
    write_all(&mut out, &files)?;
    out.finish("trust-sensitivity", ctx.seed, config)?;
    Ok(Outcome::ok(vec![format!("cells: {}", args.alphas.len() * args.betas.len() * args.gammas.len())]))
}

#[derive(Serialize)]
struct ModeComparison {
    left: &'static str,
    right: &'static str,
    all_equal: bool,
    unequal_records: Vec<usize>,
    first_difference: Option<(usize, usize)>,
}

fn simnet_files(
    ctx: &Context,
    args: &SimnetArgs,
    corpus: &[ConflictRecord],
) -> Result<(bool, Vec<String>, Vec<File>), CliError> {
    if args.records == 0 || args.records > corpus.len() {
        return Err(CliError::usage(format!("--records must be between 1 and the corpus size {}", corpus.len())));
    }
    if !(args.mean_rtt >= 0.0 && args.sd_rtt >= 0.0) {
        return Err(CliError::usage("latency parameters must be non-negative"));
    }
    let records = &corpus[..args.records];
    let latency =
        LatencyModel { mean_rtt_ms: args.mean_rtt, sd_rtt_ms: args.sd_rtt, seed: ctx.seed().child("latency") };
    let consensus = ConsensusConfig::default();
    let runs: Vec<SimRun> = ExecutionMode::ALL
        .iter()
        .map(|&m| run_workload(records, m, &default_nodes(), Some(latency), CostModel::default(), &consensus))
        .collect();
    let mut files = Vec::new();
    let lines: Vec<Vec<String>> = runs.iter().map(SimRun::snapshot_lines).collect();
    for (run, ls) in runs.iter().zip(&lines) {
        let mut text = ls.join("\n");
        text.push('\n');
        files.push((format!("snapshots/{}.jsonl", run.mode.name()), text.into_bytes()));
    }
    let mut comparisons = Vec::new();
    for i in 1..runs.len() {
        let rep = compare_snapshots(&lines[0], &lines[i], &TIME_FIELDS);
        let bad = rep.unequal();
        comparisons.push(ModeComparison {
            left: runs[0].mode.name(),
            right: runs[i].mode.name(),
            all_equal: rep.all_equal(),
            unequal_records: bad.iter().map(|r| r.index).collect(),
            first_difference: bad.first().map(|r| (r.index, r.first_difference.unwrap_or(0))),
        });
    }
    let equal = comparisons.iter().all(|c| c.all_equal);
    let report = json!({
        "records": args.records,
        "mask": TIME_FIELDS,
        "all_equal": equal,
        "comparisons": comparisons,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serialises");
    text.push('\n');
    files.push(("equivalence.json".to_string(), text.into_bytes()));
    #[derive(Serialize)]
    struct TimingRow {
        mode: &'static str,
        records: usize,
        virtual_wall_clock_ms: u64,
        p95_per_record_ms: u64,
    }
    let timing: Vec<TimingRow> = runs
        .iter()
        .map(|r| TimingRow {
            mode: r.mode.name(),
            records: r.snapshots.len(),
            virtual_wall_clock_ms: r.wall_clock.millis(),
            p95_per_record_ms: r.p95_ms(),
        })
        .collect();
    files.push(table(ctx, "timing", timing_csv(&runs), &timing));
    let summary = comparisons
        .iter()
        .map(|c| {
            format!(
                "{} vs {}: {}/{} records equal under mask",
                c.left,
                c.right,
                args.records - c.unequal_records.len(),
                args.records
            )
        })
        .collect();
    Ok((equal, summary, files))
}

pub fn simnet(ctx: &Context, args: &SimnetArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    let mut out = OutputDir::create(root)?;
    let corpus = load_corpus(ctx, &args.corpus, &mut out)?;
    let (equal, lines, files) = simnet_files(ctx, args, &corpus)?;
    write_all(&mut out, &files)?;
    out.finish("simnet", ctx.seed, config)?;
    Ok(Outcome::check(equal, lines))
}

#[derive(Debug, Serialize)]
struct PolicyRow {
    file: String,
    policy: String,
    structurally_equal: bool,
    bytes_equal: bool,
    inputs: usize,
    first_difference: Option<usize>,
    objects: usize,
    errors: usize,
    passed: bool,
    message: String,
}

/// Files named directly plus `.ttl` files below named directories, sorted
/// and de-duplicated.
fn expand_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = BTreeSet::new();
    for p in paths {
        if p.is_dir() {
            for e in walkdir::WalkDir::new(p).sort_by_file_name() {
                let e = e.map_err(|e| CliError::Io { path: p.clone(), source: e.into() })?;
                if e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "ttl") {
                    out.insert(e.path().to_path_buf());
                }
            }
        } else if p.is_file() {
            out.insert(p.clone());
        } else {
            return Err(CliError::usage(format!("policy file {} does not exist", p.display())));
        }
    }
    Ok(out.into_iter().collect())
}

fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

fn check_policy_text(
    ctx: &Context,
    label: &str,
    text: &str,
    inputs: usize,
    mode: FieldMode,
    files: &mut Vec<File>,
) -> Vec<PolicyRow> {
    let failed = |policy: &str, message: String| PolicyRow {
        file: label.to_string(),
        policy: policy.to_string(),
        structurally_equal: false,
        bytes_equal: false,
        inputs: 0,
        first_difference: None,
        objects: 0,
        errors: 0,
        passed: false,
        message,
    };
    let doc = match parse_document(text) {
        Ok(d) => d,
        Err(e) => return vec![failed("", format!("parse error: {e}"))],
    };
    if doc.policies.is_empty() {
        return vec![failed("", "no policy found".to_string())];
    }
    let battery = generate_battery(&doc.policies, inputs, ctx.seed().child(label));
    let step = Duration::from_secs(6 * 3600);
    let mut rows = Vec::new();
    for p in &doc.policies {
        let first = match serialise_policy(p) {
            Ok(s) => s,
            Err(e) => {
                rows.push(failed(&p.id, format!("serialise error: {e}")));
                continue;
            }
        };
        let reparsed = match parse_policies(&first) {
            Ok(mut v) if v.len() == 1 => v.remove(0),
            Ok(v) => {
                rows.push(failed(&p.id, format!("re-parse yielded {} policies", v.len())));
                continue;
            }
            Err(e) => {
                rows.push(failed(&p.id, format!("re-parse error: {e}")));
                continue;
            }
        };
        let second = serialise_policy(&reparsed).unwrap_or_default();
        let a = behaviour_on(p, &battery, step, mode);
        let b = behaviour_on(&reparsed, &battery, step, mode);
        let first_difference = a.iter().zip(&b).position(|(x, y)| x != y);

        let mut errors = 0;
        let mut duties = DutyState::new();
        let mut audit = AuditLog::new();
        for o in &doc.objects {
            let ev = evaluate_policy(p, &o.fields(), None, VirtualTime::ZERO, mode, &mut duties, &mut audit);
            errors += matches!(ev.condition, ConditionResult::Error(_)) as usize;
        }
        let structurally_equal = reparsed == *p;
        let bytes_equal = first == second;
        let passed = structurally_equal
            && bytes_equal
            && first_difference.is_none()
            && (mode == FieldMode::Lenient || errors == 0);
        files.push((format!("canonical/{}.ttl", safe_name(&p.id)), first.into_bytes()));
        rows.push(PolicyRow {
            file: label.to_string(),
            policy: p.id.clone(),
            structurally_equal,
            bytes_equal,
            inputs: battery.len(),
            first_difference,
            objects: doc.objects.len(),
            errors,
            passed,
            message: String::new(),
        });
    }
    rows
}

fn policy_files(
    ctx: &Context,
    sources: &[(String, String)],
    inputs: usize,
    strict: bool,
) -> (bool, Vec<String>, Vec<File>) {
    let mode = if strict { FieldMode::Strict } else { FieldMode::Lenient };
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for (label, text) in sources {
        rows.extend(check_policy_text(ctx, label, text, inputs, mode, &mut files));
    }
    let mut csv =
        String::from("file,policy,structurally_equal,bytes_equal,inputs,first_difference,objects,errors,passed\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.file,
            r.policy,
            r.structurally_equal,
            r.bytes_equal,
            r.inputs,
            r.first_difference.map(|i| i.to_string()).unwrap_or_default(),
            r.objects,
            r.errors,
            r.passed
        ));
    }
    files.push(table(ctx, "policy_check", csv, &rows));
    let passed = rows.iter().all(|r| r.passed);
    let lines = rows
        .iter()
        .map(|r| {
            let verdict = if r.passed { "ok" } else { "FAILED" };
            let extra = if r.message.is_empty() { String::new() } else { format!(" ({})", r.message) };
            format!("{} {}: {verdict}{extra}", r.file, r.policy)
        })
        .collect();
    (passed, lines, files)
}

pub fn policy_check(ctx: &Context, args: &PolicyCheckArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    let paths = expand_paths(&args.paths)?;
    if paths.is_empty() {
        return Err(CliError::usage("no policy files found"));
    }
    let mut out = OutputDir::create(root)?;
    let mut sources = Vec::new();
    for p in &paths {
        let data = read(p)?;
        let label = p.display().to_string();
        out.record_input(label.clone(), &data);
        sources.push((label, String::from_utf8_lossy(&data).into_owned()));
    }
    let (passed, lines, files) = policy_files(ctx, &sources, args.inputs.max(1), args.strict_fields);
    write_all(&mut out, &files)?;
    out.finish("policy-check", ctx.seed, config)?;
    Ok(Outcome::check(passed, lines))
}

/// Runs one pipeline stage into `root/stage` with its own manifest.
fn stage(
    ctx: &Context,
    root: &Path,
    name: &str,
    config: Value,
    inputs: &[(&str, &[u8])],
    files: &[File],
) -> Result<(), CliError> {
    let mut out = OutputDir::create(&root.join(name))?;
    for (label, data) in inputs {
        out.record_input(*label, data);
    }
    write_all(&mut out, files)?;
    out.finish(name, ctx.seed, config)?;
    Ok(())
}

pub fn pipeline(ctx: &Context, args: &PipelineArgs, root: &Path, config: Value) -> Result<Outcome, CliError> {
    let mut lines = Vec::new();
    let base =
        |command: Value| json!({ "seed": ctx.seed, "scale": ctx.scale, "format": ctx.format, "command": command });

    let (corpus, files) = generate_files(ctx, None)?;
    stage(ctx, root, "corpus", base(json!({ "generate": {} })), &[], &files)?;
    let corpus_bytes = files[0].1.clone();
    let raw_tsv = String::from_utf8(files[1].1.clone()).expect("generated TSV is UTF-8");
    let corpus_input = [("corpus/corpus.jsonl", corpus_bytes.as_slice())];
    lines.push(format!("corpus: {} records", corpus.len()));

    let (counts, kept, files) = filter_files(ctx, &raw_tsv)?;
    stage(
        ctx,
        root,
        "filter",
        base(json!({ "filter": { "input": "corpus/corpus_raw.tsv" } })),
        &[("corpus/corpus_raw.tsv", raw_tsv.as_bytes())],
        &files,
    )?;
    lines.push(format!("filter: stages {:?}, {kept} kept", counts.as_array()));

    let sweep_args = SweepArgs {
        corpus: CorpusArg { corpus: None },
        fractions: afdo_core::adversary::SWEEP_FRACTIONS.to_vec(),
        models: AttackModel::ALL.iter().map(|m| m.name().to_string()).collect(),
        strategies: Strategy::ALL.iter().map(|s| s.short_name().to_string()).collect(),
        theta: vec![0.20],
        trials: args.trials.max(1),
        resamples: args.resamples.max(1),
    };
    let rows = run_sweep(&corpus, &sweep_config(ctx, &sweep_args)?).map_err(CliError::usage)?;
    stage(
        ctx,
        root,
        "sweep",
        base(json!({ "sweep": sweep_args, "corpus": "corpus/corpus.jsonl" })),
        &corpus_input,
        &[accuracy_table(ctx, "sweep", &rows)],
    )?;
    lines.push(format!("sweep: {} rows", rows.len()));

    let rows = run_ablation(&corpus, args.resamples.max(1), ctx.seed());
    stage(
        ctx,
        root,
        "ablation",
        base(json!({ "ablation": { "resamples": args.resamples }, "corpus": "corpus/corpus.jsonl" })),
        &corpus_input,
        &[accuracy_table(ctx, "ablation", &rows)],
    )?;
    lines.extend(overall_line(&rows).into_iter().map(|l| format!("ablation: {l}")));

    let grid = afdo_core::adversary::THETA_GRID;
    let (_, files) = sensitivity_files(ctx, &corpus, &grid, args.resamples);
    stage(
        ctx,
        root,
        "sensitivity",
        base(
            json!({ "sensitivity": { "theta_grid": grid, "resamples": args.resamples }, "corpus": "corpus/corpus.jsonl" }),
        ),
        &corpus_input,
        &files,
    )?;
    lines.push(format!("sensitivity: {} trim ratios", grid.len()));

    let trust_args = TrustSensitivityArgs {
        alphas: vec![0.10, 0.30, 0.50],
        betas: vec![0.01, 0.05, 0.10],
        gammas: vec![0.10, 0.20, 0.30],
        replicates: 30,
        perturbation: 0.10,
    };
    let files = trust_files(ctx, &trust_args)?;
    stage(ctx, root, "trust", base(json!({ "trust-sensitivity": trust_args })), &[], &files)?;
    lines.push("trust: 27 cells".to_string());

    let simnet_args = SimnetArgs {
        corpus: CorpusArg { corpus: None },
        records: args.records.min(corpus.len()),
        mean_rtt: 144.0,
        sd_rtt: 55.0,
    };
    let (equal, sim_lines, files) = simnet_files(ctx, &simnet_args, &corpus)?;
    stage(
        ctx,
        root,
        "simnet",
        base(json!({ "simnet": simnet_args, "corpus": "corpus/corpus.jsonl" })),
        &corpus_input,
        &files,
    )?;
    lines.extend(sim_lines.into_iter().map(|l| format!("simnet: {l}")));

    let builtin = [observation_policy("obs042"), consensus_trigger_policy()];
    let sources: Vec<(String, String)> = builtin
        .iter()
        .map(|p| {
            (format!("builtin/{}.ttl", safe_name(&p.id)), serialise_policy(p).expect("built-in policies serialise"))
        })
        .collect();
    let (policies_ok, pol_lines, files) = policy_files(ctx, &sources, 45, false);
    let inputs: Vec<(&str, &[u8])> = sources.iter().map(|(l, t)| (l.as_str(), t.as_bytes())).collect();
    stage(ctx, root, "policy", base(json!({ "policy-check": { "inputs": 45 } })), &inputs, &files)?;
    lines.extend(pol_lines.into_iter().map(|l| format!("policy: {l}")));

    let mut out = OutputDir::create(root)?;
    out.adopt_tree()?;
    out.finish("pipeline", ctx.seed, config)?;
    Ok(Outcome::check(equal && policies_ok, lines))
}

/// Relative paths of every file below `root`, sorted.
pub fn list_files(root: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    for e in walkdir::WalkDir::new(root).sort_by_file_name() {
        let e = e.map_err(|e| CliError::Io { path: root.to_path_buf(), source: e.into() })?;
        if e.file_type().is_file() {
            out.push(relative(root, e.path()));
        }
    }
    out.sort();
    Ok(out)
}
