use std::collections::BTreeSet;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;
use twinfalsify::bounds::write_estimates_csv;
use twinfalsify::regions::{
    generate_hypotheses, load_hypotheses, save_hypotheses, BinRule, Discretizer, FeatureRef, GeneratorConfig,
    Hypothesis,
};
use twinfalsify::stats::quantile_nearest_rank;
use twinfalsify::synth::{
    generate_observational, generate_twin_collection, sequence_master, simulate_twin, SynthConfig, TwinMode,
};
use twinfalsify::testing::sensitivity_sweep_with;
use twinfalsify::testing::{
    read_results_csv, rejection_diagnostics, test_with_collection, two_sided_hoeffding, write_sensitivity_csv,
    FamilyReport, FamilySummary, Multiplicity, OutcomeSummary, ResultRow, TestConfig, TestResult,
};
use twinfalsify::trajectory::{
    load_observational, load_twin_collection, split_holdout, write_observational, write_twin_collection, Dataset,
    SchemaSpec, TwinCollection,
};
use twinfalsify::twinproto::{run_external_twin, serve_twin, SessionOptions, TwinCommand};
use twinfalsify::{Error, Result};

use crate::manifest::{manifest_name, write_json, ManifestBuilder};
use crate::{
    Cli, Command, DemoArgs, GenArgs, ReportArgs, SensitivityArgs, ServerArgs, SynthArgs, TestArgs, TestInputs,
};

/// Upper limit on twin action sequences generated by `synth`.
const MAX_SEQUENCES: usize = 4096;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a).map(drop),
        Command::GenHypotheses(a) => cmd_gen_hypotheses(cli, a).map(drop),
        Command::Test(a) => cmd_test(cli, a).map(drop),
        Command::Sensitivity(a) => cmd_sensitivity(cli, a),
        Command::Report(a) => cmd_report(cli, a).map(drop),
        Command::Demo(a) => cmd_demo(cli, a),
        Command::TwinServer(a) => cmd_twin_server(a),
    }
}

fn prepare(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::invalid("--workers must be at least 1"));
        }
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// The process behind `demo` and a config-less `synth`.
pub fn demo_config() -> SynthConfig {
    SynthConfig { policy_bias: 0.8, ..SynthConfig::default() }
}

/// Median split of feature 0 at every step, all timesteps.
pub fn default_generator(schema: &SchemaSpec) -> GeneratorConfig {
    GeneratorConfig {
        quantile_lo: 0.2,
        quantile_up: 0.8,
        bin_plan: vec![Discretizer { feature: FeatureRef::Outcome, rule: BinRule::Quantiles(vec![0.5]) }],
        outcome_features: vec![0],
        timesteps: (1..=schema.horizon).collect(),
        min_support: 20,
    }
}

/// Every action sequence of length `1..=T`, shortest first.
fn all_sequences(schema: &SchemaSpec) -> Result<Vec<Vec<u32>>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    let mut layer: Vec<Vec<u32>> = vec![Vec::new()];
    for &k in &schema.action_cardinalities {
        layer = layer
            .iter()
            .flat_map(|p| {
                (0..k).map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
        if out.len() + layer.len() > MAX_SEQUENCES {
            return Err(Error::invalid(format!(
                "more than {MAX_SEQUENCES} action sequences; use --twin-n 0 and an external twin"
            )));
        }
        out.extend(layer.iter().cloned());
    }
    Ok(out)
}

fn x0_pool(data: &Dataset) -> Vec<Vec<f64>> {
    data.records.iter().map(|r| r.x0.clone()).collect()
}

pub struct SynthOutputs {
    pub schema: PathBuf,
    pub obs: PathBuf,
    pub twin: Option<PathBuf>,
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<SynthOutputs> {
    let cfg = match &args.config {
        Some(p) => SynthConfig::load(p)?,
        None => demo_config(),
    };
    let dir = prepare(&cli.out_dir)?;
    let mut m = ManifestBuilder::new("synth", cli.seed);
    if let Some(p) = &args.config {
        m.input(p);
    }
    m.param("n", args.n).param("twin_mode", args.twin_mode).param("config", &cfg);

    let data = generate_observational(&cfg, args.n, cli.seed)?;
    let schema = data.schema.clone();
    let schema_path = dir.join("schema.json");
    schema.save(&schema_path)?;
    let cfg_path = dir.join("synth_config.json");
    write_json(&cfg_path, &cfg)?;
    let obs_path = dir.join("obs.jsonl");
    write_observational(&obs_path, &data)?;
    m.output(&schema_path).output(&cfg_path).output(&obs_path);

    let twin_n = args.twin_n.unwrap_or(args.n);
    m.param("twin_n", twin_n);
    let twin = if twin_n > 0 || args.n == 0 {
        let sequences = all_sequences(&schema)?;
        let twins = generate_twin_collection(&cfg, args.twin_mode, &x0_pool(&data), &sequences, twin_n, cli.seed)?;
        let p = dir.join("twin.jsonl");
        write_twin_collection(&p, &twins)?;
        m.output(&p);
        Some(p)
    } else {
        None
    };
    m.write(&dir.join(manifest_name("synth")))?;
    Ok(SynthOutputs { schema: schema_path, obs: obs_path, twin })
}

pub struct GenOutputs {
    pub hypotheses: PathBuf,
    pub test_obs: PathBuf,
}

fn cmd_gen_hypotheses(cli: &Cli, args: &GenArgs) -> Result<GenOutputs> {
    let schema = SchemaSpec::load(&args.schema)?;
    let data = load_observational(&args.obs, &schema)?;
    let config: GeneratorConfig = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => default_generator(&schema),
    };
    let dir = prepare(&cli.out_dir)?;
    let mut m = ManifestBuilder::new("gen-hypotheses", cli.seed);
    m.input(&args.schema).input(&args.obs);
    if let Some(p) = &args.config {
        m.input(p);
    }
    m.param("holdout_fraction", args.holdout_fraction).param("generator", &config);

    let (holdout, rest) = split_holdout(&data, args.holdout_fraction, cli.seed)?;
    let generated = generate_hypotheses(&holdout, &config)?;

    let hyp_path = dir.join("hypotheses.json");
    save_hypotheses(&hyp_path, &generated.hypotheses)?;
    let skip_path = dir.join("skip_log.csv");
    generated.write_skip_log(&skip_path)?;
    let cuts_path = dir.join("cut_points.json");
    write_json(&cuts_path, &generated.cut_points)?;
    let cfg_path = dir.join("generator_config.json");
    write_json(&cfg_path, &config)?;
    let holdout_path = dir.join("holdout.jsonl");
    write_observational(&holdout_path, &holdout)?;
    let rest_path = dir.join("obs_test.jsonl");
    write_observational(&rest_path, &rest)?;
    for p in [&hyp_path, &skip_path, &cuts_path, &cfg_path, &holdout_path, &rest_path] {
        m.output(p);
    }
    m.param("hypotheses", generated.hypotheses.len()).param("skipped", generated.skipped.len());
    m.write(&dir.join(manifest_name("gen-hypotheses")))?;
    Ok(GenOutputs { hypotheses: hyp_path, test_obs: rest_path })
}

struct Loaded {
    data: Dataset,
    hyps: Vec<Hypothesis>,
    twins: TwinCollection,
}

fn load_inputs(cli: &Cli, inputs: &TestInputs, dir: &Path, m: &mut ManifestBuilder) -> Result<Loaded> {
    let schema = SchemaSpec::load(&inputs.schema)?;
    let data = load_observational(&inputs.obs, &schema)?;
    let hyps = load_hypotheses(&inputs.hypotheses)?;
    for h in &hyps {
        h.validate(&schema)?;
    }
    m.input(&inputs.schema).input(&inputs.obs).input(&inputs.hypotheses);
    m.param("backend", inputs.backend.as_str())
        .param("alpha", inputs.alpha)
        .param("multiplicity", inputs.multiplicity)
        .param("resamples", inputs.resamples);
    if !(inputs.alpha > 0.0 && inputs.alpha < 1.0) {
        return Err(Error::invalid(format!("--alpha {} outside (0, 1)", inputs.alpha)));
    }
    if inputs.backend.is_bootstrap() && inputs.resamples == 0 {
        return Err(Error::invalid("--resamples must be at least 1"));
    }

    let twins = match (&inputs.twin, &inputs.twin_cmd) {
        (Some(p), _) => {
            m.input(p);
            load_twin_collection(p, &schema)?
        }
        (None, Some(cmd)) => {
            let cmd: TwinCommand = cmd.parse()?;
            let pool = x0_pool(&data);
            let n = inputs.twin_n.unwrap_or(pool.len());
            let opts =
                SessionOptions { timeout: Duration::from_secs_f64(inputs.twin_timeout), window: inputs.twin_window };
            let sequences: BTreeSet<&Vec<u32>> = hyps.iter().map(|h| &h.actions).collect();
            let twins = sequences
                .into_iter()
                .map(|a| run_external_twin(&cmd, &schema, &pool, a, n, sequence_master(cli.seed, a), opts))
                .collect::<Result<TwinCollection>>()?;
            let p = dir.join("twin_external.jsonl");
            write_twin_collection(&p, &twins)?;
            m.output(&p).param("twin_n", n).param("twin_cmd", &inputs.twin_cmd);
            twins
        }
        (None, None) => return Err(Error::invalid("one of --twin or --twin-cmd is required")),
    };
    Ok(Loaded { data, hyps, twins })
}

fn test_config(cli: &Cli, inputs: &TestInputs) -> TestConfig {
    TestConfig { backend: inputs.backend, alpha: inputs.alpha, resamples: inputs.resamples, seed: cli.seed }
}

fn run_tests(
    pool: &rayon::ThreadPool,
    loaded: &Loaded,
    hyps: &[Hypothesis],
    cfg: &TestConfig,
) -> Result<Vec<TestResult>> {
    pool.install(|| hyps.par_iter().map(|h| test_with_collection(&loaded.data, &loaded.twins, h, cfg)).collect())
}

#[derive(Serialize)]
struct TestSummary<'a> {
    manifest: String,
    backend: &'static str,
    alpha: f64,
    gated: usize,
    #[serde(flatten)]
    family: &'a FamilySummary,
}

#[derive(Serialize)]
struct TwoSidedRow {
    hypothesis_id: u64,
    direction: &'static str,
    inference: Option<twinfalsify::testing::TwoSidedInference>,
}

pub struct TestOutputs {
    pub results: PathBuf,
}

fn cmd_test(cli: &Cli, args: &TestArgs) -> Result<TestOutputs> {
    let inputs = &args.inputs;
    let dir = prepare(&cli.out_dir)?;
    let mut m = ManifestBuilder::new("test", cli.seed);
    let loaded = load_inputs(cli, inputs, &dir, &mut m)?;
    let cfg = test_config(cli, inputs);
    let pool = thread_pool(cli.workers)?;
    let results = run_tests(&pool, &loaded, &loaded.hyps, &cfg)?;
    let report = FamilyReport::from_results(results, inputs.multiplicity, inputs.alpha);

    let results_path = dir.join("results.csv");
    report.write_results_csv(&results_path)?;
    let estimates_path = dir.join("estimates.csv");
    write_estimates_csv(&estimates_path, report.results.iter().map(|r| (r.id, r.estimate)))?;

    let family = report.summary();
    let summary = TestSummary {
        manifest: manifest_name("test"),
        backend: inputs.backend.as_str(),
        alpha: inputs.alpha,
        gated: report.results.iter().filter(|r| r.gate.is_some()).count(),
        family: &family,
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;

    let mut diagnostics = Vec::new();
    for r in report.rejected() {
        let hyp = loaded.hyps.iter().find(|h| h.id == r.id).expect("result comes from a hypothesis");
        if let Some(twin) = loaded.twins.get(&hyp.actions) {
            diagnostics.push(rejection_diagnostics(&loaded.data, twin, hyp)?);
        }
    }
    let diag_path = dir.join("diagnostics.json");
    write_json(&diag_path, &diagnostics)?;
    m.output(&results_path).output(&estimates_path).output(&summary_path).output(&diag_path);

    if args.two_sided {
        let rows: Vec<TwoSidedRow> = report
            .results
            .iter()
            .map(|r| TwoSidedRow {
                hypothesis_id: r.id,
                direction: r.direction.as_str(),
                inference: if r.gate.is_some() {
                    None
                } else {
                    two_sided_hoeffding(&r.estimate, r.direction, inputs.alpha)
                },
            })
            .collect();
        let p = dir.join("two_sided.json");
        write_json(&p, &rows)?;
        m.output(&p).param("two_sided", true);
    }
    m.write(&dir.join(manifest_name("test")))?;
    println!(
        "{} hypotheses, {} gated, {} rejected ({} at level {})",
        report.results.len(),
        summary.gated,
        report.rejections(),
        inputs.multiplicity.as_str(),
        inputs.alpha
    );
    Ok(TestOutputs { results: results_path })
}

fn cmd_sensitivity(cli: &Cli, args: &SensitivityArgs) -> Result<()> {
    let inputs = &args.inputs;
    let dir = prepare(&cli.out_dir)?;
    let mut m = ManifestBuilder::new("sensitivity", cli.seed);
    m.param("deltas", &args.deltas);
    let loaded = load_inputs(cli, inputs, &dir, &mut m)?;
    let cfg = test_config(cli, inputs);
    let pool = thread_pool(cli.workers)?;
    let result = sensitivity_sweep_with(&loaded.hyps, &args.deltas, inputs.multiplicity, inputs.alpha, |family| {
        run_tests(&pool, &loaded, family, &cfg)
    })?;
    let path = dir.join("sensitivity.csv");
    write_sensitivity_csv(&path, &result)?;
    let skip_path = dir.join("sensitivity_skipped.json");
    write_json(&skip_path, &result.skipped)?;
    m.output(&path).output(&skip_path);
    m.write(&dir.join(manifest_name("sensitivity")))?;
    for (i, d) in result.deltas.iter().enumerate() {
        println!("delta {d}: {} rejections", result.total_rejections(i));
    }
    Ok(())
}

/// `-log10 p`, with `p = 1` mapped to exactly 0.
pub fn neg_log10(p: f64) -> f64 {
    if p >= 1.0 {
        0.0
    } else {
        -p.log10()
    }
}

#[derive(Serialize)]
struct PValueSummary {
    count: usize,
    min: Option<f64>,
    median: Option<f64>,
    max: Option<f64>,
}

#[derive(Serialize)]
struct Report {
    manifest: String,
    outcomes: Vec<OutcomeSummary>,
    neg_log10_p: PValueSummary,
}

fn outcome_table(rows: &[ResultRow]) -> Vec<OutcomeSummary> {
    let mut per: std::collections::BTreeMap<usize, OutcomeSummary> = Default::default();
    for r in rows {
        let e =
            per.entry(r.outcome_feature).or_insert(OutcomeSummary { feature: r.outcome_feature, ..Default::default() });
        e.hypotheses += 1;
        e.gated += r.gate_reason.is_some() as usize;
        if r.holm_reject {
            e.rejections += 1;
            match r.direction {
                twinfalsify::regions::Direction::Lo => e.rejections_lo += 1,
                twinfalsify::regions::Direction::Up => e.rejections_up += 1,
            }
        }
    }
    per.into_values().collect()
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<PathBuf> {
    let rows = read_results_csv(&args.results)?;
    let dir = prepare(&cli.out_dir)?;
    let mut m = ManifestBuilder::new("report", cli.seed);
    m.input(&args.results);

    let table = outcome_table(&rows);
    let table_path = dir.join("report.csv");
    {
        let f = std::fs::File::create(&table_path).map_err(|e| Error::io(&table_path, e))?;
        let mut w = BufWriter::new(f);
        let mut line = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(&table_path, e));
        line("outcome_feature,hypotheses,rejections,rejections_lo,rejections_up,gated".into())?;
        for o in &table {
            line(format!(
                "{},{},{},{},{},{}",
                o.feature, o.hypotheses, o.rejections, o.rejections_lo, o.rejections_up, o.gated
            ))?;
        }
        w.flush().map_err(|e| Error::io(&table_path, e))?;
    }

    let scores: Vec<f64> = rows.iter().map(|r| neg_log10(r.p)).collect();
    let p_path = dir.join("pvalues.csv");
    {
        let f = std::fs::File::create(&p_path).map_err(|e| Error::io(&p_path, e))?;
        let mut w = BufWriter::new(f);
        let mut line = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(&p_path, e));
        line("hypothesis_id,outcome_feature,direction,p,neg_log10_p".into())?;
        for (r, s) in rows.iter().zip(&scores) {
            line(format!("{},{},{},{},{}", r.hypothesis_id, r.outcome_feature, r.direction, r.p, s))?;
        }
        w.flush().map_err(|e| Error::io(&p_path, e))?;
    }

    let report = Report {
        manifest: manifest_name("report"),
        outcomes: table,
        neg_log10_p: PValueSummary {
            count: scores.len(),
            min: scores.iter().copied().reduce(f64::min),
            median: quantile_nearest_rank(&scores, 0.5).ok(),
            max: scores.iter().copied().reduce(f64::max),
        },
    };
    let json_path = dir.join("report.json");
    write_json(&json_path, &report)?;
    m.output(&table_path).output(&p_path).output(&json_path);
    m.write(&dir.join(manifest_name("report")))?;

    println!("{:>8} {:>11} {:>10} {:>5} {:>5} {:>6}", "outcome", "hypotheses", "rejections", "lo", "up", "gated");
    for o in &report.outcomes {
        println!(
            "{:>8} {:>11} {:>10} {:>5} {:>5} {:>6}",
            o.feature, o.hypotheses, o.rejections, o.rejections_lo, o.rejections_up, o.gated
        );
    }
    Ok(json_path)
}

fn cmd_demo(cli: &Cli, args: &DemoArgs) -> Result<()> {
    let dir = prepare(&cli.out_dir)?;
    let synth = cmd_synth(cli, &SynthArgs { config: None, n: args.n, twin_n: None, twin_mode: args.twin_mode })?;
    let gen = cmd_gen_hypotheses(
        cli,
        &GenArgs { schema: synth.schema.clone(), obs: synth.obs.clone(), config: None, holdout_fraction: 0.2 },
    )?;
    let test = cmd_test(
        cli,
        &TestArgs {
            inputs: TestInputs {
                schema: synth.schema.clone(),
                obs: gen.test_obs.clone(),
                twin: synth.twin.clone(),
                twin_cmd: None,
                twin_n: None,
                twin_timeout: 30.0,
                twin_window: 64,
                hypotheses: gen.hypotheses.clone(),
                backend: args.backend,
                alpha: 0.05,
                multiplicity: Multiplicity::HolmBonferroni,
                resamples: twinfalsify::intervals::DEFAULT_RESAMPLES,
            },
            two_sided: false,
        },
    )?;
    let report = cmd_report(cli, &ReportArgs { results: test.results })?;
    let mut m = ManifestBuilder::new("demo", cli.seed);
    m.param("n", args.n).param("twin_mode", args.twin_mode).param("backend", args.backend.as_str());
    for name in ["synth", "gen-hypotheses", "test", "report"] {
        m.output(dir.join(manifest_name(name)));
    }
    m.output(report);
    m.write(&dir.join(manifest_name("demo")))
}

fn cmd_twin_server(args: &ServerArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => SynthConfig::load(p)?,
        None => demo_config(),
    };
    let mode: TwinMode = args.twin_mode;
    let schema = cfg.schema()?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_twin(stdin.lock(), stdout.lock(), &schema.dims, |req| {
        if req.x0.len() != cfg.d {
            return Err(format!("x0 has dimension {}, expected {}", req.x0.len(), cfg.d));
        }
        if req.actions.is_empty() || req.actions.len() > cfg.horizon {
            return Err(format!("action sequence length {} outside 1..={}", req.actions.len(), cfg.horizon));
        }
        if let Some(a) = req.actions.iter().find(|&&a| a >= cfg.actions) {
            return Err(format!("action {a} out of range"));
        }
        Ok(simulate_twin(&cfg, mode, &req.x0, &req.actions, req.seed))
    })
    .map_err(|e| Error::Protocol(format!("serving twin: {e}")))
}
