//! Command-line front end: `metric`, `logic`, `validate` and `sweep`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invariant
//! violation, 3 internal error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{FunctionalSelection, ResolvedRun, RunConfig};
use crate::error::{Error, Result};
use crate::logic::{parse, parse_lines, separation, Evaluator, Formula, GeneratedFormula, Logic, Witness};
use crate::logic::estimate_with;
use crate::metrics::{check_ordering, iterate_to_fixpoint, FixpointReport, Functional, PseudometricMatrix};
use crate::rational::display;
use crate::report::{cell, to_json_string, OutputDir};
use crate::validate::{validate_run, ValidationReport, ORDER_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bisimetric", version, about = "Behavioural pseudometrics for Markov processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute fixpoint metrics and write matrices and reports.
    Metric(RunArgs),
    /// Evaluate formulas or search for separating formulas.
    Logic(LogicArgs),
    /// Run the invariant suite on the configured instance.
    Validate(RunArgs),
    /// Recompute the fixpoints over a range of discounts.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// F, G or both.
    #[arg(long, value_parser = parse_functional)]
    pub functional: Option<FunctionalSelection>,
    /// exact or mc:<samples>.
    #[arg(long)]
    pub path_mode: Option<String>,
    #[arg(long)]
    pub discount: Option<f64>,
    #[arg(long)]
    pub epsilon_fixpoint: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LogicArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// File of formulas, one per line, `#` starts a comment.
    #[arg(long)]
    pub formulas: Vec<PathBuf>,
    /// A formula given inline; may be repeated.
    #[arg(long)]
    pub formula: Vec<String>,
    /// Logic to search in (lambda or sigma); overrides the configuration.
    #[arg(long, value_parser = parse_logic)]
    pub logic: Vec<Logic>,
    /// Fixpoint matrix CSV to compare the lower bounds against.
    #[arg(long)]
    pub fixpoint: Option<PathBuf>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_formulas: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated discounts; defaults to the configuration's sweep list.
    #[arg(long, value_delimiter = ',')]
    pub discounts: Vec<f64>,
}

fn parse_functional(s: &str) -> std::result::Result<FunctionalSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_logic(s: &str) -> std::result::Result<Logic, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_)
        | Error::InvalidDiscount(_)
        | Error::InvalidTolerance(_)
        | Error::InvalidStep(_)
        | Error::InvalidGrid(_)
        | Error::InvalidTime(_)
        | Error::Syntax { .. }
        | Error::MixedGrammar(_)
        | Error::ConstantOutOfRange(_)
        | Error::EnumerationTooLarge { .. }
        | Error::UnsupportedTime(_)
        | Error::PreconditionFailed(_) => EXIT_USAGE,
        Error::Honesty(_) | Error::InvalidPseudometric(_) | Error::InvalidDistribution(_) => EXIT_INVARIANT,
        Error::InvalidCost(_) | Error::InvalidSequence(_) | Error::Shape(_) | Error::Solver(_) | Error::Io(_) => {
            EXIT_INTERNAL
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Metric(a) => cmd_metric(a, out, err),
        Command::Logic(a) => cmd_logic(a, out, err),
        Command::Validate(a) => cmd_validate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        if let Some(f) = self.functional {
            cfg.functional = f;
        }
        if let Some(mode) = &self.path_mode {
            cfg.path_mode = mode.clone();
        }
        if let Some(c) = self.discount {
            cfg.discount = c;
        }
        if let Some(e) = self.epsilon_fixpoint {
            cfg.epsilon_fixpoint = e;
        }
        if let Some(n) = self.max_iter {
            cfg.max_iter = n;
        }
        Ok(cfg)
    }

    fn resolve(&self) -> Result<ResolvedRun> {
        self.load()?.resolve()
    }
}

fn open_out(run: &ResolvedRun) -> Result<Option<OutputDir>> {
    run.config.out_dir.as_deref().map(OutputDir::acquire).transpose()
}

fn fixpoints(run: &ResolvedRun, c: f64, grid: &crate::discretize::TimeGrid) -> Result<Vec<FixpointReport>> {
    let cfg = &run.config;
    cfg.functional
        .functionals()
        .into_iter()
        .map(|f| iterate_to_fixpoint(f, &run.model, grid, c, cfg.epsilon_fixpoint, cfg.max_iter, run.mode))
        .collect()
}

fn matrix_text(labels: &[String], m: &PseudometricMatrix) -> Result<String> {
    let mut buf = Vec::new();
    m.write_csv(labels, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

fn cmd_metric(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let run = args.resolve()?;
    let dir = open_out(&run)?;
    let labels = run.labels().to_vec();
    let c = run.config.discount;
    let reports = fixpoints(&run, c, &run.grid)?;
    let mut delta_rows = Vec::new();
    for r in &reports {
        let name = r.config.functional;
        r.final_matrix().validate(crate::metrics::AXIOM_TOL)?;
        writeln!(
            out,
            "{name}: {} after {} iterations, residual {}",
            if r.converged { "converged" } else { "NOT converged" },
            r.iterations(),
            short(r.residual)
        )?;
        if !r.converged {
            writeln!(err, "warning: {name} fixpoint did not converge within {} iterations", run.config.max_iter)?;
        }
        if let Some(noise) = r.noise_estimate {
            writeln!(out, "{name}: Monte Carlo noise estimate {}", short(noise))?;
        }
        for (k, d) in r.deltas.iter().enumerate() {
            delta_rows.push(vec![name.to_string(), (k + 1).to_string(), cell(*d)]);
        }
        match &dir {
            Some(d) => {
                d.json(&format!("fixpoint_{name}.json"), &r.to_json(&labels))?;
                d.matrix_csv(&format!("matrix_{name}.csv"), &labels, r.final_matrix())?;
            }
            None => out.write_all(matrix_text(&labels, r.final_matrix())?.as_bytes())?,
        }
    }
    if let Some(d) = &dir {
        d.csv_rows("deltas.csv", &["functional", "iteration", "sup_delta"], &delta_rows)?;
    }
    let mut code = EXIT_OK;
    if let [f, g] = reports.as_slice() {
        let noise = f.noise_estimate.unwrap_or(0.0).max(g.noise_estimate.unwrap_or(0.0));
        let ord = check_ordering(f.final_matrix(), g.final_matrix(), ORDER_TOL + noise)?;
        let verdict = if ord.pass { "pass" } else { "FAIL" };
        writeln!(out, "ordering δ̄ ≤ d̄: {verdict} (max violation {})", short(ord.max_violation))?;
        if let Some(d) = &dir {
            d.json("ordering.json", &json!({ "summary": format!("δ̄ ≤ d̄: {verdict}"), "report": ord }))?;
        }
        if !ord.pass {
            code = EXIT_INVARIANT;
        }
    }
    if run.config.step_sensitivity {
        let refined = run.grid.refined()?;
        let finer = fixpoints(&run, c, &refined)?;
        let mut entries = serde_json::Map::new();
        for (coarse, fine) in reports.iter().zip(&finer) {
            let change = coarse.final_matrix().sup_distance(fine.final_matrix());
            let within = change <= run.config.epsilon_grid;
            writeln!(
                out,
                "{}: halving the step changes the metric by {} ({} epsilon_grid {})",
                coarse.config.functional,
                short(change),
                if within { "within" } else { "EXCEEDS" },
                short(run.config.epsilon_grid)
            )?;
            entries.insert(
                coarse.config.functional.to_string(),
                json!({
                    "step": display(&run.config.time_step()?).to_string(),
                    "refined_step": display(&refined.times()[1]).to_string(),
                    "sup_change": change,
                    "epsilon_grid": run.config.epsilon_grid,
                    "within_tolerance": within,
                }),
            );
        }
        if let Some(d) = &dir {
            d.json("sensitivity.json", &entries)?;
        }
    }
    if !run.config.sweep.is_empty() {
        let discounts = run.config.sweep.clone();
        sweep(&run, &discounts, dir.as_ref(), out)?;
    }
    Ok(code)
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let run = args.run.resolve()?;
    let discounts = if args.discounts.is_empty() { run.config.sweep.clone() } else { args.discounts.clone() };
    if discounts.is_empty() {
        return Err(Error::InvalidConfig("no discounts given (use --discounts or the sweep field)".into()));
    }
    for &c in &discounts {
        crate::discretize::check_discount(c)?;
    }
    let dir = open_out(&run)?;
    sweep(&run, &discounts, dir.as_ref(), out)?;
    Ok(EXIT_OK)
}

/// Per-pair fixpoint values over `discounts`; reports whether they grow with `c`.
fn sweep(run: &ResolvedRun, discounts: &[f64], dir: Option<&OutputDir>, out: &mut dyn Write) -> Result<()> {
    let labels = run.labels();
    let n = labels.len();
    let mut sorted = discounts.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut rows = Vec::new();
    let mut finals: Vec<Vec<(Functional, PseudometricMatrix, f64)>> = Vec::new();
    for &c in &sorted {
        let grid = run.grid_for(c)?;
        let reports = fixpoints(run, c, &grid)?;
        for r in &reports {
            for x in 0..n {
                for y in x + 1..n {
                    rows.push(vec![
                        cell(c),
                        r.config.functional.to_string(),
                        labels[x].clone(),
                        labels[y].clone(),
                        cell(r.final_matrix().get(x, y)),
                    ]);
                }
            }
        }
        finals.push(
            reports
                .into_iter()
                .map(|r| {
                    let noise = r.noise_estimate.unwrap_or(0.0);
                    (r.config.functional, r.final_matrix().clone(), noise)
                })
                .collect(),
        );
    }
    let mut worst = 0.0f64;
    for w in finals.windows(2) {
        for ((_, lo, n0), (_, hi, n1)) in w[0].iter().zip(&w[1]) {
            worst = worst.max(lo.max_excess_over(hi).0 - n0.max(*n1));
        }
    }
    let monotone = worst <= ORDER_TOL;
    let shown: Vec<String> = sorted.iter().map(|c| cell(*c)).collect();
    writeln!(
        out,
        "sweep over c in [{}]: per-pair metric {} in c (largest decrease {})",
        shown.join(", "),
        if monotone { "nondecreasing" } else { "NOT nondecreasing" },
        short(worst.max(0.0))
    )?;
    match dir {
        Some(d) => {
            d.csv_rows("sweep.csv", &["discount", "functional", "x", "y", "value"], &rows)?;
        }
        None => {
            writeln!(out, "discount,functional,x,y,value")?;
            for r in &rows {
                writeln!(out, "{}", r.join(","))?;
            }
        }
    }
    Ok(())
}

fn cmd_validate(args: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.load()?;
    let report = match cfg.resolve() {
        Ok(run) => validate_run(&run)?,
        Err(e @ Error::Honesty(_)) => ValidationReport::honesty_failure(&e),
        Err(e) => return Err(e),
    };
    for c in &report.checks {
        writeln!(
            out,
            "{} {}: max violation {} (tolerance {}) {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            short(c.max_violation),
            short(c.tolerance),
            c.detail
        )?;
    }
    writeln!(out, "validation: {}", if report.pass { "pass" } else { "FAIL" })?;
    for v in &report.violations {
        writeln!(out, "violation: {v}")?;
    }
    if let Some(dir) = &cfg.out_dir {
        let d = OutputDir::acquire(dir)?;
        d.json("validation.json", &report)?;
    }
    Ok(if report.pass { EXIT_OK } else { EXIT_INVARIANT })
}

/// Formulas from files and inline strings, with the location each came from.
fn read_formulas(args: &LogicArgs) -> Result<Vec<(String, Formula)>> {
    let mut all = Vec::new();
    for path in &args.formulas {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let parsed = parse_lines(&text).map_err(|(line, e)| located(&format!("{}:{line}", path.display()), e))?;
        all.extend(parsed.into_iter().map(|(line, f)| (format!("{}:{line}", path.display()), f)));
    }
    for (k, text) in args.formula.iter().enumerate() {
        let f = parse(text).map_err(|e| located(&format!("--formula #{}", k + 1), e))?;
        all.push((format!("--formula #{}", k + 1), f));
    }
    Ok(all)
}

/// Prefixes a parse error with where the formula came from, keeping its kind.
fn located(place: &str, e: Error) -> Error {
    match e {
        Error::Syntax { pos, msg } => Error::Syntax { pos, msg: format!("{place}: {msg}") },
        Error::MixedGrammar(msg) => Error::MixedGrammar(format!("{place}: {msg}")),
        Error::ConstantOutOfRange(msg) => Error::ConstantOutOfRange(format!("{place}: {msg}")),
        other => Error::InvalidConfig(format!("{place}: {other}")),
    }
}

fn cmd_logic(args: &LogicArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut cfg = args.run.load()?;
    if !args.logic.is_empty() {
        cfg.logic.logics = args.logic.clone();
    }
    if let Some(d) = args.max_depth {
        cfg.logic.max_depth = d;
    }
    if let Some(m) = args.max_formulas {
        cfg.logic.max_formulas = m;
    }
    let formulas = read_formulas(args)?;
    let fixpoint = args
        .fixpoint
        .as_deref()
        .map(|p| {
            let file = std::fs::File::open(p)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            PseudometricMatrix::read_csv(std::io::BufReader::new(file))
        })
        .transpose()?;
    let run = cfg.resolve()?;
    let labels = run.labels().to_vec();
    let n = labels.len();
    if let Some((fl, m)) = &fixpoint {
        if m.len() != n {
            return Err(Error::InvalidConfig(format!("fixpoint matrix has {} states, the model has {n}", m.len())));
        }
        if fl != &labels {
            writeln!(err, "warning: fixpoint labels differ from the model's state labels")?;
        }
    }
    let dir = open_out(&run)?;
    let ev = Evaluator::new(&run.model, run.config.discount, &run.grid, run.mode)?;

    let mut results: Vec<(Logic, PseudometricMatrix, Vec<Witness>, serde_json::Value)> = Vec::new();
    if formulas.is_empty() {
        for &logic in &run.config.logic.logics {
            let est = estimate_with(&ev, logic, run.budget())?;
            writeln!(
                out,
                "{logic}: {} formulas evaluated, {} retained, largest separation {}",
                est.formulas_evaluated,
                est.formulas_retained,
                cell(est.matrix.max_entry())
            )?;
            let summary = serde_json::to_value(&est).map_err(|e| Error::Io(e.to_string()))?;
            results.push((logic, est.matrix, est.witnesses, summary));
        }
    } else {
        let mut rows = Vec::new();
        let mut groups: Vec<(Logic, Vec<GeneratedFormula>)> = Vec::new();
        for (origin, f) in formulas {
            let state = f.into_state().map_err(|e| Error::Syntax {
                pos: 0,
                msg: format!("{origin}: {e}; wrap trajectory formulas in `int`"),
            })?;
            let logic = state.validate()?.unwrap_or(Logic::Lambda);
            let values = ev.state_values(&state)?;
            let mut row = vec![state.to_string(), logic.to_string()];
            row.extend(values.iter().map(|v| cell(*v)));
            rows.push(row);
            let generated = GeneratedFormula { formula: state, values };
            match groups.iter_mut().find(|(l, _)| *l == logic) {
                Some((_, v)) => v.push(generated),
                None => groups.push((logic, vec![generated])),
            }
        }
        let mut header = vec!["formula".to_string(), "logic".to_string()];
        header.extend(labels.iter().cloned());
        match &dir {
            Some(d) => {
                let h: Vec<&str> = header.iter().map(String::as_str).collect();
                d.csv_rows("evaluation.csv", &h, &rows)?;
            }
            None => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
                for r in &rows {
                    w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
                out.write_all(&bytes)?;
            }
        }
        groups.sort_by_key(|(l, _)| *l as u8);
        for (logic, generated) in groups {
            let (matrix, witnesses) = separation(n, &generated)?;
            let summary = json!({ "logic": logic, "formulas_evaluated": generated.len(), "source": "given formulas" });
            results.push((logic, matrix, witnesses, summary));
        }
    }

    let mut code = EXIT_OK;
    for (logic, matrix, witnesses, summary) in &results {
        if let Some(d) = &dir {
            d.matrix_csv(&format!("logic_{logic}.csv"), &labels, matrix)?;
            d.json(&format!("witnesses_{logic}.json"), &json!({ "summary": summary, "witnesses": witnesses }))?;
        } else if args.formula.is_empty() && args.formulas.is_empty() {
            out.write_all(matrix_text(&labels, matrix)?.as_bytes())?;
        }
        if let Some((_, upper)) = &fixpoint {
            let gap = gap_report(matrix, upper, witnesses, &labels);
            let excess = gap["max_excess"].as_f64().unwrap_or(0.0);
            writeln!(
                out,
                "{logic}: largest gap to the fixpoint {}, largest excess {}",
                short(gap["max_gap"].as_f64().unwrap_or(0.0)),
                short(excess)
            )?;
            if let Some(d) = &dir {
                d.json(&format!("gap_{logic}.json"), &gap)?;
            } else {
                out.write_all(to_json_string(&gap)?.as_bytes())?;
            }
            if excess > ORDER_TOL {
                writeln!(err, "error: {logic} lower bound exceeds the supplied fixpoint by {}", short(excess))?;
                code = EXIT_INVARIANT;
            }
        }
    }
    Ok(code)
}

/// Per-pair comparison of a logical lower bound with a fixpoint matrix.
fn gap_report(lower: &PseudometricMatrix, upper: &PseudometricMatrix, witnesses: &[Witness], labels: &[String]) -> serde_json::Value {
    let n = lower.len();
    let mut pairs = Vec::new();
    let (mut max_gap, mut max_excess) = (0.0f64, 0.0f64);
    for x in 0..n {
        for y in x + 1..n {
            let (lo, hi) = (lower.get(x, y), upper.get(x, y));
            max_gap = max_gap.max(hi - lo);
            max_excess = max_excess.max(lo - hi);
            let witness = witnesses.iter().find(|w| w.pair == [x, y]).map(|w| w.formula.clone());
            pairs.push(json!({
                "pair": [x, y],
                "labels": [labels[x], labels[y]],
                "fixpoint": hi,
                "lower_bound": lo,
                "gap": hi - lo,
                "witness": witness,
            }));
        }
    }
    json!({ "max_gap": max_gap, "max_excess": max_excess, "tolerance": ORDER_TOL, "pairs": pairs })
}

fn short(v: f64) -> String {
    format!("{v:.3e}")
}
