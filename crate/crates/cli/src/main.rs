//! `eventlab`: command-line front end.
//!
//! Every command loads a panel, builds an [`AnalysisRequest`] from an
//! optional run config plus flags, and writes JSON/CSV artifacts to the
//! output directory (`--out`, `EVENTLAB_OUT`, or the working directory).
//! Exit status: 0 success, 2 invalid input, 3 infeasible balance problem,
//! 1 anything else.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eventlab_core::io::{self, read_weights, to_json_string, write_classification, write_curve, write_weights, CsvSchema};
use eventlab_core::report::{self, ContrastRun, ErrorBody};
use eventlab_core::{
    render, AdjustmentSet, AnalysisRequest, BalanceOptions, BootstrapConfig, DeltaRule, Error, EstimandConfig, Estimator,
    InfluenceMode, Invariance, Operation, Panel, TargetConfig, TwfeSpec,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "eventlab", version, about = "Staggered-adoption event study engine")]
struct Cli {
    /// Output directory for artifacts.
    #[arg(long, global = true, env = "EVENTLAB_OUT")]
    out: Option<PathBuf>,
    /// Seed for bootstrap resampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a panel; writes panel.json.
    Validate(RunArgs),
    /// Tag observations by the assumptions that license them; writes classify.json and classification.csv.
    Classify(RunArgs),
    /// Estimate one effect; writes estimate.json and weights.csv.
    Estimate(RunArgs),
    /// Fit a TWFE regression; writes twfe.json.
    Twfe {
        #[command(flatten)]
        run: RunArgs,
        /// Also decompose a coefficient into implied weights, e.g. `tau=5`.
        #[arg(long)]
        decompose: Option<String>,
    },
    /// Implied-weights decomposition of a TWFE coefficient; writes decompose.json and weights.csv.
    Decompose(RunArgs),
    /// Weighting diagnostics; writes diagnostics.json.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        /// Weight table exported by `estimate` or `decompose`.
        #[arg(long = "in")]
        weights: Option<PathBuf>,
    },
    /// Unit-cluster bootstrap of one estimate; writes bootstrap.json.
    Bootstrap(RunArgs),
    /// Estimates across relative times; writes event_study.json and event_study.csv.
    EventStudy(RunArgs),
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of browser assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
enum Format {
    /// Generic CSV (`unit,time,outcome` plus `g` or `treat`).
    #[default]
    Csv,
    /// The no-fault divorce panel layout.
    Divorce,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InvarianceArg {
    Off,
    Cohort,
    Strong,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    Ideal,
    Robust,
    Twfe,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InfluenceArg {
    Fast,
    Refit,
}

#[derive(Args, Clone, Debug)]
struct RunArgs {
    /// Panel CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Run config JSON (data path, schema and request); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    unit_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    outcome_col: Option<String>,
    /// Column with the initiation time (calendar label or `never`).
    #[arg(long)]
    cohort_col: Option<String>,
    /// Column with a 0/1 treatment indicator, used when the cohort column is absent.
    #[arg(long)]
    treat_col: Option<String>,
    /// Covariate columns (comma list); default is every remaining column.
    #[arg(long)]
    covariates: Option<String>,
    /// Accept panels with missing cells.
    #[arg(long)]
    allow_missing: bool,

    /// Initiation time of the treated cohort.
    #[arg(long)]
    t1: Option<i64>,
    /// Outcome time.
    #[arg(long)]
    ty: Option<i64>,
    /// Reference regime: `never`, or a mix such as `1975:0.5,never:0.5`.
    #[arg(long)]
    reference: Option<String>,
    /// Target population: study, treated, twfe or file:<path> (CSV `unit,weight`).
    #[arg(long)]
    target: Option<String>,

    #[arg(long, value_enum)]
    invariance: Option<InvarianceArg>,
    /// Limited anticipation horizon.
    #[arg(long)]
    kappa: Option<u32>,
    /// Delayed onset horizon.
    #[arg(long)]
    phi: Option<u32>,
    /// Effect dissipation horizon.
    #[arg(long)]
    xi: Option<u32>,
    /// Adjustment set, e.g. `unit,time,x1`; `none` for no adjustment.
    #[arg(long)]
    adjust: Option<String>,

    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Non-negative balancing weights.
    #[arg(long)]
    nonneg: bool,
    /// Balance tolerance for continuous columns: a number, or `sd:<factor>`.
    #[arg(long)]
    delta: Option<String>,
    /// Polynomial degree of the covariate basis.
    #[arg(long)]
    degree: Option<u8>,
    /// Restrict control weights to homogeneous lag effects (reproduces TWFE).
    #[arg(long)]
    homogeneous_effects: bool,

    /// Regression covariates for TWFE (comma list).
    #[arg(long)]
    twfe_covariates: Option<String>,
    /// Coefficient to decompose, e.g. `tau[5]` or `tau=5`.
    #[arg(long)]
    term: Option<String>,
    /// Lag range for event-study curves, e.g. `-5:10`.
    #[arg(long, allow_hyphen_values = true)]
    lags: Option<String>,
    #[arg(long, value_enum)]
    influence: Option<InfluenceArg>,
    /// Bootstrap replications.
    #[arg(long)]
    reps: Option<usize>,
}

/// Everything needed to replay a run: data location, column mapping and request.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    data: Option<PathBuf>,
    format: Format,
    schema: CsvSchema,
    request: AnalysisRequest,
}

fn parse_term(s: &str) -> String {
    match s.split_once('=') {
        Some((name, lag)) => format!("{}[{}]", name.trim(), lag.trim()),
        None => s.trim().to_string(),
    }
}

fn parse_reference(s: &str) -> anyhow::Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once(':') {
            Some((k, v)) => {
                out.insert(k.trim().to_string(), v.trim().parse::<f64>().with_context(|| format!("reference share {v:?}"))?);
            }
            None => {
                out.insert(part.to_string(), 1.0);
            }
        }
    }
    // A pure never-treated reference is the default representation.
    if out.len() == 1 && out.contains_key("never") {
        out.clear();
    }
    Ok(out)
}

fn parse_target(s: &str) -> anyhow::Result<TargetConfig> {
    Ok(match s {
        "study" => TargetConfig::Study,
        "treated" => TargetConfig::Treated,
        "twfe" => TargetConfig::Twfe,
        other => {
            let path = other.strip_prefix("file:").ok_or_else(|| anyhow!("unknown target {other:?}"))?;
            let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading target file {path}"))?;
            let mut weights = BTreeMap::new();
            for (i, rec) in rdr.deserialize::<(String, f64)>().enumerate() {
                let (unit, w) = rec.map_err(|e| Error::Schema { row: i + 1, message: e.to_string() })?;
                weights.insert(unit, w);
            }
            TargetConfig::Custom { weights }
        }
    })
}

fn parse_delta(s: &str) -> anyhow::Result<DeltaRule> {
    match s.strip_prefix("sd:") {
        Some(f) => Ok(DeltaRule::SdMultiple(f.parse().with_context(|| format!("delta {s:?}"))?)),
        None => Ok(DeltaRule::Absolute(s.parse().with_context(|| format!("delta {s:?}"))?)),
    }
}

fn parse_lags(s: &str) -> anyhow::Result<(i64, i64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| anyhow!("lags must look like a:b"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn comma_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

impl RunArgs {
    fn config(&self, seed: Option<u64>) -> anyhow::Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).map_err(Error::from)?
            }
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        let s = &mut cfg.schema;
        for (flag, field) in [
            (&self.unit_col, &mut s.unit),
            (&self.time_col, &mut s.time),
            (&self.outcome_col, &mut s.outcome),
            (&self.cohort_col, &mut s.cohort),
            (&self.treat_col, &mut s.treat),
        ] {
            if let Some(v) = flag {
                *field = v.clone();
            }
        }
        if let Some(c) = &self.covariates {
            s.covariates = Some(comma_list(c));
        }
        s.allow_missing |= self.allow_missing;
        self.apply(&mut cfg.request, seed)?;
        Ok(cfg)
    }

    fn apply(&self, req: &mut AnalysisRequest, seed: Option<u64>) -> anyhow::Result<()> {
        if self.t1.is_some() || self.ty.is_some() || self.reference.is_some() || self.target.is_some() {
            let current = req.estimand.clone();
            let t1 = self.t1.or(current.as_ref().map(|e| e.t1));
            let ty = self.ty.or(current.as_ref().map(|e| e.ty));
            let (Some(t1), Some(ty)) = (t1, ty) else { bail!(Error::validation("both --t1 and --ty are needed")) };
            let reference = match &self.reference {
                Some(r) => parse_reference(r)?,
                None => current.as_ref().map(|e| e.reference.clone()).unwrap_or_default(),
            };
            let target = match &self.target {
                Some(t) => parse_target(t)?,
                None => current.map(|e| e.target).unwrap_or_default(),
            };
            req.estimand = Some(EstimandConfig { t1, ty, reference, target });
        }
        let a = &mut req.assumptions;
        if let Some(i) = self.invariance {
            a.invariance = match i {
                InvarianceArg::Off => Invariance::Off,
                InvarianceArg::Cohort => Invariance::PerCohort,
                InvarianceArg::Strong => Invariance::Strong,
            };
        }
        a.kappa = self.kappa.or(a.kappa);
        a.phi = self.phi.or(a.phi);
        a.xi = self.xi.or(a.xi);
        if let Some(adj) = &self.adjust {
            a.adjustment = AdjustmentSet::parse(adj);
        }
        if let Some(e) = self.estimator {
            req.estimator = match e {
                EstimatorArg::Ideal => Estimator::Ideal,
                EstimatorArg::Robust => Estimator::Robust { options: BalanceOptions::default() },
                EstimatorArg::Twfe => Estimator::Twfe { spec: req.twfe.clone() },
            };
        }
        if let Estimator::Robust { options } = &mut req.estimator {
            options.nonneg |= self.nonneg;
            options.homogeneous_effects |= self.homogeneous_effects;
            if let Some(d) = &self.delta {
                options.delta = parse_delta(d)?;
            }
            if let Some(d) = self.degree {
                options.degree = d;
            }
        }
        if let Some(c) = &self.twfe_covariates {
            req.twfe = TwfeSpec { covariates: comma_list(c), ..req.twfe.clone() };
            if let Estimator::Twfe { spec } = &mut req.estimator {
                spec.covariates = req.twfe.covariates.clone();
            }
        }
        if let Some(t) = &self.term {
            req.term = Some(parse_term(t));
        }
        if let Some(l) = &self.lags {
            req.lags = Some(parse_lags(l)?);
        }
        if let Some(i) = self.influence {
            req.influence = Some(match i {
                InfluenceArg::Fast => InfluenceMode::Fast,
                InfluenceArg::Refit => InfluenceMode::Refit,
            });
        }
        if self.reps.is_some() || seed.is_some() {
            let b = req.bootstrap.get_or_insert_with(BootstrapConfig::default);
            if let Some(r) = self.reps {
                b.replications = r;
            }
            if let Some(s) = seed {
                b.seed = s;
            }
        }
        Ok(())
    }
}

struct Loaded {
    data: Vec<u8>,
    panel: Panel,
    config: RunConfig,
}

fn load(args: &RunArgs, seed: Option<u64>) -> anyhow::Result<Loaded> {
    let config = args.config(seed)?;
    let path = config.data.clone().ok_or_else(|| Error::validation("no dataset given (--data)"))?;
    let data = fs::read(&path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
    let panel = match config.format {
        Format::Csv => io::read_panel(data.as_slice(), &config.schema)?,
        Format::Divorce => io::load_divorce_reader(data.as_slice())?,
    };
    for w in panel.warnings() {
        log::warn!("{w}");
    }
    Ok(Loaded { data, panel, config })
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: Option<PathBuf>) -> anyhow::Result<Self> {
        let dir = dir.unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, body: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    fn csv(&self, name: &str, write: impl FnOnce(fs::File) -> eventlab_core::Result<()>) -> anyhow::Result<PathBuf> {
        let p = self.path(name);
        let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        write(f)?;
        Ok(p)
    }
}

fn artifact(out: &Output, name: &str, op: Operation, l: &Loaded) -> anyhow::Result<serde_json::Value> {
    let body = render(op, &l.data, &l.panel, &l.config.request)?;
    let p = out.text(name, &body)?;
    println!("wrote {}", p.display());
    Ok(serde_json::from_str(&body)?)
}

fn write_config(out: &Output, l: &Loaded) -> anyhow::Result<()> {
    out.text("run_config.json", &to_json_string(&l.config)?)?;
    Ok(())
}

fn export_weights(out: &Output, panel: &Panel, run: &ContrastRun) -> anyhow::Result<()> {
    let p = out.csv("weights.csv", |f| write_weights(f, panel, &run.contrast, &run.tags))?;
    println!("wrote {}", p.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    let out = || Output::new(cli.out.clone());
    match &cli.command {
        Command::Validate(args) => {
            let l = load(args, seed)?;
            let out = out()?;
            let v = artifact(&out, "panel.json", Operation::Panel, &l)?;
            let r = &v["result"];
            println!(
                "{} units x {} times, {} observed cells, {} cohorts",
                l.panel.n_units(),
                l.panel.n_times(),
                r["n_observed"],
                r["cohorts"].as_array().map_or(0, Vec::len)
            );
        }
        Command::Classify(args) => {
            let l = load(args, seed)?;
            let out = out()?;
            write_config(&out, &l)?;
            artifact(&out, "classify.json", Operation::Classify, &l)?;
            let (report, tags) = report::classify_report(&l.panel, &l.config.request)?;
            out.csv("classification.csv", |f| write_classification(f, &l.panel, &tags))?;
            println!("{}: {} used, {} excluded", report.estimand, report.n_used, report.n_excluded);
            for c in report.counts {
                println!("  {:<20} treatment {:>5}  control {:>5}", c.group.name(), c.treatment, c.control);
            }
        }
        Command::Estimate(args) => {
            let l = load(args, seed)?;
            let out = out()?;
            write_config(&out, &l)?;
            let v = artifact(&out, "estimate.json", Operation::Estimate, &l)?;
            if let (_, Some(run)) = report::estimate_report(&l.panel, &l.config.request)? {
                export_weights(&out, &l.panel, &run)?;
            }
            println!("{}: {}", v["result"]["estimand"].as_str().unwrap_or(""), v["result"]["estimate"]);
        }
        Command::Twfe { run, decompose } => {
            let mut l = load(run, seed)?;
            let out = out()?;
            write_config(&out, &l)?;
            artifact(&out, "twfe.json", Operation::Twfe, &l)?;
            if let Some(term) = decompose {
                l.config.request.term = Some(parse_term(term));
                decompose_artifacts(&out, &l)?;
            }
        }
        Command::Decompose(args) => {
            let l = load(args, seed)?;
            let out = out()?;
            write_config(&out, &l)?;
            decompose_artifacts(&out, &l)?;
        }
        Command::Diagnose { run, weights } => {
            let l = load(run, seed)?;
            let out = out()?;
            write_config(&out, &l)?;
            match weights {
                Some(path) => {
                    let f = fs::File::open(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
                    let (contrast, tags) = read_weights(f, &l.panel)?;
                    let result = report::imported_diagnostics(&l.panel, &contrast, &tags, &l.config.request)?;
                    let hash = report::config_hash(&l.data, &l.config.request)?;
                    let body = to_json_string(&eventlab_core::Artifact::new("diagnostics", hash, result))?;
                    let p = out.text("diagnostics.json", &body)?;
                    println!("wrote {}", p.display());
                }
                None => {
                    artifact(&out, "diagnostics.json", Operation::Diagnostics, &l)?;
                }
            }
        }
        Command::Bootstrap(args) => {
            let l = load(args, seed)?;
            let out = out()?;
            write_config(&out, &l)?;
            let v = artifact(&out, "bootstrap.json", Operation::Bootstrap, &l)?;
            let r = &v["result"];
            println!("estimate {} se {} ci [{}, {}]", r["estimate"], r["se"], r["ci_lower"], r["ci_upper"]);
        }
        Command::EventStudy(args) => {
            let l = load(args, seed)?;
            let out = out()?;
            write_config(&out, &l)?;
            artifact(&out, "event_study.json", Operation::EventStudy, &l)?;
            let curve = report::event_study_report(&l.panel, &l.config.request)?;
            out.csv("event_study.csv", |f| write_curve(f, &curve))?;
        }
        Command::Serve { port, host, static_dir } => {
            let addr: std::net::SocketAddr = format!("{host}:{port}").parse().context("listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            println!("serving on http://{addr}");
            rt.block_on(eventlab_server::serve(addr, static_dir.clone()))?;
        }
    }
    Ok(())
}

fn decompose_artifacts(out: &Output, l: &Loaded) -> anyhow::Result<()> {
    let v = artifact(out, "decompose.json", Operation::Decompose, l)?;
    let (_, run) = report::decompose_report(&l.panel, &l.config.request)?;
    export_weights(out, &l.panel, &run)?;
    let r = &v["result"];
    println!("{} = {} (weighted contrast {})", r["term"].as_str().unwrap_or(""), r["coefficient"], r["contrast_value"]);
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        // Unreadable inputs are bad input; output failures never reach here as core errors.
        Some(Error::Io(_)) => 2,
        Some(core) => core.exit_code() as u8,
        None if e.chain().any(|c| c.is::<std::num::ParseIntError>() || c.is::<std::num::ParseFloatError>()) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(err @ Error::Infeasible(_)) = e.chain().find_map(|c| c.downcast_ref::<Error>()) {
                if let Ok(s) = to_json_string(&ErrorBody::from_error(err)) {
                    eprintln!("{s}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
