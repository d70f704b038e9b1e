use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde::Serialize;

use scood_ot::assignment::{
    assignment_accuracy, cluster_class_rates, promote, DatasetState, HiddenTruth, LabeledSample, UnlabeledSample,
};
use scood_ot::config::{self, FIELDS};
use scood_ot::data::{self, generate_scood_toy, load_dataset, save_dataset, LabelRecord, ToyScoodConfig};
use scood_ot::learner::network::TENSOR_NAMES;
use scood_ot::learner::{train_run, Network, TrainConfig};
use scood_ot::numeric::argmax;
use scood_ot::scoring::{detection_metrics, ood_score, score_histogram, ScoreMethod, DEFAULT_FPR_LEVELS};
use scood_ot::transport::{
    energy_transport, entropic_objective, sinkhorn_solve, transport_marginals, EnergyVector, KernelExponent,
    LogitMatrix, RowKind, SinkhornOptions, Stabilization, TransportProblem, DEFAULT_EPSILON, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use scood_ot::{Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  usage error (unknown subcommand or flag, missing argument)
  2  unreadable or malformed input file, or unwritable output
  3  invalid configuration or input values (shape, range, non-finite)
  4  numerical failure (training divergence, Sinkhorn not converged)

Errors are printed to stderr as one line: error: code=<n> kind=<kind> <message>";

#[derive(Parser)]
#[command(name = "scood", version, about = "Energy-weighted optimal transport for semantically coherent OOD detection")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    /// Random seed; overrides any config value. Subcommands without
    /// randomness accept and ignore it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Train the network with alternating assignment and write logs, parameters and logits.
    Train(TrainArgs),
    /// Energy-weighted transport over OT-head logits, cluster rates and promotions.
    Assign(AssignArgs),
    /// Solve one entropic transport problem.
    Sinkhorn(SinkhornArgs),
    /// OOD scores from class logits.
    Score(ScoreArgs),
    /// Detection metrics from ID and OOD scores.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Dataset preset.
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Flat key = value file; flags override its values, which override the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

/// One optional flag per configuration key, generated from the field table
/// so that help text, defaults and symbols stay in one place.
struct Overrides(Vec<(&'static str, String)>);

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl Args for Overrides {
    fn augment_args(cmd: Command) -> Command {
        let defaults = TrainConfig::default();
        FIELDS.iter().filter(|f| f.key != "seed").fold(cmd, |cmd, f| {
            let default = config::get(&defaults, f.key).expect("known key");
            let symbol = if f.symbol == "-" { "no paper symbol" } else { f.symbol };
            cmd.arg(
                clap::Arg::new(f.key)
                    .long(flag_name(f.key))
                    .value_name("VALUE")
                    .help(format!("{} [{symbol}] (default: {default})", f.help)),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut out = Vec::new();
        for f in FIELDS.iter().filter(|f| f.key != "seed") {
            if let Some(v) = m.get_one::<String>(f.key) {
                out.push((f.key, v.clone()));
            }
        }
        Ok(Overrides(out))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

#[derive(Args)]
struct AssignArgs {
    /// OT-head logits, dense CSV with K rows and one column per sample in label-file order.
    #[arg(long)]
    logits: PathBuf,
    /// Label file: id,label-or-U[,hidden truth].
    #[arg(long)]
    labels: PathBuf,
    /// Promotion threshold on the dominant class rate [τ].
    #[arg(long, default_value_t = scood_ot::assignment::DEFAULT_TAU)]
    tau: f64,
    /// Entropic regularization [ε].
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Expected number of clusters [K]; must equal the logit row count when given.
    #[arg(long)]
    k: Option<usize>,
    /// Number of ID classes [M]; defaults to one more than the largest label or truth.
    #[arg(long)]
    classes: Option<usize>,
    /// Sinkhorn marginal L1 tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Sinkhorn iteration limit.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Output directory for clusters.csv and promotions.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SinkhornArgs {
    /// Cost matrix: dense rows, or `k,n,value` triplets under that header.
    #[arg(long)]
    cost: PathBuf,
    /// Cluster marginal [α], single column; uniform if omitted.
    #[arg(long, conflicts_with = "energy")]
    alpha: Option<PathBuf>,
    /// Sample marginal [β], single column; uniform if omitted.
    #[arg(long, conflicts_with = "energy")]
    beta: Option<PathBuf>,
    /// Raw per-sample energies [e]; gives α uniform and β the normalized shifted energies.
    #[arg(long)]
    energy: Option<PathBuf>,
    /// Entropic regularization [ε].
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Marginal L1 tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Iteration limit.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Kernel exponent: inverse_epsilon (C^(1/ε)) or epsilon (C^ε).
    #[arg(long, default_value = "inverse_epsilon")]
    exponent: String,
    /// Output file for the coupling Q as dense CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Class logits, dense CSV with M rows and one column per sample.
    #[arg(long)]
    logits: PathBuf,
    /// msp, energy or tenergy.
    #[arg(long, default_value = "tenergy")]
    method: String,
    /// T-energy temperature [T]; ignored by msp and energy.
    #[arg(long, default_value_t = scood_ot::scoring::DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Single-column true labels; when given, rows become score,prediction,truth.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output CSV; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// ID scores as score,prediction,truth rows.
    #[arg(long)]
    id: PathBuf,
    /// OOD scores, single column.
    #[arg(long)]
    ood: PathBuf,
    /// Metrics JSON; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write score histograms of both sides as CSV.
    #[arg(long)]
    hist: Option<PathBuf>,
    /// Histogram bin count.
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: code={} kind={} {msg}", e.exit_code(), e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Gen(a) => gen(a, cli.seed),
        Cmd::Train(a) => train(a, cli.seed),
        Cmd::Assign(a) => assign(a),
        Cmd::Sinkhorn(a) => sinkhorn(a),
        Cmd::Score(a) => score(a),
        Cmd::Eval(a) => eval(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen(a: GenArgs, seed: Option<u64>) -> Result<()> {
    let cfg = ToyScoodConfig::preset(&a.preset, seed.unwrap_or(0))?;
    let data = generate_scood_toy(&cfg)?;
    create_dir(&a.out)?;
    save_dataset(&a.out, &data, &cfg)?;
    println!(
        "wrote {}: {} labeled, {} unlabeled, {} test ID, {} test OOD",
        a.out.display(),
        data.state.base_labeled().len(),
        data.state.unlabeled().len(),
        data.test.id_labels.len(),
        data.test.ood_features.nrows()
    );
    Ok(())
}

#[derive(Serialize)]
struct TensorEntry {
    name: &'static str,
    file: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize)]
struct ParamsManifest {
    shape: scood_ot::learner::NetworkShape,
    tensors: Vec<TensorEntry>,
}

fn save_params(dir: &Path, net: &Network) -> Result<()> {
    create_dir(dir)?;
    let mut tensors = Vec::with_capacity(TENSOR_NAMES.len());
    for ((name, values), (rows, cols)) in TENSOR_NAMES.iter().zip(net.tensors()).zip(net.tensor_shapes()) {
        let file = format!("{name}.csv");
        let m = Array2::from_shape_vec((rows, cols), values.to_vec()).expect("tensor shape");
        data::save_matrix(dir.join(&file), &m)?;
        tensors.push(TensorEntry { name, file, rows, cols });
    }
    let manifest = ParamsManifest { shape: net.shape(), tensors };
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

/// Per-sample logits as a `rows × samples` matrix.
fn transposed(per_sample: &Array2<f64>) -> Array2<f64> {
    per_sample.t().as_standard_layout().into_owned()
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => config::load(path)?,
        None => TrainConfig::default(),
    };
    for (key, value) in &a.overrides.0 {
        config::set(&mut cfg, key, value).map_err(|e| Error::invalid(format!("--{}: {e}", flag_name(key))))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dataset = load_dataset(&a.data)?;
    cfg.validate(dataset.state.num_classes())?;
    create_dir(&a.out)?;
    write_text(&a.out.join("config.txt"), &config::render(&cfg))?;

    let outcome = train_run(&cfg, dataset.state.clone(), &dataset.test)?;
    let mut log = String::new();
    for record in &outcome.log {
        log.push_str(&serde_json::to_string(record)?);
        log.push('\n');
    }
    write_text(&a.out.join("epochs.jsonl"), &log)?;
    save_params(&a.out.join("params"), &outcome.network)?;

    // Training logits in sample-id order, matching labels.csv of the dataset.
    let state = &dataset.state;
    let mut by_id: Vec<(usize, &[f64])> = state
        .base_labeled()
        .iter()
        .map(|s| (s.id, s.features.as_slice()))
        .chain(state.unlabeled().iter().map(|s| (s.id, s.features.as_slice())))
        .collect();
    by_id.sort_by_key(|(id, _)| *id);
    let mut features = Array2::zeros((by_id.len(), state.dim()));
    for (mut row, (_, f)) in features.rows_mut().into_iter().zip(&by_id) {
        row.assign(&Array1::from(f.to_vec()));
    }
    let net = &outcome.network;
    data::save_matrix(a.out.join("ot_logits.csv"), &transposed(&net.forward(&features)?.logits_ot))?;
    let test = &dataset.test;
    data::save_matrix(
        a.out.join("test_id_logits.csv"),
        &transposed(&net.forward(&test.id_features)?.logits_cls),
    )?;
    data::save_matrix(
        a.out.join("test_ood_logits.csv"),
        &transposed(&net.forward(&test.ood_features)?.logits_cls),
    )?;
    let labels = Array2::from_shape_fn((test.id_labels.len(), 1), |(i, _)| test.id_labels[i] as f64);
    data::save_matrix(a.out.join("test_id_labels.csv"), &labels)?;

    let last = outcome.log.last().expect("epochs >= 1");
    let promoted = last.assignment.as_ref().map_or(0, |s| s.promotions);
    println!(
        "epochs={} promotions={promoted} auroc={:.6} fpr_at_tpr95={:.6} acc={:.6}",
        outcome.log.len(),
        last.test.auroc,
        last.test.fpr_at_tpr95,
        last.test.acc
    );
    Ok(())
}

fn infer_classes(records: &[LabelRecord]) -> usize {
    records
        .iter()
        .flat_map(|r| {
            let truth = match r.truth {
                Some(HiddenTruth::Id(c)) => Some(c),
                _ => None,
            };
            r.label.into_iter().chain(truth)
        })
        .max()
        .map_or(1, |m| m + 1)
}

fn assign(a: AssignArgs) -> Result<()> {
    let logits = LogitMatrix::new(data::load_matrix(&a.logits)?, RowKind::Cluster)?;
    let records = data::read_labels(&a.labels)?;
    if let Some(k) = a.k {
        if k != logits.rows() {
            return Err(Error::Shape {
                expected: format!("{k} logit rows (--k)"),
                got: logits.rows().to_string(),
            });
        }
    }
    if records.len() != logits.samples() {
        return Err(Error::Shape {
            expected: format!("{} logit columns, one per label row", records.len()),
            got: logits.samples().to_string(),
        });
    }
    let classes = a.classes.unwrap_or_else(|| infer_classes(&records));
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for r in &records {
        match r.label {
            Some(label) => labeled.push(LabeledSample {
                id: r.id,
                features: Vec::new(),
                label,
            }),
            // Without a truth column every unlabeled sample is audited as OOD;
            // the accuracy line is only printed when truth is present.
            None => unlabeled.push(UnlabeledSample::new(r.id, Vec::new(), r.truth.unwrap_or(HiddenTruth::Ood))),
        }
    }
    let state = DatasetState::new(labeled, unlabeled, classes)?;

    let opts = SinkhornOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        exponent: KernelExponent::InverseEpsilon,
        stabilization: Stabilization::Auto,
    };
    let et = energy_transport(&logits, a.epsilon, &opts)?;
    // Logit columns follow the label file; the state orders labeled samples first.
    let cluster_of: HashMap<usize, usize> = records.iter().map(|r| r.id).zip(et.clusters.iter().copied()).collect();
    let clusters: Vec<usize> = state.training_ids().iter().map(|id| cluster_of[id]).collect();
    let mut reports = cluster_class_rates(&clusters, logits.rows(), &state)?;
    let next = promote(&mut reports, a.tau, &state)?;

    create_dir(&a.out)?;
    let mut text = String::from("cluster,size,dominant_class,dominant_rate,promoted");
    for y in 0..classes {
        text.push_str(&format!(",rate_{y}"));
    }
    text.push('\n');
    for r in &reports {
        text.push_str(&format!(
            "{},{},{},{},{}",
            r.cluster,
            r.members.len(),
            r.dominant_class,
            r.dominant_rate,
            r.promoted
        ));
        for rate in &r.rates {
            text.push_str(&format!(",{rate}"));
        }
        text.push('\n');
    }
    write_text(&a.out.join("clusters.csv"), &text)?;
    let mut text = String::from("id,pseudo_label,cluster\n");
    for p in next.promotions() {
        text.push_str(&format!("{},{},{}\n", p.id, p.pseudo_label, p.cluster));
    }
    write_text(&a.out.join("promotions.csv"), &text)?;

    let sk = &et.assignment;
    println!(
        "sinkhorn iterations={} converged={} row_error={:e} col_error={:e}",
        sk.iterations_used, sk.converged, sk.row_marginal_error, sk.col_marginal_error
    );
    let promoted_clusters = reports.iter().filter(|r| r.promoted).count();
    println!(
        "clusters={} promoted_clusters={promoted_clusters} promotions={}",
        reports.len(),
        next.promotions().len()
    );
    if records.iter().any(|r| r.label.is_none() && r.truth.is_some()) {
        let audit = assignment_accuracy(&next);
        println!("accuracy={} correct={} total={}", audit.accuracy, audit.correct, audit.total);
    }
    Ok(())
}

fn sinkhorn(a: SinkhornArgs) -> Result<()> {
    let cost = data::load_cost_matrix(&a.cost)?;
    let (k, n) = cost.dim();
    let exponent: KernelExponent = a.exponent.parse()?;
    let (alpha, beta) = match &a.energy {
        Some(path) => {
            let energy = EnergyVector::from_raw(data::load_vector(path)?)?;
            transport_marginals(&energy, k)?
        }
        None => {
            let load = |p: &Option<PathBuf>, len: usize| -> Result<Array1<f64>> {
                match p {
                    Some(p) => Ok(Array1::from(data::load_vector(p)?)),
                    None => Ok(Array1::from_elem(len, 1.0 / len as f64)),
                }
            };
            (load(&a.alpha, k)?, load(&a.beta, n)?)
        }
    };
    let problem = TransportProblem::new(cost, alpha, beta, a.epsilon)?;
    let opts = SinkhornOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        exponent,
        stabilization: Stabilization::Auto,
    };
    let q = sinkhorn_solve(&problem, &opts)?;
    data::save_matrix(&a.out, &q.q)?;
    let objective = entropic_objective(&q.q, problem.cost(), a.epsilon);
    println!(
        "converged={} iterations={} row_error={:e} col_error={:e} log_domain={} objective={objective}",
        q.converged, q.iterations_used, q.row_marginal_error, q.col_marginal_error, q.log_domain
    );
    if !q.converged {
        return Err(Error::Numerical(format!(
            "Sinkhorn did not reach tolerance {} within {} iterations",
            a.tol, a.max_iter
        )));
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let method: ScoreMethod = a.method.parse()?;
    let values = data::load_matrix(&a.logits)?;
    let logits = LogitMatrix::new(values, RowKind::Class)?;
    let scores = ood_score(&logits, method, a.temperature)?;
    let mut text = String::new();
    match &a.truth {
        None => {
            for s in &scores {
                text.push_str(&format!("{s}\n"));
            }
        }
        Some(path) => {
            let truth = data::load_vector(path)?;
            if truth.len() != scores.len() {
                return Err(Error::Shape {
                    expected: format!("{} labels", scores.len()),
                    got: truth.len().to_string(),
                });
            }
            for (i, (s, t)) in scores.iter().zip(&truth).enumerate() {
                let column: Vec<f64> = logits.values().column(i).to_vec();
                text.push_str(&format!("{s},{},{}\n", argmax(&column), class_index(*t, path, i)?));
            }
        }
    }
    match &a.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn class_index(v: f64, path: &Path, row: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            row: row + 1,
            col: 0,
            msg: format!("expected a class index, found {v}"),
        })
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let id = data::load_matrix(&a.id)?;
    if id.ncols() != 3 {
        return Err(Error::Parse {
            path: a.id.clone(),
            row: 1,
            col: id.ncols().min(3) + 1,
            msg: format!("expected score,prediction,truth columns, found {}", id.ncols()),
        });
    }
    let id_scores: Vec<f64> = id.column(0).to_vec();
    let mut predictions = Vec::with_capacity(id.nrows());
    let mut truth = Vec::with_capacity(id.nrows());
    for (i, row) in id.rows().into_iter().enumerate() {
        predictions.push(class_index(row[1], &a.id, i)?);
        truth.push(class_index(row[2], &a.id, i)?);
    }
    let ood_scores = data::load_vector(&a.ood)?;
    let report = detection_metrics(&id_scores, &ood_scores, &predictions, &truth, &DEFAULT_FPR_LEVELS)?;
    for c in report.ccr_at_fpr.iter().filter(|c| c.unresolved) {
        eprintln!(
            "warning: {} OOD samples cannot resolve FPR {}; CCR at that level is coarse",
            ood_scores.len(),
            c.fpr
        );
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => write_text(path, &(json + "\n"))?,
        None => println!("{json}"),
    }
    if let Some(path) = &a.hist {
        let h = score_histogram(&id_scores, &ood_scores, a.bins);
        let mut text = String::from("bin_lo,bin_hi,id_count,ood_count\n");
        for (b, (ic, oc)) in h.id_counts.iter().zip(&h.ood_counts).enumerate() {
            text.push_str(&format!("{},{},{ic},{oc}\n", h.edges[b], h.edges[b + 1]));
        }
        write_text(path, &text)?;
    }
    Ok(())
}
