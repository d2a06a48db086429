use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use parsnets::data::{generate_synthetic, load_manifest, write_manifest, Dataset, SynthConfig, ZslSplits};
use parsnets::eval::evaluate_all;
use parsnets::geometry::{
    check_concat_subadditivity, check_multi_block_equality, column_space_complement, geometry_objective,
    subspace_aligned_model, verify_global_minimum_with, Certification, GeometryTolerances,
};
use parsnets::indicators::{default_latent_dim, train_encoder, EncoderTrainConfig, IndicatorEncoder};
use parsnets::kv::{self, KeyValues};
use parsnets::model::{Activation, CompositeModel, InputSpace, SemanticPredictor};
use parsnets::numerics::{orthonormalize_columns, symmetric_eigenvalues};
use parsnets::rng::{derive_seed, CounterRng};
use parsnets::solver::{
    kernel_matrix, model_inputs, solve_dual, train_joint, train_joint_traced, training_log_csv, DualModel,
    DualSolution, GatedSamples, SolverConfig,
};
use parsnets::{Error, Matrix, Result};

use crate::config::Settings;

const RUN_FILE: &str = "run.kv";
const EQUALITY_GAP: f64 = 1e-8;

pub(crate) struct Context {
    settings: Settings,
    quiet: bool,
    out: PathBuf,
    seed: u64,
}

impl Context {
    pub(crate) fn new(settings: Settings, quiet: bool) -> Result<Self> {
        let out = settings.path("out").unwrap_or_else(|| PathBuf::from("."));
        let seed = settings.get("seed")?;
        Ok(Self {
            settings,
            quiet,
            out,
            seed,
        })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.settings.get(key)
    }

    fn say(&self, line: impl std::fmt::Display) {
        if !self.quiet {
            // a closed pipe on stdout is not an error worth failing over
            let _ = writeln!(std::io::stdout(), "{line}");
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    fn checkpoint_dir(&self) -> PathBuf {
        self.settings.path("checkpoint").unwrap_or_else(|| self.out.clone())
    }

    fn load_splits(&self) -> Result<ZslSplits> {
        let path = self.settings.path("manifest").ok_or_else(|| {
            validation("manifest", "no manifest given; pass --manifest <path> or set `manifest` in --config")
        })?;
        if !path.is_file() {
            return Err(validation(&path.display().to_string(), "manifest not found"));
        }
        load_manifest(&path)
    }

    fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            seen_classes: self.get("seen_classes")?,
            unseen_classes: self.get("unseen_classes")?,
            samples_per_class: self.get("samples_per_class")?,
            feature_dim: self.get("feature_dim")?,
            subspace_rank: self.get("subspace_rank")?,
            semantic_dim: self.get("semantic_dim")?,
            noise_sigma: self.get("noise_sigma")?,
            orthogonal: self.get("orthogonal")?,
            seed: derive_seed(self.seed, "synth"),
        })
    }

    fn solver_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            c: self.get("c")?,
            epsilon: self.get("epsilon")?,
            lambda_geo: self.get("lambda_geo")?,
            lambda_orth: self.get("lambda_orth")?,
            learning_rate: self.get("learning_rate")?,
            epochs: self.get("epochs")?,
            seed: derive_seed(self.seed, "solver"),
            dual_tolerance: self.get("dual_tolerance")?,
            dual_max_passes: self.get("dual_max_passes")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// K and k_active, checked against each other.
    fn network_counts(&self) -> Result<(usize, usize)> {
        let k: usize = self.get("k")?;
        let k_active: usize = self.get("k_active")?;
        if k == 0 || k_active == 0 || k_active > k {
            return Err(Error::InvalidInput(format!(
                "need 1 <= k_active <= k, got k_active = {k_active}, k = {k}"
            )));
        }
        Ok((k, k_active))
    }

    fn train_encoder(&self, train: &Dataset, k: usize, k_active: usize) -> Result<IndicatorEncoder> {
        let latent: usize = self.get("latent_dim")?;
        let h = if latent == 0 { default_latent_dim(k) } else { latent };
        let cfg = EncoderTrainConfig {
            epochs: self.get("encoder_epochs")?,
            learning_rate: self.get("encoder_learning_rate")?,
            batch_size: self.get("encoder_batch_size")?,
            seed: derive_seed(self.seed, "encoder"),
            tolerance: self.get("encoder_tolerance")?,
        };
        train_encoder(train.features(), h, k, k_active, &cfg)
    }

    fn initial_model(&self, splits: &ZslSplits, input_dim: usize, k: usize, k_active: usize) -> Result<CompositeModel> {
        let activation: Activation = self.get("activation")?;
        let input_space: InputSpace = self.get("input_space")?;
        Ok(CompositeModel::random_init(
            k,
            input_dim,
            splits.space.mean_seen_descriptor(),
            k_active,
            activation,
            derive_seed(self.seed, "model"),
        )?
        .with_input_space(input_space))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn validation(file: &str, message: &str) -> Error {
    Error::Validation {
        file: file.to_string(),
        row: None,
        message: message.to_string(),
    }
}

pub(crate) fn gen_synth(ctx: &Context) -> Result<()> {
    let splits = generate_synthetic(&ctx.synth_config()?)?;
    let manifest = write_manifest(&ctx.out, &splits)?;
    ctx.say(format_args!(
        "wrote {} ({} train, {} test_seen, {} test_unseen samples)",
        manifest.display(),
        splits.train.len(),
        splits.test_seen.len(),
        splits.test_unseen.len()
    ));
    Ok(())
}

pub(crate) fn train(ctx: &Context) -> Result<()> {
    let splits = ctx.load_splits()?;
    let (k, k_active) = ctx.network_counts()?;
    let input_space: InputSpace = ctx.get("input_space")?;
    let path: String = ctx.get("path")?;
    if path != "joint" && path != "dual" {
        return Err(Error::InvalidInput(format!("unknown path `{path}` (joint|dual)")));
    }
    let cfg = ctx.solver_config()?;

    let enc = ctx.train_encoder(&splits.train, k, k_active)?;
    enc.save(&ctx.out.join("encoder"))?;
    let samples = GatedSamples::from_dataset(&splits.train, &splits.space, &enc, k_active, input_space)?;

    if path == "joint" {
        let init = ctx.initial_model(&splits, samples.input_dim(), k, k_active)?;
        let outcome = train_joint_traced(&samples, &init, &cfg)?;
        outcome.model.save(&ctx.out.join("model"))?;
        ctx.write("training_log.csv", &training_log_csv(&outcome.log))?;
        ctx.say(format_args!(
            "joint training: kept epoch {} of {}, J {} -> {}",
            outcome.best_epoch,
            cfg.epochs,
            outcome.initial_geometry(),
            outcome.best_geometry()
        ));
    } else {
        let solution = solve_dual(&samples, &cfg)?;
        solution.save(&ctx.out.join("dual"))?;
        ctx.say(format_args!(
            "dual solve: {} support vectors, objective {}, converged {}",
            solution.support_indices.len(),
            solution.objective.iter().sum::<f64>(),
            solution.converged
        ));
    }
    ctx.write(
        RUN_FILE,
        &kv::render(&[
            ("path", path),
            ("input_space", input_space.to_string()),
            ("k", k.to_string()),
            ("k_active", k_active.to_string()),
        ]),
    )?;
    ctx.say(format_args!("checkpoint written to {}", ctx.out.display()));
    Ok(())
}

/// Rebuilds the predictor saved by `train` in `dir`.
fn load_checkpoint(dir: &Path, splits: &ZslSplits) -> Result<(Box<dyn SemanticPredictor>, IndicatorEncoder)> {
    let run = KeyValues::read(&dir.join(RUN_FILE))?;
    let corrupt = |message: String| Error::Format {
        path: dir.join(RUN_FILE).display().to_string(),
        offset: 0,
        message,
    };
    let enc = IndicatorEncoder::load(&dir.join("encoder"))?;
    let input_space: InputSpace = run.require_parsed("input_space").map_err(|e| corrupt(e.to_string()))?;
    let k_active: usize = run.require_parsed("k_active").map_err(|e| corrupt(e.to_string()))?;
    match run.require("path").map_err(|e| corrupt(e.to_string()))? {
        "joint" => {
            let model = CompositeModel::load(&dir.join("model"))?;
            Ok((Box::new(model), enc))
        }
        "dual" => {
            let solution = DualSolution::load(&dir.join("dual"))?;
            let train = GatedSamples::from_dataset(&splits.train, &splits.space, &enc, k_active, input_space)?;
            if solution.alpha.rows() != train.len() {
                return Err(corrupt(format!(
                    "dual solution has {} points but the training split has {}",
                    solution.alpha.rows(),
                    train.len()
                )));
            }
            let model = DualModel {
                solution,
                train,
                input_space,
                k_active,
            };
            Ok((Box::new(model), enc))
        }
        other => Err(corrupt(format!("unknown path `{other}`"))),
    }
}

pub(crate) fn eval(ctx: &Context) -> Result<()> {
    let splits = ctx.load_splits()?;
    let (model, enc) = load_checkpoint(&ctx.checkpoint_dir(), &splits)?;
    let report = evaluate_all(model.as_ref(), &splits.test_seen, &splits.test_unseen, &splits.space, &enc)?;
    let csv = report.to_csv();
    let path = ctx.write("eval_report.csv", &csv)?;
    for line in csv.lines().skip(1).take_while(|l| !l.starts_with("class,")) {
        ctx.say(line);
    }
    ctx.say(format_args!("report written to {}", path.display()));
    Ok(())
}

struct CheckRow {
    name: &'static str,
    status: &'static str,
    detail: String,
}

fn random_matrix(rng: &mut CounterRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}

fn between(rng: &mut CounterRng, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

fn concat_sweep(seed: u64, pairs: usize) -> Result<CheckRow> {
    let mut rng = CounterRng::new(seed, "verify/concat");
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let rows = between(&mut rng, 2, 8);
        let (mc, nc) = (between(&mut rng, 1, 6), between(&mut rng, 1, 6));
        let m = random_matrix(&mut rng, rows, mc);
        let n = random_matrix(&mut rng, rows, nc);
        let c = check_concat_subadditivity(&m, &n)?;
        worst = worst.max(c.lhs - c.rhs);
        if !c.holds {
            failures += 1;
        }
    }
    Ok(CheckRow {
        name: "concat_subadditivity",
        status: if failures == 0 { "pass" } else { "fail" },
        detail: format!("{} of {pairs} pairs hold; max lhs-rhs {worst:e}", pairs - failures),
    })
}

fn equality_sweep(seed: u64, pairs: usize) -> Result<CheckRow> {
    let mut rng = CounterRng::new(seed, "verify/equality");
    let mut failures = 0;
    let mut worst = 0.0_f64;
    let mut record = |gap: f64, orthogonal: bool| {
        worst = worst.max(gap.abs());
        if !orthogonal || gap.abs() > EQUALITY_GAP {
            failures += 1;
        }
    };
    for _ in 0..pairs {
        let rows = between(&mut rng, 2, 8);
        let cols = between(&mut rng, 1, rows - 1);
        let m = random_matrix(&mut rng, rows, cols);
        let basis = column_space_complement(&m)?
            .ok_or_else(|| Error::NumericalFailure("a thin matrix spans the whole space".into()))?;
        let width = between(&mut rng, 1, 6);
        let coeffs = random_matrix(&mut rng, basis.cols(), width);
        let n = basis.matmul(&coeffs)?;
        let c = check_multi_block_equality(&[&m, &n])?;
        record(c.gap, c.column_orthogonal);
    }
    let multi = (pairs / 4).max(1);
    for _ in 0..multi {
        let rows = between(&mut rng, 4, 8);
        let frame = orthonormalize_columns(&random_matrix(&mut rng, rows, rows))?;
        let parts = between(&mut rng, 3, 4.min(rows));
        // split the frame's columns into `parts` non-empty runs
        let mut cuts: Vec<usize> = (1..rows).collect();
        rng.shuffle(&mut cuts);
        let mut cuts = cuts[..parts - 1].to_vec();
        cuts.sort_unstable();
        let bounds: Vec<usize> = std::iter::once(0).chain(cuts).chain(std::iter::once(rows)).collect();
        let blocks = bounds
            .windows(2)
            .map(|w| {
                let cols: Vec<usize> = (w[0]..w[1]).collect();
                let width = between(&mut rng, 1, 4);
                let coeffs = random_matrix(&mut rng, cols.len(), width);
                frame.select_columns(&cols)?.matmul(&coeffs)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Matrix> = blocks.iter().collect();
        let c = check_multi_block_equality(&refs)?;
        record(c.gap, c.column_orthogonal);
    }
    let total = pairs + multi;
    Ok(CheckRow {
        name: "orthogonal_equality",
        status: if failures == 0 { "pass" } else { "fail" },
        detail: format!(
            "{} of {total} constructions ({multi} with 3+ blocks) within {EQUALITY_GAP:e}; max gap {worst:e}",
            total - failures
        ),
    })
}

fn union(splits: &ZslSplits) -> Result<Dataset> {
    let parts = [&splits.train, &splits.test_seen, &splits.test_unseen];
    let rows: Vec<Vec<f64>> = parts
        .iter()
        .flat_map(|ds| (0..ds.len()).map(move |i| ds.sample(i).to_vec()))
        .collect();
    let labels: Vec<usize> = parts.iter().flat_map(|ds| ds.labels().iter().copied()).collect();
    Dataset::new(Matrix::from_rows(&rows)?, labels, splits.space.class_count())
}

fn kernel_check(ctx: &Context, splits: &ZslSplits) -> Result<CheckRow> {
    let (k, k_active) = ctx.network_counts()?;
    let n = splits.train.len().min(200);
    let ds = splits.train.subset(&(0..n).collect::<Vec<_>>())?;
    let enc = IndicatorEncoder::random(default_latent_dim(k), ds.dim(), k, k_active, derive_seed(ctx.seed, "verify/kernel"))?;
    let input_space: InputSpace = ctx.get("input_space")?;
    let samples = GatedSamples::from_dataset(&ds, &splits.space, &enc, k_active, input_space)?;
    let gram = kernel_matrix(&samples)?;
    let symmetric = (0..n).all(|i| (0..i).all(|j| gram.get(i, j) == gram.get(j, i)));
    let eig = symmetric_eigenvalues(&gram)?;
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    let psd = lo >= -1e-8 * hi.abs().max(1.0);
    debug_assert_eq!(model_inputs(&enc, input_space, ds.features())?.rows(), n);
    Ok(CheckRow {
        name: "kernel_psd",
        status: if psd && symmetric { "pass" } else { "fail" },
        detail: format!("N = {n}; min eigenvalue {lo:e}; max {hi:e}; symmetric {symmetric}"),
    })
}

pub(crate) fn verify(ctx: &Context) -> Result<()> {
    let tolerance: f64 = ctx.get("tolerance")?;
    if !(tolerance > 0.0) || !tolerance.is_finite() {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive and finite, got {tolerance}; a zero tolerance cannot certify floating-point results"
        )));
    }
    let pairs: usize = ctx.get("verify_pairs")?;
    let orth_pairs: usize = ctx.get("verify_orthogonal_pairs")?;
    let seed = derive_seed(ctx.seed, "verify");

    let splits = if ctx.settings.path("manifest").is_some() {
        ctx.load_splits()?
    } else {
        generate_synthetic(&ctx.synth_config()?)?
    };

    let mut rows = vec![concat_sweep(seed, pairs)?, equality_sweep(seed, orth_pairs)?];

    let all = union(&splits)?;
    let (k, _) = ctx.network_counts()?;
    let k_eff = k.min(all.present_classes().len());
    let model = subspace_aligned_model(&all, k_eff, splits.space.dim())?;
    let tol = GeometryTolerances {
        objective: tolerance,
        ..GeometryTolerances::default()
    };
    let check = verify_global_minimum_with(&all, &model, &tol)?;
    let (status, why) = match &check.status {
        Certification::Certified => ("pass", String::new()),
        Certification::NotApplicable(why) => ("not_applicable", format!("; {why}")),
        Certification::Violated => ("fail", String::new()),
    };
    rows.push(CheckRow {
        name: "global_minimum",
        status,
        detail: format!(
            "J = {:e} with {k_eff} aligned networks; tolerance {tolerance:e}{why}",
            check.objective
        ),
    });
    ctx.write("geometry_report.csv", &geometry_objective(&model, &all)?.to_csv())?;

    rows.push(kernel_check(ctx, &splits)?);

    let mut csv = String::from("check,status,detail\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.name, r.status, r.detail.replace(',', ";"));
    }
    ctx.write("verify.csv", &csv)?;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &rows {
        ctx.say(format_args!("{:<width$}  {:<14}  {}", r.name, r.status, r.detail));
    }

    let failed: Vec<&str> = rows.iter().filter(|r| r.status == "fail").map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::NumericalFailure(format!("checks failed: {}", failed.join(", "))))
    }
}

pub(crate) fn sweep_k(ctx: &Context) -> Result<()> {
    let ks: Vec<usize> = ctx.settings.list("k_values")?;
    let k: usize = ctx.get("k")?;
    if ks.is_empty() {
        return Err(Error::InvalidInput("k_values is empty".into()));
    }
    if let Some(bad) = ks.iter().find(|&&v| v == 0 || v > k) {
        return Err(Error::InvalidInput(format!("k = {bad} is outside 1..={k} (K)")));
    }
    let splits = ctx.load_splits()?;
    let input_space: InputSpace = ctx.get("input_space")?;
    let cfg = ctx.solver_config()?;
    let k_max = *ks.iter().max().expect("non-empty");
    let enc = ctx.train_encoder(&splits.train, k, k_max)?;

    let mut csv =
        String::from("k,zsl_accuracy,unseen_accuracy,seen_accuracy,harmonic_mean,min_active,max_active,mean_forward_ops\n");
    let mut accuracies = Vec::with_capacity(ks.len());
    for &k_active in &ks {
        let samples = GatedSamples::from_dataset(&splits.train, &splits.space, &enc, k_active, input_space)?;
        let init = ctx.initial_model(&splits, samples.input_dim(), k, k_active)?;
        let model = train_joint(&samples, &init, &cfg)?;
        let report = evaluate_all(&model, &splits.test_seen, &splits.test_unseen, &splits.space, &enc)?;

        let (mut min_active, mut max_active, mut ops, mut count) = (usize::MAX, 0, 0usize, 0usize);
        for ds in [&splits.test_seen, &splits.test_unseen] {
            let inputs = model_inputs(&enc, input_space, ds.features())?;
            for i in 0..ds.len() {
                let gates = enc.compute_indicators(ds.sample(i), k_active)?;
                min_active = min_active.min(gates.active_count());
                max_active = max_active.max(gates.active_count());
                ops += model.forward_counted(inputs.row(i), &gates)?.1.multiply_adds;
                count += 1;
            }
        }
        let zsl = report.zsl_accuracy.unwrap_or(0.0);
        let _ = writeln!(
            csv,
            "{k_active},{zsl},{},{},{},{min_active},{max_active},{}",
            report.unseen_accuracy,
            report.seen_accuracy,
            report.harmonic_mean,
            ops as f64 / count as f64
        );
        ctx.say(format_args!(
            "k = {k_active:>4}: zsl {zsl:.4}  U {:.4}  S {:.4}  H {:.4}",
            report.unseen_accuracy, report.seen_accuracy, report.harmonic_mean
        ));
        accuracies.push((k_active, zsl));
    }
    let sparsest = accuracies.iter().min_by_key(|(k, _)| *k).expect("non-empty");
    let densest = accuracies.iter().max_by_key(|(k, _)| *k).expect("non-empty");
    if densest.1 < sparsest.1 - 0.05 {
        log::warn!(
            "non-monotone sweep: zsl accuracy {:.4} at k = {} is more than 5 points below {:.4} at k = {}",
            densest.1,
            densest.0,
            sparsest.1,
            sparsest.0
        );
    }
    let path = ctx.write("sweep_k.csv", &csv)?;
    ctx.say(format_args!("sweep written to {}", path.display()));
    Ok(())
}

pub(crate) fn export_features(ctx: &Context) -> Result<()> {
    let splits = ctx.load_splits()?;
    let split: String = ctx.get("split")?;
    let ds = match split.as_str() {
        "train" => &splits.train,
        "test_seen" => &splits.test_seen,
        "test_unseen" => &splits.test_unseen,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown split `{other}` (train|test_seen|test_unseen)"
            )))
        }
    };
    let (model, enc) = load_checkpoint(&ctx.checkpoint_dir(), &splits)?;
    let inputs = model_inputs(&enc, model.input_space(), ds.features())?;
    let mut csv = String::from("id,label");
    for c in 0..splits.space.dim() {
        let _ = write!(csv, ",s{c}");
    }
    csv.push('\n');
    for i in 0..ds.len() {
        let gates = enc.compute_indicators(ds.sample(i), model.k_active())?;
        let y = model.predict_semantic(inputs.row(i), &gates)?;
        let _ = write!(csv, "{i},{}", ds.labels()[i]);
        for v in y {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let path = ctx.write(&format!("features_{split}.csv"), &csv)?;
    ctx.say(format_args!("{} rows written to {}", ds.len(), path.display()));
    Ok(())
}
