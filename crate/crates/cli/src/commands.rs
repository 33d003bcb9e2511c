//! Subcommand implementations and their config keys.

use std::path::Path;

use sloppy_core::curvature::{
    curvature_topk, empirical_fim, exact_hessian_small, fim, floor_spectrum, gauss_newton, kfac_blocks,
    logit_jacobian_gram, Caps, CurvatureKind,
};
use sloppy_core::data::{read_dataset_csv, write_dataset_csv, Dataset};
use sloppy_core::linalg::{sym_eigvals, SymMatrix};
use sloppy_core::net::{capture_correlations, read_checkpoint, write_checkpoint, Activation, Mlp};
use sloppy_core::pacbayes::{grid_rows_csv, trace_csv};
use sloppy_core::pipeline::{
    compute_bound, held_out_error, make_teacher_student, overlap_csv, overlap_table, run_sweep, sweep_csv,
    BoundMethod, BoundSettings, CurvatureSource, OverlapConfig, SweepConfig, TeacherStudentConfig,
};
use sloppy_core::sloppy::SpectrumReport;
use sloppy_core::train::{train_observed, Penalty, TrainConfig};
use sloppy_core::{rng, Error};

use crate::config::{key, required, Key, RunConfig};
use crate::CliError;

const SYNTH_KEYS: &[Key] = &[
    key("d", "200", "input dimension"),
    key("c", "0.1", "input eigenvalue decay rate"),
    key("ratio", "50", "b/c ratio of the input spectrum"),
    key("n_train", "50000", "training samples"),
    key("n_val", "10000", "validation samples"),
    required("teacher_hidden", "hidden width of the teacher"),
    key("classes", "10", "number of classes"),
];

const TRAIN_KEYS: &[Key] = &[
    required("train", "training dataset CSV"),
    key("val", "", "validation dataset CSV"),
    key("hidden", "32", "comma-separated hidden widths"),
    key("activation", "relu", "relu, leaky_relu, tanh or linear"),
    key("epochs", "20", "training epochs"),
    key("batch_size", "500", "minibatch size"),
    key("lr_start", "1e-3", "initial learning rate"),
    key("lr_end", "1e-5", "final learning rate of the cosine schedule"),
    key("init_seed", "", "initialization seed, default seed + 7"),
    key("checkpoint_every", "0", "write a checkpoint every this many epochs, 0 for none"),
    key("v2", "false", "follow with spring-force retraining towards the initialization"),
    key("v2_epochs", "20", "epochs of the retraining phase"),
];

const SPECTRUM_KEYS: &[Key] = &[
    required("checkpoint", "network checkpoint"),
    required("data", "dataset CSV"),
    key("rows", "0", "use the first rows of the dataset, 0 for all"),
    key(
        "quantities",
        "all",
        "comma list of input, activation, activation_grad, logit_jacobian, fim, empirical_fim, gauss_newton, hessian, kfac",
    ),
    key("normalize", "none", "none, or input to divide by the top input-correlation eigenvalue"),
    key("n", "0", "sample count for the effective dimension, 0 for the dataset size"),
    key("eps", "1", "prior precision for the effective dimension"),
    key("lanczos_k", "0", "top-k eigenvalues by Lanczos for the Fisher-type operators, 0 for dense"),
    key("hessian_max_p", "400", "largest p for the finite-difference Hessian"),
];

const BOUND_KEYS: &[Key] = &[
    required("checkpoint", "trained network checkpoint"),
    required("init", "initialization checkpoint (prior mean)"),
    required("train", "training dataset CSV"),
    key("fim_data", "", "dataset for the Fisher at initialization, default the training set"),
    key("val", "", "held-out dataset for the posterior error"),
    key("method", "1", "1, 2, 3, 4, diag, isotropic or numerical-1"),
    key("delta", "0.025", "confidence parameter"),
    key("samples", "150", "posterior draws for the final error estimate"),
    key("held_out_samples", "100", "posterior draws on the held-out set"),
    key("curvature", "kfac", "kfac or dense Gauss-Newton basis for methods 1 and numerical-1"),
    key("curvature_rows", "5000", "training rows for the curvature"),
    key("steps", "2000", "optimizer steps for methods 2, 3, 4 and diag"),
    key("lr_mean", "1e-4", "optimizer learning rate of the posterior mean"),
    key("lr_cov", "1e-2", "optimizer learning rate of the variances"),
    key("batch_size", "500", "optimizer minibatch"),
    key("cadence", "0", "curvature recomputation cadence of method 3, 0 for automatic"),
];

const OVERLAP_KEYS: &[Key] = &[
    required("init", "initialization checkpoint"),
    required("trained", "trained checkpoint"),
    key("v2", "", "checkpoint after spring-force retraining"),
    required("data", "dataset CSV for the Fisher"),
    key("rows", "2000", "use the first rows of the dataset, 0 for all"),
    key("ks", "", "comma list of subspace sizes, default 1%, 2% and 5% of p"),
    key("baseline_draws", "100", "random subspaces per size"),
];

const SWEEP_KEYS: &[Key] = &[
    key("d", "50", "input dimension"),
    key("ratio", "50", "b/c ratio of the input spectrum"),
    key("n_train", "500", "training samples"),
    key("n_val", "2000", "validation samples"),
    required("teacher_hidden", "hidden width of the teacher"),
    key("classes", "10", "number of classes"),
    key("decays", "0.001,0.01,0.1,0.5", "input decay rates"),
    key("widths", "10,20,100", "student hidden widths"),
    key("seeds", "0,1,2", "seeds"),
    key("activation", "relu", "student activation"),
    key("epochs", "1000", "training epochs"),
    key("batch_size", "100", "minibatch size"),
    key("lr_start", "1e-2", "initial learning rate"),
    key("lr_end", "1e-4", "final learning rate"),
];

pub fn keys(command: &str) -> &'static [Key] {
    match command {
        "synth" => SYNTH_KEYS,
        "train" => TRAIN_KEYS,
        "spectrum" => SPECTRUM_KEYS,
        "bound" => BOUND_KEYS,
        "overlap" => OVERLAP_KEYS,
        "sweep" => SWEEP_KEYS,
        _ => &[],
    }
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.command() {
        "synth" => synth(cfg),
        "train" => train(cfg),
        "spectrum" => spectrum(cfg),
        "bound" => bound(cfg),
        "overlap" => overlap(cfg),
        "sweep" => sweep(cfg),
        other => Err(CliError::Usage(format!("unknown subcommand {other}"))),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found")));
    }
    read_dataset_csv(path).map_err(|e| with_path(path, e))
}

fn load_net(path: &Path) -> Result<Mlp, CliError> {
    read_checkpoint(path).map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: Error) -> CliError {
    match e {
        Error::Io(io) => CliError::io(path, io),
        Error::Format { offset, msg } => CliError::Core(Error::Format { offset, msg: format!("{}: {msg}", path.display()) }),
        other => CliError::Core(other),
    }
}

fn head(data: Dataset, rows: usize) -> Result<Dataset, CliError> {
    if rows == 0 || rows >= data.n() {
        Ok(data)
    } else {
        Ok(data.split_at(rows)?.0)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let ts = make_teacher_student(&TeacherStudentConfig {
        d: cfg.parse("d")?,
        c: cfg.parse("c")?,
        ratio: cfg.parse("ratio")?,
        n_train: cfg.parse("n_train")?,
        n_val: cfg.parse("n_val")?,
        teacher_hidden: cfg.parse("teacher_hidden")?,
        classes: cfg.parse("classes")?,
        seed: cfg.seed()?,
    })?;
    let out = cfg.out_dir();
    let train_path = out.join("train.csv");
    write_dataset_csv(&ts.train, &train_path)?;
    write_dataset_csv(&ts.val, &out.join("val.csv"))?;
    write_checkpoint(&ts.teacher, &out.join("teacher.ckpt"))?;
    let bytes = std::fs::read(&train_path).map_err(|e| CliError::io(&train_path, e))?;
    println!(
        "wrote {} train and {} val samples to {} (train.csv sha256 {})",
        ts.train.n(),
        ts.val.n(),
        out.display(),
        sha256_hex(&bytes)
    );
    Ok(())
}

fn train_config(cfg: &RunConfig, epochs_key: &str) -> Result<TrainConfig, CliError> {
    Ok(TrainConfig {
        epochs: cfg.parse(epochs_key)?,
        batch_size: cfg.parse("batch_size")?,
        lr_start: cfg.parse("lr_start")?,
        lr_end: cfg.parse("lr_end")?,
        seed: cfg.seed()?,
        ..Default::default()
    })
}

fn activation(cfg: &RunConfig) -> Result<Activation, CliError> {
    Activation::parse(cfg.str("activation")).map_err(|e| CliError::Usage(e.to_string()))
}

fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_data(&cfg.required_path("train")?)?;
    let val = match cfg.path("val") {
        Some(p) => Some(load_data(&p)?),
        None => None,
    };
    let hidden: Vec<usize> = cfg.list("hidden")?;
    let mut widths = vec![data.d()];
    widths.extend(hidden);
    widths.push(data.classes());
    let seed = cfg.seed()?;
    let init_seed = if cfg.str("init_seed").is_empty() { rng::sub_seed(seed, 7) } else { cfg.parse("init_seed")? };
    let tc = train_config(cfg, "epochs")?;
    let every: usize = cfg.parse("checkpoint_every")?;
    let out = cfg.out_dir();

    let init = Mlp::init(&widths, activation(cfg)?, init_seed)?;
    write_checkpoint(&init, &out.join("init.ckpt"))?;
    let mut net = init.clone();
    let mut hook = |epoch: usize, m: &Mlp| {
        if every > 0 && epoch % every == 0 {
            write_checkpoint(m, &out.join(format!("epoch_{epoch}.ckpt")))?;
        }
        Ok(())
    };
    let history = train_observed(&mut net, &data, val.as_ref(), &tc, &Penalty::None, &mut hook)?;
    write_checkpoint(&net, &out.join("trained.ckpt"))?;
    write(&out.join("history.csv"), &history.to_csv())?;
    let last = history.last().unwrap();
    println!(
        "trained {:?} (p = {}): train error {:.4}, val error {:.4}",
        widths,
        net.num_params(),
        last.train_error,
        last.val_error
    );

    if cfg.flag("v2")? {
        let vc = train_config(cfg, "v2_epochs")?;
        let penalty = Penalty::Spring { anchor: init.flat().to_owned(), factor: 2.0 };
        let h = train_observed(&mut net, &data, val.as_ref(), &vc, &penalty, &mut |_, _| Ok(()))?;
        write_checkpoint(&net, &out.join("v2.ckpt"))?;
        write(&out.join("v2_history.csv"), &h.to_csv())?;
        let last = h.last().unwrap();
        println!("v2 retraining: train error {:.4}, val error {:.4}", last.train_error, last.val_error);
    }
    Ok(())
}

const QUANTITIES: &[&str] =
    &["input", "activation", "activation_grad", "logit_jacobian", "fim", "empirical_fim", "gauss_newton", "hessian", "kfac"];

struct Spectrum {
    name: String,
    kind: String,
    representation: &'static str,
    eigvals: Vec<f64>,
}

fn dense_spectrum(name: &str, m: &SymMatrix) -> Result<Spectrum, CliError> {
    let ev = floor_spectrum(&sym_eigvals(m)?);
    Ok(Spectrum { name: name.to_string(), kind: name.to_string(), representation: "dense", eigvals: ev.to_vec() })
}

fn spectrum(cfg: &RunConfig) -> Result<(), CliError> {
    let mlp = load_net(&cfg.required_path("checkpoint")?)?;
    let data = head(load_data(&cfg.required_path("data")?)?, cfg.parse("rows")?)?;
    if data.d() != mlp.input_dim() || data.classes() != mlp.classes() {
        return Err(CliError::Usage(format!(
            "dataset has d = {}, m = {} but the network expects d = {}, m = {}",
            data.d(),
            data.classes(),
            mlp.input_dim(),
            mlp.classes()
        )));
    }
    let wanted: Vec<String> = if cfg.str("quantities") == "all" {
        QUANTITIES.iter().map(|s| s.to_string()).collect()
    } else {
        cfg.list("quantities")?
    };
    for q in &wanted {
        if !QUANTITIES.contains(&q.as_str()) {
            return Err(CliError::Usage(format!("unknown quantity {q:?}; expected one of {}", QUANTITIES.join(", "))));
        }
    }
    let n = match cfg.parse::<usize>("n")? {
        0 => data.n(),
        n => n,
    };
    let eps: f64 = cfg.parse("eps")?;
    let lanczos_k: usize = cfg.parse("lanczos_k")?;
    let hessian_max: usize = cfg.parse("hessian_max_p")?;
    let caps = Caps::default();
    let p = mlp.num_params();
    let x = data.inputs().view();

    let input_corr = data.input_correlation()?;
    let scale = match cfg.str("normalize") {
        "none" => 1.0,
        "input" => sym_eigvals(&input_corr)?[0],
        other => return Err(CliError::Usage(format!("bad value {other:?} for normalize; expected none or input"))),
    };

    let fisher_type = |kind: CurvatureKind| -> Result<Spectrum, CliError> {
        let name = kind.name().to_string();
        if lanczos_k > 0 {
            let k = lanczos_k.min(p);
            let e = curvature_topk(&mlp, &data, kind, k, p.min(3 * k + 50), cfg.seed()?, &caps)?;
            return Ok(Spectrum { name: name.clone(), kind: name, representation: "lanczos_topk", eigvals: e.eigvals.to_vec() });
        }
        let op = match kind {
            CurvatureKind::Fim => fim(&mlp, x, &caps),
            CurvatureKind::EmpiricalFim => empirical_fim(&mlp, &data, &caps),
            _ => gauss_newton(&mlp, x, &caps),
        }
        .map_err(|e| match e {
            Error::Size(m) => CliError::Core(Error::Size(format!("{m} (set lanczos_k = K)"))),
            e => CliError::Core(e),
        })?;
        let ev = floor_spectrum(&op.op.eigvals()?);
        Ok(Spectrum { name: name.clone(), kind: name, representation: op.representation(), eigvals: ev.to_vec() })
    };

    let mut spectra = Vec::new();
    let needs_corr = wanted.iter().any(|q| q == "activation" || q == "activation_grad");
    let corr = if needs_corr { Some(capture_correlations(&mlp, &data)?) } else { None };
    for q in &wanted {
        match q.as_str() {
            "input" => spectra.push(dense_spectrum("input_correlation", &input_corr)?),
            "activation" => {
                for (k, m) in corr.as_ref().unwrap().act.iter().enumerate().skip(1) {
                    spectra.push(dense_spectrum(&format!("activation_{k}"), m)?);
                }
            }
            "activation_grad" => {
                for (k, m) in corr.as_ref().unwrap().act_grad.iter().enumerate().skip(1) {
                    spectra.push(dense_spectrum(&format!("activation_grad_{k}"), m)?);
                }
            }
            "logit_jacobian" => {
                let g = logit_jacobian_gram(&mlp, x, &caps)?;
                spectra.push(dense_spectrum("logit_jacobian", &g)?);
            }
            "fim" => spectra.push(fisher_type(CurvatureKind::Fim)?),
            "empirical_fim" => spectra.push(fisher_type(CurvatureKind::EmpiricalFim)?),
            "gauss_newton" => spectra.push(fisher_type(CurvatureKind::GaussNewton)?),
            "hessian" => {
                if p > hessian_max {
                    if wanted.len() == 1 {
                        return Err(CliError::Core(Error::Size(format!(
                            "finite-difference Hessian needs p <= {hessian_max}, network has p = {p}"
                        ))));
                    }
                    eprintln!("skipping hessian: p = {p} exceeds hessian_max_p = {hessian_max}");
                    continue;
                }
                let op = exact_hessian_small(&mlp, &data, &caps)?;
                let ev = floor_spectrum(&op.op.eigvals()?);
                spectra.push(Spectrum {
                    name: "hessian".into(),
                    kind: op.kind.name().into(),
                    representation: "dense",
                    eigvals: ev.to_vec(),
                });
            }
            _ => {
                let op = kfac_blocks(&mlp, &data, CurvatureKind::GaussNewton)?;
                let mut ev = op.op.eigvals()?.to_vec();
                ev.sort_by(|a, b| b.total_cmp(a));
                let ev = floor_spectrum(&ev.into());
                spectra.push(Spectrum { name: "kfac".into(), kind: "gauss_newton".into(), representation: "kfac", eigvals: ev.to_vec() });
            }
        }
    }

    let out = cfg.out_dir();
    for s in &spectra {
        let mut report = SpectrumReport::new(s.eigvals.clone().into(), n, eps)?;
        report.eigvals.mapv_inplace(|v| v / scale);
        write(&out.join(format!("spectrum_{}.csv", s.name)), &report.to_csv())?;
        let meta = serde_json::json!({
            "quantity": s.name,
            "kind": s.kind,
            "representation": s.representation,
            "p": s.eigvals.len(),
            "n": data.n(),
            "normalization": cfg.str("normalize"),
            "scale": scale,
            "p_eff": report.p_eff,
            "strength": report.strength,
            "sloppy_factor": report.sloppy.value(),
        });
        write(&out.join(format!("spectrum_{}.meta.json", s.name)), &format!("{meta}\n"))?;
        println!("{}: {} eigenvalues, p_eff {}, sloppy factor {}", s.name, s.eigvals.len(), report.p_eff, report.sloppy);
    }
    Ok(())
}

fn bound(cfg: &RunConfig) -> Result<(), CliError> {
    let method = BoundMethod::parse(cfg.str("method")).map_err(|e| CliError::Usage(e.to_string()))?;
    let trained = load_net(&cfg.required_path("checkpoint")?)?;
    let init = load_net(&cfg.required_path("init")?)?;
    if init.widths() != trained.widths() {
        return Err(CliError::Usage("init and trained checkpoints have different architectures".into()));
    }
    let train = load_data(&cfg.required_path("train")?)?;
    let fim_data = match cfg.path("fim_data") {
        Some(p) => load_data(&p)?,
        None => train.clone(),
    };
    let seed = cfg.seed()?;
    let delta: f64 = cfg.parse("delta")?;
    let mut settings = BoundSettings::default();
    settings.grid.delta = delta;
    settings.grid.n_samples = cfg.parse("samples")?;
    settings.grid.seed = seed;
    settings.optimize.delta = delta;
    settings.optimize.final_samples = cfg.parse("samples")?;
    settings.optimize.seed = seed;
    settings.optimize.steps = cfg.parse("steps")?;
    settings.optimize.lr_mean = cfg.parse("lr_mean")?;
    settings.optimize.lr_cov = cfg.parse("lr_cov")?;
    settings.optimize.batch_size = cfg.parse("batch_size")?;
    settings.optimize.cadence = match cfg.parse::<usize>("cadence")? {
        0 => None,
        c => Some(c),
    };
    settings.curvature = CurvatureSource::parse(cfg.str("curvature")).map_err(|e| CliError::Usage(e.to_string()))?;
    settings.curvature_rows = cfg.parse("curvature_rows")?;

    let w0 = init.flat().to_owned();
    let run = compute_bound(method, &trained, &w0, &train, &fim_data, &settings)?;
    let held_out = match cfg.path("val") {
        Some(p) => {
            let val = load_data(&p)?;
            let est = held_out_error(&run, &val, cfg.parse("held_out_samples")?, rng::sub_seed(seed, 99))?;
            Some(est.error)
        }
        None => None,
    };

    let out = cfg.out_dir();
    let mut json = serde_json::to_value(&run.report).map_err(|e| CliError::Core(Error::Numeric(e.to_string())))?;
    json["seed"] = seed.into();
    json["config_hash"] = cfg.hash().into();
    json["held_out_error"] = held_out.into();
    write(&out.join("bound.json"), &format!("{}\n", serde_json::to_string_pretty(&json).unwrap()))?;
    if !run.trace.is_empty() {
        let with_a = run.trace.iter().any(|r| r.a.is_some());
        write(&out.join("trace.csv"), &trace_csv(&run.trace, with_a))?;
    }
    if !run.grid_rows.is_empty() {
        write(&out.join("grid.csv"), &grid_rows_csv(&run.grid_rows))?;
    }
    println!(
        "method {}: bound {:.4} (e_hat {:.4}, KL {:.1}, eps {:.4e}){}",
        run.report.method,
        run.report.bound,
        run.report.e_hat,
        run.report.kl,
        run.report.eps,
        held_out.map_or(String::new(), |h| format!(", held-out error {h:.4}"))
    );
    Ok(())
}

fn overlap(cfg: &RunConfig) -> Result<(), CliError> {
    let init = load_net(&cfg.required_path("init")?)?;
    let trained = load_net(&cfg.required_path("trained")?)?;
    let v2 = match cfg.path("v2") {
        Some(p) => Some(load_net(&p)?),
        None => None,
    };
    let data = head(load_data(&cfg.required_path("data")?)?, cfg.parse("rows")?)?;
    let p = init.num_params();
    let mut ks: Vec<usize> = cfg.list("ks")?;
    if ks.is_empty() {
        ks = [100, 50, 20].iter().map(|d| (p / d).max(1)).collect();
        ks.dedup();
    }
    let oc = OverlapConfig { ks, baseline_draws: cfg.parse("baseline_draws")?, seed: cfg.seed()? };
    let rows = overlap_table(&init, &trained, v2.as_ref(), &data, &oc)?;
    write(&cfg.out_dir().join("overlap.csv"), &overlap_csv(&rows))?;
    for r in &rows {
        println!("k {}: overlap {:.4} (random {:.4}), projection {:.4} (random {:.4})", r.k, r.overlap, r.random_overlap, r.projection, r.random_projection);
    }
    Ok(())
}

fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let sc = SweepConfig {
        data: TeacherStudentConfig {
            d: cfg.parse("d")?,
            ratio: cfg.parse("ratio")?,
            n_train: cfg.parse("n_train")?,
            n_val: cfg.parse("n_val")?,
            teacher_hidden: cfg.parse("teacher_hidden")?,
            classes: cfg.parse("classes")?,
            ..Default::default()
        },
        decays: cfg.list("decays")?,
        widths: cfg.list("widths")?,
        seeds: cfg.list("seeds")?,
        activation: activation(cfg)?,
        train: TrainConfig {
            epochs: cfg.parse("epochs")?,
            batch_size: cfg.parse("batch_size")?,
            lr_start: cfg.parse("lr_start")?,
            lr_end: cfg.parse("lr_end")?,
            ..Default::default()
        },
    };
    let rows = run_sweep(&sc)?;
    write(&cfg.out_dir().join("sweep.csv"), &sweep_csv(&rows))?;
    let flagged = rows.iter().filter(|r| !r.interpolating()).count();
    println!("{} students, {flagged} flagged non-interpolating", rows.len());
    Ok(())
}
