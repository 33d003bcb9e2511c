//! End-to-end experiment building blocks: the teacher-student setup,
//! student training and bound computation by method name.

use ndarray::{s, Array1};

use crate::curvature::{curvature_topk, fim, gauss_newton, kfac_blocks, kfac_eig, Caps, CurvatureKind};
use crate::data::{gen_sloppy_inputs, teacher_label, Dataset, SloppySpec};
use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal, sym_eig, EigDecomp};
use crate::net::{Activation, Mlp};
use crate::pacbayes::{
    grid_search_bound, mc_posterior_error, optimize_bound, BoundReport, CurvatureBasis, GaussianPair,
    GridRow, GridSearchConfig, McEstimate, OptMethod, OptimizeConfig, OptimizeProblem, PosteriorRule,
    TraceRow,
};
use crate::rng;
use crate::sloppy::{projection_ratio, subspace_overlap};
use crate::train::{train, History, TrainConfig};

#[derive(Debug, Clone)]
pub struct TeacherStudentConfig {
    pub d: usize,
    pub c: f64,
    /// `b/c`, held fixed across decay rates.
    pub ratio: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub teacher_hidden: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for TeacherStudentConfig {
    fn default() -> Self {
        TeacherStudentConfig {
            d: 200,
            c: 0.1,
            ratio: 50.0,
            n_train: 50_000,
            n_val: 10_000,
            teacher_hidden: 100,
            classes: 10,
            seed: 0,
        }
    }
}

pub struct TeacherStudent {
    pub teacher: Mlp,
    pub train: Dataset,
    pub val: Dataset,
}

/// Inputs from the sloppy Gaussian, labels from a random bias-free
/// two-layer ReLU teacher.
pub fn make_teacher_student(cfg: &TeacherStudentConfig) -> Result<TeacherStudent> {
    if cfg.n_train == 0 || cfg.n_val == 0 {
        return Err(Error::input("train and validation sizes must be positive"));
    }
    let spec = SloppySpec::with_ratio(cfg.d, cfg.c, cfg.ratio, rng::sub_seed(cfg.seed, 1));
    let x = gen_sloppy_inputs(&spec, cfg.n_train + cfg.n_val)?;
    let teacher = Mlp::init(&[cfg.d, cfg.teacher_hidden, cfg.classes], Activation::Relu, rng::sub_seed(cfg.seed, 2))?;
    let y = teacher_label(x.view(), &teacher)?;
    let all = Dataset::new(x, y, cfg.classes)?;
    let (train, val) = all.split_at(cfg.n_train)?;
    Ok(TeacherStudent { teacher, train, val })
}

/// A trained student together with its initialization.
pub struct Student {
    pub init: Mlp,
    pub trained: Mlp,
    pub history: History,
}

impl Student {
    pub fn w0(&self) -> Array1<f64> {
        self.init.flat().to_owned()
    }
}

pub fn train_student(
    widths: &[usize],
    activation: Activation,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<Student> {
    let init = Mlp::init(widths, activation, init_seed)?;
    let mut trained = init.clone();
    let history = train(&mut trained, data, val, cfg)?;
    Ok(Student { init, trained, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    Analytic,
    Numerical,
    Isotropic,
    Optimized(OptMethod),
}

impl BoundMethod {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "1" => BoundMethod::Analytic,
            "numerical-1" => BoundMethod::Numerical,
            "isotropic" => BoundMethod::Isotropic,
            "2" => BoundMethod::Optimized(OptMethod::FimInit),
            "3" => BoundMethod::Optimized(OptMethod::HessianTracking),
            "4" => BoundMethod::Optimized(OptMethod::FimPrior),
            "diag" => BoundMethod::Optimized(OptMethod::Diagonal),
            other => {
                return Err(Error::input(format!(
                    "unknown bound method {other:?}; expected one of 1, 2, 3, 4, diag, isotropic, numerical-1"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundMethod::Analytic => "1",
            BoundMethod::Numerical => "numerical-1",
            BoundMethod::Isotropic => "isotropic",
            BoundMethod::Optimized(m) => m.name(),
        }
    }
}

/// How the curvature eigenbasis for the closed-form posteriors is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureSource {
    /// Kronecker-factored Gauss-Newton.
    Kfac,
    /// Dense Gauss-Newton; limited by the dense size cap.
    Dense,
}

impl CurvatureSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "kfac" => Ok(CurvatureSource::Kfac),
            "dense" => Ok(CurvatureSource::Dense),
            other => Err(Error::input(format!("unknown curvature source {other:?}; expected kfac or dense"))),
        }
    }
}

/// Gauss-Newton eigenpairs of `mlp` on the first `rows` samples of `data`
/// (all of them when `rows` is 0).
pub fn curvature_basis(mlp: &Mlp, data: &Dataset, rows: usize, source: CurvatureSource) -> Result<CurvatureBasis> {
    let sub;
    let d = if rows > 0 && rows < data.n() {
        sub = data.subset(&(0..rows).collect::<Vec<_>>())?;
        &sub
    } else {
        data
    };
    match source {
        CurvatureSource::Kfac => {
            let op = kfac_blocks(mlp, d, CurvatureKind::GaussNewton)?;
            Ok(CurvatureBasis::from_kfac(kfac_eig(&op.op)?))
        }
        CurvatureSource::Dense => {
            let op = gauss_newton(mlp, d.inputs().view(), &Caps::default())?;
            let eig = sym_eig(&op.op.to_dense()?)?;
            Ok(CurvatureBasis::from_eig(&eig))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundSettings {
    pub grid: GridSearchConfig,
    pub optimize: OptimizeConfig,
    pub curvature: CurvatureSource,
    pub curvature_rows: usize,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            grid: GridSearchConfig::default(),
            optimize: OptimizeConfig::default(),
            curvature: CurvatureSource::Kfac,
            curvature_rows: 5000,
        }
    }
}

pub struct BoundRun {
    pub report: BoundReport,
    pub pair: GaussianPair,
    /// Network carrying the posterior mean.
    pub mean: Mlp,
    pub grid_rows: Vec<GridRow>,
    pub trace: Vec<TraceRow>,
}

/// Computes the bound of `method` for a trained network with
/// initialization `w0`. `fim_data` feeds the Fisher at initialization.
pub fn compute_bound(
    method: BoundMethod,
    trained: &Mlp,
    w0: &Array1<f64>,
    train: &Dataset,
    fim_data: &Dataset,
    settings: &BoundSettings,
) -> Result<BoundRun> {
    match method {
        BoundMethod::Optimized(m) => {
            let problem = OptimizeProblem { trained, w0: w0.view(), train, fim_data };
            let out = optimize_bound(m, &problem, &settings.optimize)?;
            Ok(BoundRun { report: out.report, pair: out.pair, mean: out.mean, grid_rows: Vec::new(), trace: out.trace })
        }
        _ => {
            let rule = match method {
                BoundMethod::Analytic => PosteriorRule::Analytic,
                BoundMethod::Numerical => PosteriorRule::Numerical,
                _ => PosteriorRule::Isotropic,
            };
            let curv = match rule {
                PosteriorRule::Isotropic => None,
                _ => Some(curvature_basis(trained, train, settings.curvature_rows, settings.curvature)?),
            };
            let (report, rows, pair) = grid_search_bound(trained, w0.view(), curv.as_ref(), rule, train, &settings.grid)?;
            Ok(BoundRun { report, pair, mean: trained.clone(), grid_rows: rows, trace: Vec::new() })
        }
    }
}

/// Monte-Carlo error of the posterior on held-out data.
pub fn held_out_error(run: &BoundRun, val: &Dataset, samples: usize, seed: u64) -> Result<McEstimate> {
    mc_posterior_error(&run.pair, &run.mean, val, samples, seed)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub data: TeacherStudentConfig,
    pub decays: Vec<f64>,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            data: TeacherStudentConfig { d: 50, n_train: 500, n_val: 2000, teacher_hidden: 20, ..Default::default() },
            decays: vec![0.001, 0.01, 0.1, 0.5],
            widths: vec![10, 20, 100],
            seeds: vec![0, 1, 2],
            activation: Activation::Relu,
            train: TrainConfig { epochs: 1000, batch_size: 100, lr_start: 1e-2, lr_end: 1e-4, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub c: f64,
    pub width: usize,
    pub seed: u64,
    pub train_error: f64,
    pub val_error: f64,
}

impl SweepRow {
    pub fn interpolating(&self) -> bool {
        self.train_error == 0.0
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("c,width,seed,train_error,val_error,interpolating\n");
    for r in rows {
        s.push_str(&format!("{:?},{},{},{:?},{:?},{}\n", r.c, r.width, r.seed, r.train_error, r.val_error, r.interpolating()));
    }
    s
}

/// Trains one student per (decay, width, seed) on its own teacher-student
/// dataset. The teacher and inputs depend on the seed and decay only.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &c in &cfg.decays {
            let ts = make_teacher_student(&TeacherStudentConfig { c, seed, ..cfg.data.clone() })?;
            for &width in &cfg.widths {
                let widths = [cfg.data.d, width, cfg.data.classes];
                let tc = TrainConfig { seed: rng::sub_seed(seed, 100), ..cfg.train.clone() };
                let st = train_student(&widths, cfg.activation, &ts.train, None, &tc, rng::sub_seed(seed, 200 + width as u64))?;
                let (_, train_error) = st.trained.loss_and_error(&ts.train)?;
                let (_, val_error) = st.trained.loss_and_error(&ts.val)?;
                rows.push(SweepRow { c, width, seed, train_error, val_error });
            }
        }
    }
    Ok(rows)
}

/// Leading `k` Fisher eigenpairs of `mlp` on `data`: dense when the size
/// cap allows, Lanczos otherwise.
pub fn fim_top(mlp: &Mlp, data: &Dataset, k: usize, seed: u64) -> Result<EigDecomp> {
    let p = mlp.num_params();
    let caps = Caps::default();
    if p <= caps.dense {
        let op = fim(mlp, data.inputs().view(), &caps)?;
        Ok(sym_eig(&op.op.to_dense()?)?.top(k))
    } else {
        let m = p.min(3 * k + 50);
        curvature_topk(mlp, data, CurvatureKind::Fim, k, m, seed, &caps)
    }
}

#[derive(Debug, Clone)]
pub struct OverlapConfig {
    pub ks: Vec<usize>,
    /// Random subspaces drawn per `k` for the baseline.
    pub baseline_draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapRow {
    pub k: usize,
    pub overlap: f64,
    pub self_overlap: f64,
    pub random_overlap: f64,
    pub projection: f64,
    pub random_projection: f64,
    pub v2_projection: Option<f64>,
}

pub fn overlap_csv(rows: &[OverlapRow]) -> String {
    let mut s = String::from("k,overlap,self_overlap,random_overlap,projection,random_projection,v2_projection\n");
    for r in rows {
        let v2 = r.v2_projection.map_or(String::new(), |v| format!("{v:?}"));
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{v2}\n",
            r.k, r.overlap, r.self_overlap, r.random_overlap, r.projection, r.random_projection
        ));
    }
    s
}

/// Overlap of the top-`k` Fisher subspaces at initialization and after
/// training, and the share of the weight change inside the
/// initialization's top-`k` subspace, against random `k`-subspaces.
pub fn overlap_table(init: &Mlp, trained: &Mlp, v2: Option<&Mlp>, data: &Dataset, cfg: &OverlapConfig) -> Result<Vec<OverlapRow>> {
    let p = init.num_params();
    let kmax = cfg.ks.iter().copied().max().ok_or_else(|| Error::input("no subspace sizes given"))?;
    if kmax == 0 || kmax > p {
        return Err(Error::input(format!("subspace sizes must lie in 1..={p}")));
    }
    let u0 = fim_top(init, data, kmax, cfg.seed)?.eigvecs;
    let u1 = fim_top(trained, data, kmax, rng::sub_seed(cfg.seed, 1))?.eigvecs;
    let dw = &trained.flat() - &init.flat();
    let dv2 = v2.map(|m| &m.flat() - &init.flat());
    let mut rows = Vec::new();
    for &k in &cfg.ks {
        let a = u0.slice(s![.., ..k]);
        let b = u1.slice(s![.., ..k]);
        let mut acc = 0.0;
        for t in 0..cfg.baseline_draws {
            let r = random_orthonormal(p, k, rng::sub_seed(cfg.seed, 1000 + (k * cfg.baseline_draws + t) as u64))?;
            acc += subspace_overlap(r.view(), a)?;
        }
        rows.push(OverlapRow {
            k,
            overlap: subspace_overlap(a, b)?,
            self_overlap: subspace_overlap(a, a)?,
            random_overlap: if cfg.baseline_draws > 0 { acc / cfg.baseline_draws as f64 } else { f64::NAN },
            projection: projection_ratio(dw.view(), a)?,
            random_projection: k as f64 / p as f64,
            v2_projection: match &dv2 {
                Some(d) => Some(projection_ratio(d.view(), a)?),
                None => None,
            },
        });
    }
    Ok(rows)
}
