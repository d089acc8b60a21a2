//! Seeded simulation protocols behind the coverage figures, plus a
//! real-data protocol on a user-supplied CSV.
//!
//! Every trial owns a ChaCha stream keyed by (seed, setting, trial), so the
//! rows do not depend on how rayon schedules trials.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    calibrate_additive, calibrate_additive_ridge, calibrate_level, calibrate_level_ridge,
    calibrate_regularization, default_lambda_grid, CalibrationFlag, CalibrationResult,
};
use crate::conformal::DualThresholdPredictor;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, interval_predict, IntervalMethod, IntervalOptions};
use crate::model::{normalize, Dataset, FitResult, ProblemSpec};
use crate::solver::{fit, SolverConfig};

/// Offsets the seed of each setting so settings never share streams.
const SETTING_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Model {
    /// Y = Xᵀβ̃ + ε, X ~ N(0, I_d), ε ~ N(0, σ²), β̃ ~ N(0, I_d/d).
    GaussianLinear { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    pub n_test: usize,
    pub tau: f64,
    pub trials: usize,
    pub seed: u64,
    pub model: Model,
}

impl SimConfig {
    pub fn gaussian(n: usize, d: usize, n_test: usize, tau: f64, trials: usize, seed: u64) -> SimConfig {
        SimConfig {
            n,
            d,
            n_test,
            tau,
            trials,
            seed,
            model: Model::GaussianLinear { sigma: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_test == 0 || self.trials == 0 {
            return Err(Error::domain("n, n_test and trials must be positive"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::domain(format!("tau={} outside (0, 1)", self.tau)));
        }
        let Model::GaussianLinear { sigma } = self.model;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::domain("noise sd must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimDraw {
    pub train: Dataset,
    pub test: Dataset,
    pub beta_true: DVector<f64>,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn draw_rows<R: Rng>(rng: &mut R, m: usize, beta: &DVector<f64>, sigma: f64) -> Result<Dataset> {
    let d = beta.len();
    let x = DMatrix::from_row_iterator(m, d, (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let noise = DVector::from_iterator(m, (0..m).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)));
    let y = &x * beta + noise;
    Dataset::new(x, y)
}

fn draw_with<R: Rng>(rng: &mut R, config: &SimConfig) -> Result<SimDraw> {
    let Model::GaussianLinear { sigma } = config.model;
    let d = config.d;
    let sd = if d > 0 { (1.0 / d as f64).sqrt() } else { 0.0 };
    let beta_true = DVector::from_iterator(d, (0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
    let train = draw_rows(rng, config.n, &beta_true, sigma)?;
    let test = draw_rows(rng, config.n_test, &beta_true, sigma)?;
    Ok(SimDraw { train, test, beta_true })
}

/// Train and test sets with a fresh β̃ for the given trial.
pub fn generate(config: &SimConfig, trial: usize) -> Result<SimDraw> {
    config.validate()?;
    draw_with(&mut trial_rng(config.seed, trial), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Figure {
    /// Plain QR miscoverage as d grows.
    Fig1,
    /// Unregularized level adjustment.
    Fig2,
    /// Estimation error of level, joint and regularization-only tuning.
    Fig3,
    /// Unregularized additive adjustment, plus fixed offsets.
    Fig4,
    /// Randomized GCC cutoff conditional on U.
    Fig5,
    /// QR against the three corrections.
    Fig6,
    /// Interval methods on a CSV dataset.
    Fig7,
}

impl Figure {
    pub const ALL: [Figure; 7] = [
        Figure::Fig1,
        Figure::Fig2,
        Figure::Fig3,
        Figure::Fig4,
        Figure::Fig5,
        Figure::Fig6,
        Figure::Fig7,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
        }
    }

    pub fn parse(s: &str) -> Option<Figure> {
        let s = s.to_ascii_lowercase();
        let s = s.strip_suffix("-style").unwrap_or(&s);
        Figure::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub n: usize,
    pub d: usize,
}

impl Setting {
    fn label(&self) -> String {
        format!("n={},d={}", self.n, self.d)
    }
}

/// Protocol knobs. [`FigureConfig::defaults`] gives each figure's standard
/// protocol; every field can be overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureConfig {
    pub figure: Figure,
    pub settings: Vec<Setting>,
    pub n_test: usize,
    pub trials: usize,
    pub seed: u64,
    /// One-sided target level (simulations).
    pub tau: f64,
    /// Two-sided miscoverage target (CSV protocol).
    pub alpha: f64,
    pub sigma: f64,
    /// λ grid is n·{0, 0.005, …, lambda_top}.
    pub lambda_top: f64,
    pub c_range: (f64, f64),
    /// Fixed offsets swept by the additive figure.
    pub c_values: Vec<f64>,
    pub u_bins: usize,
    pub methods: Vec<IntervalMethod>,
}

impl FigureConfig {
    pub fn defaults(figure: Figure) -> FigureConfig {
        let at = |n: usize, ds: &[usize]| ds.iter().map(|&d| Setting { n, d }).collect::<Vec<_>>();
        let ratios = |n: usize| at(n, &[10, 20, 40, 60, 80, 100]);
        let settings = match figure {
            Figure::Fig1 => at(300, &[1, 15, 30, 90]),
            Figure::Fig2 | Figure::Fig3 | Figure::Fig4 => ratios(200),
            Figure::Fig5 => at(200, &[40]),
            Figure::Fig6 => {
                let mut s = at(200, &[20, 40, 80]);
                s.extend([100, 400, 800].map(|n| Setting { n, d: n / 10 }));
                s
            }
            Figure::Fig7 => at(400, &[10, 20, 40, 60]),
        };
        FigureConfig {
            figure,
            settings,
            n_test: match figure {
                Figure::Fig5 => 1,
                Figure::Fig7 => 1594,
                _ => 2000,
            },
            trials: match figure {
                Figure::Fig5 => 2000,
                Figure::Fig6 => 200,
                Figure::Fig7 => 20,
                _ => 100,
            },
            seed: 0,
            tau: 0.9,
            alpha: 0.1,
            sigma: 1.0,
            lambda_top: if figure == Figure::Fig7 { 0.2 } else { 0.1 },
            c_range: crate::calibrate::DEFAULT_C_RANGE,
            c_values: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            u_bins: 10,
            methods: IntervalMethod::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() || self.trials == 0 || self.n_test == 0 {
            return Err(Error::domain("settings, trials and n_test must be non-empty"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain("tau and alpha must lie in (0, 1)"));
        }
        if self.u_bins == 0 {
            return Err(Error::domain("u_bins must be positive"));
        }
        if self.figure == Figure::Fig7 && self.methods.is_empty() {
            return Err(Error::domain("no interval methods selected"));
        }
        Ok(())
    }

    /// Generator settings behind one simulated setting; `generate` with this
    /// config and a trial index reproduces that trial's data.
    pub fn simulation(&self, setting_index: usize) -> SimConfig {
        let s = self.settings[setting_index];
        SimConfig {
            n: s.n,
            d: s.d,
            n_test: self.n_test,
            tau: self.tau,
            trials: self.trials,
            seed: self.seed.wrapping_add(SETTING_STRIDE.wrapping_mul(setting_index as u64)),
            model: Model::GaussianLinear { sigma: self.sigma },
        }
    }
}

/// One method evaluated in one trial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialRow {
    pub figure: String,
    pub setting: String,
    pub n: usize,
    pub d: usize,
    pub trial: usize,
    pub method: String,
    pub variant: String,
    pub coverage: Option<f64>,
    pub miscoverage: Option<f64>,
    pub median_length: Option<f64>,
    pub multiaccuracy: Option<f64>,
    pub tau_adj: Option<f64>,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    /// Dual threshold: the drawn U, or t̂ for the fixed-threshold method.
    pub u: Option<f64>,
    pub cutoff: Option<f64>,
    pub estimation_error: Option<f64>,
    pub loo_coverage: Option<f64>,
    pub flags: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub setting: String,
    pub method: String,
    pub variant: String,
    pub trials: usize,
    pub failures: usize,
    pub mean_miscoverage: Option<f64>,
    pub se_miscoverage: Option<f64>,
    /// min, lower quartile, median, upper quartile, max
    pub miscoverage_box: Option<[f64; 5]>,
    pub mean_median_length: Option<f64>,
    pub mean_multiaccuracy: Option<f64>,
    pub mean_tau_adj: Option<f64>,
    pub mean_c: Option<f64>,
    pub mean_lambda: Option<f64>,
    pub mean_cutoff: Option<f64>,
    pub mean_estimation_error: Option<f64>,
    pub saturated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: FigureConfig,
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn standard_error(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    if v.len() < 2 {
        return Some(0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    Some((var / v.len() as f64).sqrt())
}

/// Linear-interpolation quantile of sorted values.
fn interpolated(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn five_numbers(v: &[f64]) -> Option<[f64; 5]> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Some([0.0, 0.25, 0.5, 0.75, 1.0].map(|p| interpolated(&s, p)))
}

/// Groups rows by (setting, method, variant) in first-appearance order.
pub fn aggregate(rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.setting.clone(), r.method.clone(), r.variant.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ok: Vec<&TrialRow> = g.iter().copied().filter(|r| r.error.is_none()).collect();
            let col = |f: fn(&TrialRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let mis = col(|r| r.miscoverage);
            Aggregate {
                setting: key.0,
                method: key.1,
                variant: key.2,
                trials: g.len(),
                failures: g.len() - ok.len(),
                mean_miscoverage: mean(&mis),
                se_miscoverage: standard_error(&mis),
                miscoverage_box: five_numbers(&mis),
                mean_median_length: mean(&col(|r| r.median_length)),
                mean_multiaccuracy: mean(&col(|r| r.multiaccuracy)),
                mean_tau_adj: mean(&col(|r| r.tau_adj)),
                mean_c: mean(&col(|r| r.c)),
                mean_lambda: mean(&col(|r| r.lambda)),
                mean_cutoff: mean(&col(|r| r.cutoff)),
                mean_estimation_error: mean(&col(|r| r.estimation_error)),
                saturated: ok.iter().filter(|r| r.flags.contains("saturated")).count(),
            }
        })
        .collect()
}

fn flag_names(flags: &[CalibrationFlag]) -> String {
    flags
        .iter()
        .map(|f| match f {
            CalibrationFlag::SaturatedUpper => "saturated-upper".to_string(),
            CalibrationFlag::SaturatedLower => "saturated-lower".to_string(),
            CalibrationFlag::EmptyToleranceSet => "empty-tolerance-set".to_string(),
            CalibrationFlag::Clipped => "clipped".to_string(),
            CalibrationFlag::GridPointFailed { lambda, .. } => format!("grid-point-failed@{lambda}"),
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Fraction of test points with y ≤ fitted quantile.
fn one_sided_coverage(f: &FitResult, test: &Dataset) -> f64 {
    let pred = f.predict_rows(test.features());
    let hits = pred.iter().zip(test.response().iter()).filter(|(q, y)| y <= q).count();
    hits as f64 / test.n() as f64
}

fn estimation_error(f: &FitResult, beta: &DVector<f64>) -> f64 {
    (&f.beta - beta).norm()
}

struct Ctx<'a> {
    figure: Figure,
    setting: Setting,
    trial: usize,
    cfg: &'a FigureConfig,
    solver: &'a SolverConfig,
}

impl Ctx<'_> {
    fn row(&self, method: &str) -> TrialRow {
        TrialRow {
            figure: self.figure.name().into(),
            setting: self.setting.label(),
            n: self.setting.n,
            d: self.setting.d,
            trial: self.trial,
            method: method.into(),
            ..TrialRow::default()
        }
    }

    fn failed(&self, method: &str, e: Error) -> TrialRow {
        TrialRow {
            error: Some(e.to_string()),
            ..self.row(method)
        }
    }

    fn calibrated(&self, method: &str, r: Result<CalibrationResult>, draw: &SimDraw) -> TrialRow {
        match r {
            Ok(r) => {
                let coverage = one_sided_coverage(&r.final_fit, &draw.test);
                TrialRow {
                    coverage: Some(coverage),
                    miscoverage: Some(1.0 - coverage),
                    tau_adj: r.tau_adj,
                    c: r.c,
                    lambda: r.lambda,
                    estimation_error: Some(estimation_error(&r.final_fit, &draw.beta_true)),
                    loo_coverage: Some(r.loo_coverage),
                    flags: flag_names(&r.flags),
                    ..self.row(method)
                }
            }
            Err(e) => self.failed(method, e),
        }
    }

    fn fitted(&self, method: &str, r: Result<FitResult>, draw: &SimDraw) -> TrialRow {
        match r {
            Ok(f) => {
                let coverage = one_sided_coverage(&f, &draw.test);
                TrialRow {
                    coverage: Some(coverage),
                    miscoverage: Some(1.0 - coverage),
                    lambda: Some(f.lambda),
                    estimation_error: Some(estimation_error(&f, &draw.beta_true)),
                    ..self.row(method)
                }
            }
            Err(e) => self.failed(method, e),
        }
    }

    fn simulated(&self, draw: &SimDraw, rng: &mut ChaCha8Rng) -> Vec<TrialRow> {
        let tau = self.cfg.tau;
        let train = &draw.train;
        let n = train.n();
        let grid = default_lambda_grid(n, self.cfg.lambda_top);
        let qr = || fit(train, &ProblemSpec::new(tau, 0.0)?, self.solver);
        match self.figure {
            Figure::Fig1 => vec![self.fitted("qr", qr(), draw)],
            Figure::Fig2 => vec![self.calibrated("level", calibrate_level(train, tau, 0.0, self.solver), draw)],
            Figure::Fig3 => vec![
                self.calibrated("level", calibrate_level(train, tau, 0.0, self.solver), draw),
                self.calibrated("level-ridge", calibrate_level_ridge(train, tau, &grid, self.solver), draw),
                self.calibrated("reg-only", calibrate_regularization(train, tau, &grid, self.solver), draw),
            ],
            Figure::Fig4 => {
                let mut rows = vec![self.calibrated(
                    "additive",
                    calibrate_additive(train, tau, 0.0, self.cfg.c_range, self.solver),
                    draw,
                )];
                for &c in &self.cfg.c_values {
                    let f = ProblemSpec::new(tau, 0.0).and_then(|s| fit(train, &s.with_offset(c), self.solver));
                    let mut row = self.fitted("additive-fixed", f, draw);
                    row.c = Some(c);
                    row.variant = format!("c={c}");
                    rows.push(row);
                }
                rows
            }
            Figure::Fig5 => vec![self.gcc_conditional(draw, rng)],
            Figure::Fig6 => vec![
                self.fitted("qr", qr(), draw),
                self.calibrated("level-ridge", calibrate_level_ridge(train, tau, &grid, self.solver), draw),
                self.calibrated(
                    "additive-ridge",
                    calibrate_additive_ridge(train, tau, &grid, self.cfg.c_range, self.solver),
                    draw,
                ),
                self.fixed_threshold(draw),
            ],
            Figure::Fig7 => unreachable!("CSV protocol is handled separately"),
        }
    }

    fn gcc_conditional(&self, draw: &SimDraw, rng: &mut ChaCha8Rng) -> TrialRow {
        let tau = self.cfg.tau;
        let u = rng.random_range(-(1.0 - tau)..tau);
        let bins = self.cfg.u_bins;
        let width = 1.0 / bins as f64;
        let k = (((u + 1.0 - tau) / width).floor() as usize).min(bins - 1);
        let lo = -(1.0 - tau) + k as f64 * width;
        let variant = format!("u-bin{k:02}[{lo:.3},{:.3})", lo + width);
        let run = || -> Result<(f64, bool)> {
            let spec = ProblemSpec::new(tau, 0.0)?;
            let p = DualThresholdPredictor::new(&draw.train, &spec, self.solver)?;
            let x = draw.test.row(0);
            let cut = p.randomized_gcc_predict(x.as_slice(), u)?;
            Ok((cut.value, draw.test.response()[0] <= cut.value))
        };
        match run() {
            Ok((cutoff, covered)) => TrialRow {
                u: Some(u),
                cutoff: Some(cutoff),
                coverage: Some(covered as u8 as f64),
                miscoverage: Some(1.0 - covered as u8 as f64),
                variant,
                ..self.row("gcc-rand")
            },
            Err(e) => TrialRow {
                u: Some(u),
                variant,
                ..self.failed("gcc-rand", e)
            },
        }
    }

    /// Coverage of the fixed-threshold cutoff, using Y ≤ cutoff ⟺ η̂(Y) ≤ t̂
    /// so each test point costs one augmented fit.
    fn fixed_threshold(&self, draw: &SimDraw) -> TrialRow {
        let run = || -> Result<(f64, f64)> {
            let spec = ProblemSpec::new(self.cfg.tau, 0.0)?;
            let p = DualThresholdPredictor::new(&draw.train, &spec, self.solver)?;
            let t = p.fixed_threshold()?;
            let test = &draw.test;
            let mut hits = 0usize;
            for i in 0..test.n() {
                let x = test.row(i);
                if p.covers(x.as_slice(), test.response()[i], t)? {
                    hits += 1;
                }
            }
            Ok((hits as f64 / test.n() as f64, t))
        };
        match run() {
            Ok((coverage, t)) => TrialRow {
                coverage: Some(coverage),
                miscoverage: Some(1.0 - coverage),
                lambda: Some(0.0),
                u: Some(t),
                ..self.row("fixed-thresh")
            },
            Err(e) => self.failed("fixed-thresh", e),
        }
    }

    fn csv_trial(&self, data: &Dataset) -> Vec<TrialRow> {
        let cfg = self.cfg;
        let mut rng = trial_rng(cfg.seed, self.trial);
        let n_train = self.setting.n;
        let d = self.setting.d;
        let mut split = || -> Result<(Dataset, DMatrix<f64>, Vec<f64>, f64)> {
            if n_train >= data.n() {
                return Err(Error::domain(format!("train size {n_train} leaves no test rows")));
            }
            if d > data.d() {
                return Err(Error::domain(format!("{d} features requested, dataset has {}", data.d())));
            }
            let mut order: Vec<usize> = (0..data.n()).collect();
            order.shuffle(&mut rng);
            let n_test = cfg.n_test.min(data.n() - n_train);
            let mut columns = sample(&mut rng, data.d(), d).into_vec();
            columns.sort_unstable();
            let sub = data.select_columns(&columns);
            let train = normalize(&sub.select_rows(&order[..n_train]))?;
            let test = sub.select_rows(&order[n_train..n_train + n_test]);
            let norm = train.normalization().expect("normalized").clone();
            let mut x_test = DMatrix::zeros(n_test, d);
            for i in 0..n_test {
                let row = norm.apply_features(test.row(i).as_slice());
                x_test.row_mut(i).copy_from_slice(&row);
            }
            let y_test = test.response().iter().map(|&y| norm.apply_response(y)).collect();
            Ok((train, x_test, y_test, norm.response_scale))
        };
        let (train, x_test, y_test, scale) = match split() {
            Ok(s) => s,
            Err(e) => return vec![self.failed("split", e)],
        };
        let mut options = IntervalOptions::for_n(train.n());
        options.lambda_grid = default_lambda_grid(train.n(), cfg.lambda_top);
        options.c_range = cfg.c_range;
        options.seed = rng.random();
        cfg.methods
            .iter()
            .map(|&m| {
                let run = interval_predict(m, &train, cfg.alpha, self.solver, &x_test, &options)
                    .and_then(|iv| evaluate(&iv, &y_test, &x_test, cfg.alpha));
                match run {
                    Ok(rep) => TrialRow {
                        coverage: Some(rep.coverage),
                        miscoverage: Some(1.0 - rep.coverage),
                        median_length: Some(rep.median_length * scale),
                        multiaccuracy: Some(rep.multiaccuracy),
                        ..self.row(m.name())
                    },
                    Err(e) => self.failed(m.name(), e),
                }
            })
            .collect()
    }
}

/// Runs a figure protocol. `data` is required for [`Figure::Fig7`], where
/// each setting is (train size, number of sampled features).
pub fn run_figure(cfg: &FigureConfig, data: Option<&Dataset>, solver: &SolverConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.figure == Figure::Fig7 && data.is_none() {
        return Err(Error::domain("the CSV protocol needs an input dataset"));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.settings.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let per_job: Vec<Vec<TrialRow>> = jobs
        .par_iter()
        .map(|&(s, trial)| {
            let ctx = Ctx {
                figure: cfg.figure,
                setting: cfg.settings[s],
                trial,
                cfg,
                solver,
            };
            if let Some(data) = data.filter(|_| cfg.figure == Figure::Fig7) {
                let sub = FigureConfig {
                    seed: cfg.seed.wrapping_add(SETTING_STRIDE.wrapping_mul(s as u64)),
                    ..cfg.clone()
                };
                let ctx = Ctx { cfg: &sub, ..ctx };
                return ctx.csv_trial(data);
            }
            let sim = cfg.simulation(s);
            let mut rng = trial_rng(sim.seed, trial);
            match draw_with(&mut rng, &sim) {
                Ok(draw) => ctx.simulated(&draw, &mut rng),
                Err(e) => vec![ctx.failed("generate", e)],
            }
        })
        .collect();
    let rows: Vec<TrialRow> = per_job.into_iter().flatten().collect();
    if rows.iter().all(|r| r.error.is_some()) {
        let first = rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::domain(format!("every trial failed; first error: {first}")));
    }
    let aggregates = aggregate(&rows);
    Ok(ExperimentReport {
        config: cfg.clone(),
        rows,
        aggregates,
    })
}

impl ExperimentReport {
    pub fn write_rows_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Writes rows as CSV or the full report as JSON, by file extension.
    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => self.write_json(file),
            _ => self.write_rows_csv(file),
        }
    }
}
