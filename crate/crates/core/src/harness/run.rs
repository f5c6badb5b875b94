//! Task execution: every run builds its files in memory from one root
//! stream, so reruns with the same config and seed are byte-identical.

use std::path::Path;

use super::config::{ExperimentConfig, Model, Task};
use super::output::{line_chart, Artifacts, Cell, Series, Summary, Table};
use crate::asip::{block_index, run_pipeline, variance_drift_check, AsipOptions, BlockScheme, CouplingMethod};
use crate::coeffs::{estimate_delta, estimate_sup_delta_pairs, fit_decay, fit_tail, DeltaEstimate, DeltaOptions};
use crate::deviations::{
    centre_agreement, coefficient_alignment, ldp_cocycle, ldp_norm, ldp_wedge, lyapunov_centre, regularity_check,
    spectral_radius_gap, DeviationReport, ExceedanceCell, LdpOptions, LyapunovCentre, ProbeSet,
};
use crate::error::Error;
use crate::models::{
    simulate_trajectory, stationary_observables, stationary_sample, Centered, InnovationStream,
    MarkovModel, MatrixModel,
};
use crate::models::matrix::lyapunov_estimate;
use crate::numlin::{NormKind, ProjectivePoint};
use crate::variance::{
    certified_horizon, covariance_set, covariance_sum, decay_tail_sum, estimate_autocov, nu_from_set, sigma2_estimate,
    CovOptions, QuantileEnvelope,
};

/// Largest lag the variance task will certify a tail sum at.
const HORIZON_CAP: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure in {id}: {detail}")]
    Numerical { id: String, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical { .. } | HarnessError::Io(_) => 3,
        }
    }

    /// Library errors raised while running operation `id`. Bad inputs and
    /// missing capabilities are configuration problems.
    pub fn from_library(id: &str, e: Error) -> Self {
        match e {
            Error::InvalidInput(d) => HarnessError::Config(format!("{id}: {d}")),
            Error::Capability(d) => HarnessError::Config(format!("{id}: {d}")),
            Error::Numerical { module, operation, .. } => HarnessError::Numerical {
                id: format!("{module}::{operation}"),
                detail: e.to_string(),
            },
            other => HarnessError::Numerical {
                id: id.to_string(),
                detail: other.to_string(),
            },
        }
    }
}

type HResult<T> = std::result::Result<T, HarnessError>;

fn at(id: &'static str) -> impl FnOnce(Error) -> HarnessError {
    move |e| HarnessError::from_library(id, e)
}

/// Parses, runs and returns the report files; nothing touches the disk.
pub fn run_text(raw: &str, plots: bool) -> HResult<Artifacts> {
    let cfg = ExperimentConfig::parse(raw).map_err(|e| HarnessError::Config(e.to_string()))?;
    run(&cfg, raw, plots)
}

/// Runs `cfg`; `raw` is echoed as `config.toml`.
pub fn run(cfg: &ExperimentConfig, raw: &str, plots: bool) -> HResult<Artifacts> {
    cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let model = cfg.model.build(cfg.burn_in).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut ctx = Ctx {
        cfg,
        root: InnovationStream::new(cfg.seed),
        plots,
        files: Artifacts::default(),
        summary: Summary::default(),
        scheme: None,
        centre: None,
    };
    ctx.files.insert("config.toml", raw.as_bytes().to_vec());
    ctx.summary.set("task", cfg.task.name());
    ctx.summary.set("seed", cfg.seed);
    match cfg.task {
        Task::Simulate => ctx.simulate(&model)?,
        Task::Delta => {
            let grid: Vec<usize> = cfg.n_grid.iter().map(|&n| n as usize).collect();
            ctx.delta(&model, &grid, cfg.replicates)?;
        }
        Task::Tail => ctx.tail(&model)?,
        Task::Lyapunov => ctx.lyapunov(matrix_only(&model, "lyapunov")?)?,
        Task::Variance => ctx.variance(&model)?,
        Task::Asip => ctx.asip(&model)?,
        Task::Deviations => ctx.deviations(matrix_only(&model, "deviations")?)?,
        Task::FullReport => {
            ctx.scheme(&model)?;
            if let Model::Matrix(m) = &model {
                ctx.lyapunov(m)?;
                ctx.deviations(m)?;
                ctx.variance(&model)?;
            } else {
                ctx.variance(&model)?;
                ctx.asip(&model)?;
            }
        }
    }
    let summary = std::mem::take(&mut ctx.summary);
    ctx.files.insert("summary.json", summary.to_json());
    Ok(ctx.files)
}

/// Writes every artifact into `dir`.
pub fn write_artifacts(files: &Artifacts, dir: &Path) -> HResult<()> {
    Ok(files.write_to(dir)?)
}

fn matrix_only<'m>(model: &'m Model, task: &str) -> HResult<&'m MatrixModel> {
    match model {
        Model::Matrix(m) => Ok(m),
        Model::Ar(_) => Err(HarnessError::Config(format!("task {task} needs a matrix model"))),
    }
}

fn key_f(v: f64) -> String {
    v.to_string()
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    root: InnovationStream,
    plots: bool,
    files: Artifacts,
    summary: Summary,
    scheme: Option<BlockScheme>,
    centre: Option<LyapunovCentre>,
}

/// Calls `$body` with `$m` bound to the AR model or to the matrix model
/// centred at `λ̂`.
macro_rules! with_observable {
    ($ctx:ident, $model:expr, |$m:ident| $body:expr) => {
        match $model {
            Model::Ar(a) => {
                let $m = a;
                $body
            }
            Model::Matrix(mm) => {
                let lambda = $ctx.centre(mm)?.lambda;
                let centred = Centered::new(mm.clone(), lambda);
                let $m = &centred;
                $body
            }
        }
    };
}

impl Ctx<'_> {
    fn table(&mut self, name: &str, t: &Table) {
        self.files.insert(name, t.to_csv());
    }

    fn chart(&mut self, name: &str, title: &str, x: &str, y: &str, series: Vec<Series>, log_x: bool) {
        if self.plots {
            self.files.insert(name, line_chart(title, x, y, &series, log_x));
        }
    }

    fn centre(&mut self, model: &MatrixModel) -> HResult<LyapunovCentre> {
        if let Some(c) = self.centre {
            return Ok(c);
        }
        let dev = &self.cfg.deviations;
        let c = lyapunov_centre(model, dev.centre_steps, dev.centre_replicates, &self.root.fork("centre"))
            .map_err(at("deviations::lyapunov_centre"))?;
        self.summary.num("lambdaCentre", c.lambda);
        self.summary.num("lambdaCentre.stderr", c.stderr);
        self.summary.num("lambdaWedgeCentre", c.wedge);
        if self.summary.get("lambdaHat").is_none() {
            self.summary.num("lambdaHat", c.lambda);
            self.summary.num("lambdaHat.stderr", c.stderr);
        }
        self.centre = Some(c);
        Ok(c)
    }

    fn simulate(&mut self, model: &Model) -> HResult<()> {
        let n = *self.cfg.n_grid.last().expect("validated grid") as usize;
        let stream = self.root.fork("simulate");
        let path = match model {
            Model::Ar(m) => one_path(m, n, &stream),
            Model::Matrix(m) => one_path(m, n, &stream),
        };
        let mut t = Table::new(&["n", "X_n", "S_n"]);
        for (i, (x, s)) in path.x.iter().zip(&path.s).enumerate() {
            t.push(vec![(i + 1).into(), (*x).into(), (*s).into()]);
        }
        self.table("trajectory.csv", &t);
        self.summary.num("simulate.S_n", *path.s.last().unwrap_or(&0.0));
        self.summary.num("simulate.meanX", crate::stats::mean(&path.x));
        let pts = path.s.iter().enumerate().map(|(i, &s)| ((i + 1) as f64, s)).collect();
        self.chart("trajectory.svg", "partial sums", "n", "S_n", vec![Series { label: "S_n".into(), points: pts }], false);
        Ok(())
    }

    fn delta(&mut self, model: &Model, grid: &[usize], replicates: usize) -> HResult<Option<DeltaEstimate>> {
        let opts = DeltaOptions {
            replicates,
            burn_in: self.cfg.burn_in,
            sensitivity: false,
        };
        let stream = self.root.fork("delta");
        let est = match model {
            Model::Ar(m) => estimate_delta(m, grid, opts, &stream),
            Model::Matrix(m) => estimate_delta(m, grid, opts, &stream),
        }
        .map_err(at("coeffs::estimate_delta"))?;
        let mut t = Table::new(&["n", "deltaHat", "stderr", "replicates"]);
        for ((&n, &d), &se) in est.n_grid.iter().zip(&est.delta_hat).zip(&est.stderr) {
            t.push(vec![n.into(), d.into(), se.into(), est.replicates.into()]);
            self.summary.num(format!("deltaHat.{n}"), d);
        }
        self.table("delta.csv", &t);
        match fit_decay(&est) {
            Ok(fit) => {
                let mut t = Table::new(&["c", "gamma1", "r2"]);
                t.push(vec![fit.c.into(), fit.gamma1.into(), fit.r2.into()]);
                self.table("decay_fit.csv", &t);
                self.summary.num("cHat", fit.c);
                self.summary.num("gamma1Hat", fit.gamma1);
                self.summary.num("decayFit.r2", fit.r2);
            }
            Err(e) => self.summary.set("decayFit.status", e.to_string()),
        }
        let pts = est.n_grid.iter().zip(&est.delta_hat).map(|(&n, &d)| (n as f64, d)).collect();
        self.chart("delta.svg", "coupling coefficients", "n", "deltaHat", vec![Series { label: "deltaHat".into(), points: pts }], false);
        if let Model::Matrix(m) = model {
            self.sup_delta(m, grid, replicates)?;
        }
        Ok(Some(est))
    }

    fn sup_delta(&mut self, model: &MatrixModel, grid: &[usize], replicates: usize) -> HResult<()> {
        let probes = ProbeSet::standard(model.dim(), model.norm_kind(), 0, &self.root.fork("probes"))
            .map_err(at("deviations::probes"))?;
        let pairs = probes
            .pairs
            .iter()
            .map(|p| {
                Ok((
                    ProjectivePoint::new(p.x.clone(), model.norm_kind())?,
                    ProjectivePoint::new(p.y.clone(), model.norm_kind())?,
                ))
            })
            .collect::<crate::Result<Vec<_>>>()
            .map_err(at("coeffs::estimate_sup_delta_pairs"))?;
        if pairs.is_empty() {
            return Ok(());
        }
        let est = estimate_sup_delta_pairs(model, grid, &pairs, replicates.max(2), &self.root.fork("sup-delta"))
            .map_err(at("coeffs::estimate_sup_delta_pairs"))?;
        let mut t = Table::new(&["k", "supDelta", "stderr", "pair"]);
        for j in 0..est.k_grid.len() {
            let pair = probes.pairs[est.argmax[j]].label.clone();
            t.push(vec![est.k_grid[j].into(), est.estimate[j].into(), est.stderr[j].into(), pair.into()]);
        }
        self.table("sup_delta.csv", &t);
        Ok(())
    }

    fn tail(&mut self, model: &Model) -> HResult<()> {
        let draws = self.cfg.fit.tail_samples;
        let burn = self.cfg.burn_in;
        let stream = self.root.fork("tail");
        let xs = with_observable!(self, model, |m| {
            stationary_observables(m, draws, burn.unwrap_or_else(|| m.default_burn_in()), &stream)
        });
        let abs: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        let fit = fit_tail(&abs).map_err(at("coeffs::fit_tail"))?;
        let mut t = Table::new(&["b", "gamma2"]);
        t.push(vec![fit.b.into(), Cell::Text(key_f(fit.gamma2))]);
        self.table("tail_fit.csv", &t);
        let mut g = Table::new(&["t", "exceedProb", "envelope"]);
        for &(x, p) in &fit.grid {
            g.push(vec![x.into(), p.into(), fit.envelope(x).into()]);
        }
        self.table("tail_grid.csv", &g);
        self.summary.num("bHat", fit.b);
        self.summary.num("gamma2Hat", fit.gamma2);
        self.summary.set("tailFit.gridViolations", fit.grid_violations);
        Ok(())
    }

    /// The configured scheme, or one fitted from `δ̂` and the tail of `|X|`.
    fn scheme(&mut self, model: &Model) -> HResult<BlockScheme> {
        if let Some(s) = &self.scheme {
            return Ok(s.clone());
        }
        let scheme = match &self.cfg.scheme {
            Some(spec) => {
                self.summary.set("scheme.source", "config");
                spec.build().map_err(|e| HarnessError::Config(e.to_string()))?
            }
            None => {
                self.summary.set("scheme.source", "fitted");
                let grid = self.cfg.fit.delta_grid.clone();
                let est = self.delta(model, &grid, self.cfg.fit.delta_replicates)?.expect("delta estimate");
                let decay = fit_decay(&est).map_err(at("coeffs::fit_decay"))?;
                self.tail(model)?;
                let b = self.summary_f("bHat");
                let gamma2 = self.summary_f("gamma2Hat");
                BlockScheme::new(decay.gamma1, gamma2, decay.c, b).map_err(at("asip::block_scheme"))?
            }
        };
        self.echo_scheme(&scheme)?;
        self.scheme = Some(scheme.clone());
        Ok(scheme)
    }

    fn summary_f(&self, key: &str) -> f64 {
        match self.summary.get(key) {
            Some(serde_json::Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
            Some(serde_json::Value::String(s)) => s.parse().unwrap_or(f64::NAN),
            _ => f64::NAN,
        }
    }

    fn echo_scheme(&mut self, s: &BlockScheme) -> HResult<()> {
        let top = block_index(*self.cfg.n_grid.last().expect("validated grid")).map_err(at("asip::block_index"))?;
        let s_ = &mut self.summary;
        s_.num("scheme.gamma1", s.gamma1);
        s_.num("scheme.gamma2", s.gamma2);
        s_.num("scheme.c", s.c);
        s_.num("scheme.b", s.b);
        s_.num("scheme.c1", s.c1);
        s_.num("scheme.c2", s.c2);
        s_.num("scheme.alpha", s.alpha);
        s_.set("scheme.k0", s.k0);
        let mut t = Table::new(&["k", "M_k", "m_k", "blockStart", "blockEnd"]);
        for r in s.rows(top) {
            s_.num(format!("scheme.M_k.{}", r.k), r.big_m);
            s_.set(format!("scheme.m_k.{}", r.k), r.m);
            t.push(vec![r.k.into(), r.big_m.into(), r.m.into(), r.start.into(), r.end.into()]);
        }
        self.table("scheme.csv", &t);
        Ok(())
    }

    fn lyapunov(&mut self, model: &MatrixModel) -> HResult<()> {
        let stream = self.root.fork("lyapunov");
        let mut t = Table::new(&["n", "lambdaHat", "stderr", "lambdaWedgeHat", "stderrWedge", "gammaHat"]);
        let mut last = None;
        let mut pts = Vec::new();
        for &n in &self.cfg.n_grid {
            let e = lyapunov_estimate(model, n as usize, self.cfg.replicates, &stream.child(n))
                .map_err(at("models::lyapunov_estimate"))?;
            t.push(vec![
                n.into(),
                e.lambda.into(),
                e.stderr.into(),
                e.lambda_wedge.into(),
                e.stderr_wedge.into(),
                (e.lambda_wedge - e.lambda).into(),
            ]);
            pts.push((n as f64, e.lambda));
            last = Some(e);
        }
        self.table("lyapunov.csv", &t);
        self.chart("lyapunov.svg", "top exponent", "n", "lambdaHat", vec![Series { label: "lambdaHat".into(), points: pts }], true);
        let e = last.expect("validated grid");
        self.summary.num("lambdaHat", e.lambda);
        self.summary.num("lambdaHat.stderr", e.stderr);
        self.summary.num("lambdaWedgeHat", e.lambda_wedge);
        self.summary.num("gammaHat", e.lambda_wedge - e.lambda);
        Ok(())
    }

    fn variance(&mut self, model: &Model) -> HResult<()> {
        let scheme = self.scheme(model)?;
        let cfg = self.cfg;
        let stream = self.root.fork("variance");
        let grid: Vec<usize> = cfg.n_grid.iter().map(|&n| n as usize).collect();
        let env = QuantileEnvelope::new(scheme.b, scheme.gamma2).map_err(at("variance::quantile_envelope"))?;
        let tail = move |h: usize| decay_tail_sum(&env, scheme.c, scheme.gamma1, h);
        let (est, cross, sets) = with_observable!(self, model, |m| {
            let est = sigma2_estimate(m, &grid, cfg.replicates, &stream.fork("sigma2"), None)
                .map_err(at("variance::sigma2_estimate"))?;
            let h = certified_horizon(est.sigma2, 0, &tail, HORIZON_CAP).map_err(at("variance::certified_horizon"))?;
            let lags: Vec<usize> = (0..=h).collect();
            let auto = estimate_autocov(m, &lags, h + 1, cfg.variance.cov_replicates, &stream.fork("autocov"))
                .map_err(at("variance::estimate_autocov"))?;
            let mut sets = Vec::new();
            for &k in &cfg.variance.blocks {
                let mk = scheme.lag(k) as usize;
                let h = certified_horizon(est.sigma2, mk, &tail, HORIZON_CAP).map_err(at("variance::certified_horizon"))?;
                let lags: Vec<usize> = (0..=h).collect();
                let opts = CovOptions {
                    replicates: cfg.variance.cov_replicates,
                    inner: cfg.variance.inner,
                    burn_in: cfg.burn_in,
                };
                let set = covariance_set(m, &scheme, k, &lags, opts, &stream.fork("cov").child(k as u64))
                    .map_err(at("variance::covariance_set"))?;
                sets.push(set);
            }
            (est, covariance_sum(&auto), sets)
        });
        let sigma2_se = est.per_n.last().map_or(f64::NAN, |p| p.2);
        let mut var_sn = Table::new(&["n", "varSn_over_n", "stderr"]);
        for &(n, v, se) in &est.per_n {
            var_sn.push(vec![n.into(), v.into(), se.into()]);
        }
        self.table("var_sn.csv", &var_sn);
        self.summary.num("sigma2Hat", est.sigma2);
        self.summary.num("sigma2Hat.stderr", sigma2_se);
        self.summary.num("sigma2CrossCheck", cross);
        if let Some(w) = &est.warning {
            self.summary.set("sigma2Hat.warning", w.clone());
        }

        let mut nu_rows = Vec::new();
        let mut nu_t = Table::new(&["k", "nu_k", "stderr", "m_k"]);
        for set in &sets {
            let mut t = Table::new(&[
                "lag",
                "gamma",
                "gammaTrunc_k",
                "gammaTilde_k",
                "stderr",
                "stderrTrunc_k",
                "stderrTilde_k",
            ]);
            for (p, &lag) in set.plain.lags.iter().enumerate() {
                t.push(vec![
                    lag.into(),
                    set.plain.gamma[p].into(),
                    set.trunc.gamma[p].into(),
                    set.tilde.gamma[p].into(),
                    set.plain.stderr[p].into(),
                    set.trunc.stderr[p].into(),
                    set.tilde.stderr[p].into(),
                ]);
            }
            self.table(&format!("autocov_k{}.csv", set.k), &t);
            let nu = nu_from_set(est.sigma2, set, &tail).map_err(at("variance::nu_k"))?;
            let se = nu_stderr(set, sigma2_se);
            nu_t.push(vec![set.k.into(), nu.into(), se.into(), set.m.into()]);
            self.summary.num(format!("nuHat.{}", set.k), nu);
            nu_rows.push((set.k, nu, se));
        }
        self.table("nu.csv", &nu_t);
        if !nu_rows.is_empty() {
            let drift = variance_drift_check(&nu_rows, est.sigma2, sigma2_se, &scheme, &cfg.n_grid)
                .map_err(at("asip::variance_drift_check"))?;
            let mut t = Table::new(&["k", "m", "nu", "stderr", "gap"]);
            for r in &drift.rows {
                t.push(vec![r.k.into(), r.m.into(), r.nu.into(), r.stderr.into(), r.gap.into()]);
            }
            self.table("variance_drift.csv", &t);
            let mut t = Table::new(&["n", "statistic", "envelope", "ratio"]);
            for r in &drift.envelope {
                t.push(vec![r.n.into(), r.statistic.into(), r.envelope.into(), r.ratio.into()]);
            }
            self.table("variance_envelope.csv", &t);
            self.summary.num("varianceDrift.trend", drift.trend);
            self.summary.set("varianceDrift.withinNoise", drift.within_noise);
        }
        let pts = est.per_n.iter().map(|p| (p.0 as f64, p.1)).collect();
        self.chart("var_sn.svg", "Var(S_n)/n", "n", "Var(S_n)/n", vec![Series { label: "Var(S_n)/n".into(), points: pts }], true);
        Ok(())
    }

    fn asip(&mut self, model: &Model) -> HResult<()> {
        let scheme = self.scheme(model)?;
        let cfg = self.cfg;
        let a = &cfg.asip;
        let opts = AsipOptions {
            n_grid: cfg.n_grid.clone(),
            paths: cfg.replicates,
            inner: a.inner,
            clip_draws: a.clip_draws,
            cov_replicates: a.cov_replicates,
            method: match a.method.as_str() {
                "sub_block_quantile" => CouplingMethod::SubBlockQuantile {
                    calibration: a.calibration,
                },
                _ => CouplingMethod::Whitening,
            },
            burn_in: cfg.burn_in,
            bootstrap: a.bootstrap,
            observable_mean: a.control_variate.then_some(a.observable_mean),
        };
        let stream = self.root.fork("asip");
        let run = with_observable!(self, model, |m| run_pipeline(m, &scheme, &opts, &stream))
            .map_err(at("asip::run_pipeline"))?;
        let c = &run.coupling;

        let mut paths = Table::new(&["path", "n", "S_n", "Sdag_n", "Stilde_n", "G_n", "D_n", "truncErr_n", "mdepErr_n"]);
        for (p, path) in c.paths.iter().enumerate() {
            for (q, &n) in c.n_grid.iter().enumerate() {
                let [s, dag, tilde, g] = path.sums[q];
                paths.push(vec![
                    p.into(),
                    n.into(),
                    s.into(),
                    dag.into(),
                    tilde.into(),
                    g.into(),
                    path.d[q].into(),
                    path.trunc_err[q].into(),
                    path.mdep_err[q].into(),
                ]);
            }
        }
        self.table("asip_paths.csv", &paths);

        let mut t = Table::new(&["n", "D_n", "stderr", "D_over_n_quarter", "truncErr_n", "mdepErr_n", "tildeGap_n"]);
        for (q, &n) in c.n_grid.iter().enumerate() {
            let ratio = c.d[q] / (n as f64).powf(0.25);
            t.push(vec![
                n.into(),
                c.d[q].into(),
                c.d_stderr[q].into(),
                ratio.into(),
                c.trunc_err[q].into(),
                c.mdep_err[q].into(),
                c.tilde_gap[q].into(),
            ]);
            self.summary.num(format!("D_n.{n}"), c.d[q]);
        }
        self.table("asip.csv", &t);

        let mut b = Table::new(&["k", "m_k", "mdepErr", "stderr"]);
        for e in &run.block_errors {
            b.push(vec![e.k.into(), scheme.lag(e.k).into(), e.mean.into(), e.stderr.into()]);
        }
        self.table("block_errors.csv", &b);
        let mut nu = Table::new(&["k", "nu_hat"]);
        for &(k, v) in &run.nu_hat {
            nu.push(vec![k.into(), v.into()]);
        }
        self.table("asip_nu.csv", &nu);

        let s = &mut self.summary;
        s.set("asip.method", a.method.clone());
        s.num("asip.nuTarget", c.nu_target);
        s.set("asip.telescopingViolations", c.telescoping_violations);
        s.set("asip.repairedBlocks", run.repaired.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "));
        match &c.fit {
            Some(f) => {
                s.num("pHat", f.exponent);
                s.num("pHat.ciLow", f.ci.0);
                s.num("pHat.ciHigh", f.ci.1);
                s.num("CHat", f.scale);
                s.set("pHat.degenerate", f.degenerate);
            }
            None => s.set("pHat", "unavailable"),
        }
        if let Some(f) = &run.truncation_fit {
            s.num("truncErr.pHat", f.exponent);
            s.num("truncErr.ciLow", f.ci.0);
            s.num("truncErr.ciHigh", f.ci.1);
        }
        let grid: Vec<f64> = c.n_grid.iter().map(|&n| n as f64).collect();
        let series = vec![
            Series {
                label: "D_n".into(),
                points: grid.iter().copied().zip(c.d.iter().copied()).collect(),
            },
            Series {
                label: "truncErr_n".into(),
                points: grid.iter().copied().zip(c.trunc_err.iter().copied()).collect(),
            },
            Series {
                label: "mdepErr_n".into(),
                points: grid.iter().copied().zip(c.mdep_err.iter().copied()).collect(),
            },
        ];
        self.chart("asip.svg", "coupling distances", "n", "mean over paths", series, true);
        Ok(())
    }

    fn deviations(&mut self, model: &MatrixModel) -> HResult<()> {
        let cfg = self.cfg;
        let dev = &cfg.deviations;
        let centre = self.centre(model)?;
        let stream = self.root.fork("deviations");
        let agreement = centre_agreement(model, &centre, dev.centre_steps, dev.centre_replicates, &stream.fork("agreement"))
            .map_err(at("deviations::centre_agreement"))?;
        self.summary.num("lambdaCentre.agreementSigmas", agreement);
        let probes = ProbeSet::standard(model.dim(), model.norm_kind(), dev.random_probes, &stream.fork("probes"))
            .map_err(at("deviations::probes"))?;
        let opts = LdpOptions {
            n_grid: cfg.n_grid.iter().map(|&n| n as usize).collect(),
            epsilon: dev.epsilon,
            replicates: cfg.replicates,
        };
        let mut reports = vec![
            ldp_cocycle(model, &probes, &opts, &centre, &stream).map_err(at("deviations::ldp"))?,
            ldp_norm(model, &opts, &centre, &stream).map_err(at("deviations::ldp"))?,
        ];
        if model.norm_kind() == NormKind::Euclidean {
            reports.push(ldp_wedge(model, &opts, &centre, &stream).map_err(at("deviations::ldp"))?);
        } else {
            self.summary.set("ldp.wedge.status", "skipped: positive law");
        }
        let mut series = Vec::new();
        for r in &reports {
            let name = match r.observable {
                crate::deviations::DeviationObservable::Cocycle => "cocycle",
                crate::deviations::DeviationObservable::Norm => "norm",
                crate::deviations::DeviationObservable::Wedge => "wedge",
            };
            self.table(&format!("deviations_{name}.csv"), &exceedance_table(r));
            self.summary.num(format!("ldp.{name}.trend"), r.trend);
            self.summary.num(format!("ldp.{name}.slope"), r.slope.unwrap_or(f64::NAN));
            self.summary.num(format!("ldp.{name}.centre"), r.centre);
            self.summary.num(format!("ldp.{name}.gamma"), r.gamma);
            if r.observable == crate::deviations::DeviationObservable::Norm {
                self.summary.set("ldp.norm.sandwichViolations", r.sandwich_violations);
            }
            if !r.caveats.is_empty() {
                self.summary.set(format!("ldp.{name}.caveats"), r.caveats.join("; "));
            }
            series.push(Series {
                label: name.into(),
                points: r.per_n.iter().map(|c| (c.n as f64, c.point())).collect(),
            });
        }
        self.chart("deviations.svg", "exceedance probabilities", "n", "P", series, true);

        let gamma = match model.law().moment_index() {
            g if g.is_finite() => g,
            _ => 1.0,
        };
        let reg = regularity_check(
            model,
            &probes,
            &dev.etas,
            gamma,
            &dev.regularity_grid,
            dev.regularity_replicates,
            &stream,
        )
        .map_err(at("deviations::regularity_check"))?;
        let mut t = Table::new(&["eta", "gamma", "probe", "statistic", "n", "stderr"]);
        for r in &reg.rows {
            let stat = r.statistic.map_or(Cell::Text("inf".into()), Cell::Float);
            t.push(vec![r.eta.into(), r.gamma.into(), r.probe.clone().into(), stat, r.n.into(), r.stderr.into()]);
        }
        self.table("regularity.csv", &t);
        for st in &reg.stability {
            let key = format!("regularity.ratio.{}", key_f(st.eta));
            match st.ratio {
                Some(v) => self.summary.num(key, v),
                None => self.summary.set(key, "divergent"),
            }
        }

        let mut t = Table::new(&["pair", "n", "samples", "censored", "q50", "q95", "envelope", "identityErr"]);
        let mut worst = 0.0f64;
        let mut within = true;
        for p in &probes.pairs {
            let a = coefficient_alignment(model, &p.x, &p.y, &dev.alignment_grid, dev.alignment_replicates, &stream)
                .map_err(at("deviations::coefficient_alignment"))?;
            worst = worst.max(a.identity_err);
            within &= a.within_envelope;
            for r in &a.rows {
                t.push(vec![
                    p.label.clone().into(),
                    r.n.into(),
                    r.samples.into(),
                    r.censored.into(),
                    Cell::Text(key_f(r.q50)),
                    Cell::Text(key_f(r.q95)),
                    r.envelope.into(),
                    r.identity_err.into(),
                ]);
            }
        }
        self.table("alignment.csv", &t);
        self.summary.num("alignment.identityErr", worst);
        self.summary.set("alignment.withinEnvelope", within);

        let gap = spectral_radius_gap(model, &dev.gap_grid, &dev.gap_ells, dev.gap_epsilon, dev.gap_replicates, &stream)
            .map_err(at("deviations::spectral_radius_gap"))?;
        let mut t = Table::new(&["n", "ell", "epsilon", "exceedProb", "ciLow", "ciHigh"]);
        for r in &gap.rows {
            t.push(vec![
                r.n.into(),
                r.ell.into(),
                gap.epsilon.into(),
                prob_cell(&r.event),
                r.event.ci_low.into(),
                r.event.ci_high.into(),
            ]);
        }
        self.table("spectral_gap.csv", &t);
        self.summary.set("spectralGap.boundViolations", gap.bound_violations);
        for &(n, tau) in &gap.trend {
            self.summary.num(format!("spectralGap.trend.{n}"), tau);
        }
        Ok(())
    }
}

fn one_path<M: MarkovModel>(model: &M, n: usize, stream: &InnovationStream) -> crate::models::Trajectory {
    let w0 = stationary_sample(model, model.default_burn_in(), &mut stream.fork("start"));
    simulate_trajectory(model, w0, n, &mut stream.fork("path")).0
}

/// Empty cells are never reported as `0`: the column holds the
/// rule-of-three bound instead.
fn prob_cell(c: &ExceedanceCell) -> Cell {
    match c.prob {
        Some(p) => Cell::Float(p),
        None => Cell::Text(format!("<{}", c.ci_high)),
    }
}

fn exceedance_table(r: &DeviationReport) -> Table {
    let mut t = Table::new(&["n", "epsilon", "probe", "exceedProb", "ciLow", "ciHigh", "count", "trials"]);
    for c in &r.cells {
        t.push(vec![
            c.n.into(),
            r.epsilon.into(),
            c.probe.clone().into(),
            prob_cell(c),
            c.ci_low.into(),
            c.ci_high.into(),
            c.count.into(),
            c.trials.into(),
        ]);
    }
    t
}

/// Standard error of `ν̂_k` treating the lag estimates as independent, which
/// overstates it when `γ` and `γ̃` move together.
fn nu_stderr(set: &crate::variance::CovarianceSet, sigma2_se: f64) -> f64 {
    let mut v = sigma2_se * sigma2_se;
    for (p, &lag) in set.plain.lags.iter().enumerate() {
        let w = if lag == 0 { 1.0 } else { 4.0 };
        v += w * set.plain.stderr[p].powi(2);
        if lag <= set.m {
            v += w * set.tilde.stderr[p].powi(2);
        }
    }
    v.sqrt()
}
