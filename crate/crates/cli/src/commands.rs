use std::path::{Path, PathBuf};

use anyhow::Context as _;
use num_complex::Complex64;
use serde::Serialize;

use fermigap::correlations::{theorem2_verify, Propagator};
use fermigap::covariance::CovarianceKernel;
use fermigap::fock::{self, DENSE_LIMIT};
use fermigap::grassmann::{trotter_convergence, TrotterSpec};
use fermigap::model::Model;
use fermigap::normalorder;
use fermigap::onebody::one_body_gap;
use fermigap::par::Execution;
use fermigap::spectra::{eigensystem, gap_and_simplicity, gap_scan, ContinuationOptions};
use fermigap::verify::{run_suite, Outcome, Relation, VerifyOptions};

use crate::config::{ConfigError, ModelConfig};

pub const CSV_VERSION: u32 = 1;

/// Why a command did not succeed; maps onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Assertion(Vec<String>),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<fermigap::Error> for Failure {
    fn from(e: fermigap::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub struct Context {
    pub config: ModelConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub exec: Execution,
}

type Row = Vec<String>;

fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes `<out>/<name>.csv` with a `# fermigap <name> csv v1` header line.
pub fn write_csv(out: &Path, name: &str, header: &[&str], rows: &[Row]) -> anyhow::Result<PathBuf> {
    let path = out.join(format!("{name}.csv"));
    let mut buf = format!("# fermigap {name} csv v{CSV_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let path = out.join(format!("{name}.json"));
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct SpectrumSummary {
    pub sites: usize,
    pub one_body_gap: f64,
    pub one_body_norm: f64,
    pub g: [f64; 2],
    pub e0: Option<[f64; 2]>,
    pub many_body_gap: Option<f64>,
    pub ground_simple: Option<bool>,
}

pub fn spectrum(ctx: &Context) -> Result<SpectrumSummary, Failure> {
    let cfg = &ctx.config;
    let h = cfg.one_body()?;
    let spec = h.spectrum()?;
    let mut rows: Vec<Row> = spec
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, e)| vec!["onebody".into(), k.to_string(), num(*e), num(0.0)])
        .collect();
    let g = cfg.coupling();
    let mut summary = SpectrumSummary {
        sites: h.n_sites(),
        one_body_gap: one_body_gap(spec),
        one_body_norm: h.operator_norm(),
        g: [g.re, g.im],
        e0: None,
        many_body_gap: None,
        ground_simple: None,
    };
    if cfg.n_sites() <= DENSE_LIMIT {
        let model = cfg.model()?;
        let eig = eigensystem(&model.hamiltonian(g), model.is_hermitian_at(g))?;
        rows.extend(
            eig.eigenvalues
                .iter()
                .enumerate()
                .map(|(k, e)| vec!["manybody".into(), k.to_string(), num(e.re), num(e.im)]),
        );
        let core = gap_and_simplicity(&eig)?;
        summary.e0 = Some([core.e0.re, core.e0.im]);
        summary.many_body_gap = Some(core.gap);
        summary.ground_simple = Some(core.simple);
    }
    write_csv(&ctx.out, "spectrum", &["kind", "index", "re", "im"], &rows)?;
    write_json(&ctx.out, "spectrum", &summary)?;
    println!("sites {}  one-body gap {:.6}  ||h|| {:.6}", summary.sites, summary.one_body_gap, summary.one_body_norm);
    match (summary.e0, summary.many_body_gap, summary.ground_simple) {
        (Some(e0), Some(gap), Some(simple)) => println!(
            "g = {}{:+}i  E0 = {:.10}{:+.3e}i  gap {:.10}  simple {simple}",
            g.re, g.im, e0[0], e0[1], gap
        ),
        _ => println!("many-body spectrum skipped: more than {DENSE_LIMIT} sites"),
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct AlphaRow {
    pub beta: f64,
    pub rho: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub alpha: f64,
    pub error_estimate: f64,
    pub converged: bool,
    /// `1 / (alpha ||V_unit||_3)`, the largest `|g|` the decay bounds cover.
    pub g_threshold: Option<f64>,
}

pub fn alpha(ctx: &Context) -> Result<Vec<AlphaRow>, Failure> {
    let cfg = &ctx.config;
    let h = cfg.one_body()?;
    let gap = one_body_gap(h.spectrum()?);
    let rho = cfg.run.rho.unwrap_or(gap / 2.0);
    let norm_v = cfg.interaction_unit(h.graph().clone())?.norm_local(3.0);
    let mut out = Vec::new();
    for &beta in &cfg.run.beta {
        let rep = CovarianceKernel::new(&h, beta)?.alpha_rho(rho, ctx.exec)?;
        out.push(AlphaRow {
            beta,
            rho,
            alpha_plus: rep.alpha_plus,
            alpha_minus: rep.alpha_minus,
            alpha: rep.alpha,
            error_estimate: rep.quadrature_error_estimate,
            converged: rep.converged,
            g_threshold: (norm_v > 0.0).then(|| 1.0 / (rep.alpha * norm_v)),
        });
    }
    let rows: Vec<Row> = out
        .iter()
        .map(|r| {
            vec![
                num(r.beta),
                num(r.rho),
                num(r.alpha_plus),
                num(r.alpha_minus),
                num(r.alpha),
                num(r.error_estimate),
                r.converged.to_string(),
                r.g_threshold.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &ctx.out,
        "alpha",
        &["beta", "rho", "alpha_plus", "alpha_minus", "alpha", "error_estimate", "converged", "g_threshold"],
        &rows,
    )?;
    println!("one-body gap {gap:.6}  rho {rho:.6}");
    for r in &out {
        println!(
            "beta {:>8}  alpha {:.8e}  (+ {:.4e}, - {:.4e})  err {:.1e}{}",
            r.beta,
            r.alpha,
            r.alpha_plus,
            r.alpha_minus,
            r.error_estimate,
            r.g_threshold.map(|g| format!("  |g| < {g:.4e}")).unwrap_or_default()
        );
    }
    Ok(out)
}

pub fn gap_scan_cmd(ctx: &Context) -> Result<Vec<fermigap::spectra::GapReport>, Failure> {
    let cfg = &ctx.config;
    let model = cfg.model()?;
    let grid: Vec<Complex64> = cfg.run.g_grid.iter().map(|&g| Complex64::new(g, 0.0)).collect();
    let opts = ContinuationOptions {
        rho: cfg.run.rho,
        ..ContinuationOptions::default()
    };
    let reports = gap_scan(&model, &grid, cfg.run.certify.then_some(&opts), ctx.exec)?;
    let rows: Vec<Row> = reports
        .iter()
        .map(|r| {
            vec![
                num(r.g.re),
                num(r.g.im),
                num(r.e0.re),
                num(r.e0.im),
                num(r.gap),
                r.simple.to_string(),
                r.certified.to_string(),
                r.steps.to_string(),
                r.diagnostics.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &ctx.out,
        "gap_scan",
        &["g_re", "g_im", "e0_re", "e0_im", "gap", "simple", "certified", "steps", "diagnostics"],
        &rows,
    )?;
    for r in &reports {
        println!(
            "g {:>10}  E0 {:.10}  gap {:.10}  simple {}  certified {}",
            r.g.re, r.e0.re, r.gap, r.simple, r.certified
        );
    }
    Ok(reports)
}

pub fn verify(ctx: &Context, suite: &str) -> Result<Vec<Outcome>, Failure> {
    let opts = VerifyOptions {
        seed: ctx.seed,
        exec: ctx.exec,
    };
    let outcomes = run_suite(suite, &opts).map_err(|e| {
        Failure::Config(ConfigError {
            path: "--suite".into(),
            reason: e.to_string(),
        })
    })?;
    let mut rows = Vec::new();
    for o in &outcomes {
        println!("{}", o.line());
        for c in &o.checks {
            rows.push(vec![
                o.id.to_string(),
                o.suite.clone(),
                c.name.clone(),
                num(c.value),
                num(c.limit),
                match c.relation {
                    Relation::AtMost => "at_most".into(),
                    Relation::AtLeast => "at_least".into(),
                },
                c.passed.to_string(),
            ]);
        }
        if let Some(e) = &o.error {
            rows.push(vec![o.id.to_string(), o.suite.clone(), format!("error: {e}"), "".into(), "".into(), "".into(), "false".into()]);
        }
    }
    write_csv(&ctx.out, "verify", &["id", "suite", "check", "value", "limit", "relation", "passed"], &rows)?;
    write_json(&ctx.out, "verify", &outcomes)?;
    let failing: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed())
        .flat_map(|o| {
            let mut names: Vec<String> = o.failures().map(|c| format!("{}: {}", o.suite, c.name)).collect();
            if let Some(e) = &o.error {
                names.push(format!("{}: {e}", o.suite));
            }
            names
        })
        .collect();
    if failing.is_empty() {
        Ok(outcomes)
    } else {
        Err(Failure::Assertion(failing))
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub spectrum: SpectrumSummary,
    pub alpha: Vec<AlphaRow>,
    pub gap_scan: Vec<fermigap::spectra::GapReport>,
    pub correlations: Option<String>,
    pub trotter: Option<String>,
}

pub fn report(ctx: &Context) -> Result<Report, Failure> {
    let spectrum = spectrum(ctx)?;
    let alpha_rows = alpha(ctx)?;
    let scan = gap_scan_cmd(ctx)?;
    let model = ctx.config.model()?;
    let correlations = Some(correlations(ctx, &model, &alpha_rows[0])?);
    let trotter = trotter(ctx, &model)?;
    let rep = Report {
        spectrum,
        alpha: alpha_rows,
        gap_scan: scan,
        correlations,
        trotter,
    };
    write_json(&ctx.out, "report", &rep)?;
    Ok(rep)
}

/// `<n_0(tau); n_0>` over the tau grid at the first beta, with the decay bound when its
/// hypothesis holds.
fn correlations(ctx: &Context, model: &Model, alpha: &AlphaRow) -> Result<String, Failure> {
    let cfg = &ctx.config;
    let beta = alpha.beta;
    let g = cfg.coupling();
    let n = cfg.run.tau_points;
    let taus: Vec<f64> = (0..n).map(|k| k as f64 * beta / n as f64).collect();
    let n0 = normalorder::density(model.graph().clone(), 0)?;
    let header = ["tau", "value_re", "value_im", "free_re", "free_im", "bound", "ratio"];
    match theorem2_verify(model, g, &n0, &n0, &taus, beta, alpha.rho, ctx.exec) {
        Ok(rep) => {
            let rows: Vec<Row> = rep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.tau),
                        num(r.value.re),
                        num(r.value.im),
                        num(r.free_value.re),
                        num(r.free_value.im),
                        num(r.standard.decay1),
                        num(r.max_ratio()),
                    ]
                })
                .collect();
            write_csv(&ctx.out, "correlations", &header, &rows)?;
            println!("correlation bound at beta {beta}: max lhs/rhs {:.4e} (holds {})", rep.max_ratio, rep.holds);
            Ok(format!("bound max ratio {} holds {}", rep.max_ratio, rep.holds))
        }
        Err(fermigap::Error::Hypothesis(why)) => {
            let nf = fock::second_quantize(&n0, model.basis())?;
            let pair_h = Propagator::from_model(model, g)?;
            let pair_0 = Propagator::from_model(model, Complex64::new(0.0, 0.0))?;
            let s = pair_h.pair(&nf, &nf, beta)?.sweep(&taus, ctx.exec)?;
            let s0 = pair_0.pair(&nf, &nf, beta)?.sweep(&taus, ctx.exec)?;
            let rows: Vec<Row> = s
                .iter()
                .zip(&s0)
                .map(|(a, b)| {
                    vec![num(a.tau), num(a.value.re), num(a.value.im), num(b.value.re), num(b.value.im), "".into(), "".into()]
                })
                .collect();
            write_csv(&ctx.out, "correlations", &header, &rows)?;
            println!("correlation bound not evaluated: {why}");
            Ok(format!("bound not evaluated: {why}"))
        }
        Err(e) => Err(e.into()),
    }
}

/// Trotter convergence of the generating function at `r = s = 1`, `t = beta / 3`.
fn trotter(ctx: &Context, model: &Model) -> Result<Option<String>, Failure> {
    let cfg = &ctx.config;
    if model.graph().n_sites() > 3 || cfg.run.n_slices.is_empty() {
        println!("trotter study skipped: needs at most 3 sites");
        return Ok(None);
    }
    let beta = cfg.run.beta[0];
    let graph = model.graph().clone();
    let a = normalorder::density(graph.clone(), 0)?;
    let b = normalorder::density(graph.clone(), graph.n_sites() - 1)?;
    let one = Complex64::new(1.0, 0.0);
    let template = TrotterSpec::new(cfg.run.n_slices[0], beta, beta / 3.0, one, one)?;
    match trotter_convergence(model, cfg.coupling(), &a, &b, &template, &cfg.run.n_slices, ctx.exec) {
        Ok(rows) => {
            let csv_rows: Vec<Row> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.n_slices.to_string(),
                        num(r.z_trace.re),
                        num(r.z_trace.im),
                        num(r.z_grassmann.re),
                        num(r.z_grassmann.im),
                        num(r.diff),
                        num(r.snapped_t),
                    ]
                })
                .collect();
            write_csv(
                &ctx.out,
                "trotter",
                &["N", "z_trace_re", "z_trace_im", "z_grassmann_re", "z_grassmann_im", "diff", "snapped_t"],
                &csv_rows,
            )?;
            let worst = rows.iter().map(|r| r.diff).fold(0.0, f64::max);
            println!("trotter: max |Z_grassmann - Z_trace| = {worst:.3e} over N = {:?}", cfg.run.n_slices);
            Ok(Some(format!("max diff {worst}")))
        }
        Err(e @ (fermigap::Error::ExpansionGuard(_) | fermigap::Error::OddInteraction)) => {
            println!("trotter study skipped: {e}");
            Ok(Some(format!("skipped: {e}")))
        }
        Err(e) => Err(e.into()),
    }
}
