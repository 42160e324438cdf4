//! Simulation and convergence studies on circle families.

use std::f64::consts::TAU;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use lipro_core::diffusion::{
    empirical_modulus, modulus_bound, sample_bm_paths, sample_coupled_circle_paths, sample_elliptic_paths,
    CircleModel, HeatKernelBound, InitialLaw, ManifoldFamilyParams, PathSample,
};
use lipro_core::dirichlet::{
    circle_form, fdd_convergence_test, fourier_mode, mosco_resolvent_test, EnergyConvention, GraphDirichletForm,
    InitialDensity, Level, TransferMap,
};
use lipro_core::io::{MapListWire, SCHEMA};
use lipro_core::lp::{convergence_report, convergence_report_coupled, ConvergenceReport, CoupledLevel, PairInstance};
use lipro_core::metric::Bijection;
use lipro_core::paths::TimeGrid;
use serde::{Deserialize, Serialize};

use crate::context::{csv_text, num, Context, Failure, Result};
use crate::svg::{chart, Scale, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Constant conductance; sampled as snapped Brownian motion.
    Circle,
    /// Sinusoidal conductance profile spanning `[1/band, band]`; sampled as a random walk.
    Elliptic,
}

#[derive(Debug, Args, Serialize)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value_t = Family::Circle)]
    pub family: Family,
    /// Circumference.
    #[arg(long = "L", default_value_t = TAU)]
    pub length: f64,
    /// Ellipticity band of the elliptic family.
    #[arg(long, default_value_t = 2.0)]
    pub band: f64,
}

impl FamilyArgs {
    fn model(&self, length: f64, nodes: usize) -> Result<CircleModel> {
        Ok(match self.family {
            Family::Circle => CircleModel::uniform(length, nodes)?,
            Family::Elliptic => CircleModel::sinusoidal(length, nodes, self.band)?,
        })
    }

    /// `L (1 + 1/n)` when stretched, else `L`.
    fn length_at(&self, n: usize, stretch: bool) -> f64 {
        if stretch {
            self.length * (1.0 + 1.0 / n as f64)
        } else {
            self.length
        }
    }
}

fn parse_start(s: &str) -> std::result::Result<InitialLaw, String> {
    if s == "stationary" {
        return Ok(InitialLaw::Stationary);
    }
    s.parse()
        .map(InitialLaw::Node)
        .map_err(|_| format!("expected \"stationary\" or a node index, got {s:?}"))
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 64)]
    pub nodes: usize,
    /// Time horizon.
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    /// Number of grid steps.
    #[arg(long = "m", default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `stationary` or a node index.
    #[arg(long, default_value = "stationary", value_parser = parse_start)]
    pub start: InitialLaw,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs, ctx: &mut Context) -> Result<()> {
    let seed = ctx.seed(args.seed)?;
    let model = args.family.model(args.family.length, args.nodes)?;
    let grid = TimeGrid::new(args.horizon, args.steps)?;
    let sample = match args.family.family {
        Family::Circle => sample_bm_paths(&model, &grid, args.count, seed, args.start)?,
        Family::Elliptic => sample_elliptic_paths(&model, &grid, args.count, seed, args.start)?,
    };
    ctx.emit_json(args.out.as_deref(), &sample)
}

/// `{ "schema": 1, "Cprime", "nu", "tau", "family": { "n", "K", "V", "D", "Vprime", "Lambda" } }`
#[derive(Debug, Deserialize)]
struct BoundWire {
    #[serde(default = "schema_v1")]
    schema: u32,
    #[serde(flatten)]
    bound: HeatKernelBound,
    family: ManifoldFamilyParams,
}

fn schema_v1() -> u32 {
    SCHEMA
}

fn check_schema(found: u32) -> Result<()> {
    if found == SCHEMA {
        Ok(())
    } else {
        Err(Failure::invalid(format!("unsupported schema {found}, expected {SCHEMA}")))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TightnessArgs {
    /// Heat-kernel bound and family constants.
    #[arg(long)]
    pub bound: PathBuf,
    /// Window lengths λ.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda_grid: Vec<f64>,
    /// Displacement threshold.
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    /// Sample from `simulate`; adds empirical estimates checked against the bound.
    #[arg(long)]
    pub paths: Option<PathBuf>,
    /// Window start; must be a grid time of the sample.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Modulus-versus-λ chart.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

pub fn tightness(args: &TightnessArgs, ctx: &mut Context) -> Result<()> {
    let wire: BoundWire = ctx.read_json(&args.bound)?;
    check_schema(wire.schema)?;
    wire.family.validate()?;
    let sample: Option<PathSample> = args.paths.as_ref().map(|p| ctx.read_json(p)).transpose()?;
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    let mut highs = Vec::new();
    for &lambda in &args.lambda_grid {
        let bound = modulus_bound(&wire.bound, &wire.family, lambda, args.gamma)?;
        bounds.push((lambda, bound));
        let mut row = vec![num(lambda), num(bound)];
        if let Some(s) = &sample {
            let est = empirical_modulus(&s.space, &s.grid, &s.paths, args.t, lambda, args.gamma)?;
            if est.ci_high > bound {
                ctx.fail_check(format!(
                    "lambda = {lambda}: empirical upper CI {} exceeds the bound {bound}",
                    est.ci_high
                ));
            }
            highs.push((lambda, est.ci_high));
            row.extend([num(est.estimate), num(est.ci_low), num(est.ci_high), (est.ci_high <= bound).to_string()]);
        }
        rows.push(row);
    }
    let header: &[&str] = if sample.is_some() {
        &["lambda", "bound", "empirical", "ci_low", "ci_high", "within"]
    } else {
        &["lambda", "bound"]
    };
    ctx.emit(args.out.as_deref(), &csv_text(header, rows)?)?;
    if let Some(path) = &args.svg {
        let mut series = vec![Series {
            name: "bound".into(),
            points: bounds,
        }];
        if sample.is_some() {
            series.push(Series {
                name: "empirical 95% high".into(),
                points: highs,
            });
        }
        let svg = chart(
            &format!("modulus of continuity, gamma = {}", args.gamma),
            "lambda",
            "P(displacement > gamma)",
            &series,
            Scale::Log,
            Scale::Log,
        );
        ctx.emit(Some(path), &svg)?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct StudyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    /// Node counts of the approximating cycles; each must divide `--limit`.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128])]
    pub resolutions: Vec<usize>,
    /// Node count of the reference cycle.
    #[arg(long, default_value_t = 512)]
    pub limit: usize,
    /// Use circumference `L (1 + 1/n)` at resolution `n` instead of `L`.
    #[arg(long)]
    pub stretch: bool,
}

impl StudyArgs {
    fn forms(&self, convention: EnergyConvention) -> Result<(Vec<Level>, GraphDirichletForm)> {
        let limit = circle_form(&self.family.model(self.family.length, self.limit)?, convention)?;
        let levels = self
            .resolutions
            .iter()
            .map(|&n| {
                let model = self.family.model(self.family.length_at(n, self.stretch), n)?;
                let form = circle_form(&model, convention)?;
                let tm = TransferMap::circle_refinement(&form, &limit)?;
                Ok(Level::new(form, tm)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((levels, limit))
    }
}

fn by_resolution(resolutions: &[usize], values: &[f64]) -> Vec<(f64, f64)> {
    resolutions.iter().zip(values).map(|(&n, &v)| (n as f64, v)).collect()
}

#[derive(Debug, Args, Serialize)]
pub struct MoscoArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub study: StudyArgs,
    /// Resolvent parameter α.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Fourier modes `cos(2π j x / L)` used as test functions.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    pub modes: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

pub fn mosco(args: &MoscoArgs, ctx: &mut Context) -> Result<()> {
    let (levels, limit) = args.study.forms(EnergyConvention::Raw)?;
    let tests: Vec<Vec<f64>> = args.modes.iter().map(|&j| fourier_mode(args.study.limit, j)).collect();
    let table = mosco_resolvent_test(&levels, &limit, args.alpha, &tests)?;
    let mut rows = Vec::new();
    for (i, &n) in args.study.resolutions.iter().enumerate() {
        for (j, &mode) in args.modes.iter().enumerate() {
            rows.push(vec![n.to_string(), mode.to_string(), num(table.errors[i][j])]);
        }
    }
    ctx.emit(args.out.as_deref(), &csv_text(&["n", "mode", "error"], rows)?)?;
    let columns: Vec<Vec<f64>> = (0..args.modes.len())
        .map(|j| table.errors.iter().map(|row| row[j]).collect())
        .collect();
    if let Some(path) = &args.svg {
        let series: Vec<Series> = args
            .modes
            .iter()
            .zip(&columns)
            .map(|(mode, c)| Series {
                name: format!("mode {mode}"),
                points: by_resolution(&args.study.resolutions, c),
            })
            .collect();
        let svg = chart(
            &format!("resolvent error, alpha = {}", args.alpha),
            "nodes",
            "L2 error",
            &series,
            Scale::Log,
            Scale::Log,
        );
        ctx.emit(Some(path), &svg)?;
    }
    for (mode, ok) in args.modes.iter().zip(&table.decreasing) {
        if !ok {
            ctx.fail_check(format!("resolvent errors for mode {mode} are not strictly decreasing"));
        }
    }
    Ok(())
}

/// An observable on the reference cycle: explicit node values, or
/// `constant + Σ amplitude · cos(2π j x / L)`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ObservableWire {
    Values(Vec<f64>),
    Fourier {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        cos: Vec<(usize, f64)>,
    },
}

/// `{ "schema": 1, "observables": [...] }`, one per time.
#[derive(Debug, Deserialize)]
struct ObservablesWire {
    #[serde(default = "schema_v1")]
    schema: u32,
    observables: Vec<ObservableWire>,
}

impl ObservableWire {
    fn values(&self, nodes: usize) -> Result<Vec<f64>> {
        match self {
            ObservableWire::Values(v) if v.len() == nodes => Ok(v.clone()),
            ObservableWire::Values(v) => Err(Failure::invalid(format!(
                "observable has {} values, the reference cycle has {nodes} nodes",
                v.len()
            ))),
            ObservableWire::Fourier { constant, cos } => {
                let mut v = vec![*constant; nodes];
                for &(j, a) in cos {
                    for (x, c) in v.iter_mut().zip(fourier_mode(nodes, j)) {
                        *x += a * c;
                    }
                }
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FddArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub study: StudyArgs,
    /// Increasing observation times.
    #[arg(long, value_delimiter = ',', required = true)]
    pub times: Vec<f64>,
    /// Observables, one per time.
    #[arg(long)]
    pub obs: PathBuf,
    /// Density tolerance at the first level; halved at each further level.
    #[arg(long, default_value_t = 1e-6)]
    pub tol0: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

pub fn fdd(args: &FddArgs, ctx: &mut Context) -> Result<()> {
    let wire: ObservablesWire = ctx.read_json(&args.obs)?;
    check_schema(wire.schema)?;
    let observables = wire
        .observables
        .iter()
        .map(|o| o.values(args.study.limit))
        .collect::<Result<Vec<_>>>()?;
    let (levels, limit) = args.study.forms(EnergyConvention::Normalized)?;
    let densities: Vec<InitialDensity> = levels
        .iter()
        .map(|l| InitialDensity::stationary(&l.form, EnergyConvention::Normalized))
        .collect();
    let density = InitialDensity::stationary(&limit, EnergyConvention::Normalized);
    let table = fdd_convergence_test(&levels, &limit, &densities, &density, &args.times, &observables, args.tol0)?;
    let rows = args.study.resolutions.iter().enumerate().map(|(i, n)| {
        vec![
            n.to_string(),
            num(table.values[i]),
            num(table.limit_value),
            num(table.errors[i]),
            num(table.density_norms[i]),
        ]
    });
    let csv = csv_text(&["n", "value", "limit_value", "error", "density_norm"], rows)?;
    ctx.emit(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.svg {
        let series = [Series {
            name: "fdd error".into(),
            points: by_resolution(&args.study.resolutions, &table.errors),
        }];
        let svg = chart("finite-dimensional distributions", "nodes", "error", &series, Scale::Log, Scale::Log);
        ctx.emit(Some(path), &svg)?;
    }
    if let Some(i) = table.density_failure {
        ctx.fail_check(format!(
            "level {i}: density distance {} exceeds its tolerance",
            table.density_norms[i]
        ));
    }
    if !table.decreasing {
        ctx.fail_check("fdd errors are not strictly decreasing");
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    /// Node counts; level `n` couples `C_n(L (1 + 1/n))` with `C_n(L)`.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128])]
    pub resolutions: Vec<usize>,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long = "m", default_value_t = 20)]
    pub steps: usize,
    /// Coupled pairs per level.
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    /// Level `n` uses seed `seed + n`.
    #[arg(long, default_value_t = 8)]
    pub seed: u64,
    /// Compare given measures instead: the limit instance.
    #[arg(long, requires = "sequence")]
    pub target: Option<PathBuf>,
    /// The approximating instances, in order.
    #[arg(long, value_delimiter = ',', requires = "target")]
    pub sequence: Vec<PathBuf>,
    /// One bijection per instance into the target; identities by default.
    #[arg(long, requires = "target")]
    pub maps: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn converge_files(args: &ConvergeArgs, target: &std::path::Path, ctx: &mut Context) -> Result<ConvergenceReport> {
    let target = PairInstance::from_measure(ctx.read_measure(target)?);
    let sequence = args
        .sequence
        .iter()
        .map(|p| Ok(PairInstance::from_measure(ctx.read_measure(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let maps = match &args.maps {
        Some(p) => ctx.read_json::<MapListWire>(p)?.into_maps()?,
        None => sequence.iter().map(|s| Bijection::identity(s.space().len())).collect(),
    };
    Ok(convergence_report(&sequence, &target, &maps)?)
}

fn converge_family(args: &ConvergeArgs, ctx: &mut Context) -> Result<ConvergenceReport> {
    if args.family.family != Family::Circle {
        return Err(Failure::invalid("coupled sampling is available for the circle family only"));
    }
    let seed = ctx.seed(args.seed)?;
    let grid = TimeGrid::new(args.horizon, args.steps)?;
    let levels = args
        .resolutions
        .iter()
        .map(|&n| {
            let src = args.family.model(args.family.length_at(n, true), n)?;
            let tgt = args.family.model(args.family.length, n)?;
            let pairs = sample_coupled_circle_paths(&src, &tgt, &grid, args.count, seed.wrapping_add(n as u64))?;
            Ok(CoupledLevel {
                source: src.space().clone(),
                target: tgt.space().clone(),
                map: Bijection::identity(n),
                pairs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(convergence_report_coupled(&levels)?)
}

pub fn converge(args: &ConvergeArgs, ctx: &mut Context) -> Result<()> {
    let (report, labels) = match &args.target {
        Some(target) => (
            converge_files(args, target, ctx)?,
            (0..args.sequence.len()).map(|i| i.to_string()).collect::<Vec<_>>(),
        ),
        None => (
            converge_family(args, ctx)?,
            args.resolutions.iter().map(|n| n.to_string()).collect(),
        ),
    };
    let rows = report.rows.iter().zip(&labels).map(|(r, label)| {
        vec![
            label.clone(),
            num(r.defect),
            num(r.forward),
            num(r.backward),
            num(r.value),
            num(r.eps),
            num(r.delta),
        ]
    });
    let csv = csv_text(&["level", "defect", "forward", "backward", "value", "eps", "delta"], rows)?;
    ctx.emit(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.svg {
        let points = labels
            .iter()
            .zip(&report.rows)
            .map(|(l, r)| (l.parse::<f64>().unwrap_or(0.0), r.value))
            .collect();
        let x_scale = if args.target.is_some() { Scale::Linear } else { Scale::Log };
        let series = [Series {
            name: "certified d_LP bound".into(),
            points,
        }];
        let svg = chart("Lipschitz-Prokhorov convergence", "level", "eps + delta", &series, x_scale, Scale::Log);
        ctx.emit(Some(path), &svg)?;
    }
    if !report.strictly_decreasing {
        ctx.fail_check(format!("certified values are not strictly decreasing (rises at {:?})", report.non_monotone));
    }
    Ok(())
}
