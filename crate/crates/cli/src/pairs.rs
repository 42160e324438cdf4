//! Distances and certificates between given spaces and measures.

use std::path::PathBuf;

use clap::Args;
use lipro_core::io::{CauchyWire, CertificateWire, MapListWire, SCHEMA};
use lipro_core::lp::{
    certificate_compose, certificate_verify, dlp_exact, dlp_upper_bound, DlpMode, IsoCertificate, PairInstance,
};
use lipro_core::metric::{cauchy_limit, lipschitz_distance, Bijection, CauchyInput, FiniteMetricSpace, SearchMethod, SearchOptions};
use lipro_core::prokhorov::{prokhorov_bruteforce, prokhorov_distance, Coupling};
use serde::Serialize;

use crate::context::{Context, Result};

/// Agreement required between the flow solver and the subset oracle.
const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Args, Serialize)]
pub struct DlArgs {
    /// First space.
    pub x: PathBuf,
    /// Second space.
    pub y: PathBuf,
    /// Largest size searched exhaustively; beyond it branch-and-bound is used.
    #[arg(long, default_value_t = 8)]
    pub exhaustive_limit: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DlOutput {
    schema: u32,
    /// `null` when the spaces differ in size.
    value: f64,
    witness: Option<Bijection>,
    method: SearchMethod,
}

pub fn dl(args: &DlArgs, ctx: &mut Context) -> Result<()> {
    let x: FiniteMetricSpace = ctx.read_json(&args.x)?;
    let y: FiniteMetricSpace = ctx.read_json(&args.y)?;
    let r = lipschitz_distance(
        &x,
        &y,
        SearchOptions {
            jobs: ctx.jobs,
            exhaustive_limit: args.exhaustive_limit,
        },
    );
    ctx.emit_json(
        args.out.as_deref(),
        &DlOutput {
            schema: SCHEMA,
            value: r.value,
            witness: r.witness,
            method: r.method,
        },
    )
}

#[derive(Debug, Args, Serialize)]
pub struct DpArgs {
    /// First measure (or sample).
    pub p: PathBuf,
    /// Second measure (or sample).
    pub q: PathBuf,
    /// Also run the subset-enumeration oracle and require agreement to 1e-9.
    #[arg(long)]
    pub oracle: bool,
    /// Leave the witness coupling out of the output.
    #[arg(long)]
    pub no_coupling: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DpOutput {
    schema: u32,
    value: f64,
    threshold: f64,
    transported: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_transported: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coupling: Option<Coupling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
}

pub fn dp(args: &DpArgs, ctx: &mut Context) -> Result<()> {
    let p = ctx.read_measure(&args.p)?;
    let q = ctx.read_measure(&args.q)?;
    let r = prokhorov_distance(&p, &q)?;
    let oracle = if args.oracle {
        let v = prokhorov_bruteforce(&p, &q)?;
        if (v - r.value).abs() > ORACLE_TOL {
            ctx.fail_check(format!("flow value {} and oracle value {v} disagree", r.value));
        }
        Some(v)
    } else {
        None
    };
    ctx.emit_json(
        args.out.as_deref(),
        &DpOutput {
            schema: SCHEMA,
            value: r.value,
            threshold: r.threshold,
            transported: r.transported,
            exact_transported: r.exact_transported.map(|x| x.to_string()),
            coupling: (!args.no_coupling).then_some(r.coupling),
            oracle,
        },
    )
}

#[derive(Debug, Args, Serialize)]
pub struct DlpArgs {
    /// First instance: a measure (or sample) document, which carries its space.
    pub a: PathBuf,
    /// Second instance.
    pub b: PathBuf,
    /// Search every bijection (the default; at most 8 points).
    #[arg(long, conflicts_with = "maps")]
    pub exact: bool,
    /// Candidate bijections; each is composed with every automorphism of the
    /// second space and the result is an upper bound.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Also write the certificate as a standalone document for `verify`.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DlpOutput {
    schema: u32,
    value: f64,
    certificate: Option<CertificateWire>,
    mode: DlpMode,
}

pub fn dlp(args: &DlpArgs, ctx: &mut Context) -> Result<()> {
    let a = PairInstance::from_measure(ctx.read_measure(&args.a)?);
    let b = PairInstance::from_measure(ctx.read_measure(&args.b)?);
    let result = match &args.maps {
        Some(path) => {
            let maps = ctx.read_json::<MapListWire>(path)?.into_maps()?;
            dlp_upper_bound(&a, &b, &maps)?.0
        }
        None => dlp_exact(&a, &b, ctx.jobs)?,
    };
    let certificate = result.certificate.map(CertificateWire::from);
    if let (Some(path), Some(c)) = (&args.certificate, &certificate) {
        ctx.emit_json(Some(path), c)?;
    }
    ctx.emit_json(
        args.out.as_deref(),
        &DlpOutput {
            schema: SCHEMA,
            value: result.value,
            certificate,
            mode: result.mode,
        },
    )
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Certificate `{ "map", "eps", "delta" }`.
    pub certificate: PathBuf,
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn verify(args: &VerifyArgs, ctx: &mut Context) -> Result<()> {
    let c = IsoCertificate::try_from(ctx.read_json::<CertificateWire>(&args.certificate)?)?;
    let a = PairInstance::from_measure(ctx.read_measure(&args.a)?);
    let b = PairInstance::from_measure(ctx.read_measure(&args.b)?);
    let report = certificate_verify(&c, &a, &b)?;
    if !report.accepted {
        ctx.fail_check(format!(
            "certificate rejected: defect slack {}, forward slack {}, backward slack {}",
            report.defect_slack, report.forward_slack, report.backward_slack
        ));
    }
    #[derive(Serialize)]
    struct Out<T> {
        schema: u32,
        #[serde(flatten)]
        report: T,
    }
    ctx.emit_json(args.out.as_deref(), &Out { schema: SCHEMA, report })
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeArgs {
    /// Certificate for `A -> B`.
    pub first: PathBuf,
    /// Certificate for `B -> C`.
    pub second: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn compose(args: &ComposeArgs, ctx: &mut Context) -> Result<()> {
    let c1 = IsoCertificate::try_from(ctx.read_json::<CertificateWire>(&args.first)?)?;
    let c2 = IsoCertificate::try_from(ctx.read_json::<CertificateWire>(&args.second)?)?;
    let c = certificate_compose(&c1, &c2)?;
    ctx.emit_json(args.out.as_deref(), &CertificateWire::from(c))
}

#[derive(Debug, Args, Serialize)]
pub struct CauchyArgs {
    /// `{ "spaces", "links", "defects", "tail" }`.
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cauchy(args: &CauchyArgs, ctx: &mut Context) -> Result<()> {
    let input = CauchyInput::try_from(ctx.read_json::<CauchyWire>(&args.input)?)?;
    let limit = cauchy_limit(&input)?;
    #[derive(Serialize)]
    struct Out<T> {
        schema: u32,
        #[serde(flatten)]
        limit: T,
    }
    ctx.emit_json(args.out.as_deref(), &Out { schema: SCHEMA, limit })
}
