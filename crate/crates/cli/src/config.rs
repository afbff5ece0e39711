//! Problem loading and flag overrides.

use std::path::Path;

use serde::de::DeserializeOwned;

use riskdp::problem::{RiskSpec, XGridSpec};
use riskdp::risk::{RiskFamily, ThetaGrid, DEFAULT_POINTS_PER_AXIS};

use crate::{CliError, RiskArgs};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_f64(flag: &str, text: &str) -> Result<f64, CliError> {
    text.parse()
        .map_err(|_| CliError::Config(format!("--{flag} expects a number, got `{text}`")))
}

/// Problem-file risk block with command-line overrides applied.
pub fn resolve_risk(file: Option<&RiskSpec>, args: &RiskArgs) -> Result<RiskSpec, CliError> {
    let kind = match (&args.risk, file) {
        (Some(k), _) => k.clone(),
        (None, Some(RiskSpec::Cvar { .. })) => "cvar".into(),
        (None, Some(RiskSpec::Phi { phi, .. })) => phi.clone(),
        (None, None) => {
            return Err(CliError::Config(
                "no risk family: add a `risk` block or pass --risk".into(),
            ))
        }
    };
    if kind == "cvar" {
        let (file_alpha, theta_box) = match file {
            Some(RiskSpec::Cvar { alpha, theta_box }) => (Some(*alpha), *theta_box),
            _ => (None, None),
        };
        let alpha = args
            .alpha
            .or(file_alpha)
            .ok_or_else(|| CliError::Config("CVaR needs --alpha".into()))?;
        return Ok(RiskSpec::Cvar { alpha, theta_box });
    }
    if !matches!(kind.as_str(), "kl" | "chi2" | "tv") {
        return Err(CliError::Config(format!(
            "unknown risk family `{kind}` (expected cvar, kl, chi2 or tv)"
        )));
    }
    let (file_tau, file_l, theta_box) = match file {
        Some(RiskSpec::Phi {
            tau,
            trunc_l,
            theta_box,
            ..
        }) => (Some(*tau), *trunc_l, *theta_box),
        _ => (None, None, None),
    };
    let tau = args
        .tau
        .or(file_tau)
        .ok_or_else(|| CliError::Config("φ-divergence risk needs --tau".into()))?;
    let trunc_l = match args.trunc_l.as_deref() {
        Some("inf") | Some("none") => None,
        Some(v) => Some(parse_f64("trunc-l", v)?),
        None => file_l,
    };
    Ok(RiskSpec::Phi {
        phi: kind,
        tau,
        trunc_l,
        theta_box,
    })
}

pub fn family(spec: &RiskSpec, cost_bound: f64) -> Result<RiskFamily, CliError> {
    Ok(spec.to_family(cost_bound)?)
}

/// `129` (points per axis) or `step:0.05`; default 129 points per axis.
pub fn theta_grid(family: &RiskFamily, text: Option<&str>) -> Result<ThetaGrid, CliError> {
    let grid = match text {
        None => ThetaGrid::uniform(family.theta_box(), DEFAULT_POINTS_PER_AXIS)?,
        Some(t) => match t.strip_prefix("step:") {
            Some(step) => ThetaGrid::with_step(family.theta_box(), parse_f64("theta-grid", step)?)?,
            None => {
                let n: usize = t.parse().map_err(|_| {
                    CliError::Config(format!("--theta-grid expects `N` or `step:h`, got `{t}`"))
                })?;
                ThetaGrid::uniform(family.theta_box(), n)?
            }
        },
    };
    Ok(grid)
}

pub fn xgrid(file: Option<XGridSpec>, flag: Option<&str>, default: XGridSpec) -> Result<XGridSpec, CliError> {
    match flag {
        Some(text) => Ok(XGridSpec::parse(text)?),
        None => Ok(file.unwrap_or(default)),
    }
}

fn parse_size(item: &str) -> Result<usize, CliError> {
    let bad = || CliError::Config(format!("invalid sample size `{item}`"));
    match item.strip_prefix("2^") {
        Some(exp) => {
            let k: u32 = exp.parse().map_err(|_| bad())?;
            1usize.checked_shl(k).filter(|_| k < 48).ok_or_else(bad)
        }
        None => item.parse().map_err(|_| bad()),
    }
}

/// Comma list whose items are integers, `2^k`, or ranges `2^a..2^b` (every power in between).
pub fn n_list(text: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((a, b)) => {
                let (lo, hi) = (parse_size(a)?, parse_size(b)?);
                if !(lo.is_power_of_two() && hi.is_power_of_two() && lo <= hi) {
                    return Err(CliError::Config(format!("range `{item}` must run between powers of two")));
                }
                let mut n = lo;
                while n <= hi {
                    out.push(n);
                    n *= 2;
                }
            }
            None => out.push(parse_size(item)?),
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("--n-list is empty".into()));
    }
    Ok(out)
}
