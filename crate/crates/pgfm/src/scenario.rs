//! Bundled benchmark scenarios and the mixture-spec text format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::latent::{MixtureComponent, MixtureSpec};

/// The desk8 benchmark: two classes of eight Gaussian modes each, arranged on
/// circles of radius 4 around (-3, 0) and (3, 0) with mode std 1.0. Adjacent
/// modes overlap, which keeps the flow's basin commitment soft until well
/// into the guided phase; the circles overlap near the origin, so class
/// boundaries depend on which modes a distilled set actually covers.
pub fn desk8() -> MixtureSpec {
    let modes = 8;
    let radius = 4.0;
    let std = 1.0;
    let classes = [-3.0, 3.0]
        .iter()
        .map(|&cx| {
            (0..modes)
                .map(|j| {
                    let angle = 2.0 * std::f64::consts::PI * j as f64 / modes as f64;
                    MixtureComponent {
                        mean: vec![cx + radius * angle.cos(), radius * angle.sin()],
                        std,
                        weight: 1.0 / modes as f64,
                    }
                })
                .collect()
        })
        .collect();
    MixtureSpec { classes }
}

/// Single isotropic Gaussian target, one class.
pub fn single_gaussian(mean: Vec<f64>, std: f64) -> MixtureSpec {
    MixtureSpec {
        classes: vec![vec![MixtureComponent { mean, std, weight: 1.0 }]],
    }
}

/// Look a scenario up by name.
pub fn by_name(name: &str) -> Result<MixtureSpec> {
    match name {
        "desk8" => Ok(desk8()),
        other => Err(Error::Config(format!("unknown scenario '{other}'"))),
    }
}

/// Serialize a mixture spec as key-value text, one component per line:
///
/// ```text
/// #mixture classes=2
/// class=0 weight=0.125 std=0.35 mean=1.0,0.0
/// ```
pub fn format_mixture_spec(spec: &MixtureSpec) -> String {
    let mut out = format!("#mixture classes={}\n", spec.num_classes());
    for (y, comps) in spec.classes.iter().enumerate() {
        for c in comps {
            let mean = c
                .mean
                .iter()
                .map(|v| format!("{:.16e}", v))
                .collect::<Vec<_>>()
                .join(",");
            let _ = writeln!(
                out,
                "class={} weight={:.16e} std={:.16e} mean={}",
                y, c.weight, c.std, mean
            );
        }
    }
    out
}

pub fn parse_mixture_spec(text: &str) -> Result<MixtureSpec> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty mixture spec".into()))?;
    let classes: usize = header
        .strip_prefix("#mixture classes=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Data("mixture spec must start with '#mixture classes=C'".into()))?;
    let mut spec = MixtureSpec {
        classes: vec![Vec::new(); classes],
    };
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut class = None;
        let mut weight = None;
        let mut std = None;
        let mut mean = None;
        for tok in line.split_whitespace() {
            let (key, val) = tok
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("mixture line {}: bad token '{tok}'", i + 2)))?;
            match key {
                "class" => class = val.parse::<usize>().ok(),
                "weight" => weight = val.parse::<f64>().ok(),
                "std" => std = val.parse::<f64>().ok(),
                "mean" => {
                    mean = val
                        .split(',')
                        .map(|v| v.parse::<f64>().ok())
                        .collect::<Option<Vec<f64>>>()
                }
                other => {
                    return Err(Error::Data(format!(
                        "mixture line {}: unknown key '{other}'",
                        i + 2
                    )))
                }
            }
        }
        match (class, weight, std, mean) {
            (Some(y), Some(w), Some(s), Some(m)) if y < classes => {
                spec.classes[y].push(MixtureComponent { mean: m, std: s, weight: w });
            }
            _ => {
                return Err(Error::Data(format!(
                    "mixture line {}: needs class, weight, std, mean",
                    i + 2
                )))
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load_mixture_spec(path: &Path) -> Result<MixtureSpec> {
    parse_mixture_spec(&std::fs::read_to_string(path)?)
}

pub fn save_mixture_spec(spec: &MixtureSpec, path: &Path) -> Result<()> {
    std::fs::write(path, format_mixture_spec(spec))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk8_is_valid() {
        let spec = desk8();
        spec.validate().unwrap();
        assert_eq!(spec.num_classes(), 2);
        assert_eq!(spec.classes[0].len(), 8);
        assert_eq!(spec.dim().unwrap(), 2);
    }

    #[test]
    fn mixture_spec_round_trip() {
        let spec = desk8();
        let text = format_mixture_spec(&spec);
        assert_eq!(parse_mixture_spec(&text).unwrap(), spec);
    }

    #[test]
    fn unknown_scenario_rejected() {
        assert!(by_name("desk9").is_err());
    }
}
