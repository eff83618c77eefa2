//! Parsers for the compact command-line settings strings.

use nalgebra::Vector3;
use rd2::env::InitialOffset;
use rd2::geom::Pose;

use crate::CliError;

fn bad(msg: String) -> CliError {
    CliError::Config(msg)
}

fn split_unit(s: &str) -> (&str, &str) {
    let i = s
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(s.len());
    (&s[..i], &s[i..])
}

fn number(s: &str, what: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(format!("invalid {what} `{s}`")))
}

/// A length with unit `m`, `cm` or `mm` (bare numbers are metres).
pub fn parse_length(s: &str) -> Result<f64, CliError> {
    let (v, unit) = split_unit(s.trim());
    let scale = match unit {
        "" | "m" => 1.0,
        "cm" => 1e-2,
        "mm" => 1e-3,
        u => return Err(bad(format!("unknown length unit `{u}` in `{s}`"))),
    };
    Ok(number(v, "length")? * scale)
}

/// An angle with unit `deg` or `rad` (bare numbers are radians).
pub fn parse_angle(s: &str) -> Result<f64, CliError> {
    let (v, unit) = split_unit(s.trim());
    let scale = match unit {
        "" | "rad" => 1.0,
        "deg" => std::f64::consts::PI / 180.0,
        u => return Err(bad(format!("unknown angle unit `{u}` in `{s}`"))),
    };
    Ok(number(v, "angle")? * scale)
}

fn pairs(s: &str) -> impl Iterator<Item = Result<(&str, &str), CliError>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| {
        p.split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| bad(format!("expected key=value, got `{p}`")))
    })
}

/// `lin=3mm`, `rot=5deg`, both comma separated, or `0` for none.
pub fn parse_offset(s: &str) -> Result<InitialOffset, CliError> {
    let mut off = InitialOffset::default();
    if s.trim() == "0" {
        return Ok(off);
    }
    for kv in pairs(s) {
        match kv? {
            ("lin", v) => off.linear = parse_length(v)?,
            ("rot", v) => off.angular = parse_angle(v)?,
            (k, _) => return Err(bad(format!("unknown offset key `{k}` (expected lin or rot)"))),
        }
    }
    if off.linear < 0.0 || off.angular < 0.0 {
        return Err(bad("offsets are magnitudes and must be non-negative".into()));
    }
    Ok(off)
}

/// Noise fractions: `ft=0.2`, `friction=0.2`, or both.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NoiseSetting {
    pub ft: f64,
    pub friction: f64,
}

pub fn parse_noise(s: &str) -> Result<NoiseSetting, CliError> {
    let mut n = NoiseSetting::default();
    if s.trim() == "0" {
        return Ok(n);
    }
    for kv in pairs(s) {
        match kv? {
            ("ft", v) => n.ft = number(v, "noise fraction")?,
            ("friction", v) => n.friction = number(v, "noise fraction")?,
            (k, _) => return Err(bad(format!("unknown noise key `{k}` (expected ft or friction)"))),
        }
    }
    if n.ft < 0.0 || n.friction < 0.0 {
        return Err(bad("noise fractions must be non-negative".into()));
    }
    Ok(n)
}

/// `identity`, or six comma-separated values `x,y,z,roll,pitch,yaw`;
/// lengths default to metres and angles to degrees unless a unit is given.
pub fn parse_mount_pose(s: &str) -> Result<Pose, CliError> {
    if s.trim() == "identity" {
        return Ok(Pose::identity());
    }
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 6 {
        return Err(bad(format!("mount pose needs 6 values x,y,z,roll,pitch,yaw; got `{s}`")));
    }
    let t: Vec<f64> = parts[..3].iter().map(|p| parse_length(p)).collect::<Result<_, _>>()?;
    let r: Vec<f64> = parts[3..]
        .iter()
        .map(|p| {
            if split_unit(p).1.is_empty() {
                parse_angle(&format!("{p}deg"))
            } else {
                parse_angle(p)
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(Pose::from_rpy(Vector3::new(t[0], t[1], t[2]), r[0], r[1], r[2]))
}
