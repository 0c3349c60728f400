//! Parsing of scenario, pool and seed-list arguments.
//!
//! A scenario is a JSON file or `synthetic:SEED[:MIN-MAX]`. A pool is a
//! directory of scenario files (sorted by name) or `synthetic:COUNT:SEED[:MIN-MAX]`,
//! which yields the desk-scale cities with seeds `SEED..SEED+COUNT`.

use std::collections::HashSet;
use std::path::Path;

use amod_core::scenario::{generate_synthetic_city, load_scenario, SynthCityParams};
use amod_core::City;

use crate::error::{loading, CliError, Result};

const SYNTHETIC: &str = "synthetic:";

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| CliError::config(format!("bad {what} {s:?}")))
}

fn parse_nodes(s: &str) -> Result<[usize; 2]> {
    match s.split_once('-') {
        Some((a, b)) => Ok([parse_num(a, "node count")?, parse_num(b, "node count")?]),
        None => {
            let n = parse_num(s, "node count")?;
            Ok([n, n])
        }
    }
}

/// Desk-scale generator parameters, optionally with a fixed station range.
pub fn synth_params(nodes: Option<[usize; 2]>) -> SynthCityParams {
    let mut p = SynthCityParams::desk_scale();
    if let Some(r) = nodes {
        p.node_range = r;
    }
    p
}

pub fn synthetic_city(seed: u64, nodes: Option<[usize; 2]>) -> Result<City> {
    loading("synthetic city", generate_synthetic_city(&synth_params(nodes), seed))
}

pub fn load_city(spec: &str) -> Result<City> {
    if let Some(rest) = spec.strip_prefix(SYNTHETIC) {
        let parts: Vec<&str> = rest.split(':').collect();
        let nodes = match parts.as_slice() {
            [_] => None,
            [_, n] => Some(parse_nodes(n)?),
            _ => return Err(CliError::config(format!("bad scenario spec {spec:?}"))),
        };
        return synthetic_city(parse_num(parts[0], "seed")?, nodes);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(CliError::config(format!("scenario file {spec} does not exist")));
    }
    loading(spec, load_scenario(path))
}

pub fn load_pool(spec: &str) -> Result<Vec<City>> {
    let pool = if let Some(rest) = spec.strip_prefix(SYNTHETIC) {
        let parts: Vec<&str> = rest.split(':').collect();
        let (count, seed, nodes) = match parts.as_slice() {
            [c, s] => (*c, *s, None),
            [c, s, n] => (*c, *s, Some(parse_nodes(n)?)),
            _ => return Err(CliError::config(format!("bad pool spec {spec:?}"))),
        };
        let count: u64 = parse_num(count, "pool size")?;
        let seed: u64 = parse_num(seed, "seed")?;
        (seed..seed + count)
            .map(|s| synthetic_city(s, nodes))
            .collect::<Result<Vec<_>>>()?
    } else {
        let dir = Path::new(spec);
        let entries = std::fs::read_dir(dir)
            .map_err(|e| CliError::config(format!("pool directory {spec}: {e}")))?;
        let mut files: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && !is_manifest(p))
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| loading(&p.display().to_string(), load_scenario(p)))
            .collect::<Result<Vec<_>>>()?
    };
    if pool.is_empty() {
        return Err(CliError::config(format!("pool {spec} holds no scenarios")));
    }
    let mut seen = HashSet::new();
    if let Some(c) = pool.iter().find(|c| !seen.insert(c.id.as_str())) {
        return Err(CliError::config(format!("pool {spec} repeats city id {}", c.id)));
    }
    Ok(pool)
}

fn is_manifest(p: &Path) -> bool {
    p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.ends_with(".ckpt"))
}

/// Parses `1,2,7` and half-open ranges such as `0..5`, in any mix.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| format!("bad seed range {part:?}"))?;
            let b: u64 = b.parse().map_err(|_| format!("bad seed range {part:?}"))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed {part:?}"))?);
        }
    }
    if out.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(out)
}

/// Comma-separated list of numbers.
pub fn parse_sizes(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad size {p:?}")))
        .collect()
}
