//! File schemas and atomic writes.
//!
//! Norms and perturbed spectra travel as headered CSV (17 significant
//! digits, diff-able, streamable); reports are JSON. Writes go through a
//! temp file plus rename so an interrupted run never leaves a partial file
//! at the target path.

use crate::error::{Result, SebaError};
use crate::lattice::{Coeff, DiagonalForm, NormSpectrum};
use crate::secular::{Level, PerturbedSpectrum};
use crate::{NORMS_SCHEMA, PERTURBED_SCHEMA};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` via a same-directory temp file and rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    let stamp = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{}",
        path.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id(),
        stamp
    ));
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}

/// Serialize a report as pretty JSON and write it atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| SebaError::Parse(format!("json encode: {e}")))?;
    body.push('\n');
    atomic_write(path, body.as_bytes())
}

fn coeffs_field(form: &DiagonalForm) -> String {
    form.coeffs()
        .iter()
        .map(Coeff::format)
        .collect::<Vec<_>>()
        .join(",")
}

/// Norms CSV: `# seba-norms v1 dim=<d> coeffs=<...> cutoff=<X> merge_tol=<t>`
/// then ascending `n,r` rows.
pub fn write_norms(path: &Path, spec: &NormSpectrum) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "# {NORMS_SCHEMA} dim={} coeffs={} cutoff={:.16e} merge_tol={:.16e}",
        spec.form().dim(),
        coeffs_field(spec.form()),
        spec.cutoff(),
        spec.merge_tol()
    )
    .expect("string write");
    for (n, r) in spec.norms().iter().zip(spec.mults()) {
        writeln!(out, "{n:.16e},{r}").expect("string write");
    }
    atomic_write(path, out.as_bytes())
}

fn header_fields(line: &str) -> Result<std::collections::BTreeMap<String, String>> {
    let mut map = std::collections::BTreeMap::new();
    for tok in line.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            map.insert(k.to_string(), v.to_string());
        }
    }
    Ok(map)
}

fn check_schema(line: &str, want: &str, kind: &str) -> Result<()> {
    let prefix = format!("# {kind} v");
    if !line.starts_with(&prefix) {
        return Err(SebaError::Parse(format!(
            "missing `{prefix}<n>` header, got: {line}"
        )));
    }
    if !line.starts_with(&format!("# {want} ")) && line.trim() != format!("# {want}") {
        return Err(SebaError::SchemaVersion(format!(
            "expected `{want}`, file declares `{}`",
            line.trim_start_matches("# ").split(' ').take(2).collect::<Vec<_>>().join(" ")
        )));
    }
    Ok(())
}

fn parse_f64(map: &std::collections::BTreeMap<String, String>, key: &str) -> Result<f64> {
    map.get(key)
        .ok_or_else(|| SebaError::Parse(format!("header missing {key}=")))?
        .parse()
        .map_err(|_| SebaError::Parse(format!("bad {key}= in header")))
}

pub fn read_norms(path: &Path) -> Result<NormSpectrum> {
    let body = std::fs::read_to_string(path)?;
    let mut lines = body.lines();
    let header = lines
        .next()
        .ok_or_else(|| SebaError::Parse(format!("{}: empty file", path.display())))?;
    check_schema(header, NORMS_SCHEMA, "seba-norms")?;
    let fields = header_fields(header)?;
    let dim: usize = fields
        .get("dim")
        .ok_or_else(|| SebaError::Parse("header missing dim=".into()))?
        .parse()
        .map_err(|_| SebaError::Parse("bad dim= in header".into()))?;
    let coeffs_str = fields
        .get("coeffs")
        .ok_or_else(|| SebaError::Parse("header missing coeffs=".into()))?;
    let coeffs: Vec<Coeff> = coeffs_str
        .split(',')
        .map(Coeff::parse)
        .collect::<Result<_>>()?;
    if coeffs.len() != dim {
        return Err(SebaError::Parse(format!(
            "dim={dim} but {} coefficients",
            coeffs.len()
        )));
    }
    let form = DiagonalForm::new(coeffs)?;
    let cutoff = parse_f64(&fields, "cutoff")?;
    let merge_tol = parse_f64(&fields, "merge_tol")?;
    let mut norms = Vec::new();
    let mut mults = Vec::new();
    for (ix, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (n, r) = line
            .split_once(',')
            .ok_or_else(|| SebaError::Parse(format!("row {}: expected n,r", ix + 2)))?;
        norms.push(
            n.trim()
                .parse()
                .map_err(|_| SebaError::Parse(format!("row {}: bad norm", ix + 2)))?,
        );
        mults.push(
            r.trim()
                .parse()
                .map_err(|_| SebaError::Parse(format!("row {}: bad multiplicity", ix + 2)))?,
        );
    }
    NormSpectrum::from_parts(form, cutoff, merge_tol, norms, mults)
}

/// Perturbed CSV: `# seba-perturbed v1 phi=<φ> tol=<t> xmax=<X>` then
/// ascending `j,lambda,residual,d` rows.
pub fn write_perturbed(path: &Path, pert: &PerturbedSpectrum) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "# {PERTURBED_SCHEMA} phi={:.16e} tol={:.16e} xmax={:.16e}",
        pert.phi, pert.tol, pert.x_max
    )
    .expect("string write");
    for (j, level) in pert.levels.iter().enumerate() {
        writeln!(
            out,
            "{j},{:.16e},{:.16e},{:.16e}",
            level.lambda, level.residual, level.d
        )
        .expect("string write");
    }
    atomic_write(path, out.as_bytes())
}

/// Read a perturbed spectrum and re-attach it to its norm spectrum.
///
/// Files do not carry F′ at the roots, so the residual-floor part of
/// `validate` is vacuous on loaded data (it was enforced at solve time);
/// interlacing and gap positivity are still checked.
pub fn read_perturbed(path: &Path, spec: &NormSpectrum) -> Result<PerturbedSpectrum> {
    let body = std::fs::read_to_string(path)?;
    let mut lines = body.lines();
    let header = lines
        .next()
        .ok_or_else(|| SebaError::Parse(format!("{}: empty file", path.display())))?;
    check_schema(header, PERTURBED_SCHEMA, "seba-perturbed")?;
    let fields = header_fields(header)?;
    let phi = parse_f64(&fields, "phi")?;
    let tol = parse_f64(&fields, "tol")?;
    let x_max = parse_f64(&fields, "xmax")?;
    let mut levels = Vec::new();
    for (ix, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(SebaError::Parse(format!(
                "row {}: expected j,lambda,residual,d",
                ix + 2
            )));
        }
        let get = |i: usize| -> Result<f64> {
            parts[i]
                .trim()
                .parse()
                .map_err(|_| SebaError::Parse(format!("row {}: bad field {}", ix + 2, i)))
        };
        levels.push(Level {
            lambda: get(1)?,
            residual: get(2)?,
            derivative: f64::INFINITY,
            d: get(3)?,
        });
    }
    let phase = crate::secular::ScattererPhase::new(phi)?;
    let c0 = crate::secular::c0(spec)?.value;
    let pert = PerturbedSpectrum {
        phi,
        rhs: phase.rhs(c0),
        tol,
        x_max,
        form: spec.form().clone(),
        spec_cutoff: spec.cutoff(),
        levels,
    };
    pert.validate(spec)?;
    Ok(pert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_norms;
    use crate::secular::{solve_spectrum, ScattererPhase};

    #[test]
    fn norms_roundtrip_and_determinism() {
        let dir = std::env::temp_dir().join(format!("seba-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let form = DiagonalForm::from_values(&[2f64.sqrt(), 1.0 / 2f64.sqrt()]).unwrap();
        let spec = enumerate_norms(&form, 50.0, 1e-10).unwrap();
        let p1 = dir.join("a.csv");
        let p2 = dir.join("b.csv");
        write_norms(&p1, &spec).unwrap();
        write_norms(&p2, &spec).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = read_norms(&p1).unwrap();
        assert_eq!(back.norms(), spec.norms());
        assert_eq!(back.mults(), spec.mults());
        assert_eq!(back.form().dim(), 2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn schema_version_guard() {
        let dir = std::env::temp_dir().join(format!("seba-io-v2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("v2.csv");
        std::fs::write(&p, "# seba-norms v2 dim=2 coeffs=1,1 cutoff=1 merge_tol=0\n0,1\n")
            .unwrap();
        match read_norms(&p) {
            Err(SebaError::SchemaVersion(_)) => {}
            other => panic!("expected schema error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn perturbed_roundtrip() {
        let dir = std::env::temp_dir().join(format!("seba-io-p-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let form = DiagonalForm::rational(&[(1, 1), (1, 1)]).unwrap();
        let spec = enumerate_norms(&form, 120.0, 1e-10).unwrap();
        let phase = ScattererPhase::new(1.0).unwrap();
        let pert = solve_spectrum(&spec, &phase, 50.0, 1e-12).unwrap();
        let p = dir.join("pert.csv");
        write_perturbed(&p, &pert).unwrap();
        let back = read_perturbed(&p, &spec).unwrap();
        assert_eq!(back.levels.len(), pert.levels.len());
        for (a, b) in back.levels.iter().zip(&pert.levels) {
            assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
            assert_eq!(a.d.to_bits(), b.d.to_bits());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn atomic_write_replaces_only_on_success() {
        let dir = std::env::temp_dir().join(format!("seba-io-a-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("x.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        // no stray temp files
        let leftovers: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }
}
