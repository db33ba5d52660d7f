//! Writing reports as CSV data plus JSON summaries. Every file carries the
//! build's git description, the configuration hash and the master seed.

use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::experiments::{DistributionReport, RateReport, VariationReport};
use super::simulate::Simulation;
use crate::limits::write_limit_csv;
use crate::variations::LimitConstants;
use crate::Result;

/// Version string baked in at build time.
pub const GIT_DESCRIBE: &str = env!("FRACSDE_GIT_DESCRIBE");

/// Where a file came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub git_describe: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self { git_describe: GIT_DESCRIBE.to_owned(), config_hash, seed }
    }

    fn csv_header(&self) -> String {
        format!("# git_describe={} config_hash={} seed={}\n", self.git_describe, self.config_hash, self.seed)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    report: &'a T,
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok((path.clone(), BufWriter::new(File::create(path)?)))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, prov: &Provenance, report: &T) -> Result<PathBuf> {
    let (path, mut out) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, &Envelope { provenance: prov, report })?;
    writeln!(out)?;
    out.flush()?;
    Ok(path)
}

/// Writes a CSV whose body is produced by `body`, under the provenance line.
fn write_csv(
    dir: &Path,
    name: &str,
    prov: &Provenance,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<PathBuf> {
    let (path, mut out) = create(dir, name)?;
    out.write_all(prov.csv_header().as_bytes())?;
    body(&mut out)?;
    out.flush()?;
    Ok(path)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `rates.csv` (`m,mean_sup_error,median_sup_error,se`) and `rates.json`.
pub fn emit_rates(report: &RateReport, prov: &Provenance, dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = write_csv(dir, "rates.csv", prov, |out| {
        writeln!(out, "m,mean_sup_error,median_sup_error,se")?;
        for l in &report.levels {
            writeln!(out, "{},{},{},{}", l.m, num(l.mean_sup_error), num(l.median_sup_error), num(l.se))?;
        }
        Ok(())
    })?;
    Ok(vec![csv, write_json(dir, "rates.json", prov, report)?])
}

/// `dist.csv` (`sample_id,normalized_error,limit_sample`) and `dist.json`.
pub fn emit_distribution(report: &DistributionReport, prov: &Provenance, dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = write_csv(dir, "dist.csv", prov, |out| {
        writeln!(out, "sample_id,normalized_error,limit_sample")?;
        for s in &report.samples {
            writeln!(out, "{},{},{}", s.sample_id, num(s.normalized_error), num(s.limit_sample))?;
        }
        Ok(())
    })?;
    Ok(vec![csv, write_json(dir, "dist.json", prov, report)?])
}

/// `decay.csv` (`m,median_scaled_sup`) and `variations.json`.
pub fn emit_variations(report: &VariationReport, prov: &Provenance, dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = write_csv(dir, "decay.csv", prov, |out| {
        writeln!(out, "m,median_scaled_sup")?;
        for p in &report.decay {
            writeln!(out, "{},{}", p.m, num(p.median_scaled_sup))?;
        }
        Ok(())
    })?;
    Ok(vec![csv, write_json(dir, "variations.json", prov, report)?])
}

/// `constants.json` and the covariance table `covariance.csv`.
pub fn emit_constants(
    constants: &LimitConstants,
    table_size: u64,
    prov: &Provenance,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let json = write_json(dir, "constants.json", prov, constants)?;
    let csv = write_csv(dir, "covariance.csv", prov, |out| {
        crate::variations::write_covariance_csv(constants.hurst, table_size, out)
    })?;
    Ok(vec![json, csv])
}

/// One file per simulated object.
pub fn emit_simulation(sim: &Simulation, prov: &Provenance, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = vec![
        write_csv(dir, "path.csv", prov, |out| sim.path.write_csv(out))?,
        write_csv(dir, "reference.csv", prov, |out| sim.reference.write_csv(out))?,
        write_csv(dir, "scheme.csv", prov, |out| sim.trajectory.write_csv(out))?,
    ];
    if let Some(p) = &sim.perturbation {
        files.push(write_csv(dir, "perturbation.csv", prov, |out| p.write_csv(&sim.kappa_tilde, out))?);
    }
    if let Some((u, limit)) = &sim.limit {
        files.push(write_csv(dir, "limit.csv", prov, |out| write_limit_csv(sim.reference.dt, u, limit, out))?);
    }
    files.push(write_json(dir, "simulate.json", prov, &sim.summary)?);
    Ok(files)
}
