//! Experiment records: one JSON object per estimate, appended as JSON lines.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use bose_core::stats::{ComplexEstimate, Moments};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub command: String,
    /// What `estimate` is: xi, xi_rel, gamma1, log_xi_rel, z_rel, two_point, ...
    pub observable: String,
    /// Resolved configuration without the Monte Carlo section, plus derived
    /// quantities (λ, ρ, κ(ρ)).
    pub parameters: serde_json::Value,
    pub estimate: Pair,
    pub stderr: Pair,
    pub samples: u64,
    pub ess: f64,
    /// Base seed of the run.
    pub seed: u64,
    /// Seeds of the chains pooled into this record.
    pub chain_seeds: Vec<u64>,
    pub flagged: bool,
    pub wall_seconds: f64,
    pub details: serde_json::Value,
}

impl ExperimentRecord {
    pub fn from_estimate(
        command: &str,
        observable: &str,
        parameters: serde_json::Value,
        est: &ComplexEstimate,
        seed: u64,
    ) -> Self {
        ExperimentRecord {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            observable: observable.to_string(),
            parameters,
            estimate: Pair { re: est.re, im: est.im },
            stderr: Pair {
                re: est.stderr_re,
                im: est.stderr_im,
            },
            samples: est.samples,
            ess: est.ess,
            seed,
            chain_seeds: vec![est.seed],
            flagged: est.flagged,
            wall_seconds: 0.0,
            details: serde_json::Value::Null,
        }
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = details;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Parse(format!("record: {e}")))
    }
}

/// Count-mean-M2 statistics equivalent to a mean with the given standard
/// error over n samples.
fn moments_of(mean: f64, stderr: f64, n: u64) -> Moments {
    let nf = n as f64;
    Moments {
        count: n,
        mean,
        m2: stderr * stderr * nf * (nf - 1.0).max(0.0),
    }
}

/// Pool records of the same experiment run with different seeds. The
/// result does not depend on the order of `records`; details are taken from
/// the record holding the smallest chain seed.
pub fn merge_chains(records: &[ExperimentRecord]) -> Result<ExperimentRecord, CliError> {
    let merge_err = |m: String| CliError::from(bose_core::Error::Merge(m));
    let first = records.first().ok_or_else(|| merge_err("no records".into()))?;
    for r in &records[1..] {
        if r.schema_version != first.schema_version {
            return Err(merge_err("schema version mismatch".into()));
        }
        if r.command != first.command || r.observable != first.observable {
            return Err(merge_err(format!(
                "{}/{} vs {}/{}",
                first.command, first.observable, r.command, r.observable
            )));
        }
        if r.parameters != first.parameters {
            return Err(merge_err("resolved parameters differ".into()));
        }
    }
    let mut seeds: Vec<u64> = records.iter().flat_map(|r| r.chain_seeds.iter().copied()).collect();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(merge_err("duplicate chain seed".into()));
    }
    // Fold in a canonical order so the rounding is order independent too.
    let mut sorted: Vec<&ExperimentRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.chain_seeds.iter().min().copied());
    let (mut re, mut im) = (Moments::default(), Moments::default());
    for r in &sorted {
        re = re.merge(&moments_of(r.estimate.re, r.stderr.re, r.samples));
        im = im.merge(&moments_of(r.estimate.im, r.stderr.im, r.samples));
    }
    Ok(ExperimentRecord {
        schema_version: first.schema_version,
        command: first.command.clone(),
        observable: first.observable.clone(),
        parameters: first.parameters.clone(),
        estimate: Pair { re: re.mean, im: im.mean },
        stderr: Pair {
            re: re.stderr(),
            im: im.stderr(),
        },
        samples: re.count,
        ess: sorted.iter().map(|r| r.ess).sum(),
        seed: sorted.iter().map(|r| r.seed).min().unwrap_or(first.seed),
        chain_seeds: seeds,
        flagged: sorted.iter().any(|r| r.flagged),
        wall_seconds: sorted.iter().map(|r| r.wall_seconds).sum(),
        details: sorted[0].details.clone(),
    })
}

/// Append records as JSON lines.
pub fn append_records(path: &Path, records: &[ExperimentRecord]) -> Result<(), CliError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        writeln!(f, "{}", r.to_json())?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, CliError> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(ExperimentRecord::from_json)
        .collect()
}

#[derive(Serialize)]
struct CsvRow {
    parameter: f64,
    estimate_re: f64,
    estimate_im: f64,
    stderr_re: f64,
    stderr_im: f64,
    n: u64,
    ess: f64,
}

/// Sweep table with one row per point.
pub fn write_sweep_csv(path: &Path, rows: &[(f64, &ExperimentRecord)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    for (parameter, r) in rows {
        w.serialize(CsvRow {
            parameter: *parameter,
            estimate_re: r.estimate.re,
            estimate_im: r.estimate.im,
            stderr_re: r.stderr.re,
            stderr_im: r.stderr.im,
            n: r.samples,
            ess: r.ess,
        })
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(mean: f64, se: f64, n: u64, seed: u64) -> ExperimentRecord {
        ExperimentRecord {
            schema_version: SCHEMA_VERSION,
            command: "hs".into(),
            observable: "xi_rel".into(),
            parameters: serde_json::json!({"model": {"nu": 1.0}}),
            estimate: Pair { re: mean, im: -0.5 * mean },
            stderr: Pair { re: se, im: 2.0 * se },
            samples: n,
            ess: n as f64 * 0.9,
            seed: 7,
            chain_seeds: vec![seed],
            flagged: false,
            wall_seconds: 0.0,
            details: serde_json::Value::Null,
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = record(0.1 + 0.2, 1.0 / 3.0, 1000, 5).with_details(serde_json::json!({"x": 1e-300}));
        let s = r.to_json();
        let back = ExperimentRecord::from_json(&s).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), s);
    }

    #[test]
    fn same_values_other_seed_reduce_error_by_sqrt2() {
        let a = record(0.8, 0.01, 10_000, 1);
        let b = record(0.8, 0.01, 10_000, 2);
        let m = merge_chains(&[a, b]).unwrap();
        assert_eq!(m.samples, 20_000);
        assert!((m.estimate.re - 0.8).abs() < 1e-15);
        let ratio = 0.01 / m.stderr.re;
        assert!((ratio - 2f64.sqrt()).abs() < 1e-3, "{ratio}");
        assert_eq!(m.chain_seeds, vec![1, 2]);
    }

    #[test]
    fn mismatched_parameters_refuse_to_merge() {
        let a = record(0.8, 0.01, 100, 1);
        let mut b = record(0.8, 0.01, 100, 2);
        b.parameters = serde_json::json!({"model": {"nu": 0.5}});
        assert_eq!(merge_chains(&[a.clone(), b]).unwrap_err().exit_code(), 3);
        assert!(merge_chains(&[a.clone(), a]).is_err());
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_order_free(
            m in prop::collection::vec(-2.0f64..2.0, 3),
            s in prop::collection::vec(0.001f64..0.1, 3),
            n in prop::collection::vec(2u64..5000, 3),
        ) {
            let r: Vec<_> = (0..3).map(|i| record(m[i], s[i], n[i], i as u64)).collect();
            let left = merge_chains(&[merge_chains(&r[0..2]).unwrap(), r[2].clone()]).unwrap();
            let right = merge_chains(&[r[0].clone(), merge_chains(&r[1..3]).unwrap()]).unwrap();
            let flat = merge_chains(&[r[2].clone(), r[0].clone(), r[1].clone()]).unwrap();
            for x in [&right, &flat] {
                prop_assert!((left.estimate.re - x.estimate.re).abs() < 1e-12);
                prop_assert!((left.estimate.im - x.estimate.im).abs() < 1e-12);
                prop_assert!((left.stderr.re - x.stderr.re).abs() < 1e-12);
                prop_assert!((left.stderr.im - x.stderr.im).abs() < 1e-12);
                prop_assert_eq!(left.samples, x.samples);
            }
        }
    }
}
