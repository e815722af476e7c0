//! Synthetic Pauli measurements with shot noise, split across workers.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pauli::{sense_expectation, Pauli, PauliString};
use crate::states::{DensityFactor, TargetSpec};

/// Number of ±1 outcomes averaged into one recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shots {
    /// The exact expectation, no sampling noise.
    Exact,
    Finite(u32),
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Exact => f.write_str("exact"),
            Shots::Finite(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("exact") {
            return Ok(Shots::Exact);
        }
        match s.parse::<u32>() {
            Ok(0) => Err(invalid("shot count must be positive")),
            Ok(k) => Ok(Shots::Finite(k)),
            Err(_) => Err(Error::Parse(format!("shots must be a positive integer or \"exact\", got {s:?}"))),
        }
    }
}

// JSON form: a number for finite shots, the string "exact" otherwise.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShotsRepr {
    Count(u32),
    Label(String),
}

impl Serialize for Shots {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Shots::Exact => ShotsRepr::Label("exact".into()),
            Shots::Finite(k) => ShotsRepr::Count(k),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match ShotsRepr::deserialize(deserializer)? {
            ShotsRepr::Count(0) => Err(serde::de::Error::custom("shot count must be positive")),
            ShotsRepr::Count(k) => Ok(Shots::Finite(k)),
            ShotsRepr::Label(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One observed Pauli expectation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub pauli: PauliString,
    pub value: f64,
    pub shots: Shots,
}

/// A worker's local dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerShard {
    pub worker_id: usize,
    pub records: Vec<MeasurementRecord>,
    pub rng_seed: u64,
}

impl WorkerShard {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of worker `worker_id`, independent of the order workers are generated in.
pub fn worker_seed(master: u64, worker_id: usize) -> u64 {
    master ^ splitmix64(worker_id as u64)
}

pub(crate) fn draw_string<R: Rng + ?Sized>(rng: &mut R, n: usize, include_identity: bool) -> PauliString {
    loop {
        let axes: Vec<Pauli> = (0..n).map(|_| Pauli::ALL[rng.random_range(0..4)]).collect();
        if include_identity || axes.iter().any(|&a| a != Pauli::I) {
            return PauliString::new(axes).expect("qubit count validated by caller");
        }
    }
}

fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > crate::pauli::MAX_QUBITS {
        return Err(invalid(format!("qubit count {n} out of range")));
    }
    Ok(())
}

/// `m` strings drawn uniformly with replacement from the `4^n` Pauli strings,
/// redrawing the all-identity string unless `include_identity`.
pub fn sample_pauli_strings(n: usize, m: usize, seed: u64, include_identity: bool) -> Result<Vec<PauliString>> {
    check_qubits(n)?;
    if m == 0 {
        return Err(invalid("need at least one measurement"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m).map(|_| draw_string(&mut rng, n, include_identity)).collect())
}

/// Simulates measuring `p` on the target with the given number of shots.
pub fn measure(p: &PauliString, target: &DensityFactor, shots: Shots, seed: u64) -> Result<MeasurementRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    measure_with_rng(p, target, shots, &mut rng)
}

pub fn measure_with_rng<R: Rng + ?Sized>(
    p: &PauliString,
    target: &DensityFactor,
    shots: Shots,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    let t = sense_expectation(p, target.entries())?;
    if t.abs() > 1.0 + 1e-9 {
        return Err(Error::Unnormalized(t));
    }
    let t = t.clamp(-1.0, 1.0);
    let value = match shots {
        Shots::Exact => t,
        Shots::Finite(s) => {
            let plus = Binomial::new(u64::from(s), (1.0 + t) / 2.0)
                .expect("probability lies in [0, 1]")
                .sample(rng);
            (2.0 * plus as f64 - f64::from(s)) / f64::from(s)
        }
    };
    Ok(MeasurementRecord {
        pauli: p.clone(),
        value,
        shots,
    })
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub qubits: usize,
    pub workers: usize,
    pub measurements_per_worker: usize,
    pub shots: Shots,
    pub seed: u64,
    #[serde(default)]
    pub include_identity: bool,
}

/// `workers` shards of `measurements_per_worker` fresh records each, all drawn
/// from the same distribution.
pub fn build_shards(config: &DatasetConfig, target: &DensityFactor) -> Result<Vec<WorkerShard>> {
    check_qubits(config.qubits)?;
    if config.workers == 0 || config.measurements_per_worker == 0 {
        return Err(invalid("need at least one worker and one measurement per worker"));
    }
    if target.num_qubits() != config.qubits {
        return Err(invalid(format!(
            "target has {} qubits, dataset asks for {}",
            target.num_qubits(),
            config.qubits
        )));
    }
    (0..config.workers)
        .map(|worker_id| {
            let rng_seed = worker_seed(config.seed, worker_id);
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let records = (0..config.measurements_per_worker)
                .map(|_| {
                    let p = draw_string(&mut rng, config.qubits, config.include_identity);
                    measure_with_rng(&p, target, config.shots, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WorkerShard {
                worker_id,
                records,
                rng_seed,
            })
        })
        .collect()
}

/// All records of all shards, in worker order.
pub fn pooled(shards: &[WorkerShard]) -> Vec<MeasurementRecord> {
    shards.iter().flat_map(|s| s.records.iter().cloned()).collect()
}

/// Sidecar written next to the shard files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(flatten)]
    pub config: DatasetConfig,
    pub target: TargetSpec,
    pub shard_seeds: Vec<u64>,
}

fn shard_file(worker_id: usize) -> String {
    format!("shard_{worker_id:03}.jsonl")
}

pub fn write_records<W: Write>(mut w: W, records: &[MeasurementRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<MeasurementRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MeasurementRecord = serde_json::from_str(&line)?;
        if !(-1.0..=1.0).contains(&rec.value) {
            return Err(Error::Parse(format!("value {} outside [-1, 1]", rec.value)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes `manifest.json` plus one JSON-lines file per shard into `dir`.
pub fn write_dataset(dir: &Path, config: &DatasetConfig, target: &TargetSpec, shards: &[WorkerShard]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for shard in shards {
        let mut w = BufWriter::new(File::create(dir.join(shard_file(shard.worker_id)))?);
        write_records(&mut w, &shard.records)?;
        w.flush()?;
    }
    let manifest = DatasetManifest {
        config: config.clone(),
        target: target.clone(),
        shard_seeds: shards.iter().map(|s| s.rng_seed).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<WorkerShard>)> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let shards = manifest
        .shard_seeds
        .iter()
        .enumerate()
        .map(|(worker_id, &rng_seed)| {
            let file = File::open(dir.join(shard_file(worker_id)))?;
            Ok(WorkerShard {
                worker_id,
                records: read_records(BufReader::new(file))?,
                rng_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, shards))
}
